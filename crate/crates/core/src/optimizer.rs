//! Energy `G(E) = P(E) + λ·𝒲_p(E)` and its minimization over shapes of fixed
//! cell count by volume-preserving swap moves.

use std::collections::HashSet;
use std::sync::atomic::{AtomicBool, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::free_target::{solve_free_target, FreeTargetError, DEFAULT_PAD_FACTOR};
use crate::grid::{neighbors, Cell, Grid, GridShape};
use crate::perimeter::{face_count, face_delta_swap_with};

pub const DEFAULT_RECOMPUTE_EVERY: usize = 25;

/// Default Lipschitz constant of the surrogate, in the dimensionless form
/// `|Δ𝒲_p^p| / (max(|E|,|Ẽ|)^(p/n) · |E△Ẽ|)`. It sits above every ratio the
/// continuity check measures on its corpus.
pub const DEFAULT_SURROGATE_CONSTANT: f64 = 2.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimizerError {
    #[error("shape has {got} cells, expected {expected}")]
    VolumeViolation { expected: usize, got: usize },
    #[error("shape is not on the configured grid")]
    GridMismatch,
    #[error("invalid schedule: {0}")]
    BadSchedule(String),
    #[error("invalid parameters: {0}")]
    BadParams(String),
    #[error("ansatz not representable: {0}")]
    Unrepresentable(String),
    #[error(transparent)]
    FreeTarget(#[from] FreeTargetError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyParams {
    pub lambda: f64,
    pub p: f64,
    /// Volume constraint `|E| = target_cells · h^n`.
    pub target_cells: usize,
    pub grid: Grid,
    pub pad_factor: f64,
    /// Exact recomputation period, in accepted moves.
    pub recompute_every: usize,
    pub surrogate_constant: f64,
}

impl EnergyParams {
    pub fn new(lambda: f64, p: f64, target_cells: usize, grid: Grid) -> Self {
        Self {
            lambda,
            p,
            target_cells,
            grid,
            pad_factor: DEFAULT_PAD_FACTOR,
            recompute_every: DEFAULT_RECOMPUTE_EVERY,
            surrogate_constant: DEFAULT_SURROGATE_CONSTANT,
        }
    }

    pub fn validate(&self) -> Result<(), OptimizerError> {
        let bad = |m: &str| Err(OptimizerError::BadParams(m.into()));
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return bad("lambda must be positive");
        }
        if !(self.p.is_finite() && self.p >= 1.0) {
            return bad("p must be at least 1");
        }
        if self.target_cells == 0 {
            return bad("target_cells must be at least 1");
        }
        if !(self.pad_factor.is_finite() && self.pad_factor > 0.0) {
            return bad("pad_factor must be positive");
        }
        if self.recompute_every == 0 {
            return bad("recompute_every must be at least 1");
        }
        if !(self.surrogate_constant.is_finite() && self.surrogate_constant >= 0.0) {
            return bad("surrogate_constant must be nonnegative");
        }
        Ok(())
    }

    fn check_shape(&self, e: &GridShape) -> Result<(), OptimizerError> {
        if e.grid() != &self.grid {
            return Err(OptimizerError::GridMismatch);
        }
        if e.len() != self.target_cells {
            return Err(OptimizerError::VolumeViolation {
                expected: self.target_cells,
                got: e.len(),
            });
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub perimeter: f64,
    pub wp: f64,
    pub total: f64,
    pub witness_f: GridShape,
    /// `wp` comes from an exact solve, not the surrogate.
    pub exact: bool,
}

/// Exact energy of a shape with the configured cell count.
pub fn energy(e: &GridShape, params: &EnergyParams) -> Result<EnergyReport, OptimizerError> {
    params.validate()?;
    params.check_shape(e)?;
    Ok(exact_report(e, params)?.0)
}

/// Report plus `𝒲_p^p`.
fn exact_report(e: &GridShape, params: &EnergyParams) -> Result<(EnergyReport, f64), FreeTargetError> {
    let r = solve_free_target(e, params.p, params.pad_factor)?;
    let perimeter = crate::perimeter::perimeter(e).value;
    Ok((
        EnergyReport {
            perimeter,
            wp: r.wp,
            total: perimeter + params.lambda * r.wp,
            witness_f: r.witness,
            exact: true,
        },
        r.wp_pow_p,
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub t0: f64,
    pub alpha: f64,
    pub steps: usize,
}

impl Schedule {
    pub fn validate(&self) -> Result<(), OptimizerError> {
        if !(self.t0.is_finite() && self.t0 > 0.0) {
            return Err(OptimizerError::BadSchedule("t0 must be positive".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(OptimizerError::BadSchedule("alpha must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub temperature: f64,
    pub accepted: bool,
    /// Energy of the current state: exact when `exact`, else the surrogate.
    pub total: f64,
    pub exact: bool,
    pub best_total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerResult {
    pub best_shape: GridShape,
    pub best_report: EnergyReport,
    pub trace: Vec<TraceRow>,
    pub seed: u64,
    pub moves_tried: usize,
    pub moves_accepted: usize,
    pub exact_solves: usize,
    /// Exact recomputations that landed above the surrogate bound.
    pub surrogate_violations: usize,
    /// Largest observed `|Δ𝒲_p^p| / (|E|^(p/n) · |△|)` between exact solves.
    pub max_surrogate_ratio: f64,
    pub interrupted: bool,
}

/// Working shape with insertion-ordered cells so random picks are reproducible.
struct State {
    dim: usize,
    cells: Vec<Cell>,
    set: HashSet<Cell>,
    faces: i64,
}

impl State {
    fn new(e: &GridShape) -> Self {
        Self {
            dim: e.dim(),
            cells: e.cells().to_vec(),
            set: e.cells().iter().copied().collect(),
            faces: face_count(e) as i64,
        }
    }

    /// Occupied cells with a free neighbor, in storage order.
    fn boundary(&self) -> Vec<usize> {
        (0..self.cells.len())
            .filter(|&i| neighbors(self.dim, self.cells[i]).any(|n| !self.set.contains(&n)))
            .collect()
    }

    /// Free cells with an occupied neighbor, sorted.
    fn exterior(&self, boundary: &[usize]) -> Vec<Cell> {
        let mut out: Vec<Cell> = boundary
            .iter()
            .flat_map(|&i| neighbors(self.dim, self.cells[i]))
            .filter(|n| !self.set.contains(n))
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    fn swap(&mut self, idx: usize, add: Cell, delta: i64) {
        let rm = self.cells[idx];
        self.set.remove(&rm);
        self.set.insert(add);
        self.cells[idx] = add;
        self.faces += delta;
    }

    fn shape(&self, grid: &Grid) -> GridShape {
        GridShape::new(grid.clone(), self.cells.iter().copied()).expect("cells stay on the grid")
    }
}

pub fn anneal(
    init: &GridShape,
    params: &EnergyParams,
    schedule: &Schedule,
    seed: u64,
) -> Result<OptimizerResult, OptimizerError> {
    anneal_with_stop(init, params, schedule, seed, None)
}

/// Metropolis search over swap moves (remove a boundary cell, add a free cell
/// touching the shape).
///
/// Between exact solves `𝒲_p^p` is bounded by
/// `W_last + C · |E|^(p/n) · acc`, where `acc` counts cells changed since the
/// last exact solve (two per accepted swap). Exact solves happen every
/// `recompute_every` accepted moves and whenever the surrogate total beats the
/// best. The best state only changes on exact evaluations. A set `stop` flag
/// ends the run after the current step.
pub fn anneal_with_stop(
    init: &GridShape,
    params: &EnergyParams,
    schedule: &Schedule,
    seed: u64,
    stop: Option<&AtomicBool>,
) -> Result<OptimizerResult, OptimizerError> {
    params.validate()?;
    schedule.validate()?;
    params.check_shape(init)?;

    let p = params.p;
    let n = init.len() as f64;
    let dim = init.dim();
    let h = params.grid.spacing();
    let face_area = h.powi(dim as i32 - 1);
    // C · |E|^(p/n) per changed cell, in physical units of 𝒲_p^p
    let per_cell = params.surrogate_constant
        * (n * params.grid.cell_volume()).powf(p / dim as f64)
        * params.grid.cell_volume();
    let total_of = |faces: i64, wpp: f64| faces as f64 * face_area + params.lambda * wpp.max(0.0).powf(1.0 / p);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = State::new(init);
    let (report, mut w_last) = exact_report(init, params)?;
    let mut best_report = report;
    let mut best_shape = init.clone();
    let mut acc = 0usize;
    let mut current = best_report.total;

    let mut result = OptimizerResult {
        best_shape: init.clone(),
        best_report: best_report.clone(),
        trace: Vec::with_capacity(schedule.steps + 1),
        seed,
        moves_tried: 0,
        moves_accepted: 0,
        exact_solves: 1,
        surrogate_violations: 0,
        max_surrogate_ratio: 0.0,
        interrupted: false,
    };
    result.trace.push(TraceRow {
        step: 0,
        temperature: schedule.t0,
        accepted: true,
        total: current,
        exact: true,
        best_total: best_report.total,
    });

    let mut temperature = schedule.t0;
    for step in 1..=schedule.steps {
        if stop.is_some_and(|s| s.load(Ordering::Relaxed)) {
            result.interrupted = true;
            break;
        }
        let boundary = state.boundary();
        let exterior = state.exterior(&boundary);
        let ri = boundary[rng.gen_range(0..boundary.len())];
        let add = exterior[rng.gen_range(0..exterior.len())];
        let u: f64 = rng.gen();
        result.moves_tried += 1;

        let rm = state.cells[ri];
        let delta = face_delta_swap_with(dim, |c| state.set.contains(c), &rm, &add)
            .expect("boundary and exterior cells form a valid swap");
        let proposed = total_of(state.faces + delta, w_last + per_cell * (acc + 2) as f64);
        let accept = u < (-(proposed - current) / temperature).exp();

        let mut row = TraceRow {
            step,
            temperature,
            accepted: accept,
            total: current,
            exact: false,
            best_total: best_report.total,
        };
        if accept {
            state.swap(ri, add, delta);
            acc += 2;
            result.moves_accepted += 1;
            current = proposed;
            if result.moves_accepted % params.recompute_every == 0 || proposed < best_report.total {
                let shape = state.shape(&params.grid);
                let (rep, wpp) = exact_report(&shape, params)?;
                result.exact_solves += 1;
                let bound = w_last + per_cell * acc as f64;
                if wpp > bound * (1.0 + 1e-12) {
                    result.surrogate_violations += 1;
                }
                let scale = (n * params.grid.cell_volume()).powf(p / dim as f64) * params.grid.cell_volume();
                let ratio = (wpp - w_last).abs() / (scale * acc as f64);
                result.max_surrogate_ratio = result.max_surrogate_ratio.max(ratio);
                w_last = wpp;
                acc = 0;
                current = rep.total;
                row.exact = true;
                if rep.total < best_report.total {
                    best_report = rep;
                    best_shape = shape;
                }
            }
            row.total = current;
            row.best_total = best_report.total;
        }
        result.trace.push(row);
        temperature *= schedule.alpha;
    }
    result.best_shape = best_shape;
    result.best_report = best_report;
    Ok(result)
}

/// Runs one chain per (start, seed) pair in parallel and returns all results
/// plus the index of the best: minimum exact energy, ties to the lowest seed,
/// then the earliest start.
pub fn multi_start(
    starts: &[GridShape],
    params: &EnergyParams,
    schedule: &Schedule,
    seeds: &[u64],
    stop: Option<&AtomicBool>,
) -> Result<(Vec<OptimizerResult>, usize), OptimizerError> {
    if starts.is_empty() || seeds.is_empty() {
        return Err(OptimizerError::BadParams("need at least one start and one seed".into()));
    }
    let jobs: Vec<(usize, u64)> = (0..starts.len())
        .flat_map(|s| seeds.iter().map(move |&seed| (s, seed)))
        .collect();
    let results: Vec<OptimizerResult> = jobs
        .par_iter()
        .map(|&(s, seed)| anneal_with_stop(&starts[s], params, schedule, seed, stop))
        .collect::<Result<_, _>>()?;
    let best = (0..results.len())
        .min_by(|&a, &b| {
            results[a]
                .best_report
                .total
                .total_cmp(&results[b].best_report.total)
                .then(jobs[a].1.cmp(&jobs[b].1))
                .then(jobs[a].0.cmp(&jobs[b].0))
        })
        .expect("at least one job");
    Ok((results, best))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnsatzKind {
    Ball,
    /// Box of length `ratio ×` its width (along x).
    Cylinder { ratio: f64 },
    Droplets { m: usize },
    Segments1d { k: usize },
}

/// Deterministic shape of exactly `params.target_cells` cells.
pub fn ansatz(kind: AnsatzKind, params: &EnergyParams) -> Result<GridShape, OptimizerError> {
    let n = params.target_cells;
    let grid = &params.grid;
    if n == 0 {
        return Err(OptimizerError::Unrepresentable("zero cells".into()));
    }
    match kind {
        AnsatzKind::Ball => Ok(ball(grid, n)),
        AnsatzKind::Cylinder { ratio } => cylinder(grid, n, ratio),
        AnsatzKind::Droplets { m } => droplets(grid, n, m, params.pad_factor),
        AnsatzKind::Segments1d { k } => {
            if grid.dim() != 1 {
                return Err(OptimizerError::Unrepresentable("segments need a 1D grid".into()));
            }
            droplets(grid, n, k, params.pad_factor)
        }
    }
}

/// The `n` cells whose centers are nearest the lattice point 0 (ties broken
/// lexicographically).
pub fn ball(grid: &Grid, n: usize) -> GridShape {
    let dim = grid.dim();
    let unit_ball = [2.0, std::f64::consts::PI, 4.0 / 3.0 * std::f64::consts::PI][dim - 1];
    let r = (n as f64 / unit_ball).powf(1.0 / dim as f64);
    let m = r.ceil() as i64 + 3;
    let span = |k: usize| if k < dim { -m..m } else { 0..1 };
    let mut cand: Vec<(i64, Cell)> = Vec::new();
    for i in span(0) {
        for j in span(1) {
            for l in span(2) {
                let c = [i, j, l];
                let d2: i64 = (0..dim).map(|k| (2 * c[k] + 1).pow(2)).sum();
                cand.push((d2, c));
            }
        }
    }
    cand.sort_unstable();
    GridShape::new(grid.clone(), cand.into_iter().take(n).map(|(_, c)| c)).expect("cells fit the grid")
}

fn cylinder(grid: &Grid, n: usize, ratio: f64) -> Result<GridShape, OptimizerError> {
    if !(ratio.is_finite() && ratio > 0.0) {
        return Err(OptimizerError::Unrepresentable(format!("cylinder ratio {ratio}")));
    }
    let dim = grid.dim();
    if dim == 1 {
        return Ok(GridShape::new(grid.clone(), (0..n as i64).map(|i| [i, 0, 0])).expect("1D cells"));
    }
    let cross_dims = dim - 1;
    // width w with w^cross · (ratio·w) ≈ n
    let w = ((n as f64 / ratio).powf(1.0 / dim as f64).round() as i64).max(1);
    let slice = w.pow(cross_dims as u32) as usize;
    let full = n / slice;
    let rest = n % slice;
    let mut cells = Vec::with_capacity(n);
    for idx in 0..(full * slice + rest) {
        let x = (idx / slice) as i64;
        let r = idx % slice;
        let mut c = [x, 0, 0];
        c[1] = (r as i64) % w;
        if cross_dims == 2 {
            c[2] = (r as i64) / w;
        }
        cells.push(c);
    }
    Ok(GridShape::new(grid.clone(), cells).expect("cells fit the grid"))
}

/// `m` copies of [`ball`] with `n / m` cells each, spaced along x so facing
/// cells are more than `2 · pad_factor · (n/m)^(1/dim)` cells apart.
pub fn droplets(grid: &Grid, n: usize, m: usize, pad_factor: f64) -> Result<GridShape, OptimizerError> {
    if m == 0 || n % m != 0 {
        return Err(OptimizerError::Unrepresentable(format!("{n} cells do not split into {m} equal droplets")));
    }
    let each = n / m;
    let b = ball(grid, each);
    let bb = b.bounding_box().expect("nonempty ball");
    let width = bb.hi[0] - bb.lo[0];
    let gap = (2.0 * pad_factor * (each as f64).powf(1.0 / grid.dim() as f64)).floor() as i64 + 1;
    let pitch = width + gap;
    let mut cells = Vec::with_capacity(n);
    for k in 0..m as i64 {
        cells.extend(b.translate(&[k * pitch, 0, 0]).cells().iter().copied());
    }
    Ok(GridShape::new(grid.clone(), cells).expect("cells fit the grid"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Oracle1d {
    pub k_star: usize,
    pub energy: f64,
    /// `𝒲_p` of the unit segment from the fine-grid solve.
    pub w1: f64,
    /// `energy(k)` for `k = 1..=kmax`.
    pub energies: Vec<f64>,
}

/// Cells per unit length in the oracle's fine-grid solve.
pub const ORACLE_1D_CELLS: usize = 256;

/// Best family of `k` equal, far-apart segments of total length 1.
///
/// A segment of length `1/k` has `𝒲_p = k^(-1-1/p) · w1` by the scaling law, and
/// `𝒲_p^p` adds over far-apart pieces, so `k` segments give `𝒲_p = w1 / k` and
/// `energy(k) = 2k + λ · w1 / k`. `w1` comes from one exact solve of the unit
/// segment.
pub fn oracle_1d(lambda: f64, p: f64, kmax: usize) -> Result<Oracle1d, OptimizerError> {
    let grid = Grid::with_dim(1, 1.0 / ORACLE_1D_CELLS as f64).expect("valid grid");
    let seg = GridShape::new(grid, (0..ORACLE_1D_CELLS as i64).map(|i| [i, 0, 0])).expect("1D cells");
    let w1 = solve_free_target(&seg, p, DEFAULT_PAD_FACTOR)?.wp;
    let energies: Vec<f64> = (1..=kmax.max(1))
        .map(|k| {
            let k = k as f64;
            let wpp_each = k.powf(-1.0 - p) * w1.powf(p);
            2.0 * k + lambda * (k * wpp_each).powf(1.0 / p)
        })
        .collect();
    let (i, &energy) = energies
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("kmax >= 1");
    Ok(Oracle1d {
        k_star: i + 1,
        energy,
        w1,
        energies,
    })
}
