//! Executable checks of the quantitative properties of `𝒲_p` and the energy:
//! scaling, microdroplet rates, continuity, additivity, the cube-partition
//! bound, and a greedy nucleation decomposition.
//!
//! Each check returns [`PropertyReport`]s carrying a CSV payload of its samples.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::free_target::{
    additive_split_solve, cube_partition_upper_bound, proximity_clusters, solve_free_target, FreeTargetError,
};
use crate::grid::{Cell, Grid, GridError, GridShape};
use crate::optimizer::{ball, droplets};
use crate::perimeter::perimeter;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VerifyError {
    #[error("bad input: {0}")]
    BadInput(String),
    #[error("{m} droplets form only {clusters} separated clusters")]
    SeparationViolation { m: usize, clusters: usize },
    #[error("epsilon must satisfy 0 < epsilon <= |E| (got {0})")]
    BadEpsilon(f64),
    #[error(transparent)]
    FreeTarget(#[from] FreeTargetError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

impl From<crate::optimizer::OptimizerError> for VerifyError {
    fn from(e: crate::optimizer::OptimizerError) -> Self {
        VerifyError::BadInput(e.to_string())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Expected {
    /// Pass iff `|statistic - value| <= tolerance`.
    Value { value: f64 },
    /// Pass iff `lo <= statistic <= hi`.
    Interval { lo: f64, hi: f64 },
}

/// Tabular samples behind a report.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CsvPayload {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl CsvPayload {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    /// Header line plus one line per row; floats use Rust's shortest round-trip form.
    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for r in &self.rows {
            let line: Vec<String> = r.iter().map(|v| format!("{v:?}")).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropertyReport {
    pub name: String,
    pub samples: usize,
    pub statistic: f64,
    pub expected: Expected,
    pub tolerance: f64,
    pub pass: bool,
    #[serde(skip)]
    pub artifacts: CsvPayload,
}

impl PropertyReport {
    pub fn new(
        name: &str,
        samples: usize,
        statistic: f64,
        expected: Expected,
        tolerance: f64,
        artifacts: CsvPayload,
    ) -> Self {
        let pass = match expected {
            Expected::Value { value } => (statistic - value).abs() <= tolerance,
            Expected::Interval { lo, hi } => lo <= statistic && statistic <= hi,
        };
        Self {
            name: name.to_string(),
            samples,
            statistic,
            expected,
            tolerance,
            pass,
            artifacts,
        }
    }

    pub fn summary_line(&self) -> String {
        let exp = match self.expected {
            Expected::Value { value } => format!("{value} ± {}", self.tolerance),
            Expected::Interval { lo, hi } => format!("[{lo}, {hi}]"),
        };
        format!(
            "{} {}: statistic {} expected {} ({} samples)",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.statistic,
            exp,
            self.samples
        )
    }
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

fn spans_a_decade(xs: &[f64]) -> bool {
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(0.0, f64::max);
    xs.len() >= 4 && lo > 0.0 && hi >= 10.0 * lo * (1.0 - 1e-12)
}

/// Cells whose centers lie within `radius` cells of the lattice point 0.
pub fn rasterized_ball(grid: &Grid, radius: f64) -> GridShape {
    let dim = grid.dim();
    let m = radius.ceil() as i64 + 1;
    let span = |k: usize| if k < dim { -m..m } else { 0..1 };
    let r2 = 4.0 * radius * radius;
    let mut cells = Vec::new();
    for i in span(0) {
        for j in span(1) {
            for l in span(2) {
                let c = [i, j, l];
                let d2: i64 = (0..dim).map(|k| (2 * c[k] + 1).pow(2)).sum();
                if d2 as f64 <= r2 {
                    cells.push(c);
                }
            }
        }
    }
    GridShape::new(grid.clone(), cells).expect("cells fit the grid")
}

/// Slope of `ln 𝒲_p` against `ln r` for one cell set at spacings `r · h`.
/// The scaling law forces `1 + n/p`; tolerance 1e-10.
pub fn check_scaling_exact(base: &GridShape, p: f64, ratios: &[f64]) -> Result<PropertyReport, VerifyError> {
    if !spans_a_decade(ratios) {
        return Err(VerifyError::BadInput("need at least 4 ratios spanning a decade".into()));
    }
    let n = base.dim() as f64;
    let wps: Vec<f64> = ratios
        .par_iter()
        .map(|&r| Ok(solve_free_target(&base.rescaled(r)?, p, crate::free_target::DEFAULT_PAD_FACTOR)?.wp))
        .collect::<Result<_, VerifyError>>()?;
    let mut csv = CsvPayload::new(&["ratio", "spacing", "wp"]);
    for (r, w) in ratios.iter().zip(&wps) {
        csv.push(vec![*r, base.grid().spacing() * r, *w]);
    }
    let slope = loglog_slope(ratios, &wps);
    Ok(PropertyReport::new(
        &format!("scaling_exact_n{}_p{}", base.dim(), p),
        ratios.len(),
        slope,
        Expected::Value { value: 1.0 + n / p },
        1e-10,
        csv,
    ))
}

/// Slope of `ln 𝒲_p` against `ln |E|^(1/n)` for balls re-rasterized at each
/// radius on a fixed grid; passes within 2% of `1 + n/p`.
pub fn check_scaling_rasterized(grid: &Grid, p: f64, radii: &[f64]) -> Result<PropertyReport, VerifyError> {
    if !spans_a_decade(radii) {
        return Err(VerifyError::BadInput("need at least 4 radii spanning a decade".into()));
    }
    let n = grid.dim() as f64;
    let rows: Vec<(f64, f64, f64)> = radii
        .par_iter()
        .map(|&r| {
            let e = rasterized_ball(grid, r);
            let wp = solve_free_target(&e, p, crate::free_target::DEFAULT_PAD_FACTOR)?.wp;
            Ok((r, e.volume(), wp))
        })
        .collect::<Result<_, VerifyError>>()?;
    let mut csv = CsvPayload::new(&["radius_cells", "volume", "wp"]);
    for &(r, v, w) in &rows {
        csv.push(vec![r, v, w]);
    }
    let sizes: Vec<f64> = rows.iter().map(|r| r.1.powf(1.0 / n)).collect();
    let wps: Vec<f64> = rows.iter().map(|r| r.2).collect();
    let expected = 1.0 + n / p;
    Ok(PropertyReport::new(
        &format!("scaling_rasterized_n{}_p{}", grid.dim(), p),
        rows.len(),
        loglog_slope(&sizes, &wps),
        Expected::Value { value: expected },
        0.02 * expected,
        csv,
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropletVariant {
    /// `m` copies of one fixed cell set on a grid of spacing `h · m^(-1/n)`.
    /// Total volume is fixed and the rates are forced by scaling and additivity.
    ExactScaling,
    /// `m` re-rasterized balls of `N/m` cells each on the fixed grid.
    FixedGrid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MicrodropletConfig {
    pub dim: usize,
    /// Cells per droplet (`ExactScaling`) or in total (`FixedGrid`).
    pub cells: usize,
    pub spacing: f64,
    pub pad_factor: f64,
    pub variant: DropletVariant,
}

/// Slopes of `ln 𝒲_p`, `ln P` and `ln(P·𝒲_p)` against `ln m` at fixed total
/// volume. Expected `-1/n`, `+1/n` and `0`, each within 5% of `1/n`.
pub fn check_microdroplet(
    ms: &[usize],
    p: f64,
    cfg: &MicrodropletConfig,
) -> Result<Vec<PropertyReport>, VerifyError> {
    if ms.len() < 2 || ms.windows(2).any(|w| w[1] <= w[0]) || ms[0] == 0 {
        return Err(VerifyError::BadInput("ms must be increasing and positive".into()));
    }
    let dim = cfg.dim;
    let rows: Vec<(f64, f64, f64, f64)> = ms
        .par_iter()
        .map(|&m| {
            let (grid, each) = match cfg.variant {
                DropletVariant::ExactScaling => (
                    Grid::with_dim(dim, cfg.spacing * (m as f64).powf(-1.0 / dim as f64))?,
                    cfg.cells,
                ),
                DropletVariant::FixedGrid => {
                    if cfg.cells % m != 0 {
                        return Err(VerifyError::BadInput(format!("{} cells do not split into {m}", cfg.cells)));
                    }
                    (Grid::with_dim(dim, cfg.spacing)?, cfg.cells / m)
                }
            };
            let e = droplets(&grid, each * m, m, cfg.pad_factor)?;
            let clusters = proximity_clusters(&e, cfg.pad_factor).len();
            if clusters != m {
                return Err(VerifyError::SeparationViolation { m, clusters });
            }
            let r = additive_split_solve(&e, p, cfg.pad_factor)?;
            Ok((m as f64, e.volume(), perimeter(&e).value, r.wp))
        })
        .collect::<Result<_, VerifyError>>()?;
    let mut csv = CsvPayload::new(&["m", "volume", "perimeter", "wp"]);
    for &(m, v, per, w) in &rows {
        csv.push(vec![m, v, per, w]);
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let wp: Vec<f64> = rows.iter().map(|r| r.3).collect();
    let per: Vec<f64> = rows.iter().map(|r| r.2).collect();
    let prod: Vec<f64> = rows.iter().map(|r| r.2 * r.3).collect();
    let rate = 1.0 / dim as f64;
    let tol = 0.05 * rate;
    let tag = match cfg.variant {
        DropletVariant::ExactScaling => "exact",
        DropletVariant::FixedGrid => "fixed_grid",
    };
    Ok(vec![
        PropertyReport::new(
            &format!("microdroplet_{tag}_wp_slope"),
            rows.len(),
            loglog_slope(&xs, &wp),
            Expected::Value { value: -rate },
            tol,
            csv.clone(),
        ),
        PropertyReport::new(
            &format!("microdroplet_{tag}_perimeter_slope"),
            rows.len(),
            loglog_slope(&xs, &per),
            Expected::Value { value: rate },
            tol,
            csv.clone(),
        ),
        PropertyReport::new(
            &format!("microdroplet_{tag}_product_slope"),
            rows.len(),
            loglog_slope(&xs, &prod),
            Expected::Value { value: 0.0 },
            tol,
            csv,
        ),
    ])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum EditMode {
    Add,
    Remove,
    Mixed,
}

/// Random perturbation: `k` sequential single-cell edits (remove a boundary
/// cell or add a free neighbor), never touching a cell twice.
fn perturb(e: &GridShape, k: usize, mode: EditMode, rng: &mut ChaCha8Rng) -> GridShape {
    let dim = e.dim();
    let mut cells: Vec<Cell> = e.cells().to_vec();
    let mut set: HashSet<Cell> = cells.iter().copied().collect();
    let mut touched: HashSet<Cell> = HashSet::new();
    for _ in 0..k {
        let remove = cells.len() > 1
            && match mode {
                EditMode::Add => false,
                EditMode::Remove => true,
                EditMode::Mixed => rng.gen_bool(0.5),
            };
        if remove {
            let cand: Vec<usize> = (0..cells.len())
                .filter(|&i| {
                    !touched.contains(&cells[i])
                        && crate::grid::neighbors(dim, cells[i]).any(|n| !set.contains(&n))
                })
                .collect();
            if cand.is_empty() {
                continue;
            }
            let i = cand[rng.gen_range(0..cand.len())];
            let c = cells.swap_remove(i);
            set.remove(&c);
            touched.insert(c);
        } else {
            let mut cand: Vec<Cell> = cells
                .iter()
                .flat_map(|c| crate::grid::neighbors(dim, *c))
                .filter(|n| !set.contains(n) && !touched.contains(n))
                .collect();
            cand.sort_unstable();
            cand.dedup();
            if cand.is_empty() {
                continue;
            }
            let c = cand[rng.gen_range(0..cand.len())];
            cells.push(c);
            set.insert(c);
            touched.insert(c);
        }
    }
    GridShape::new(e.grid().clone(), cells).expect("cells stay on the grid")
}

/// Largest `|𝒲_p^p(Ẽ) - 𝒲_p^p(E)| / (max(|E|,|Ẽ|)^(p/n) · |E△Ẽ|)` over random
/// perturbations changing up to 10% of the cells. Each trial is add-only,
/// remove-only or mixed with equal probability; mixed edits partly cancel, so
/// one-signed trials are the ones that probe the supremum. Passes iff at most
/// `bound`.
pub fn check_continuity(
    e: &GridShape,
    p: f64,
    trials: usize,
    seed: u64,
    bound: f64,
) -> Result<PropertyReport, VerifyError> {
    if e.is_empty() {
        return Err(VerifyError::BadInput("shape is empty".into()));
    }
    if trials < 50 {
        return Err(VerifyError::BadInput("need at least 50 trials".into()));
    }
    let pad = crate::free_target::DEFAULT_PAD_FACTOR;
    let n = e.dim() as f64;
    let base = solve_free_target(e, p, pad)?.wp_pow_p;
    let max_k = (e.len() / 10).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let perturbed: Vec<GridShape> = (0..trials)
        .map(|_| {
            let k = rng.gen_range(1..=max_k);
            let mode = [EditMode::Add, EditMode::Remove, EditMode::Mixed][rng.gen_range(0..3)];
            perturb(e, k, mode, &mut rng)
        })
        .collect();
    let rows: Vec<Option<(f64, f64, f64)>> = perturbed
        .par_iter()
        .map(|t| {
            let sym = e.symdiff(t)?.volume();
            if sym == 0.0 {
                return Ok(None);
            }
            let w = solve_free_target(t, p, pad)?.wp_pow_p;
            let denom = e.volume().max(t.volume()).powf(p / n) * sym;
            Ok(Some((sym, w, (w - base).abs() / denom)))
        })
        .collect::<Result<_, VerifyError>>()?;
    let mut csv = CsvPayload::new(&["trial", "symdiff_volume", "wp_pow_p", "ratio"]);
    let mut max_ratio: f64 = 0.0;
    let mut samples = 0;
    for (i, r) in rows.iter().enumerate() {
        if let Some((sym, w, ratio)) = r {
            csv.push(vec![i as f64, *sym, *w, *ratio]);
            max_ratio = max_ratio.max(*ratio);
            samples += 1;
        }
    }
    Ok(PropertyReport::new(
        "continuity_ratio",
        samples,
        max_ratio,
        Expected::Interval { lo: 0.0, hi: bound },
        0.0,
        csv,
    ))
}

/// Spread (max / min) of the continuity constants fitted on several shapes and
/// spacings; passes below 2.
pub fn continuity_stability(reports: &[PropertyReport]) -> PropertyReport {
    let mut csv = CsvPayload::new(&["case", "constant"]);
    for (i, r) in reports.iter().enumerate() {
        csv.push(vec![i as f64, r.statistic]);
    }
    let hi = reports.iter().map(|r| r.statistic).fold(0.0, f64::max);
    let lo = reports.iter().map(|r| r.statistic).fold(f64::INFINITY, f64::min);
    PropertyReport::new(
        "continuity_constant_spread",
        reports.len(),
        hi / lo,
        Expected::Interval { lo: 1.0, hi: 2.0 },
        0.0,
        csv,
    )
}

/// Two equal balls whose nearest cell centers are more than
/// `mult · 2 · pad_factor · N^(1/n)` cells apart. The statistic is the largest
/// relative gap `|𝒲_p^p(union) - 2·𝒲_p^p(ball)| / (2·𝒲_p^p(ball))` over
/// multipliers `>= 1`, with the union solved as one shape. Smaller multipliers
/// are recorded only.
pub fn check_additivity(
    ball_shape: &GridShape,
    mults: &[f64],
    p: f64,
    pad_factor: f64,
) -> Result<PropertyReport, VerifyError> {
    if ball_shape.is_empty() || mults.is_empty() {
        return Err(VerifyError::BadInput("need a nonempty ball and multipliers".into()));
    }
    let single = solve_free_target(ball_shape, p, pad_factor)?.wp_pow_p;
    let bb = ball_shape.bounding_box()?;
    let width = bb.hi[0] - bb.lo[0];
    let t = 2.0 * pad_factor * (ball_shape.len() as f64).powf(1.0 / ball_shape.dim() as f64);
    let rows: Vec<(f64, f64, f64)> = mults
        .par_iter()
        .map(|&mult| {
            let gap = (mult * t).floor() as i64 + 1;
            let shift = width - 1 + gap;
            let two = ball_shape.union(&ball_shape.translate(&[shift, 0, 0]))?;
            let w = solve_free_target(&two, p, pad_factor)?.wp_pow_p;
            Ok((mult, w, (w - 2.0 * single).abs() / (2.0 * single)))
        })
        .collect::<Result<_, VerifyError>>()?;
    let mut csv = CsvPayload::new(&["mult", "wp_pow_p_union", "wp_pow_p_sum", "rel_gap"]);
    let mut worst: f64 = 0.0;
    let mut samples = 0;
    for &(mult, w, gap) in &rows {
        csv.push(vec![mult, w, 2.0 * single, gap]);
        if mult >= 1.0 {
            worst = worst.max(gap);
            samples += 1;
        }
    }
    Ok(PropertyReport::new(
        "additivity_gap",
        samples,
        worst,
        Expected::Value { value: 0.0 },
        1e-9,
        csv,
    ))
}

/// Cube-partition bound against the exact value on random shapes: the
/// statistic is `min bound / exact`, which feasibility forces to be `>= 1`.
pub fn check_upper_bound(shapes: &[GridShape], p: f64) -> Result<PropertyReport, VerifyError> {
    let rows: Vec<(f64, f64, f64)> = shapes
        .par_iter()
        .map(|e| {
            let exact = solve_free_target(e, p, crate::free_target::DEFAULT_PAD_FACTOR)?.wp_pow_p;
            let (bound, f) = cube_partition_upper_bound(e, p)?;
            if f.len() != e.len() || !f.is_disjoint(e)? {
                return Err(VerifyError::BadInput("cube partition target is infeasible".into()));
            }
            Ok((e.volume(), exact, bound))
        })
        .collect::<Result<_, VerifyError>>()?;
    let mut csv = CsvPayload::new(&["volume", "exact_wp_pow_p", "bound_wp_pow_p"]);
    let mut worst = f64::INFINITY;
    for &(v, x, b) in &rows {
        csv.push(vec![v, x, b]);
        worst = worst.min(b / x);
    }
    Ok(PropertyReport::new(
        "upper_bound_dominates",
        rows.len(),
        worst,
        Expected::Interval {
            lo: 1.0 - 1e-12,
            hi: f64::INFINITY,
        },
        0.0,
        csv,
    ))
}

/// Fitted `C = 𝒲_p / |E|^(1/p + 1/n)` on balls of the given cell counts. The
/// statistic is `max C / min C - 1`; passes at most 0.10.
pub fn check_bound_constant(grid: &Grid, p: f64, cell_counts: &[usize]) -> Result<PropertyReport, VerifyError> {
    let n = grid.dim() as f64;
    let rows: Vec<(f64, f64, f64)> = cell_counts
        .par_iter()
        .map(|&c| {
            let e = ball(grid, c);
            let wp = solve_free_target(&e, p, crate::free_target::DEFAULT_PAD_FACTOR)?.wp;
            let v = e.volume();
            Ok((v, wp, wp / v.powf(1.0 / p + 1.0 / n)))
        })
        .collect::<Result<_, VerifyError>>()?;
    let mut csv = CsvPayload::new(&["volume", "wp", "constant"]);
    for &(v, w, c) in &rows {
        csv.push(vec![v, w, c]);
    }
    let hi = rows.iter().map(|r| r.2).fold(0.0, f64::max);
    let lo = rows.iter().map(|r| r.2).fold(f64::INFINITY, f64::min);
    Ok(PropertyReport::new(
        "upper_bound_constant_spread",
        rows.len(),
        hi / lo - 1.0,
        Expected::Interval { lo: 0.0, hi: 0.10 },
        0.0,
        csv,
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NucleationReport {
    pub epsilon: f64,
    pub r_ball: f64,
    /// Chosen centers `x_i` (cell centers), in choice order.
    pub points: Vec<Vec<f64>>,
    /// `|E ∩ B(x_i, r_ball)|` per center.
    pub per_ball_volume: Vec<f64>,
    /// `|E \ ∪ B(x_i, 2 r_ball)|`.
    pub leftover_volume: f64,
    pub count_i: usize,
    pub volume: f64,
    pub perimeter: f64,
}

impl NucleationReport {
    /// Smallest center distance (infinite with fewer than two centers).
    pub fn min_separation(&self) -> f64 {
        let mut best = f64::INFINITY;
        for (i, a) in self.points.iter().enumerate() {
            for b in &self.points[i + 1..] {
                let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
                best = best.min(d);
            }
        }
        best
    }

    /// Largest `c` with `I <= |E| · (P / (c ε))^n`.
    pub fn implied_constant(&self) -> f64 {
        let n = self.points.first().map_or(1, Vec::len) as f64;
        self.perimeter / self.epsilon * (self.volume / self.count_i as f64).powf(1.0 / n)
    }
}

/// Greedy covering: candidates are the cells of `E`, ranked by
/// `|E ∩ B(x, r_ball)|` (ties to the smaller cell). A candidate is taken when it
/// is farther than `2 r_ball` from every chosen center, until the volume outside
/// the `2 r_ball` balls drops below `epsilon`. Every uncovered cell is itself
/// eligible, so the loop always terminates.
pub fn nucleation_decompose(e: &GridShape, epsilon: f64, r_ball: f64) -> Result<NucleationReport, VerifyError> {
    if !(epsilon.is_finite() && epsilon > 0.0 && epsilon <= e.volume()) {
        return Err(VerifyError::BadEpsilon(epsilon));
    }
    if !(r_ball.is_finite() && r_ball > 0.0) {
        return Err(VerifyError::BadInput(format!("r_ball must be positive (got {r_ball})")));
    }
    let dim = e.dim();
    let h = e.grid().spacing();
    let r_cells = r_ball / h;
    let offsets = |radius: f64| -> Vec<Cell> {
        let m = radius.floor() as i64;
        let span = |k: usize| if k < dim { -m..m + 1 } else { 0..1 };
        let mut out = Vec::new();
        for i in span(0) {
            for j in span(1) {
                for l in span(2) {
                    let d2 = (i * i + j * j + l * l) as f64;
                    if d2 <= radius * radius {
                        out.push([i, j, l]);
                    }
                }
            }
        }
        out
    };
    let near = offsets(r_cells);
    let far = offsets(2.0 * r_cells);
    let shift = |c: &Cell, o: &Cell| -> Cell { std::array::from_fn(|k| c[k] + o[k]) };

    let counts: Vec<usize> = e
        .cells()
        .par_iter()
        .map(|c| near.iter().filter(|o| e.contains(&shift(c, o))).count())
        .collect();
    let mut order: Vec<usize> = (0..e.len()).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));

    let unit = e.grid().cell_volume();
    let mut covered: HashSet<Cell> = HashSet::new();
    let mut chosen: Vec<usize> = Vec::new();
    for &i in &order {
        if (e.len() - covered.len()) as f64 * unit < epsilon {
            break;
        }
        let c = e.cells()[i];
        if covered.contains(&c) {
            continue;
        }
        chosen.push(i);
        for o in &far {
            let x = shift(&c, o);
            if e.contains(&x) {
                covered.insert(x);
            }
        }
    }
    let points = chosen
        .iter()
        .map(|&i| e.grid().center(&e.cells()[i])[..dim].to_vec())
        .collect();
    Ok(NucleationReport {
        epsilon,
        r_ball,
        points,
        per_ball_volume: chosen.iter().map(|&i| counts[i] as f64 * unit).collect(),
        leftover_volume: (e.len() - covered.len()) as f64 * unit,
        count_i: chosen.len(),
        volume: e.volume(),
        perimeter: perimeter(e).value,
    })
}

/// Nucleation over a corpus of `(shape, epsilon, r_ball)`. Each decomposition
/// must leave less than `epsilon` uncovered with centers more than `2 r_ball`
/// apart; the statistic is the fitted `c = min_k P_k/ε_k · (|E_k|/I_k)^(1/n)`
/// for which the count bound `I <= |E| (P/(c ε))^n` holds on every sample.
pub fn check_nucleation(corpus: &[(GridShape, f64, f64)]) -> Result<(PropertyReport, Vec<NucleationReport>), VerifyError> {
    let reports: Vec<NucleationReport> = corpus
        .iter()
        .map(|(e, eps, r)| nucleation_decompose(e, *eps, *r))
        .collect::<Result<_, _>>()?;
    let mut csv = CsvPayload::new(&[
        "volume",
        "perimeter",
        "epsilon",
        "r_ball",
        "count",
        "leftover",
        "min_separation",
        "implied_c",
    ]);
    let mut structural = true;
    for r in &reports {
        structural &= r.leftover_volume < r.epsilon && r.min_separation() > 2.0 * r.r_ball;
        csv.push(vec![
            r.volume,
            r.perimeter,
            r.epsilon,
            r.r_ball,
            r.count_i as f64,
            r.leftover_volume,
            r.min_separation(),
            r.implied_constant(),
        ]);
    }
    let c_fit = reports.iter().map(|r| r.implied_constant()).fold(f64::INFINITY, f64::min);
    let bound_holds = reports.iter().all(|r| {
        let n = r.points[0].len() as i32;
        r.count_i as f64 <= r.volume * (r.perimeter / (c_fit * r.epsilon)).powi(n) * (1.0 + 1e-12)
    });
    let stat = if structural && bound_holds { c_fit } else { f64::NAN };
    Ok((
        PropertyReport::new(
            "nucleation_count_constant",
            reports.len(),
            stat,
            Expected::Interval {
                lo: f64::MIN_POSITIVE,
                hi: f64::MAX,
            },
            0.0,
            csv,
        ),
        reports,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(dim: usize, h: f64) -> Grid {
        Grid::with_dim(dim, h).unwrap()
    }

    #[test]
    fn report_pass_rule() {
        let r = PropertyReport::new("x", 1, 2.0, Expected::Value { value: 2.0625 }, 0.125, CsvPayload::default());
        assert!(r.pass);
        let r = PropertyReport::new("x", 1, 2.0, Expected::Value { value: 2.2 }, 0.1, CsvPayload::default());
        assert!(!r.pass);
        let r = PropertyReport::new("x", 1, 2.0, Expected::Interval { lo: 1.0, hi: 2.0 }, 0.0, CsvPayload::default());
        assert!(r.pass);
        let r = PropertyReport::new("x", 1, f64::NAN, Expected::Interval { lo: 1.0, hi: 2.0 }, 0.0, CsvPayload::default());
        assert!(!r.pass);
    }

    #[test]
    fn csv_round_trip_format() {
        let mut c = CsvPayload::new(&["a", "b"]);
        c.push(vec![1.0, 0.1]);
        assert_eq!(c.to_csv(), "a,b\n1.0,0.1\n");
    }

    #[test]
    fn slope_of_power_law() {
        let xs = [1.0, 2.0, 4.0, 10.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(2.5)).collect();
        assert!((loglog_slope(&xs, &ys) - 2.5).abs() < 1e-12);
    }

    #[test]
    fn scaling_exact_small() {
        let base = rasterized_ball(&g(2, 1.0 / 16.0), 3.0);
        for p in [1.0, 2.0] {
            let r = check_scaling_exact(&base, p, &[1.0, 2.0, 4.0, 8.0, 16.0]).unwrap();
            assert!(r.pass, "{}", r.summary_line());
        }
        assert!(check_scaling_exact(&base, 1.0, &[1.0, 2.0, 4.0]).is_err());
        assert!(check_scaling_exact(&base, 1.0, &[1.0, 2.0, 3.0, 4.0]).is_err());
    }

    #[test]
    fn microdroplet_exact_rates() {
        let cfg = MicrodropletConfig {
            dim: 2,
            cells: 12,
            spacing: 0.25,
            pad_factor: 3.0,
            variant: DropletVariant::ExactScaling,
        };
        let reps = check_microdroplet(&[1, 4, 16], 1.0, &cfg).unwrap();
        for r in &reps {
            assert!(r.pass, "{}", r.summary_line());
        }
    }

    #[test]
    fn continuity_guards_and_runs() {
        let e = ball(&g(2, 0.5), 30);
        assert!(check_continuity(&e, 1.0, 10, 0, 10.0).is_err());
        let r = check_continuity(&e, 1.0, 50, 1, 10.0).unwrap();
        assert!(r.samples > 0 && r.samples <= 50);
        assert!(r.statistic.is_finite() && r.statistic > 0.0);
        let again = check_continuity(&e, 1.0, 50, 1, 10.0).unwrap();
        assert_eq!(r, again);
    }

    #[test]
    fn perturbation_size_is_bounded() {
        let e = ball(&g(2, 1.0), 50);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for k in 1..=5 {
            let t = perturb(&e, k, EditMode::Mixed, &mut rng);
            assert!(e.symdiff(&t).unwrap().len() <= k);
            let t = perturb(&e, k, EditMode::Add, &mut rng);
            assert_eq!(t.len(), e.len() + k);
            let t = perturb(&e, k, EditMode::Remove, &mut rng);
            assert_eq!(t.len() + k, e.len());
            assert!(e.symdiff(&t).unwrap().len() <= k);
        }
    }

    #[test]
    fn additivity_small() {
        let b = ball(&g(2, 1.0), 12);
        let r = check_additivity(&b, &[0.1, 1.0, 2.0], 2.0, 3.0).unwrap();
        assert!(r.pass, "{}", r.summary_line());
        assert_eq!(r.samples, 2);
        assert_eq!(r.artifacts.rows.len(), 3);
    }

    #[test]
    fn nucleation_two_far_balls() {
        let grid = g(2, 0.5);
        let b = rasterized_ball(&grid, 5.0);
        let two = b.union(&b.translate(&[100, 0, 0])).unwrap();
        let rep = nucleation_decompose(&two, 0.01, 5.0 * 0.5).unwrap();
        assert_eq!(rep.count_i, 2);
        assert!(rep.leftover_volume < 0.01);
        assert!(rep.min_separation() > 2.0 * rep.r_ball);
        let centers = [[0.0, 0.0], [50.0, 0.0]];
        for (pt, c) in rep.points.iter().zip(centers) {
            let d = ((pt[0] - c[0]).powi(2) + (pt[1] - c[1]).powi(2)).sqrt();
            assert!(d <= rep.r_ball);
        }
        let one = nucleation_decompose(&b, 0.01, 2.5).unwrap();
        assert_eq!(one.count_i, 1);
        assert_eq!(
            nucleation_decompose(&b, b.volume() * 2.0, 2.5),
            Err(VerifyError::BadEpsilon(b.volume() * 2.0))
        );
        assert!(matches!(nucleation_decompose(&b, 0.0, 2.5), Err(VerifyError::BadEpsilon(_))));
    }

    #[test]
    fn nucleation_always_terminates_on_scattered_cells() {
        let grid = g(2, 1.0);
        let cells: Vec<Cell> = (0..20).map(|i| [i * 7 % 23, i * 5 % 17, 0]).collect();
        let e = GridShape::new(grid, cells).unwrap();
        let rep = nucleation_decompose(&e, 0.5, 1.0).unwrap();
        assert_eq!(rep.leftover_volume, 0.0);
        assert!(rep.min_separation() > 2.0);
    }
}
