//! Free-target distance of a grid shape.
//!
//! `𝒲_p(E) = inf { W_p(E, F) : |F| = |E|, F ∩ E = ∅ }`, where on the grid `F` ranges
//! over sets of free cells. Each cell of `E` is a unit atom of mass `h^n`, so the
//! problem is an assignment of `E`'s cells to distinct free cells (integral flow
//! with capacity `h^n` per sink). It is solved exactly inside a finite window;
//! the window is audited and enlarged until the window optimum is provably the
//! optimum over the whole lattice.

use std::collections::{BTreeMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{Cell, GridError, GridShape, Region, MAX_DIM};
use crate::transport::lattice::assign_to_free_cells;
use crate::transport::{check_exponent, pow_p, PlanEntry, TransportError, TransportPlan};

pub const DEFAULT_PAD_FACTOR: f64 = 3.0;
/// Window doublings tried after the first solve.
pub const MAX_ENLARGEMENTS: u32 = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FreeTargetError {
    #[error("operation needs a nonempty shape")]
    EmptyShape,
    #[error("pad factor must be positive and finite (got {0})")]
    BadPadFactor(f64),
    #[error("window audit still failing after {enlargements} enlargements (pad {pad_cells} cells)")]
    WindowOverflow { enlargements: u32, pad_cells: i64 },
    #[error("shape does not lie inside the window")]
    OutsideWindow,
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Outcome of checking a window solve against the window boundary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowAudit {
    /// No sink lies in the outermost cell shell of the window.
    pub pass: bool,
    /// Every source price is at most `depth^p` (cell units), so extending the
    /// dual by zero outside the window stays feasible: the window optimum is the
    /// optimum over the unbounded lattice.
    pub certified: bool,
    /// Longest transport distance, in length units.
    pub max_distance: f64,
    /// Fewest cells between any sink and the window exterior, minus one.
    /// Zero means some sink sits on the rim.
    pub shell_margin: i64,
    pub pad_cells: i64,
    pub enlargements: u32,
}

impl WindowAudit {
    pub fn accepted(&self) -> bool {
        self.pass && self.certified
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FreeTargetResult {
    /// `𝒲_p(E)`, units length^(1 + n/p).
    pub wp: f64,
    /// `𝒲_p(E)^p`.
    pub wp_pow_p: f64,
    /// Optimal target set `F`, disjoint from `E` with the same cell count.
    pub witness: GridShape,
    /// Sources index `E`'s sorted cells, sinks index the witness's sorted cells.
    pub plan: TransportPlan,
    pub window: Region,
    pub audit: WindowAudit,
    /// Dual price of each source (sorted order of `E`), in cell units.
    pub prices: Vec<f64>,
    pub p: f64,
}

impl FreeTargetResult {
    fn empty(e: &GridShape, p: f64) -> Self {
        Self {
            wp: 0.0,
            wp_pow_p: 0.0,
            witness: GridShape::empty(e.grid().clone()),
            plan: TransportPlan::empty(p),
            window: Region::new(e.grid().clone(), [0; MAX_DIM], [0; MAX_DIM]),
            audit: WindowAudit {
                pass: true,
                certified: true,
                max_distance: 0.0,
                shell_margin: 0,
                pad_cells: 0,
                enlargements: 0,
            },
            prices: Vec::new(),
            p,
        }
    }
}

/// `h^(n+p)`: converts a cost in cell units to length^p · volume.
fn cost_scale(e: &GridShape, p: f64) -> f64 {
    let h = e.grid().spacing();
    h.powi(e.dim() as i32) * pow_p(h, p)
}

/// Initial pad in cells: `ceil(pad_factor · N^(1/n))`, at least one.
pub fn initial_pad(cells: usize, dim: usize, pad_factor: f64) -> i64 {
    ((pad_factor * (cells as f64).powf(1.0 / dim as f64)).ceil() as i64).max(1)
}

fn check_pad_factor(pad_factor: f64) -> Result<(), FreeTargetError> {
    if pad_factor.is_finite() && pad_factor > 0.0 {
        Ok(())
    } else {
        Err(FreeTargetError::BadPadFactor(pad_factor))
    }
}

/// Exact optimum over target sets inside one fixed window. No enlargement.
pub fn solve_in_window(e: &GridShape, window: &Region, p: f64) -> Result<FreeTargetResult, FreeTargetError> {
    check_exponent(p)?;
    if e.is_empty() {
        return Ok(FreeTargetResult::empty(e, p));
    }
    if window.grid != *e.grid() {
        return Err(GridError::GridMismatch.into());
    }
    if !e.cells().iter().all(|c| window.contains(c)) {
        return Err(FreeTargetError::OutsideWindow);
    }
    let a = assign_to_free_cells(window, e.cells(), p)?;
    let h = e.grid().spacing();
    let mass = e.grid().cell_volume();

    let mut sorted = a.targets.clone();
    sorted.sort_unstable();
    let witness = GridShape::from_sorted(e.grid().clone(), sorted);
    let entries = e
        .cells()
        .iter()
        .zip(&a.targets)
        .enumerate()
        .map(|(i, (src, dst))| {
            let q: i64 = (0..MAX_DIM).map(|k| (dst[k] - src[k]).pow(2)).sum();
            PlanEntry {
                source: i,
                sink: witness.cells().binary_search(dst).expect("target is in witness"),
                mass,
                distance: (q as f64).sqrt() * h,
            }
        })
        .collect();
    let wp_pow_p = a.total_cost * cost_scale(e, p);
    let mut r = FreeTargetResult {
        wp: wp_pow_p.powf(1.0 / p),
        wp_pow_p,
        witness,
        plan: TransportPlan {
            entries,
            cost_p: wp_pow_p,
            p,
        },
        window: window.clone(),
        audit: WindowAudit {
            pass: false,
            certified: false,
            max_distance: 0.0,
            shell_margin: 0,
            pad_cells: 0,
            enlargements: 0,
        },
        prices: a.prices,
        p,
    };
    r.audit = window_audit(e, &r);
    Ok(r)
}

/// Rim and dual-certificate audit of a window solve.
///
/// `pad_cells` and `enlargements` are copied from `r.audit`.
pub fn window_audit(e: &GridShape, r: &FreeTargetResult) -> WindowAudit {
    let w = &r.window;
    let shell_margin = r
        .witness
        .cells()
        .iter()
        .map(|c| w.depth(c) - 1)
        .min()
        .unwrap_or(0);
    let pass = r.witness.cells().iter().all(|c| !w.on_rim(c));
    let certified = e
        .cells()
        .iter()
        .zip(&r.prices)
        .all(|(c, &u)| u <= pow_p(w.depth(c) as f64, r.p));
    WindowAudit {
        pass,
        certified,
        max_distance: r.plan.max_distance(),
        shell_margin,
        pad_cells: r.audit.pad_cells,
        enlargements: r.audit.enlargements,
    }
}

/// `𝒲_p(E)` on the unbounded lattice.
///
/// The window is the bounding box padded by `ceil(pad_factor · N^(1/n))` cells
/// and doubles its pad until the audit passes and certifies the optimum.
/// An empty shape gives `wp = 0`.
pub fn solve_free_target(e: &GridShape, p: f64, pad_factor: f64) -> Result<FreeTargetResult, FreeTargetError> {
    check_exponent(p)?;
    check_pad_factor(pad_factor)?;
    if e.is_empty() {
        return Ok(FreeTargetResult::empty(e, p));
    }
    let n = e.len();
    let mut pad = initial_pad(n, e.dim(), pad_factor);
    for attempt in 0..=MAX_ENLARGEMENTS {
        let window = e.bounding_window(pad)?;
        if window.len() >= 2 * n {
            let mut r = solve_in_window(e, &window, p)?;
            r.audit.pad_cells = pad;
            r.audit.enlargements = attempt;
            if r.audit.accepted() {
                return Ok(r);
            }
        }
        if attempt < MAX_ENLARGEMENTS {
            pad *= 2;
        }
    }
    Err(FreeTargetError::WindowOverflow {
        enlargements: MAX_ENLARGEMENTS,
        pad_cells: pad,
    })
}

/// Feasible transport built cube by cube: space is tiled by cubes of at least
/// `2N` cells anchored at cell 0, and each cube's part of `E` is sent optimally
/// into that cube's free cells. Returns the cost `Σ |x - T(x)|^p` (an upper bound
/// on `𝒲_p^p`) and the resulting target set.
pub fn cube_partition_upper_bound(e: &GridShape, p: f64) -> Result<(f64, GridShape), FreeTargetError> {
    check_exponent(p)?;
    if e.is_empty() {
        return Err(FreeTargetError::EmptyShape);
    }
    let side = cube_side(e.len(), e.dim());
    let dim = e.dim();
    let mut cubes: BTreeMap<Cell, Vec<Cell>> = BTreeMap::new();
    for c in e.cells() {
        let mut key = [0i64; MAX_DIM];
        for k in 0..dim {
            key[k] = c[k].div_euclid(side);
        }
        cubes.entry(key).or_default().push(*c);
    }
    let cubes: Vec<(Cell, Vec<Cell>)> = cubes.into_iter().collect();
    let solved: Vec<Result<(f64, Vec<Cell>), TransportError>> = cubes
        .par_iter()
        .map(|(key, cells)| {
            let mut lo = [0i64; MAX_DIM];
            let mut hi = [0i64; MAX_DIM];
            for k in 0..dim {
                lo[k] = key[k] * side;
                hi[k] = lo[k] + side;
            }
            let cube = Region::new(e.grid().clone(), lo, hi);
            let a = assign_to_free_cells(&cube, cells, p)?;
            Ok((a.total_cost, a.targets))
        })
        .collect();
    let mut total = 0.0;
    let mut targets = Vec::with_capacity(e.len());
    for s in solved {
        let (cost, t) = s?;
        total += cost;
        targets.extend(t);
    }
    let f = GridShape::new(e.grid().clone(), targets)?;
    Ok((total * cost_scale(e, p), f))
}

/// Smallest integer `s` with `s^n >= 2N`.
pub fn cube_side(cells: usize, dim: usize) -> i64 {
    let target = 2 * cells as u128;
    let mut s = ((target as f64).powf(1.0 / dim as f64).floor() as i64).max(1);
    while (s as u128).pow(dim as u32) < target {
        s += 1;
    }
    while s > 1 && ((s - 1) as u128).pow(dim as u32) >= target {
        s -= 1;
    }
    s
}

/// Groups `E` into clusters by single linkage on cell centers: clusters are
/// separated by more than `2 · pad_factor · max_k N_k^(1/n)` cells, where `N_k`
/// are the cluster sizes themselves. The threshold is raised to a fixed point
/// starting from the largest face-connected component, which yields the finest
/// such partition. Clusters are ordered by their smallest cell.
pub fn proximity_clusters(e: &GridShape, pad_factor: f64) -> Vec<GridShape> {
    if e.is_empty() {
        return Vec::new();
    }
    let dim = e.dim();
    let comps = face_components(e);
    let k = comps.len();
    let threshold = |size: usize| 2.0 * pad_factor * (size as f64).powf(1.0 / dim as f64);

    // squared distances between components that could ever be linked
    let t0 = threshold(e.len());
    let boxes: Vec<([i64; MAX_DIM], [i64; MAX_DIM])> = comps.iter().map(|c| bbox(c, dim)).collect();
    let rims: Vec<Vec<Cell>> = comps.iter().map(|c| rim_cells(e, c)).collect();
    let mut links: Vec<(usize, usize, f64)> = Vec::new();
    for a in 0..k {
        for b in a + 1..k {
            let gap2: i64 = (0..dim)
                .map(|d| {
                    let g = (boxes[b].0[d] - boxes[a].1[d]).max(boxes[a].0[d] - boxes[b].1[d]).max(0);
                    g * g
                })
                .sum();
            if gap2 as f64 > t0 * t0 {
                continue;
            }
            let mut best = i64::MAX;
            for x in &rims[a] {
                for y in &rims[b] {
                    let d2: i64 = (0..dim).map(|d| (x[d] - y[d]).pow(2)).sum();
                    best = best.min(d2);
                }
            }
            links.push((a, b, best as f64));
        }
    }

    let mut t = threshold(comps.iter().map(Vec::len).max().unwrap_or(0));
    loop {
        let mut uf = UnionFind::new(k);
        for &(a, b, d2) in &links {
            if d2 <= t * t {
                uf.union(a, b);
            }
        }
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for c in 0..k {
            groups.entry(uf.find(c)).or_default().push(c);
        }
        let max_size = groups
            .values()
            .map(|g| g.iter().map(|&c| comps[c].len()).sum::<usize>())
            .max()
            .unwrap_or(0);
        let next = threshold(max_size);
        if next <= t {
            let mut out: Vec<GridShape> = groups
                .values()
                .map(|g| {
                    let cells: Vec<Cell> = g.iter().flat_map(|&c| comps[c].iter().copied()).collect();
                    GridShape::new(e.grid().clone(), cells).expect("cells come from a valid shape")
                })
                .collect();
            out.sort_by(|a, b| a.cells()[0].cmp(&b.cells()[0]));
            return out;
        }
        t = next;
    }
}

fn face_components(e: &GridShape) -> Vec<Vec<Cell>> {
    let mut seen: HashSet<Cell> = HashSet::with_capacity(e.len());
    let mut out = Vec::new();
    for &start in e.cells() {
        if !seen.insert(start) {
            continue;
        }
        let mut comp = vec![start];
        let mut i = 0;
        while i < comp.len() {
            let c = comp[i];
            for nb in e.neighbors(&c) {
                if e.contains(&nb) && seen.insert(nb) {
                    comp.push(nb);
                }
            }
            i += 1;
        }
        out.push(comp);
    }
    out
}

fn bbox(cells: &[Cell], dim: usize) -> ([i64; MAX_DIM], [i64; MAX_DIM]) {
    let mut lo = cells[0];
    let mut hi = cells[0];
    for c in cells {
        for k in 0..dim {
            lo[k] = lo[k].min(c[k]);
            hi[k] = hi[k].max(c[k]);
        }
    }
    (lo, hi)
}

/// Cells with a free axis neighbor; the closest pair between two components
/// always lies among these.
fn rim_cells(e: &GridShape, comp: &[Cell]) -> Vec<Cell> {
    comp.iter()
        .filter(|c| e.neighbors(c).any(|nb| !e.contains(&nb)))
        .copied()
        .collect()
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, x: usize) -> usize {
        let mut r = x;
        while self.parent[r] != r {
            r = self.parent[r];
        }
        let mut y = x;
        while self.parent[y] != r {
            let next = self.parent[y];
            self.parent[y] = r;
            y = next;
        }
        r
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // keep the smaller root so group keys are deterministic
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// `𝒲_p` computed cluster by cluster and summed as `𝒲_p^p(∪E_k) = Σ 𝒲_p^p(E_k)`.
///
/// The sum is exact when the cluster witnesses are pairwise disjoint and miss
/// `E`: their union is then feasible for the whole shape, and restricting any
/// feasible plan to one cluster is feasible for that cluster. When the check
/// fails the monolithic solve is returned instead.
pub fn additive_split_solve(e: &GridShape, p: f64, pad_factor: f64) -> Result<FreeTargetResult, FreeTargetError> {
    check_exponent(p)?;
    check_pad_factor(pad_factor)?;
    if e.is_empty() {
        return Err(FreeTargetError::EmptyShape);
    }
    let clusters = proximity_clusters(e, pad_factor);
    if clusters.len() == 1 {
        return solve_free_target(e, p, pad_factor);
    }
    let parts: Vec<FreeTargetResult> = clusters
        .par_iter()
        .map(|c| solve_free_target(c, p, pad_factor))
        .collect::<Result<_, _>>()?;

    let mut taken: HashSet<Cell> = e.cells().iter().copied().collect();
    let disjoint = parts
        .iter()
        .all(|r| r.witness.cells().iter().all(|c| taken.insert(*c)));
    if !disjoint {
        return solve_free_target(e, p, pad_factor);
    }

    let witness = GridShape::new(
        e.grid().clone(),
        parts.iter().flat_map(|r| r.witness.cells().iter().copied()),
    )?;
    let mut entries = Vec::with_capacity(e.len());
    let mut prices = vec![0.0; e.len()];
    let mut wp_pow_p = 0.0;
    let mut lo = [i64::MAX; MAX_DIM];
    let mut hi = [i64::MIN; MAX_DIM];
    let mut audit = WindowAudit {
        pass: true,
        certified: true,
        max_distance: 0.0,
        shell_margin: i64::MAX,
        pad_cells: 0,
        enlargements: 0,
    };
    for (cluster, r) in clusters.iter().zip(&parts) {
        wp_pow_p += r.wp_pow_p;
        for en in &r.plan.entries {
            let src = cluster.cells()[en.source];
            let dst = r.witness.cells()[en.sink];
            let source = e.cells().binary_search(&src).expect("cluster cell is in E");
            entries.push(PlanEntry {
                source,
                sink: witness.cells().binary_search(&dst).expect("sink is in witness"),
                ..*en
            });
            prices[source] = r.prices[en.source];
        }
        for k in 0..MAX_DIM {
            lo[k] = lo[k].min(r.window.lo[k]);
            hi[k] = hi[k].max(r.window.hi[k]);
        }
        audit.pass &= r.audit.pass;
        audit.certified &= r.audit.certified;
        audit.max_distance = audit.max_distance.max(r.audit.max_distance);
        audit.shell_margin = audit.shell_margin.min(r.audit.shell_margin);
        audit.pad_cells = audit.pad_cells.max(r.audit.pad_cells);
        audit.enlargements = audit.enlargements.max(r.audit.enlargements);
    }
    entries.sort_by_key(|en| en.source);
    Ok(FreeTargetResult {
        wp: wp_pow_p.powf(1.0 / p),
        wp_pow_p,
        witness,
        plan: TransportPlan {
            entries,
            cost_p: wp_pow_p,
            p,
        },
        window: Region::new(e.grid().clone(), lo, hi),
        audit,
        prices,
        p,
    })
}
