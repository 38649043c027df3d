//! Unit-mass transport of occupied cells into free cells of a grid window.
//!
//! Every source cell must be matched to a distinct free cell of the window,
//! minimizing `Σ |x - y|^p` (lengths in cell units). This is a rectangular
//! assignment problem solved by shortest augmenting paths with dual prices
//! `u` (sources) and `v <= 0` (cells), `u_i + v_j <= c_ij`, tight on matched pairs
//! and `v_j = 0` on every unmatched cell. Those are exactly the LP optimality
//! conditions, so the result is the exact optimum over the whole window.
//!
//! Arcs are never materialized. All displacement vectors that fit in the window
//! are sorted once by length; a source scanned during Dijkstra streams its arcs
//! in that order, keyed by the lower bound `dist_i + c_ij - u_i` (valid since
//! `v <= 0`), so only arcs that can matter are ever touched.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::{check_exponent, pow_half_p, TransportError};
use crate::grid::{Cell, Region, MAX_DIM};

const NONE: u32 = u32::MAX;

/// Result of [`assign_to_free_cells`].
#[derive(Clone, Debug)]
pub struct LatticeAssignment {
    /// Target cell of each source, in the order the sources were given.
    pub targets: Vec<Cell>,
    /// `|source - target|^p` in cell units, per source.
    pub costs: Vec<f64>,
    /// `Σ costs`, summed in source order.
    pub total_cost: f64,
    /// Dual price of each source (cell units). For every free cell `y` of the
    /// window, `price_i <= |x_i - y|^p`.
    pub prices: Vec<f64>,
}

/// Displacements sorted by length, then lexicographically.
struct OffsetTable {
    delta: Vec<[i32; MAX_DIM]>,
    cost: Vec<f64>,
}

impl OffsetTable {
    fn new(dim: usize, extent: [i64; MAX_DIM], p: f64) -> Self {
        let r = |k: usize| if k < dim { extent[k] as i32 - 1 } else { 0 };
        let (r0, r1, r2) = (r(0), r(1), r(2));
        let mut items: Vec<(i64, [i32; MAX_DIM])> = Vec::new();
        for a in -r0..=r0 {
            for b in -r1..=r1 {
                for c in -r2..=r2 {
                    if a == 0 && b == 0 && c == 0 {
                        continue;
                    }
                    let q = (a as i64).pow(2) + (b as i64).pow(2) + (c as i64).pow(2);
                    items.push((q, [a, b, c]));
                }
            }
        }
        items.sort_unstable();
        let cost = items.iter().map(|(q, _)| pow_half_p(*q as f64, p)).collect();
        let delta = items.into_iter().map(|(_, d)| d).collect();
        Self { delta, cost }
    }
}

#[derive(Clone, Copy, Debug)]
struct HeapItem {
    key: f64,
    /// 0: column label, 1: arc stream of a row
    kind: u8,
    a: u32,
    b: u32,
}

impl PartialEq for HeapItem {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for HeapItem {}
impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapItem {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .key
            .total_cmp(&self.key)
            .then_with(|| other.kind.cmp(&self.kind))
            .then_with(|| other.a.cmp(&self.a))
            .then_with(|| other.b.cmp(&self.b))
    }
}

struct Solver<'a> {
    window: &'a Region,
    dim: usize,
    ext: [i64; MAX_DIM],
    offsets: OffsetTable,
    /// window position of each row
    row_pos: Vec<[i64; MAX_DIM]>,
    /// per window cell: row index if occupied, NONE if free
    occupant: Vec<u32>,
    u: Vec<f64>,
    v: Vec<f64>,
    owner: Vec<u32>,
    assigned: Vec<u32>,
    // per-search scratch, validated by epoch stamps
    epoch: u32,
    label: Vec<f64>,
    label_epoch: Vec<u32>,
    done_epoch: Vec<u32>,
    pred: Vec<u32>,
    row_dist: Vec<f64>,
    heap: BinaryHeap<HeapItem>,
    finalized: Vec<u32>,
    scanned: Vec<u32>,
}

impl<'a> Solver<'a> {
    fn linear(&self, pos: &[i64; MAX_DIM]) -> usize {
        ((pos[2] as usize) * self.ext[1] as usize + pos[1] as usize) * self.ext[0] as usize
            + pos[0] as usize
    }

    /// Window index of row `r` displaced by offset `k`, if that is a free cell.
    #[inline]
    fn target(&self, r: usize, k: usize) -> Option<usize> {
        let base = &self.row_pos[r];
        let d = &self.offsets.delta[k];
        let mut t = [0i64; MAX_DIM];
        for i in 0..self.dim {
            let x = base[i] + d[i] as i64;
            if x < 0 || x >= self.ext[i] {
                return None;
            }
            t[i] = x;
        }
        let lin = self.linear(&t);
        (self.occupant[lin] == NONE).then_some(lin)
    }

    /// First offset index `>= k` landing on a free cell not yet finalized.
    fn next_arc(&self, r: usize, mut k: usize) -> Option<(usize, usize)> {
        while k < self.offsets.delta.len() {
            if let Some(j) = self.target(r, k) {
                if self.done_epoch[j] != self.epoch {
                    return Some((k, j));
                }
            }
            k += 1;
        }
        None
    }

    fn push_stream(&mut self, r: usize, k: usize) {
        if let Some((k, _)) = self.next_arc(r, k) {
            let key = self.row_dist[r] + self.offsets.cost[k] - self.u[r];
            self.heap.push(HeapItem {
                key,
                kind: 1,
                a: r as u32,
                b: k as u32,
            });
        }
    }

    fn relax(&mut self, r: usize, k: usize, j: usize) {
        let rc = (self.offsets.cost[k] - self.u[r] - self.v[j]).max(0.0);
        let l = self.row_dist[r] + rc;
        if self.label_epoch[j] != self.epoch || l < self.label[j] {
            self.label_epoch[j] = self.epoch;
            self.label[j] = l;
            self.pred[j] = r as u32;
            self.heap.push(HeapItem {
                key: l,
                kind: 0,
                a: j as u32,
                b: 0,
            });
        }
    }

    /// One Dijkstra search from the free row `start`, then augmentation.
    fn augment(&mut self, start: usize) -> Result<(), TransportError> {
        self.epoch += 1;
        self.heap.clear();
        self.finalized.clear();
        self.scanned.clear();
        self.row_dist[start] = 0.0;
        self.scanned.push(start as u32);
        self.push_stream(start, 0);

        let (terminal, min_val) = loop {
            let Some(item) = self.heap.pop() else {
                return Err(TransportError::Infeasible);
            };
            if item.kind == 1 {
                let r = item.a as usize;
                let Some((mut k, mut j)) = self.next_arc(r, item.b as usize) else {
                    continue;
                };
                // stream arcs inline while they would be popped next anyway
                loop {
                    self.relax(r, k, j);
                    let Some((kn, jn)) = self.next_arc(r, k + 1) else { break };
                    let key = self.row_dist[r] + self.offsets.cost[kn] - self.u[r];
                    if self.heap.peek().is_some_and(|top| top.key <= key) {
                        self.heap.push(HeapItem {
                            key,
                            kind: 1,
                            a: r as u32,
                            b: kn as u32,
                        });
                        break;
                    }
                    k = kn;
                    j = jn;
                }
                continue;
            }
            let j = item.a as usize;
            if self.done_epoch[j] == self.epoch || item.key > self.label[j] {
                continue;
            }
            self.done_epoch[j] = self.epoch;
            let owner = self.owner[j];
            if owner == NONE {
                break (j, self.label[j]);
            }
            self.finalized.push(j as u32);
            let r = owner as usize;
            self.row_dist[r] = self.label[j];
            self.scanned.push(owner);
            self.push_stream(r, 0);
        };

        for &r in &self.scanned {
            let r = r as usize;
            self.u[r] += min_val - self.row_dist[r];
        }
        for &j in &self.finalized {
            let j = j as usize;
            self.v[j] -= min_val - self.label[j];
        }

        let mut j = terminal;
        loop {
            let r = self.pred[j] as usize;
            let prev = self.assigned[r];
            self.assigned[r] = j as u32;
            self.owner[j] = r as u32;
            if r == start {
                break;
            }
            j = prev as usize;
        }
        Ok(())
    }
}

/// Optimal injective assignment of `sources` (distinct cells inside `window`)
/// to free cells of `window`, minimizing `Σ |x - y|^p` in cell units.
///
/// Deterministic: sources are augmented farthest-from-centroid first and ties in the
/// search are broken by (label, cell index).
pub fn assign_to_free_cells(
    window: &Region,
    sources: &[Cell],
    p: f64,
) -> Result<LatticeAssignment, TransportError> {
    check_exponent(p)?;
    let dim = window.dim();
    let n = sources.len();
    let cells = window.len();
    if n == 0 {
        return Ok(LatticeAssignment {
            targets: Vec::new(),
            costs: Vec::new(),
            total_cost: 0.0,
            prices: Vec::new(),
        });
    }
    if cells > u32::MAX as usize - 1 {
        return Err(TransportError::TooLarge(cells));
    }

    let mut occupant = vec![NONE; cells];
    let mut row_pos = Vec::with_capacity(n);
    for (r, c) in sources.iter().enumerate() {
        let lin = window.linear_index(c).ok_or_else(|| {
            TransportError::InvalidMeasure(format!("source cell {c:?} lies outside the window"))
        })?;
        if occupant[lin] != NONE {
            return Err(TransportError::InvalidMeasure(format!("repeated source cell {c:?}")));
        }
        occupant[lin] = r as u32;
        let mut pos = [0i64; MAX_DIM];
        for k in 0..dim {
            pos[k] = c[k] - window.lo[k];
        }
        row_pos.push(pos);
    }
    let free = cells - n;
    if free < n {
        return Err(TransportError::InsufficientCapacity {
            supply: n as f64,
            capacity: free as f64,
        });
    }

    let ext = window.extent();
    let mut s = Solver {
        window,
        dim,
        ext,
        offsets: OffsetTable::new(dim, ext, p),
        row_pos,
        occupant,
        u: vec![0.0; n],
        v: vec![0.0; cells],
        owner: vec![NONE; cells],
        assigned: vec![NONE; n],
        epoch: 0,
        label: vec![0.0; cells],
        label_epoch: vec![0; cells],
        done_epoch: vec![0; cells],
        pred: vec![NONE; cells],
        row_dist: vec![0.0; n],
        heap: BinaryHeap::new(),
        finalized: Vec::new(),
        scanned: Vec::new(),
    };

    // farthest-from-centroid first; ties by input index
    let order: Vec<usize> = {
        let mut cen = [0.0f64; MAX_DIM];
        for pos in &s.row_pos {
            for k in 0..dim {
                cen[k] += pos[k] as f64 / n as f64;
            }
        }
        let d2 = |r: usize| -> f64 {
            (0..dim).map(|k| (s.row_pos[r][k] as f64 - cen[k]).powi(2)).sum()
        };
        let mut o: Vec<usize> = (0..n).collect();
        o.sort_by(|&a, &b| d2(b).total_cmp(&d2(a)).then(a.cmp(&b)));
        o
    };
    for r in order {
        s.augment(r)?;
    }

    let mut targets = Vec::with_capacity(n);
    let mut costs = Vec::with_capacity(n);
    for r in 0..n {
        let t = s.window.cell_at(s.assigned[r] as usize);
        let q: i64 = (0..dim).map(|k| (t[k] - sources[r][k]).pow(2)).sum();
        targets.push(t);
        costs.push(pow_half_p(q as f64, p));
    }
    let total_cost = costs.iter().sum();
    Ok(LatticeAssignment {
        targets,
        costs,
        total_cost,
        prices: s.u,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::transport::{brute_force_ot, DiscreteMeasure};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn window(dim: usize, lo: Cell, hi: Cell) -> Region {
        Region::new(Grid::with_dim(dim, 1.0).unwrap(), lo, hi)
    }

    #[test]
    fn single_cell_goes_to_a_neighbor() {
        let w = window(2, [-3, -3, 0], [4, 4, 1]);
        let a = assign_to_free_cells(&w, &[[0, 0, 0]], 1.0).unwrap();
        assert_eq!(a.total_cost, 1.0);
        let t = a.targets[0];
        assert_eq!(t[0].abs() + t[1].abs(), 1);
        assert_eq!(a.prices[0], 1.0);
    }

    #[test]
    fn full_window_is_rejected() {
        let w = window(1, [0, 0, 0], [3, 1, 1]);
        let r = assign_to_free_cells(&w, &[[0, 0, 0], [1, 0, 0]], 1.0);
        assert!(matches!(r, Err(TransportError::InsufficientCapacity { .. })));
        let r = assign_to_free_cells(&w, &[[7, 0, 0]], 1.0);
        assert!(matches!(r, Err(TransportError::InvalidMeasure(_))));
    }

    #[test]
    fn interval_splits_to_both_sides() {
        // 8 cells on [0,8) inside [-8,16): optimum sends half each way, 4 cells each
        let w = window(1, [-8, 0, 0], [16, 1, 1]);
        let src: Vec<Cell> = (0..8).map(|i| [i, 0, 0]).collect();
        let a = assign_to_free_cells(&w, &src, 1.0).unwrap();
        assert_eq!(a.total_cost, 32.0);
    }

    /// Exhaustive check against matching every source set with every equal-size
    /// subset of free cells, via the permutation oracle.
    #[test]
    fn matches_subset_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..30 {
            let p = [1.0, 2.0, 1.5][trial % 3];
            let w = window(2, [0, 0, 0], [4, 4, 1]);
            let all: Vec<Cell> = w.cells().collect();
            let n = rng.gen_range(1..=3);
            let mut src: Vec<Cell> = Vec::new();
            while src.len() < n {
                let c = all[rng.gen_range(0..all.len())];
                if !src.contains(&c) {
                    src.push(c);
                }
            }
            let free: Vec<Cell> = all.iter().copied().filter(|c| !src.contains(c)).collect();
            let mu = DiscreteMeasure::uniform(
                2,
                src.iter().map(|c| vec![c[0] as f64, c[1] as f64]).collect(),
            )
            .unwrap();
            let mut best = f64::INFINITY;
            let mut idx: Vec<usize> = (0..n).collect();
            loop {
                let nu = DiscreteMeasure::uniform(
                    2,
                    idx.iter().map(|&i| vec![free[i][0] as f64, free[i][1] as f64]).collect(),
                )
                .unwrap();
                best = best.min(brute_force_ot(&mu, &nu, p).unwrap());
                // next combination
                let mut i = n;
                while i > 0 && idx[i - 1] == free.len() - n + i - 1 {
                    i -= 1;
                }
                if i == 0 {
                    break;
                }
                idx[i - 1] += 1;
                for t in i..n {
                    idx[t] = idx[t - 1] + 1;
                }
            }
            let a = assign_to_free_cells(&w, &src, p).unwrap();
            assert!((a.total_cost - best).abs() <= 1e-12 * best, "trial {trial}");
        }
    }

    #[test]
    fn duals_certify_optimality() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = window(2, [0, 0, 0], [12, 12, 1]);
        let mut src: Vec<Cell> = Vec::new();
        while src.len() < 25 {
            let c = [rng.gen_range(3..9), rng.gen_range(3..9), 0];
            if !src.contains(&c) {
                src.push(c);
            }
        }
        let p = 2.0;
        let a = assign_to_free_cells(&w, &src, p).unwrap();
        // price_i <= c(i, y) for every free y, with equality-or-better at the own target
        for (i, s) in src.iter().enumerate() {
            for y in w.cells().filter(|y| !src.contains(y)) {
                let q = ((y[0] - s[0]).pow(2) + (y[1] - s[1]).pow(2)) as f64;
                let taken = a.targets.contains(&y);
                if !taken {
                    assert!(a.prices[i] <= q + 1e-9);
                }
            }
            assert!(a.prices[i] >= a.costs[i] - 1e-9);
        }
        let mut t = a.targets.clone();
        t.sort();
        t.dedup();
        assert_eq!(t.len(), src.len());
    }
}
