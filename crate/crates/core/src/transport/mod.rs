//! Exact p-cost optimal transport between discrete measures.
//!
//! Two engines share the successive-shortest-path idea with node potentials:
//!
//! * [`solve_ot`] / [`solve_flow_to_capacitated_sinks`] run a dense primal-dual
//!   min-cost flow over arbitrary positive real masses.
//! * [`lattice::assign_to_free_cells`] handles the unit-mass case on a grid
//!   window, enumerating arcs lazily in order of length. The free-target solver
//!   is built on it.
//!
//! [`brute_force_ot`] is an independent permutation oracle for small instances.

mod brute;
pub mod lattice;
mod ssp;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{GridShape, MAX_DIM};

pub use brute::brute_force_ot;

/// Relative tolerance on total masses.
pub const MASS_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransportError {
    #[error("total masses differ: {mu} vs {nu}")]
    MassMismatch { mu: f64, nu: f64 },
    #[error("sink capacity {capacity} is below the supply {supply}")]
    InsufficientCapacity { supply: f64, capacity: f64 },
    #[error("no feasible flow exists")]
    Infeasible,
    #[error("instance too large for the brute-force oracle ({0} points)")]
    TooLarge(usize),
    #[error("exponent p must be finite and >= 1 (got {0})")]
    BadExponent(f64),
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),
    #[error("point dimensions differ")]
    DimensionMismatch,
}

pub(crate) fn check_exponent(p: f64) -> Result<(), TransportError> {
    if p.is_finite() && p >= 1.0 {
        Ok(())
    } else {
        Err(TransportError::BadExponent(p))
    }
}

/// `d^p`, with the common exponents special-cased so they stay exact.
#[inline]
pub fn pow_p(d: f64, p: f64) -> f64 {
    if p == 1.0 {
        d
    } else if p == 2.0 {
        d * d
    } else {
        d.powf(p)
    }
}

/// `(q)^(p/2)` for a squared distance `q`.
#[inline]
pub(crate) fn pow_half_p(q: f64, p: f64) -> f64 {
    if p == 2.0 {
        q
    } else if p == 1.0 {
        q.sqrt()
    } else {
        q.powf(0.5 * p)
    }
}

pub(crate) fn distance(a: &[f64; MAX_DIM], b: &[f64; MAX_DIM]) -> f64 {
    let mut s = 0.0;
    for k in 0..MAX_DIM {
        let d = a[k] - b[k];
        s += d * d;
    }
    s.sqrt()
}

/// Weighted point cloud with strictly positive masses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteMeasure {
    dim: usize,
    points: Vec<[f64; MAX_DIM]>,
    masses: Vec<f64>,
    total: f64,
}

impl DiscreteMeasure {
    pub fn new(dim: usize, points: Vec<Vec<f64>>, masses: Vec<f64>) -> Result<Self, TransportError> {
        if !(1..=MAX_DIM).contains(&dim) {
            return Err(TransportError::InvalidMeasure(format!("bad dimension {dim}")));
        }
        if points.len() != masses.len() {
            return Err(TransportError::InvalidMeasure(
                "points and masses differ in length".into(),
            ));
        }
        let mut pts = Vec::with_capacity(points.len());
        for p in &points {
            if p.len() != dim {
                return Err(TransportError::DimensionMismatch);
            }
            let mut q = [0.0; MAX_DIM];
            q[..dim].copy_from_slice(p);
            pts.push(q);
        }
        Self::from_arrays(dim, pts, masses)
    }

    pub(crate) fn from_arrays(
        dim: usize,
        points: Vec<[f64; MAX_DIM]>,
        masses: Vec<f64>,
    ) -> Result<Self, TransportError> {
        if let Some(m) = masses.iter().find(|m| !(**m > 0.0 && m.is_finite())) {
            return Err(TransportError::InvalidMeasure(format!("mass {m} is not positive")));
        }
        let mut sorted: Vec<&[f64; MAX_DIM]> = points.iter().collect();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(TransportError::InvalidMeasure("repeated point".into()));
        }
        let total = masses.iter().sum();
        Ok(Self {
            dim,
            points,
            masses,
            total,
        })
    }

    /// Unit mass on each point.
    pub fn uniform(dim: usize, points: Vec<Vec<f64>>) -> Result<Self, TransportError> {
        let n = points.len();
        Self::new(dim, points, vec![1.0; n])
    }

    /// Lebesgue measure restricted to the shape: one atom of mass `h^dim` at each cell center.
    pub fn from_shape(shape: &GridShape) -> Self {
        let m = shape.grid().cell_volume();
        Self {
            dim: shape.dim(),
            points: shape.centers(),
            masses: vec![m; shape.len()],
            total: m * shape.len() as f64,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i][..self.dim]
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    /// Every point shifted by `v`.
    pub fn translated(&self, v: &[f64]) -> Self {
        let mut out = self.clone();
        for p in &mut out.points {
            for k in 0..self.dim {
                p[k] += v[k];
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub source: usize,
    pub sink: usize,
    pub mass: f64,
    /// Euclidean distance between the two atoms.
    pub distance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransportPlan {
    pub entries: Vec<PlanEntry>,
    pub cost_p: f64,
    pub p: f64,
}

impl TransportPlan {
    pub fn empty(p: f64) -> Self {
        Self {
            entries: Vec::new(),
            cost_p: 0.0,
            p,
        }
    }

    pub(crate) fn from_entries(entries: Vec<PlanEntry>, p: f64) -> Self {
        let mut plan = Self {
            entries,
            cost_p: 0.0,
            p,
        };
        plan.cost_p = plan_cost(&plan, p);
        plan
    }

    /// `W_p = cost_p^(1/p)`.
    pub fn wasserstein(&self) -> f64 {
        self.cost_p.powf(1.0 / self.p)
    }

    pub fn source_marginal(&self, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        for e in &self.entries {
            out[e.source] += e.mass;
        }
        out
    }

    pub fn sink_marginal(&self, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        for e in &self.entries {
            out[e.sink] += e.mass;
        }
        out
    }

    pub fn max_distance(&self) -> f64 {
        self.entries.iter().map(|e| e.distance).fold(0.0, f64::max)
    }
}

/// `Σ mass · distance^p` over the plan's entries.
pub fn plan_cost(plan: &TransportPlan, p: f64) -> f64 {
    plan.entries.iter().map(|e| e.mass * pow_p(e.distance, p)).sum()
}

fn cost_matrix(mu: &DiscreteMeasure, points: &[[f64; MAX_DIM]], p: f64) -> (Vec<f64>, Vec<f64>) {
    let k = points.len();
    let mut dist = Vec::with_capacity(mu.len() * k);
    let mut cost = Vec::with_capacity(mu.len() * k);
    for a in &mu.points {
        for b in points {
            let d = distance(a, b);
            dist.push(d);
            cost.push(pow_p(d, p));
        }
    }
    (dist, cost)
}

/// Optimal coupling of two measures of equal total mass under the cost `|x-y|^p`.
pub fn solve_ot(mu: &DiscreteMeasure, nu: &DiscreteMeasure, p: f64) -> Result<TransportPlan, TransportError> {
    check_exponent(p)?;
    if mu.dim != nu.dim {
        return Err(TransportError::DimensionMismatch);
    }
    if (mu.total - nu.total).abs() > MASS_TOL * mu.total.max(nu.total) {
        return Err(TransportError::MassMismatch {
            mu: mu.total,
            nu: nu.total,
        });
    }
    run_ssp(mu, &nu.points, &nu.masses, p)
}

/// Min-cost flow saturating every source of `mu` into sinks with the given capacities.
pub fn solve_flow_to_capacitated_sinks(
    mu: &DiscreteMeasure,
    sinks: &[(Vec<f64>, f64)],
    p: f64,
) -> Result<TransportPlan, TransportError> {
    check_exponent(p)?;
    let mut points = Vec::with_capacity(sinks.len());
    let mut caps = Vec::with_capacity(sinks.len());
    for (pt, cap) in sinks {
        if pt.len() != mu.dim {
            return Err(TransportError::DimensionMismatch);
        }
        if !(*cap >= 0.0 && cap.is_finite()) {
            return Err(TransportError::InvalidMeasure(format!("capacity {cap}")));
        }
        let mut q = [0.0; MAX_DIM];
        q[..mu.dim].copy_from_slice(pt);
        points.push(q);
        caps.push(*cap);
    }
    let capacity: f64 = caps.iter().sum();
    if capacity < mu.total * (1.0 - MASS_TOL) {
        return Err(TransportError::InsufficientCapacity {
            supply: mu.total,
            capacity,
        });
    }
    run_ssp(mu, &points, &caps, p)
}

fn run_ssp(
    mu: &DiscreteMeasure,
    points: &[[f64; MAX_DIM]],
    caps: &[f64],
    p: f64,
) -> Result<TransportPlan, TransportError> {
    if mu.is_empty() {
        return Ok(TransportPlan::empty(p));
    }
    let (dist, cost) = cost_matrix(mu, points, p);
    let tol = MASS_TOL * mu.total;
    let flows = ssp::min_cost_transport(&cost, &mu.masses, caps, tol)?;
    let k = points.len();
    let entries = flows
        .into_iter()
        .map(|(i, j, mass)| PlanEntry {
            source: i,
            sink: j,
            mass,
            distance: dist[i * k + j],
        })
        .collect();
    Ok(TransportPlan::from_entries(entries, p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pts(v: &[&[f64]]) -> Vec<Vec<f64>> {
        v.iter().map(|p| p.to_vec()).collect()
    }

    #[test]
    fn single_pair() {
        let mu = DiscreteMeasure::uniform(2, pts(&[&[0.0, 0.0]])).unwrap();
        let nu = DiscreteMeasure::uniform(2, pts(&[&[3.0, 4.0]])).unwrap();
        let plan = solve_ot(&mu, &nu, 2.0).unwrap();
        assert_eq!(plan.cost_p, 25.0);
        assert_eq!(plan.entries.len(), 1);
    }

    #[test]
    fn identical_measures_cost_nothing() {
        let mu = DiscreteMeasure::new(2, pts(&[&[0.0, 0.0], &[1.0, 2.0], &[5.0, 1.0]]), vec![0.5, 1.5, 2.0])
            .unwrap();
        let plan = solve_ot(&mu, &mu, 1.0).unwrap();
        assert_eq!(plan.cost_p, 0.0);
        for e in &plan.entries {
            assert_eq!(e.source, e.sink);
        }
    }

    #[test]
    fn three_by_three_matches_permutations() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut rand_pts = |n: usize| -> Vec<Vec<f64>> {
            (0..n).map(|_| vec![rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)]).collect()
        };
        let a = rand_pts(3);
        let b = rand_pts(3);
        let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let d = |x: &[f64], y: &[f64]| ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2)).sqrt();
        let best = perms
            .iter()
            .map(|s| (0..3).map(|i| d(&a[i], &b[s[i]])).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        let plan = solve_ot(
            &DiscreteMeasure::uniform(2, a).unwrap(),
            &DiscreteMeasure::uniform(2, b).unwrap(),
            1.0,
        )
        .unwrap();
        assert!((plan.cost_p - best).abs() <= 1e-12 * best);
    }

    #[test]
    fn mass_mismatch_rejected() {
        let mu = DiscreteMeasure::uniform(1, pts(&[&[0.0]])).unwrap();
        let nu = DiscreteMeasure::new(1, pts(&[&[1.0]]), vec![2.0]).unwrap();
        assert!(matches!(solve_ot(&mu, &nu, 1.0), Err(TransportError::MassMismatch { .. })));
        assert!(matches!(solve_ot(&mu, &mu, 0.5), Err(TransportError::BadExponent(_))));
    }

    #[test]
    fn invalid_measures() {
        assert!(DiscreteMeasure::new(2, pts(&[&[0.0, 0.0]]), vec![0.0]).is_err());
        assert!(DiscreteMeasure::uniform(2, pts(&[&[0.0, 0.0], &[0.0, 0.0]])).is_err());
        assert!(DiscreteMeasure::uniform(2, pts(&[&[0.0]])).is_err());
    }

    #[test]
    fn capacitated_nearest_axis_neighbor() {
        let mu = DiscreteMeasure::uniform(2, pts(&[&[0.0, 0.0]])).unwrap();
        let sinks = vec![
            (vec![1.0, 0.0], 1.0),
            (vec![0.0, 1.0], 1.0),
            (vec![-1.0, 0.0], 1.0),
            (vec![1.0, 1.0], 1.0),
        ];
        let plan = solve_flow_to_capacitated_sinks(&mu, &sinks, 1.0).unwrap();
        assert_eq!(plan.cost_p, 1.0);
        assert_eq!(plan.entries.len(), 1);
        assert_eq!(plan.entries[0].mass, 1.0);
        assert!(plan.entries[0].sink < 3);
    }

    #[test]
    fn capacitated_exact_fit_is_free() {
        let mu = DiscreteMeasure::new(1, pts(&[&[0.0], &[2.0]]), vec![1.5, 0.5]).unwrap();
        let sinks = vec![(vec![0.0], 1.5), (vec![2.0], 0.5)];
        let plan = solve_flow_to_capacitated_sinks(&mu, &sinks, 2.0).unwrap();
        assert_eq!(plan.cost_p, 0.0);
    }

    /// Sources {1,2,3}, unit sinks at {0,4,5,6,7}. Enumerating every 3-subset of
    /// sinks with its sorted (monotone) matching gives the optimum 5: {0,4,5}
    /// with |1-0| + |2-4| + |3-5|.
    #[test]
    fn capacitated_1d_against_enumeration() {
        let mu = DiscreteMeasure::uniform(1, pts(&[&[1.0], &[2.0], &[3.0]])).unwrap();
        let sink_x = [0.0, 4.0, 5.0, 6.0, 7.0];
        let mut best = f64::INFINITY;
        for a in 0..5 {
            for b in a + 1..5 {
                for c in b + 1..5 {
                    let t = [sink_x[a], sink_x[b], sink_x[c]];
                    let cost: f64 = (0..3).map(|i| (t[i] - (i as f64 + 1.0)).abs()).sum();
                    best = best.min(cost);
                }
            }
        }
        assert_eq!(best, 5.0);
        let sinks: Vec<_> = sink_x.iter().map(|&x| (vec![x], 1.0)).collect();
        let plan = solve_flow_to_capacitated_sinks(&mu, &sinks, 1.0).unwrap();
        assert_eq!(plan.cost_p, best);
    }

    #[test]
    fn insufficient_capacity() {
        let mu = DiscreteMeasure::uniform(1, pts(&[&[0.0], &[1.0]])).unwrap();
        let sinks = vec![(vec![5.0], 1.0)];
        assert!(matches!(
            solve_flow_to_capacitated_sinks(&mu, &sinks, 1.0),
            Err(TransportError::InsufficientCapacity { .. })
        ));
    }

    #[test]
    fn plan_cost_examples() {
        assert_eq!(plan_cost(&TransportPlan::empty(2.0), 2.0), 0.0);
        let plan = TransportPlan::from_entries(
            vec![PlanEntry {
                source: 0,
                sink: 0,
                mass: 2.0,
                distance: 3.0,
            }],
            2.0,
        );
        assert_eq!(plan.cost_p, 18.0);
    }

    #[test]
    fn marginals_and_integrality() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let n = rng.gen_range(1..7);
            let k = rng.gen_range(n..n + 5);
            let mu = DiscreteMeasure::uniform(
                2,
                (0..n).map(|i| vec![i as f64, rng.gen_range(0.0..3.0)]).collect(),
            )
            .unwrap();
            let sinks: Vec<_> = (0..k)
                .map(|j| (vec![j as f64 + 0.5, rng.gen_range(-3.0..0.0)], 1.0))
                .collect();
            let plan = solve_flow_to_capacitated_sinks(&mu, &sinks, 1.5).unwrap();
            for e in &plan.entries {
                assert_eq!(e.mass, 1.0);
            }
            assert!(plan.source_marginal(n).iter().all(|&m| m == 1.0));
            assert!(plan.sink_marginal(k).iter().all(|&m| m <= 1.0));
            assert!((plan_cost(&plan, 1.5) - plan.cost_p).abs() <= 1e-12 * plan.cost_p);
        }
    }
}
