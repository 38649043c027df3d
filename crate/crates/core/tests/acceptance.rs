//! Acceptance gate: every criterion runs at its stated tolerance and prints one
//! PASS/FAIL line. The process exits nonzero if any criterion fails.

use std::collections::HashSet;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use shapes_core::free_target::{
    additive_split_solve, solve_free_target, solve_in_window, DEFAULT_PAD_FACTOR,
};
use shapes_core::grid::{Cell, Grid, GridShape, Region};
use shapes_core::optimizer::{ansatz, multi_start, oracle_1d, AnsatzKind, EnergyParams, Schedule};
use shapes_core::transport::{brute_force_ot, solve_ot, DiscreteMeasure};
use shapes_core::verification::{
    check_additivity, check_bound_constant, check_continuity, check_microdroplet, check_nucleation,
    check_scaling_rasterized, check_upper_bound, continuity_stability, rasterized_ball, DropletVariant,
    MicrodropletConfig, PropertyReport,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

fn random_shape(rng: &mut ChaCha8Rng, dim: usize, n: usize, side: i64) -> GridShape {
    let mut cells = HashSet::new();
    while cells.len() < n {
        let mut c = [0; 3];
        for k in 0..dim {
            c[k] = rng.gen_range(0..side);
        }
        cells.insert(c);
    }
    GridShape::new(Grid::with_dim(dim, 1.0).unwrap(), cells).unwrap()
}

fn reports_pass(reports: &[PropertyReport]) -> (bool, String) {
    let pass = reports.iter().all(|r| r.pass);
    let detail = reports
        .iter()
        .map(|r| format!("{}={:.6e}", r.name, r.statistic))
        .collect::<Vec<_>>()
        .join(", ");
    (pass, detail)
}

/// Solver equals the permutation oracle on random equal-atom instances.
fn c1_oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1001);
    let mut worst: f64 = 0.0;
    for i in 0..200 {
        let dim = 1 + i % 3;
        let n = rng.gen_range(1..=8);
        let p = [1.0, 2.0, 1.5, 3.0][i % 4];
        let pts = |rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
            (0..n).map(|_| (0..dim).map(|_| rng.gen_range(0.0..10.0)).collect()).collect()
        };
        let mu = DiscreteMeasure::uniform(dim, pts(&mut rng)).unwrap();
        let nu = DiscreteMeasure::uniform(dim, pts(&mut rng)).unwrap();
        let a = solve_ot(&mu, &nu, p).unwrap().cost_p;
        let b = brute_force_ot(&mu, &nu, p).unwrap();
        worst = worst.max(rel(a, b));
    }
    outcome(worst <= 1e-9, format!("200 instances, max relative gap {worst:.3e} (tol 1e-9)"))
}

/// Spacing rescale obeys `𝒲_p(rE) = r^(1+n/p) 𝒲_p(E)`; re-rasterized balls fit the slope.
fn c2_scaling() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(1002);
    for n in [1usize, 2] {
        for p in [1.0, 2.0] {
            let h = 1.0 / 64.0;
            let base = if n == 1 {
                GridShape::new(Grid::with_dim(1, h).unwrap(), (0..37).map(|i| [i, 0, 0])).unwrap()
            } else {
                rasterized_ball(&Grid::with_dim(2, h).unwrap(), 6.0)
            };
            let blob = random_shape(&mut rng, n, 30, if n == 1 { 60 } else { 8 }).with_grid(Grid::with_dim(n, h).unwrap()).unwrap();
            for e in [base, blob] {
                let w0 = solve_free_target(&e, p, DEFAULT_PAD_FACTOR).unwrap().wp;
                for r in [2.0f64, 4.0, 8.0] {
                    let w = solve_free_target(&e.rescaled(r).unwrap(), p, DEFAULT_PAD_FACTOR).unwrap().wp;
                    worst = worst.max(rel(w, r.powf(1.0 + n as f64 / p) * w0));
                }
            }
        }
    }
    let grid = Grid::with_dim(2, 1.0 / 128.0).unwrap();
    let radii = [3.0, 5.0, 8.0, 13.0, 20.0, 30.0];
    let reps: Vec<PropertyReport> = [1.0, 2.0]
        .iter()
        .map(|&p| check_scaling_rasterized(&grid, p, &radii).unwrap())
        .collect();
    let (rast_pass, rast) = reports_pass(&reps);
    outcome(
        worst <= 1e-10 && rast_pass,
        format!("exact rescale max rel err {worst:.3e} (tol 1e-10); rasterized slopes {rast} (tol 2%)"),
    )
}

fn for_each_subset(n: usize, k: usize, f: &mut impl FnMut(&[usize])) {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
        if cur.len() == k {
            f(cur);
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, f);
            cur.pop();
        }
    }
    rec(0, n, k, &mut Vec::new(), f);
}

/// Exhaustive enumeration over every disjoint sink subset of the window.
fn enumerate_window(e: &GridShape, window: &Region, p: f64) -> f64 {
    let free: Vec<Cell> = window.cells().filter(|c| !e.contains(c)).collect();
    let mu = DiscreteMeasure::from_shape(e);
    let mut best = f64::INFINITY;
    for_each_subset(free.len(), e.len(), &mut |idx| {
        let f = GridShape::new(e.grid().clone(), idx.iter().map(|&i| free[i])).unwrap();
        best = best.min(brute_force_ot(&mu, &DiscreteMeasure::from_shape(&f), p).unwrap());
    });
    best
}

/// Window and lattice solves equal brute-force enumeration on tiny instances.
fn c3_small_exact() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1003);
    let mut cases = 0;
    let mut mismatches = 0;
    for i in 0..80 {
        let dim = if i % 4 == 0 { 1 } else { 2 };
        let p = [1.0, 2.0][i % 2];
        let k = rng.gen_range(1..=if dim == 1 { 2 } else { 4 });
        let side = 5;
        let grid = Grid::with_dim(dim, 1.0).unwrap();
        let window = Region::new(grid.clone(), [0, 0, 0], [side, if dim == 2 { side } else { 1 }, 1]);
        // sources in the central block so the window holds every nearby sink
        let mut cells = HashSet::new();
        while cells.len() < k {
            let mut c = [0; 3];
            for d in 0..dim {
                c[d] = rng.gen_range(1..4);
            }
            cells.insert(c);
        }
        let e = GridShape::new(grid, cells).unwrap();
        let brute = enumerate_window(&e, &window, p);
        let win = solve_in_window(&e, &window, p).unwrap().wp_pow_p;
        let free = solve_free_target(&e, p, DEFAULT_PAD_FACTOR).unwrap().wp_pow_p;
        cases += 1;
        if rel(win, brute) > 0.0 || rel(free, brute) > 0.0 {
            mismatches += 1;
            eprintln!("mismatch: {:?} p={p} brute={brute} window={win} free={free}", e.cells());
        }
    }
    outcome(mismatches == 0, format!("{cases} instances, {mismatches} mismatches (exact equality)"))
}

fn c4_unit_interval() -> Outcome {
    let h = 1.0 / 256.0;
    let e = GridShape::new(Grid::with_dim(1, h).unwrap(), (0..256).map(|i| [i, 0, 0])).unwrap();
    let w = solve_free_target(&e, 1.0, DEFAULT_PAD_FACTOR).unwrap().wp;
    outcome((w - 0.5).abs() <= 3.0 * h, format!("W_1 = {w} (target 0.5 ± {})", 3.0 * h))
}

fn c5_microdroplet() -> Outcome {
    let ms = [1, 4, 16, 64];
    let exact = check_microdroplet(
        &ms,
        1.0,
        &MicrodropletConfig {
            dim: 2,
            cells: 64,
            spacing: 1.0 / 64.0,
            pad_factor: DEFAULT_PAD_FACTOR,
            variant: DropletVariant::ExactScaling,
        },
    )
    .unwrap();
    let fixed = check_microdroplet(
        &ms,
        1.0,
        &MicrodropletConfig {
            dim: 2,
            cells: 4096,
            spacing: 1.0 / 64.0,
            pad_factor: DEFAULT_PAD_FACTOR,
            variant: DropletVariant::FixedGrid,
        },
    )
    .unwrap();
    let all: Vec<PropertyReport> = exact.into_iter().chain(fixed).collect();
    let (pass, detail) = reports_pass(&all);
    outcome(pass, format!("{detail} (tol ±0.025)"))
}

fn c6_additivity() -> Outcome {
    let grid = Grid::with_dim(2, 1.0 / 32.0).unwrap();
    let b = rasterized_ball(&grid, 4.0);
    let mut reps = Vec::new();
    let mut split_gap: f64 = 0.0;
    for p in [1.0, 2.0] {
        reps.push(check_additivity(&b, &[1.0, 2.0, 4.0, 0.1], p, DEFAULT_PAD_FACTOR).unwrap());
        let t = 2.0 * DEFAULT_PAD_FACTOR * (b.len() as f64).sqrt();
        let two = b.union(&b.translate(&[8 + t.floor() as i64, 0, 0])).unwrap();
        let split = additive_split_solve(&two, p, DEFAULT_PAD_FACTOR).unwrap().wp_pow_p;
        let mono = solve_free_target(&two, p, DEFAULT_PAD_FACTOR).unwrap().wp_pow_p;
        split_gap = split_gap.max(rel(split, mono));
    }
    let (pass, detail) = reports_pass(&reps);
    outcome(
        pass && split_gap <= 1e-9,
        format!("{detail}; split vs monolithic rel gap {split_gap:.3e} (tol 1e-9)"),
    )
}

fn c7_continuity() -> Outcome {
    let grid = Grid::with_dim(2, 0.1).unwrap();
    let prm = EnergyParams::new(1.0, 1.0, 100, grid);
    let mut reps = Vec::new();
    for kind in [
        AnsatzKind::Ball,
        AnsatzKind::Cylinder { ratio: 1.0 },
        AnsatzKind::Droplets { m: 2 },
    ] {
        let s = ansatz(kind, &prm).unwrap();
        for e in [s.clone(), s.refine(2).unwrap()] {
            reps.push(check_continuity(&e, 1.0, 50, 7, prm.surrogate_constant).unwrap());
        }
    }
    let spread = continuity_stability(&reps);
    let consts: Vec<String> = reps.iter().map(|r| format!("{:.4}", r.statistic)).collect();
    outcome(
        spread.pass && reps.iter().all(|r| r.pass),
        format!("constants [{}], spread {:.4} (< 2)", consts.join(", "), spread.statistic),
    )
}

fn c8_upper_bound() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1008);
    let mut shapes = Vec::new();
    for i in 0..100 {
        let dim = [2, 2, 1, 3][i % 4];
        let n = rng.gen_range(1..=60);
        let side = match dim {
            1 => 120,
            2 => 12,
            _ => 6,
        };
        shapes.push(random_shape(&mut rng, dim, n, side));
    }
    let mut reps = Vec::new();
    for p in [1.0, 2.0] {
        reps.push(check_upper_bound(&shapes, p).unwrap());
    }
    let grid = Grid::with_dim(2, 1.0 / 128.0).unwrap();
    reps.push(check_bound_constant(&grid, 1.0, &[16, 50, 160, 500, 1600]).unwrap());
    let diag = check_bound_constant(&grid, 2.0, &[16, 50, 160, 500, 1600]).unwrap();
    let (pass, detail) = reports_pass(&reps);
    outcome(
        pass,
        format!("{detail} (bound/exact >= 1, spread <= 0.10); p=2 spread {:.4} (diagnostic)", diag.statistic),
    )
}

fn c9_optimizer() -> Outcome {
    let h = 1.0 / 128.0;
    let prm = EnergyParams::new(16.0, 1.0, 128, Grid::with_dim(1, h).unwrap());
    let oracle = oracle_1d(16.0, 1.0, 16).unwrap();
    let starts: Vec<GridShape> = [
        AnsatzKind::Ball,
        AnsatzKind::Cylinder { ratio: 1.0 },
        AnsatzKind::Droplets { m: 2 },
        AnsatzKind::Droplets { m: 4 },
    ]
    .iter()
    .map(|k| ansatz(*k, &prm).unwrap())
    .collect();
    let sched = Schedule {
        t0: 0.5,
        alpha: 0.998,
        steps: 1500,
    };
    let seeds = [1, 2];
    let (runs, best) = multi_start(&starts, &prm, &sched, &seeds, None).unwrap();
    let (again, best_again) = multi_start(&starts, &prm, &sched, &seeds, None).unwrap();
    let bytes = |rs: &[shapes_core::optimizer::OptimizerResult]| serde_json::to_string(rs).unwrap();
    let deterministic = best == best_again && bytes(&runs) == bytes(&again);
    let monotone = runs
        .iter()
        .all(|r| r.trace.windows(2).all(|w| w[1].best_total <= w[0].best_total));
    let volume = runs.iter().all(|r| r.best_shape.len() == 128);
    let e = runs[best].best_report.total;
    let gap = (e - oracle.energy).abs() / oracle.energy;
    outcome(
        gap <= 0.05 && deterministic && monotone && volume,
        format!(
            "best {e:.6} vs oracle {} (k*={}), rel gap {gap:.4} (tol 0.05); monotone={monotone}; deterministic={deterministic}",
            oracle.energy, oracle.k_star
        ),
    )
}

fn c10_nucleation() -> Outcome {
    let mut corpus = Vec::new();
    for (h, r) in [(0.5, 4.0), (0.25, 6.0), (1.0, 9.0)] {
        let grid = Grid::with_dim(2, h).unwrap();
        let b = rasterized_ball(&grid, r);
        let two = b.union(&b.translate(&[100, 0, 0])).unwrap();
        for eps_frac in [0.001, 0.01, 0.1] {
            corpus.push((two.clone(), eps_frac * two.volume(), r * h));
        }
    }
    let (rep, all) = check_nucleation(&corpus).unwrap();
    let two_each = all.iter().all(|n| n.count_i == 2);
    outcome(
        rep.pass && two_each,
        format!(
            "{} samples, all I=2: {two_each}, leftover < eps and separation > 2r: {}, fitted c = {:.4}",
            all.len(),
            rep.pass,
            rep.statistic
        ),
    )
}

fn main() {
    if let Ok(t) = std::env::var("SHAPES_THREADS") {
        if let Ok(n) = t.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    let criteria: [(&str, u64, fn() -> Outcome); 10] = [
        ("OT oracle equivalence", 10, c1_oracle_equivalence),
        ("exact scaling law", 120, c2_scaling),
        ("free-target small-scale exactness", 30, c3_small_exact),
        ("1D continuum anchor", 30, c4_unit_interval),
        ("microdroplet instability", 180, c5_microdroplet),
        ("additivity", 60, c6_additivity),
        ("continuity constant stability", 120, c7_continuity),
        ("upper bound construction", 120, c8_upper_bound),
        ("optimizer sanity", 180, c9_optimizer),
        ("nucleation diagnostic", 30, c10_nucleation),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|s| s.parse().ok());
    let mut failed = 0;
    for (i, (name, budget, run)) in criteria.iter().enumerate() {
        let k = i + 1;
        if only.is_some_and(|o| o != k) {
            continue;
        }
        let start = Instant::now();
        let out = run();
        let took = start.elapsed();
        let in_budget = took <= Duration::from_secs(*budget);
        let pass = out.pass && in_budget;
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {k:2} [{}] {name}: {} ({:.1}s, budget {budget}s)",
            if pass { "PASS" } else { "FAIL" },
            out.detail,
            took.as_secs_f64()
        );
    }
    if failed > 0 {
        println!("acceptance: {failed} criterion(s) failed");
        std::process::exit(1);
    }
    println!("acceptance: all criteria passed");
}
