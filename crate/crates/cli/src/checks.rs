//! Instance setups for `shapes verify`. The full setups run the grids the
//! acceptance suite uses; `quick` shrinks them for smoke runs.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shapes_core::free_target::DEFAULT_PAD_FACTOR;
use shapes_core::grid::{Grid, GridShape};
use shapes_core::optimizer::{ansatz, AnsatzKind, EnergyParams, DEFAULT_SURROGATE_CONSTANT};
use shapes_core::verification::{
    check_additivity, check_bound_constant, check_continuity, check_microdroplet, check_nucleation,
    check_scaling_exact, check_scaling_rasterized, continuity_stability, rasterized_ball, DropletVariant,
    MicrodropletConfig, PropertyReport, VerifyError,
};

use crate::config::CheckName;

pub fn run_check(check: CheckName, quick: bool, seed: u64) -> Result<Vec<PropertyReport>, VerifyError> {
    match check {
        CheckName::Scaling => scaling(quick),
        CheckName::Microdroplet => microdroplet(quick),
        CheckName::Continuity => continuity(quick, seed),
        CheckName::Additivity => additivity(quick),
        CheckName::UpperBound => upper_bound(quick, seed),
        CheckName::Nucleation => nucleation(),
    }
}

fn grid(dim: usize, h: f64) -> Result<Grid, VerifyError> {
    Ok(Grid::with_dim(dim, h)?)
}

fn scaling(quick: bool) -> Result<Vec<PropertyReport>, VerifyError> {
    let ratios = [1.0, 2.0, 4.0, 8.0, 16.0];
    let mut out = Vec::new();
    for p in [1.0, 2.0] {
        let seg = GridShape::new(grid(1, 1.0 / 64.0)?, (0..37).map(|i| [i, 0, 0]))?;
        out.push(check_scaling_exact(&seg, p, &ratios)?);
        let disk = rasterized_ball(&grid(2, 1.0 / 64.0)?, if quick { 3.0 } else { 6.0 });
        out.push(check_scaling_exact(&disk, p, &ratios)?);
    }
    let radii: &[f64] = if quick {
        &[2.0, 3.0, 5.0, 8.0, 13.0, 20.0]
    } else {
        &[3.0, 5.0, 8.0, 13.0, 20.0, 30.0]
    };
    for p in [1.0, 2.0] {
        out.push(check_scaling_rasterized(&grid(2, 1.0 / 128.0)?, p, radii)?);
    }
    Ok(out)
}

fn microdroplet(quick: bool) -> Result<Vec<PropertyReport>, VerifyError> {
    let ms = [1, 4, 16, 64];
    let mut out = check_microdroplet(
        &ms,
        1.0,
        &MicrodropletConfig {
            dim: 2,
            cells: if quick { 16 } else { 64 },
            spacing: 1.0 / 64.0,
            pad_factor: DEFAULT_PAD_FACTOR,
            variant: DropletVariant::ExactScaling,
        },
    )?;
    if !quick {
        out.extend(check_microdroplet(
            &ms,
            1.0,
            &MicrodropletConfig {
                dim: 2,
                cells: 4096,
                spacing: 1.0 / 64.0,
                pad_factor: DEFAULT_PAD_FACTOR,
                variant: DropletVariant::FixedGrid,
            },
        )?);
    }
    Ok(out)
}

fn continuity(quick: bool, seed: u64) -> Result<Vec<PropertyReport>, VerifyError> {
    let n = if quick { 36 } else { 100 };
    let h = 1.0 / (n as f64).sqrt();
    let prm = EnergyParams::new(1.0, 1.0, n, grid(2, h)?);
    let mut out = Vec::new();
    for kind in [
        AnsatzKind::Ball,
        AnsatzKind::Cylinder { ratio: 1.0 },
        AnsatzKind::Droplets { m: 2 },
    ] {
        let s = ansatz(kind, &prm)?;
        for e in [s.clone(), s.refine(2)?] {
            out.push(check_continuity(&e, 1.0, 50, seed, DEFAULT_SURROGATE_CONSTANT)?);
        }
    }
    out.push(continuity_stability(&out));
    Ok(out)
}

fn additivity(quick: bool) -> Result<Vec<PropertyReport>, VerifyError> {
    let b = rasterized_ball(&grid(2, 1.0 / 32.0)?, if quick { 3.0 } else { 4.0 });
    [1.0, 2.0]
        .iter()
        .map(|&p| check_additivity(&b, &[1.0, 2.0, 4.0, 0.1], p, DEFAULT_PAD_FACTOR))
        .collect()
}

fn random_shape(rng: &mut ChaCha8Rng, dim: usize, n: usize, side: i64) -> Result<GridShape, VerifyError> {
    let mut cells = HashSet::new();
    while cells.len() < n {
        let mut c = [0; 3];
        for x in c.iter_mut().take(dim) {
            *x = rng.gen_range(0..side);
        }
        cells.insert(c);
    }
    Ok(GridShape::new(grid(dim, 1.0)?, cells)?)
}

fn upper_bound(quick: bool, seed: u64) -> Result<Vec<PropertyReport>, VerifyError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = if quick { 20 } else { 100 };
    let shapes = (0..count)
        .map(|i| {
            let dim = [2, 2, 1, 3][i % 4];
            let n = rng.gen_range(1..=60);
            let side = [120, 12, 6][dim - 1];
            random_shape(&mut rng, dim, n, side)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut out = Vec::new();
    for p in [1.0, 2.0] {
        out.push(shapes_core::verification::check_upper_bound(&shapes, p)?);
    }
    let counts: &[usize] = if quick { &[16, 50, 160] } else { &[16, 50, 160, 500, 1600] };
    out.push(check_bound_constant(&grid(2, 1.0 / 128.0)?, 1.0, counts)?);
    Ok(out)
}

fn nucleation() -> Result<Vec<PropertyReport>, VerifyError> {
    let mut corpus = Vec::new();
    for (h, r) in [(0.5, 4.0), (0.25, 6.0), (1.0, 9.0)] {
        let b = rasterized_ball(&grid(2, h)?, r);
        let two = b.union(&b.translate(&[100, 0, 0]))?;
        for frac in [0.001, 0.01, 0.1] {
            corpus.push((two.clone(), frac * two.volume(), r * h));
        }
    }
    Ok(vec![check_nucleation(&corpus)?.0])
}
