use super::{check_exponent, distance, pow_p, DiscreteMeasure, TransportError};

/// Largest instance the permutation oracle accepts (8! = 40320 matchings).
pub const BRUTE_FORCE_MAX: usize = 8;

/// Optimal cost for two measures made of equal atoms, by enumerating every
/// matching. For equal atoms an optimal Kantorovich plan can be taken to be a
/// permutation, so this is an independent check on the flow solvers.
pub fn brute_force_ot(mu: &DiscreteMeasure, nu: &DiscreteMeasure, p: f64) -> Result<f64, TransportError> {
    check_exponent(p)?;
    let n = mu.len();
    if n != nu.len() {
        return Err(TransportError::MassMismatch {
            mu: mu.total(),
            nu: nu.total(),
        });
    }
    if n > BRUTE_FORCE_MAX {
        return Err(TransportError::TooLarge(n));
    }
    if n == 0 {
        return Ok(0.0);
    }
    let unit = mu.masses()[0];
    if mu.masses().iter().chain(nu.masses()).any(|&m| m != unit) {
        return Err(TransportError::InvalidMeasure(
            "brute force needs equal atoms on both sides".into(),
        ));
    }
    if mu.dim() != nu.dim() {
        return Err(TransportError::DimensionMismatch);
    }

    let cost: Vec<f64> = mu
        .points
        .iter()
        .flat_map(|a| nu.points.iter().map(move |b| pow_p(distance(a, b), p)))
        .collect();

    // Heap's algorithm over sink orderings
    let mut perm: Vec<usize> = (0..n).collect();
    let eval = |perm: &[usize]| (0..n).map(|i| cost[i * n + perm[i]]).sum::<f64>();
    let mut best = eval(&perm);
    let mut c = vec![0usize; n];
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            best = best.min(eval(&perm));
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Ok(best * unit)
}
