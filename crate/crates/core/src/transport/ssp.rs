//! Dense successive-shortest-path transportation solver.
//!
//! Residual network: every source→sink arc is uncapacitated with cost `c_ij`;
//! a sink→source arc exists while `flow_ij > 0`. Potentials keep reduced costs
//! nonnegative so each phase is a plain O(V²) Dijkstra.

use super::TransportError;

const NONE: usize = usize::MAX;

/// Reduced costs may dip below zero by rounding; anything above this is a bug.
const REDUCED_COST_SLACK: f64 = 1e-12;

#[derive(Clone, Copy, PartialEq)]
enum Node {
    Source(usize),
    Sink(usize),
}

/// Returns the nonzero flows `(source, sink, mass)` in row-major order.
///
/// `cost` is `supply.len() × capacity.len()` row-major. Masses at or below `tol`
/// count as zero.
pub(super) fn min_cost_transport(
    cost: &[f64],
    supply: &[f64],
    capacity: &[f64],
    tol: f64,
) -> Result<Vec<(usize, usize, f64)>, TransportError> {
    let m = supply.len();
    let k = capacity.len();
    debug_assert_eq!(cost.len(), m * k);

    let mut flow = vec![0.0f64; m * k];
    let mut rem_supply = supply.to_vec();
    let mut rem_cap = capacity.to_vec();
    let mut pot_src = vec![0.0f64; m];
    let mut pot_snk = vec![0.0f64; k];

    let mut dist_src = vec![0.0f64; m];
    let mut dist_snk = vec![0.0f64; k];
    let mut done_src = vec![false; m];
    let mut done_snk = vec![false; k];
    let mut pred_snk = vec![NONE; k];
    let mut pred_src = vec![NONE; m];

    loop {
        if rem_supply.iter().all(|&s| s <= tol) {
            break;
        }
        for i in 0..m {
            dist_src[i] = if rem_supply[i] > tol { 0.0 } else { f64::INFINITY };
            done_src[i] = false;
            pred_src[i] = NONE;
        }
        dist_snk.iter_mut().for_each(|d| *d = f64::INFINITY);
        done_snk.iter_mut().for_each(|d| *d = false);
        pred_snk.iter_mut().for_each(|p| *p = NONE);

        let mut terminal = NONE;
        loop {
            // smallest label; sources before sinks and lower indices first on ties
            let mut best: Option<(f64, Node)> = None;
            for i in 0..m {
                if !done_src[i] && dist_src[i] < best.map_or(f64::INFINITY, |b| b.0) {
                    best = Some((dist_src[i], Node::Source(i)));
                }
            }
            for j in 0..k {
                if !done_snk[j] && dist_snk[j] < best.map_or(f64::INFINITY, |b| b.0) {
                    best = Some((dist_snk[j], Node::Sink(j)));
                }
            }
            let Some((d, node)) = best else { break };
            match node {
                Node::Source(i) => {
                    done_src[i] = true;
                    for j in 0..k {
                        if done_snk[j] {
                            continue;
                        }
                        let rc = cost[i * k + j] + pot_src[i] - pot_snk[j];
                        debug_assert!(rc >= -REDUCED_COST_SLACK * (1.0 + cost[i * k + j].abs()));
                        let nd = d + rc.max(0.0);
                        if nd < dist_snk[j] {
                            dist_snk[j] = nd;
                            pred_snk[j] = i;
                        }
                    }
                }
                Node::Sink(j) => {
                    done_snk[j] = true;
                    if rem_cap[j] > tol {
                        terminal = j;
                        break;
                    }
                    for i in 0..m {
                        if done_src[i] || flow[i * k + j] <= tol {
                            continue;
                        }
                        let rc = -cost[i * k + j] + pot_snk[j] - pot_src[i];
                        let nd = d + rc.max(0.0);
                        if nd < dist_src[i] {
                            dist_src[i] = nd;
                            pred_src[i] = j;
                        }
                    }
                }
            }
        }
        if terminal == NONE {
            return Err(TransportError::Infeasible);
        }
        let bound = dist_snk[terminal];
        for i in 0..m {
            pot_src[i] += dist_src[i].min(bound);
        }
        for j in 0..k {
            pot_snk[j] += dist_snk[j].min(bound);
        }

        // bottleneck along the path
        let mut amount = rem_cap[terminal];
        let mut j = terminal;
        let start = loop {
            let i = pred_snk[j];
            if pred_src[i] == NONE {
                break i;
            }
            let back = pred_src[i];
            amount = amount.min(flow[i * k + back]);
            j = back;
        };
        amount = amount.min(rem_supply[start]);

        let mut j = terminal;
        loop {
            let i = pred_snk[j];
            flow[i * k + j] += amount;
            if pred_src[i] == NONE {
                break;
            }
            let back = pred_src[i];
            let f = &mut flow[i * k + back];
            *f -= amount;
            if *f <= tol {
                *f = 0.0;
            }
            j = back;
        }
        rem_supply[start] -= amount;
        if rem_supply[start] <= tol {
            rem_supply[start] = 0.0;
        }
        rem_cap[terminal] -= amount;
        if rem_cap[terminal] <= tol {
            rem_cap[terminal] = 0.0;
        }
    }

    let mut out = Vec::new();
    for i in 0..m {
        for j in 0..k {
            if flow[i * k + j] > 0.0 {
                out.push((i, j, flow[i * k + j]));
            }
        }
    }
    Ok(out)
}
