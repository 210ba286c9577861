//! Shared test oracles, kept independent of the implementation paths
//! they check.
#![allow(dead_code)] // each integration test binary uses a subset

use std::collections::BTreeMap;

use toolplan::planner::PlanProblem;
use toolplan::rat::{rat_uint, Rat};
use toolplan::types::ToolId;

/// Optimum found by brute force.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleBest {
    pub value: Rat,
    pub cost: u64,
    pub invocations: u64,
    pub frequencies: BTreeMap<ToolId, u32>,
}

/// Exhaustively enumerate every feasible frequency vector and apply the
/// full tie-break: max value, min cost, min total invocations, then the
/// lexicographically greatest vector in ascending tool-id order (i.e.
/// allocation prefers smaller tool ids).
pub fn enumerate_optimum(problem: &PlanProblem) -> OracleBest {
    let n = problem.items.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| problem.items[a].tool_id.cmp(&problem.items[b].tool_id));

    let mut freqs = vec![0u32; n];
    let mut best: Option<(Rat, u64, u64, Vec<u32>)> = None;
    loop {
        let mut cost = 0u64;
        let mut invocations = 0u64;
        let mut value = Rat::from_integer(0.into());
        for (slot, &idx) in order.iter().enumerate() {
            let f = u64::from(freqs[slot]);
            cost += f * problem.items[idx].cost;
            invocations += f;
            value += &problem.items[idx].value * rat_uint(f);
        }
        if cost <= problem.capacity {
            let better = match &best {
                None => true,
                Some((bv, bc, bi, bf)) => match value.cmp(bv) {
                    std::cmp::Ordering::Greater => true,
                    std::cmp::Ordering::Less => false,
                    std::cmp::Ordering::Equal => match cost.cmp(bc) {
                        std::cmp::Ordering::Less => true,
                        std::cmp::Ordering::Greater => false,
                        std::cmp::Ordering::Equal => match invocations.cmp(bi) {
                            std::cmp::Ordering::Less => true,
                            std::cmp::Ordering::Greater => false,
                            std::cmp::Ordering::Equal => freqs > *bf,
                        },
                    },
                },
            };
            if better {
                best = Some((value, cost, invocations, freqs.clone()));
            }
        }
        // Odometer over frequency vectors.
        let mut slot = 0;
        loop {
            if slot == n {
                let (value, cost, invocations, bf) = best.expect("zero vector is feasible");
                let frequencies = order
                    .iter()
                    .enumerate()
                    .map(|(s, &idx)| (problem.items[idx].tool_id.clone(), bf[s]))
                    .collect();
                return OracleBest {
                    value,
                    cost,
                    invocations,
                    frequencies,
                };
            }
            if freqs[slot] < problem.items[order[slot]].max_freq {
                freqs[slot] += 1;
                break;
            }
            freqs[slot] = 0;
            slot += 1;
        }
    }
}

/// Direct-summation softmax average, with no max-shift stabilization.
pub fn naive_weighted_average(sims: &[f64], targets: &[f64]) -> f64 {
    let numer: f64 = sims
        .iter()
        .zip(targets)
        .map(|(s, t)| s.exp() * t)
        .sum();
    let denom: f64 = sims.iter().map(|s| s.exp()).sum();
    numer / denom
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}
