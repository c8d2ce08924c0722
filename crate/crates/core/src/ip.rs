//! Integer program for the per-class measurement allocation of null-space
//! kernels.
//!
//! Minimize `M = Σ M_i` over `0 ≤ M_i ≤ N − r_Σ` subject to, for every pair
//! `i ≠ j`,
//!
//! ```text
//! f − 2(M − 2r_Σ) > d₀,   f − 2(M_i − r_Σ) > d₀,   f − 2(M_j − r_Σ) > d₀,   f > d₀
//! f = max{M − r_Σ, M_i} + max{M − r_Σ, M_j}
//! ```
//!
//! Constraints are checked exactly as written (left sides are integers).
//! The pairwise left sides equal `4 d(i,j)` of the realized kernel, so a
//! solution guarantees `d > d₀/4`; pass `4 d₀` to require `d > d₀`.
//! Classes are exchangeable, so the search only visits nonincreasing
//! allocations, raising the total until a feasible one appears.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignAllocation {
    pub per_class_counts: Vec<usize>,
    pub total: usize,
    pub target_exponent: f64,
}

/// `f(M, M_i, M_j)`.
pub fn pair_capacity(total: usize, mi: usize, mj: usize, r_sigma: usize) -> i64 {
    let base = total as i64 - r_sigma as i64;
    base.max(mi as i64) + base.max(mj as i64)
}

/// Whether the pair `(M_i, M_j)` satisfies the four strict constraints.
pub fn pair_feasible(total: usize, mi: usize, mj: usize, r_sigma: usize, d0: f64) -> bool {
    let f = pair_capacity(total, mi, mj, r_sigma);
    let (m, r) = (total as i64, r_sigma as i64);
    [
        f - 2 * (m - 2 * r),
        f - 2 * (mi as i64 - r),
        f - 2 * (mj as i64 - r),
        f,
    ]
    .iter()
    .all(|&lhs| lhs as f64 > d0)
}

/// Full feasibility check of an allocation, including the caps.
pub fn allocation_feasible(counts: &[usize], n: usize, r_sigma: usize, d0: f64) -> bool {
    let cap = n.saturating_sub(r_sigma);
    if counts.iter().any(|&c| c > cap) {
        return false;
    }
    let total: usize = counts.iter().sum();
    for i in 0..counts.len() {
        for j in 0..counts.len() {
            if i != j && !pair_feasible(total, counts[i], counts[j], r_sigma, d0) {
                return false;
            }
        }
    }
    true
}

/// `R = 2 min{N − r_Σ, r_Σ}`.
pub fn rank_gap(n: usize, r_sigma: usize) -> usize {
    2 * n.saturating_sub(r_sigma).min(r_sigma)
}

pub fn check_target(n: usize, r_sigma: usize, d0: f64) -> Result<()> {
    if !(d0 >= 0.0 && d0.is_finite()) {
        return Err(Error::validation(format!("target exponent must be >= 0, got {d0}")));
    }
    let quarter_r = rank_gap(n, r_sigma) as f64 / 4.0;
    if d0 >= quarter_r {
        return Err(Error::infeasible(format!(
            "target exponent {d0} is not below R/4 = {quarter_r}"
        )));
    }
    Ok(())
}

pub fn solve_measurement_ip(l: usize, n: usize, r_sigma: usize, d0: f64) -> Result<DesignAllocation> {
    if l == 0 {
        return Err(Error::validation("number of classes must be at least 1"));
    }
    if r_sigma >= n {
        return Err(Error::validation(format!(
            "class rank must be below the ambient dimension, got r={r_sigma}, N={n}"
        )));
    }
    check_target(n, r_sigma, d0)?;
    let cap = n - r_sigma;
    let mut search = Search {
        l,
        r_sigma,
        d0,
        counts: vec![0; l],
        nodes: 0,
    };
    for total in 0..=l * cap {
        if search.extend(0, total, total, cap) {
            log::debug!("allocation found at M={total} after {} nodes", search.nodes);
            return Ok(DesignAllocation {
                per_class_counts: search.counts,
                total,
                target_exponent: d0,
            });
        }
    }
    Err(Error::infeasible(format!(
        "no allocation satisfies the constraints for L={l}, N={n}, r={r_sigma}, d0={d0}"
    )))
}

struct Search {
    l: usize,
    r_sigma: usize,
    d0: f64,
    counts: Vec<usize>,
    nodes: u64,
}

impl Search {
    /// Assign `counts[k..]` nonincreasing, bounded by `ceiling`, summing to `remaining`.
    fn extend(&mut self, k: usize, total: usize, remaining: usize, ceiling: usize) -> bool {
        self.nodes += 1;
        if k == self.l {
            return remaining == 0;
        }
        let slots = self.l - k;
        if remaining > slots * ceiling {
            return false;
        }
        // smallest value that still lets the nonincreasing tail reach `remaining`
        let floor = remaining.div_ceil(slots);
        for value in (floor..=ceiling.min(remaining)).rev() {
            // the constraint set is symmetric in (M_i, M_j)
            let ok = (0..k).all(|j| pair_feasible(total, value, self.counts[j], self.r_sigma, self.d0));
            if !ok {
                continue;
            }
            self.counts[k] = value;
            if self.extend(k + 1, total, remaining - value, value) {
                return true;
            }
        }
        self.counts[k] = 0;
        false
    }
}
