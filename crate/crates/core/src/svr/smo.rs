//! Sequential minimal optimisation for the SVR dual.
//!
//! Variables are stacked as `beta = [alpha; alpha_star]` (length `2n`) with
//! signs `z = [+1; -1]`, so the dual reads
//!
//! ```text
//! min ½ betaᵀ Q beta + pᵀ beta,   Q_st = z_s z_t K(x_s, x_t),
//!     p = [-y + e; y + e],        0 <= beta <= upper
//! ```
//!
//! under either two per-sign sums (`sum alpha = sum alpha_star = s`, the
//! nu formulation) or one equality `sum z beta = 0` (fixed tube width `e`).
//! Each step moves the maximal KKT-violating pair.

use crate::matrix::Matrix;

use super::kernel::{KernelCache, Rbf};

const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Constraints {
    /// `sum alpha = sum alpha_star = sum`.
    PerSign { sum: f64 },
    /// `sum alpha - sum alpha_star = 0`.
    Balanced,
}

pub(crate) struct Problem<'a> {
    pub x: &'a Matrix,
    pub y: &'a [f64],
    pub kernel: Rbf,
    pub upper: f64,
    pub tube: f64,
    pub constraints: Constraints,
    pub tol: f64,
    pub max_iter: usize,
    pub trace_objective: bool,
}

#[derive(Debug, Clone)]
pub(crate) struct Solution {
    pub beta: Vec<f64>,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub gap: f64,
    /// Minimisation objective `½ betaᵀQbeta + pᵀbeta`.
    pub objective: f64,
    pub trace: Vec<f64>,
    pub converged: bool,
}

fn sign(t: usize, n: usize) -> f64 {
    if t < n {
        1.0
    } else {
        -1.0
    }
}

struct Pair {
    i: usize,
    j: usize,
    /// Step direction coefficients: beta_i += a_i t, beta_j -= a_j t.
    a_i: f64,
    a_j: f64,
    gap: f64,
}

/// Maximal violating pair under the single balance constraint.
fn select_balanced(beta: &[f64], grad: &[f64], upper: f64, n: usize) -> Option<Pair> {
    let mut up = (f64::NEG_INFINITY, usize::MAX);
    let mut low = (f64::INFINITY, usize::MAX);
    for t in 0..2 * n {
        let z = sign(t, n);
        let v = -z * grad[t];
        let can_up = if z > 0.0 {
            beta[t] < upper
        } else {
            beta[t] > 0.0
        };
        let can_down = if z > 0.0 {
            beta[t] > 0.0
        } else {
            beta[t] < upper
        };
        if can_up && v > up.0 {
            up = (v, t);
        }
        if can_down && v < low.0 {
            low = (v, t);
        }
    }
    if up.1 == usize::MAX || low.1 == usize::MAX {
        return None;
    }
    Some(Pair {
        i: up.1,
        j: low.1,
        a_i: sign(up.1, n),
        a_j: sign(low.1, n),
        gap: up.0 - low.0,
    })
}

/// Maximal violating pair within whichever sign block violates most.
fn select_per_sign(beta: &[f64], grad: &[f64], upper: f64, n: usize) -> Option<Pair> {
    let mut best: Option<Pair> = None;
    for block in [0..n, n..2 * n] {
        let mut inc = (f64::INFINITY, usize::MAX);
        let mut dec = (f64::NEG_INFINITY, usize::MAX);
        for t in block {
            if beta[t] < upper && grad[t] < inc.0 {
                inc = (grad[t], t);
            }
            if beta[t] > 0.0 && grad[t] > dec.0 {
                dec = (grad[t], t);
            }
        }
        if inc.1 == usize::MAX || dec.1 == usize::MAX {
            continue;
        }
        let gap = dec.0 - inc.0;
        if best.as_ref().is_none_or(|b| gap > b.gap) {
            best = Some(Pair {
                i: inc.1,
                j: dec.1,
                a_i: 1.0,
                a_j: 1.0,
                gap,
            });
        }
    }
    best
}

fn initial_beta(n: usize, upper: f64, constraints: Constraints) -> Vec<f64> {
    let mut beta = vec![0.0; 2 * n];
    if let Constraints::PerSign { sum } = constraints {
        for block in [0..n, n..2 * n] {
            let mut left = sum;
            for t in block {
                let v = left.min(upper);
                beta[t] = v;
                left -= v;
                if left <= 0.0 {
                    break;
                }
            }
        }
    }
    beta
}

pub(crate) fn solve(problem: &Problem<'_>) -> Solution {
    let n = problem.y.len();
    let upper = problem.upper;
    let mut cache = KernelCache::new(problem.x, problem.kernel);
    let linear: Vec<f64> = (0..2 * n)
        .map(|t| -sign(t, n) * problem.y[t % n] + problem.tube)
        .collect();

    let mut beta = initial_beta(n, upper, problem.constraints);
    let mut grad = linear.clone();
    for k in 0..n {
        let d = beta[k] - beta[k + n];
        if d != 0.0 {
            let row = cache.row(k);
            for (s, kv) in row.iter().enumerate() {
                grad[s] += d * kv;
                grad[s + n] -= d * kv;
            }
        }
    }
    let mut objective: f64 = 0.5
        * beta
            .iter()
            .zip(&grad)
            .zip(&linear)
            .map(|((b, g), p)| b * (g + p))
            .sum::<f64>();
    let mut trace = Vec::new();
    if problem.trace_objective {
        trace.push(objective);
    }

    let mut iterations = 0;
    let mut gap;
    let mut ki = vec![0.0; n];
    let mut kj = vec![0.0; n];
    loop {
        let pair = match problem.constraints {
            Constraints::Balanced => select_balanced(&beta, &grad, upper, n),
            Constraints::PerSign { .. } => select_per_sign(&beta, &grad, upper, n),
        };
        let Some(pair) = pair else {
            gap = 0.0;
            break;
        };
        gap = pair.gap;
        if gap < problem.tol {
            break;
        }
        if iterations >= problem.max_iter {
            return Solution {
                beta,
                grad,
                iterations,
                gap,
                objective,
                trace,
                converged: false,
            };
        }
        iterations += 1;

        let Pair { i, j, a_i, a_j, .. } = pair;
        let (ri, rj) = (i % n, j % n);
        ki.copy_from_slice(cache.row(ri));
        kj.copy_from_slice(cache.row(rj));
        // a_i a_j Q_ij = a_i a_j z_i z_j K_ij = K_ij for both constraint kinds
        let eta_true = ki[ri] + kj[rj] - 2.0 * ki[rj];
        let eta = eta_true.max(TAU);
        let slope = a_i * grad[i] - a_j * grad[j];
        let mut step = -slope / eta;
        let room_i = if a_i > 0.0 { upper - beta[i] } else { beta[i] };
        let room_j = if a_j > 0.0 { beta[j] } else { upper - beta[j] };
        let mut hit_i = false;
        let mut hit_j = false;
        if step >= room_i {
            step = room_i;
            hit_i = true;
        }
        if step >= room_j {
            step = room_j;
            hit_j = true;
            hit_i = hit_i && room_i == room_j;
        }
        let old_i = beta[i];
        let old_j = beta[j];
        beta[i] = if hit_i {
            if a_i > 0.0 {
                upper
            } else {
                0.0
            }
        } else {
            (old_i + a_i * step).clamp(0.0, upper)
        };
        beta[j] = if hit_j {
            if a_j > 0.0 {
                0.0
            } else {
                upper
            }
        } else {
            (old_j - a_j * step).clamp(0.0, upper)
        };
        let d_i = beta[i] - old_i;
        let d_j = beta[j] - old_j;
        let c_i = sign(i, n) * d_i;
        let c_j = sign(j, n) * d_j;
        let delta_f = step * slope + 0.5 * step * step * eta_true;
        debug_assert!(
            delta_f <= 1e-12 * objective.abs().max(1.0),
            "dual objective increased by {delta_f}"
        );
        objective += delta_f;
        for k in 0..n {
            let dk = ki[k] * c_i + kj[k] * c_j;
            grad[k] += dk;
            grad[k + n] -= dk;
        }
        if problem.trace_objective {
            trace.push(objective);
        }
    }
    Solution {
        beta,
        grad,
        iterations,
        gap,
        objective,
        trace,
        converged: true,
    }
}

/// Offset of the free multiplier(s) at the solution.
///
/// Returns `(bias, tube)` such that `f(x) = sum d_i K(x_i, x) + bias`.
pub(crate) fn recover_offsets(
    beta: &[f64],
    grad: &[f64],
    upper: f64,
    constraints: Constraints,
) -> (f64, f64) {
    let n = beta.len() / 2;
    match constraints {
        Constraints::PerSign { .. } => {
            let level = |block: std::ops::Range<usize>| {
                let mut lb = f64::NEG_INFINITY;
                let mut ub = f64::INFINITY;
                let mut free = 0usize;
                let mut sum = 0.0;
                for t in block {
                    if beta[t] >= upper {
                        lb = lb.max(grad[t]);
                    } else if beta[t] <= 0.0 {
                        ub = ub.min(grad[t]);
                    } else {
                        free += 1;
                        sum += grad[t];
                    }
                }
                if free > 0 {
                    sum / free as f64
                } else {
                    finite_mid(lb, ub)
                }
            };
            let r1 = level(0..n);
            let r2 = level(n..2 * n);
            ((r2 - r1) / 2.0, -(r1 + r2) / 2.0)
        }
        Constraints::Balanced => {
            let mut lb = f64::NEG_INFINITY;
            let mut ub = f64::INFINITY;
            let mut free = 0usize;
            let mut sum = 0.0;
            for t in 0..2 * n {
                let z = sign(t, n);
                let v = -z * grad[t];
                if beta[t] > 0.0 && beta[t] < upper {
                    free += 1;
                    sum += v;
                    continue;
                }
                let can_up = if z > 0.0 {
                    beta[t] < upper
                } else {
                    beta[t] > 0.0
                };
                if can_up {
                    lb = lb.max(v);
                } else {
                    ub = ub.min(v);
                }
            }
            let b = if free > 0 {
                sum / free as f64
            } else {
                finite_mid(lb, ub)
            };
            (b, 0.0)
        }
    }
}

/// Centre of the optimal `(bias, tube)` set for fixed decision values.
///
/// With `u = b + e` and `l = b - e` the primal separates into two
/// one-dimensional problems whose minimisers are order statistics of the
/// residuals `r = y - Kd`; when `n nu / 2` is an integer each minimiser is an
/// interval and its midpoint is taken.
pub(crate) fn centred_offsets(residuals: &[f64], nu: f64) -> (f64, f64) {
    let n = residuals.len();
    let mut s = residuals.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let k = n as f64 * nu / 2.0;
    let whole = (k - k.round()).abs() < 1e-9;
    let (u, l) = if whole {
        let k = (k.round() as usize).clamp(1, n / 2);
        (0.5 * (s[n - k - 1] + s[n - k]), 0.5 * (s[k - 1] + s[k]))
    } else {
        let k = (k.ceil() as usize).clamp(1, n);
        (s[n - k], s[k - 1])
    };
    if u <= l {
        let m = 0.5 * (u + l);
        return (m, 0.0);
    }
    (0.5 * (u + l), 0.5 * (u - l))
}

/// Midpoint of the median interval: the bias of a zero-width tube.
pub(crate) fn median_offset(residuals: &[f64]) -> f64 {
    let n = residuals.len();
    let mut s = residuals.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn finite_mid(lb: f64, ub: f64) -> f64 {
    match (lb.is_finite(), ub.is_finite()) {
        (true, true) => (lb + ub) / 2.0,
        (true, false) => lb,
        (false, true) => ub,
        (false, false) => 0.0,
    }
}
