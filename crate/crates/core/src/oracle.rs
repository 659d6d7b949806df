//! Brute-force reference solvers.
//!
//! Each routine here answers the same question as a production module by a
//! different, slower route, so the two can be compared on small instances:
//!
//! * [`svr_dense_qp`]: the ν-SVR dual by a dense log-barrier interior-point
//!   method, with bias and tube width from exhaustive vertex enumeration of
//!   the remaining primal linear programme.
//! * [`exhaustive_tree`]: CART growth with every midpoint of every feature
//!   scored by two-pass SSE.
//! * [`ridge_normal_equations`]: least squares by Cholesky on `PᵀP + λI`.
//! * [`brute_weighted_quantile`]: the weighted CDF evaluated at every distinct value.

use nalgebra::{DMatrix, DVector};

use crate::matrix::Matrix;
use crate::qrf::{Node, Tree};

/// Solution of the ν-SVR dual by the dense reference solver.
#[derive(Debug, Clone)]
pub struct DenseSvr {
    pub x: Matrix,
    pub gamma: f64,
    /// `alpha_i - alpha*_i` for every training row.
    pub coeffs: Vec<f64>,
    pub alpha: Vec<f64>,
    pub alpha_star: Vec<f64>,
    pub bias: f64,
    pub epsilon: f64,
    /// Dual objective, maximisation form.
    pub dual_objective: f64,
}

impl DenseSvr {
    pub fn predict(&self, q: &[f64]) -> f64 {
        self.x
            .rows_iter()
            .zip(&self.coeffs)
            .map(|(r, c)| {
                let d2: f64 = r.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum();
                c * (-self.gamma * d2).exp()
            })
            .sum::<f64>()
            + self.bias
    }
}

fn rbf_gram(x: &Matrix, gamma: f64) -> DMatrix<f64> {
    let n = x.nrows();
    DMatrix::from_fn(n, n, |i, j| {
        let d2: f64 = x
            .row(i)
            .iter()
            .zip(x.row(j))
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        (-gamma * d2).exp()
    })
}

/// Solves `max -½ dᵀKd + yᵀd` over `d = alpha - alpha*` subject to
/// `sum d = 0`, `sum (alpha + alpha*) <= c nu`, `0 <= alpha, alpha* <= c/n`.
pub fn svr_dense_qp(x: &Matrix, y: &[f64], nu: f64, gamma: f64, c: f64) -> DenseSvr {
    let n = y.len();
    let m = 2 * n;
    let k = rbf_gram(x, gamma);
    let upper = c / n as f64;
    let budget = c * nu;
    let yv = DVector::from_column_slice(y);

    // f(beta) = ½ dᵀKd - yᵀd, beta = [alpha; alpha*]
    let objective = |beta: &DVector<f64>| {
        let d = beta.rows(0, n) - beta.rows(n, n);
        0.5 * d.dot(&(&k * &d)) - yv.dot(&d)
    };
    let grad_f = |beta: &DVector<f64>| {
        let d = beta.rows(0, n) - beta.rows(n, n);
        let kd = &k * &d - &yv;
        let mut g = DVector::zeros(m);
        g.rows_mut(0, n).copy_from(&kd);
        g.rows_mut(n, n).copy_from(&(-kd));
        g
    };
    let mut q = DMatrix::zeros(m, m);
    q.view_mut((0, 0), (n, n)).copy_from(&k);
    q.view_mut((n, n), (n, n)).copy_from(&k);
    q.view_mut((0, n), (n, n)).copy_from(&(-&k));
    q.view_mut((n, 0), (n, n)).copy_from(&(-&k));

    let start = upper.min(budget / n as f64) / 4.0;
    let mut beta = DVector::from_element(m, start);
    let z = DVector::from_fn(m, |i, _| if i < n { 1.0 } else { -1.0 });
    let n_ineq = (2 * m + 1) as f64;

    let barrier = |beta: &DVector<f64>, t: f64| -> f64 {
        let slack = budget - beta.sum();
        if slack <= 0.0 || beta.iter().any(|&b| b <= 0.0 || b >= upper) {
            return f64::INFINITY;
        }
        t * objective(beta)
            - beta.iter().map(|b| b.ln() + (upper - b).ln()).sum::<f64>()
            - slack.ln()
    };

    let mut t = 1.0;
    while n_ineq / t > 1e-12 {
        for _ in 0..200 {
            let slack = budget - beta.sum();
            let mut g = grad_f(&beta) * t;
            for i in 0..m {
                g[i] += -1.0 / beta[i] + 1.0 / (upper - beta[i]) + 1.0 / slack;
            }
            let mut h = &q * t;
            for i in 0..m {
                h[(i, i)] += 1.0 / (beta[i] * beta[i]) + 1.0 / ((upper - beta[i]).powi(2));
            }
            h.add_scalar_mut(1.0 / (slack * slack));
            // KKT system for the equality zᵀ beta = 0
            let mut kkt = DMatrix::zeros(m + 1, m + 1);
            kkt.view_mut((0, 0), (m, m)).copy_from(&h);
            kkt.view_mut((0, m), (m, 1)).copy_from(&z);
            kkt.view_mut((m, 0), (1, m)).copy_from(&z.transpose());
            let mut rhs = DVector::zeros(m + 1);
            rhs.rows_mut(0, m).copy_from(&(-&g));
            let Some(sol) = kkt.lu().solve(&rhs) else {
                break;
            };
            let step = sol.rows(0, m).into_owned();
            let decrement = -g.dot(&step);
            if decrement / 2.0 < 1e-14 {
                break;
            }
            let f0 = barrier(&beta, t);
            let mut s = 1.0;
            loop {
                let cand = &beta + &step * s;
                if barrier(&cand, t) <= f0 - 0.25 * s * decrement {
                    beta = cand;
                    break;
                }
                s *= 0.5;
                if s < 1e-20 {
                    break;
                }
            }
            if s < 1e-20 {
                break;
            }
        }
        t *= 10.0;
    }

    let alpha: Vec<f64> = beta.rows(0, n).iter().copied().collect();
    let alpha_star: Vec<f64> = beta.rows(n, n).iter().copied().collect();
    let coeffs: Vec<f64> = alpha.iter().zip(&alpha_star).map(|(a, b)| a - b).collect();
    let d = DVector::from_column_slice(&coeffs);
    let fitted = &k * &d;
    let residuals: Vec<f64> = (0..n).map(|i| y[i] - fitted[i]).collect();
    let (bias, epsilon) = offsets_by_vertex_enumeration(&residuals, nu);
    DenseSvr {
        x: x.clone(),
        gamma,
        coeffs,
        alpha,
        alpha_star,
        bias,
        epsilon,
        dual_objective: -objective(&beta),
    }
}

/// Minimises `nu eps + mean(max(0, |r_i - b| - eps))` over `b` and `eps >= 0`.
///
/// The objective is piecewise linear, so a minimiser sits at a vertex
/// `b = (r_i + r_j) / 2, eps = |r_i - r_j| / 2`. When several vertices tie,
/// the centre of the optimal box in `(b + eps, b - eps)` is returned.
pub fn offsets_by_vertex_enumeration(residuals: &[f64], nu: f64) -> (f64, f64) {
    let n = residuals.len();
    let cost = |b: f64, e: f64| {
        nu * e
            + residuals
                .iter()
                .map(|r| ((r - b).abs() - e).max(0.0))
                .sum::<f64>()
                / n as f64
    };
    let mut cands = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        for j in i..n {
            let b = (residuals[i] + residuals[j]) / 2.0;
            let e = (residuals[i] - residuals[j]).abs() / 2.0;
            cands.push((cost(b, e), b, e));
        }
    }
    let best = cands.iter().map(|c| c.0).fold(f64::INFINITY, f64::min);
    let tied: Vec<&(f64, f64, f64)> = cands
        .iter()
        .filter(|c| c.0 <= best + 1e-12 * best.abs().max(1e-12))
        .collect();
    // the optimal set is a box in (b + e, b - e); take its centre
    let upper: Vec<f64> = tied.iter().map(|c| c.1 + c.2).collect();
    let lower: Vec<f64> = tied.iter().map(|c| c.1 - c.2).collect();
    let mid = |v: &[f64]| {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lo + hi) / 2.0
    };
    let (u, l) = (mid(&upper), mid(&lower));
    if u <= l {
        return ((u + l) / 2.0, 0.0);
    }
    ((u + l) / 2.0, (u - l) / 2.0)
}

/// Reference CART tree grown on all rows.
#[derive(Debug, Clone, PartialEq)]
pub enum RefNode {
    Split {
        feature: usize,
        threshold: f64,
        left: Box<RefNode>,
        right: Box<RefNode>,
    },
    Leaf {
        rows: Vec<usize>,
    },
}

fn sse_two_pass(y: &[f64], rows: &[usize]) -> f64 {
    let mean = rows.iter().map(|&i| y[i]).sum::<f64>() / rows.len() as f64;
    rows.iter().map(|&i| (y[i] - mean).powi(2)).sum()
}

/// Grows a tree by scoring every midpoint threshold of every feature.
///
/// Ties within a relative 1e-10 of the best SSE go to the lowest feature,
/// then the lowest threshold.
pub fn exhaustive_tree(x: &Matrix, y: &[f64], rows: Vec<usize>, min_leaf: usize) -> RefNode {
    if rows.len() < 2 * min_leaf {
        return RefNode::Leaf { rows };
    }
    let parent = sse_two_pass(y, &rows);
    if parent <= 0.0 {
        return RefNode::Leaf { rows };
    }
    let mut cands = Vec::new();
    for f in 0..x.ncols() {
        let mut vals: Vec<f64> = rows.iter().map(|&i| x.get(i, f)).collect();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        vals.dedup();
        for w in vals.windows(2) {
            let mut t = (w[0] + w[1]) / 2.0;
            if t >= w[1] {
                t = w[0];
            }
            let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| x.get(i, f) <= t);
            if l.len() < min_leaf || r.len() < min_leaf {
                continue;
            }
            cands.push((sse_two_pass(y, &l) + sse_two_pass(y, &r), f, t));
        }
    }
    let Some(best) = cands.iter().map(|c| c.0).reduce(f64::min) else {
        return RefNode::Leaf { rows };
    };
    if parent - best <= 1e-12 * parent {
        return RefNode::Leaf { rows };
    }
    let &(_, feature, threshold) = cands
        .iter()
        .filter(|c| c.0 <= best + 1e-10 * parent)
        .min_by(|a, b| a.1.cmp(&b.1).then(a.2.partial_cmp(&b.2).unwrap()))
        .unwrap();
    let (l, r): (Vec<usize>, Vec<usize>) =
        rows.iter().partition(|&&i| x.get(i, feature) <= threshold);
    RefNode::Split {
        feature,
        threshold,
        left: Box::new(exhaustive_tree(x, y, l, min_leaf)),
        right: Box::new(exhaustive_tree(x, y, r, min_leaf)),
    }
}

/// First structural difference between a forest tree and a reference tree.
pub fn compare_trees(tree: &Tree, reference: &RefNode) -> Result<(), String> {
    fn walk(tree: &Tree, node: usize, r: &RefNode, path: &str) -> Result<(), String> {
        match (&tree.nodes[node], r) {
            (
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                },
                RefNode::Split {
                    feature: rf,
                    threshold: rt,
                    left: rl,
                    right: rr,
                },
            ) => {
                if feature != rf || threshold != rt {
                    return Err(format!(
                        "{path}: split ({feature}, {threshold}) vs reference ({rf}, {rt})"
                    ));
                }
                walk(tree, *left, rl, &format!("{path}L"))?;
                walk(tree, *right, rr, &format!("{path}R"))
            }
            (Node::Leaf { rows }, RefNode::Leaf { rows: rrows }) => {
                let mut a: Vec<usize> = rows.iter().map(|&r| r as usize).collect();
                let mut b = rrows.clone();
                a.sort_unstable();
                b.sort_unstable();
                if a != b {
                    return Err(format!("{path}: leaf rows differ"));
                }
                Ok(())
            }
            (Node::Leaf { .. }, RefNode::Split { .. }) => {
                Err(format!("{path}: leaf where reference splits"))
            }
            (Node::Split { .. }, RefNode::Leaf { .. }) => {
                Err(format!("{path}: split where reference has a leaf"))
            }
        }
    }
    walk(tree, 0, reference, "root/")
}

/// `(PᵀP + ridge I)⁻¹ Pᵀy` by a hand-rolled Cholesky factorisation.
pub fn ridge_normal_equations(p: &Matrix, y: &[f64], ridge: f64) -> Option<Vec<f64>> {
    let k = p.ncols();
    let mut a = vec![vec![0.0; k]; k];
    let mut rhs = vec![0.0; k];
    for (row, &yi) in p.rows_iter().zip(y) {
        for i in 0..k {
            rhs[i] += row[i] * yi;
            for j in 0..k {
                a[i][j] += row[i] * row[j];
            }
        }
    }
    for (i, r) in a.iter_mut().enumerate() {
        r[i] += ridge;
    }
    let mut l = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in 0..=i {
            let s: f64 = (0..j).map(|m| l[i][m] * l[j][m]).sum();
            if i == j {
                let d = a[i][i] - s;
                if d <= 0.0 {
                    return None;
                }
                l[i][i] = d.sqrt();
            } else {
                l[i][j] = (a[i][j] - s) / l[j][j];
            }
        }
    }
    let mut z = vec![0.0; k];
    for i in 0..k {
        let s: f64 = (0..i).map(|m| l[i][m] * z[m]).sum();
        z[i] = (rhs[i] - s) / l[i][i];
    }
    let mut w = vec![0.0; k];
    for i in (0..k).rev() {
        let s: f64 = (i + 1..k).map(|m| l[m][i] * w[m]).sum();
        w[i] = (z[i] - s) / l[i][i];
    }
    Some(w)
}

/// Smallest `v` among `values` with `P(V <= v) >= q`, scanning every distinct value.
pub fn brute_weighted_quantile(values: &[f64], weights: &[f64], q: f64) -> f64 {
    let total: f64 = weights.iter().sum();
    let mut distinct: Vec<f64> = values
        .iter()
        .zip(weights)
        .filter(|(_, w)| **w > 0.0)
        .map(|(v, _)| *v)
        .collect();
    distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
    distinct.dedup();
    for &v in &distinct {
        let mass: f64 = values
            .iter()
            .zip(weights)
            .filter(|(x, _)| **x <= v)
            .map(|(_, w)| w)
            .sum();
        if mass / total >= q * (1.0 - 1e-12) {
            return v;
        }
    }
    *distinct.last().expect("some positive weight")
}

/// Central finite-difference gradient.
pub fn central_difference<F: Fn(&[f64]) -> f64>(f: F, at: &[f64], h: f64) -> Vec<f64> {
    let mut x = at.to_vec();
    (0..at.len())
        .map(|i| {
            x[i] = at[i] + h;
            let up = f(&x);
            x[i] = at[i] - h;
            let down = f(&x);
            x[i] = at[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ridge_solves_consistent_system() {
        let p = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]);
        let w = ridge_normal_equations(&p, &[1.0, 1.0, 2.0], 1e-12).unwrap();
        assert!((w[0] - 1.0).abs() < 1e-9 && (w[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn vertex_enumeration_centres_symmetric_residuals() {
        let (b, e) = offsets_by_vertex_enumeration(&[-1.0, -0.5, 0.5, 1.0], 0.5);
        assert!(b.abs() < 1e-12);
        assert!((0.5..=1.0).contains(&e));
    }

    #[test]
    fn brute_quantile_walk() {
        assert_eq!(
            brute_weighted_quantile(&[1.0, 2.0, 3.0], &[1.0, 1.0, 1.0], 0.4),
            2.0
        );
        assert_eq!(brute_weighted_quantile(&[5.0, 1.0], &[3.0, 1.0], 0.5), 5.0);
    }

    #[test]
    fn finite_difference_of_quadratic() {
        let g = central_difference(|v| v[0] * v[0] + 3.0 * v[1], &[2.0, 1.0], 1e-5);
        assert!((g[0] - 4.0).abs() < 1e-8 && (g[1] - 3.0).abs() < 1e-8);
    }
}
