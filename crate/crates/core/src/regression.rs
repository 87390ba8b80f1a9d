//! Least-squares projection onto polynomial bases of the state, the
//! conditional-expectation estimator of the backward solvers.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::stats;

/// Per-path state variables at one time step (`paths × vars`, path-major).
#[derive(Debug, Clone)]
pub struct StateMatrix {
    pub paths: usize,
    pub vars: usize,
    pub data: Vec<f64>,
}

impl StateMatrix {
    pub fn from_fn(paths: usize, vars: usize, f: impl Fn(usize, &mut [f64]) + Sync) -> Self {
        let mut data = vec![0.0; paths * vars];
        if vars > 0 {
            data.par_chunks_mut(vars).enumerate().for_each(|(m, row)| f(m, row));
        }
        Self { paths, vars, data }
    }

    fn row(&self, m: usize) -> &[f64] {
        &self.data[m * self.vars..(m + 1) * self.vars]
    }
}

/// A factorized regression problem: basis functions of the state evaluated on
/// every path, ready to project any number of targets.
pub struct Projection {
    degree: usize,
    paths: usize,
    /// Index of kept state variables with their standardization.
    kept: Vec<(usize, f64, f64)>,
    exponents: Vec<Vec<usize>>,
    state: StateMatrix,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

fn monomials(vars: usize, degree: usize) -> Vec<Vec<usize>> {
    fn rec(k: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k == cur.len() {
            out.push(cur.clone());
            return;
        }
        for e in 0..=left {
            cur[k] = e;
            rec(k + 1, left - e, cur, out);
        }
    }
    let mut out = Vec::new();
    let mut cur = vec![0; vars];
    rec(0, degree, &mut cur, &mut out);
    out.sort_by_key(|e| (e.iter().sum::<usize>(), std::cmp::Reverse(e.clone())));
    out
}

impl Projection {
    /// Builds the basis of total degree `≤ degree` in the standardized state
    /// variables. Variables that are constant across paths are dropped.
    /// `ridge` scales a Tikhonov term `ridge · tr(G)/p` added to the
    /// non-constant diagonal of the normalized Gram matrix `G = X'X / M`.
    pub fn new(state: &StateMatrix, degree: usize, ridge: f64, step: usize) -> Result<Self> {
        let m = state.paths;
        let mut kept = Vec::new();
        for v in 0..state.vars {
            let col = stats::estimate_fn(m, |i| state.data[i * state.vars + v]);
            let sd = col.se * (m as f64).sqrt();
            if sd > 1e-12 * (1.0 + col.mean.abs()) {
                kept.push((v, col.mean, sd));
            }
        }
        let exponents = monomials(kept.len(), degree);
        let p = exponents.len();
        let gram = stats::par_sum_vec(m, p * p, |i, acc| {
            let mut row = vec![0.0; p];
            eval_basis(&kept, &exponents, degree, state.row(i), &mut row);
            for a in 0..p {
                for b in a..p {
                    acc[a * p + b] += row[a] * row[b];
                }
            }
        });
        let mut g = DMatrix::<f64>::zeros(p, p);
        for a in 0..p {
            for b in a..p {
                g[(a, b)] = gram[a * p + b] / m as f64;
                g[(b, a)] = g[(a, b)];
            }
        }
        let basis_name = || describe(state.vars, &kept, degree);
        let max_diag = (0..p).map(|a| g[(a, a)]).fold(0.0, f64::max);
        if !pivots_ok(&g, 1e-10 * max_diag.max(1e-300)) {
            return Err(Error::RankDeficient {
                step,
                basis: basis_name(),
            });
        }
        // The intercept is left unpenalized.
        if p > 1 {
            let trace: f64 = (1..p).map(|a| g[(a, a)]).sum();
            for a in 1..p {
                g[(a, a)] += ridge * trace / (p - 1) as f64;
            }
        }
        let chol = g.cholesky().ok_or_else(|| Error::RankDeficient {
            step,
            basis: basis_name(),
        })?;
        Ok(Self {
            degree,
            paths: m,
            kept,
            exponents,
            state: state.clone(),
            chol,
        })
    }

    pub fn basis_size(&self) -> usize {
        self.exponents.len()
    }

    pub fn coefficients(&self, target: &[f64]) -> Vec<f64> {
        let p = self.basis_size();
        let rhs = stats::par_sum_vec(self.paths, p, |i, acc| {
            let row = self.row(i);
            for (a, r) in acc.iter_mut().zip(&row) {
                *a += r * target[i];
            }
        });
        let rhs = DVector::from_iterator(p, rhs.into_iter().map(|v| v / self.paths as f64));
        self.chol.solve(&rhs).iter().copied().collect()
    }

    /// Fitted conditional expectation of `target` on every path.
    pub fn project(&self, target: &[f64]) -> Vec<f64> {
        let beta = self.coefficients(target);
        (0..self.paths)
            .into_par_iter()
            .map(|i| self.row(i).iter().zip(&beta).map(|(a, b)| a * b).sum())
            .collect()
    }

    fn row(&self, i: usize) -> Vec<f64> {
        let mut row = vec![0.0; self.basis_size()];
        eval_basis(&self.kept, &self.exponents, self.degree, self.state.row(i), &mut row);
        row
    }

    /// Fitted values clamped to the sample range of the target. A
    /// conditional expectation of a bounded variable stays in its range.
    pub fn project_clamped(&self, target: &[f64]) -> Vec<f64> {
        let (lo, hi) = target
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(*v), h.max(*v)));
        let mut fit = self.project(target);
        fit.iter_mut().for_each(|v| *v = v.clamp(lo, hi));
        fit
    }

    /// Evaluates the fitted function at an arbitrary state.
    pub fn evaluate(&self, beta: &[f64], state: &[f64]) -> f64 {
        let mut row = vec![0.0; self.basis_size()];
        eval_basis(&self.kept, &self.exponents, self.degree, state, &mut row);
        row.iter().zip(beta).map(|(a, b)| a * b).sum()
    }
}

fn eval_basis(kept: &[(usize, f64, f64)], exponents: &[Vec<usize>], degree: usize, x: &[f64], row: &mut [f64]) {
    let mut powers = vec![1.0; kept.len() * (degree + 1)];
    for (k, (v, mean, sd)) in kept.iter().enumerate() {
        let u = (x[*v] - mean) / sd;
        for e in 1..=degree {
            powers[k * (degree + 1) + e] = powers[k * (degree + 1) + e - 1] * u;
        }
    }
    for (out, e) in row.iter_mut().zip(exponents) {
        *out = e
            .iter()
            .enumerate()
            .map(|(k, p)| powers[k * (degree + 1) + p])
            .product();
    }
}

fn describe(vars: usize, kept: &[(usize, f64, f64)], degree: usize) -> String {
    let names: Vec<String> = kept.iter().map(|(v, _, _)| format!("x{v}")).collect();
    format!("poly(degree={degree}, vars=[{}] of {vars})", names.join(","))
}

/// Unpivoted Cholesky run used only to detect numerically singular Gram
/// matrices before regularization.
fn pivots_ok(g: &DMatrix<f64>, tol: f64) -> bool {
    let p = g.nrows();
    let mut l = DMatrix::<f64>::zeros(p, p);
    for j in 0..p {
        let mut d = g[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d <= tol {
            return false;
        }
        let dj = d.sqrt();
        l[(j, j)] = dj;
        for i in j + 1..p {
            let mut s = g[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / dj;
        }
    }
    true
}
