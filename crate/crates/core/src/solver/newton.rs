//! Projected Newton ascent for the dual of the strategy-selection problems.
//!
//! Both the dense and the diagonal strategy problems have a concave dual of
//! the form `g(λ) = 2 t(λ) - Σ λ` over `λ ≥ 0`, one multiplier per privacy
//! constraint, where `t` is positively homogeneous of degree one half. The
//! gradient is `d(λ) - 1` with `d_x` the privacy cost of cell `x` under the
//! primal point recovered from `λ`. Homogeneity lets every iterate be
//! rescaled so that `Σ λ = t`; the relative duality gap is then
//! `max_x d_x - 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub(crate) trait DualProblem {
    fn len(&self) -> usize;

    /// Moves the state to `lambda`, returning `t(λ)`, or `None` when the
    /// primal point is undefined there.
    fn eval(&mut self, lambda: &[f64]) -> Option<f64>;

    /// Per-cell costs at the current state.
    fn costs(&self) -> &[f64];

    /// Updates the state for `λ ← c λ` without refactoring.
    fn scale(&mut self, c: f64);

    /// `-∇²g · v` (positive semidefinite) at the current state.
    fn hess_apply(&self, v: &[f64]) -> Vec<f64>;

    /// Diagonal of `-∇²g` at the current state.
    fn hess_diag(&self) -> Vec<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Stop once the relative duality gap is below this.
    pub gap: f64,
    pub max_iterations: usize,
    /// A stalled line search is accepted as converged below this gap.
    pub stall_gap: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { gap: 1e-10, max_iterations: 5000, stall_gap: 1e-7 }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct DualSolution {
    pub iterations: usize,
    pub max_cost: f64,
}

const ARMIJO: f64 = 1e-4;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Optimal rescaling `λ ← cλ` with `c = (t/Σλ)²`.
fn rescale<P: DualProblem>(p: &mut P, lambda: &mut [f64], t: &mut f64) {
    let sum: f64 = lambda.iter().sum();
    let c = (*t / sum).powi(2);
    for l in lambda.iter_mut() {
        *l *= c;
    }
    *t *= c.sqrt();
    p.scale(c);
}

/// Jacobi-preconditioned conjugate gradients for `(H_FF + μI) x = b_F`,
/// with entries outside `free` held at zero.
fn pcg<P: DualProblem>(p: &P, b: &[f64], free: &[bool], diag: &[f64], mu: f64, rtol: f64) -> Vec<f64> {
    let n = b.len();
    let mask = |v: &mut Vec<f64>| {
        for (x, f) in v.iter_mut().zip(free) {
            if !f {
                *x = 0.0;
            }
        }
    };
    let precond = |r: &[f64]| -> Vec<f64> {
        r.iter()
            .zip(diag)
            .zip(free)
            .map(|((ri, di), f)| if *f { ri / (di + mu) } else { 0.0 })
            .collect()
    };
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    mask(&mut r);
    let b_norm = dot(&r, &r).sqrt();
    if b_norm == 0.0 {
        return x;
    }
    let mut z = precond(&r);
    let mut dir = z.clone();
    let mut rz = dot(&r, &z);
    for _ in 0..n.clamp(10, 500) {
        let mut hd = p.hess_apply(&dir);
        for (h, d) in hd.iter_mut().zip(&dir) {
            *h += mu * d;
        }
        mask(&mut hd);
        let curv = dot(&dir, &hd);
        if !(curv > 0.0) {
            break;
        }
        let alpha = rz / curv;
        for i in 0..n {
            x[i] += alpha * dir[i];
            r[i] -= alpha * hd[i];
        }
        if dot(&r, &r).sqrt() <= rtol * b_norm {
            break;
        }
        z = precond(&r);
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            dir[i] = z[i] + beta * dir[i];
        }
    }
    x
}

/// Maximizes the dual from the uniform start. On success the problem state
/// holds the final (rescaled) multipliers.
pub(crate) fn maximize<P: DualProblem>(p: &mut P, tol: &Tolerances) -> Result<DualSolution> {
    let n = p.len();
    let mut lambda = vec![1.0; n];
    let mut t = p
        .eval(&lambda)
        .ok_or_else(|| Error::Degenerate("strategy problem is singular at the uniform start".into()))?;
    rescale(p, &mut lambda, &mut t);

    for iter in 0..tol.max_iterations {
        let costs = p.costs().to_vec();
        let max_cost = costs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let gap = max_cost - 1.0;
        if gap <= tol.gap {
            return Ok(DualSolution { iterations: iter, max_cost });
        }

        // minimize f = Σλ - 2t; its gradient is 1 - d
        let grad: Vec<f64> = costs.iter().map(|d| 1.0 - d).collect();
        let proj_norm = lambda
            .iter()
            .zip(&grad)
            .map(|(l, g)| (l - (l - g).max(0.0)).powi(2))
            .sum::<f64>()
            .sqrt();
        let mean = lambda.iter().sum::<f64>() / n as f64;
        let eps = proj_norm.min(1e-3 * mean);
        let free: Vec<bool> = lambda.iter().zip(&grad).map(|(l, g)| !(*l <= eps && *g > 0.0)).collect();

        let neg_grad: Vec<f64> = grad.iter().map(|g| -g).collect();
        let free_norm = neg_grad
            .iter()
            .zip(&free)
            .filter(|(_, f)| **f)
            .map(|(g, _)| g * g)
            .sum::<f64>()
            .sqrt();
        let rtol = free_norm.sqrt().min(0.1);
        let diag = p.hess_diag();
        // the Hessian is singular along directions that leave t unchanged;
        // damping in proportion to the gap keeps the step bounded there and
        // vanishes near the optimum
        let top = diag.iter().copied().fold(0.0f64, f64::max);
        let mu = top * gap.min(1e-2);
        let mut step = pcg(p, &neg_grad, &free, &diag, mu, rtol);
        for x in 0..n {
            if !free[x] {
                step[x] = -lambda[x];
            }
        }

        let f0 = lambda.iter().sum::<f64>() - 2.0 * t;
        let mut alpha = 1.0;
        let mut trial = vec![0.0; n];
        let mut accepted = None;
        while alpha > 1e-20 {
            for x in 0..n {
                trial[x] = (lambda[x] + alpha * step[x]).max(0.0);
            }
            if let Some(tt) = p.eval(&trial) {
                let f1 = trial.iter().sum::<f64>() - 2.0 * tt;
                let predicted: f64 = (0..n)
                    .map(|x| if free[x] { alpha * grad[x] * step[x] } else { grad[x] * (trial[x] - lambda[x]) })
                    .sum();
                if f1 <= f0 + ARMIJO * predicted.min(0.0) && f1 < f0 {
                    accepted = Some(tt);
                    break;
                }
            }
            alpha *= 0.5;
        }
        match accepted {
            Some(tt) => {
                lambda.copy_from_slice(&trial);
                t = tt;
                rescale(p, &mut lambda, &mut t);
            }
            None => {
                p.eval(&lambda).expect("previous iterate was feasible");
                if gap <= tol.stall_gap {
                    return Ok(DualSolution { iterations: iter, max_cost });
                }
                return Err(Error::NoConvergence { iterations: iter, objective: t, gap });
            }
        }
    }
    let max_cost = p.costs().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let gap = max_cost - 1.0;
    if gap <= tol.stall_gap {
        return Ok(DualSolution { iterations: tol.max_iterations, max_cost });
    }
    Err(Error::NoConvergence { iterations: tol.max_iterations, objective: t, gap })
}
