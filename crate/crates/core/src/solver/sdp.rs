//! Optimal Gaussian strategy for a subworkload.
//!
//! We minimize `tr(G V⁺)` over PSD `V` with `diag(V) ≤ 1` whose row space
//! contains that of the workload, where `G = Σ w q qᵀ`. Writing
//! `G = A0ᵀ A0` with `A0` of full row rank `r`, restricting to
//! `V = A0ᵀ M A0` loses nothing, and the problem becomes
//! `min tr(M⁻¹)` over `r x r` positive definite `M` subject to
//! `a_xᵀ M a_x ≤ 1` for every column `a_x` of `A0`. We solve its dual
//!
//! `max_{λ≥0} 2 tr((A0 Λ A0ᵀ)^{1/2}) - Σ λ`
//!
//! by projected Newton. At the dual optimum, with
//! `A0 Λ A0ᵀ = Q diag(s²) Qᵀ` and `Â = Qᵀ A0`, the strategy
//! `B = diag(s)^{-1/2} Â` is optimal once scaled to unit privacy cost.

use nalgebra::{DMatrix, DVector};

use super::newton::{maximize, DualProblem, Tolerances};
use super::{MechanismPlan, PlanSolver, PreparedSubworkload};
use crate::error::{Error, Result};
use crate::linalg::{sorted_eigen, truncated_eigen, GRAM_RANK_CUTOFF};

/// Relative size below which an eigenvalue of `A0 Λ A0ᵀ` counts as
/// singular during the line search.
const SINGULAR: f64 = 1e-14;

pub(crate) struct DenseDual {
    a0: DMatrix<f64>,
    s: Vec<f64>,
    q: DMatrix<f64>,
    ahat: DMatrix<f64>,
    costs: Vec<f64>,
    coef: DMatrix<f64>,
}

impl DenseDual {
    pub(crate) fn new(a0: DMatrix<f64>) -> Self {
        let (r, n) = a0.shape();
        DenseDual {
            a0,
            s: vec![0.0; r],
            q: DMatrix::zeros(r, r),
            ahat: DMatrix::zeros(r, n),
            costs: vec![0.0; n],
            coef: DMatrix::zeros(r, r),
        }
    }
}

impl DualProblem for DenseDual {
    fn len(&self) -> usize {
        self.a0.ncols()
    }

    fn eval(&mut self, lambda: &[f64]) -> Option<f64> {
        let mut scaled = self.a0.clone();
        for (x, &l) in lambda.iter().enumerate() {
            scaled.column_mut(x).scale_mut(l);
        }
        let t = &scaled * self.a0.transpose();
        let (vals, vecs) = sorted_eigen(t);
        let r = vals.len();
        if r == 0 || !(vals[r - 1] > SINGULAR * vals[0]) {
            return None;
        }
        self.s = vals.iter().map(|v| v.sqrt()).collect();
        self.ahat = vecs.transpose() * &self.a0;
        self.q = vecs;
        for x in 0..self.ahat.ncols() {
            self.costs[x] = self.ahat.column(x).iter().zip(&self.s).map(|(a, s)| a * a / s).sum();
        }
        let s = &self.s;
        self.coef = DMatrix::from_fn(r, r, |a, b| 1.0 / (s[a] * s[b] * (s[a] + s[b])));
        Some(s.iter().sum())
    }

    fn costs(&self) -> &[f64] {
        &self.costs
    }

    fn scale(&mut self, c: f64) {
        let root = c.sqrt();
        for s in &mut self.s {
            *s *= root;
        }
        for d in &mut self.costs {
            *d /= root;
        }
        self.coef /= c * root;
    }

    fn hess_apply(&self, v: &[f64]) -> Vec<f64> {
        let mut scaled = self.ahat.clone();
        for (x, &vx) in v.iter().enumerate() {
            scaled.column_mut(x).scale_mut(vx);
        }
        let y = (&scaled * self.ahat.transpose()).component_mul(&self.coef);
        let w = y * &self.ahat;
        (0..self.ahat.ncols()).map(|x| self.ahat.column(x).dot(&w.column(x))).collect()
    }

    fn hess_diag(&self) -> Vec<f64> {
        let sq = self.ahat.component_mul(&self.ahat);
        let w = &self.coef * &sq;
        (0..sq.ncols()).map(|x| sq.column(x).dot(&w.column(x))).collect()
    }
}

/// Solves the dense problem for the factor `a0` (r x n, full row rank) and
/// returns `(B, B†, iterations)` with `B` at unit privacy cost. `back` is a
/// right inverse of `a0`.
pub(crate) fn dense_strategy(
    a0: DMatrix<f64>,
    back: &DMatrix<f64>,
    tol: &Tolerances,
) -> Result<(DMatrix<f64>, DMatrix<f64>, usize)> {
    let mut dual = DenseDual::new(a0);
    let sol = maximize(&mut dual, tol)?;
    let norm = sol.max_cost.sqrt();
    let r = dual.s.len();
    let strategy = DMatrix::from_fn(r, dual.ahat.ncols(), |a, x| dual.ahat[(a, x)] / (dual.s[a].sqrt() * norm));
    let mut right = back * &dual.q;
    for a in 0..r {
        right.column_mut(a).scale_mut(dual.s[a].sqrt() * norm);
    }
    Ok((strategy, right, sol.iterations))
}

/// Factor `diag(√g) Eᵀ` of a PSD matrix from its truncated eigenpairs, and
/// its right inverse `E diag(1/√g)`.
pub(crate) fn gram_factor(g: DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (vals, vecs) = truncated_eigen(g, GRAM_RANK_CUTOFF);
    if vals.is_empty() {
        return Err(Error::Degenerate("subworkload has a zero Gram matrix".into()));
    }
    let roots = DVector::from_iterator(vals.len(), vals.iter().map(|v| v.sqrt()));
    let mut factor = vecs.transpose();
    let mut back = vecs;
    for (a, root) in roots.iter().enumerate() {
        factor.row_mut(a).scale_mut(*root);
        back.column_mut(a).scale_mut(1.0 / root);
    }
    Ok((factor, back))
}

/// Minimum-loss strategy over all Gaussian strategies on the subworkload's
/// marginal.
pub fn solve_optimal(prep: &PreparedSubworkload<'_>, tol: &Tolerances) -> Result<MechanismPlan> {
    let (a0, back) = gram_factor(prep.effective())?;
    let (strategy, recon, iterations) = dense_strategy(a0, &back, tol)?;
    let rows = strategy.nrows();
    Ok(MechanismPlan::new(
        prep.sub.subset.clone(),
        prep.sub.dims.clone(),
        PlanSolver::Optimal,
        strategy,
        DVector::from_element(rows, 1.0),
        recon,
        iterations,
        &prep.weighted,
    ))
}
