//! Strategies restricted to a fixed basis `U` of the residual space.
//!
//! With `V = Uᵀ H U`, the loss is `tr(Ĝ H⁻¹)` for `Ĝ = U†ᵀ G U†` and the
//! privacy constraint is `diag(Uᵀ H U) ≤ 1`. A dense `H` recovers the
//! optimal strategy whenever `U` spans the workload; a diagonal `H` gives
//! the cheaper weighted-basis mechanisms.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::fourier::{fourier_rows, valid_frequencies};
use super::newton::{maximize, DualProblem, Tolerances};
use super::sdp::{dense_strategy, gram_factor};
use super::{MechanismPlan, PlanSolver, PreparedSubworkload};
use crate::error::{Error, Result};
use crate::linalg::{max_abs, right_inverse};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum BasisKind {
    /// Kronecker product of `[1 | -I]` blocks, one per attribute.
    #[default]
    Sub,
    /// Real and imaginary parts of the representative DFT coefficients.
    Fourier,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FixedBasisOptions {
    pub basis: BasisKind,
    /// Restrict `H` to be diagonal.
    pub diagonal: bool,
}

impl Default for FixedBasisOptions {
    fn default() -> Self {
        FixedBasisOptions { basis: BasisKind::Sub, diagonal: true }
    }
}

/// `⊗_k [1 | -I_{d_k-1}]`: rows `e_0 - e_{i+1}` per attribute.
pub fn sub_basis(dims: &[usize]) -> DMatrix<f64> {
    let mut out = DMatrix::from_element(1, 1, 1.0);
    for &d in dims {
        let block = DMatrix::from_fn(d - 1, d, |i, j| {
            if j == 0 {
                1.0
            } else if j == i + 1 {
                -1.0
            } else {
                0.0
            }
        });
        out = out.kronecker(&block);
    }
    out
}

/// Cosine and sine rows of every representative frequency.
pub fn fourier_basis(dims: &[usize]) -> DMatrix<f64> {
    let freqs = valid_frequencies(dims);
    let refs: Vec<_> = freqs.iter().collect();
    fourier_rows(dims, &refs).0
}

/// Dual of `min Σ a_i / h_i` subject to `Σ_i h_i U_ix² ≤ 1`:
/// `g(λ) = 2 Σ_i √(a_i K_i) - Σ λ` with `K = (U∘U) λ`.
struct DiagonalDual {
    a: Vec<f64>,
    usq: DMatrix<f64>,
    /// Once `λ` is rescaled to the optimal scale, the optimum has
    /// `K_i ≥ a_i max_x U_ix²`. Iterates far below that sit on a boundary
    /// where the primal point blows up.
    floor: Vec<f64>,
    k: Vec<f64>,
    h: Vec<f64>,
    costs: Vec<f64>,
}

impl DualProblem for DiagonalDual {
    fn len(&self) -> usize {
        self.usq.ncols()
    }

    fn eval(&mut self, lambda: &[f64]) -> Option<f64> {
        let k = &self.usq * DVector::from_column_slice(lambda);
        if k.iter().any(|&v| !(v > 0.0)) {
            return None;
        }
        let t: f64 = self.a.iter().zip(k.iter()).map(|(a, k)| (a * k).sqrt()).sum();
        let c = (t / lambda.iter().sum::<f64>()).powi(2);
        if k.iter().zip(&self.floor).any(|(&v, &f)| !(c * v > f)) {
            return None;
        }
        self.k = k.iter().copied().collect();
        self.h = self.a.iter().zip(&self.k).map(|(a, k)| (a / k).sqrt()).collect();
        let costs = self.usq.transpose() * DVector::from_column_slice(&self.h);
        self.costs = costs.iter().copied().collect();
        Some(t)
    }

    fn costs(&self) -> &[f64] {
        &self.costs
    }

    fn scale(&mut self, c: f64) {
        let root = c.sqrt();
        for k in &mut self.k {
            *k *= c;
        }
        for h in &mut self.h {
            *h /= root;
        }
        for d in &mut self.costs {
            *d /= root;
        }
    }

    fn hess_apply(&self, v: &[f64]) -> Vec<f64> {
        let uv = &self.usq * DVector::from_column_slice(v);
        let weighted = DVector::from_iterator(
            uv.len(),
            uv.iter().enumerate().map(|(i, x)| 0.5 * self.a[i].sqrt() * self.k[i].powf(-1.5) * x),
        );
        (self.usq.transpose() * weighted).iter().copied().collect()
    }

    fn hess_diag(&self) -> Vec<f64> {
        let coef: Vec<f64> = (0..self.a.len()).map(|i| 0.5 * self.a[i].sqrt() * self.k[i].powf(-1.5)).collect();
        (0..self.usq.ncols())
            .map(|x| self.usq.column(x).iter().zip(&coef).map(|(u, c)| c * u * u).sum())
            .collect()
    }
}

/// Best strategy of the form `V = Uᵀ H U`. `basis` must have full row rank
/// and its row space must contain the subworkload's.
pub fn solve_fixed_basis(
    prep: &PreparedSubworkload<'_>,
    basis: &DMatrix<f64>,
    diagonal: bool,
    tol: &Tolerances,
) -> Result<MechanismPlan> {
    let n = prep.cells();
    if basis.ncols() != n {
        return Err(Error::Degenerate(format!("basis has {} columns for a {n}-cell marginal", basis.ncols())));
    }
    let pinv = right_inverse(basis).ok_or_else(|| Error::Degenerate("basis lacks full row rank".into()))?;

    let cover = prep.coverage();
    let projector = &pinv * basis;
    let residual = max_abs(&(&cover - &projector * &cover));
    let scale = max_abs(&cover);
    if residual > 1e-8 * scale {
        return Err(Error::BasisSpan(residual / scale));
    }

    let ghat = pinv.transpose() * prep.effective() * &pinv;
    let (strategy, recon, iterations) = if diagonal {
        diagonal_strategy(basis, &ghat, tol)?
    } else {
        let (factor, back) = gram_factor(ghat)?;
        dense_strategy(&factor * basis, &(&pinv * back), tol)?
    };
    let rows = strategy.nrows();
    Ok(MechanismPlan::new(
        prep.sub.subset.clone(),
        prep.sub.dims.clone(),
        PlanSolver::FixedBasis,
        strategy,
        DVector::from_element(rows, 1.0),
        recon,
        iterations,
        &prep.weighted,
    ))
}

fn diagonal_strategy(
    basis: &DMatrix<f64>,
    ghat: &DMatrix<f64>,
    tol: &Tolerances,
) -> Result<(DMatrix<f64>, DMatrix<f64>, usize)> {
    let diag: Vec<f64> = ghat.diagonal().iter().copied().collect();
    let top = diag.iter().copied().fold(0.0f64, f64::max);
    let used: Vec<usize> = (0..diag.len()).filter(|&i| diag[i] > 1e-20 * top).collect();
    if used.is_empty() {
        return Err(Error::Degenerate("subworkload has a zero Gram matrix".into()));
    }
    let rows = basis.select_rows(used.iter());
    let a: Vec<f64> = used.iter().map(|&i| diag[i]).collect();
    let usq = rows.component_mul(&rows);
    let floor = a.iter().zip(usq.row_iter()).map(|(a, r)| 1e-12 * a * r.max()).collect();
    let mut dual = DiagonalDual {
        a,
        usq,
        floor,
        k: Vec::new(),
        h: Vec::new(),
        costs: Vec::new(),
    };
    let sol = maximize(&mut dual, tol)?;
    let h: Vec<f64> = dual.h.iter().map(|h| h / sol.max_cost).collect();
    let mut strategy = rows.clone();
    for (i, hi) in h.iter().enumerate() {
        strategy.row_mut(i).scale_mut(hi.sqrt());
    }
    let mut recon = right_inverse(&rows).ok_or_else(|| Error::Degenerate("basis lacks full row rank".into()))?;
    for (i, hi) in h.iter().enumerate() {
        recon.column_mut(i).scale_mut(1.0 / hi.sqrt());
    }
    Ok((strategy, recon, sol.iterations))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sub_basis_rows_are_centered() {
        let b = sub_basis(&[3, 2]);
        assert_eq!(b.shape(), (2, 6));
        assert_eq!(b.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, -1.0, -1.0, 1.0, 0.0, 0.0]);
        for r in b.row_iter() {
            assert!(crate::tensor::max_axis_sum(&r.iter().copied().collect::<Vec<_>>(), &[3, 2]) < 1e-12);
        }
    }

    #[test]
    fn fourier_basis_is_orthogonal() {
        let b = fourier_basis(&[4, 3]);
        assert_eq!(b.nrows(), 6);
        let g = &b * b.transpose();
        for i in 0..6 {
            for j in 0..6 {
                if i != j {
                    assert!(g[(i, j)].abs() < 1e-12);
                }
            }
        }
    }
}
