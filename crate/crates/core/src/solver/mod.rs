//! Per-subworkload strategy selection.
//!
//! Every solver returns a [`MechanismPlan`] at privacy cost exactly 1: a
//! strategy `B`, a diagonal noise covariance `Σ`, a right inverse of `B`
//! used for reconstruction, and the weighted loss of the subworkload.

mod fixed;
mod fourier;
mod newton;
mod sdp;

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::decompose::Subworkload;
use crate::error::{Error, Result};
use crate::linalg::{from_row_major, quad_form, to_row_major, weighted_gram};
use crate::schema::AttrSubset;

pub use fixed::{fourier_basis, solve_fixed_basis, sub_basis, BasisKind, FixedBasisOptions};
pub use fourier::{inverse_dft, solve_fourier, valid_frequencies, Frequency};
pub use newton::Tolerances;
pub use sdp::solve_optimal;

/// Default cap on marginal size for the optimal and fixed-basis solvers.
pub const DEFAULT_CELL_CAP: usize = 4000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlanSolver {
    ClosedForm,
    Optimal,
    Fourier,
    FixedBasis,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SolverKind {
    #[default]
    Optimal,
    Fourier,
    FixedBasis(FixedBasisOptions),
}

impl FromStr for SolverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "optimal" => Ok(SolverKind::Optimal),
            "fourier" => Ok(SolverKind::Fourier),
            "fixed-basis" => Ok(SolverKind::FixedBasis(FixedBasisOptions::default())),
            other => Err(Error::WorkloadSpec(format!("unknown solver {other:?}"))),
        }
    }
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SolverKind::Optimal => f.write_str("optimal"),
            SolverKind::Fourier => f.write_str("fourier"),
            SolverKind::FixedBasis(_) => f.write_str("fixed-basis"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverChoice {
    pub kind: SolverKind,
    pub tolerances: Tolerances,
    /// Largest marginal the optimal and fixed-basis solvers accept.
    pub cap: usize,
}

impl Default for SolverChoice {
    fn default() -> Self {
        SolverChoice::new(SolverKind::Optimal)
    }
}

impl SolverChoice {
    pub fn new(kind: SolverKind) -> Self {
        SolverChoice { kind, tolerances: Tolerances::default(), cap: DEFAULT_CELL_CAP }
    }

    pub fn optimal() -> Self {
        Self::new(SolverKind::Optimal)
    }

    pub fn fourier() -> Self {
        Self::new(SolverKind::Fourier)
    }

    pub fn fixed_basis(options: FixedBasisOptions) -> Self {
        Self::new(SolverKind::FixedBasis(options))
    }
}

/// A subworkload together with its weighted Gram matrix `Σ w q qᵀ` and the
/// Gram matrix of its zero-weight rows, which still need to be answerable.
#[derive(Debug, Clone)]
pub struct PreparedSubworkload<'a> {
    pub sub: &'a Subworkload,
    pub weighted: DMatrix<f64>,
    pub unweighted_zero: Option<DMatrix<f64>>,
}

impl<'a> PreparedSubworkload<'a> {
    pub fn new(sub: &'a Subworkload) -> Self {
        let n = sub.cells();
        let weighted = weighted_gram(n, sub.rows().zip(sub.weights.iter().copied()));
        let unweighted_zero = sub.weights.contains(&0.0).then(|| {
            weighted_gram(n, sub.rows().zip(sub.weights.iter().map(|&w| if w == 0.0 { 1.0 } else { 0.0 })))
        });
        PreparedSubworkload { sub, weighted, unweighted_zero }
    }

    pub fn cells(&self) -> usize {
        self.sub.cells()
    }

    /// The weighted Gram matrix plus a small multiple of the zero-weight
    /// Gram, so that the strategy also covers zero-weight rows.
    pub fn effective(&self) -> DMatrix<f64> {
        match &self.unweighted_zero {
            None => self.weighted.clone(),
            Some(z) => {
                let tw = self.weighted.trace();
                let eps = if tw > 0.0 { 1e-8 * tw / z.trace() } else { 1.0 };
                &self.weighted + z * eps
            }
        }
    }

    /// Matrix whose row space equals that of the subworkload.
    pub fn coverage(&self) -> DMatrix<f64> {
        match &self.unweighted_zero {
            None => self.weighted.clone(),
            Some(z) => &self.weighted + z,
        }
    }

    /// Exact identity of the solve inputs, for sharing plans between
    /// subworkloads with the same Gram matrices.
    pub fn signature(&self) -> Vec<u64> {
        let mut sig: Vec<u64> = self.sub.dims.iter().map(|&d| d as u64).collect();
        sig.push(u64::MAX);
        sig.extend(self.weighted.iter().map(|v| v.to_bits()));
        if let Some(z) = &self.unweighted_zero {
            sig.push(u64::MAX);
            sig.extend(z.iter().map(|v| v.to_bits()));
        }
        sig
    }
}

/// Solved strategy for one subworkload at unit privacy cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "PlanRecord", try_from = "PlanRecord")]
pub struct MechanismPlan {
    pub subset: AttrSubset,
    pub dims: Vec<usize>,
    pub solver: PlanSolver,
    /// `B`, one strategy query per row over the marginal's cells.
    pub strategy: DMatrix<f64>,
    /// Diagonal of the noise covariance `Σ`.
    pub noise: DVector<f64>,
    /// Right inverse of `B` (cells x strategy rows); `q · recon · z`
    /// reconstructs `q`'s answer from measurements `z`.
    pub recon: DMatrix<f64>,
    /// Weighted sum of subquery variances at unit privacy cost.
    pub loss: f64,
    pub iterations: usize,
    variance_form: DMatrix<f64>,
}

impl MechanismPlan {
    /// Builds a plan and computes its loss against the weighted Gram matrix.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        subset: AttrSubset,
        dims: Vec<usize>,
        solver: PlanSolver,
        strategy: DMatrix<f64>,
        noise: DVector<f64>,
        recon: DMatrix<f64>,
        iterations: usize,
        weighted_gram: &DMatrix<f64>,
    ) -> Self {
        let mut plan = Self::with_loss(subset, dims, solver, strategy, noise, recon, iterations, 0.0);
        plan.loss = plan.variance_form.component_mul(weighted_gram).sum();
        plan
    }

    #[allow(clippy::too_many_arguments)]
    fn with_loss(
        subset: AttrSubset,
        dims: Vec<usize>,
        solver: PlanSolver,
        strategy: DMatrix<f64>,
        noise: DVector<f64>,
        recon: DMatrix<f64>,
        iterations: usize,
        loss: f64,
    ) -> Self {
        let scaled = DMatrix::from_fn(recon.nrows(), recon.ncols(), |i, j| recon[(i, j)] * noise[j]);
        let variance_form = scaled * recon.transpose();
        MechanismPlan { subset, dims, solver, strategy, noise, recon, loss, iterations, variance_form }
    }

    /// Closed-form plan for the one-cell total-count key.
    pub fn total_count(weighted_gram: &DMatrix<f64>) -> Self {
        let one = DMatrix::from_element(1, 1, 1.0);
        Self::new(
            AttrSubset::empty(),
            Vec::new(),
            PlanSolver::ClosedForm,
            one.clone(),
            DVector::from_element(1, 1.0),
            one,
            0,
            weighted_gram,
        )
    }

    pub fn cells(&self) -> usize {
        self.strategy.ncols()
    }

    pub fn rows(&self) -> usize {
        self.strategy.nrows()
    }

    /// Variance of the reconstructed answer to `q` at unit privacy cost.
    pub fn varfun(&self, q: &[f64]) -> f64 {
        quad_form(&self.variance_form, q)
    }

    /// `B† Σ B†ᵀ`: `varfun(q) = q · P · q`.
    pub fn variance_form(&self) -> &DMatrix<f64> {
        &self.variance_form
    }

    /// Coefficients `q B†` applied to the measurements.
    pub fn recon_row(&self, q: &[f64]) -> Vec<f64> {
        (0..self.recon.ncols())
            .map(|j| self.recon.column(j).iter().zip(q).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn reconstruct(&self, q: &[f64], z: &[f64]) -> f64 {
        self.recon_row(q).iter().zip(z).map(|(a, b)| a * b).sum()
    }

    /// `max_x (Bᵀ Σ⁻¹ B)[x,x]`.
    pub fn privacy_cost(&self) -> f64 {
        (0..self.strategy.ncols())
            .map(|x| {
                self.strategy
                    .column(x)
                    .iter()
                    .zip(self.noise.iter())
                    .map(|(b, s)| b * b / s)
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }

    /// The same plan under another residual key of identical shape.
    pub fn relabeled(&self, subset: AttrSubset) -> Self {
        MechanismPlan { subset, ..self.clone() }
    }
}

/// Serialized form of a plan: matrices dense and row-major.
#[derive(Serialize, Deserialize)]
struct PlanRecord {
    subset: AttrSubset,
    dims: Vec<usize>,
    solver: PlanSolver,
    rows: usize,
    strategy: Vec<f64>,
    noise_diagonal: Vec<f64>,
    recon: Vec<f64>,
    loss: f64,
    iterations: usize,
}

impl From<MechanismPlan> for PlanRecord {
    fn from(p: MechanismPlan) -> Self {
        PlanRecord {
            rows: p.strategy.nrows(),
            strategy: to_row_major(&p.strategy),
            noise_diagonal: p.noise.iter().copied().collect(),
            recon: to_row_major(&p.recon),
            subset: p.subset,
            dims: p.dims,
            solver: p.solver,
            loss: p.loss,
            iterations: p.iterations,
        }
    }
}

impl TryFrom<PlanRecord> for MechanismPlan {
    type Error = Error;

    fn try_from(r: PlanRecord) -> Result<Self> {
        let cells: usize = r.dims.iter().product();
        if r.dims.len() != r.subset.len()
            || r.strategy.len() != r.rows * cells
            || r.recon.len() != r.rows * cells
            || r.noise_diagonal.len() != r.rows
        {
            return Err(Error::Degenerate(format!("plan for {} has inconsistent shapes", r.subset)));
        }
        if r.noise_diagonal.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Degenerate(format!("plan for {} has a nonpositive noise variance", r.subset)));
        }
        Ok(MechanismPlan::with_loss(
            r.subset,
            r.dims,
            r.solver,
            from_row_major(r.rows, cells, &r.strategy),
            DVector::from_vec(r.noise_diagonal),
            from_row_major(cells, r.rows, &r.recon),
            r.iterations,
            r.loss,
        ))
    }
}

/// Solves one subworkload with the chosen solver.
pub fn solve(sub: &Subworkload, choice: &SolverChoice) -> Result<MechanismPlan> {
    solve_prepared(&PreparedSubworkload::new(sub), choice)
}

pub fn solve_prepared(prep: &PreparedSubworkload<'_>, choice: &SolverChoice) -> Result<MechanismPlan> {
    if prep.sub.is_empty() {
        return Err(Error::Degenerate(format!("subworkload {} is empty", prep.sub.subset)));
    }
    if prep.sub.subset.is_empty() {
        return Ok(MechanismPlan::total_count(&prep.weighted));
    }
    let capped = |cells: usize| -> Result<()> {
        if cells > choice.cap {
            return Err(Error::SolverCap { subset: prep.sub.subset.clone(), cells, cap: choice.cap });
        }
        Ok(())
    };
    match choice.kind {
        SolverKind::Optimal => {
            capped(prep.cells())?;
            solve_optimal(prep, &choice.tolerances)
        }
        SolverKind::Fourier => solve_fourier(prep),
        SolverKind::FixedBasis(opts) => {
            capped(prep.cells())?;
            let basis = match opts.basis {
                BasisKind::Sub => sub_basis(&prep.sub.dims),
                BasisKind::Fourier => fourier_basis(&prep.sub.dims),
            };
            solve_fixed_basis(prep, &basis, opts.diagonal, &choice.tolerances)
        }
    }
}
