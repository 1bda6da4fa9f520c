//! Weighted Fourier-coefficient strategy.
//!
//! A residual subquery is a combination of the real and imaginary parts of
//! the marginal's DFT coefficients with every frequency index nonzero. The
//! mechanism measures each needed coefficient with independent noise whose
//! scale is chosen in closed form to minimize the weighted loss.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::{MechanismPlan, PlanSolver, PreparedSubworkload};
use crate::error::{Error, Result};
use crate::tensor::{flat_index, unflatten};

/// Frequency index that represents itself and its conjugate partner.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Frequency {
    pub index: Vec<usize>,
    /// True when the index equals its own conjugate `d - j`, so the
    /// coefficient is real.
    pub self_conjugate: bool,
}

/// Representative frequencies: every `j_k ∈ [1, d_k - 1]` and `j ≤ d - j`
/// in lexicographic order, row-major.
pub fn valid_frequencies(dims: &[usize]) -> Vec<Frequency> {
    let inner: Vec<usize> = dims.iter().map(|d| d - 1).collect();
    let total: usize = inner.iter().product();
    let mut out = Vec::new();
    let mut idx = vec![0; dims.len()];
    for f in 0..total {
        unflatten(f, &inner, &mut idx);
        let j: Vec<usize> = idx.iter().map(|i| i + 1).collect();
        let conj: Vec<usize> = j.iter().zip(dims).map(|(j, d)| d - j).collect();
        if j <= conj {
            out.push(Frequency { self_conjugate: j == conj, index: j });
        }
    }
    out
}

struct InverseDft {
    dims: Vec<usize>,
    plans: Vec<Arc<dyn Fft<f64>>>,
}

impl InverseDft {
    fn new(dims: &[usize]) -> Self {
        let mut planner = FftPlanner::new();
        InverseDft { dims: dims.to_vec(), plans: dims.iter().map(|&d| planner.plan_fft_inverse(d)).collect() }
    }

    fn apply(&self, coeffs: &[f64]) -> Vec<Complex64> {
        let n = coeffs.len();
        let mut data: Vec<Complex64> = coeffs.iter().map(|&c| Complex64::new(c, 0.0)).collect();
        let mut buf = Vec::new();
        for (axis, plan) in self.plans.iter().enumerate() {
            let len = self.dims[axis];
            let inner: usize = self.dims[axis + 1..].iter().product();
            let outer = n / (len * inner);
            buf.resize(len, Complex64::new(0.0, 0.0));
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * len * inner + i;
                    for k in 0..len {
                        buf[k] = data[base + k * inner];
                    }
                    plan.process(&mut buf);
                    for k in 0..len {
                        data[base + k * inner] = buf[k];
                    }
                }
            }
        }
        let scale = 1.0 / n as f64;
        for v in &mut data {
            *v *= scale;
        }
        data
    }
}

/// Inverse multidimensional DFT with `1/N` normalization:
/// `F̃[j] = (1/N) Σ_x q[x] exp(+2πi Σ_k j_k x_k / d_k)`.
pub fn inverse_dft(coeffs: &[f64], dims: &[usize]) -> Vec<Complex64> {
    InverseDft::new(dims).apply(coeffs)
}

fn phase(j: &[usize], x: &[usize], dims: &[usize]) -> f64 {
    let turns: f64 = j.iter().zip(x).zip(dims).map(|((&j, &x), &d)| ((j * x) % d) as f64 / d as f64).sum();
    2.0 * PI * turns
}

/// Strategy rows `cos(2π j·x/d)` and `-sin(2π j·x/d)` for each kept
/// frequency, the sine row omitted for self-conjugate ones. Returns the
/// rows and the frequency each row belongs to.
pub(crate) fn fourier_rows(dims: &[usize], freqs: &[&Frequency]) -> (DMatrix<f64>, Vec<usize>) {
    let n: usize = dims.iter().product();
    let count: usize = freqs.iter().map(|f| if f.self_conjugate { 1 } else { 2 }).sum();
    let mut rows = DMatrix::zeros(count, n);
    let mut owner = Vec::with_capacity(count);
    let mut x = vec![0; dims.len()];
    let mut r = 0;
    for (fi, f) in freqs.iter().enumerate() {
        for c in 0..n {
            unflatten(c, dims, &mut x);
            let ph = phase(&f.index, &x, dims);
            rows[(r, c)] = ph.cos();
            if !f.self_conjugate {
                rows[(r + 1, c)] = -ph.sin();
            }
        }
        owner.push(fi);
        r += 1;
        if !f.self_conjugate {
            owner.push(fi);
            r += 1;
        }
    }
    (rows, owner)
}

/// Coefficients below this fraction of the largest are treated as zero.
const NEGLIGIBLE: f64 = 1e-24;

pub fn solve_fourier(prep: &PreparedSubworkload<'_>) -> Result<MechanismPlan> {
    let sub = prep.sub;
    if sub.subset.is_empty() {
        return Err(Error::Degenerate("the total-count key has no Fourier coefficients".into()));
    }
    let dims = &sub.dims;
    let freqs = valid_frequencies(dims);
    let idft = InverseDft::new(dims);

    let mut weighted = vec![0.0; freqs.len()];
    let mut zero_weight = vec![0.0; freqs.len()];
    for (row, &w) in sub.rows().zip(&sub.weights) {
        let ft = idft.apply(row);
        for (k, f) in freqs.iter().enumerate() {
            let mag = ft[flat_index(&f.index, dims)].norm_sqr();
            let coef = if f.self_conjugate { mag } else { 4.0 * mag };
            if w > 0.0 {
                weighted[k] += w * coef;
            } else {
                zero_weight[k] += coef;
            }
        }
    }
    let top = weighted.iter().copied().fold(0.0f64, f64::max);
    let cover_top = zero_weight.iter().copied().fold(0.0f64, f64::max);
    let mut kept = Vec::new();
    let mut c = Vec::new();
    for k in 0..freqs.len() {
        let mut ck = weighted[k];
        if ck <= NEGLIGIBLE * top {
            ck = 0.0;
        }
        if ck == 0.0 && zero_weight[k] > NEGLIGIBLE * cover_top {
            // reachable only through zero-weight rows: keep a sliver of budget
            ck = if top > 0.0 { 1e-8 * top } else { zero_weight[k] };
        }
        if ck > 0.0 {
            kept.push(&freqs[k]);
            c.push(ck);
        }
    }
    if kept.is_empty() {
        return Err(Error::Degenerate(format!("subworkload {} has no Fourier support", sub.subset)));
    }

    let gamma: f64 = c.iter().map(|v| v.sqrt()).sum();
    let theta: Vec<f64> = c.iter().map(|v| gamma / v.sqrt()).collect();
    let (strategy, owner) = fourier_rows(dims, &kept);
    let noise = DVector::from_iterator(owner.len(), owner.iter().map(|&k| theta[k]));
    let mut recon = strategy.transpose();
    for r in 0..owner.len() {
        let norm2 = strategy.row(r).norm_squared();
        recon.column_mut(r).scale_mut(1.0 / norm2);
    }
    Ok(MechanismPlan::new(
        sub.subset.clone(),
        dims.clone(),
        PlanSolver::Fourier,
        strategy,
        noise,
        recon,
        0,
        &prep.weighted,
    ))
}
