//! Privacy cost of Gaussian linear mechanisms and conversions to Gaussian
//! and approximate differential privacy.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest diagonal entry of `Bᵀ Σ⁻¹ B`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct PrivacyCost(f64);

impl PrivacyCost {
    pub fn new(rho: f64) -> Result<Self> {
        if rho >= 0.0 && rho.is_finite() {
            Ok(PrivacyCost(rho))
        } else {
            Err(Error::Privacy(format!("privacy cost {rho} must be finite and nonnegative")))
        }
    }

    pub fn rho(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for PrivacyCost {
    type Error = Error;

    fn try_from(v: f64) -> Result<Self> {
        PrivacyCost::new(v)
    }
}

impl From<PrivacyCost> for f64 {
    fn from(c: PrivacyCost) -> Self {
        c.0
    }
}

/// `Bᵀ Σ⁻¹ B` for a strategy and a positive definite noise covariance.
pub fn cost_matrix(strategy: &DMatrix<f64>, covariance: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if covariance.nrows() != strategy.nrows() || !covariance.is_square() {
        return Err(Error::Privacy(format!(
            "covariance is {}x{} for a strategy with {} rows",
            covariance.nrows(),
            covariance.ncols(),
            strategy.nrows()
        )));
    }
    let chol = covariance
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Privacy("noise covariance is not positive definite".into()))?;
    let whitened = chol.l().solve_lower_triangular(strategy).expect("cholesky factor is invertible");
    Ok(whitened.transpose() * whitened)
}

fn max_diagonal(m: &DMatrix<f64>) -> f64 {
    m.diagonal().iter().copied().fold(0.0, f64::max)
}

pub fn mechanism_cost(strategy: &DMatrix<f64>, covariance: &DMatrix<f64>) -> Result<PrivacyCost> {
    PrivacyCost::new(max_diagonal(&cost_matrix(strategy, covariance)?))
}

/// Cost of running several mechanisms over the same data vector: the
/// largest diagonal entry of the summed cost matrices.
pub fn total_cost(mechanisms: &[(DMatrix<f64>, DMatrix<f64>)]) -> Result<PrivacyCost> {
    let Some(first) = mechanisms.first() else {
        return Ok(PrivacyCost(0.0));
    };
    let n = first.0.ncols();
    let mut sum = DMatrix::zeros(n, n);
    for (b, cov) in mechanisms {
        if b.ncols() != n {
            return Err(Error::Privacy(format!("strategies act on {} and {} cells", n, b.ncols())));
        }
        sum += cost_matrix(b, cov)?;
    }
    PrivacyCost::new(max_diagonal(&sum))
}

/// `μ = √ρ`.
pub fn to_gaussian_dp(rho: f64) -> f64 {
    rho.sqrt()
}

/// Standard normal CDF via the complementary error function.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// `δ(ε) = Φ(√ρ/2 - ε/√ρ) - e^ε Φ(-√ρ/2 - ε/√ρ)`; zero when `ρ = 0`.
pub fn to_approx_dp(rho: f64, epsilon: f64) -> Result<f64> {
    if !(rho >= 0.0 && rho.is_finite()) {
        return Err(Error::Privacy(format!("rho {rho} must be finite and nonnegative")));
    }
    if !(epsilon >= 0.0) {
        return Err(Error::Privacy(format!("epsilon {epsilon} must be nonnegative")));
    }
    if rho == 0.0 {
        return Ok(0.0);
    }
    let mu = rho.sqrt();
    let first = normal_cdf(mu / 2.0 - epsilon / mu);
    let tail = normal_cdf(-mu / 2.0 - epsilon / mu);
    // e^ε overflows long before the product does
    let second = if tail > 0.0 { (epsilon + tail.ln()).exp() } else { 0.0 };
    Ok((first - second).clamp(0.0, 1.0))
}
