//! Dense full-domain reference computations for testing.
//!
//! Everything here materializes matrices over the whole data domain, so it
//! is limited to [`ORACLE_CAP`] cells.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};

use crate::assemble::{AssembledMechanism, NoisyMeasurement};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::pinv;
use crate::schema::{AttrSubset, Schema};
use crate::workload::LinearQuery;

pub const ORACLE_CAP: usize = 4096;

fn domain(schema: &Schema) -> Result<usize> {
    let cells = schema.domain_size();
    if cells > ORACLE_CAP as u128 {
        return Err(Error::OracleCap { cells, cap: ORACLE_CAP });
    }
    Ok(cells as usize)
}

/// The matrix mapping the full data vector to the marginal on `subset`:
/// a Kronecker product of identities (kept attributes) and all-ones rows
/// (summed attributes).
pub fn lifting(schema: &Schema, subset: &AttrSubset) -> Result<DMatrix<f64>> {
    domain(schema)?;
    schema.check_subset(subset)?;
    let mut out = DMatrix::from_element(1, 1, 1.0);
    for (i, attr) in schema.attributes().iter().enumerate() {
        let factor = if subset.contains(i) {
            DMatrix::identity(attr.size, attr.size)
        } else {
            DMatrix::from_element(1, attr.size, 1.0)
        };
        out = out.kronecker(&factor);
    }
    Ok(out)
}

/// `coeffs · Q_A` as a full-domain row.
pub fn lift(schema: &Schema, subset: &AttrSubset, coeffs: &[f64]) -> Result<DVector<f64>> {
    let q = lifting(schema, subset)?;
    if coeffs.len() != q.nrows() {
        return Err(Error::Query(format!("{} coefficients for a {}-cell marginal", coeffs.len(), q.nrows())));
    }
    Ok(q.tr_mul(&DVector::from_column_slice(coeffs)))
}

pub fn lift_query(schema: &Schema, q: &LinearQuery) -> Result<DVector<f64>> {
    lift(schema, &q.subset, &q.coeffs)
}

/// Counts of every cell of the full domain.
pub fn data_vector(data: &Dataset) -> Result<DVector<f64>> {
    domain(data.schema())?;
    let all = AttrSubset::new(0..data.schema().len());
    Ok(DVector::from_vec(data.marginal(&all)?.values))
}

/// Max diagonal of `Σ_j B_jᵀ C_j⁻¹ B_j` over lifted strategies `B_j` with
/// covariances `C_j`, using explicit inverses.
pub fn dense_cost(mechanisms: &[(DMatrix<f64>, DMatrix<f64>)]) -> Result<f64> {
    let Some(first) = mechanisms.first() else {
        return Ok(0.0);
    };
    let n = first.0.ncols();
    let mut sum = DMatrix::zeros(n, n);
    for (b, cov) in mechanisms {
        let inv = cov.clone().try_inverse().ok_or_else(|| Error::Privacy("singular covariance".into()))?;
        sum += b.transpose() * inv * b;
    }
    Ok(sum.diagonal().iter().copied().fold(0.0, f64::max))
}

/// Every plan of an assembled mechanism lifted to the full domain and
/// whitened, stacked in key order.
pub struct DenseMechanism {
    keys: Vec<AttrSubset>,
    /// Rows of the stacked matrix owned by each key.
    offsets: Vec<usize>,
    /// Per-row `1/√(σ² Σ_ii)`.
    whiten: Vec<f64>,
    stacked: DMatrix<f64>,
    pinv: OnceLock<DMatrix<f64>>,
    lifted: Vec<(DMatrix<f64>, DMatrix<f64>)>,
    schema: Schema,
}

impl DenseMechanism {
    pub fn new(mech: &AssembledMechanism) -> Result<Self> {
        let schema = mech.schema().clone();
        let n = domain(&schema)?;
        let rows = mech.total_rows();
        let mut stacked = DMatrix::zeros(rows, n);
        let mut keys = Vec::new();
        let mut offsets = vec![0];
        let mut whiten = Vec::with_capacity(rows);
        let mut lifted = Vec::new();
        for (key, plan) in mech.plans() {
            let s2 = mech.sigma2()[key];
            let b = &plan.strategy * lifting(&schema, key)?;
            let start = *offsets.last().unwrap();
            for r in 0..plan.rows() {
                let w = 1.0 / (s2 * plan.noise[r]).sqrt();
                stacked.row_mut(start + r).copy_from(&(b.row(r) * w));
                whiten.push(w);
            }
            let cov = DMatrix::from_diagonal(&(plan.noise.clone() * s2));
            lifted.push((b, cov));
            keys.push(key.clone());
            offsets.push(start + plan.rows());
        }
        Ok(DenseMechanism { keys, offsets, whiten, stacked, pinv: OnceLock::new(), lifted, schema })
    }

    /// Lifted strategies with their covariances `σ² Σ`.
    pub fn lifted(&self) -> &[(DMatrix<f64>, DMatrix<f64>)] {
        &self.lifted
    }

    pub fn cost(&self) -> Result<f64> {
        dense_cost(&self.lifted)
    }

    /// Whitened stacked strategy `B̃`.
    pub fn stacked(&self) -> &DMatrix<f64> {
        &self.stacked
    }

    fn coefficients(&self, q: &LinearQuery) -> Result<DVector<f64>> {
        let lifted = lift_query(&self.schema, q)?;
        Ok(self.pinv.get_or_init(|| pinv(&self.stacked)).tr_mul(&lifted))
    }

    /// `‖q B̃⁺‖²`, the variance of the least-squares estimate of `q`.
    pub fn variance(&self, q: &LinearQuery) -> Result<f64> {
        Ok(self.coefficients(q)?.norm_squared())
    }

    /// Whether the lifted query lies in the row space of the stacked
    /// strategy, relative to its norm.
    pub fn row_space_residual(&self, q: &LinearQuery) -> Result<f64> {
        let lifted = lift_query(&self.schema, q)?;
        let back = self.stacked.tr_mul(&self.coefficients(q)?);
        Ok((back - &lifted).amax() / lifted.amax().max(f64::MIN_POSITIVE))
    }

    /// `q B̃⁺ z̃` with the measurements whitened like the strategy rows.
    pub fn answer(&self, q: &LinearQuery, measurements: &BTreeMap<AttrSubset, NoisyMeasurement>) -> Result<f64> {
        let mut z = DVector::zeros(self.stacked.nrows());
        for (i, key) in self.keys.iter().enumerate() {
            let m = measurements.get(key).ok_or(Error::MissingMeasurement(key.clone()))?;
            let range = self.offsets[i]..self.offsets[i + 1];
            if m.z.len() != range.len() {
                return Err(Error::Data(format!("measurement for {key} has the wrong length")));
            }
            for (r, v) in range.zip(&m.z) {
                z[r] = v * self.whiten[r];
            }
        }
        Ok(self.coefficients(q)?.dot(&z))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lifting_shapes_and_values() {
        let schema = Schema::from_sizes(&[2, 3, 2]).unwrap();
        let all = AttrSubset::new(0..3);
        assert_eq!(lifting(&schema, &all).unwrap(), DMatrix::identity(12, 12));
        let total = lift(&schema, &AttrSubset::empty(), &[1.0]).unwrap();
        assert_eq!(total, DVector::from_element(12, 1.0));
        let q = [0.0, 1.0, 1.0, 0.0, 0.0, 1.0];
        let lifted = lift(&schema, &AttrSubset::new([0, 1]), &q).unwrap();
        let expected: Vec<f64> = q.iter().flat_map(|&c| [c, c]).collect();
        assert_eq!(lifted.as_slice(), expected.as_slice());
    }

    #[test]
    fn cap_is_enforced() {
        let schema = Schema::uniform(5, 6).unwrap();
        assert!(matches!(lifting(&schema, &AttrSubset::empty()), Err(Error::OracleCap { .. })));
    }

    #[test]
    fn dense_cost_of_identity() {
        let b = DMatrix::identity(2, 2);
        assert_eq!(dense_cost(&[(b.clone(), b.clone())]).unwrap(), 1.0);
        assert_eq!(dense_cost(&[(b.clone(), b.clone() * 4.0)]).unwrap(), 0.25);
        assert_eq!(dense_cost(&[]).unwrap(), 0.0);
    }
}
