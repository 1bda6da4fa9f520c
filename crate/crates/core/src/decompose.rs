//! Residual decomposition of queries and grouping into subworkloads.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::{AttrSubset, Schema};
use crate::tensor::{center_axis, sum_axis};
use crate::workload::{LinearQuery, Workload};

/// Subqueries whose coefficients are all within this of zero are dropped.
pub const PRUNE_TOLERANCE: f64 = 1e-12;

/// Projection of a workload query onto one residual space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subquery {
    pub origin: usize,
    pub subset: AttrSubset,
    pub coeffs: Vec<f64>,
    pub weight: f64,
}

/// Projects coefficients laid out on `dims` onto the residual space of the
/// axes listed in `keep` (sorted positions into `dims`): dropped axes are
/// averaged out, kept axes are centered.
pub fn project_coeffs(coeffs: &[f64], dims: &[usize], keep: &[usize]) -> Vec<f64> {
    let mut data = coeffs.to_vec();
    let mut cur = dims.to_vec();
    let mut scale = 1.0;
    for axis in (0..dims.len()).rev() {
        if keep.binary_search(&axis).is_err() {
            scale /= dims[axis] as f64;
            let (summed, next) = sum_axis(&data, &cur, axis);
            data = summed;
            cur = next;
        }
    }
    if scale != 1.0 {
        for v in &mut data {
            *v *= scale;
        }
    }
    for axis in 0..cur.len() {
        center_axis(&mut data, &cur, axis);
    }
    data
}

/// The subquery of `q` on the residual space of `target`.
pub fn project_query(schema: &Schema, q: &LinearQuery, target: &AttrSubset) -> Result<Vec<f64>> {
    let keep = target.positions_in(&q.subset).ok_or_else(|| Error::NotSubset {
        target: target.clone(),
        subset: q.subset.clone(),
    })?;
    Ok(project_coeffs(&q.coeffs, &schema.dims(&q.subset), &keep))
}

/// All `2^|A|` subqueries of `q`, keyed by residual subset; the weight is
/// inherited unchanged.
pub fn decompose_query(schema: &Schema, q: &LinearQuery, origin: usize) -> BTreeMap<AttrSubset, Subquery> {
    let dims = schema.dims(&q.subset);
    q.subset
        .subsets()
        .into_iter()
        .map(|target| {
            let keep = target.positions_in(&q.subset).expect("enumerated subsets are contained");
            let coeffs = project_coeffs(&q.coeffs, &dims, &keep);
            let sub = Subquery { origin, subset: target.clone(), coeffs, weight: q.weight };
            (target, sub)
        })
        .collect()
}

/// Stacked subqueries sharing one residual key. Rows are stored row-major in
/// `coeffs`, each of length `cells`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subworkload {
    pub subset: AttrSubset,
    pub dims: Vec<usize>,
    pub coeffs: Vec<f64>,
    pub weights: Vec<f64>,
    pub origins: Vec<usize>,
}

impl Subworkload {
    pub fn new(subset: AttrSubset, dims: Vec<usize>) -> Self {
        Subworkload { subset, dims, coeffs: Vec::new(), weights: Vec::new(), origins: Vec::new() }
    }

    pub fn cells(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.cells();
        &self.coeffs[i * n..(i + 1) * n]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.coeffs.chunks_exact(self.cells().max(1))
    }

    pub fn push(&mut self, coeffs: &[f64], weight: f64, origin: usize) {
        debug_assert_eq!(coeffs.len(), self.cells());
        self.coeffs.extend_from_slice(coeffs);
        self.weights.push(weight);
        self.origins.push(origin);
    }
}

pub fn is_negligible(coeffs: &[f64]) -> bool {
    coeffs.iter().all(|c| c.abs() <= PRUNE_TOLERANCE)
}

/// Decomposes every query and groups the nonzero subqueries by residual key.
pub fn build_subworkloads(w: &Workload) -> BTreeMap<AttrSubset, Subworkload> {
    let schema = w.schema();
    let mut out: BTreeMap<AttrSubset, Subworkload> = BTreeMap::new();
    for (origin, q) in w.queries().iter().enumerate() {
        let dims = schema.dims(&q.subset);
        for target in q.subset.subsets() {
            let keep = target.positions_in(&q.subset).expect("enumerated subsets are contained");
            let coeffs = project_coeffs(&q.coeffs, &dims, &keep);
            if is_negligible(&coeffs) {
                continue;
            }
            out.entry(target.clone())
                .or_insert_with(|| Subworkload::new(target.clone(), schema.dims(&target)))
                .push(&coeffs, q.weight, origin);
        }
    }
    out
}
