//! Browser bindings for three interactive operations: splitting a query
//! into residual parts, comparing solvers on a workload, and tracing the
//! privacy curve. Every function takes and returns JSON strings so the page
//! needs no generated type glue.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use residual_mm::assemble::{evaluate, plan};
use residual_mm::decompose::{decompose_query, is_negligible};
use residual_mm::privacy::{to_approx_dp, to_gaussian_dp};
use residual_mm::solver::{SolverChoice, SolverKind};
use residual_mm::{build_workload, AttrSubset, Family, LinearQuery, Schema, WorkloadSpec};

/// Largest domain the page may request, to keep the tab responsive.
pub const MAX_CELLS: usize = 4096;

#[derive(Serialize)]
struct Part {
    key: Vec<usize>,
    dims: Vec<usize>,
    coeffs: Vec<f64>,
}

#[derive(Serialize)]
struct SolverRow {
    solver: String,
    rmse: Option<f64>,
    wrmse: Option<f64>,
    strategy_rows: Option<usize>,
    millis: f64,
    error: Option<String>,
}

#[derive(Serialize)]
struct Curve {
    mu: f64,
    points: Vec<(f64, f64)>,
}

fn schema(sizes: &[usize]) -> Result<Schema, String> {
    let s = Schema::from_sizes(sizes).map_err(|e| e.to_string())?;
    if s.domain_size() > MAX_CELLS as u128 {
        return Err(format!("domain of {} cells exceeds the demo limit of {MAX_CELLS}", s.domain_size()));
    }
    Ok(s)
}

fn to_json<T: Serialize>(v: &T) -> Result<String, String> {
    serde_json::to_string(v).map_err(|e| e.to_string())
}

/// Splits a query over the full domain of `sizes` into its nonzero residual
/// parts, returned as `[{key, dims, coeffs}]`.
pub fn decompose_json(sizes: &[usize], coeffs: &[f64]) -> Result<String, String> {
    let schema = schema(sizes)?;
    let q = LinearQuery::new(&schema, AttrSubset::new(0..sizes.len()), coeffs.to_vec(), 1.0).map_err(|e| e.to_string())?;
    let parts: Vec<Part> = decompose_query(&schema, &q, 0)
        .into_values()
        .filter(|s| !is_negligible(&s.coeffs))
        .map(|s| Part { dims: schema.dims(&s.subset), key: s.subset.indices().to_vec(), coeffs: s.coeffs })
        .collect();
    to_json(&parts)
}

/// Plans one family of queries with each solver and reports predicted error.
pub fn compare_json(sizes: &[usize], family: &str, arities: &[usize], rho: f64) -> Result<String, String> {
    let schema = schema(sizes)?;
    let family: Family = family.parse().map_err(|e: residual_mm::Error| e.to_string())?;
    let workload = build_workload(&schema, &WorkloadSpec::single(family, arities)).map_err(|e| e.to_string())?;
    let rows: Vec<SolverRow> = ["optimal", "fourier", "fixed-basis"]
        .into_iter()
        .map(|name| {
            let kind: SolverKind = name.parse().expect("known solver name");
            let result = plan(&workload, &SolverChoice::new(kind), rho)
                .and_then(|(mech, t)| Ok((evaluate(&workload, &mech)?, mech.total_rows(), t.total())));
            match result {
                Ok((eval, rows, secs)) => SolverRow {
                    solver: name.into(),
                    rmse: Some(eval.rmse),
                    wrmse: Some(eval.wrmse),
                    strategy_rows: Some(rows),
                    millis: secs * 1e3,
                    error: None,
                },
                Err(e) => SolverRow {
                    solver: name.into(),
                    rmse: None,
                    wrmse: None,
                    strategy_rows: None,
                    millis: 0.0,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    to_json(&rows)
}

/// `δ(ε)` on `points` evenly spaced epsilons in `[0, eps_max]`.
pub fn privacy_curve_json(rho: f64, eps_max: f64, points: usize) -> Result<String, String> {
    if !(eps_max >= 0.0 && eps_max.is_finite()) || points < 2 {
        return Err("need a finite eps_max >= 0 and at least two points".into());
    }
    let mut out = Vec::with_capacity(points);
    for i in 0..points {
        let eps = eps_max * i as f64 / (points - 1) as f64;
        out.push((eps, to_approx_dp(rho, eps).map_err(|e| e.to_string())?));
    }
    to_json(&Curve { mu: to_gaussian_dp(rho), points: out })
}

#[wasm_bindgen]
pub fn decompose(sizes: Vec<usize>, coeffs: Vec<f64>) -> Result<String, JsValue> {
    decompose_json(&sizes, &coeffs).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn compare_solvers(sizes: Vec<usize>, family: &str, arities: Vec<usize>, rho: f64) -> Result<String, JsValue> {
    compare_json(&sizes, family, &arities, rho).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn privacy_curve(rho: f64, eps_max: f64, points: usize) -> Result<String, JsValue> {
    privacy_curve_json(rho, eps_max, points).map_err(|e| JsValue::from_str(&e))
}
