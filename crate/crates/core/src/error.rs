use thiserror::Error;

use crate::schema::AttrSubset;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("invalid workload spec: {0}")]
    WorkloadSpec(String),

    #[error("invalid query: {0}")]
    Query(String),

    #[error("target {target} is not a subset of {subset}")]
    NotSubset { target: AttrSubset, subset: AttrSubset },

    #[error("marginal on {subset} has {cells} cells, above the solver cap of {cap}")]
    SolverCap { subset: AttrSubset, cells: usize, cap: usize },

    #[error("solver did not converge after {iterations} iterations (objective {objective}, gap {gap:e})")]
    NoConvergence { iterations: usize, objective: f64, gap: f64 },

    #[error("basis does not span the workload rows (residual {0:e})")]
    BasisSpan(f64),

    #[error("degenerate plan: {0}")]
    Degenerate(String),

    #[error("no plan for residual key {0}")]
    MissingPlan(AttrSubset),

    #[error("missing measurement for {0}")]
    MissingMeasurement(AttrSubset),

    #[error("dataset error: {0}")]
    Data(String),

    #[error("dense oracle limited to {cap} cells, domain has {cells}")]
    OracleCap { cells: u128, cap: usize },

    #[error("privacy parameter error: {0}")]
    Privacy(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
