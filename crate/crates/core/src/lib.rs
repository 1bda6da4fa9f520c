//! Divide-and-conquer Gaussian matrix mechanism for workloads of linear
//! queries over data marginals.
//!
//! A workload is split into mutually orthogonal residual subworkloads, one
//! per attribute subset. Each subworkload gets its own strategy at unit
//! privacy cost, noise scales are then chosen in closed form to meet the
//! overall budget, and answers are reconstructed without bias and with
//! exact, data-independent variances.

pub mod assemble;
pub mod bundle;
pub mod data;
pub mod decompose;
pub mod error;
pub mod linalg;
pub mod oracle;
pub mod privacy;
pub mod rng;
pub mod schema;
pub mod solver;
pub mod tensor;
pub mod workload;

pub use error::{Error, Result};
pub use schema::{AttrKind, AttrSubset, Attribute, Schema};
pub use workload::{build_workload, count_queries, Family, LinearQuery, Workload, WorkloadSpec};
