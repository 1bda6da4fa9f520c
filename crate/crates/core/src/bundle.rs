//! On-disk artifacts shared by the plan, measure, and answer stages.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::assemble::{AssembledMechanism, Evaluation, NoisyMeasurement};
use crate::error::{Error, Result};
use crate::privacy::to_gaussian_dp;
use crate::schema::AttrSubset;
use crate::solver::SolverChoice;
use crate::workload::WorkloadSpec;

/// Everything needed to measure and answer, produced without data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MechanismBundle {
    pub workload: WorkloadSpec,
    pub solver: SolverChoice,
    pub rho: f64,
    pub mu: f64,
    pub predicted: PredictedError,
    pub mechanism: AssembledMechanism,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictedError {
    pub rmse: f64,
    pub wrmse: f64,
    pub queries: usize,
}

impl MechanismBundle {
    pub fn new(workload: WorkloadSpec, solver: SolverChoice, mechanism: AssembledMechanism, eval: &Evaluation) -> Self {
        let rho = mechanism.rho();
        MechanismBundle {
            workload,
            solver,
            rho,
            mu: to_gaussian_dp(rho),
            predicted: PredictedError { rmse: eval.rmse, wrmse: eval.wrmse, queries: eval.per_query.len() },
            mechanism,
        }
    }
}

/// Output of the measure stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementFile {
    pub seed: u64,
    pub records: usize,
    pub measurements: Vec<NoisyMeasurement>,
}

impl MeasurementFile {
    pub fn new(seed: u64, records: usize, measurements: BTreeMap<AttrSubset, NoisyMeasurement>) -> Self {
        MeasurementFile { seed, records, measurements: measurements.into_values().collect() }
    }

    pub fn by_key(&self) -> Result<BTreeMap<AttrSubset, NoisyMeasurement>> {
        let mut out = BTreeMap::new();
        for m in &self.measurements {
            if out.insert(m.subset.clone(), m.clone()).is_some() {
                return Err(Error::Data(format!("two measurements for {}", m.subset)));
            }
        }
        Ok(out)
    }
}

/// One line of the answers file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnswerRecord {
    pub query_id: usize,
    pub answer: f64,
    pub variance: f64,
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path)?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn write_answers(path: &Path, answers: &[AnswerRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for a in answers {
        serde_json::to_writer(&mut w, a)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_answers(path: &Path) -> Result<Vec<AnswerRecord>> {
    let mut out = Vec::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}
