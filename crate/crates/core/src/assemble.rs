//! Budget allocation across subworkloads, measurement, and reconstruction.

use std::collections::BTreeMap;
#[cfg(not(target_arch = "wasm32"))]
use std::time::Instant;
#[cfg(target_arch = "wasm32")]
use web_time::Instant;

use nalgebra::DVector;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::decompose::{build_subworkloads, is_negligible, project_coeffs, Subworkload};
use crate::error::{Error, Result};
use crate::rng::keyed_stream;
use crate::schema::{AttrSubset, Schema};
use crate::solver::{solve_prepared, MechanismPlan, PreparedSubworkload, SolverChoice};
use crate::workload::{LinearQuery, Workload};

/// Relative tolerance on `Σ 1/σ² = ρ` when loading a mechanism.
const BUDGET_TOLERANCE: f64 = 1e-9;

/// Keys whose rows all have weight zero have zero loss; they are budgeted
/// as if their unweighted loss were scaled by this factor.
const ZERO_LOSS_SCALE: f64 = 1e-8;

#[cfg(feature = "parallel")]
fn par_map<'a, T: Sync, R: Send>(items: &'a [T], f: impl Fn(&'a T) -> R + Sync + Send) -> Vec<R> {
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn par_map<'a, T: Sync, R: Send>(items: &'a [T], f: impl Fn(&'a T) -> R + Sync + Send) -> Vec<R> {
    items.iter().map(f).collect()
}

/// Noise scales `σ²_A = (Σ_B √L_B) / (ρ √L_A)`, which minimize the total
/// weighted variance subject to `Σ 1/σ² = ρ`.
pub fn rescale(losses: &BTreeMap<AttrSubset, f64>, rho: f64) -> Result<BTreeMap<AttrSubset, f64>> {
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::Privacy(format!("rho {rho} must be positive and finite")));
    }
    if let Some((key, loss)) = losses.iter().find(|(_, &l)| !(l > 0.0 && l.is_finite())) {
        return Err(Error::Degenerate(format!("plan for {key} has loss {loss}")));
    }
    let total: f64 = losses.values().map(|l| l.sqrt()).sum();
    Ok(losses.iter().map(|(k, l)| (k.clone(), total / (rho * l.sqrt()))).collect())
}

/// Unit-cost plans together with their noise scales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MechanismRecord", into = "MechanismRecord")]
pub struct AssembledMechanism {
    schema: Schema,
    rho: f64,
    plans: BTreeMap<AttrSubset, MechanismPlan>,
    sigma2: BTreeMap<AttrSubset, f64>,
}

#[derive(Serialize, Deserialize)]
struct PlanEntry {
    sigma2: f64,
    plan: MechanismPlan,
}

#[derive(Serialize, Deserialize)]
struct MechanismRecord {
    schema: Schema,
    rho: f64,
    entries: Vec<PlanEntry>,
}

impl From<AssembledMechanism> for MechanismRecord {
    fn from(m: AssembledMechanism) -> Self {
        let entries = m
            .plans
            .into_iter()
            .map(|(k, plan)| PlanEntry { sigma2: m.sigma2[&k], plan })
            .collect();
        MechanismRecord { schema: m.schema, rho: m.rho, entries }
    }
}

impl TryFrom<MechanismRecord> for AssembledMechanism {
    type Error = Error;

    fn try_from(r: MechanismRecord) -> Result<Self> {
        let mut plans = BTreeMap::new();
        let mut sigma2 = BTreeMap::new();
        for e in r.entries {
            let key = e.plan.subset.clone();
            r.schema.check_subset(&key)?;
            if r.schema.dims(&key) != e.plan.dims {
                return Err(Error::Degenerate(format!("plan for {key} does not match the schema")));
            }
            if !(e.sigma2 > 0.0 && e.sigma2.is_finite()) {
                return Err(Error::Degenerate(format!("noise scale {} for {key}", e.sigma2)));
            }
            sigma2.insert(key.clone(), e.sigma2);
            if plans.insert(key.clone(), e.plan).is_some() {
                return Err(Error::Degenerate(format!("two plans for {key}")));
            }
        }
        let spent: f64 = sigma2.values().map(|s| 1.0 / s).sum();
        if (spent - r.rho).abs() > BUDGET_TOLERANCE * r.rho {
            return Err(Error::Privacy(format!("noise scales spend {spent}, budget is {}", r.rho)));
        }
        Ok(AssembledMechanism { schema: r.schema, rho: r.rho, plans, sigma2 })
    }
}

impl AssembledMechanism {
    /// Rescales unit-cost plans to spend exactly `rho`, budgeting each key
    /// by the given loss.
    pub fn new(
        schema: Schema,
        plans: BTreeMap<AttrSubset, MechanismPlan>,
        budget_losses: &BTreeMap<AttrSubset, f64>,
        rho: f64,
    ) -> Result<Self> {
        if plans.keys().ne(budget_losses.keys()) {
            return Err(Error::Degenerate("plans and losses cover different keys".into()));
        }
        let sigma2 = rescale(budget_losses, rho)?;
        Ok(AssembledMechanism { schema, rho, plans, sigma2 })
    }

    /// Budgets every key by its plan's own loss.
    pub fn from_plans(schema: Schema, plans: BTreeMap<AttrSubset, MechanismPlan>, rho: f64) -> Result<Self> {
        let losses = plans.iter().map(|(k, p)| (k.clone(), p.loss)).collect();
        Self::new(schema, plans, &losses, rho)
    }

    /// The same plans at a different budget; every `σ²` scales by `1/ρ`.
    pub fn with_budget(&self, rho: f64) -> Result<Self> {
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::Privacy(format!("rho {rho} must be positive and finite")));
        }
        let ratio = self.rho / rho;
        let sigma2 = self.sigma2.iter().map(|(k, s)| (k.clone(), s * ratio)).collect();
        Ok(AssembledMechanism { sigma2, rho, ..self.clone() })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn plans(&self) -> &BTreeMap<AttrSubset, MechanismPlan> {
        &self.plans
    }

    pub fn plan(&self, key: &AttrSubset) -> Option<&MechanismPlan> {
        self.plans.get(key)
    }

    pub fn sigma2(&self) -> &BTreeMap<AttrSubset, f64> {
        &self.sigma2
    }

    /// Number of noisy strategy answers the mechanism releases.
    pub fn total_rows(&self) -> usize {
        self.plans.values().map(|p| p.rows()).sum()
    }

    /// `Σ_A L_A σ²_A`: the weighted total variance at the assembled scales.
    pub fn weighted_loss(&self) -> f64 {
        self.plans.iter().map(|(k, p)| p.loss * self.sigma2[k]).sum()
    }

    /// Variance of the reconstructed answer to `q`.
    pub fn query_variance(&self, q: &LinearQuery) -> Result<f64> {
        q.validate(&self.schema)?;
        let mut var = 0.0;
        for (key, coeffs) in residual_parts(&self.schema, q) {
            let plan = self.plans.get(&key).ok_or(Error::MissingPlan(key.clone()))?;
            var += self.sigma2[&key] * plan.varfun(&coeffs);
        }
        Ok(var)
    }
}

/// Nonzero subqueries of `q` by residual key.
fn residual_parts(schema: &Schema, q: &LinearQuery) -> Vec<(AttrSubset, Vec<f64>)> {
    let dims = schema.dims(&q.subset);
    q.subset
        .subsets()
        .into_iter()
        .filter_map(|target| {
            let keep = target.positions_in(&q.subset).expect("enumerated subsets are contained");
            let coeffs = project_coeffs(&q.coeffs, &dims, &keep);
            (!is_negligible(&coeffs)).then_some((target, coeffs))
        })
        .collect()
}

/// Wall-clock seconds spent in each planning phase.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PlanTimings {
    pub decompose: f64,
    pub solve: f64,
    pub assemble: f64,
}

impl PlanTimings {
    pub fn total(&self) -> f64 {
        self.decompose + self.solve + self.assemble
    }
}

/// Decomposes, solves, and rescales. Subworkloads with identical solve
/// inputs share one solve. Never reads data.
pub fn plan(workload: &Workload, choice: &SolverChoice, rho: f64) -> Result<(AssembledMechanism, PlanTimings)> {
    if workload.is_empty() {
        return Err(Error::WorkloadSpec("workload has no queries".into()));
    }
    let start = Instant::now();
    let subs: Vec<Subworkload> = build_subworkloads(workload).into_values().collect();
    let decompose = start.elapsed().as_secs_f64();

    let start = Instant::now();
    let plans = solve_subworkloads(&subs, choice)?;
    let solve = start.elapsed().as_secs_f64();

    let start = Instant::now();
    let losses = subs
        .iter()
        .zip(&plans)
        .map(|(s, p)| (s.subset.clone(), budget_loss(s, p)))
        .collect();
    let plans = plans.into_iter().map(|p| (p.subset.clone(), p)).collect();
    let mech = AssembledMechanism::new(workload.schema().clone(), plans, &losses, rho)?;
    let assemble = start.elapsed().as_secs_f64();

    Ok((mech, PlanTimings { decompose, solve, assemble }))
}

fn budget_loss(sub: &Subworkload, plan: &MechanismPlan) -> f64 {
    if plan.loss > 0.0 {
        plan.loss
    } else {
        ZERO_LOSS_SCALE * sub.rows().map(|q| plan.varfun(q)).sum::<f64>()
    }
}

/// One plan per subworkload, in input order. The first failure in input
/// order is reported.
pub fn solve_subworkloads(subs: &[Subworkload], choice: &SolverChoice) -> Result<Vec<MechanismPlan>> {
    let prepared: Vec<PreparedSubworkload<'_>> = par_map(subs, PreparedSubworkload::new);
    let signatures: Vec<Vec<u64>> = par_map(&prepared, |p| p.signature());

    let mut first_of: BTreeMap<&[u64], usize> = BTreeMap::new();
    let mut unique = Vec::new();
    let source: Vec<usize> = signatures
        .iter()
        .enumerate()
        .map(|(i, sig)| {
            *first_of.entry(sig.as_slice()).or_insert_with(|| {
                unique.push(i);
                unique.len() - 1
            })
        })
        .collect();

    let solved: Vec<Result<MechanismPlan>> = par_map(&unique, |&i| solve_prepared(&prepared[i], choice));
    let solved: Vec<MechanismPlan> = solved.into_iter().collect::<Result<_>>()?;
    Ok(source
        .iter()
        .zip(subs)
        .map(|(&u, s)| solved[u].relabeled(s.subset.clone()))
        .collect())
}

/// Noisy strategy answers for one residual key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisyMeasurement {
    pub subset: AttrSubset,
    pub z: Vec<f64>,
    pub sigma2: f64,
}

/// Noise-free strategy answers `B x_A` for every key.
pub fn strategy_answers(mech: &AssembledMechanism, data: &Dataset) -> Result<BTreeMap<AttrSubset, Vec<f64>>> {
    if data.schema() != mech.schema() {
        return Err(Error::Data("dataset schema differs from the mechanism's".into()));
    }
    let keys: Vec<&AttrSubset> = mech.plans.keys().collect();
    let answers = par_map(&keys, |&k| -> Result<(AttrSubset, Vec<f64>)> {
        let x = DVector::from_vec(data.marginal(k)?.values);
        let bx = &mech.plans[k].strategy * x;
        Ok((k.clone(), bx.iter().copied().collect()))
    });
    answers.into_iter().collect()
}

/// Adds `N(0, σ² Σ)` noise to exact strategy answers. Each key draws from
/// its own stream of `seed`.
pub fn add_noise(
    mech: &AssembledMechanism,
    exact: &BTreeMap<AttrSubset, Vec<f64>>,
    seed: u64,
) -> Result<BTreeMap<AttrSubset, NoisyMeasurement>> {
    let mut out = BTreeMap::new();
    for (key, plan) in &mech.plans {
        let bx = exact.get(key).ok_or(Error::MissingMeasurement(key.clone()))?;
        let sigma2 = mech.sigma2[key];
        let mut rng = keyed_stream(seed, key);
        let z = bx
            .iter()
            .zip(plan.noise.iter())
            .map(|(v, s)| {
                let e: f64 = StandardNormal.sample(&mut rng);
                v + (sigma2 * s).sqrt() * e
            })
            .collect();
        out.insert(key.clone(), NoisyMeasurement { subset: key.clone(), z, sigma2 });
    }
    Ok(out)
}

/// Runs the mechanism on `data`. The only step that reads records.
pub fn measure(mech: &AssembledMechanism, data: &Dataset, seed: u64) -> Result<BTreeMap<AttrSubset, NoisyMeasurement>> {
    add_noise(mech, &strategy_answers(mech, data)?, seed)
}

/// Answer and variance for a single query.
pub fn reconstruct(
    mech: &AssembledMechanism,
    measurements: &BTreeMap<AttrSubset, NoisyMeasurement>,
    q: &LinearQuery,
) -> Result<(f64, f64)> {
    q.validate(&mech.schema)?;
    let mut answer = 0.0;
    let mut variance = 0.0;
    for (key, coeffs) in residual_parts(&mech.schema, q) {
        let plan = mech.plans.get(&key).ok_or(Error::MissingPlan(key.clone()))?;
        let m = measurement_for(plan, measurements, &key)?;
        answer += plan.reconstruct(&coeffs, &m.z);
        variance += mech.sigma2[&key] * plan.varfun(&coeffs);
    }
    Ok((answer, variance))
}

fn measurement_for<'m>(
    plan: &MechanismPlan,
    measurements: &'m BTreeMap<AttrSubset, NoisyMeasurement>,
    key: &AttrSubset,
) -> Result<&'m NoisyMeasurement> {
    let m = measurements.get(key).ok_or(Error::MissingMeasurement(key.clone()))?;
    if m.z.len() != plan.rows() {
        return Err(Error::Data(format!(
            "measurement for {key} has {} values, plan has {} rows",
            m.z.len(),
            plan.rows()
        )));
    }
    Ok(m)
}

/// Per key index, the weights applied to that key's measurements.
type Terms = Vec<(usize, Vec<f64>)>;

/// Precomputed reconstruction for a fixed workload: each answer is a dot
/// product with the measurements of a few keys.
#[derive(Debug, Clone)]
pub struct Reconstructor {
    keys: Vec<AttrSubset>,
    terms: Vec<Terms>,
    variances: Vec<f64>,
}

impl Reconstructor {
    pub fn new(mech: &AssembledMechanism, workload: &Workload) -> Result<Self> {
        let keys: Vec<AttrSubset> = mech.plans.keys().cloned().collect();
        let queries = workload.queries();
        let built: Vec<Result<(Terms, f64)>> = par_map(queries, |q| {
            q.validate(&mech.schema)?;
            let mut terms = Vec::new();
            let mut var = 0.0;
            for (key, coeffs) in residual_parts(&mech.schema, q) {
                let plan = mech.plans.get(&key).ok_or(Error::MissingPlan(key.clone()))?;
                let slot = keys.binary_search(&key).expect("plan keys are sorted");
                var += mech.sigma2[&key] * plan.varfun(&coeffs);
                terms.push((slot, plan.recon_row(&coeffs)));
            }
            Ok((terms, var))
        });
        let mut terms = Vec::with_capacity(queries.len());
        let mut variances = Vec::with_capacity(queries.len());
        for b in built {
            let (t, v) = b?;
            terms.push(t);
            variances.push(v);
        }
        Ok(Reconstructor { keys, terms, variances })
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    pub fn answers(&self, measurements: &BTreeMap<AttrSubset, NoisyMeasurement>) -> Result<Vec<f64>> {
        let z: Vec<Option<&[f64]>> = self.keys.iter().map(|k| measurements.get(k).map(|m| m.z.as_slice())).collect();
        self.terms
            .iter()
            .map(|terms| {
                terms.iter().try_fold(0.0, |acc, (slot, row)| {
                    let zk = z[*slot].ok_or_else(|| Error::MissingMeasurement(self.keys[*slot].clone()))?;
                    if zk.len() != row.len() {
                        return Err(Error::Data(format!(
                            "measurement for {} has {} values, plan has {} rows",
                            self.keys[*slot],
                            zk.len(),
                            row.len()
                        )));
                    }
                    Ok(acc + row.iter().zip(zk).map(|(a, b)| a * b).sum::<f64>())
                })
            })
            .collect()
    }
}

/// Data-independent error summary of a workload under a mechanism.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub rmse: f64,
    pub wrmse: f64,
    pub per_query: Vec<f64>,
}

pub fn evaluate(workload: &Workload, mech: &AssembledMechanism) -> Result<Evaluation> {
    if workload.is_empty() {
        return Err(Error::WorkloadSpec("cannot evaluate an empty workload".into()));
    }
    let per_query = par_map(workload.queries(), |q| mech.query_variance(q)).into_iter().collect::<Result<Vec<f64>>>()?;
    let n = workload.len() as f64;
    let total: f64 = per_query.iter().sum();
    let weighted: f64 = per_query.iter().zip(workload.queries()).map(|(v, q)| q.weight * v).sum();
    Ok(Evaluation { rmse: (total / n).sqrt(), wrmse: (weighted / n).sqrt(), per_query })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::{build_workload, Family, WorkloadSpec};

    fn losses(pairs: &[(&[usize], f64)]) -> BTreeMap<AttrSubset, f64> {
        pairs.iter().map(|(k, l)| (AttrSubset::new(k.iter().copied()), *l)).collect()
    }

    #[test]
    fn rescale_examples() {
        let s = rescale(&losses(&[(&[0], 5.0)]), 2.0).unwrap();
        assert_eq!(s[&AttrSubset::new([0])], 0.5);

        let s = rescale(&losses(&[(&[0], 1.0), (&[1], 4.0)]), 1.0).unwrap();
        assert!((s[&AttrSubset::new([0])] - 3.0).abs() < 1e-15);
        assert!((s[&AttrSubset::new([1])] - 1.5).abs() < 1e-15);

        let s = rescale(&losses(&[(&[], 2.0), (&[0], 2.0), (&[1], 2.0)]), 1.0).unwrap();
        assert!(s.values().all(|&v| (v - 3.0).abs() < 1e-15));

        assert!(rescale(&losses(&[(&[0], 0.0)]), 1.0).is_err());
        assert!(rescale(&losses(&[(&[0], 1.0)]), 0.0).is_err());
    }

    #[test]
    fn constant_query_uses_only_the_total() {
        let schema = Schema::from_sizes(&[2, 3]).unwrap();
        let w = build_workload(&schema, &WorkloadSpec::single(Family::Marginal, &[2])).unwrap();
        let (mech, _) = plan(&w, &SolverChoice::optimal(), 1.0).unwrap();
        let q = LinearQuery::new(&schema, AttrSubset::new([0, 1]), vec![1.0; 6], 1.0).unwrap();
        let total = AttrSubset::empty();
        let mut only_total = BTreeMap::new();
        only_total.insert(total.clone(), NoisyMeasurement { subset: total.clone(), z: vec![7.0], sigma2: 1.0 });
        let (ans, var) = reconstruct(&mech, &only_total, &q).unwrap();
        assert!((ans - 7.0).abs() < 1e-12);
        assert!((var - mech.sigma2()[&total] * mech.plan(&total).unwrap().varfun(&[1.0])).abs() < 1e-12);
    }

    #[test]
    fn missing_pieces_are_reported() {
        let schema = Schema::from_sizes(&[2, 3]).unwrap();
        let w = build_workload(&schema, &WorkloadSpec::single(Family::Marginal, &[1])).unwrap();
        let (mech, _) = plan(&w, &SolverChoice::optimal(), 1.0).unwrap();
        let pair = LinearQuery::new(&schema, AttrSubset::new([0, 1]), vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0], 1.0).unwrap();
        assert!(matches!(mech.query_variance(&pair), Err(Error::MissingPlan(_))));
        let single = &w.queries()[0];
        assert!(matches!(reconstruct(&mech, &BTreeMap::new(), single), Err(Error::MissingMeasurement(_))));
        let empty = Workload::new(schema, Vec::new()).unwrap();
        assert!(evaluate(&empty, &mech).is_err());
    }

    #[test]
    fn unit_weights_give_equal_error_summaries() {
        let schema = Schema::uniform(3, 3).unwrap();
        let w = build_workload(&schema, &WorkloadSpec::single(Family::Prefix, &[1, 2])).unwrap();
        let (mech, _) = plan(&w, &SolverChoice::optimal(), 0.5).unwrap();
        let e = evaluate(&w, &mech).unwrap();
        assert!((e.rmse - e.wrmse).abs() <= 1e-15 * e.rmse);
        let spent: f64 = mech.sigma2().values().map(|s| 1.0 / s).sum();
        assert!((spent - 0.5).abs() < 1e-12);
        // per-query variances agree with the single-query path
        for (q, v) in w.queries().iter().zip(&e.per_query) {
            assert!((mech.query_variance(q).unwrap() - v).abs() <= 1e-12 * v);
        }
    }

    #[test]
    fn mechanism_json_is_validated() {
        let schema = Schema::from_sizes(&[2, 3]).unwrap();
        let w = build_workload(&schema, &WorkloadSpec::single(Family::Marginal, &[1])).unwrap();
        let (mech, _) = plan(&w, &SolverChoice::fourier(), 1.0).unwrap();
        let json = serde_json::to_string(&mech).unwrap();
        assert_eq!(serde_json::from_str::<AssembledMechanism>(&json).unwrap(), mech);
        let tampered = json.replacen("\"rho\":1.0", "\"rho\":2.0", 1);
        assert!(serde_json::from_str::<AssembledMechanism>(&tampered).is_err());
    }
}
