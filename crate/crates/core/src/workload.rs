//! Weighted linear queries over marginals and the standard workload families.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::keyed_stream;
use crate::schema::{AttrKind, AttrSubset, Schema};

/// A weighted linear functional over the marginal on `subset`; `coeffs` is
/// the row-major flattening of the query tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearQuery {
    pub subset: AttrSubset,
    pub coeffs: Vec<f64>,
    pub weight: f64,
}

impl LinearQuery {
    pub fn new(schema: &Schema, subset: AttrSubset, coeffs: Vec<f64>, weight: f64) -> Result<Self> {
        let q = LinearQuery { subset, coeffs, weight };
        q.validate(schema)?;
        Ok(q)
    }

    pub fn validate(&self, schema: &Schema) -> Result<()> {
        schema.check_subset(&self.subset)?;
        let cells = schema.cells(&self.subset);
        if self.coeffs.len() != cells {
            return Err(Error::Query(format!(
                "query on {} has {} coefficients, the marginal has {cells} cells",
                self.subset,
                self.coeffs.len()
            )));
        }
        if !(self.weight >= 0.0 && self.weight.is_finite()) {
            return Err(Error::Query(format!("weight {} must be finite and nonnegative", self.weight)));
        }
        if self.coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::Query("non-finite coefficient".into()));
        }
        Ok(())
    }

    /// `q . x` against a marginal vector on the same subset.
    pub fn answer(&self, marginal: &[f64]) -> f64 {
        self.coeffs.iter().zip(marginal).map(|(a, b)| a * b).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Workload {
    schema: Schema,
    queries: Vec<LinearQuery>,
}

impl Workload {
    pub fn new(schema: Schema, queries: Vec<LinearQuery>) -> Result<Self> {
        for q in &queries {
            q.validate(&schema)?;
        }
        Ok(Workload { schema, queries })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn queries(&self) -> &[LinearQuery] {
        &self.queries
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn into_queries(self) -> Vec<LinearQuery> {
        self.queries
    }

    pub fn extend(&mut self, other: Workload) -> Result<()> {
        if other.schema != self.schema {
            return Err(Error::WorkloadSpec("cannot merge workloads over different schemas".into()));
        }
        self.queries.extend(other.queries);
        Ok(())
    }

    pub fn to_columnar(&self) -> ColumnarWorkload {
        ColumnarWorkload {
            subsets: self.queries.iter().map(|q| q.subset.clone()).collect(),
            coeffs: self.queries.iter().map(|q| q.coeffs.clone()).collect(),
            weights: self.queries.iter().map(|q| q.weight).collect(),
        }
    }

    pub fn from_columnar(schema: Schema, cols: ColumnarWorkload) -> Result<Self> {
        let n = cols.subsets.len();
        if cols.coeffs.len() != n || cols.weights.len() != n {
            return Err(Error::WorkloadSpec("columnar workload has ragged columns".into()));
        }
        let queries = cols
            .subsets
            .into_iter()
            .zip(cols.coeffs)
            .zip(cols.weights)
            .map(|((subset, coeffs), weight)| LinearQuery { subset, coeffs, weight })
            .collect();
        Workload::new(schema, queries)
    }
}

/// Column-oriented JSON form of a workload: one entry per query in each
/// column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnarWorkload {
    pub subsets: Vec<AttrSubset>,
    pub coeffs: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Family {
    Marginal,
    Prefix,
    Range,
    Circular,
    Affine,
    Abs,
    Random,
    Hybrid,
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "marginal" => Family::Marginal,
            "prefix" => Family::Prefix,
            "range" => Family::Range,
            "circular" => Family::Circular,
            "affine" => Family::Affine,
            "abs" => Family::Abs,
            "random" => Family::Random,
            "hybrid" => Family::Hybrid,
            other => return Err(Error::WorkloadSpec(format!("unknown family {other:?}"))),
        })
    }
}

impl TryFrom<String> for Family {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Family> for String {
    fn from(f: Family) -> Self {
        f.to_string()
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Family::Marginal => "marginal",
            Family::Prefix => "prefix",
            Family::Range => "range",
            Family::Circular => "circular",
            Family::Affine => "affine",
            Family::Abs => "abs",
            Family::Random => "random",
            Family::Hybrid => "hybrid",
        };
        f.write_str(s)
    }
}

pub const DEFAULT_FLIP_PROBABILITY: f64 = 0.3;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyParams {
    /// Bernoulli flip probability of the random family.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    /// Seed of the random family.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// One-way family bundled with the pairwise affine/abs families.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub one_way: Option<Family>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilySpec {
    pub family: Family,
    pub arities: Vec<usize>,
    #[serde(default)]
    pub params: FamilyParams,
}

impl FamilySpec {
    pub fn new(family: Family, arities: &[usize]) -> Self {
        FamilySpec { family, arities: arities.to_vec(), params: FamilyParams::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnitWeights {
    Unit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WeightSpec {
    Named(UnitWeights),
    Random { random_seed: u64 },
}

impl Default for WeightSpec {
    fn default() -> Self {
        WeightSpec::Named(UnitWeights::Unit)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SpecBody {
    Mixed { parts: Vec<FamilySpec> },
    Single(FamilySpec),
}

/// JSON workload description: a single family or a list of `parts`, plus a
/// weighting rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    #[serde(flatten)]
    pub body: SpecBody,
    #[serde(default)]
    pub weights: WeightSpec,
}

impl WorkloadSpec {
    pub fn single(family: Family, arities: &[usize]) -> Self {
        WorkloadSpec { body: SpecBody::Single(FamilySpec::new(family, arities)), weights: WeightSpec::default() }
    }

    pub fn mixed(parts: Vec<FamilySpec>) -> Self {
        WorkloadSpec { body: SpecBody::Mixed { parts }, weights: WeightSpec::default() }
    }

    pub fn with_random_weights(mut self, seed: u64) -> Self {
        self.weights = WeightSpec::Random { random_seed: seed };
        self
    }

    pub fn parts(&self) -> &[FamilySpec] {
        match &self.body {
            SpecBody::Mixed { parts } => parts,
            SpecBody::Single(p) => std::slice::from_ref(p),
        }
    }
}

fn validate_part(schema: &Schema, part: &FamilySpec) -> Result<()> {
    if part.arities.is_empty() {
        return Err(Error::WorkloadSpec("no arities requested".into()));
    }
    for &k in &part.arities {
        if k > schema.len() {
            return Err(Error::WorkloadSpec(format!(
                "arity {k} exceeds the schema's {} attributes",
                schema.len()
            )));
        }
    }
    if matches!(part.family, Family::Affine | Family::Abs) {
        if !part.arities.contains(&2) || part.arities.iter().any(|&k| k != 1 && k != 2) {
            return Err(Error::WorkloadSpec(format!(
                "{} queries are pairwise: arities must contain 2 and at most add the one-way component 1, got {:?}",
                part.family, part.arities
            )));
        }
        if let Some(ow) = part.params.one_way {
            if matches!(ow, Family::Affine | Family::Abs | Family::Random | Family::Hybrid) {
                return Err(Error::WorkloadSpec(format!("{ow} is not a one-way family")));
            }
        }
    }
    if let Some(p) = part.params.p {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::WorkloadSpec(format!("flip probability {p} outside [0,1]")));
        }
    }
    Ok(())
}

/// One-dimensional counting queries of a product family on an attribute of
/// size `d`.
pub fn one_way_queries(family: Family, d: usize) -> Vec<Vec<f64>> {
    let indicator = |pred: &dyn Fn(usize) -> bool| -> Vec<f64> {
        (0..d).map(|v| if pred(v) { 1.0 } else { 0.0 }).collect()
    };
    match family {
        Family::Marginal => (0..d).map(|c| indicator(&|v| v == c)).collect(),
        Family::Prefix => (0..d).map(|c| indicator(&|v| v <= c)).collect(),
        Family::Range => {
            let mut out = Vec::with_capacity(d * (d + 1) / 2);
            for lo in 0..d {
                for hi in lo..d {
                    out.push(indicator(&|v| v >= lo && v <= hi));
                }
            }
            out
        }
        Family::Circular => {
            let mut out = Vec::with_capacity(d * d);
            for start in 0..d {
                for len in 1..=d {
                    out.push(indicator(&|v| (v + d - start) % d < len));
                }
            }
            out
        }
        _ => unreachable!("{family} has no one-way product form"),
    }
}

fn one_way_count(family: Family, d: usize) -> usize {
    match family {
        Family::Marginal | Family::Prefix => d,
        Family::Range => d * (d + 1) / 2,
        Family::Circular => d * d,
        _ => unreachable!(),
    }
}

fn per_attribute_family(part: &FamilySpec, schema: &Schema, attr: usize) -> Family {
    match part.family {
        Family::Hybrid => match schema.attributes()[attr].kind {
            AttrKind::Categorical => Family::Marginal,
            AttrKind::Numeric => Family::Prefix,
        },
        Family::Affine | Family::Abs => part.params.one_way.unwrap_or(Family::Prefix),
        f => f,
    }
}

/// Cartesian product of per-attribute query lists, row-major with the first
/// attribute outermost.
fn product_queries(factors: &[Vec<Vec<f64>>]) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = vec![vec![1.0]];
    for f in factors {
        let mut next = Vec::with_capacity(out.len() * f.len());
        for a in &out {
            for b in f {
                let mut v = Vec::with_capacity(a.len() * b.len());
                for &x in a {
                    v.extend(b.iter().map(|&y| x * y));
                }
                next.push(v);
            }
        }
        out = next;
    }
    out
}

fn pairwise_queries(family: Family, di: usize, dj: usize) -> Vec<Vec<f64>> {
    let thresholds = match family {
        Family::Affine => di + dj - 1,
        Family::Abs => di.max(dj),
        _ => unreachable!(),
    };
    (0..thresholds)
        .map(|c| {
            let mut q = Vec::with_capacity(di * dj);
            for a in 0..di {
                for b in 0..dj {
                    let hit = match family {
                        Family::Affine => a + b <= c,
                        _ => a.abs_diff(b) <= c,
                    };
                    q.push(if hit { 1.0 } else { 0.0 });
                }
            }
            q
        })
        .collect()
}

fn build_part(schema: &Schema, part: &FamilySpec, out: &mut Vec<LinearQuery>) -> Result<()> {
    validate_part(schema, part)?;
    let mut arities = part.arities.clone();
    arities.sort_unstable();
    arities.dedup();
    for &k in &arities {
        for subset in AttrSubset::combinations(schema.len(), k) {
            let coeffs: Vec<Vec<f64>> = match part.family {
                Family::Affine | Family::Abs if k == 2 => {
                    let dims = schema.dims(&subset);
                    pairwise_queries(part.family, dims[0], dims[1])
                }
                Family::Random => {
                    let p = part.params.p.unwrap_or(DEFAULT_FLIP_PROBABILITY);
                    let seed = part.params.seed.unwrap_or(0);
                    let cells = schema.cells(&subset);
                    let mut rng = keyed_stream(seed, &subset);
                    (0..3 * cells)
                        .map(|_| {
                            (0..cells)
                                .map(|_| if rng.random_bool(p) { 1.0 } else { 0.0 })
                                .collect()
                        })
                        .collect()
                }
                _ => {
                    let factors: Vec<Vec<Vec<f64>>> = subset
                        .iter()
                        .map(|a| one_way_queries(per_attribute_family(part, schema, a), schema.size(a)))
                        .collect();
                    product_queries(&factors)
                }
            };
            out.extend(coeffs.into_iter().map(|c| LinearQuery { subset: subset.clone(), coeffs: c, weight: 1.0 }));
        }
    }
    Ok(())
}

/// Materializes every query of the spec's families over all attribute
/// subsets of the requested arities.
pub fn build_workload(schema: &Schema, spec: &WorkloadSpec) -> Result<Workload> {
    let mut queries = Vec::new();
    for part in spec.parts() {
        build_part(schema, part, &mut queries)?;
    }
    let w = Workload { schema: schema.clone(), queries };
    Ok(match spec.weights {
        WeightSpec::Named(UnitWeights::Unit) => w,
        WeightSpec::Random { random_seed } => assign_random_weights(w, random_seed),
    })
}

/// `e_k(x)`: elementary symmetric polynomial, exact in `u128`.
fn elementary_symmetric(values: &[u128], k: usize) -> u128 {
    let mut e = vec![0u128; k + 1];
    e[0] = 1;
    for &v in values {
        for j in (1..=k).rev() {
            e[j] = e[j].saturating_add(e[j - 1].saturating_mul(v));
        }
    }
    e[k]
}

/// Number of queries `build_workload` would produce, without materializing
/// them.
pub fn count_queries(schema: &Schema, spec: &WorkloadSpec) -> Result<u128> {
    let mut total = 0u128;
    for part in spec.parts() {
        validate_part(schema, part)?;
        let mut arities = part.arities.clone();
        arities.sort_unstable();
        arities.dedup();
        for &k in &arities {
            let n = match (part.family, k) {
                (Family::Affine | Family::Abs, 2) => {
                    let mut c = 0u128;
                    for i in 0..schema.len() {
                        for j in i + 1..schema.len() {
                            let (di, dj) = (schema.size(i), schema.size(j));
                            c += match part.family {
                                Family::Affine => (di + dj - 1) as u128,
                                _ => di.max(dj) as u128,
                            };
                        }
                    }
                    c
                }
                (Family::Random, _) => {
                    let sizes: Vec<u128> = schema.attributes().iter().map(|a| a.size as u128).collect();
                    3 * elementary_symmetric(&sizes, k)
                }
                _ => {
                    let counts: Vec<u128> = (0..schema.len())
                        .map(|a| one_way_count(per_attribute_family(part, schema, a), schema.size(a)) as u128)
                        .collect();
                    elementary_symmetric(&counts, k)
                }
            };
            total += n;
        }
    }
    Ok(total)
}

/// Replaces every weight with an integer drawn uniformly from 1..=5.
pub fn assign_random_weights(mut workload: Workload, seed: u64) -> Workload {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for q in &mut workload.queries {
        q.weight = f64::from(rng.random_range(1u32..=5));
    }
    workload
}
