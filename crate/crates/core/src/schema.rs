//! Attribute schemas and attribute subsets.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AttrKind {
    #[default]
    Categorical,
    Numeric,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attribute {
    pub name: String,
    pub size: usize,
    #[serde(default)]
    pub kind: AttrKind,
}

/// Ordered list of discrete attributes. Attribute values are the integers
/// `0..size`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawSchema", into = "RawSchema")]
pub struct Schema {
    attributes: Vec<Attribute>,
}

#[derive(Serialize, Deserialize)]
struct RawSchema {
    attributes: Vec<Attribute>,
}

impl TryFrom<RawSchema> for Schema {
    type Error = Error;

    fn try_from(raw: RawSchema) -> Result<Self> {
        Schema::new(raw.attributes)
    }
}

impl From<Schema> for RawSchema {
    fn from(s: Schema) -> Self {
        RawSchema { attributes: s.attributes }
    }
}

impl Schema {
    pub fn new(attributes: Vec<Attribute>) -> Result<Self> {
        let mut seen = HashSet::new();
        for a in &attributes {
            if a.size < 2 {
                return Err(Error::Schema(format!(
                    "attribute {:?} has domain size {}, need at least 2",
                    a.name, a.size
                )));
            }
            if !seen.insert(a.name.as_str()) {
                return Err(Error::Schema(format!("duplicate attribute name {:?}", a.name)));
            }
        }
        Ok(Schema { attributes })
    }

    /// `[n]^d`: `d` categorical attributes named `a0..`, each of size `n`.
    pub fn uniform(n: usize, d: usize) -> Result<Self> {
        Self::from_sizes(&vec![n; d])
    }

    pub fn from_sizes(sizes: &[usize]) -> Result<Self> {
        Self::new(
            sizes
                .iter()
                .enumerate()
                .map(|(i, &size)| Attribute { name: format!("a{i}"), size, kind: AttrKind::Categorical })
                .collect(),
        )
    }

    /// Domain-size layouts of the Adult, CPS and Loans benchmark schemas
    /// (categorical attributes first, then numeric ones).
    pub fn preset(name: &str) -> Result<Self> {
        let (cat, num): (&[usize], &[usize]) = match name {
            "adult" => (&[42, 16, 15, 9, 7, 6, 5, 2, 2], &[100, 100, 100, 99, 85]),
            "cps" => (&[7, 4, 2], &[50, 100]),
            "loans" => (&[51, 36, 15, 8, 6, 5, 4, 3], &[101, 101, 101, 101]),
            other => return Err(Error::Schema(format!("unknown preset {other:?}"))),
        };
        let cats = cat.iter().enumerate().map(|(i, &size)| Attribute {
            name: format!("cat{i}"),
            size,
            kind: AttrKind::Categorical,
        });
        let nums = num.iter().enumerate().map(|(i, &size)| Attribute {
            name: format!("num{i}"),
            size,
            kind: AttrKind::Numeric,
        });
        Self::new(cats.chain(nums).collect())
    }

    pub fn attributes(&self) -> &[Attribute] {
        &self.attributes
    }

    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    pub fn size(&self, attr: usize) -> usize {
        self.attributes[attr].size
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a.name == name)
    }

    /// Domain sizes of the attributes in `subset`, in subset order.
    pub fn dims(&self, subset: &AttrSubset) -> Vec<usize> {
        subset.iter().map(|i| self.attributes[i].size).collect()
    }

    /// Number of cells of the marginal on `subset` (1 for the empty set).
    pub fn cells(&self, subset: &AttrSubset) -> usize {
        subset.iter().map(|i| self.attributes[i].size).product()
    }

    /// Size of the full data domain; saturates rather than overflowing.
    pub fn domain_size(&self) -> u128 {
        self.attributes
            .iter()
            .fold(1u128, |acc, a| acc.saturating_mul(a.size as u128))
    }

    pub fn check_subset(&self, subset: &AttrSubset) -> Result<()> {
        match subset.iter().last() {
            Some(i) if i >= self.len() => Err(Error::Query(format!(
                "subset {subset} references attribute {i} but the schema has {} attributes",
                self.len()
            ))),
            _ => Ok(()),
        }
    }
}

/// Sorted, duplicate-free set of attribute indices. The empty set is the
/// key of the total-count marginal.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct AttrSubset(Vec<usize>);

impl TryFrom<Vec<usize>> for AttrSubset {
    type Error = Error;

    fn try_from(v: Vec<usize>) -> Result<Self> {
        if v.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Query(format!("subset {v:?} is not sorted and duplicate-free")));
        }
        Ok(AttrSubset(v))
    }
}

impl From<AttrSubset> for Vec<usize> {
    fn from(s: AttrSubset) -> Self {
        s.0
    }
}

impl AttrSubset {
    pub fn empty() -> Self {
        AttrSubset(Vec::new())
    }

    /// Builds a subset from arbitrary indices, sorting and deduplicating.
    pub fn new(indices: impl IntoIterator<Item = usize>) -> Self {
        let mut v: Vec<usize> = indices.into_iter().collect();
        v.sort_unstable();
        v.dedup();
        AttrSubset(v)
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn iter(&self) -> impl DoubleEndedIterator<Item = usize> + ExactSizeIterator + '_ {
        self.0.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, attr: usize) -> bool {
        self.0.binary_search(&attr).is_ok()
    }

    pub fn is_subset_of(&self, other: &AttrSubset) -> bool {
        self.0.iter().all(|&i| other.contains(i))
    }

    /// Positions of `self`'s attributes inside `outer`, or `None` when
    /// `self` is not a subset of `outer`.
    pub fn positions_in(&self, outer: &AttrSubset) -> Option<Vec<usize>> {
        self.0.iter().map(|&i| outer.0.binary_search(&i).ok()).collect()
    }

    /// All subsets of `self`, ordered by bitmask over positions (so `{}`
    /// comes first and `self` last).
    pub fn subsets(&self) -> Vec<AttrSubset> {
        let k = self.0.len();
        (0u64..(1u64 << k))
            .map(|mask| {
                AttrSubset(
                    (0..k)
                        .filter(|b| mask & (1 << b) != 0)
                        .map(|b| self.0[b])
                        .collect(),
                )
            })
            .collect()
    }

    /// All `k`-element subsets of `0..m` in lexicographic order.
    pub fn combinations(m: usize, k: usize) -> Vec<AttrSubset> {
        let mut out = Vec::new();
        if k > m {
            return out;
        }
        let mut idx: Vec<usize> = (0..k).collect();
        loop {
            out.push(AttrSubset(idx.clone()));
            // rightmost position that can still advance
            let mut i = k;
            while i > 0 && idx[i - 1] == i - 1 + m - k {
                i -= 1;
            }
            if i == 0 {
                return out;
            }
            idx[i - 1] += 1;
            for j in i..k {
                idx[j] = idx[j - 1] + 1;
            }
        }
    }
}

impl fmt::Display for AttrSubset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (n, i) in self.0.iter().enumerate() {
            if n > 0 {
                write!(f, ",")?;
            }
            write!(f, "{i}")?;
        }
        write!(f, "}}")
    }
}
