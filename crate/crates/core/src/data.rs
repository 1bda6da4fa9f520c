//! Record datasets, marginals, and synthetic data.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::Read;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Zipf};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::{AttrSubset, Schema};

/// Immutable list of records over a schema, stored column by column.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema: Schema,
    columns: Vec<Vec<u32>>,
    len: usize,
}

/// Counts of a marginal, row-major over the subset's attributes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalVector {
    pub subset: AttrSubset,
    pub values: Vec<f64>,
}

/// Category labels per attribute name; a label's position is its code.
pub type Dictionary = BTreeMap<String, Vec<String>>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distribution {
    Uniform,
    /// Zipf with exponent `s` over each attribute's values, value 0 most
    /// frequent.
    Zipf(f64),
}

impl Dataset {
    pub fn empty(schema: Schema) -> Self {
        let columns = vec![Vec::new(); schema.len()];
        Dataset { schema, columns, len: 0 }
    }

    pub fn from_records<R: AsRef<[usize]>>(schema: Schema, records: &[R]) -> Result<Self> {
        let mut ds = Dataset::empty(schema);
        for (i, r) in records.iter().enumerate() {
            ds.push(r.as_ref()).map_err(|e| Error::Data(format!("record {i}: {e}")))?;
        }
        Ok(ds)
    }

    fn push(&mut self, record: &[usize]) -> std::result::Result<(), String> {
        if record.len() != self.schema.len() {
            return Err(format!("expected {} values, got {}", self.schema.len(), record.len()));
        }
        for (a, &v) in record.iter().enumerate() {
            let attr = &self.schema.attributes()[a];
            if v >= attr.size {
                return Err(format!("value {v} of {:?} outside [0, {})", attr.name, attr.size));
            }
        }
        for (col, &v) in self.columns.iter_mut().zip(record) {
            col.push(v as u32);
        }
        self.len += 1;
        Ok(())
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn record(&self, i: usize) -> Vec<usize> {
        self.columns.iter().map(|c| c[i] as usize).collect()
    }

    /// Group-by count over `subset`, accumulated directly into the
    /// marginal's cells.
    pub fn marginal(&self, subset: &AttrSubset) -> Result<MarginalVector> {
        self.schema.check_subset(subset)?;
        let dims = self.schema.dims(subset);
        let mut counts = vec![0u64; dims.iter().product()];
        let cols: Vec<&[u32]> = subset.iter().map(|a| self.columns[a].as_slice()).collect();
        for r in 0..self.len {
            let mut idx = 0usize;
            for (col, &d) in cols.iter().zip(&dims) {
                idx = idx * d + col[r] as usize;
            }
            counts[idx] += 1;
        }
        Ok(MarginalVector { subset: subset.clone(), values: counts.into_iter().map(|c| c as f64).collect() })
    }
}

pub fn load_dictionary(path: &Path) -> Result<Dictionary> {
    let mut s = String::new();
    File::open(path)?.read_to_string(&mut s)?;
    Ok(serde_json::from_str(&s)?)
}

/// Reads a CSV whose header names the schema's attributes (in any order).
/// Cells are integer codes, or labels for attributes listed in `dictionary`.
pub fn load_csv(path: &Path, schema: &Schema, dictionary: Option<&Dictionary>) -> Result<Dataset> {
    let file = File::open(path)?;
    read_csv(file, schema, dictionary)
}

pub fn read_csv<R: Read>(reader: R, schema: &Schema, dictionary: Option<&Dictionary>) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut ds = Dataset::empty(schema.clone());
    if headers.is_empty() {
        return Ok(ds);
    }

    let mut column_of = vec![usize::MAX; schema.len()];
    for (c, name) in headers.iter().enumerate() {
        let a = schema
            .position(name)
            .ok_or_else(|| Error::Data(format!("column {name:?} is not a schema attribute")))?;
        if column_of[a] != usize::MAX {
            return Err(Error::Data(format!("column {name:?} appears twice")));
        }
        column_of[a] = c;
    }
    if let Some(a) = column_of.iter().position(|&c| c == usize::MAX) {
        return Err(Error::Data(format!("missing column {:?}", schema.attributes()[a].name)));
    }

    let lookups: Vec<Option<HashMap<&str, usize>>> = schema
        .attributes()
        .iter()
        .map(|attr| {
            dictionary
                .and_then(|d| d.get(&attr.name))
                .map(|labels| labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect())
        })
        .collect();

    let mut record = vec![0usize; schema.len()];
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        if row.len() != headers.len() {
            return Err(Error::Data(format!("row {line}: expected {} fields, got {}", headers.len(), row.len())));
        }
        for (a, attr) in schema.attributes().iter().enumerate() {
            let cell = &row[column_of[a]];
            record[a] = match &lookups[a] {
                Some(map) => *map
                    .get(cell)
                    .ok_or_else(|| Error::Data(format!("row {line}: unknown label {cell:?} for {:?}", attr.name)))?,
                None => cell
                    .parse::<usize>()
                    .map_err(|_| Error::Data(format!("row {line}: {cell:?} is not a code for {:?}", attr.name)))?,
            };
        }
        ds.push(&record).map_err(|e| Error::Data(format!("row {line}: {e}")))?;
    }
    Ok(ds)
}

/// Writes integer codes under a header of attribute names.
pub fn write_csv<W: std::io::Write>(data: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(data.schema.attributes().iter().map(|a| a.name.as_str()))?;
    for r in 0..data.len {
        w.write_record(data.columns.iter().map(|c| c[r].to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Independent attributes drawn from `dist`, reproducible for a fixed seed.
pub fn synth(schema: &Schema, records: usize, seed: u64, dist: Distribution) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let zipfs = match dist {
        Distribution::Uniform => None,
        Distribution::Zipf(s) => Some(
            schema
                .attributes()
                .iter()
                .map(|a| Zipf::new(a.size as f64, s).map_err(|e| Error::Data(format!("zipf parameters: {e}"))))
                .collect::<Result<Vec<_>>>()?,
        ),
    };
    let mut ds = Dataset::empty(schema.clone());
    let mut record = vec![0usize; schema.len()];
    for _ in 0..records {
        for (a, attr) in schema.attributes().iter().enumerate() {
            record[a] = match &zipfs {
                None => rng.random_range(0..attr.size),
                Some(z) => (z[a].sample(&mut rng) as usize - 1).min(attr.size - 1),
            };
        }
        ds.push(&record).expect("generated values are in range");
    }
    Ok(ds)
}
