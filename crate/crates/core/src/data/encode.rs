use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{DataError, RawTable, Splits};

/// Smallest standard deviation used when z-scoring.
pub const STD_FLOOR: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Categorical,
    Continuous,
    Label,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoricalEncoder {
    pub name: String,
    /// Sorted training categories; a category's id is its index here and
    /// `vocab.len()` is reserved for anything else.
    pub vocab: Vec<String>,
}

impl CategoricalEncoder {
    pub fn unseen_id(&self) -> u32 {
        self.vocab.len() as u32
    }

    pub fn encode(&self, value: &str) -> u32 {
        self.vocab
            .binary_search_by(|v| v.as_str().cmp(value))
            .map(|i| i as u32)
            .unwrap_or_else(|_| self.unseen_id())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContinuousEncoder {
    pub name: String,
    pub mean: f64,
    pub std: f64,
    /// Training median, substituted for missing cells.
    pub median: f64,
}

impl ContinuousEncoder {
    pub fn encode(&self, value: Option<f64>) -> f64 {
        (value.unwrap_or(self.median) - self.mean) / self.std
    }
}

/// Column typing plus encoders fitted on the training rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSchema {
    pub name: String,
    pub label: String,
    pub positive: String,
    pub categorical: Vec<CategoricalEncoder>,
    pub continuous: Vec<ContinuousEncoder>,
}

impl DatasetSchema {
    /// Columns in encoded order: categorical, continuous, then the label.
    pub fn columns(&self) -> Vec<(String, ColumnKind)> {
        self.categorical
            .iter()
            .map(|c| (c.name.clone(), ColumnKind::Categorical))
            .chain(
                self.continuous
                    .iter()
                    .map(|c| (c.name.clone(), ColumnKind::Continuous)),
            )
            .chain(std::iter::once((self.label.clone(), ColumnKind::Label)))
            .collect()
    }

    pub fn vocab_sizes(&self) -> Vec<usize> {
        self.categorical.iter().map(|c| c.vocab.len()).collect()
    }

    pub fn n_categorical(&self) -> usize {
        self.categorical.len()
    }

    pub fn n_continuous(&self) -> usize {
        self.continuous.len()
    }

    /// Hash of the column layout (names, kinds, label and positive token).
    /// Independent of the fitted statistics.
    pub fn fingerprint(&self) -> String {
        layout_fingerprint(
            &self.label,
            &self.positive,
            self.categorical.iter().map(|c| c.name.as_str()),
            self.continuous.iter().map(|c| c.name.as_str()),
        )
    }
}

pub(crate) fn layout_fingerprint<'a>(
    label: &str,
    positive: &str,
    categorical: impl Iterator<Item = &'a str>,
    continuous: impl Iterator<Item = &'a str>,
) -> String {
    let mut h = Sha256::new();
    h.update(format!("label={label}\npositive={positive}\n"));
    for c in categorical {
        h.update(format!("cat={c}\n"));
    }
    for c in continuous {
        h.update(format!("cont={c}\n"));
    }
    hex::encode(&h.finalize()[..16])
}

impl RawTable {
    /// Layout fingerprint of this table; matches [`DatasetSchema::fingerprint`]
    /// of any schema fitted on it.
    pub fn fingerprint(&self) -> String {
        layout_fingerprint(
            &self.label_name,
            &self.positive,
            self.categorical.iter().map(|c| c.name.as_str()),
            self.continuous.iter().map(|c| c.name.as_str()),
        )
    }
}

/// Encoded features ready for the model.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// Row-major `n_rows x n_cat` category ids.
    pub cat: Vec<u32>,
    /// Row-major `n_rows x n_cont` z-scored values.
    pub cont: Vec<f64>,
    /// 0.0 or 1.0 per row.
    pub labels: Vec<f64>,
    pub n_cat: usize,
    pub n_cont: usize,
}

impl Dataset {
    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn cat_row(&self, i: usize) -> &[u32] {
        &self.cat[i * self.n_cat..(i + 1) * self.n_cat]
    }

    pub fn cont_row(&self, i: usize) -> &[f64] {
        &self.cont[i * self.n_cont..(i + 1) * self.n_cont]
    }

    /// Rows `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut cat = Vec::with_capacity(indices.len() * self.n_cat);
        let mut cont = Vec::with_capacity(indices.len() * self.n_cont);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            cat.extend_from_slice(self.cat_row(i));
            cont.extend_from_slice(self.cont_row(i));
            labels.push(self.labels[i]);
        }
        Dataset {
            cat,
            cont,
            labels,
            n_cat: self.n_cat,
            n_cont: self.n_cont,
        }
    }
}

/// Fits categorical vocabularies and continuous statistics on the training
/// rows of `raw` only.
pub fn fit_encoders(raw: &RawTable, splits: &Splits) -> Result<DatasetSchema, DataError> {
    if splits.n_rows() != raw.n_rows() {
        return Err(DataError::Schema(format!(
            "splits cover {} rows but the table has {}",
            splits.n_rows(),
            raw.n_rows()
        )));
    }
    let first = raw.labels[0];
    if raw.labels.iter().all(|&y| y == first) {
        return Err(DataError::ConstantLabel(raw.label_name.clone()));
    }
    let train = &splits.train;
    let categorical = raw
        .categorical
        .iter()
        .map(|col| {
            let vocab: BTreeSet<&str> = train.iter().map(|&i| col.values[i].as_str()).collect();
            CategoricalEncoder {
                name: col.name.clone(),
                vocab: vocab.into_iter().map(str::to_string).collect(),
            }
        })
        .collect();
    let continuous = raw
        .continuous
        .iter()
        .map(|col| {
            let mut present: Vec<f64> = train.iter().filter_map(|&i| col.values[i]).collect();
            let median = median(&mut present);
            let values: Vec<f64> = train
                .iter()
                .map(|&i| col.values[i].unwrap_or(median))
                .collect();
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            ContinuousEncoder {
                name: col.name.clone(),
                mean,
                std: var.sqrt().max(STD_FLOOR),
                median,
            }
        })
        .collect();
    Ok(DatasetSchema {
        name: raw.name.clone(),
        label: raw.label_name.clone(),
        positive: raw.positive.clone(),
        categorical,
        continuous,
    })
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    if values.len() % 2 == 1 {
        values[mid]
    } else {
        0.5 * (values[mid - 1] + values[mid])
    }
}

/// Applies a fitted schema to every row of `raw`.
pub fn encode(raw: &RawTable, schema: &DatasetSchema) -> Result<Dataset, DataError> {
    let names_match = raw.categorical.len() == schema.categorical.len()
        && raw.continuous.len() == schema.continuous.len()
        && raw
            .categorical
            .iter()
            .zip(&schema.categorical)
            .all(|(a, b)| a.name == b.name)
        && raw
            .continuous
            .iter()
            .zip(&schema.continuous)
            .all(|(a, b)| a.name == b.name);
    if !names_match {
        return Err(DataError::Schema(
            "table columns do not match the fitted schema".into(),
        ));
    }
    let n = raw.n_rows();
    let (n_cat, n_cont) = (schema.n_categorical(), schema.n_continuous());
    let mut cat = Vec::with_capacity(n * n_cat);
    let mut cont = Vec::with_capacity(n * n_cont);
    for row in 0..n {
        for (col, enc) in raw.categorical.iter().zip(&schema.categorical) {
            cat.push(enc.encode(&col.values[row]));
        }
        for (col, enc) in raw.continuous.iter().zip(&schema.continuous) {
            cont.push(enc.encode(col.values[row]));
        }
    }
    Ok(Dataset {
        cat,
        cont,
        labels: raw.labels.iter().map(|&y| f64::from(y)).collect(),
        n_cat,
        n_cont,
    })
}
