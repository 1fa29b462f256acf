//! Loading, typing, splitting and encoding of tabular CSV data.
//!
//! The pipeline is `SchemaFile` → [`load_csv`] → [`split_indices`] →
//! [`fit_encoders`] (training rows only) → [`encode`]. Categorical columns map
//! to integer ids with one extra "unseen" id per column; continuous columns
//! are median-imputed and z-scored.

mod correlation;
mod encode;
mod schema_file;
mod split;
mod synthetic;
mod table;

use std::path::Path;

use serde::Serialize;

pub use correlation::{correlation_matrix, pearson_matrix, CorrelationMatrix};
pub use encode::{
    encode, fit_encoders, CategoricalEncoder, ColumnKind, ContinuousEncoder, Dataset,
    DatasetSchema, STD_FLOOR,
};
pub use schema_file::SchemaFile;
pub use split::{split_indices, Splits, MIN_ROWS};
pub use synthetic::{synthetic_table, SyntheticSpec};
pub use table::{load_csv, read_csv, CategoricalColumn, ContinuousColumn, RawTable, MISSING_CATEGORY};

use crate::kv::KvError;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("file not found: {0}")]
    FileNotFound(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error(transparent)]
    Kv(#[from] KvError),
    #[error("column `{0}` not found in the file header")]
    MissingColumn(String),
    #[error("{0} contains no data rows")]
    Empty(String),
    #[error("csv error: {0}")]
    Csv(String),
    #[error("cannot parse `{value}` in column `{column}` at data row {row}")]
    Parse {
        column: String,
        row: usize,
        value: String,
    },
    #[error("{rows} rows is too few (minimum {minimum})")]
    TooFewRows { rows: usize, minimum: usize },
    #[error("label column `{0}` holds a single class")]
    ConstantLabel(String),
}

/// A loaded table together with its split, fitted schema and encoding.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub raw: RawTable,
    pub splits: Splits,
    pub schema: DatasetSchema,
    pub dataset: Dataset,
}

impl PreparedData {
    pub fn new(raw: RawTable, split_seed: u64) -> Result<Self, DataError> {
        let splits = split_indices(raw.n_rows(), split_seed)?;
        let schema = fit_encoders(&raw, &splits)?;
        let dataset = encode(&raw, &schema)?;
        Ok(Self {
            raw,
            splits,
            schema,
            dataset,
        })
    }

    pub fn load(
        csv: impl AsRef<Path>,
        schema: &SchemaFile,
        split_seed: u64,
    ) -> Result<Self, DataError> {
        Self::new(load_csv(csv, schema)?, split_seed)
    }

    /// Re-splits the same table and refits the encoders.
    pub fn resplit(&self, split_seed: u64) -> Result<Self, DataError> {
        Self::new(self.raw.clone(), split_seed)
    }

    pub fn train(&self) -> Dataset {
        self.dataset.subset(&self.splits.train)
    }

    pub fn validation(&self) -> Dataset {
        self.dataset.subset(&self.splits.validation)
    }

    pub fn test(&self) -> Dataset {
        self.dataset.subset(&self.splits.test)
    }
}

/// Summary row of a dataset report.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DatasetStats {
    pub name: String,
    pub n_rows: usize,
    pub n_features: usize,
    pub n_categorical: usize,
    pub n_continuous: usize,
    pub positive_percent: f64,
}

impl DatasetStats {
    pub fn of(raw: &RawTable) -> Self {
        Self {
            name: raw.name.clone(),
            n_rows: raw.n_rows(),
            n_features: raw.n_features(),
            n_categorical: raw.categorical.len(),
            n_continuous: raw.continuous.len(),
            positive_percent: raw.positive_percent(),
        }
    }
}
