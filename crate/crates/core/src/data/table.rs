use std::path::Path;

use super::{DataError, SchemaFile};

/// Category used for empty or `?` cells in categorical columns.
pub const MISSING_CATEGORY: &str = "__missing__";

fn is_missing(cell: &str) -> bool {
    matches!(cell, "" | "?" | "NA" | "N/A" | "NaN" | "nan" | "null")
}

#[derive(Clone, Debug, PartialEq)]
pub struct CategoricalColumn {
    pub name: String,
    pub values: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContinuousColumn {
    pub name: String,
    /// `None` marks a missing cell.
    pub values: Vec<Option<f64>>,
}

/// Typed, not yet encoded contents of a CSV file.
#[derive(Clone, Debug, PartialEq)]
pub struct RawTable {
    pub name: String,
    pub categorical: Vec<CategoricalColumn>,
    pub continuous: Vec<ContinuousColumn>,
    pub label_name: String,
    pub positive: String,
    pub labels: Vec<u8>,
}

impl RawTable {
    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.categorical.len() + self.continuous.len()
    }

    /// Percentage of rows carrying the positive label.
    pub fn positive_percent(&self) -> f64 {
        let pos = self.labels.iter().filter(|&&y| y == 1).count();
        100.0 * pos as f64 / self.n_rows().max(1) as f64
    }
}

/// Reads an RFC-4180 CSV and types its columns according to `schema`.
///
/// Columns not mentioned in the schema are ignored. Cells are trimmed.
/// Continuous cells that fail to parse are reported with their 1-based data
/// row number (the header is not counted).
pub fn load_csv(path: impl AsRef<Path>, schema: &SchemaFile) -> Result<RawTable, DataError> {
    let path = path.as_ref();
    let display = path.display().to_string();
    if !path.is_file() {
        return Err(DataError::FileNotFound(display));
    }
    let file = std::fs::File::open(path).map_err(|e| DataError::Io {
        path: display.clone(),
        message: e.to_string(),
    })?;
    read_csv(file, schema, &display)
}

/// [`load_csv`] over any reader; `origin` names the source in errors.
pub fn read_csv(
    reader: impl std::io::Read,
    schema: &SchemaFile,
    origin: &str,
) -> Result<RawTable, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter)
        .has_headers(schema.columns.is_none())
        .flexible(false)
        .from_reader(reader);
    let header: Vec<String> = match &schema.columns {
        Some(cols) => cols.clone(),
        None => {
            let h = rdr.headers().map_err(|e| DataError::Csv(e.to_string()))?;
            if h.is_empty() || (h.len() == 1 && h[0].trim().is_empty()) {
                return Err(DataError::Empty(origin.to_string()));
            }
            h.iter().map(|s| s.trim().to_string()).collect()
        }
    };
    let position = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))
    };
    let cat_idx = schema
        .categorical
        .iter()
        .map(|n| position(n))
        .collect::<Result<Vec<_>, _>>()?;
    let cont_idx = schema
        .continuous
        .iter()
        .map(|n| position(n))
        .collect::<Result<Vec<_>, _>>()?;
    let label_idx = position(&schema.label)?;

    let mut categorical: Vec<CategoricalColumn> = schema
        .categorical
        .iter()
        .map(|n| CategoricalColumn {
            name: n.clone(),
            values: Vec::new(),
        })
        .collect();
    let mut continuous: Vec<ContinuousColumn> = schema
        .continuous
        .iter()
        .map(|n| ContinuousColumn {
            name: n.clone(),
            values: Vec::new(),
        })
        .collect();
    let mut labels = Vec::new();

    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| DataError::Csv(format!("row {row}: {e}")))?;
        if record.len() != header.len() {
            return Err(DataError::Csv(format!(
                "row {row}: expected {} fields, found {}",
                header.len(),
                record.len()
            )));
        }
        for (col, &idx) in categorical.iter_mut().zip(&cat_idx) {
            let cell = record[idx].trim();
            col.values.push(if is_missing(cell) {
                MISSING_CATEGORY.to_string()
            } else {
                cell.to_string()
            });
        }
        for (col, &idx) in continuous.iter_mut().zip(&cont_idx) {
            let cell = record[idx].trim();
            let value = if is_missing(cell) {
                None
            } else {
                let v: f64 = cell.parse().map_err(|_| DataError::Parse {
                    column: col.name.clone(),
                    row,
                    value: cell.to_string(),
                })?;
                if !v.is_finite() {
                    return Err(DataError::Parse {
                        column: col.name.clone(),
                        row,
                        value: cell.to_string(),
                    });
                }
                Some(v)
            };
            col.values.push(value);
        }
        let label = record[label_idx].trim();
        if label.is_empty() {
            return Err(DataError::Parse {
                column: schema.label.clone(),
                row,
                value: String::new(),
            });
        }
        labels.push(u8::from(label == schema.positive));
    }
    if labels.is_empty() {
        return Err(DataError::Empty(origin.to_string()));
    }
    Ok(RawTable {
        name: schema.name.clone(),
        categorical,
        continuous,
        label_name: schema.label.clone(),
        positive: schema.positive.clone(),
        labels,
    })
}
