use std::io::Write;
use std::path::Path;

use super::{DataError, Dataset, DatasetSchema};

/// Symmetric Pearson correlation matrix with named rows and columns.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationMatrix {
    pub names: Vec<String>,
    /// Row-major `k x k`.
    pub values: Vec<f64>,
}

impl CorrelationMatrix {
    pub fn size(&self) -> usize {
        self.names.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.size() + j]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("feature");
        for n in &self.names {
            out.push(',');
            out.push_str(&csv_field(n));
        }
        out.push('\n');
        for (i, n) in self.names.iter().enumerate() {
            out.push_str(&csv_field(n));
            for j in 0..self.size() {
                out.push_str(&format!(",{}", self.get(i, j)));
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), DataError> {
        let path = path.as_ref();
        let io = |e: std::io::Error| DataError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        };
        let mut f = std::fs::File::create(path).map_err(io)?;
        f.write_all(self.to_csv().as_bytes()).map_err(io)
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Pearson correlations between named columns of equal length.
///
/// Zero-variance columns correlate 0 with everything else (a warning is
/// logged); the diagonal is exactly 1.
pub fn pearson_matrix(names: Vec<String>, columns: &[Vec<f64>]) -> Result<CorrelationMatrix, DataError> {
    let k = columns.len();
    let n = columns.first().map_or(0, Vec::len);
    if n < 2 {
        return Err(DataError::TooFewRows { rows: n, minimum: 2 });
    }
    let centered: Vec<(Vec<f64>, f64)> = columns
        .iter()
        .map(|col| {
            let mean = col.iter().sum::<f64>() / n as f64;
            let c: Vec<f64> = col.iter().map(|v| v - mean).collect();
            let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
            (c, norm)
        })
        .collect();
    for ((c, norm), name) in centered.iter().zip(&names) {
        if *norm == 0.0 {
            log::warn!("column `{name}` has zero variance; its correlations are reported as 0");
        }
        debug_assert_eq!(c.len(), n);
    }
    let mut values = vec![0.0; k * k];
    for i in 0..k {
        values[i * k + i] = 1.0;
        for j in i + 1..k {
            let (ci, ni) = &centered[i];
            let (cj, nj) = &centered[j];
            let r = if *ni == 0.0 || *nj == 0.0 {
                0.0
            } else {
                let dot: f64 = ci.iter().zip(cj).map(|(a, b)| a * b).sum();
                (dot / (ni * nj)).clamp(-1.0, 1.0)
            };
            values[i * k + j] = r;
            values[j * k + i] = r;
        }
    }
    Ok(CorrelationMatrix { names, values })
}

/// Correlations between every encoded feature and the label. Categorical
/// columns enter through their integer ids, so their coefficients depend on
/// the (alphabetical) id assignment.
pub fn correlation_matrix(dataset: &Dataset, schema: &DatasetSchema) -> Result<CorrelationMatrix, DataError> {
    let n = dataset.n_rows();
    let mut names = Vec::new();
    let mut columns = Vec::new();
    for (j, enc) in schema.categorical.iter().enumerate() {
        names.push(enc.name.clone());
        columns.push((0..n).map(|i| f64::from(dataset.cat[i * dataset.n_cat + j])).collect());
    }
    for (j, enc) in schema.continuous.iter().enumerate() {
        names.push(enc.name.clone());
        columns.push((0..n).map(|i| dataset.cont[i * dataset.n_cont + j]).collect());
    }
    names.push(schema.label.clone());
    columns.push(dataset.labels.clone());
    pearson_matrix(names, &columns)
}
