use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{CategoricalColumn, ContinuousColumn, DataError, RawTable, SchemaFile};

/// A random table whose label follows a known additive rule.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub name: String,
    pub n_rows: usize,
    pub n_categorical: usize,
    /// Categories per categorical column.
    pub cardinality: usize,
    pub n_continuous: usize,
    /// Standard deviation of Gaussian noise added to the logit. With 0 the
    /// classes are separable by the generating rule.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            name: "synthetic".into(),
            n_rows: 400,
            n_categorical: 3,
            cardinality: 4,
            n_continuous: 2,
            noise: 0.5,
            seed: 0,
        }
    }
}

/// Label is `1` when `Σ effect[col][category] + Σ w·x + noise` exceeds its
/// median, so the classes are balanced up to ties.
pub fn synthetic_table(spec: &SyntheticSpec) -> RawTable {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let effects: Vec<Vec<f64>> = (0..spec.n_categorical)
        .map(|_| (0..spec.cardinality).map(|_| rng.gen_range(-1.5..1.5)).collect())
        .collect();
    let weights: Vec<f64> = (0..spec.n_continuous).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut categorical: Vec<CategoricalColumn> = (0..spec.n_categorical)
        .map(|c| CategoricalColumn {
            name: format!("cat{c}"),
            values: Vec::with_capacity(spec.n_rows),
        })
        .collect();
    let mut continuous: Vec<ContinuousColumn> = (0..spec.n_continuous)
        .map(|c| ContinuousColumn {
            name: format!("num{c}"),
            values: Vec::with_capacity(spec.n_rows),
        })
        .collect();
    let mut scores = Vec::with_capacity(spec.n_rows);
    for _ in 0..spec.n_rows {
        let mut z = 0.0;
        for (col, eff) in categorical.iter_mut().zip(&effects) {
            let k = rng.gen_range(0..spec.cardinality.max(1));
            z += eff.get(k).copied().unwrap_or(0.0);
            col.values.push(format!("v{k}"));
        }
        for (col, w) in continuous.iter_mut().zip(&weights) {
            let x: f64 = rng.sample(StandardNormal);
            z += w * x;
            col.values.push(Some(10.0 * x + 3.0));
        }
        if spec.noise > 0.0 {
            z += spec.noise * rng.sample::<f64, _>(StandardNormal);
        }
        scores.push(z);
    }
    let mut sorted = scores.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted.get(sorted.len() / 2).copied().unwrap_or(0.0);
    RawTable {
        name: spec.name.clone(),
        categorical,
        continuous,
        label_name: "target".into(),
        positive: "yes".into(),
        labels: scores.iter().map(|&z| u8::from(z >= median)).collect(),
    }
}

impl RawTable {
    /// The schema file that reads [`RawTable::write_csv`] output back.
    pub fn schema_file(&self) -> SchemaFile {
        SchemaFile {
            name: self.name.clone(),
            label: self.label_name.clone(),
            positive: self.positive.clone(),
            categorical: self.categorical.iter().map(|c| c.name.clone()).collect(),
            continuous: self.continuous.iter().map(|c| c.name.clone()).collect(),
            ignore: Vec::new(),
            delimiter: b',',
            columns: None,
        }
    }

    /// Comma-separated with a header; missing continuous cells are empty and
    /// negative labels are written as `no`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), DataError> {
        let path = path.as_ref();
        let io = |e: &dyn std::fmt::Display| DataError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        };
        let mut w = csv::Writer::from_path(path).map_err(|e| io(&e))?;
        let header: Vec<&str> = self
            .categorical
            .iter()
            .map(|c| c.name.as_str())
            .chain(self.continuous.iter().map(|c| c.name.as_str()))
            .chain(std::iter::once(self.label_name.as_str()))
            .collect();
        w.write_record(&header).map_err(|e| io(&e))?;
        let negative = if self.positive == "no" { "not_no" } else { "no" };
        for row in 0..self.n_rows() {
            let mut record: Vec<String> = self.categorical.iter().map(|c| c.values[row].clone()).collect();
            record.extend(
                self.continuous
                    .iter()
                    .map(|c| c.values[row].map(|v| v.to_string()).unwrap_or_default()),
            );
            record.push(if self.labels[row] == 1 { self.positive.clone() } else { negative.into() });
            w.write_record(&record).map_err(|e| io(&e))?;
        }
        w.flush().map_err(|e| io(&e))
    }
}

impl SchemaFile {
    /// Text accepted by [`SchemaFile::parse`].
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        if !self.name.is_empty() {
            out.push_str(&format!("name = {}\n", self.name));
        }
        out.push_str(&format!("label = {}\npositive = {}\n", self.label, self.positive));
        for (key, list) in [
            ("categorical", &self.categorical),
            ("continuous", &self.continuous),
            ("ignore", &self.ignore),
        ] {
            if !list.is_empty() {
                out.push_str(&format!("{key} = {}\n", list.join(", ")));
            }
        }
        if self.delimiter != b',' {
            let d = if self.delimiter == b'\t' { "\\t".to_string() } else { (self.delimiter as char).to_string() };
            out.push_str(&format!("delimiter = {d}\n"));
        }
        if let Some(cols) = &self.columns {
            out.push_str(&format!("header = false\ncolumns = {}\n", cols.join(", ")));
        }
        out
    }
}
