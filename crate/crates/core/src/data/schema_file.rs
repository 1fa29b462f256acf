use std::path::Path;

use super::DataError;
use crate::kv::KvDocument;

/// Column typing for one CSV file, as read from a schema file.
///
/// ```text
/// name = blastchar
/// label = Churn
/// positive = Yes
/// categorical = gender, SeniorCitizen, Partner
/// continuous = MonthlyCharges, TotalCharges
/// ignore = customerID
/// # optional
/// delimiter = ;
/// header = false
/// columns = a, b, c
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct SchemaFile {
    pub name: String,
    pub label: String,
    pub positive: String,
    pub categorical: Vec<String>,
    pub continuous: Vec<String>,
    pub ignore: Vec<String>,
    pub delimiter: u8,
    /// Column names to use when the file has no header row.
    pub columns: Option<Vec<String>>,
}

const KEYS: [&str; 9] = [
    "name",
    "label",
    "positive",
    "categorical",
    "continuous",
    "ignore",
    "delimiter",
    "header",
    "columns",
];

impl SchemaFile {
    pub fn read(path: impl AsRef<Path>) -> Result<Self, DataError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| DataError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, DataError> {
        let doc = KvDocument::parse(text)?;
        if let Some(e) = doc.unknown_keys("", &KEYS).next() {
            return Err(e.error("unknown schema key").into());
        }
        let required = |key: &str| {
            doc.get("", key)
                .map(|e| e.value.clone())
                .filter(|v| !v.is_empty())
                .ok_or_else(|| DataError::Schema(format!("missing required key `{key}`")))
        };
        let list = |key: &str| doc.get("", key).map(|e| e.list()).unwrap_or_default();
        let delimiter = match doc.get("", "delimiter") {
            None => b',',
            Some(e) => {
                let v = if e.value == "\\t" { "\t" } else { e.value.as_str() };
                match v.as_bytes() {
                    [b] => *b,
                    _ => return Err(e.error("delimiter must be a single character").into()),
                }
            }
        };
        let header = match doc.get("", "header") {
            None => true,
            Some(e) => e.parse::<bool>()?,
        };
        let columns = if header {
            None
        } else {
            let cols = list("columns");
            if cols.is_empty() {
                return Err(DataError::Schema(
                    "`header = false` needs a `columns` list".into(),
                ));
            }
            Some(cols)
        };
        let schema = Self {
            name: doc
                .get("", "name")
                .map(|e| e.value.clone())
                .unwrap_or_default(),
            label: required("label")?,
            positive: required("positive")?,
            categorical: list("categorical"),
            continuous: list("continuous"),
            ignore: list("ignore"),
            delimiter,
            columns,
        };
        schema.validate()?;
        Ok(schema)
    }

    fn validate(&self) -> Result<(), DataError> {
        if self.categorical.is_empty() && self.continuous.is_empty() {
            return Err(DataError::Schema("no feature columns declared".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for name in self
            .categorical
            .iter()
            .chain(&self.continuous)
            .chain(&self.ignore)
            .chain(std::iter::once(&self.label))
        {
            if !seen.insert(name) {
                return Err(DataError::Schema(format!(
                    "column `{name}` declared more than once"
                )));
            }
        }
        Ok(())
    }

    pub fn feature_count(&self) -> usize {
        self.categorical.len() + self.continuous.len()
    }
}
