use std::path::{Path, PathBuf};

use gatedtab::kv::{KvDocument, KvError};
use gatedtab::model::ModelConfig;
use gatedtab::train::TrainConfig;

use crate::CliError;

/// Everything a `train` run needs.
///
/// ```text
/// data = data/raw/1995_income.csv
/// schema = data/schemas/1995_income.schema
/// out = runs/income
/// seeds = 0, 1, 2, 3, 4
/// split_seed = 0
///
/// [model]
/// head = gmlp
///
/// [train]
/// lr = 0.005
/// ```
///
/// Relative paths are taken relative to the working directory.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub data: PathBuf,
    pub schema: PathBuf,
    pub out: Option<PathBuf>,
    /// Extra seeds for a multi-seed evaluation after the main run; empty
    /// means none.
    pub seeds: Vec<u64>,
    pub split_seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

const TOP_KEYS: [&str; 5] = ["data", "schema", "out", "seeds", "split_seed"];

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: PathBuf::new(),
            schema: PathBuf::new(),
            out: None,
            seeds: Vec::new(),
            split_seed: 0,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    /// Applies every entry of `doc` on top of `self`.
    pub fn apply(&mut self, doc: &KvDocument) -> Result<(), KvError> {
        for e in doc.entries() {
            if !["", "model", "train"].contains(&e.section.as_str()) {
                return Err(e.error("unknown section (expected model or train)"));
            }
        }
        if let Some(e) = doc.unknown_keys("", &TOP_KEYS).next() {
            return Err(e.error("unknown key"));
        }
        for e in doc.entries().iter().filter(|e| e.section.is_empty()) {
            match e.key.as_str() {
                "data" => self.data = PathBuf::from(&e.value),
                "schema" => self.schema = PathBuf::from(&e.value),
                "out" => self.out = Some(PathBuf::from(&e.value)),
                "seeds" => self.seeds = e.parse_list()?,
                "split_seed" => self.split_seed = e.parse()?,
                _ => unreachable!("filtered by unknown_keys"),
            }
        }
        self.model.apply_kv(doc, "model")?;
        self.train.apply_kv(doc, "train")?;
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, KvError> {
        let mut config = Self::default();
        config.apply(&KvDocument::parse(text)?)?;
        Ok(config)
    }

    /// `section.key=value` overrides, applied in order.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<(), CliError> {
        for item in overrides {
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--set expects `key=value`, got `{item}`")))?;
            let (section, key) = key.trim().rsplit_once('.').unwrap_or(("", key.trim()));
            let text = format!("[{section}]\n{key} = {value}\n");
            let doc = KvDocument::parse(&text).map_err(|e| CliError::Usage(format!("--set {item}: {}", e.message)))?;
            self.apply(&doc)
                .map_err(|e| CliError::Usage(format!("--set {item}: {}", e.message)))?;
        }
        Ok(())
    }

    /// Checks that the referenced files exist and the configs are valid.
    pub fn check(&self) -> Result<(), CliError> {
        require_file(&self.schema, "schema")?;
        require_file(&self.data, "data")?;
        self.model
            .validate()
            .map_err(|e| CliError::Usage(e.to_string()))?;
        self.train
            .validate()
            .map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(())
    }

    /// Canonical form; [`RunConfig::parse`] of it yields `self`.
    pub fn to_kv(&self) -> String {
        let mut out = format!(
            "data = {}\nschema = {}\n",
            self.data.display(),
            self.schema.display()
        );
        if let Some(o) = &self.out {
            out.push_str(&format!("out = {}\n", o.display()));
        }
        let seeds: Vec<String> = self.seeds.iter().map(|s| s.to_string()).collect();
        out.push_str(&format!(
            "seeds = {}\nsplit_seed = {}\n\n[model]\n{}\n[train]\n{}",
            seeds.join(", "),
            self.split_seed,
            self.model.to_kv(),
            self.train.to_kv()
        ));
        out
    }
}

pub fn require_file(path: &Path, what: &str) -> Result<(), CliError> {
    if path.as_os_str().is_empty() {
        return Err(CliError::Usage(format!("no {what} file given")));
    }
    if !path.is_file() {
        return Err(CliError::Usage(format!("{what} file not found: {}", path.display())));
    }
    Ok(())
}

/// Name of the environment variable that relocates relative output paths.
pub const OUT_ROOT_ENV: &str = "GATEDTAB_OUT";

/// `configured` if absolute, else joined onto `$GATEDTAB_OUT` (or the working
/// directory). Without a configured path, `runs/<default_name>`.
pub fn output_dir(configured: Option<&Path>, default_name: &str) -> PathBuf {
    let root = std::env::var_os(OUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("."));
    match configured {
        Some(p) if p.is_absolute() => p.to_path_buf(),
        Some(p) => root.join(p),
        None => root.join("runs").join(default_name),
    }
}
