use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::HpoError;
use crate::eval::DEFAULT_SEEDS;
use crate::kv::{KvDocument, KvEntry, KvError};
use crate::model::{HeadKind, ModelConfig};
use crate::nn::Activation;
use crate::train::TrainConfig;

/// Value lists per axis plus the fixed parts of every trial.
///
/// `depths` sets the number of gMLP blocks, or the number of MLP hidden
/// layers; `dims` sets the embedding width, the gMLP width and every MLP
/// hidden width.
///
/// Spec files use a `[grid]` section of comma-separated lists and optional
/// `[model]` / `[train]` sections for the base configuration:
///
/// ```text
/// [grid]
/// learning_rates = 0.01, 0.005
/// dims = 8, 16
/// head_kinds = gmlp, mlp
/// seeds = 0, 1, 2, 3, 4
///
/// [train]
/// max_epochs = 30
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub learning_rates: Vec<f64>,
    pub step_sizes: Vec<usize>,
    pub gammas: Vec<f64>,
    pub dropouts: Vec<f64>,
    pub heads: Vec<usize>,
    pub depths: Vec<usize>,
    pub dims: Vec<usize>,
    pub activations: Vec<Activation>,
    pub head_kinds: Vec<HeadKind>,
    pub base_model: ModelConfig,
    pub base_train: TrainConfig,
    /// Seeds every trial is averaged over.
    pub seeds: Vec<u64>,
    /// The one data split shared by all trials and seeds.
    pub split_seed: u64,
    /// Seeds the visiting order in budgeted runs.
    pub shuffle_seed: u64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            learning_rates: vec![0.05, 0.01, 0.005, 0.001, 0.0005],
            step_sizes: vec![5, 10, 15],
            gammas: vec![0.1, 0.2, 0.5],
            dropouts: vec![0.0, 0.1, 0.2, 0.5],
            heads: vec![4, 8, 12, 16],
            depths: vec![2, 4, 6, 8],
            dims: vec![8, 16, 32, 64, 128, 256],
            activations: vec![Activation::Relu],
            head_kinds: vec![HeadKind::Gmlp],
            base_model: ModelConfig::default(),
            base_train: TrainConfig::default(),
            seeds: DEFAULT_SEEDS.to_vec(),
            split_seed: 0,
            shuffle_seed: 0,
        }
    }
}

const GRID_KEYS: [&str; 12] = [
    "learning_rates",
    "step_sizes",
    "gammas",
    "dropouts",
    "heads",
    "depths",
    "dims",
    "activations",
    "head_kinds",
    "seeds",
    "split_seed",
    "shuffle_seed",
];

fn nonempty<T: std::str::FromStr>(e: &KvEntry) -> Result<Vec<T>, KvError>
where
    T::Err: std::fmt::Display,
{
    let items = e.parse_list()?;
    if items.is_empty() {
        return Err(e.error("list is empty"));
    }
    Ok(items)
}

fn join<T: std::fmt::Display>(items: &[T]) -> String {
    items.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
}

impl GridSpec {
    pub fn validate(&self) -> Result<(), HpoError> {
        let axes = [
            ("learning_rates", self.learning_rates.len()),
            ("step_sizes", self.step_sizes.len()),
            ("gammas", self.gammas.len()),
            ("dropouts", self.dropouts.len()),
            ("heads", self.heads.len()),
            ("depths", self.depths.len()),
            ("dims", self.dims.len()),
            ("activations", self.activations.len()),
            ("head_kinds", self.head_kinds.len()),
            ("seeds", self.seeds.len()),
        ];
        match axes.iter().find(|(_, n)| *n == 0) {
            Some((name, _)) => Err(HpoError::EmptyAxis(name)),
            None => Ok(()),
        }
    }

    /// Number of grid points.
    pub fn size(&self) -> usize {
        self.learning_rates.len()
            * self.step_sizes.len()
            * self.gammas.len()
            * self.dropouts.len()
            * self.heads.len()
            * self.depths.len()
            * self.dims.len()
            * self.activations.len()
            * self.head_kinds.len()
    }

    /// Identifies the spec together with the dataset layout it runs on.
    pub fn hash(&self, dataset_fingerprint: &str) -> String {
        let body = serde_json::json!({ "spec": self, "dataset": dataset_fingerprint });
        hex::encode(&Sha256::digest(body.to_string().as_bytes())[..16])
    }

    /// Starts from [`GridSpec::default`] and overrides whatever the text sets.
    pub fn parse(text: &str) -> Result<Self, HpoError> {
        let doc = KvDocument::parse(text)?;
        for e in doc.entries() {
            if !["grid", "model", "train"].contains(&e.section.as_str()) {
                return Err(e.error("unknown section (expected grid, model or train)").into());
            }
        }
        if let Some(e) = doc.unknown_keys("grid", &GRID_KEYS).next() {
            return Err(e.error("unknown grid key").into());
        }
        let mut spec = Self::default();
        spec.base_model.apply_kv(&doc, "model")?;
        spec.base_train.apply_kv(&doc, "train")?;
        for e in doc.entries().iter().filter(|e| e.section == "grid") {
            match e.key.as_str() {
                "learning_rates" => spec.learning_rates = nonempty(e)?,
                "step_sizes" => spec.step_sizes = nonempty(e)?,
                "gammas" => spec.gammas = nonempty(e)?,
                "dropouts" => spec.dropouts = nonempty(e)?,
                "heads" => spec.heads = nonempty(e)?,
                "depths" => spec.depths = nonempty(e)?,
                "dims" => spec.dims = nonempty(e)?,
                "activations" => spec.activations = nonempty(e)?,
                "head_kinds" => spec.head_kinds = nonempty(e)?,
                "seeds" => spec.seeds = nonempty(e)?,
                "split_seed" => spec.split_seed = e.parse()?,
                "shuffle_seed" => spec.shuffle_seed = e.parse()?,
                _ => unreachable!("filtered by unknown_keys"),
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    /// Canonical text form; [`GridSpec::parse`] of it yields `self`.
    pub fn to_kv(&self) -> String {
        format!(
            "[grid]\nlearning_rates = {}\nstep_sizes = {}\ngammas = {}\ndropouts = {}\nheads = {}\ndepths = {}\ndims = {}\nactivations = {}\nhead_kinds = {}\nseeds = {}\nsplit_seed = {}\nshuffle_seed = {}\n\n[model]\n{}\n[train]\n{}",
            join(&self.learning_rates),
            join(&self.step_sizes),
            join(&self.gammas),
            join(&self.dropouts),
            join(&self.heads),
            join(&self.depths),
            join(&self.dims),
            join(&self.activations),
            join(&self.head_kinds),
            join(&self.seeds),
            self.split_seed,
            self.shuffle_seed,
            self.base_model.to_kv(),
            self.base_train.to_kv(),
        )
    }
}
