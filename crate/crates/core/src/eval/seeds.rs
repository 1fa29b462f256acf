use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{auroc, EvalError, LogisticConfig, LogisticRegression};
use crate::data::{encode, fit_encoders, split_indices, RawTable};
use crate::model::{Batch, HeadKind, InputSpec, Model, ModelConfig};
use crate::train::{train, TrainConfig};

pub const DEFAULT_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

/// How the data split relates to the run seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// Each seed also reshuffles the train/validation/test split.
    PerSeed,
    /// One split for every seed; only initialization and batching vary.
    Fixed(u64),
}

/// Something that can be fitted and scored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Candidate {
    Model(ModelConfig),
    Logistic(LogisticConfig),
}

impl Candidate {
    pub fn id(&self) -> &'static str {
        match self {
            Candidate::Model(c) => match c.head {
                HeadKind::Gmlp => "gated_tab_transformer",
                HeadKind::Mlp => "tab_transformer",
                HeadKind::None => "mlp",
            },
            Candidate::Logistic(_) => "logistic_regression",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub dataset: String,
    pub candidate: Candidate,
    pub train: TrainConfig,
    pub split: SplitMode,
}

/// Outcome of one seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub split_seed: u64,
    pub val_auroc: f64,
    pub test_auroc: f64,
    pub epochs: usize,
    pub diverged: bool,
    pub param_count: usize,
}

/// Test AUROC over seeds. Diverged seeds are listed separately and left out
/// of every statistic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub model_id: String,
    pub dataset: String,
    pub seeds: Vec<u64>,
    pub test_aurocs: Vec<f64>,
    pub val_aurocs: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation (0 for a single seed).
    pub std: f64,
    pub val_mean: f64,
    pub diverged: Vec<u64>,
    pub param_count: usize,
    pub mean_epochs: f64,
}

pub(crate) fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl EvalResult {
    pub fn from_runs(model_id: &str, dataset: &str, runs: &[SeedRun]) -> Self {
        let ok: Vec<&SeedRun> = runs.iter().filter(|r| !r.diverged).collect();
        let test: Vec<f64> = ok.iter().map(|r| r.test_auroc).collect();
        let val: Vec<f64> = ok.iter().map(|r| r.val_auroc).collect();
        let (mean, std) = mean_std(&test);
        let (val_mean, _) = mean_std(&val);
        let epochs: Vec<f64> = ok.iter().map(|r| r.epochs as f64).collect();
        Self {
            model_id: model_id.to_string(),
            dataset: dataset.to_string(),
            seeds: ok.iter().map(|r| r.seed).collect(),
            test_aurocs: test,
            val_aurocs: val,
            mean,
            std,
            val_mean,
            diverged: runs.iter().filter(|r| r.diverged).map(|r| r.seed).collect(),
            param_count: runs.first().map_or(0, |r| r.param_count),
            mean_epochs: mean_std(&epochs).0,
        }
    }
}

/// Splits, fits encoders, trains and scores one seed. The seed drives
/// initialization, batch order, dropout and (in [`SplitMode::PerSeed`]) the
/// split. The test split is scored once, after model selection.
pub fn run_seed(raw: &RawTable, spec: &RunSpec, seed: u64) -> Result<SeedRun, EvalError> {
    let split_seed = match spec.split {
        SplitMode::PerSeed => seed,
        SplitMode::Fixed(s) => s,
    };
    let splits = split_indices(raw.n_rows(), split_seed)?;
    let schema = fit_encoders(raw, &splits)?;
    let data = encode(raw, &schema)?;
    let (tr, va, te) = (
        data.subset(&splits.train),
        data.subset(&splits.validation),
        data.subset(&splits.test),
    );
    match &spec.candidate {
        Candidate::Model(config) => {
            let mut model = Model::build(config, &InputSpec::of(&schema), seed)?;
            let tc = TrainConfig {
                seed,
                ..spec.train.clone()
            };
            let report = train(&mut model, &tr, &va, &tc)?;
            let (val_auroc, test_auroc) = if report.diverged() {
                log::warn!(
                    "{} seed {seed} diverged: {}",
                    spec.candidate.id(),
                    report.diagnostic.as_deref().unwrap_or("")
                );
                (f64::NAN, f64::NAN)
            } else {
                let scores = model.logits(&Batch::of(&te))?;
                (report.best_val_auroc, auroc(&scores, &te.labels)?)
            };
            Ok(SeedRun {
                seed,
                split_seed,
                val_auroc,
                test_auroc,
                epochs: report.epochs.len(),
                diverged: report.diverged(),
                param_count: model.param_count(),
            })
        }
        Candidate::Logistic(config) => {
            let lr = LogisticRegression::fit(&tr, &va, &schema.vocab_sizes(), config)?;
            Ok(SeedRun {
                seed,
                split_seed,
                val_auroc: lr.best_val_auroc,
                test_auroc: auroc(&lr.decision(&te), &te.labels)?,
                epochs: lr.iterations,
                diverged: false,
                param_count: lr.param_count(),
            })
        }
    }
}

/// Runs every seed (up to `parallel` at a time) and aggregates. Fails if more
/// than half of the seeds diverge.
pub fn mean_auroc_over_seeds(
    raw: &RawTable,
    spec: &RunSpec,
    seeds: &[u64],
    parallel: usize,
) -> Result<EvalResult, EvalError> {
    if seeds.len() < 2 {
        return Err(EvalError::Invalid(format!(
            "at least 2 seeds are required, got {}",
            seeds.len()
        )));
    }
    let runs: Vec<SeedRun> = if parallel <= 1 {
        seeds
            .iter()
            .map(|&s| run_seed(raw, spec, s))
            .collect::<Result<_, _>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(parallel)
            .build()
            .map_err(|e| EvalError::Invalid(e.to_string()))?;
        pool.install(|| {
            seeds
                .par_iter()
                .map(|&s| run_seed(raw, spec, s))
                .collect::<Result<_, _>>()
        })?
    };
    let diverged = runs.iter().filter(|r| r.diverged).count();
    if diverged * 2 > runs.len() {
        return Err(EvalError::TooManyDiverged {
            diverged,
            total: runs.len(),
        });
    }
    Ok(EvalResult::from_runs(spec.candidate.id(), &spec.dataset, &runs))
}
