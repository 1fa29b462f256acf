//! Grid search over model and optimizer hyper-parameters.
//!
//! A [`GridSpec`] lists values per axis; [`enumerate_grid`] expands the
//! Cartesian product in a fixed lexicographic order and [`run_grid`] evaluates
//! each configuration over a fixed seed list, appending one JSON line per
//! trial to a resumable log.

mod log;
mod spec;

use std::path::Path;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use log::{read_log, timings_path, LogHeader, TrialLog};
pub use spec::GridSpec;

use crate::data::{fit_encoders, split_indices, DataError, RawTable};
use crate::eval::{mean_auroc_over_seeds, Candidate, EvalError, RunSpec, SplitMode};
use crate::kv::KvError;
use crate::model::{HeadKind, InputSpec, Model, ModelConfig};
use crate::nn::{Activation, ModelError};
use crate::train::TrainConfig;

#[derive(Debug, thiserror::Error)]
pub enum HpoError {
    #[error("grid axis `{0}` is empty")]
    EmptyAxis(&'static str),
    #[error(transparent)]
    Kv(#[from] KvError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("trial log was written for spec {found}, current spec is {expected}")]
    SpecMismatch { expected: String, found: String },
    #[error("trial log line {line}: {message}")]
    Log { line: usize, message: String },
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// One point of the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Trial {
    /// Position in enumeration order.
    pub index: usize,
    pub hash: String,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Why the combination cannot be built, if it cannot.
    pub skip: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Ok,
    Diverged,
    Skipped,
}

/// Outcome of one trial, as stored in the log. Metrics are absent unless the
/// status is `ok`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub index: usize,
    pub hash: String,
    pub status: TrialStatus,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    /// Mean and sample std of test AUROC over the seeds.
    pub mean: Option<f64>,
    pub std: Option<f64>,
    /// Mean validation AUROC; trials are ranked on this.
    pub val_mean: Option<f64>,
    pub mean_epochs: Option<f64>,
    pub param_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// `(lr, step, gamma, dropout, heads, depth, dim, activation, head)`.
type Point = (f64, usize, f64, f64, usize, usize, usize, Activation, HeadKind);

fn configure(spec: &GridSpec, p: Point) -> (ModelConfig, TrainConfig) {
    let (lr, step_size, gamma, dropout, heads, depth, dim, activation, head) = p;
    let model = ModelConfig {
        heads,
        embed_dim: dim,
        head,
        gmlp_depth: depth,
        gmlp_dim: dim,
        mlp_hidden: vec![dim; depth],
        activation,
        dropout,
        ..spec.base_model.clone()
    };
    let train = TrainConfig {
        lr,
        gamma,
        step_size,
        ..spec.base_train.clone()
    };
    (model, train)
}

/// SHA-256 over the canonical JSON of everything that determines a trial's
/// outcome, as 32 hex digits.
pub fn config_hash(model: &ModelConfig, train: &TrainConfig, seeds: &[u64], split_seed: u64) -> String {
    let body = serde_json::json!({
        "model": model,
        "train": train,
        "seeds": seeds,
        "split_seed": split_seed,
    });
    let digest = Sha256::digest(body.to_string().as_bytes());
    hex::encode(&digest[..16])
}

/// The full Cartesian product, last axis varying fastest, in the order
/// learning rate, step size, gamma, dropout, heads, depth, dim, activation,
/// head kind. Combinations that fail [`ModelConfig::validate`] are kept and
/// marked skipped.
pub fn enumerate_grid(spec: &GridSpec) -> Result<Vec<Trial>, HpoError> {
    spec.validate()?;
    let mut points: Vec<Point> = Vec::with_capacity(spec.size());
    for &lr in &spec.learning_rates {
        for &step in &spec.step_sizes {
            for &gamma in &spec.gammas {
                for &dropout in &spec.dropouts {
                    for &heads in &spec.heads {
                        for &depth in &spec.depths {
                            for &dim in &spec.dims {
                                for &act in &spec.activations {
                                    for &head in &spec.head_kinds {
                                        points.push((lr, step, gamma, dropout, heads, depth, dim, act, head));
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(points
        .into_iter()
        .enumerate()
        .map(|(index, p)| {
            let (model, train) = configure(spec, p);
            let skip = model
                .validate()
                .err()
                .map(|e| e.to_string())
                .or_else(|| train.validate().err().map(|e| e.to_string()));
            Trial {
                index,
                hash: config_hash(&model, &train, &spec.seeds, spec.split_seed),
                model,
                train,
                skip,
            }
        })
        .collect())
}

/// Counts over the grid; `skipped + run + remaining == grid_size`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct GridProgress {
    pub grid_size: usize,
    pub skipped: usize,
    /// Trials that finished as `ok` or `diverged`.
    pub run: usize,
    pub remaining: usize,
}

impl GridProgress {
    pub fn of(grid_size: usize, results: &[TrialResult]) -> Self {
        let skipped = results.iter().filter(|r| r.status == TrialStatus::Skipped).count();
        let run = results.len() - skipped;
        Self {
            grid_size,
            skipped,
            run,
            remaining: grid_size - skipped - run,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOptions {
    /// Stop after this many `ok`/`diverged` trials; the visiting order is then
    /// a shuffle of the grid seeded by [`GridSpec::shuffle_seed`].
    pub budget: Option<usize>,
    /// No new trials are started once this much time has passed.
    pub time_limit: Option<Duration>,
    /// Trials evaluated concurrently.
    pub parallel: usize,
    /// Continue an existing log instead of starting over.
    pub resume: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            budget: None,
            time_limit: None,
            parallel: 1,
            resume: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridOutcome {
    /// Every record in the log, in log order.
    pub results: Vec<TrialResult>,
    pub best: Option<TrialResult>,
    pub progress: GridProgress,
}

/// Highest mean validation AUROC among `ok` trials; ties go to the smaller
/// model, then to the earlier trial.
pub fn best_trial<'a>(results: impl IntoIterator<Item = &'a TrialResult>) -> Option<&'a TrialResult> {
    results
        .into_iter()
        .filter(|r| r.status == TrialStatus::Ok && r.val_mean.is_some_and(f64::is_finite))
        .min_by(|a, b| {
            b.val_mean
                .unwrap()
                .total_cmp(&a.val_mean.unwrap())
                .then(a.param_count.cmp(&b.param_count))
                .then(a.index.cmp(&b.index))
        })
}

/// Order in which trial indices are visited.
pub fn visit_order(spec: &GridSpec, options: &RunOptions) -> Vec<usize> {
    let mut order: Vec<usize> = (0..spec.size()).collect();
    if options.budget.is_some() {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.shuffle_seed));
    }
    order
}

fn evaluate_trial(
    raw: &RawTable,
    spec: &GridSpec,
    trial: &Trial,
    input: &InputSpec,
) -> Result<TrialResult, HpoError> {
    let mut result = TrialResult {
        index: trial.index,
        hash: trial.hash.clone(),
        status: TrialStatus::Skipped,
        model: trial.model.clone(),
        train: trial.train.clone(),
        seeds: spec.seeds.clone(),
        mean: None,
        std: None,
        val_mean: None,
        mean_epochs: None,
        param_count: 0,
        note: trial.skip.clone(),
    };
    if trial.skip.is_some() {
        return Ok(result);
    }
    let run = RunSpec {
        dataset: raw.name.clone(),
        candidate: Candidate::Model(trial.model.clone()),
        train: trial.train.clone(),
        split: SplitMode::Fixed(spec.split_seed),
    };
    match mean_auroc_over_seeds(raw, &run, &spec.seeds, 1) {
        Ok(eval) => {
            result.status = TrialStatus::Ok;
            result.mean = Some(eval.mean);
            result.std = Some(eval.std);
            result.val_mean = Some(eval.val_mean);
            result.mean_epochs = Some(eval.mean_epochs);
            result.param_count = eval.param_count;
            if !eval.diverged.is_empty() {
                result.note = Some(format!("diverged seeds: {:?}", eval.diverged));
            }
        }
        Err(EvalError::TooManyDiverged { diverged, total }) => {
            result.status = TrialStatus::Diverged;
            result.param_count = Model::build(&trial.model, input, 0)?.param_count();
            result.note = Some(format!("{diverged} of {total} seeds diverged"));
        }
        Err(e) => return Err(e.into()),
    }
    Ok(result)
}

/// Runs the grid on `raw`, logging to `log_path`. Wall-clock times go to
/// [`timings_path`] so the trial log itself is reproducible.
///
/// The records written are independent of `options.parallel`: trials are
/// evaluated in chunks and appended in visiting order.
pub fn run_grid(
    spec: &GridSpec,
    raw: &RawTable,
    log_path: &Path,
    options: &RunOptions,
) -> Result<GridOutcome, HpoError> {
    let trials = enumerate_grid(spec)?;
    let header = LogHeader {
        spec_hash: spec.hash(&raw.fingerprint()),
        dataset: raw.name.clone(),
        grid_size: trials.len(),
    };
    let mut log = TrialLog::open(log_path, &header, options.resume)?;
    let splits = split_indices(raw.n_rows(), spec.split_seed)?;
    let input = InputSpec::of(&fit_encoders(raw, &splits)?);

    let done: std::collections::HashSet<usize> = log.results().iter().map(|r| r.index).collect();
    let mut ran = log.results().iter().filter(|r| r.status != TrialStatus::Skipped).count();
    let budget = options.budget.unwrap_or(usize::MAX);
    let parallel = options.parallel.max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallel)
        .build()
        .map_err(|e| HpoError::Io {
            path: "thread pool".into(),
            message: e.to_string(),
        })?;
    let started = Instant::now();
    let mut pending = visit_order(spec, options)
        .into_iter()
        .filter(|i| !done.contains(i))
        .peekable();

    while ran < budget && pending.peek().is_some() {
        if options.time_limit.is_some_and(|limit| started.elapsed() >= limit) {
            ::log::info!("time limit reached after {ran} trials");
            break;
        }
        let mut chunk: Vec<&Trial> = Vec::new();
        let mut runnable = 0;
        while runnable < parallel && ran + runnable < budget {
            let Some(i) = pending.next() else { break };
            let t = &trials[i];
            if t.skip.is_none() {
                runnable += 1;
            }
            chunk.push(t);
        }
        let timed: Vec<Result<(TrialResult, f64), HpoError>> = pool.install(|| {
            chunk
                .par_iter()
                .map(|t| {
                    let t0 = Instant::now();
                    evaluate_trial(raw, spec, t, &input).map(|r| (r, t0.elapsed().as_secs_f64()))
                })
                .collect()
        });
        for item in timed {
            let (result, secs) = item?;
            if result.status != TrialStatus::Skipped {
                ran += 1;
                ::log::info!(
                    "trial {} ({}) {:?} val {:?} test {:?} in {secs:.1}s",
                    result.index,
                    result.hash,
                    result.status,
                    result.val_mean,
                    result.mean
                );
            }
            log.append(result, secs)?;
        }
    }

    let results = log.into_results();
    Ok(GridOutcome {
        best: best_trial(&results).cloned(),
        progress: GridProgress::of(trials.len(), &results),
        results,
    })
}

/// Best `ok` result per head kind and dim.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DimPoint {
    pub head: HeadKind,
    pub dim: usize,
    pub best_val_auroc: f64,
    /// Test AUROC of the trial with the best validation AUROC.
    pub test_auroc: f64,
    pub trials: usize,
}

/// Hidden-dimension sweep curve for each head kind, sorted by head then dim.
pub fn dim_curve(results: &[TrialResult]) -> Vec<DimPoint> {
    let mut groups: std::collections::BTreeMap<(String, usize), Vec<&TrialResult>> = Default::default();
    for r in results.iter().filter(|r| r.status == TrialStatus::Ok) {
        let dim = match r.model.head {
            HeadKind::Gmlp => r.model.gmlp_dim,
            _ => r.model.embed_dim,
        };
        groups.entry((r.model.head.name().to_string(), dim)).or_default().push(r);
    }
    groups
        .into_values()
        .filter_map(|group| {
            let best = best_trial(group.iter().copied())?;
            Some(DimPoint {
                head: best.model.head,
                dim: match best.model.head {
                    HeadKind::Gmlp => best.model.gmlp_dim,
                    _ => best.model.embed_dim,
                },
                best_val_auroc: best.val_mean?,
                test_auroc: best.mean?,
                trials: group.len(),
            })
        })
        .collect()
}

pub fn dim_curve_csv(points: &[DimPoint]) -> String {
    let mut out = String::from("head,dim,best_val_auroc,test_auroc,trials\n");
    for p in points {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            p.head, p.dim, p.best_val_auroc, p.test_auroc, p.trials
        ));
    }
    out
}

impl TrialResult {
    /// Run-config text (`[model]` and `[train]` sections) reproducing the trial.
    pub fn to_kv(&self) -> String {
        let seeds: Vec<String> = self.seeds.iter().map(|s| s.to_string()).collect();
        format!(
            "# trial {} ({})\nseeds = {}\n\n[model]\n{}\n[train]\n{}",
            self.index,
            self.hash,
            seeds.join(", "),
            self.model.to_kv(),
            self.train.to_kv()
        )
    }
}
