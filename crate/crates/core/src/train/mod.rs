//! Mini-batch training with Adam, step-decay learning rate, early stopping
//! on validation AUROC and best-state restoration.

mod adam;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{Adam, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};

use crate::autodiff::{AutodiffError, Tensor};
use crate::data::Dataset;
use crate::eval::{auroc, EvalError};
use crate::kv::{KvDocument, KvError};
use crate::model::{Batch, Model};
use crate::nn::ModelError;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite gradient in parameter `{param}` at step {step}")]
    NonFiniteGradient { param: String, step: u64 },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Initial learning rate `α`.
    pub lr: f64,
    /// Decay factor `γ`.
    pub gamma: f64,
    /// Epochs between decays `n`.
    pub step_size: usize,
    /// Epochs without validation improvement before stopping `p`.
    pub patience: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.005,
            gamma: 0.5,
            step_size: 10,
            patience: 5,
            max_epochs: 100,
            batch_size: 128,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("learning rate must be positive, got {}", self.lr));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma must lie in (0, 1], got {}", self.gamma));
        }
        if self.step_size == 0 || self.patience == 0 || self.batch_size == 0 || self.max_epochs == 0 {
            return bad("step_size, patience, batch_size and max_epochs must be at least 1".into());
        }
        Ok(())
    }
}

const TRAIN_KEYS: [&str; 7] = [
    "lr",
    "gamma",
    "step_size",
    "patience",
    "max_epochs",
    "batch_size",
    "seed",
];

impl TrainConfig {
    /// Overrides fields from the keys of `section`. Unknown keys are errors.
    pub fn apply_kv(&mut self, doc: &KvDocument, section: &str) -> Result<(), KvError> {
        if let Some(e) = doc.unknown_keys(section, &TRAIN_KEYS).next() {
            return Err(e.error("unknown training key"));
        }
        for e in doc.entries().iter().filter(|e| e.section == section) {
            match e.key.as_str() {
                "lr" => self.lr = e.parse()?,
                "gamma" => self.gamma = e.parse()?,
                "step_size" => self.step_size = e.parse()?,
                "patience" => self.patience = e.parse()?,
                "max_epochs" => self.max_epochs = e.parse()?,
                "batch_size" => self.batch_size = e.parse()?,
                "seed" => self.seed = e.parse()?,
                _ => unreachable!("filtered by unknown_keys"),
            }
        }
        Ok(())
    }

    pub fn to_kv(&self) -> String {
        format!(
            "lr = {}\ngamma = {}\nstep_size = {}\npatience = {}\nmax_epochs = {}\nbatch_size = {}\nseed = {}\n",
            self.lr, self.gamma, self.step_size, self.patience, self.max_epochs, self.batch_size, self.seed
        )
    }
}

/// `α·γ^floor(epoch / n)` for the zero-based epoch index.
pub fn lr_at_epoch(config: &TrainConfig, epoch: usize) -> f64 {
    config.lr * config.gamma.powi((epoch / config.step_size) as i32)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EarlyStop,
    MaxEpochs,
    Diverged,
}

/// One line of the metrics log. `epoch` counts from 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub val_auroc: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// Epoch (from 1) whose parameters were restored; 0 if none completed.
    pub best_epoch: usize,
    pub best_val_auroc: f64,
    pub stop_reason: StopReason,
    /// Why the run diverged, when it did.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

impl TrainReport {
    pub fn diverged(&self) -> bool {
        self.stop_reason == StopReason::Diverged
    }

    pub fn metrics_jsonl(&self) -> String {
        self.epochs
            .iter()
            .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
            .collect()
    }

    pub fn write_metrics(&self, path: impl AsRef<Path>) -> Result<(), TrainError> {
        let path = path.as_ref();
        std::fs::write(path, self.metrics_jsonl()).map_err(|e| TrainError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }
}

/// Patience bookkeeping. A value counts as an improvement only if it is
/// strictly greater than the best so far.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::NEG_INFINITY,
            best_epoch: 0,
            stale: 0,
        }
    }

    /// Records `value` for `epoch`; returns whether it is the new best.
    pub fn observe(&mut self, epoch: usize, value: f64) -> bool {
        if value > self.best {
            self.best = value;
            self.best_epoch = epoch;
            self.stale = 0;
            true
        } else {
            self.stale += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.stale >= self.patience
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

/// Trains on `train`, selecting on the AUROC of `validation`.
pub fn train(
    model: &mut Model,
    train: &Dataset,
    validation: &Dataset,
    config: &TrainConfig,
) -> Result<TrainReport, TrainError> {
    train_with_validator(model, train, config, |m, _| {
        let scores = m.logits(&Batch::of(validation))?;
        Ok(auroc(&scores, &validation.labels)?)
    })
}

/// Training loop with a caller-supplied validation score (higher is better),
/// called after every epoch with the 1-based epoch number.
pub fn train_with_validator<F>(
    model: &mut Model,
    train: &Dataset,
    config: &TrainConfig,
    mut validate: F,
) -> Result<TrainReport, TrainError>
where
    F: FnMut(&Model, usize) -> Result<f64, TrainError>,
{
    config.validate()?;
    if train.n_rows() == 0 {
        return Err(TrainError::InvalidConfig("empty training set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(2);
    let mut adam = Adam::new(model.params.tensors());
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best_params: Vec<Tensor> = model.params.tensors().to_vec();
    let mut epochs = Vec::new();
    let mut order: Vec<usize> = (0..train.n_rows()).collect();
    let mut stop_reason = StopReason::MaxEpochs;
    let mut diagnostic = None;
    let names = model.params.names().to_vec();

    'epochs: for epoch in 1..=config.max_epochs {
        let lr = lr_at_epoch(config, epoch - 1);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch = train.subset(chunk);
            let (loss, grads) =
                match model.loss_and_grads(&Batch::of(&batch), &batch.labels, true, rng.gen()) {
                    Ok(r) => r,
                    Err(ModelError::Autodiff(AutodiffError::NonFinite(msg))) => {
                        stop_reason = StopReason::Diverged;
                        diagnostic = Some(format!("epoch {epoch}: {msg}"));
                        break 'epochs;
                    }
                    Err(e) => return Err(e.into()),
                };
            if !loss.is_finite() {
                stop_reason = StopReason::Diverged;
                diagnostic = Some(format!("non-finite loss {loss} in epoch {epoch}"));
                break 'epochs;
            }
            if let Err(e) = adam.step(model.params.tensors_mut(), &grads, lr, &names) {
                stop_reason = StopReason::Diverged;
                diagnostic = Some(format!("epoch {epoch}: {e}"));
                break 'epochs;
            }
            loss_sum += loss * chunk.len() as f64;
        }
        let val_auroc = validate(model, epoch)?;
        epochs.push(EpochRecord {
            epoch,
            loss: loss_sum / train.n_rows() as f64,
            val_auroc,
            lr,
        });
        if stopper.observe(epoch, val_auroc) {
            best_params.clone_from_slice(model.params.tensors());
        }
        if stopper.should_stop() {
            stop_reason = StopReason::EarlyStop;
            break;
        }
    }
    model.load_params(best_params)?;
    let best_epoch = stopper.best_epoch();
    Ok(TrainReport {
        epochs,
        best_epoch,
        best_val_auroc: if best_epoch == 0 { f64::NAN } else { stopper.best() },
        stop_reason,
        diagnostic,
    })
}
