//! AUROC, ROC curves, multi-seed evaluation and gain tables.

mod auroc;
mod compare;
mod logistic;
mod seeds;

pub use auroc::{auroc, roc_csv, roc_points, trapezoid_area};
pub use compare::{compare_models, reference_gain, gain_grid_csv, Gain, GainTable};
pub use logistic::{LogisticConfig, LogisticRegression};
pub use seeds::{
    mean_auroc_over_seeds, run_seed, Candidate, EvalResult, RunSpec, SeedRun, SplitMode,
    DEFAULT_SEEDS,
};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("{scores} scores but {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("non-finite score at index {0}")]
    NonFinite(usize),
    #[error("label at index {index} is {value}, expected 0 or 1")]
    InvalidLabel { index: usize, value: f64 },
    #[error("AUROC is undefined when only one class is present")]
    SingleClass,
    #[error("{0}")]
    Invalid(String),
    #[error("{diverged} of {total} seed runs diverged")]
    TooManyDiverged { diverged: usize, total: usize },
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
    #[error("training failed: {0}")]
    Train(String),
}

impl From<crate::train::TrainError> for EvalError {
    fn from(e: crate::train::TrainError) -> Self {
        EvalError::Train(e.to_string())
    }
}

impl From<crate::nn::ModelError> for EvalError {
    fn from(e: crate::nn::ModelError) -> Self {
        EvalError::Train(e.to_string())
    }
}
