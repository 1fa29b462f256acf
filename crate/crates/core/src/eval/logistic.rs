use serde::{Deserialize, Serialize};

use super::{auroc, EvalError};
use crate::data::Dataset;
use crate::train::{ADAM_BETA1, ADAM_BETA2, ADAM_EPS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticConfig {
    pub lr: f64,
    pub max_iters: usize,
    /// L2 penalty on the weights (not the bias).
    pub l2: f64,
    /// Validation AUROC is checked every `eval_every` iterations.
    pub eval_every: usize,
    /// Checks without improvement before stopping.
    pub patience: usize,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        Self {
            lr: 0.05,
            max_iters: 1000,
            l2: 1e-4,
            eval_every: 10,
            patience: 10,
        }
    }
}

/// Logistic regression on one-hot category ids (including the unseen id)
/// and z-scored continuous values, fitted by full-batch Adam with
/// best-on-validation selection.
#[derive(Clone, Debug, PartialEq)]
pub struct LogisticRegression {
    offsets: Vec<usize>,
    n_onehot: usize,
    weights: Vec<f64>,
    bias: f64,
    pub best_val_auroc: f64,
    pub iterations: usize,
}

impl LogisticRegression {
    fn empty(vocab_sizes: &[usize], n_cont: usize) -> Self {
        let mut offsets = Vec::with_capacity(vocab_sizes.len());
        let mut n = 0;
        for &v in vocab_sizes {
            offsets.push(n);
            n += v + 1;
        }
        Self {
            offsets,
            n_onehot: n,
            weights: vec![0.0; n + n_cont],
            bias: 0.0,
            best_val_auroc: f64::NAN,
            iterations: 0,
        }
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + 1
    }

    fn active<'a>(&'a self, data: &'a Dataset, row: usize) -> impl Iterator<Item = usize> + 'a {
        data.cat_row(row)
            .iter()
            .zip(&self.offsets)
            .map(|(&id, &off)| off + id as usize)
    }

    fn logit(&self, data: &Dataset, row: usize) -> f64 {
        let cat: f64 = self.active(data, row).map(|i| self.weights[i]).sum();
        let cont: f64 = data
            .cont_row(row)
            .iter()
            .zip(&self.weights[self.n_onehot..])
            .map(|(x, w)| x * w)
            .sum();
        self.bias + cat + cont
    }

    pub fn decision(&self, data: &Dataset) -> Vec<f64> {
        (0..data.n_rows()).map(|i| self.logit(data, i)).collect()
    }

    pub fn fit(
        train: &Dataset,
        validation: &Dataset,
        vocab_sizes: &[usize],
        config: &LogisticConfig,
    ) -> Result<Self, EvalError> {
        if vocab_sizes.len() != train.n_cat {
            return Err(EvalError::Invalid("vocabulary sizes do not match the data".into()));
        }
        let mut model = Self::empty(vocab_sizes, train.n_cont);
        let k = model.weights.len();
        let n = train.n_rows() as f64;
        let (mut m, mut v) = (vec![0.0; k + 1], vec![0.0; k + 1]);
        let mut best = (f64::NEG_INFINITY, model.weights.clone(), model.bias, 0);
        let mut stale = 0;
        for it in 1..=config.max_iters {
            let mut grad = vec![0.0; k + 1];
            for row in 0..train.n_rows() {
                let z = model.logit(train, row);
                let err = (crate::autodiff::sigmoid(z) - train.labels[row]) / n;
                for i in model.active(train, row) {
                    grad[i] += err;
                }
                for (j, x) in train.cont_row(row).iter().enumerate() {
                    grad[model.n_onehot + j] += err * x;
                }
                grad[k] += err;
            }
            for (g, w) in grad.iter_mut().zip(&model.weights) {
                *g += config.l2 * w;
            }
            let c1 = 1.0 - ADAM_BETA1.powi(it as i32);
            let c2 = 1.0 - ADAM_BETA2.powi(it as i32);
            for i in 0..=k {
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * grad[i];
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * grad[i] * grad[i];
                let step = config.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + ADAM_EPS);
                if i == k {
                    model.bias -= step;
                } else {
                    model.weights[i] -= step;
                }
            }
            model.iterations = it;
            if it % config.eval_every.max(1) == 0 || it == config.max_iters {
                let score = auroc(&model.decision(validation), &validation.labels)?;
                if score > best.0 {
                    best = (score, model.weights.clone(), model.bias, it);
                    stale = 0;
                } else {
                    stale += 1;
                    if stale >= config.patience {
                        break;
                    }
                }
            }
        }
        model.best_val_auroc = best.0;
        model.weights = best.1;
        model.bias = best.2;
        Ok(model)
    }
}
