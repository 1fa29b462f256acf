use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DataError;

pub const MIN_ROWS: usize = 20;

/// Disjoint train/validation/test row indices covering `0..n`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

impl Splits {
    pub fn n_rows(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }
}

/// Seeded shuffle, then `floor(0.65 n)` train rows, `floor(0.15 n)`
/// validation rows and the rest for test.
pub fn split_indices(n_rows: usize, seed: u64) -> Result<Splits, DataError> {
    if n_rows < MIN_ROWS {
        return Err(DataError::TooFewRows {
            rows: n_rows,
            minimum: MIN_ROWS,
        });
    }
    let mut idx: Vec<usize> = (0..n_rows).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = n_rows * 65 / 100;
    let n_val = n_rows * 15 / 100;
    let test = idx.split_off(n_train + n_val);
    let validation = idx.split_off(n_train);
    Ok(Splits {
        train: idx,
        validation,
        test,
        seed,
    })
}
