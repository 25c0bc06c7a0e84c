//! Seeded train/val/test splits at dialog granularity.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::Dialog;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub seed: u64,
    pub train_fraction: f64,
    pub val_fraction_of_train: f64,
}

impl SplitSpec {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            train_fraction: 0.8,
            val_fraction_of_train: 0.25,
        }
    }

    /// (train, val, test) sizes for `n` dialogs.
    pub fn sizes(&self, n: usize) -> Result<(usize, usize, usize)> {
        for (name, f) in [
            ("train_fraction", self.train_fraction),
            ("val_fraction_of_train", self.val_fraction_of_train),
        ] {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::Argument(format!("{name} must lie in (0, 1), got {f}")));
            }
        }
        // The epsilon keeps e.g. 0.8 * 10 from flooring to 7.
        let n_train_all = ((self.train_fraction * n as f64) + 1e-9).floor() as usize;
        let n_val = ((self.val_fraction_of_train * n_train_all as f64) + 1e-9).floor() as usize;
        Ok((n_train_all - n_val, n_val, n - n_train_all))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<Dialog>,
    pub val: Vec<Dialog>,
    pub test: Vec<Dialog>,
}

/// Sorts by dialog id, shuffles with the seed, then cuts val, train, test
/// in that order. Input order does not matter.
pub fn split_dataset(dialogs: &[Dialog], spec: &SplitSpec) -> Result<DatasetSplit> {
    if dialogs.len() < 3 {
        return Err(Error::Argument(format!(
            "splitting needs at least 3 dialogs, got {}",
            dialogs.len()
        )));
    }
    let (n_train, n_val, _) = spec.sizes(dialogs.len())?;
    let mut sorted: Vec<&Dialog> = dialogs.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    if let Some(w) = sorted.windows(2).find(|w| w[0].id == w[1].id) {
        return Err(Error::Validation(format!("duplicate dialog id `{}`", w[0].id)));
    }
    sorted.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let take = |r: std::ops::Range<usize>| sorted[r].iter().map(|d| (*d).clone()).collect();
    Ok(DatasetSplit {
        val: take(0..n_val),
        train: take(n_val..n_val + n_train),
        test: take(n_val + n_train..sorted.len()),
    })
}
