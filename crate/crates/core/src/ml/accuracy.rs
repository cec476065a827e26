use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{train, Hyperparams, MlError, TrainingTable};

/// What `accuracy_pct` measures; a regression model has no native accuracy.
pub const ACCURACY_DEFINITION: &str = "above/below baseline-median classification, k-fold";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub accuracy_pct: f64,
    pub folds: usize,
    pub definition: String,
}

/// k-fold cross-validated share of held-out days where the prediction and the
/// actual target fall on the same side of the table's target median.
pub fn accuracy(table: &TrainingTable, hp: &Hyperparams, k: usize, seed: u64) -> Result<AccuracyReport, MlError> {
    let n = table.len();
    let required = k.max(2) * hp.min_samples_leaf;
    if k < 2 || n < required {
        return Err(MlError::TooFewRowsForFolds { k, rows: n, required });
    }
    let median = crate::num::median(&table.target).unwrap_or(0.0);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut correct = 0usize;
    for fold in 0..k {
        let (test, fit): (Vec<usize>, Vec<usize>) =
            order.iter().enumerate().fold((Vec::new(), Vec::new()), |(mut test, mut fit), (pos, &i)| {
                if pos % k == fold {
                    test.push(i);
                } else {
                    fit.push(i);
                }
                (test, fit)
            });
        let model = train(&table.select(&fit), hp, seed.wrapping_add(fold as u64))?;
        correct +=
            test.iter().filter(|&&i| (model.predict(&table.rows[i]) > median) == (table.target[i] > median)).count();
    }
    Ok(AccuracyReport {
        accuracy_pct: 100.0 * correct as f64 / n as f64,
        folds: k,
        definition: ACCURACY_DEFINITION.into(),
    })
}
