//! Seeded train/valid/test splitting and label-proportion measurement.

use super::{DataError, DomainDataset, TimeSeriesWindow};
use crate::losses::LabelProportions;
use crate::rng;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

/// Split fractions; must be positive and sum to 1.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct SplitFractions {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.7,
            valid: 0.1,
            test: 0.2,
        }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<(), DataError> {
        let parts = [self.train, self.valid, self.test];
        if parts.iter().any(|&f| f <= 0.0) {
            return Err(DataError::InvalidFractions("all fractions must be positive".into()));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(DataError::InvalidFractions(format!("fractions sum to {sum}, expected 1")));
        }
        Ok(())
    }
}

/// Shuffles a domain's windows with the stream `(seed, "split/<id>")`
/// and cuts disjoint train/valid/test splits whose sizes are within one
/// window of exact. The training split is additionally exposed
/// label-stripped for use as an adaptation target.
pub fn split_train_valid_test(
    id: &str,
    windows: Vec<TimeSeriesWindow>,
    fractions: SplitFractions,
    seed: u64,
) -> Result<DomainDataset, DataError> {
    fractions.validate()?;
    let n = windows.len();
    let n_train = (fractions.train * n as f64).round() as usize;
    let n_train_valid = ((fractions.train + fractions.valid) * n as f64).round() as usize;
    let n_valid = n_train_valid.saturating_sub(n_train);
    let n_test = n.saturating_sub(n_train_valid);
    if n_train == 0 || n_valid == 0 || n_test == 0 {
        return Err(DataError::TooFewWindows {
            id: id.to_string(),
            count: n,
            fractions: format!("{}/{}/{}", fractions.train, fractions.valid, fractions.test),
        });
    }

    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(&mut rng::stream(seed, &format!("split/{id}")));
    let mut windows: Vec<Option<TimeSeriesWindow>> = windows.into_iter().map(Some).collect();
    let mut take = |range: &[usize]| -> Vec<TimeSeriesWindow> {
        range.iter().map(|&i| windows[i].take().expect("disjoint split")).collect()
    };
    let train = take(&indices[0..n_train]);
    let valid = take(&indices[n_train..n_train_valid]);
    let test = take(&indices[n_train_valid..]);
    Ok(DomainDataset::from_splits(id.to_string(), train, valid, test))
}

/// Empirical class frequencies of labeled windows; the per-window
/// labels are only counted, not returned.
pub fn measure_label_proportions(
    windows: &[TimeSeriesWindow],
    num_classes: usize,
) -> Result<LabelProportions, DataError> {
    let mut counts = vec![0usize; num_classes];
    let mut labeled = 0usize;
    for w in windows {
        if let Some(y) = w.label {
            if y >= num_classes {
                return Err(DataError::LabelIndexOutOfRange {
                    label: y,
                    classes: num_classes,
                });
            }
            counts[y] += 1;
            labeled += 1;
        }
    }
    if labeled == 0 {
        return Err(DataError::NoLabeledWindows);
    }
    Ok(LabelProportions::from_counts(&counts)?)
}
