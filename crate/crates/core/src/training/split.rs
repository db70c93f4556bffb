use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::rng::{stream, Purpose};

/// Disjoint train / validation / test design ids, each list sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

/// Split sizes for `n` designs: `⌊70n/100⌋`, `⌊15n/100⌋`, remainder.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train = 70 * n / 100;
    let val = 15 * n / 100;
    (train, val, n - train - val)
}

/// Seeded 70/15/15 split. The input order does not matter: ids are sorted
/// before shuffling.
pub fn split_dataset(ids: &[String], seed: u64) -> Result<SplitAssignment, TrainError> {
    if ids.len() < 3 {
        return Err(TrainError::TooFewDesigns(ids.len()));
    }
    let mut order = ids.to_vec();
    order.sort();
    order.shuffle(&mut stream(seed, Purpose::Split, 0));
    let (n_train, n_val, _) = split_sizes(order.len());
    let mut test = order.split_off(n_train + n_val);
    let mut validation = order.split_off(n_train);
    let mut train = order;
    train.sort();
    validation.sort();
    test.sort();
    Ok(SplitAssignment {
        train,
        validation,
        test,
    })
}

/// Prefixes of one seeded shuffle of `ids`, one per fraction, sized
/// `max(1, ⌊f·|ids|⌋)`; smaller fractions are subsets of larger ones.
pub fn nested_subsets(ids: &[String], fractions: &[f64], seed: u64) -> Result<Vec<Vec<String>>, TrainError> {
    if let Some(&f) = fractions.iter().find(|&&f| !(f > 0.0 && f <= 1.0)) {
        return Err(TrainError::InvalidConfig(format!("fraction {f} outside (0, 1]")));
    }
    let mut order = ids.to_vec();
    order.sort();
    order.shuffle(&mut stream(seed, Purpose::Scaling, 0));
    Ok(fractions
        .iter()
        .map(|&f| {
            let n = ((f * order.len() as f64 + 1e-9).floor() as usize).clamp(1, order.len().max(1));
            let mut subset = order[..n.min(order.len())].to_vec();
            subset.sort();
            subset
        })
        .collect())
}
