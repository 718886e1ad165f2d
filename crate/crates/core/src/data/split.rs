use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::SceneSample;
use crate::error::{Error, Result};

/// Disjoint, per-class stratified train/test partition.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<SceneSample>,
    pub test: Vec<SceneSample>,
    pub train_ratio: f64,
    pub seed: u64,
}

impl DatasetSplit {
    pub fn train_ids(&self) -> Vec<&str> {
        self.train.iter().map(|s| s.id.as_str()).collect()
    }

    pub fn test_ids(&self) -> Vec<&str> {
        self.test.iter().map(|s| s.id.as_str()).collect()
    }
}

/// Shuffles each class with `seed` and sends the first
/// `ceil(ratio * count)` samples of it to the training set.
pub fn stratified_split(samples: &[SceneSample], train_ratio: f64, seed: u64) -> Result<DatasetSplit> {
    if !(train_ratio > 0.0 && train_ratio < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train ratio must be in (0, 1), got {train_ratio}"
        )));
    }
    let n = super::num_classes(samples);
    let mut by_class: Vec<Vec<&SceneSample>> = vec![Vec::new(); n];
    for s in samples {
        by_class[s.label].push(s);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (label, mut members) in by_class.into_iter().enumerate() {
        if members.len() < 2 {
            return Err(Error::Dataset(format!(
                "class {label} has {} samples, need at least 2 to split",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        let k = (train_ratio * members.len() as f64).ceil() as usize;
        // keep at least one test sample per class
        let k = k.min(members.len() - 1);
        train.extend(members[..k].iter().map(|&s| s.clone()));
        test.extend(members[k..].iter().map(|&s| s.clone()));
    }
    Ok(DatasetSplit {
        train,
        test,
        train_ratio,
        seed,
    })
}
