//! Mini-batch training with Adam and a step learning-rate schedule, plus
//! evaluation.

use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamConfig, AdamState, Graph};
use crate::backbone::Mode;
use crate::data::{dihedral, SceneSample, SyntheticSpec, DIHEDRAL_ORDER};
use crate::error::{Error, Result};
use crate::fusion::argmax;
use crate::model::{Model, ModelConfig, Variant};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    Folder(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub batch_size: usize,
    pub lr_init: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_every: usize,
    pub lr_floor: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub seed: u64,
    pub variant: Variant,
    pub data: DataSource,
    pub train_ratio: f64,
    pub runs: usize,
    /// Random flips and quarter-turns of each training image.
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            batch_size: 32,
            lr_init: 5e-5,
            lr_decay_factor: 10.0,
            lr_decay_every: 20,
            lr_floor: 5e-7,
            weight_decay: 5e-4,
            epochs: 30,
            seed: 0,
            variant: Variant::ResIrbSfSsa,
            data: DataSource::Synthetic(SyntheticSpec::default()),
            train_ratio: 0.8,
            runs: 10,
            augment: false,
        }
    }
}

impl TrainConfig {
    /// Settings for training the default synthetic task from scratch:
    /// larger learning rates, flip/rotation augmentation and five runs.
    /// The schedule shape (divide by 10 every 20 epochs) is unchanged.
    pub fn desk_scale() -> Self {
        Self {
            lr_init: 3e-3,
            lr_floor: 3e-5,
            augment: true,
            runs: 5,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr_init > self.lr_floor && self.lr_floor > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "need lr_init > lr_floor > 0, got {} and {}",
                self.lr_init, self.lr_floor
            )));
        }
        if self.batch_size == 0 || self.lr_decay_every == 0 || self.runs == 0 {
            return Err(Error::InvalidArgument(
                "batch_size, lr_decay_every and runs must be >= 1".into(),
            ));
        }
        if !(self.lr_decay_factor >= 1.0) {
            return Err(Error::InvalidArgument("lr_decay_factor must be >= 1".into()));
        }
        if !(self.train_ratio > 0.0 && self.train_ratio < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "train_ratio must be in (0, 1), got {}",
                self.train_ratio
            )));
        }
        self.model.validate()
    }

    /// `max(lr_floor, lr_init / factor^floor(epoch / every))`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let k = (epoch / self.lr_decay_every) as i32;
        (self.lr_init / self.lr_decay_factor.powi(k)).max(self.lr_floor)
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub l_cls: f64,
    pub l_sealig: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

impl Evaluation {
    pub fn total(&self) -> usize {
        self.confusion.iter().flatten().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub variant: Variant,
    pub epochs: Vec<EpochRecord>,
    pub test: Option<Evaluation>,
    /// Excluded from serialized metrics so reruns stay byte-identical.
    #[serde(skip)]
    pub wall_seconds: f64,
}

/// Trains `config.variant` from parameters seeded by `init_seed`.
/// Batches are reshuffled every epoch from `config.seed`.
pub fn train(config: &TrainConfig, train_set: &[SceneSample], init_seed: u64) -> Result<(Model, RunReport)> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::Dataset("empty training set".into()));
    }
    let start = Instant::now();
    let mut model = Model::init(config.model.clone(), config.variant, init_seed)?;
    let mut adam = AdamState::new(model.params.tensors());
    let adam_cfg = config.adam();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_5eed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(init_seed.wrapping_add(0xd0d0));
    let mut augment_rng = ChaCha8Rng::seed_from_u64(init_seed.wrapping_add(0xa0a0));
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut epochs = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let lr = config.lr_at(epoch);
        order.shuffle(&mut shuffle_rng);
        let (mut sum_cls, mut sum_align, mut sum_total) = (0.0, 0.0, 0.0);
        for (batch_idx, batch) in order.chunks(config.batch_size).enumerate() {
            let mut g = Graph::new();
            let p = model.params.bind(&mut g, true);
            let mut totals = Vec::with_capacity(batch.len());
            for &i in batch {
                let sample = &train_set[i];
                let image = if config.augment {
                    dihedral(&sample.image, augment_rng.gen_range(0..DIHEDRAL_ORDER))
                } else {
                    sample.image.clone()
                };
                let x = g.constant(image);
                let fwd = model.forward(&mut g, &p, x, Mode::Train, &mut dropout_rng)?;
                let l = model.loss(&mut g, &fwd, sample.label)?;
                sum_cls += g.value(l.l_cls).item();
                sum_align += l.l_sealig.map_or(0.0, |s| g.value(s).item());
                totals.push(l.total);
            }
            let s = g.sum(&totals)?;
            let loss = g.scale(s, 1.0 / batch.len() as f64)?;
            let value = g.value(loss).item();
            if !value.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: batch_idx,
                    value,
                });
            }
            sum_total += value * batch.len() as f64;
            g.backward(loss)?;
            let grads = p.grads(&g);
            adam.step(model.params.tensors_mut(), &grads, lr, &adam_cfg)?;
        }
        let n = train_set.len() as f64;
        epochs.push(EpochRecord {
            epoch,
            lr,
            l_cls: sum_cls / n,
            l_sealig: sum_align / n,
            total: sum_total / n,
        });
    }
    let report = RunReport {
        variant: config.variant,
        epochs,
        test: None,
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    Ok((model, report))
}

/// Argmax accuracy and confusion matrix in evaluation mode.
pub fn evaluate(model: &Model, test_set: &[SceneSample]) -> Result<Evaluation> {
    if test_set.is_empty() {
        return Err(Error::Dataset("empty test set".into()));
    }
    let n = model.config.num_classes;
    let preds: Vec<usize> = test_set
        .par_iter()
        .map(|s| model.predict(&s.image).map(|y| argmax(&y)))
        .collect::<Result<_>>()?;
    let mut confusion = vec![vec![0usize; n]; n];
    let mut correct = 0;
    for (s, &p) in test_set.iter().zip(&preds) {
        if s.label >= n {
            return Err(Error::Dataset(format!(
                "label {} of {} exceeds model categories {n}",
                s.label, s.id
            )));
        }
        confusion[s.label][p] += 1;
        correct += usize::from(s.label == p);
    }
    Ok(Evaluation {
        accuracy: correct as f64 / test_set.len() as f64,
        confusion,
    })
}
