//! Config file schema and flag overrides.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use irb_core::{AlignmentMode, AttentionActivation, DataSource, SyntheticSpec, TrainConfig, Variant};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Optimiser settings as published.
    #[default]
    Paper,
    /// Larger learning rates and augmentation for training from scratch.
    Desk,
}

/// Every key is optional; missing keys fall back to the preset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub preset: Option<Preset>,
    pub seed: Option<u64>,
    pub data_seed: Option<u64>,
    pub variant: Option<Variant>,
    /// `"synthetic"` or a directory with one subdirectory per class.
    pub data: Option<String>,
    pub train_ratio: Option<f64>,
    pub runs: Option<usize>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr_init: Option<f64>,
    pub lr_decay_factor: Option<f64>,
    pub lr_decay_every: Option<usize>,
    pub lr_floor: Option<f64>,
    pub weight_decay: Option<f64>,
    pub dropout: Option<f64>,
    pub alpha: Option<f64>,
    pub alignment_mode: Option<AlignmentMode>,
    pub attention_activation: Option<AttentionActivation>,
    pub augment: Option<bool>,
    pub input_size: Option<usize>,
    pub stem_channels: Option<usize>,
    pub block_channels: Option<Vec<usize>>,
    pub lms_window: Option<usize>,
    pub cacpr_peak_window: Option<usize>,
    pub cacpr_context_window: Option<usize>,
    pub num_classes: Option<usize>,
    pub samples_per_class: Option<usize>,
    pub noise_std: Option<f64>,
    pub distractors: Option<usize>,
}

impl ConfigFile {
    pub fn read(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// Keys set in `other` replace those in `self`.
    pub fn merge(self, other: ConfigFile) -> ConfigFile {
        macro_rules! pick {
            ($($f:ident),*) => { ConfigFile { $($f: other.$f.or(self.$f)),* } };
        }
        pick!(
            preset,
            seed,
            data_seed,
            variant,
            data,
            train_ratio,
            runs,
            epochs,
            batch_size,
            lr_init,
            lr_decay_factor,
            lr_decay_every,
            lr_floor,
            weight_decay,
            dropout,
            alpha,
            alignment_mode,
            attention_activation,
            augment,
            input_size,
            stem_channels,
            block_channels,
            lms_window,
            cacpr_peak_window,
            cacpr_context_window,
            num_classes,
            samples_per_class,
            noise_std,
            distractors
        )
    }
}

/// Fully resolved run settings.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub preset: Preset,
    pub train: TrainConfig,
    /// Seed of the synthetic generator, independent of the split seeds.
    pub data_seed: u64,
}

impl Settings {
    pub fn resolve(file: &ConfigFile) -> anyhow::Result<Self> {
        let preset = file.preset.unwrap_or_default();
        let mut t = match preset {
            Preset::Paper => TrainConfig::default(),
            Preset::Desk => TrainConfig::desk_scale(),
        };
        let mut spec = match &t.data {
            DataSource::Synthetic(s) => s.clone(),
            DataSource::Folder(_) => SyntheticSpec::default(),
        };

        macro_rules! set {
            ($key:ident => $($target:tt)+) => {
                if let Some(v) = file.$key.clone() {
                    $($target)+ = v;
                }
            };
        }
        set!(seed => t.seed);
        set!(variant => t.variant);
        set!(train_ratio => t.train_ratio);
        set!(runs => t.runs);
        set!(epochs => t.epochs);
        set!(batch_size => t.batch_size);
        set!(lr_init => t.lr_init);
        set!(lr_decay_factor => t.lr_decay_factor);
        set!(lr_decay_every => t.lr_decay_every);
        set!(lr_floor => t.lr_floor);
        set!(weight_decay => t.weight_decay);
        set!(augment => t.augment);
        set!(dropout => t.model.backbone.dropout_rate);
        set!(alpha => t.model.alpha);
        set!(alignment_mode => t.model.alignment_mode);
        set!(attention_activation => t.model.descriptors.attention_activation);
        set!(input_size => t.model.backbone.input_size);
        set!(stem_channels => t.model.backbone.stem_channels);
        set!(block_channels => t.model.backbone.block_channels);
        set!(lms_window => t.model.descriptors.lms_window);
        set!(cacpr_peak_window => t.model.descriptors.cacpr_peak_window);
        set!(cacpr_context_window => t.model.descriptors.cacpr_context_window);
        set!(num_classes => spec.num_classes);
        set!(samples_per_class => spec.samples_per_class);
        set!(noise_std => spec.noise_std);
        set!(distractors => spec.distractors);

        spec.image_size = t.model.backbone.input_size;
        t.model.num_classes = spec.num_classes;
        t.data = match file.data.as_deref() {
            None | Some("synthetic") => {
                spec.validate()?;
                DataSource::Synthetic(spec)
            }
            Some("") => bail!("data must be \"synthetic\" or a directory"),
            Some(dir) => DataSource::Folder(PathBuf::from(dir)),
        };
        t.validate()?;
        Ok(Self {
            preset,
            train: t,
            data_seed: file.data_seed.unwrap_or(0),
        })
    }

    /// The settings as a config file with every key present.
    pub fn to_file(&self) -> ConfigFile {
        let t = &self.train;
        let m = &t.model;
        let (data, spec) = match &t.data {
            DataSource::Synthetic(s) => ("synthetic".to_string(), Some(s)),
            DataSource::Folder(p) => (p.display().to_string(), None),
        };
        ConfigFile {
            preset: Some(self.preset),
            seed: Some(t.seed),
            data_seed: Some(self.data_seed),
            variant: Some(t.variant),
            data: Some(data),
            train_ratio: Some(t.train_ratio),
            runs: Some(t.runs),
            epochs: Some(t.epochs),
            batch_size: Some(t.batch_size),
            lr_init: Some(t.lr_init),
            lr_decay_factor: Some(t.lr_decay_factor),
            lr_decay_every: Some(t.lr_decay_every),
            lr_floor: Some(t.lr_floor),
            weight_decay: Some(t.weight_decay),
            dropout: Some(m.backbone.dropout_rate),
            alpha: Some(m.alpha),
            alignment_mode: Some(m.alignment_mode),
            attention_activation: Some(m.descriptors.attention_activation),
            augment: Some(t.augment),
            input_size: Some(m.backbone.input_size),
            stem_channels: Some(m.backbone.stem_channels),
            block_channels: Some(m.backbone.block_channels.clone()),
            lms_window: Some(m.descriptors.lms_window),
            cacpr_peak_window: Some(m.descriptors.cacpr_peak_window),
            cacpr_context_window: Some(m.descriptors.cacpr_context_window),
            num_classes: Some(m.num_classes),
            samples_per_class: spec.map(|s| s.samples_per_class),
            noise_std: spec.map(|s| s.noise_std),
            distractors: spec.map(|s| s.distractors),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&self.to_file()).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_published_defaults() {
        let s = Settings::resolve(&ConfigFile::default()).unwrap();
        assert_eq!(s.train, TrainConfig::default());
        assert_eq!(s.data_seed, 0);
    }

    #[test]
    fn desk_preset_then_overrides() {
        let file: ConfigFile = toml::from_str(
            "preset = \"desk\"\nepochs = 3\nvariant = \"res_lms\"\nblock_channels = [8, 16]\nalignment_mode = \"norm\"\n",
        )
        .unwrap();
        let s = Settings::resolve(&file).unwrap();
        assert_eq!(s.train.lr_init, TrainConfig::desk_scale().lr_init);
        assert_eq!(s.train.epochs, 3);
        assert_eq!(s.train.variant, Variant::ResLms);
        assert_eq!(s.train.model.backbone.block_channels, vec![8, 16]);
        assert_eq!(s.train.model.alignment_mode, AlignmentMode::Norm);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(toml::from_str::<ConfigFile>("epoch = 3").is_err());
        assert!(toml::from_str::<ConfigFile>("variant = \"res_foo\"").is_err());
        let bad = ConfigFile {
            lr_init: Some(1e-9),
            ..ConfigFile::default()
        };
        assert!(Settings::resolve(&bad).is_err());
    }

    #[test]
    fn later_layers_win() {
        let base = ConfigFile {
            seed: Some(1),
            runs: Some(2),
            ..ConfigFile::default()
        };
        let top = ConfigFile {
            seed: Some(9),
            ..ConfigFile::default()
        };
        let m = base.merge(top);
        assert_eq!((m.seed, m.runs), (Some(9), Some(2)));
    }

    #[test]
    fn effective_config_round_trips() {
        let file = ConfigFile {
            preset: Some(Preset::Desk),
            seed: Some(7),
            input_size: Some(32),
            num_classes: Some(3),
            ..ConfigFile::default()
        };
        let s = Settings::resolve(&file).unwrap();
        let back: ConfigFile = toml::from_str(&s.to_toml()).unwrap();
        assert_eq!(Settings::resolve(&back).unwrap(), s);
    }
}
