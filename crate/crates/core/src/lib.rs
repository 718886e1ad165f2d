//! Instance representation bank (IRB) multiple-instance learning head for
//! scene classification, together with the machinery needed to train it on
//! a CPU: a small reverse-mode autodiff engine, a residual feature
//! extractor, dataset tooling and an ablation harness.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ablation;
pub mod autodiff;
pub mod backbone;
pub mod data;
pub mod error;
pub mod fusion;
pub mod irb;
pub mod model;
pub mod params;
pub mod tensor;
pub mod train;
pub mod visualize;

pub use error::{Error, Result};
pub use tensor::Tensor;

pub use ablation::{ablate, fit_run, run_protocol, AblationTable, ProtocolResult, RunOutcome};
pub use backbone::BackboneConfig;
pub use data::{SceneSample, SyntheticSpec};
pub use fusion::AlignmentMode;
pub use irb::{AttentionActivation, DescriptorConfig};
pub use model::{Model, ModelConfig, Variant};
pub use params::ParamSet;
pub use train::{evaluate, train, DataSource, Evaluation, RunReport, TrainConfig};
