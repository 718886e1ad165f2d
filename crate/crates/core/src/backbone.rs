//! Small residual convolutional feature extractor.
//!
//! Layout: 3x3 stride-2 stem with ReLU, then one residual block per entry of
//! `block_channels`. Each block is `3x3 conv (stride 2) -> ReLU -> 3x3 conv`
//! added to a skip path, which is a 1x1 stride-2 projection. The output map
//! is `input_size / 8` on each side for the default two blocks. Dropout is
//! applied once, to the final map, in training mode only.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId};
use crate::error::{shape_err, Error, Result};
use crate::params::{Bound, ParamSet};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub input_size: usize,
    pub stem_channels: usize,
    pub block_channels: Vec<usize>,
    pub dropout_rate: f64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            input_size: 64,
            stem_channels: 16,
            block_channels: vec![32, 64],
            dropout_rate: 0.2,
        }
    }
}

impl BackboneConfig {
    pub fn total_stride(&self) -> usize {
        2usize.pow(1 + self.block_channels.len() as u32)
    }

    pub fn out_channels(&self) -> usize {
        *self.block_channels.last().unwrap_or(&self.stem_channels)
    }

    pub fn out_size(&self) -> usize {
        self.input_size / self.total_stride()
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 || !self.input_size.is_multiple_of(self.total_stride()) {
            return Err(Error::InvalidArgument(format!(
                "input_size {} must be a positive multiple of {}",
                self.input_size,
                self.total_stride()
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidArgument(format!(
                "dropout_rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        if self.stem_channels == 0 || self.block_channels.contains(&0) {
            return Err(Error::InvalidArgument("channel widths must be positive".into()));
        }
        Ok(())
    }
}

/// Kaiming-normal kernel of shape `[c_out, c_in, k, k]`.
pub fn kaiming<R: Rng + ?Sized>(c_out: usize, c_in: usize, k: usize, rng: &mut R) -> Tensor {
    let fan_in = (c_in * k * k) as f64;
    Tensor::randn(&[c_out, c_in, k, k], (2.0 / fan_in).sqrt(), rng)
}

/// Appends backbone parameters (Kaiming kernels, zero biases) to `set`.
pub fn init_parameters<R: Rng + ?Sized>(config: &BackboneConfig, rng: &mut R, set: &mut ParamSet) {
    set.push("stem.weight", kaiming(config.stem_channels, 3, 3, rng));
    set.push("stem.bias", Tensor::zeros(&[config.stem_channels]));
    let mut c_in = config.stem_channels;
    for (i, &c) in config.block_channels.iter().enumerate() {
        set.push(format!("block{i}.conv1.weight"), kaiming(c, c_in, 3, rng));
        set.push(format!("block{i}.conv1.bias"), Tensor::zeros(&[c]));
        set.push(format!("block{i}.conv2.weight"), kaiming(c, c, 3, rng));
        set.push(format!("block{i}.conv2.bias"), Tensor::zeros(&[c]));
        set.push(format!("block{i}.proj.weight"), kaiming(c, c_in, 1, rng));
        set.push(format!("block{i}.proj.bias"), Tensor::zeros(&[c]));
        c_in = c;
    }
}

/// Standalone parameter set for a backbone, seeded.
pub fn init_backbone(config: &BackboneConfig, seed: u64) -> ParamSet {
    let mut set = ParamSet::new();
    init_parameters(config, &mut ChaCha8Rng::seed_from_u64(seed), &mut set);
    set
}

/// One residual block. The skip path is a 1x1 projection with the block's
/// stride when `{prefix}.proj.weight` is bound, otherwise identity.
pub fn residual_block(
    g: &mut Graph,
    x: NodeId,
    p: &Bound,
    prefix: &str,
    stride: usize,
    has_projection: bool,
) -> Result<NodeId> {
    let h = g.conv2d(
        x,
        p.get(&format!("{prefix}.conv1.weight")),
        p.get(&format!("{prefix}.conv1.bias")),
        stride,
        1,
    )?;
    let h = g.relu(h)?;
    let h = g.conv2d(
        h,
        p.get(&format!("{prefix}.conv2.weight")),
        p.get(&format!("{prefix}.conv2.bias")),
        1,
        1,
    )?;
    let skip = if has_projection {
        g.conv2d(
            x,
            p.get(&format!("{prefix}.proj.weight")),
            p.get(&format!("{prefix}.proj.bias")),
            stride,
            0,
        )?
    } else {
        x
    };
    g.add(h, skip)
}

/// Inverted-dropout mask: each entry is 0 with probability `rate`, else
/// `1 / (1 - rate)`.
pub fn dropout_mask<R: Rng + ?Sized>(len: usize, rate: f64, rng: &mut R) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
        .collect()
}

/// Feature map `[C, S/8, S/8]` for an image `[3, S, S]`.
pub fn forward<R: Rng + ?Sized>(
    g: &mut Graph,
    image: NodeId,
    p: &Bound,
    config: &BackboneConfig,
    mode: Mode,
    rng: &mut R,
) -> Result<NodeId> {
    let s = g.shape(image);
    if s != [3, config.input_size, config.input_size] {
        return Err(shape_err(
            "backbone",
            format!("expected image [3, {0}, {0}], got {s:?}", config.input_size),
        ));
    }
    // [0, 1] pixels are centred to [-1, 1]
    let half = g.constant(Tensor::full(&[1, 1, 1], 0.5));
    let centred = g.sub(image, half)?;
    let centred = g.scale(centred, 2.0)?;
    let x = g.conv2d(centred, p.get("stem.weight"), p.get("stem.bias"), 2, 1)?;
    let mut x = g.relu(x)?;
    for i in 0..config.block_channels.len() {
        x = residual_block(g, x, p, &format!("block{i}"), 2, true)?;
    }
    if mode == Mode::Train && config.dropout_rate > 0.0 {
        let mask = dropout_mask(g.value(x).len(), config.dropout_rate, rng);
        x = g.mask_mul(x, mask)?;
    }
    Ok(x)
}
