//! Fixtures shared by the benchmarks in `benches/`.

use irb_core::{BackboneConfig, Model, ModelConfig, Tensor, Variant};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform `[0, 1)` tensor of the given shape.
pub fn random(shape: &[usize], seed: u64) -> Tensor {
    Tensor::uniform(shape, 0.0, 1.0, &mut rng(seed))
}

/// The default network at input size `size`.
pub fn model(size: usize, variant: Variant) -> Model {
    let config = ModelConfig {
        backbone: BackboneConfig {
            input_size: size,
            ..BackboneConfig::default()
        },
        ..ModelConfig::default()
    };
    Model::init(config, variant, 0).expect("valid config")
}
