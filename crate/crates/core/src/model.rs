//! The full classifier: backbone, instance transition, descriptor bank and
//! the per-variant classification head.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId};
use crate::backbone::{self, kaiming, BackboneConfig, Mode};
use crate::error::{Error, Result};
use crate::fusion::{self, AlignmentMode, DEFAULT_ALPHA};
use crate::irb::{self, DescriptorConfig, RepresentationBank};
use crate::params::{Bound, ParamSet};
use crate::tensor::Tensor;

/// Ablation rows, from backbone-only to the full model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Res,
    ResAttention,
    ResLms,
    ResCacpr,
    ResIrb,
    ResIrbSf,
    ResIrbSfSsa,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Res,
        Variant::ResAttention,
        Variant::ResLms,
        Variant::ResCacpr,
        Variant::ResIrb,
        Variant::ResIrbSf,
        Variant::ResIrbSfSsa,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Variant::Res => "res",
            Variant::ResAttention => "res_attention",
            Variant::ResLms => "res_lms",
            Variant::ResCacpr => "res_cacpr",
            Variant::ResIrb => "res_irb",
            Variant::ResIrbSf => "res_irb_sf",
            Variant::ResIrbSfSsa => "res_irb_sf_ssa",
        }
    }

    /// Row label in the ablation table.
    pub fn label(self) -> &'static str {
        match self {
            Variant::Res => "Res",
            Variant::ResAttention => "Res+attention",
            Variant::ResLms => "Res+LMS",
            Variant::ResCacpr => "Res+CACPR",
            Variant::ResIrb => "Res+IRB",
            Variant::ResIrbSf => "Res+IRB+SF",
            Variant::ResIrbSfSsa => "Res+IRB+SF+SSA",
        }
    }

    pub fn uses_attention(self) -> bool {
        matches!(
            self,
            Variant::ResAttention | Variant::ResIrb | Variant::ResIrbSf | Variant::ResIrbSfSsa
        )
    }

    pub fn uses_lms(self) -> bool {
        matches!(
            self,
            Variant::ResLms | Variant::ResIrb | Variant::ResIrbSf | Variant::ResIrbSfSsa
        )
    }

    pub fn uses_cacpr(self) -> bool {
        matches!(
            self,
            Variant::ResCacpr | Variant::ResIrb | Variant::ResIrbSf | Variant::ResIrbSfSsa
        )
    }

    pub fn uses_alignment(self) -> bool {
        self == Variant::ResIrbSfSsa
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.id() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown variant {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_classes: usize,
    pub backbone: BackboneConfig,
    pub descriptors: DescriptorConfig,
    pub alignment_mode: AlignmentMode,
    pub alpha: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_classes: 4,
            backbone: BackboneConfig::default(),
            descriptors: DescriptorConfig::default(),
            alignment_mode: AlignmentMode::Entropy,
            alpha: DEFAULT_ALPHA,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 categories, got {}",
                self.num_classes
            )));
        }
        if !(self.alpha >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "alpha must be >= 0, got {}",
                self.alpha
            )));
        }
        self.backbone.validate()?;
        self.descriptors.validate()
    }
}

/// Descriptor outputs that a variant actually constructs.
#[derive(Debug, Clone, Copy, Default)]
pub struct Descriptors {
    pub x2: Option<NodeId>,
    pub x3: Option<NodeId>,
    pub x4: Option<NodeId>,
}

/// Graph nodes produced by one forward pass over a single image.
#[derive(Debug, Clone, Copy)]
pub struct Forward {
    pub features: NodeId,
    pub x1: NodeId,
    pub descriptors: Descriptors,
    /// Fused map for variants that sum their representations.
    pub x_final: Option<NodeId>,
    /// Softmax argument for heads that classify a single map.
    pub logits: Option<NodeId>,
    pub y: NodeId,
}

/// Output of a variant head.
#[derive(Debug, Clone, Copy)]
pub struct Head {
    pub y: NodeId,
    pub x_final: Option<NodeId>,
    pub logits: Option<NodeId>,
}

/// Loss nodes of one sample.
#[derive(Debug, Clone, Copy)]
pub struct LossNodes {
    pub total: NodeId,
    pub l_cls: NodeId,
    pub l_sealig: Option<NodeId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub variant: Variant,
    pub params: ParamSet,
}

impl Model {
    /// Fresh parameters for `variant`. Descriptor parameters exist only for
    /// variants that use them.
    pub fn init(config: ModelConfig, variant: Variant, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        backbone::init_parameters(&config.backbone, &mut rng, &mut params);
        let (c, n) = (config.backbone.out_channels(), config.num_classes);
        params.push("transition.weight", head_kernel(n, c, &mut rng));
        params.push("transition.bias", Tensor::zeros(&[n]));
        if variant.uses_attention() {
            params.push("attention.weight", kaiming(1, n, 1, &mut rng));
            params.push("attention.bias", Tensor::zeros(&[1]));
        }
        Ok(Self {
            config,
            variant,
            params,
        })
    }

    pub fn with_params(config: ModelConfig, variant: Variant, params: ParamSet) -> Result<Self> {
        config.validate()?;
        let reference = Model::init(config.clone(), variant, 0)?;
        let layout_matches = reference.params.len() == params.len()
            && reference
                .params
                .iter()
                .zip(params.iter())
                .all(|((na, ta), (nb, tb))| na == nb && ta.shape() == tb.shape());
        if !layout_matches {
            return Err(Error::Checkpoint(format!(
                "parameter layout does not match variant {variant}"
            )));
        }
        Ok(Self {
            config,
            variant,
            params,
        })
    }

    /// Runs the network on one image inside `g`.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        p: &Bound,
        image: NodeId,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Forward> {
        let features = backbone::forward(g, image, p, &self.config.backbone, mode, rng)?;
        let x1 = irb::instance_transition(g, features, p)?.node;
        let descriptors = self.descriptors(g, p, x1)?;
        let head = classify(g, self.variant, x1, &descriptors)?;
        Ok(Forward {
            features,
            x1,
            descriptors,
            x_final: head.x_final,
            logits: head.logits,
            y: head.y,
        })
    }

    /// Builds only the descriptors this variant needs.
    pub fn descriptors(&self, g: &mut Graph, p: &Bound, x1: NodeId) -> Result<Descriptors> {
        let d = &self.config.descriptors;
        let v = self.variant;
        let x2 = if v.uses_attention() {
            let w = p.get("attention.weight");
            let b = p.get("attention.bias");
            Some(irb::spatial_attention(g, x1, w, b, d.attention_activation)?.node)
        } else {
            None
        };
        let x3 = if v.uses_lms() {
            Some(irb::local_max_select(g, x1, d.lms_window)?.node)
        } else {
            None
        };
        let x4 = if v.uses_cacpr() {
            Some(irb::cacpr(g, x1, d.cacpr_peak_window, d.cacpr_context_window)?.node)
        } else {
            None
        };
        Ok(Descriptors { x2, x3, x4 })
    }

    /// Objective for one labelled sample.
    pub fn loss(&self, g: &mut Graph, fwd: &Forward, label: usize) -> Result<LossNodes> {
        let l_cls = match fwd.logits {
            Some(z) => fusion::classification_loss_from_logits(g, z, label)?,
            None => fusion::classification_loss(g, fwd.y, label)?,
        };
        if !self.variant.uses_alignment() {
            return Ok(LossNodes {
                total: l_cls,
                l_cls,
                l_sealig: None,
            });
        }
        let bank = full_bank(g, fwd.x1, &fwd.descriptors)?;
        let diff = fusion::difference_map(g, &bank)?.node;
        let l_sealig = fusion::alignment_term(g, diff, self.config.alignment_mode)?;
        let total = fusion::total_loss(g, l_cls, l_sealig, self.config.alpha)?;
        Ok(LossNodes {
            total,
            l_cls,
            l_sealig: Some(l_sealig),
        })
    }

    /// Class probabilities for one image, evaluation mode.
    pub fn predict(&self, image: &Tensor) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let x = g.constant(image.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let fwd = self.forward(&mut g, &p, x, Mode::Eval, &mut rng)?;
        Ok(g.value(fwd.y).values().to_vec())
    }
}

/// Kernel for the category head. Smaller than Kaiming because the bag
/// logits sum over every spatial position.
fn head_kernel<R: Rng + ?Sized>(n: usize, c: usize, rng: &mut R) -> Tensor {
    Tensor::randn(&[n, c, 1, 1], (1.0 / c as f64).sqrt() * 0.01, rng)
}

fn full_bank(g: &Graph, x1: NodeId, d: &Descriptors) -> Result<RepresentationBank> {
    match (d.x2, d.x3, d.x4) {
        (Some(x2), Some(x3), Some(x4)) => irb::build_bank(g, x1, x2, x3, x4),
        _ => Err(Error::InvalidArgument(
            "this variant does not build the full representation bank".into(),
        )),
    }
}

/// Variant head: bag distribution `Y`, plus the fused map and logits when
/// the head classifies a single map.
pub fn classify(g: &mut Graph, variant: Variant, x1: NodeId, d: &Descriptors) -> Result<Head> {
    let single =
        |x: Option<NodeId>| x.ok_or_else(|| Error::InvalidArgument(format!("{variant} is missing its descriptor")));
    let from_map = |g: &mut Graph, x: NodeId, x_final: Option<NodeId>| -> Result<Head> {
        let z = fusion::bag_logits(g, x)?;
        Ok(Head {
            y: g.softmax(z)?,
            x_final,
            logits: Some(z),
        })
    };
    match variant {
        Variant::Res => from_map(g, x1, None),
        Variant::ResAttention | Variant::ResLms | Variant::ResCacpr => {
            let xk = single(match variant {
                Variant::ResAttention => d.x2,
                Variant::ResLms => d.x3,
                _ => d.x4,
            })?;
            let fused = g.add(x1, xk)?;
            from_map(g, fused, Some(fused))
        }
        Variant::ResIrb => {
            let bank = full_bank(g, x1, d)?;
            let mut dists = Vec::with_capacity(4);
            for &x in bank.elements() {
                dists.push(fusion::bag_distribution(g, x)?);
            }
            let s = g.sum(&dists)?;
            Ok(Head {
                y: g.scale(s, 0.25)?,
                x_final: None,
                logits: None,
            })
        }
        Variant::ResIrbSf | Variant::ResIrbSfSsa => {
            let bank = full_bank(g, x1, d)?;
            let fused = fusion::aggregate_bank(g, &bank)?.node;
            from_map(g, fused, Some(fused))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> ModelConfig {
        ModelConfig {
            num_classes: 3,
            backbone: BackboneConfig {
                input_size: 32,
                stem_channels: 4,
                block_channels: vec![4, 6],
                dropout_rate: 0.2,
            },
            ..ModelConfig::default()
        }
    }

    #[test]
    fn variant_ids_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.id().parse::<Variant>().unwrap(), v);
        }
        assert!("res_irb_sf_ssa_plus".parse::<Variant>().is_err());
    }

    #[test]
    fn res_has_no_descriptor_parameters() {
        let m = Model::init(small_config(), Variant::Res, 1).unwrap();
        assert!(!m.params.contains_prefix("attention"));
        let full = Model::init(small_config(), Variant::ResIrbSfSsa, 1).unwrap();
        assert!(full.params.contains_prefix("attention"));

        let mut g = Graph::new();
        let p = m.params.bind(&mut g, false);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = g.constant(Tensor::uniform(&[3, 32, 32], 0.0, 1.0, &mut rng));
        let fwd = m.forward(&mut g, &p, x, Mode::Eval, &mut rng).unwrap();
        assert!(fwd.descriptors.x2.is_none());
        assert!(fwd.descriptors.x3.is_none());
        assert!(fwd.descriptors.x4.is_none());
    }

    #[test]
    fn sf_and_ssa_share_forward() {
        let cfg = small_config();
        let a = Model::init(cfg.clone(), Variant::ResIrbSf, 9).unwrap();
        let b = Model::init(cfg, Variant::ResIrbSfSsa, 9).unwrap();
        assert_eq!(a.params, b.params);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = Tensor::uniform(&[3, 32, 32], 0.0, 1.0, &mut rng);
        assert_eq!(a.predict(&img).unwrap(), b.predict(&img).unwrap());

        let mut g = Graph::new();
        let pa = a.params.bind(&mut g, false);
        let x = g.constant(img.clone());
        let fa = a.forward(&mut g, &pa, x, Mode::Eval, &mut rng).unwrap();
        let la = a.loss(&mut g, &fa, 2).unwrap();
        let fb = b.forward(&mut g, &pa, x, Mode::Eval, &mut rng).unwrap();
        let lb = b.loss(&mut g, &fb, 2).unwrap();
        assert!(la.l_sealig.is_none());
        let s = g.value(lb.l_sealig.unwrap()).item();
        assert_eq!(g.value(la.l_cls).item(), g.value(lb.l_cls).item());
        assert_eq!(g.value(lb.total).item(), g.value(lb.l_cls).item() + b.config.alpha * s);
    }

    #[test]
    fn fused_logits_are_four_times_base_when_descriptors_equal_x1() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut g = Graph::new();
        let x1 = g.constant(Tensor::randn(&[3, 6, 6], 1.0, &mut rng));
        let same = Descriptors {
            x2: Some(x1),
            x3: Some(x1),
            x4: Some(x1),
        };
        let res = classify(&mut g, Variant::Res, x1, &Descriptors::default()).unwrap();
        let sf = classify(&mut g, Variant::ResIrbSf, x1, &same).unwrap();
        let (y_res, y_sf) = (res.y, sf.y);
        let base_logits = g.spatial_sum(x1).unwrap();
        let sf_logits = g.spatial_sum(sf.x_final.unwrap()).unwrap();
        assert_eq!(g.value(sf_logits), g.value(sf.logits.unwrap()));
        for (a, b) in g.value(base_logits).values().iter().zip(g.value(sf_logits).values()) {
            assert!((4.0 * a - b).abs() < 1e-12);
        }
        let am = fusion::argmax(g.value(y_res).values());
        let bm = fusion::argmax(g.value(y_sf).values());
        assert_eq!(am, bm);
    }

    #[test]
    fn missing_descriptor_is_rejected() {
        let mut g = Graph::new();
        let x1 = g.constant(Tensor::ones(&[3, 4, 4]));
        assert!(classify(&mut g, Variant::ResIrbSf, x1, &Descriptors::default()).is_err());
        assert!(classify(&mut g, Variant::ResLms, x1, &Descriptors::default()).is_err());
    }

    #[test]
    fn irb_averages_four_distributions() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m = Model::init(small_config(), Variant::ResIrb, 3).unwrap();
        let img = Tensor::uniform(&[3, 32, 32], 0.0, 1.0, &mut rng);
        let y = m.predict(&img).unwrap();
        assert!((y.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn with_params_checks_layout() {
        let cfg = small_config();
        let res = Model::init(cfg.clone(), Variant::Res, 1).unwrap();
        assert!(Model::with_params(cfg.clone(), Variant::ResIrbSf, res.params.clone()).is_err());
        assert!(Model::with_params(cfg, Variant::Res, res.params).is_ok());
    }
}
