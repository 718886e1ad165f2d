//! Semantic fusion of the representation bank and the loss stack.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId};
use crate::error::{shape_err, Error, Result};
use crate::irb::{InstanceRepresentation, RepresentationBank, Role};

/// Clamp applied to probabilities before taking logarithms.
pub const LOG_EPS: f64 = 1e-12;

pub const DEFAULT_ALPHA: f64 = 5e-4;

/// Probability vector over scene categories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BagDistribution {
    probs: Vec<f64>,
}

impl BagDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        let sum: f64 = probs.iter().sum();
        if probs.len() < 2 || (sum - 1.0).abs() > 1e-9 || probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidArgument(format!(
                "not a distribution over >= 2 categories: {probs:?}"
            )));
        }
        Ok(Self { probs })
    }

    pub fn from_node(g: &Graph, id: NodeId) -> Result<Self> {
        Self::new(g.value(id).values().to_vec())
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn num_categories(&self) -> usize {
        self.probs.len()
    }

    /// Most probable category; the lowest index wins ties.
    pub fn argmax(&self) -> usize {
        argmax(&self.probs)
    }
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlignmentMode {
    /// Mean binary entropy of the difference distribution.
    #[default]
    Entropy,
    /// Mean of the difference map itself.
    Norm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_cls: f64,
    pub l_sealig: f64,
    pub alpha: f64,
    pub total: f64,
}

/// `X_final = X1 + X2 + X3 + X4`.
pub fn aggregate_bank(g: &mut Graph, bank: &RepresentationBank) -> Result<InstanceRepresentation> {
    let node = g.sum(bank.elements())?;
    Ok(InstanceRepresentation {
        node,
        role: Role::Final,
    })
}

/// `softmax(Σ_ij x[c, i, j])`.
pub fn bag_distribution(g: &mut Graph, x: NodeId) -> Result<NodeId> {
    let logits = bag_logits(g, x)?;
    g.softmax(logits)
}

/// Per-category spatial sums, the argument of the softmax in [`bag_distribution`].
pub fn bag_logits(g: &mut Graph, x: NodeId) -> Result<NodeId> {
    let s = g.shape(x);
    if s.len() != 3 || s[0] < 2 {
        return Err(shape_err(
            "bag_distribution",
            format!("expected [N,H,W] with N >= 2, got {s:?}"),
        ));
    }
    g.spatial_sum(x)
}

/// Cross-entropy against a one-hot label: `-ln p[label]`.
pub fn classification_loss(g: &mut Graph, y_pred: NodeId, label: usize) -> Result<NodeId> {
    let n = g.shape(y_pred)[0];
    if label >= n {
        return Err(Error::InvalidArgument(format!(
            "label {label} out of range for {n} categories"
        )));
    }
    g.neg_log_pick(y_pred, label, LOG_EPS)
}

/// Cross-entropy of `softmax(logits)` against a one-hot label. Equal to
/// [`classification_loss`] of the softmax wherever `p[label] >= LOG_EPS`,
/// and keeps a nonzero gradient when the softmax saturates.
pub fn classification_loss_from_logits(g: &mut Graph, logits: NodeId, label: usize) -> Result<NodeId> {
    g.softmax_cross_entropy(logits, label)
}

/// `Σ_{k=2..4} |X_k - X1|`, elementwise.
pub fn difference_map(g: &mut Graph, bank: &RepresentationBank) -> Result<InstanceRepresentation> {
    let [x1, rest @ ..] = *bank.elements();
    let mut terms = Vec::with_capacity(3);
    for xk in rest {
        let d = g.sub(xk, x1)?;
        terms.push(g.abs(d)?);
    }
    let node = g.sum(&terms)?;
    Ok(InstanceRepresentation {
        node,
        role: Role::Difference,
    })
}

pub fn alignment_distribution(g: &mut Graph, x_diff: NodeId) -> Result<NodeId> {
    bag_distribution(g, x_diff)
}

/// `-(1/N) Σ_i [y_i ln y_i + (1 - y_i) ln(1 - y_i)]` over `Y_d`.
pub fn alignment_loss(g: &mut Graph, y_d: NodeId) -> Result<NodeId> {
    g.binary_entropy_mean(y_d, LOG_EPS)
}

/// Alignment term for the chosen mode, from the difference map.
pub fn alignment_term(g: &mut Graph, x_diff: NodeId, mode: AlignmentMode) -> Result<NodeId> {
    match mode {
        AlignmentMode::Entropy => {
            let y_d = alignment_distribution(g, x_diff)?;
            alignment_loss(g, y_d)
        }
        AlignmentMode::Norm => g.mean(x_diff),
    }
}

/// `L = L_cls + alpha * L_sealig`.
pub fn total_loss(g: &mut Graph, l_cls: NodeId, l_sealig: NodeId, alpha: f64) -> Result<NodeId> {
    if !(alpha >= 0.0) {
        return Err(Error::InvalidArgument(format!("alpha must be >= 0, got {alpha}")));
    }
    let scaled = g.scale(l_sealig, alpha)?;
    g.add(l_cls, scaled)
}

pub fn breakdown(l_cls: f64, l_sealig: f64, alpha: f64) -> LossBreakdown {
    LossBreakdown {
        l_cls,
        l_sealig,
        alpha,
        total: l_cls + alpha * l_sealig,
    }
}
