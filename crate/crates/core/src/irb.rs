//! Instance representation bank: the transition from convolutional features
//! to per-category instance maps, and the three shape-preserving local
//! semantic descriptors built on top of it.
//!
//! Every descriptor maps `[N, H, W]` to `[N, H, W]`, so the bank elements can
//! be summed and differenced elementwise downstream.
//!
//! * attention: `X2 = X1 * act(W1 X1 + b1)` with a one-channel map broadcast
//!   over categories.
//! * local max selection: keeps `X1` where it equals the maximum of its
//!   clipped `w x w` window (ties kept), zero elsewhere.
//! * context-aware peak response: keeps strict window maxima, each scaled by
//!   `sigmoid` of the mean response in a wider clipped context window.
//!
//! Selection masks are constants during backprop.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId};
use crate::error::{shape_err, Error, Result};
use crate::params::Bound;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    Base,
    Attention,
    LocalMax,
    Cacpr,
    Final,
    Difference,
}

/// A `[N, H, W]` instance map living in a graph, tagged by how it was made.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InstanceRepresentation {
    pub node: NodeId,
    pub role: Role,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionActivation {
    #[default]
    Sigmoid,
    /// The gate is used as is, without squashing.
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DescriptorConfig {
    pub lms_window: usize,
    pub cacpr_peak_window: usize,
    pub cacpr_context_window: usize,
    pub attention_activation: AttentionActivation,
}

impl Default for DescriptorConfig {
    fn default() -> Self {
        Self {
            lms_window: 3,
            cacpr_peak_window: 3,
            cacpr_context_window: 5,
            attention_activation: AttentionActivation::Sigmoid,
        }
    }
}

impl DescriptorConfig {
    pub fn validate(&self) -> Result<()> {
        for w in [self.lms_window, self.cacpr_peak_window, self.cacpr_context_window] {
            check_window(w)?;
        }
        Ok(())
    }
}

fn check_window(w: usize) -> Result<()> {
    if w < 3 || w.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!("window size {w} must be odd and >= 3")));
    }
    Ok(())
}

/// The ordered bank `{X1, X2, X3, X4}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RepresentationBank {
    elements: [NodeId; 4],
}

impl RepresentationBank {
    pub fn elements(&self) -> &[NodeId; 4] {
        &self.elements
    }

    pub fn base(&self) -> NodeId {
        self.elements[0]
    }

    /// 1-based access matching the `X1..X4` naming.
    pub fn get(&self, k: usize) -> Option<NodeId> {
        k.checked_sub(1).and_then(|i| self.elements.get(i).copied())
    }
}

/// `X1 = conv1x1(X)`: one output channel per scene category.
pub fn instance_transition(g: &mut Graph, x: NodeId, p: &Bound) -> Result<InstanceRepresentation> {
    let (w, b) = (p.get("transition.weight"), p.get("transition.bias"));
    let ks = g.shape(w);
    if ks.len() != 4 || ks[2] != 1 || ks[3] != 1 {
        return Err(shape_err(
            "instance_transition",
            format!("transition kernel must be [N,C,1,1], got {ks:?}"),
        ));
    }
    let node = g.conv2d(x, w, b, 1, 0)?;
    Ok(InstanceRepresentation { node, role: Role::Base })
}

/// Attention gate `act(W1 X1 + b1)`, shape `[1, H, W]`.
pub fn attention_map(
    g: &mut Graph,
    x1: NodeId,
    w1: NodeId,
    b1: NodeId,
    activation: AttentionActivation,
) -> Result<NodeId> {
    let ws = g.shape(w1);
    if ws.len() != 4 || ws[0] != 1 || ws[2] != 1 || ws[3] != 1 {
        return Err(shape_err(
            "spatial_attention",
            format!("attention kernel must be [1,N,1,1], got {ws:?}"),
        ));
    }
    let z = g.conv2d(x1, w1, b1, 1, 0)?;
    match activation {
        AttentionActivation::Sigmoid => g.sigmoid(z),
        AttentionActivation::Linear => Ok(z),
    }
}

pub fn spatial_attention(
    g: &mut Graph,
    x1: NodeId,
    w1: NodeId,
    b1: NodeId,
    activation: AttentionActivation,
) -> Result<InstanceRepresentation> {
    let a = attention_map(g, x1, w1, b1, activation)?;
    let node = g.mul(x1, a)?;
    Ok(InstanceRepresentation {
        node,
        role: Role::Attention,
    })
}

fn plane_dims(t: &Tensor, op: &'static str, window: usize) -> Result<(usize, usize, usize)> {
    let s = t.shape();
    if s.len() != 3 {
        return Err(shape_err(op, format!("expected [N,H,W], got {s:?}")));
    }
    check_window(window)?;
    if window > s[1].min(s[2]) {
        return Err(Error::InvalidArgument(format!(
            "{op}: window {window} exceeds spatial size {}x{}",
            s[1], s[2]
        )));
    }
    Ok((s[0], s[1], s[2]))
}

/// Visits the clipped window around every position of every channel and
/// records 1.0 where `beats(center, other)` holds for every other value.
fn window_mask(
    t: &Tensor,
    (n, h, w): (usize, usize, usize),
    window: usize,
    beats: impl Fn(f64, f64) -> bool,
) -> Vec<f64> {
    let r = window / 2;
    let v = t.values();
    let mut mask = vec![0.0; v.len()];
    for c in 0..n {
        let plane = &v[c * h * w..(c + 1) * h * w];
        for i in 0..h {
            let (i0, i1) = (i.saturating_sub(r), (i + r).min(h - 1));
            for j in 0..w {
                let (j0, j1) = (j.saturating_sub(r), (j + r).min(w - 1));
                let v = plane[i * w + j];
                let kept = (i0..=i1)
                    .flat_map(|ii| (j0..=j1).map(move |jj| (ii, jj)))
                    .filter(|&(ii, jj)| (ii, jj) != (i, j))
                    .all(|(ii, jj)| beats(v, plane[ii * w + jj]));
                if kept {
                    mask[c * h * w + i * w + j] = 1.0;
                }
            }
        }
    }
    mask
}

/// 1 where the value equals its window maximum (ties kept), else 0.
pub fn local_max_mask(x1: &Tensor, window: usize) -> Result<Vec<f64>> {
    let dims = plane_dims(x1, "local_max_select", window)?;
    Ok(window_mask(x1, dims, window, |v, o| v >= o))
}

/// 1 where the value strictly exceeds every other value in its window.
pub fn strict_peak_mask(x1: &Tensor, window: usize) -> Result<Vec<f64>> {
    let dims = plane_dims(x1, "cacpr", window)?;
    Ok(window_mask(x1, dims, window, |v, o| v > o))
}

pub fn local_max_select(g: &mut Graph, x1: NodeId, window: usize) -> Result<InstanceRepresentation> {
    let mask = local_max_mask(g.value(x1), window)?;
    let node = g.mask_mul(x1, mask)?;
    Ok(InstanceRepresentation {
        node,
        role: Role::LocalMax,
    })
}

/// `X4 = X1 * peaks * sigmoid(context mean)`.
pub fn cacpr(g: &mut Graph, x1: NodeId, peak_window: usize, context_window: usize) -> Result<InstanceRepresentation> {
    let peaks = strict_peak_mask(g.value(x1), peak_window)?;
    check_window(context_window)?;
    let ctx = g.box_mean(x1, context_window)?;
    let kappa = g.sigmoid(ctx)?;
    let peaked = g.mask_mul(x1, peaks)?;
    let node = g.mul(peaked, kappa)?;
    Ok(InstanceRepresentation {
        node,
        role: Role::Cacpr,
    })
}

pub fn build_bank(g: &Graph, x1: NodeId, x2: NodeId, x3: NodeId, x4: NodeId) -> Result<RepresentationBank> {
    let base = g.shape(x1);
    for (k, x) in [(2, x2), (3, x3), (4, x4)] {
        if g.shape(x) != base {
            return Err(shape_err(
                "build_bank",
                format!("X{k} has shape {:?}, X1 has {base:?}", g.shape(x)),
            ));
        }
    }
    Ok(RepresentationBank {
        elements: [x1, x2, x3, x4],
    })
}
