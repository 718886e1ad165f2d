//! Procedural stand-ins for aerial scene classes.
//!
//! Each image has a smoothly textured background, a few class-agnostic
//! clutter shapes and one class motif drawn at a random position, scale and
//! orientation, followed by Gaussian pixel noise.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::SceneSample;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Motif {
    /// Parallel bands, like runways.
    Striped,
    /// Lattice of thin lines, like parking bays.
    Grid,
    /// Clump of overlapping discs, like tree crowns.
    BlobCluster,
    /// A few ringed discs with a centre dot, like storage tanks.
    Concentric,
}

impl Motif {
    pub const ALL: [Motif; 4] = [Motif::Striped, Motif::Grid, Motif::BlobCluster, Motif::Concentric];

    pub fn name(self) -> &'static str {
        match self {
            Motif::Striped => "striped",
            Motif::Grid => "grid",
            Motif::BlobCluster => "blob_cluster",
            Motif::Concentric => "concentric",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub image_size: usize,
    pub samples_per_class: usize,
    pub noise_std: f64,
    pub motifs: Vec<Motif>,
    /// Class-agnostic clutter shapes per image.
    pub distractors: usize,
    /// Motif half-extent range as a fraction of the image size.
    pub motif_scale: (f64, f64),
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_classes: 4,
            image_size: 64,
            samples_per_class: 250,
            noise_std: 0.05,
            motifs: Motif::ALL.to_vec(),
            distractors: 4,
            motif_scale: (0.18, 0.28),
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 || self.num_classes > self.motifs.len() {
            return Err(Error::InvalidArgument(format!(
                "num_classes {} must be in 2..={}",
                self.num_classes,
                self.motifs.len()
            )));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::InvalidArgument("noise_std must be >= 0".into()));
        }
        let (lo, hi) = self.motif_scale;
        if !(lo > 0.0 && lo <= hi && hi < 0.5) {
            return Err(Error::InvalidArgument(format!(
                "motif_scale {:?} must satisfy 0 < lo <= hi < 0.5",
                self.motif_scale
            )));
        }
        if self.image_size < 8 || self.samples_per_class == 0 {
            return Err(Error::InvalidArgument(
                "image_size must be >= 8 and samples_per_class >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Class-balanced samples, ordered by class then index. Deterministic in
/// `(spec, seed)`.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<Vec<SceneSample>> {
    spec.validate()?;
    let mut seeder = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(spec.num_classes * spec.samples_per_class);
    for label in 0..spec.num_classes {
        for i in 0..spec.samples_per_class {
            let inner: u64 = seeder.gen();
            out.push(SceneSample {
                id: format!("syn-{label}-{i:04}"),
                image: render_sample(spec, label, inner),
                label,
                source: None,
            });
        }
    }
    Ok(out)
}

struct Canvas {
    size: usize,
    px: Vec<f64>,
}

impl Canvas {
    fn blend(&mut self, x: usize, y: usize, color: [f64; 3], alpha: f64) {
        let plane = self.size * self.size;
        for (c, &col) in color.iter().enumerate() {
            let p = &mut self.px[c * plane + y * self.size + x];
            *p = *p * (1.0 - alpha) + col * alpha;
        }
    }

    fn luminance(&self, x: usize, y: usize) -> f64 {
        let plane = self.size * self.size;
        (0..3).map(|c| self.px[c * plane + y * self.size + x]).sum::<f64>() / 3.0
    }
}

fn frac(x: f64) -> f64 {
    x - x.floor()
}

fn contrasting<R: Rng>(base: f64, rng: &mut R) -> [f64; 3] {
    let delta = rng.gen_range(0.3..0.5);
    let level = if base > 0.5 { base - delta } else { base + delta };
    let tint: [f64; 3] = [
        rng.gen_range(-0.1..0.1),
        rng.gen_range(-0.1..0.1),
        rng.gen_range(-0.1..0.1),
    ];
    tint.map(|t| (level + t).clamp(0.0, 1.0))
}

/// Motif geometry in rotated local coordinates (pixels from the centre).
enum MotifShape {
    Bands { period: f64, width: f64, phase: f64 },
    Lots { pu: f64, pv: f64, wu: f64, wv: f64 },
    Discs(Vec<(f64, f64, f64)>),
    Tanks { centres: Vec<(f64, f64)>, radius: f64 },
}

impl MotifShape {
    fn sample<R: Rng>(motif: Motif, half: f64, rng: &mut R) -> Self {
        match motif {
            Motif::Striped => {
                let width = rng.gen_range(2.5..4.0);
                MotifShape::Bands {
                    period: width * rng.gen_range(1.8..2.3),
                    width,
                    phase: rng.gen_range(0.0..1.0),
                }
            }
            Motif::Grid => MotifShape::Lots {
                pu: rng.gen_range(5.0..6.5),
                pv: rng.gen_range(5.0..6.5),
                wu: 1.5,
                wv: 1.5,
            },
            Motif::BlobCluster => MotifShape::Discs(
                (0..rng.gen_range(8..14))
                    .map(|_| {
                        let a = rng.gen_range(0.0..2.0 * PI);
                        let d = rng.gen_range(0.0..0.75) * half;
                        (d * a.cos(), d * a.sin(), rng.gen_range(2.5..4.5))
                    })
                    .collect(),
            ),
            Motif::Concentric => {
                let radius: f64 = rng.gen_range(4.0..6.0);
                let mut centres: Vec<(f64, f64)> = Vec::new();
                let want = rng.gen_range(2..5);
                let lim = (half - radius - 1.0).max(0.0);
                for _ in 0..50 {
                    if centres.len() == want {
                        break;
                    }
                    let c = (rng.gen_range(-lim..=lim), rng.gen_range(-lim..=lim));
                    let clear = centres
                        .iter()
                        .all(|&(a, b)| ((a - c.0).powi(2) + (b - c.1).powi(2)).sqrt() > 2.0 * radius + 1.5);
                    if clear {
                        centres.push(c);
                    }
                }
                MotifShape::Tanks { centres, radius }
            }
        }
    }

    fn covers(&self, u: f64, v: f64) -> bool {
        match self {
            MotifShape::Bands { period, width, phase } => frac(u / period + phase) < width / period,
            MotifShape::Lots { pu, pv, wu, wv } => frac(u / pu) < wu / pu || frac(v / pv) < wv / pv,
            MotifShape::Discs(discs) => discs
                .iter()
                .any(|&(bx, by, br)| (u - bx).powi(2) + (v - by).powi(2) <= br * br),
            MotifShape::Tanks { centres, radius } => centres.iter().any(|&(a, b)| {
                let d = ((u - a).powi(2) + (v - b).powi(2)).sqrt();
                (d - radius).abs() < 1.0 || d < 1.5
            }),
        }
    }
}

/// Renders one image of class `label`. With `noise_std == 0` the output
/// depends only on `(spec, label, inner_seed)`.
pub fn render_sample(spec: &SyntheticSpec, label: usize, inner_seed: u64) -> Tensor {
    let s = spec.image_size;
    let sf = s as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(inner_seed);

    // background: base colour plus low-frequency sinusoidal texture
    let base: [f64; 3] = {
        let l: f64 = rng.gen_range(0.2..0.8);
        [0, 1, 2].map(|_| (l + rng.gen_range(-0.08..0.08f64)).clamp(0.0, 1.0))
    };
    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.gen_range(0.5..3.0) * 2.0 * PI / sf,
                rng.gen_range(0.0..PI),
                rng.gen_range(0.0..2.0 * PI),
                rng.gen_range(0.02..0.06),
            )
        })
        .collect();
    let mut canvas = Canvas {
        size: s,
        px: vec![0.0; 3 * s * s],
    };
    for y in 0..s {
        for x in 0..s {
            let t: f64 = waves
                .iter()
                .map(|&(k, dir, phase, amp)| amp * (k * (x as f64 * dir.cos() + y as f64 * dir.sin()) + phase).sin())
                .sum();
            for c in 0..3 {
                canvas.px[c * s * s + y * s + x] = base[c] + t;
            }
        }
    }

    // clutter: small rectangles and discs shared by every class
    for _ in 0..spec.distractors {
        let (cx, cy) = (rng.gen_range(0.0..sf), rng.gen_range(0.0..sf));
        let r = rng.gen_range(0.03..0.09) * sf;
        let disc = rng.gen_bool(0.5);
        let color = contrasting(base.iter().sum::<f64>() / 3.0, &mut rng);
        for y in 0..s {
            for x in 0..s {
                let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                let inside = if disc {
                    dx * dx + dy * dy <= r * r
                } else {
                    dx.abs() <= r && dy.abs() <= 0.6 * r
                };
                if inside {
                    canvas.blend(x, y, color, 1.0);
                }
            }
        }
    }

    // class motif
    let motif = spec.motifs[label];
    let half = rng.gen_range(spec.motif_scale.0..=spec.motif_scale.1) * sf;
    let cx = rng.gen_range(half..sf - half);
    let cy = rng.gen_range(half..sf - half);
    let theta = rng.gen_range(0.0..PI);
    let (sin, cos) = theta.sin_cos();
    let lum_bg = canvas.luminance(cx as usize, cy as usize);
    let color = contrasting(lum_bg, &mut rng);
    let shape = MotifShape::sample(motif, half, &mut rng);
    let span = (half * 1.5).ceil() as isize;
    for y in (cy as isize - span).max(0)..(cy as isize + span).min(s as isize) {
        for x in (cx as isize - span).max(0)..(cx as isize + span).min(s as isize) {
            let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
            let (u, v) = (cos * dx + sin * dy, -sin * dx + cos * dy);
            if u.abs() <= half && v.abs() <= half && shape.covers(u, v) {
                canvas.blend(x as usize, y as usize, color, 1.0);
            }
        }
    }

    if spec.noise_std > 0.0 {
        let noise = Normal::new(0.0, spec.noise_std).expect("finite std");
        for p in &mut canvas.px {
            *p += noise.sample(&mut rng);
        }
    }
    for p in &mut canvas.px {
        *p = p.clamp(0.0, 1.0);
    }
    Tensor::new(&[3, s, s], canvas.px).expect("canvas shape")
}
