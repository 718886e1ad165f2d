//! Per-descriptor heatmaps for the predicted category.

use std::path::{Path, PathBuf};

use image::GrayImage;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::backbone::Mode;
use crate::error::{Error, Result};
use crate::fusion::argmax;
use crate::model::Model;
use crate::tensor::Tensor;

/// One `[H, W]` map for the predicted category.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub name: &'static str,
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorMaps {
    pub predicted: usize,
    pub probs: Vec<f64>,
    pub maps: Vec<Heatmap>,
}

impl DescriptorMaps {
    pub fn get(&self, name: &str) -> Option<&Heatmap> {
        self.maps.iter().find(|m| m.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidecarRecord {
    pub map: String,
    pub file: String,
    pub category: usize,
    pub min: f64,
    pub max: f64,
}

/// Evaluation-mode maps `X1..X4` (those the variant builds) and `X_final`,
/// sliced at the predicted category.
pub fn descriptor_maps(model: &Model, image: &Tensor) -> Result<DescriptorMaps> {
    let mut g = Graph::new();
    let p = model.params.bind(&mut g, false);
    let x = g.constant(image.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let fwd = model.forward(&mut g, &p, x, Mode::Eval, &mut rng)?;
    let probs = g.value(fwd.y).values().to_vec();
    let predicted = argmax(&probs);
    let x_final = match fwd.x_final {
        Some(f) => f,
        None => {
            let mut parts = vec![fwd.x1];
            let d = fwd.descriptors;
            parts.extend([d.x2, d.x3, d.x4].into_iter().flatten());
            g.sum(&parts)?
        }
    };
    let d = fwd.descriptors;
    let named = [
        ("x1", Some(fwd.x1)),
        ("x2", d.x2),
        ("x3", d.x3),
        ("x4", d.x4),
        ("x_final", Some(x_final)),
    ];
    let maps = named
        .into_iter()
        .filter_map(|(name, id)| id.map(|id| (name, g.value(id))))
        .map(|(name, t)| Heatmap {
            name,
            height: t.shape()[1],
            width: t.shape()[2],
            values: t.channel(predicted).to_vec(),
        })
        .collect();
    Ok(DescriptorMaps { predicted, probs, maps })
}

/// Min-max normalization to `[0, 1]`; a constant map becomes all 0.5.
pub fn normalize(values: &[f64]) -> (Vec<f64>, f64, f64) {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    let out = if range > 0.0 {
        values.iter().map(|v| (v - min) / range).collect()
    } else {
        vec![0.5; values.len()]
    };
    (out, min, max)
}

/// Nearest-neighbour upscale of a normalized map to an 8-bit image.
pub fn to_gray_image(normalized: &[f64], height: usize, width: usize, out_size: usize) -> GrayImage {
    GrayImage::from_fn(out_size as u32, out_size as u32, |x, y| {
        let i = y as usize * height / out_size;
        let j = x as usize * width / out_size;
        image::Luma([(normalized[i * width + j] * 255.0).round() as u8])
    })
}

/// Writes one PNG per map into `out_dir` and returns the sidecar records.
pub fn write_heatmaps(
    maps: &DescriptorMaps,
    out_dir: &Path,
    prefix: &str,
    out_size: usize,
) -> Result<Vec<SidecarRecord>> {
    std::fs::create_dir_all(out_dir)?;
    let mut records = Vec::with_capacity(maps.maps.len());
    for m in &maps.maps {
        let (norm, min, max) = normalize(&m.values);
        let img = to_gray_image(&norm, m.height, m.width, out_size);
        let file = format!("{prefix}{}.png", m.name);
        let path: PathBuf = out_dir.join(&file);
        img.save(&path).map_err(|source| Error::Image {
            path: path.clone(),
            source,
        })?;
        records.push(SidecarRecord {
            map: m.name.to_string(),
            file,
            category: maps.predicted,
            min,
            max,
        });
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_map_is_mid_gray() {
        let (n, min, max) = normalize(&[3.0; 4]);
        assert_eq!(n, vec![0.5; 4]);
        assert_eq!((min, max), (3.0, 3.0));
        let img = to_gray_image(&n, 2, 2, 8);
        assert!(img.pixels().all(|p| p.0[0] == 128));
    }

    #[test]
    fn nearest_upscale_replicates_cells() {
        let (n, _, _) = normalize(&[0.0, 1.0, 2.0, 3.0]);
        let img = to_gray_image(&n, 2, 2, 4);
        assert_eq!(img.dimensions(), (4, 4));
        assert_eq!(img.get_pixel(0, 0).0[0], 0);
        assert_eq!(img.get_pixel(1, 1).0[0], 0);
        assert_eq!(img.get_pixel(3, 0).0[0], 85);
        assert_eq!(img.get_pixel(3, 3).0[0], 255);
    }
}
