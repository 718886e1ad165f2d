use std::fs;
use std::path::{Path, PathBuf};

use log::warn;

use super::SceneSample;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Samples loaded from a class-per-subdirectory tree.
#[derive(Debug, Clone)]
pub struct FolderDataset {
    pub samples: Vec<SceneSample>,
    /// Subdirectory names; the index is the label.
    pub class_names: Vec<String>,
    /// Files that could not be decoded.
    pub skipped: usize,
}

fn is_image(path: &Path) -> bool {
    matches!(
        path.extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .as_deref(),
        Some("png" | "jpg" | "jpeg")
    )
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    out.sort();
    Ok(out)
}

/// Loads `root/<class>/<image>` files. Classes are indexed in alphabetical
/// order of their directory names; images are bilinearly resized to
/// `size x size` and scaled to `[0, 1]`.
pub fn load_image_folder(root: &Path, size: usize) -> Result<FolderDataset> {
    let class_dirs: Vec<PathBuf> = sorted_entries(root)?.into_iter().filter(|p| p.is_dir()).collect();
    if class_dirs.len() < 2 {
        return Err(Error::Dataset(format!(
            "{} needs at least 2 class subdirectories, found {}",
            root.display(),
            class_dirs.len()
        )));
    }
    let mut samples = Vec::new();
    let mut class_names = Vec::new();
    let mut skipped = 0;
    for (label, dir) in class_dirs.iter().enumerate() {
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let before = samples.len();
        for path in sorted_entries(dir)?.into_iter().filter(|p| p.is_file() && is_image(p)) {
            match image::open(&path) {
                Ok(img) => {
                    let rgb = img.to_rgb8();
                    let (w, h) = rgb.dimensions();
                    let mut planes = vec![0.0; 3 * (w * h) as usize];
                    for (x, y, px) in rgb.enumerate_pixels() {
                        for c in 0..3 {
                            planes[c * (w * h) as usize + (y * w + x) as usize] = f64::from(px[c]) / 255.0;
                        }
                    }
                    let t = Tensor::new(&[3, h as usize, w as usize], planes)?;
                    let stem = path
                        .file_stem()
                        .map(|s| s.to_string_lossy().into_owned())
                        .unwrap_or_default();
                    samples.push(SceneSample {
                        id: format!("{name}/{stem}"),
                        image: resize_bilinear(&t, size, size),
                        label,
                        source: Some(path.display().to_string()),
                    });
                }
                Err(e) => {
                    warn!("skipping {}: {e}", path.display());
                    skipped += 1;
                }
            }
        }
        if samples.len() == before {
            return Err(Error::Dataset(format!(
                "class directory {} has no decodable images",
                dir.display()
            )));
        }
        class_names.push(name);
    }
    Ok(FolderDataset {
        samples,
        class_names,
        skipped,
    })
}

/// Writes a `[3, H, W]` tensor with values in `[0, 1]` as an 8-bit RGB image.
/// The format follows the file extension.
pub fn save_image(t: &Tensor, path: &Path) -> Result<()> {
    let s = t.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::Shape {
            op: "save_image",
            detail: format!("expected [3,H,W], got {s:?}"),
        });
    }
    let (h, w) = (s[1], s[2]);
    let v = t.values();
    let img = image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let p = y as usize * w + x as usize;
        image::Rgb([0, 1, 2].map(|c| (v[c * h * w + p].clamp(0.0, 1.0) * 255.0).round() as u8))
    });
    img.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Bilinear resize of a `[C, H, W]` tensor with half-pixel centres and
/// edge clamping.
pub fn resize_bilinear(t: &Tensor, out_h: usize, out_w: usize) -> Tensor {
    let s = t.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    let sy = h as f64 / out_h as f64;
    let sx = w as f64 / out_w as f64;
    let src = t.values();
    let mut out = vec![0.0; c * out_h * out_w];
    let coord = |dst: usize, scale: f64, len: usize| {
        let p = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
        let lo = p.floor() as usize;
        let hi = (lo + 1).min(len - 1);
        (lo, hi, p - lo as f64)
    };
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for oy in 0..out_h {
            let (y0, y1, fy) = coord(oy, sy, h);
            for ox in 0..out_w {
                let (x0, x1, fx) = coord(ox, sx, w);
                let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
                let bot = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
                out[(ch * out_h + oy) * out_w + ox] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    Tensor::new(&[c, out_h, out_w], out).expect("resize shape")
}
