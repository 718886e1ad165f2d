//! Datasets: synthetic scene generation, image-folder ingestion, stratified
//! splits and the dataset manifest.

mod augment;
mod folder;
mod split;
mod synthetic;

use std::io::Write;

use serde::{Deserialize, Serialize};

pub use augment::{dihedral, DIHEDRAL_ORDER};
pub use folder::{load_image_folder, resize_bilinear, save_image, FolderDataset};
pub use split::{stratified_split, DatasetSplit};
pub use synthetic::{generate_synthetic, render_sample, Motif, SyntheticSpec};

use crate::error::Result;
use crate::tensor::Tensor;

/// One labelled image `[3, S, S]` with pixel values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSample {
    pub id: String,
    pub image: Tensor,
    pub label: usize,
    /// File path for loaded images, `None` for synthetic ones.
    pub source: Option<String>,
}

/// One line of the dataset manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub source: String,
    pub label: usize,
}

impl ManifestRecord {
    pub fn of(sample: &SceneSample) -> Self {
        Self {
            id: sample.id.clone(),
            source: sample.source.clone().unwrap_or_else(|| "synthetic".to_string()),
            label: sample.label,
        }
    }
}

/// Writes the manifest as tab-separated `id source label` lines.
pub fn write_manifest<W: Write>(samples: &[SceneSample], mut w: W) -> Result<()> {
    for s in samples {
        let r = ManifestRecord::of(s);
        writeln!(w, "{}\t{}\t{}", r.id, r.source, r.label)?;
    }
    Ok(())
}

/// Number of categories spanned by `samples` (max label + 1).
pub fn num_classes(samples: &[SceneSample]) -> usize {
    samples.iter().map(|s| s.label + 1).max().unwrap_or(0)
}
