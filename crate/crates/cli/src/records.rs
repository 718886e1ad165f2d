//! Line-delimited JSON metric records.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use irb_core::train::EpochRecord;
use irb_core::visualize::SidecarRecord;
use irb_core::{RunOutcome, Variant};
use serde::Serialize;

#[derive(Debug, Serialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum Record<'a> {
    Epoch {
        variant: Variant,
        run: usize,
        #[serde(flatten)]
        epoch: &'a EpochRecord,
    },
    Run(&'a RunOutcome),
    Summary {
        variant: Variant,
        label: &'static str,
        runs: usize,
        mean: f64,
        std: f64,
        formatted: String,
    },
    Eval {
        variant: Variant,
        run: usize,
        checkpoint: String,
        split_digest: String,
        accuracy: f64,
        confusion: &'a [Vec<usize>],
    },
    Heatmap {
        sample: &'a str,
        label: usize,
        #[serde(flatten)]
        map: &'a SidecarRecord,
    },
}

pub struct JsonLines {
    w: BufWriter<File>,
}

impl JsonLines {
    pub fn create(path: &Path) -> std::io::Result<Self> {
        Ok(Self {
            w: BufWriter::new(File::create(path)?),
        })
    }

    pub fn write(&mut self, r: &Record<'_>) -> std::io::Result<()> {
        serde_json::to_writer(&mut self.w, r)?;
        self.w.write_all(b"\n")
    }

    pub fn finish(mut self) -> std::io::Result<()> {
        self.w.flush()
    }
}
