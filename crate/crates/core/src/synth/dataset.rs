//! On-disk paired datasets.
//!
//! Layout under the dataset root:
//!
//! ```text
//! manifest.json
//! train/00000_raw.png       RGGB mosaic as RGBA, H/2 × W/2
//! train/00000_clean.png     clean sRGB target
//! train/00000_moire.png     degraded sRGB before mosaicking
//! train/00000.json          DegradationParams
//! val/…  test/…
//! ```
//!
//! Sample ids are global: train takes `0..n_train`, then val, then test.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::png::{read_png, read_raw_png, write_png, write_raw_png};
use super::{make_sample, DegradationParams, MoireSample};
use crate::error::{io_err, json_err, Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn dir(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Split::ALL
            .into_iter()
            .find(|x| x.dir() == s)
            .ok_or_else(|| format!("unknown split `{s}` (train, val, test)"))
    }
}

/// One sample's files, relative to the dataset root.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub id: u64,
    pub split: Split,
    pub raw: String,
    pub clean: String,
    pub degraded: String,
    pub params: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub size: usize,
    pub samples: Vec<SampleEntry>,
}

impl DatasetManifest {
    pub fn load(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        serde_json::from_str(&text).map_err(json_err(&path))
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &SampleEntry> {
        self.samples.iter().filter(move |s| s.split == split)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(json_err(path))?;
    fs::write(path, text + "\n").map_err(io_err(path))
}

/// Generates and writes `n_train + n_val + n_test` samples of side `size`.
pub fn build_dataset(root: &Path, counts: [usize; 3], size: usize, seed: u64) -> Result<DatasetManifest> {
    if counts.contains(&0) {
        return Err(Error::Config(format!("every split needs at least one sample, got {counts:?}")));
    }
    let mut samples = Vec::new();
    let mut id = 0u64;
    for (split, &n) in Split::ALL.iter().zip(&counts) {
        let dir = root.join(split.dir());
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        for _ in 0..n {
            let s = make_sample(seed, id, size)?;
            let stem = format!("{}/{id:05}", split.dir());
            let entry = SampleEntry {
                id,
                split: *split,
                raw: format!("{stem}_raw.png"),
                clean: format!("{stem}_clean.png"),
                degraded: format!("{stem}_moire.png"),
                params: format!("{stem}.json"),
            };
            write_raw_png(&root.join(&entry.raw), &s.raw)?;
            write_png(&root.join(&entry.clean), &s.clean)?;
            write_png(&root.join(&entry.degraded), &s.degraded)?;
            write_json(&root.join(&entry.params), &s.params)?;
            samples.push(entry);
            id += 1;
        }
    }
    let manifest = DatasetManifest { seed, size, samples };
    write_json(&root.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// Reads every sample of one split, in id order.
pub fn load_split(root: &Path, manifest: &DatasetManifest, split: Split) -> Result<Vec<MoireSample>> {
    manifest
        .split(split)
        .map(|e| {
            let ppath = root.join(&e.params);
            let text = fs::read_to_string(&ppath).map_err(io_err(&ppath))?;
            let params: DegradationParams = serde_json::from_str(&text).map_err(json_err(&ppath))?;
            Ok(MoireSample {
                id: e.id,
                raw: read_raw_png(&root.join(&e.raw))?,
                clean: read_png(&root.join(&e.clean))?,
                degraded: read_png(&root.join(&e.degraded))?,
                params,
            })
        })
        .collect()
}
