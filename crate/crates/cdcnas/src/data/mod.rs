//! Synthetic datasets, the on-disk clip format, sampling and augmentation.

pub mod clipio;
pub mod synth;
pub mod view;

pub use clipio::{read_clip, write_clip, ClipRecord};
pub use synth::{MotionClass, Split, SynthSpec};

use crate::error::{Error, Result};
use rayon::prelude::*;
use std::path::{Path, PathBuf};

/// One manifest line: relative path, label, split.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: String,
    pub label: usize,
    pub split: Split,
}

/// A dataset directory: `manifest.tsv` plus clip files.
#[derive(Clone, Debug)]
pub struct DatasetIndex {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

pub const MANIFEST_NAME: &str = "manifest.tsv";

impl DatasetIndex {
    pub fn load(root: &Path) -> Result<Self> {
        let manifest = root.join(MANIFEST_NAME);
        if !manifest.exists() {
            return Err(Error::MissingArtifact(format!(
                "dataset manifest {} not found",
                manifest.display()
            )));
        }
        let text = std::fs::read_to_string(&manifest)?;
        let mut entries = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split('\t');
            let path = parts
                .next()
                .ok_or_else(|| Error::Corrupt(format!("manifest line {ln}: missing path")))?;
            let label: usize = parts
                .next()
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Corrupt(format!("manifest line {ln}: bad label")))?;
            let split = Split::parse(
                parts
                    .next()
                    .ok_or_else(|| Error::Corrupt(format!("manifest line {ln}: missing split")))?,
            )?;
            if parts.next().is_some() {
                return Err(Error::Corrupt(format!(
                    "manifest line {ln}: trailing fields"
                )));
            }
            entries.push(ManifestEntry {
                path: path.to_string(),
                label,
                split,
            });
        }
        if entries.is_empty() {
            return Err(Error::Corrupt("dataset manifest is empty".into()));
        }
        Ok(DatasetIndex {
            root: root.to_path_buf(),
            entries,
        })
    }
}

/// Anything batches can be drawn from: a disk dataset or in-memory clips.
pub trait ClipSource: Sync {
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    fn label(&self, idx: usize) -> usize;
    fn split(&self, idx: usize) -> Split;
    fn load(&self, idx: usize) -> Result<ClipRecord>;

    fn indices_of(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.split(i) == split).collect()
    }

    fn num_classes(&self) -> usize {
        (0..self.len()).map(|i| self.label(i)).max().unwrap_or(0) + 1
    }
}

impl ClipSource for DatasetIndex {
    fn len(&self) -> usize {
        self.entries.len()
    }

    fn label(&self, idx: usize) -> usize {
        self.entries[idx].label
    }

    fn split(&self, idx: usize) -> Split {
        self.entries[idx].split
    }

    fn load(&self, idx: usize) -> Result<ClipRecord> {
        read_clip(&self.root.join(&self.entries[idx].path))
    }
}

/// Clips held in memory (small studies and tests).
pub struct MemorySource {
    pub clips: Vec<(ClipRecord, Split)>,
}

impl ClipSource for MemorySource {
    fn len(&self) -> usize {
        self.clips.len()
    }

    fn label(&self, idx: usize) -> usize {
        self.clips[idx].0.label as usize
    }

    fn split(&self, idx: usize) -> Split {
        self.clips[idx].1
    }

    fn load(&self, idx: usize) -> Result<ClipRecord> {
        Ok(self.clips[idx].0.clone())
    }
}

/// Materialize a whole synthetic dataset in memory.
pub fn synthesize_in_memory(spec: &SynthSpec) -> Result<MemorySource> {
    spec.validate()?;
    let jobs: Vec<(usize, usize)> = (0..spec.classes.len())
        .flat_map(|c| (0..spec.clips_per_class).map(move |i| (c, i)))
        .collect();
    let clips: Vec<(ClipRecord, Split)> = jobs
        .par_iter()
        .map(|&(c, i)| {
            let clip = synth::render_clip(spec, c, i)?;
            Ok((clip, synth::split_of(spec, c, i)))
        })
        .collect::<Result<_>>()?;
    Ok(MemorySource { clips })
}

/// Generate a synthetic dataset on disk: clip files plus `manifest.tsv`.
/// Deterministic in the spec; clips are written in parallel.
pub fn write_dataset(root: &Path, spec: &SynthSpec) -> Result<DatasetIndex> {
    spec.validate()?;
    std::fs::create_dir_all(root.join("clips"))?;
    let jobs: Vec<(usize, usize)> = (0..spec.classes.len())
        .flat_map(|c| (0..spec.clips_per_class).map(move |i| (c, i)))
        .collect();
    let entries: Vec<ManifestEntry> = jobs
        .par_iter()
        .map(|&(c, i)| {
            let clip = synth::render_clip(spec, c, i)?;
            let rel = format!("clips/clip_{c:03}_{i:05}.cdcv");
            write_clip(&root.join(&rel), &clip)?;
            Ok(ManifestEntry {
                path: rel,
                label: c,
                split: synth::split_of(spec, c, i),
            })
        })
        .collect::<Result<_>>()?;
    let mut lines = String::new();
    for e in &entries {
        lines.push_str(&format!("{}\t{}\t{}\n", e.path, e.label, e.split.name()));
    }
    std::fs::write(root.join(MANIFEST_NAME), lines)?;
    Ok(DatasetIndex {
        root: root.to_path_buf(),
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_roundtrip_and_split_disjointness() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec {
            clips_per_class: 4,
            frames: 8,
            height: 16,
            width: 16,
            blob_radius: 2.0,
            classes: MotionClass::default_six()[..2].to_vec(),
            ..Default::default()
        };
        let idx = write_dataset(dir.path(), &spec).unwrap();
        assert_eq!(idx.entries.len(), 8);
        let reloaded = DatasetIndex::load(dir.path()).unwrap();
        assert_eq!(idx.entries, reloaded.entries);
        let train = reloaded.indices_of(Split::Train);
        let val = reloaded.indices_of(Split::Val);
        let test = reloaded.indices_of(Split::Test);
        assert_eq!(train.len() + val.len() + test.len(), 8);
        for i in &train {
            assert!(!val.contains(i) && !test.contains(i));
        }
        let clip = reloaded.load(0).unwrap();
        assert_eq!(clip.label as usize, ClipSource::label(&reloaded, 0));
        assert_eq!(clip.extents().unwrap(), (8, 16, 16));
    }
}
