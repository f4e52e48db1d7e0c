//! JSONL manifests: one [`SampleRecord`] per line, sorted by sample id, with
//! images stored next to the manifest.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use super::sample::{SampleRecord, Split, SCHEMA_VERSION};
use crate::error::{Error, IoContext, Result};
use crate::raster::RgbImage;
use crate::sensors::{Observation, TactileMontage};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const RUN_CONFIG_FILE: &str = "run_config.json";
/// Per-split manifests, written alongside the full one.
pub const SPLIT_FILES: [(Split, &str); 2] = [(Split::Id, "id.jsonl"), (Split::Ood, "ood.jsonl")];

/// Records plus the directory their image paths are relative to.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub root: PathBuf,
    pub records: Vec<SampleRecord>,
}

impl Manifest {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn filter_split(&self, split: Split) -> Manifest {
        Manifest {
            root: self.root.clone(),
            records: self.records.iter().filter(|r| r.split == split).cloned().collect(),
        }
    }

    pub fn observation(&self, record: &SampleRecord) -> Result<Observation> {
        load_observation(&self.root, record)
    }
}

/// Writes records as JSONL in the given order.
pub fn write_records(path: &Path, records: &[SampleRecord]) -> Result<()> {
    let f = File::create(path).at(path)?;
    let mut w = BufWriter::new(f);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").at(path)?;
    }
    w.flush().at(path)
}

/// Sorts by sample id and writes the full manifest plus split files.
pub fn write_manifest(dir: &Path, records: &mut [SampleRecord]) -> Result<()> {
    records.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    write_records(&dir.join(MANIFEST_FILE), records)?;
    for (split, name) in SPLIT_FILES {
        let subset: Vec<SampleRecord> = records.iter().filter(|r| r.split == split).cloned().collect();
        write_records(&dir.join(name), &subset)?;
    }
    Ok(())
}

/// Reads a JSONL manifest. Image paths resolve against its directory.
pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let f = File::open(path).at(path)?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.at(path)?;
        if line.trim().is_empty() {
            continue;
        }
        let r: SampleRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Manifest(format!("{}:{}: {e}", path.display(), i + 1)))?;
        if r.schema != SCHEMA_VERSION {
            return Err(Error::Manifest(format!(
                "{}:{}: unsupported schema {}",
                path.display(),
                i + 1,
                r.schema
            )));
        }
        records.push(r);
    }
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(Manifest { root, records })
}

/// Accepts either a dataset directory or a manifest file.
pub fn read_manifest_dir(path: &Path) -> Result<Manifest> {
    if path.is_dir() {
        read_manifest(&path.join(MANIFEST_FILE))
    } else {
        read_manifest(path)
    }
}

pub fn load_observation(root: &Path, record: &SampleRecord) -> Result<Observation> {
    let im = &record.images;
    Ok(Observation {
        tactile_left: TactileMontage {
            image: RgbImage::read_png(&root.join(&im.tactile_left))?,
        },
        tactile_right: TactileMontage {
            image: RgbImage::read_png(&root.join(&im.tactile_right))?,
        },
        vision: RgbImage::read_png(&root.join(&im.vision))?,
    })
}
