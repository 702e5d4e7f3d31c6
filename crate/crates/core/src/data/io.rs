//! Dataset directories: `manifest.json` plus one binary blob per split.
//!
//! A blob holds little-endian f32 coordinates, sample-major and row-major,
//! followed by the u16 task labels and then the u16 sensitive labels.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cloud::{Dataset, LabeledSample, PointCloud, Split, DIM};
use crate::error::{Error, Result};
use crate::nets::checkpoint::hex_digest;

pub const MANIFEST: &str = "manifest.json";
const FORMAT: &str = "cbns-dataset-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitEntry {
    pub samples: usize,
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub n: usize,
    pub d: usize,
    pub task_classes: Vec<String>,
    pub sensitive_classes: Vec<String>,
    pub splits: BTreeMap<Split, SplitEntry>,
    pub seed: Option<u64>,
    /// Free-form origin record, e.g. the censor checkpoint that produced
    /// the data.
    pub provenance: Option<serde_json::Value>,
}

impl Manifest {
    /// Bytes of one split blob.
    pub fn blob_len(&self, samples: usize) -> usize {
        samples * (self.n * self.d * 4 + 2 * 2)
    }
}

fn blob_name(split: Split) -> String {
    format!("{}.bin", split.name())
}

pub fn encode_split(data: &Dataset) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(data.len() * (data.points_per_cloud() * DIM * 4 + 4));
    for s in &data.samples {
        for p in s.cloud.points() {
            for c in p {
                out.extend_from_slice(&c.to_le_bytes());
            }
        }
    }
    for labels in [|s: &LabeledSample| s.y_t, |s: &LabeledSample| s.y_s] {
        for s in &data.samples {
            let y = u16::try_from(labels(s)).map_err(|_| Error::invalid("label does not fit in u16"))?;
            out.extend_from_slice(&y.to_le_bytes());
        }
    }
    Ok(out)
}

fn decode_split(bytes: &[u8], manifest: &Manifest, split: Split, path: &Path) -> Result<Dataset> {
    let entry = &manifest.splits[&split];
    let expect = manifest.blob_len(entry.samples);
    if bytes.len() != expect {
        return Err(Error::integrity(
            path,
            format!("blob has {} bytes, manifest implies {expect}", bytes.len()),
        ));
    }
    let digest = hex_digest(&Sha256::digest(bytes));
    if digest != entry.sha256 {
        return Err(Error::integrity(path, "blob checksum does not match the manifest"));
    }
    let (n, m) = (manifest.n, entry.samples);
    let coord_bytes = m * n * DIM * 4;
    let f = |i: usize| f32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap());
    let label = |base: usize, i: usize| {
        let o = coord_bytes + base + 2 * i;
        u16::from_le_bytes([bytes[o], bytes[o + 1]]) as usize
    };
    let mut samples = Vec::with_capacity(m);
    for i in 0..m {
        let points = (0..n)
            .map(|j| {
                let o = (i * n + j) * DIM;
                [f(o), f(o + 1), f(o + 2)]
            })
            .collect();
        let cloud = PointCloud::new(points).map_err(|e| Error::integrity(path, format!("sample {i}: {e}")))?;
        samples.push(LabeledSample {
            cloud,
            y_t: label(0, i),
            y_s: label(2 * m, i),
        });
    }
    Dataset::new(
        samples,
        manifest.task_classes.clone(),
        manifest.sensitive_classes.clone(),
        split,
    )
    .map_err(|e| Error::integrity(path, e.to_string()))
}

/// Writes the given splits and a manifest into `dir`.
pub fn save_dataset(
    dir: &Path,
    splits: &[&Dataset],
    seed: Option<u64>,
    provenance: Option<serde_json::Value>,
) -> Result<Manifest> {
    let first = splits.first().ok_or_else(|| Error::invalid("no splits to save"))?;
    let mut manifest = Manifest {
        format: FORMAT.to_string(),
        n: first.points_per_cloud(),
        d: DIM,
        task_classes: first.task_classes.clone(),
        sensitive_classes: first.sensitive_classes.clone(),
        splits: BTreeMap::new(),
        seed,
        provenance,
    };
    std::fs::create_dir_all(dir)?;
    for data in splits {
        if data.points_per_cloud() != manifest.n
            || data.task_classes != manifest.task_classes
            || data.sensitive_classes != manifest.sensitive_classes
        {
            return Err(Error::invalid("all splits must share cloud size and class names"));
        }
        if manifest.splits.contains_key(&data.split) {
            return Err(Error::invalid(format!("split {} given twice", data.split.name())));
        }
        let bytes = encode_split(data)?;
        let file = blob_name(data.split);
        crate::write_atomic(&dir.join(&file), &bytes)?;
        manifest.splits.insert(
            data.split,
            SplitEntry {
                samples: data.len(),
                file,
                sha256: hex_digest(&Sha256::digest(&bytes)),
            },
        );
    }
    let mut json = serde_json::to_string_pretty(&manifest)?;
    json.push('\n');
    crate::write_atomic(&dir.join(MANIFEST), json.as_bytes())?;
    Ok(manifest)
}

pub fn load_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::integrity(&path, format!("cannot read manifest: {e}")))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::integrity(&path, format!("malformed manifest: {e}")))?;
    if manifest.format != FORMAT || manifest.d != DIM {
        return Err(Error::integrity(&path, format!("unsupported dataset format {:?}", manifest.format)));
    }
    Ok(manifest)
}

/// Loads one split of a dataset directory.
pub fn load_dataset(dir: &Path, split: Split) -> Result<Dataset> {
    let manifest = load_manifest(dir)?;
    let entry = manifest
        .splits
        .get(&split)
        .ok_or_else(|| Error::integrity(dir.join(MANIFEST), format!("no {} split", split.name())))?;
    let path: PathBuf = dir.join(&entry.file);
    let bytes = std::fs::read(&path).map_err(|e| Error::integrity(&path, format!("cannot read blob: {e}")))?;
    decode_split(&bytes, &manifest, split, &path)
}
