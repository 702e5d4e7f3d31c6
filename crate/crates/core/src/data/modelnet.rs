use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::{parse_off, sample_surface};
use crate::cloud::{Dataset, LabeledSample, Split};
use crate::error::{Error, Result};
use crate::rng::{RandomStream, Substream};

/// Two living then two non-living classes.
pub const DEFAULT_CLASSES: [&str; 4] = ["person", "plant", "sofa", "bed"];
pub const DEFAULT_POINTS: usize = 2048;
pub const SUPER_TYPES: [&str; 2] = ["living", "non-living"];

fn off_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("off")))
        .collect();
    files.sort();
    Ok(files)
}

/// Loads `root/<class>/{train,test}/*.off` for four classes, the first two
/// living and the last two non-living.
///
/// The task label is the super-type, the sensitive label the class. Each
/// mesh is sampled with a stream derived from its relative path, so the
/// result does not depend on load order.
pub fn load_modelnet_subset(root: &Path, classes: &[String], n: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    if classes.len() != 4 {
        return Err(Error::invalid(format!(
            "expected 4 classes (2 living, 2 non-living), got {}",
            classes.len()
        )));
    }
    let root_stream = RandomStream::new(seed);
    let mut out = Vec::new();
    for split in [Split::Train, Split::Test] {
        let mut jobs = Vec::new();
        for (y_s, class) in classes.iter().enumerate() {
            let dir = root.join(class).join(split.name());
            if !dir.is_dir() {
                return Err(Error::integrity(
                    &dir,
                    format!(
                        "missing class directory; expected layout <root>/<class>/{{train,test}}/*.off for classes {}",
                        classes.join(", ")
                    ),
                ));
            }
            for file in off_files(&dir)? {
                jobs.push((y_s, file));
            }
        }
        let samples = jobs
            .par_iter()
            .map(|(y_s, file)| {
                let text = std::fs::read_to_string(file)?;
                let mesh = parse_off(&text).map_err(|e| Error::integrity(file, e.to_string()))?;
                let rel = file.strip_prefix(root).unwrap_or(file).to_string_lossy().replace('\\', "/");
                let mut rng = root_stream.derive(&rel, 0).substream(Substream::Data);
                let cloud = sample_surface(&mesh, n, &mut rng).map_err(|e| Error::integrity(file, e.to_string()))?;
                Ok(LabeledSample {
                    cloud,
                    y_t: y_s / 2,
                    y_s: *y_s,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(Dataset::new(
            samples,
            SUPER_TYPES.iter().map(|s| s.to_string()).collect(),
            classes.to_vec(),
            split,
        )?);
    }
    let test = out.pop().unwrap();
    let train = out.pop().unwrap();
    train.check_class_coverage()?;
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{emit_off, TriangleMesh};

    fn tetra(scale: f64) -> String {
        emit_off(
            &TriangleMesh::new(
                vec![[0.0, 0.0, 0.0], [scale, 0.0, 0.0], [0.0, scale, 0.0], [0.0, 0.0, scale]],
                vec![[0, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]],
            )
            .unwrap(),
        )
    }

    #[test]
    fn loads_layout_with_super_types() {
        let dir = tempfile::tempdir().unwrap();
        let classes: Vec<String> = DEFAULT_CLASSES.iter().map(|s| s.to_string()).collect();
        for (i, c) in classes.iter().enumerate() {
            for (split, count) in [("train", 3), ("test", 1)] {
                let d = dir.path().join(c).join(split);
                std::fs::create_dir_all(&d).unwrap();
                for k in 0..count {
                    std::fs::write(d.join(format!("{c}_{k:04}.off")), tetra(1.0 + i as f64 + k as f64)).unwrap();
                }
            }
        }
        let (train, test) = load_modelnet_subset(dir.path(), &classes, 32, 0).unwrap();
        assert_eq!((train.len(), test.len()), (12, 4));
        for s in train.samples.iter().chain(&test.samples) {
            assert_eq!(s.y_t, s.y_s / 2);
            assert_eq!(s.cloud.len(), 32);
        }
        assert_eq!(train, load_modelnet_subset(dir.path(), &classes, 32, 0).unwrap().0);
        std::fs::remove_dir_all(dir.path().join("bed").join("test")).unwrap();
        assert!(matches!(
            load_modelnet_subset(dir.path(), &classes, 32, 0),
            Err(Error::Integrity { .. })
        ));
    }
}
