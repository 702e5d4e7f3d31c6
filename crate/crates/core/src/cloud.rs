//! Point clouds, labeled samples and datasets.

use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{RandomStream, Substream};

/// Coordinate dimension of every shipped dataset.
pub const DIM: usize = 3;

/// An unordered set of 3-D points.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<[f32; 3]>,
}

impl PointCloud {
    /// Builds a cloud, rejecting empty input and non-finite coordinates.
    pub fn new(points: Vec<[f32; 3]>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("point cloud must contain at least one point"));
        }
        if let Some(i) = points
            .iter()
            .position(|p| p.iter().any(|c| !c.is_finite()))
        {
            return Err(Error::invalid(format!("point {i} has a non-finite coordinate")));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[[f32; 3]] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn into_points(self) -> Vec<[f32; 3]> {
        self.points
    }

    /// Largest Euclidean norm over the points.
    pub fn max_norm(&self) -> f64 {
        self.points
            .iter()
            .map(norm)
            .fold(0.0, f64::max)
    }

    /// Row-permuted copy: output row `i` is input row `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> PointCloud {
        PointCloud {
            points: perm.iter().map(|&i| self.points[i]).collect(),
        }
    }

    /// `(n, 3)` tensor of the coordinates.
    pub fn to_tensor(&self, dtype: DType, device: &Device) -> Result<Tensor> {
        let flat: Vec<f32> = self.points.iter().flatten().copied().collect();
        Ok(Tensor::from_vec(flat, (self.len(), DIM), device)?.to_dtype(dtype)?)
    }

    /// Reads an `(n, 3)` tensor back into a cloud.
    pub fn from_tensor(t: &Tensor) -> Result<PointCloud> {
        let rows = t.to_dtype(DType::F32)?.to_vec2::<f32>()?;
        let points = rows
            .into_iter()
            .map(|r| {
                if r.len() != DIM {
                    return Err(Error::invalid(format!("expected {DIM} columns, got {}", r.len())));
                }
                Ok([r[0], r[1], r[2]])
            })
            .collect::<Result<Vec<_>>>()?;
        PointCloud::new(points)
    }
}

fn norm(p: &[f32; 3]) -> f64 {
    p.iter().map(|&c| (c as f64) * (c as f64)).sum::<f64>().sqrt()
}

/// Stacks equally sized clouds into a `(B, n, 3)` tensor.
pub fn stack_clouds<'a, I>(clouds: I, dtype: DType, device: &Device) -> Result<Tensor>
where
    I: IntoIterator<Item = &'a PointCloud>,
{
    let mut flat = Vec::new();
    let mut count = 0;
    let mut n = None;
    for c in clouds {
        match n {
            None => n = Some(c.len()),
            Some(n) if n != c.len() => {
                return Err(Error::invalid(format!(
                    "cannot batch clouds of {n} and {} points",
                    c.len()
                )))
            }
            _ => {}
        }
        flat.extend(c.points.iter().flatten().copied());
        count += 1;
    }
    let n = n.ok_or_else(|| Error::invalid("cannot batch zero clouds"))?;
    Ok(Tensor::from_vec(flat, (count, n, DIM), device)?.to_dtype(dtype)?)
}

/// Centers a cloud at its centroid and scales it so the farthest point has
/// norm 1.
pub fn normalize_cloud(cloud: &PointCloud) -> Result<PointCloud> {
    let n = cloud.len() as f64;
    let mut centroid = [0f64; 3];
    for p in cloud.points() {
        for (c, &v) in centroid.iter_mut().zip(p) {
            *c += v as f64;
        }
    }
    centroid.iter_mut().for_each(|c| *c /= n);

    let centered: Vec<[f64; 3]> = cloud
        .points()
        .iter()
        .map(|p| {
            [
                p[0] as f64 - centroid[0],
                p[1] as f64 - centroid[1],
                p[2] as f64 - centroid[2],
            ]
        })
        .collect();
    let radius = centered
        .iter()
        .map(|p| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt())
        .fold(0.0, f64::max);
    let first = cloud.points()[0];
    if radius <= 1e-12 || cloud.points().iter().all(|p| *p == first) {
        return Err(Error::ZeroSpread);
    }
    PointCloud::new(
        centered
            .iter()
            .map(|p| {
                [
                    (p[0] / radius) as f32,
                    (p[1] / radius) as f32,
                    (p[2] / radius) as f32,
                ]
            })
            .collect(),
    )
}

/// A cloud with its task label `y_t` and sensitive label `y_s`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub cloud: PointCloud,
    pub y_t: usize,
    pub y_s: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Which label a classifier is trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Attribute {
    Task,
    Sensitive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<LabeledSample>,
    pub task_classes: Vec<String>,
    pub sensitive_classes: Vec<String>,
    pub split: Split,
}

impl Dataset {
    /// Validates label bounds and that all clouds share one point count.
    pub fn new(
        samples: Vec<LabeledSample>,
        task_classes: Vec<String>,
        sensitive_classes: Vec<String>,
        split: Split,
    ) -> Result<Self> {
        if task_classes.is_empty() || sensitive_classes.is_empty() {
            return Err(Error::invalid("class lists must be non-empty"));
        }
        if let Some(first) = samples.first() {
            let n = first.cloud.len();
            for (i, s) in samples.iter().enumerate() {
                if s.cloud.len() != n {
                    return Err(Error::invalid(format!(
                        "sample {i} has {} points, expected {n}",
                        s.cloud.len()
                    )));
                }
                if s.y_t >= task_classes.len() || s.y_s >= sensitive_classes.len() {
                    return Err(Error::invalid(format!(
                        "sample {i} labels ({}, {}) out of bounds ({}, {})",
                        s.y_t,
                        s.y_s,
                        task_classes.len(),
                        sensitive_classes.len()
                    )));
                }
            }
        }
        Ok(Self {
            samples,
            task_classes,
            sensitive_classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Points per cloud, or 0 for an empty dataset.
    pub fn points_per_cloud(&self) -> usize {
        self.samples.first().map_or(0, |s| s.cloud.len())
    }

    pub fn num_classes(&self, attr: Attribute) -> usize {
        match attr {
            Attribute::Task => self.task_classes.len(),
            Attribute::Sensitive => self.sensitive_classes.len(),
        }
    }

    pub fn label(&self, i: usize, attr: Attribute) -> usize {
        match attr {
            Attribute::Task => self.samples[i].y_t,
            Attribute::Sensitive => self.samples[i].y_s,
        }
    }

    /// Errors unless every declared class of both attributes occurs.
    pub fn check_class_coverage(&self) -> Result<()> {
        for attr in [Attribute::Task, Attribute::Sensitive] {
            let mut seen = vec![false; self.num_classes(attr)];
            for i in 0..self.len() {
                seen[self.label(i, attr)] = true;
            }
            if let Some(missing) = seen.iter().position(|s| !s) {
                return Err(Error::invalid(format!(
                    "{:?} class {missing} never appears in the {} split",
                    attr,
                    self.split.name()
                )));
            }
        }
        Ok(())
    }

    /// Same classes and split, different samples.
    pub fn with_samples(&self, samples: Vec<LabeledSample>) -> Result<Dataset> {
        Dataset::new(
            samples,
            self.task_classes.clone(),
            self.sensitive_classes.clone(),
            self.split,
        )
    }

    /// Batches the clouds at `indices` into `(B, n, 3)`.
    pub fn batch_tensor(&self, indices: &[usize], dtype: DType, device: &Device) -> Result<Tensor> {
        stack_clouds(indices.iter().map(|&i| &self.samples[i].cloud), dtype, device)
    }

    /// Labels at `indices` as a `u32` tensor.
    pub fn label_tensor(&self, indices: &[usize], attr: Attribute, device: &Device) -> Result<Tensor> {
        let labels: Vec<u32> = indices.iter().map(|&i| self.label(i, attr) as u32).collect();
        Ok(Tensor::from_vec(labels, indices.len(), device)?)
    }
}

/// Stratified split by `(y_t, y_s)` cell.
///
/// Each cell with at least two samples contributes `round(fraction * count)`
/// samples to train (at least one to each side); smaller cells go wholly to
/// train. Both outputs keep the input order.
pub fn split_dataset(
    dataset: &Dataset,
    train_fraction: f64,
    rng: &RandomStream,
) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let mut cells: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (i, s) in dataset.samples.iter().enumerate() {
        cells.entry((s.y_t, s.y_s)).or_default().push(i);
    }

    let mut gen = rng.substream(Substream::Data);
    let mut in_train = vec![false; dataset.len()];
    for (cell, mut members) in cells {
        if members.len() < 2 {
            log::warn!(
                "label cell {cell:?} has {} sample(s); assigning it wholly to train",
                members.len()
            );
            members.iter().for_each(|&i| in_train[i] = true);
            continue;
        }
        members.shuffle(&mut gen);
        let count = members.len();
        let n_train = ((train_fraction * count as f64).round() as usize).clamp(1, count - 1);
        members[..n_train].iter().for_each(|&i| in_train[i] = true);
    }

    let pick = |want: bool| -> Vec<LabeledSample> {
        dataset
            .samples
            .iter()
            .zip(&in_train)
            .filter(|(_, &t)| t == want)
            .map(|(s, _)| s.clone())
            .collect()
    };
    let mut train = dataset.with_samples(pick(true))?;
    train.split = Split::Train;
    let mut test = dataset.with_samples(pick(false))?;
    test.split = Split::Test;
    Ok((train, test))
}
