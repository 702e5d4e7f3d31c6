//! Synthetic clouds with one region per attribute and a shared region.
//!
//! Each cloud has three groups of points at fixed centers: a task region
//! whose shape encodes `y_t`, a sensitive region whose shape encodes `y_s`,
//! and an overlap region holding a fraction `overlap` of the points, shaped
//! like the task archetype and stretched along an axis chosen by `y_s`.
//! With `overlap = 0` the attributes are spatially separable.

use std::f64::consts::TAU;

use rand::Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use serde::{Deserialize, Serialize};

use crate::cloud::{normalize_cloud, split_dataset, Dataset, LabeledSample, PointCloud, Split};
use crate::error::{Error, Result};
use crate::rng::{RandomStream, Substream};

pub const ARCHETYPES: [&str; 4] = ["sphere", "cube", "ring", "two-lobe"];

const TASK_CENTER: [f64; 3] = [-0.55, 0.0, 0.0];
const SENSITIVE_CENTER: [f64; 3] = [0.55, 0.0, 0.0];
const OVERLAP_CENTER: [f64; 3] = [0.0, 0.45, 0.0];
// The task region is the largest so that it always holds the farthest
// point. Together with exactly centred regions this keeps the normalized
// task points independent of `y_s`.
const TASK_SCALE: f64 = 0.35;
const SENSITIVE_SCALE: f64 = 0.12;
const OVERLAP_SCALE: f64 = 0.15;
/// Per-sensitive-class stretch of the overlap region.
const STRETCH: [[f64; 3]; 4] = [[1.8, 1.0, 1.0], [1.0, 1.8, 1.0], [1.0, 1.0, 1.8], [0.55, 0.55, 0.55]];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub task_classes: usize,
    pub sensitive_classes: usize,
    /// Points per cloud.
    pub n: usize,
    /// Fraction of points in the overlap region.
    pub overlap: f64,
    /// Standard deviation of the coordinate jitter, before normalization.
    pub noise_floor: f64,
    pub samples_per_pair: usize,
    pub seed: u64,
    pub train_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            task_classes: 4,
            sensitive_classes: 4,
            n: 512,
            overlap: 0.0,
            noise_floor: 0.01,
            samples_per_pair: 50,
            seed: 0,
            train_fraction: 0.8,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.task_classes == 0 || self.sensitive_classes == 0 || self.n == 0 || self.samples_per_pair == 0 {
            return Err(Error::invalid(format!("synthetic counts must be >= 1: {self:?}")));
        }
        if self.task_classes > ARCHETYPES.len() || self.sensitive_classes > ARCHETYPES.len() {
            return Err(Error::invalid(format!(
                "only {} shape archetypes exist; asked for {} task and {} sensitive classes",
                ARCHETYPES.len(),
                self.task_classes,
                self.sensitive_classes
            )));
        }
        if !(0.0..=1.0).contains(&self.overlap) {
            return Err(Error::invalid(format!("overlap must lie in [0, 1], got {}", self.overlap)));
        }
        if !(self.noise_floor >= 0.0 && self.noise_floor.is_finite()) {
            return Err(Error::invalid(format!("noise floor must be >= 0, got {}", self.noise_floor)));
        }
        Ok(())
    }

    /// Point counts `(task, sensitive, overlap)` per cloud.
    pub fn region_sizes(&self) -> (usize, usize, usize) {
        let overlap = (self.overlap * self.n as f64).round() as usize;
        let rest = self.n - overlap;
        (rest - rest / 2, rest / 2, overlap)
    }
}

/// Point on the surface of archetype `which`; every archetype reaches norm 1.
fn archetype_point(which: usize, rng: &mut impl Rng) -> [f64; 3] {
    match which {
        0 => UnitSphere.sample(rng),
        1 => {
            let face = rng.random_range(0..6);
            let axis = face / 2;
            let half = 1.0 / 3f64.sqrt();
            let mut p: [f64; 3] = std::array::from_fn(|_| rng.random_range(-half..half));
            p[axis] = if face % 2 == 0 { half } else { -half };
            p
        }
        2 => {
            let a = rng.random_range(0.0..TAU);
            let b = rng.random_range(0.0..TAU);
            let (big, small) = (0.8, 0.2);
            [(big + small * b.cos()) * a.cos(), (big + small * b.cos()) * a.sin(), small * b.sin()]
        }
        _ => {
            let s: [f64; 3] = UnitSphere.sample(rng);
            let side = if rng.random::<bool>() { 0.55 } else { -0.55 };
            [side + 0.45 * s[0], 0.45 * s[1], 0.45 * s[2]]
        }
    }
}

/// Appends `count` points of a randomly rotated archetype whose mean is
/// exactly `center`.
#[allow(clippy::too_many_arguments)]
fn region(
    out: &mut Vec<[f32; 3]>,
    count: usize,
    archetype: usize,
    center: [f64; 3],
    scale: f64,
    stretch: [f64; 3],
    jitter: &Normal<f64>,
    rng: &mut impl Rng,
) {
    if count == 0 {
        return;
    }
    let theta = rng.random_range(0.0..TAU);
    let (s, c) = theta.sin_cos();
    let pts: Vec<[f64; 3]> = (0..count)
        .map(|_| {
            let p = archetype_point(archetype, rng);
            let rotated = [c * p[0] - s * p[1], s * p[0] + c * p[1], p[2]];
            std::array::from_fn(|k| scale * stretch[k] * rotated[k] + jitter.sample(rng))
        })
        .collect();
    let mean: [f64; 3] = std::array::from_fn(|k| pts.iter().map(|p| p[k]).sum::<f64>() / count as f64);
    out.extend(pts.iter().map(|p| std::array::from_fn(|k| (center[k] + p[k] - mean[k]) as f32)));
}

/// One cloud for labels `(y_t, y_s)`.
pub fn synth_cloud(config: &SynthConfig, y_t: usize, y_s: usize, rng: &mut impl Rng) -> Result<PointCloud> {
    let (n_task, n_sens, n_overlap) = config.region_sizes();
    let jitter = Normal::new(0.0, config.noise_floor).map_err(|e| Error::invalid(e.to_string()))?;
    let mut pts = Vec::with_capacity(config.n);
    region(&mut pts, n_task, y_t, TASK_CENTER, TASK_SCALE, [1.0; 3], &jitter, rng);
    region(&mut pts, n_sens, y_s, SENSITIVE_CENTER, SENSITIVE_SCALE, [1.0; 3], &jitter, rng);
    region(&mut pts, n_overlap, y_t, OVERLAP_CENTER, OVERLAP_SCALE, STRETCH[y_s], &jitter, rng);
    normalize_cloud(&PointCloud::new(pts)?)
}

/// Balanced dataset over every `(y_t, y_s)` pair, split stratified.
pub fn synth_generate(config: &SynthConfig) -> Result<(Dataset, Dataset)> {
    config.validate()?;
    let root = RandomStream::new(config.seed);
    let mut samples = Vec::new();
    for y_t in 0..config.task_classes {
        for y_s in 0..config.sensitive_classes {
            for k in 0..config.samples_per_pair {
                let id = ((y_t * config.sensitive_classes + y_s) * config.samples_per_pair + k) as u64;
                let mut rng = root.derive("synth", id).substream(Substream::Data);
                samples.push(LabeledSample {
                    cloud: synth_cloud(config, y_t, y_s, &mut rng)?,
                    y_t,
                    y_s,
                });
            }
        }
    }
    let names = |k: usize| ARCHETYPES[..k].iter().map(|s| s.to_string()).collect();
    let all = Dataset::new(samples, names(config.task_classes), names(config.sensitive_classes), Split::Train)?;
    let (train, mut test) = split_dataset(&all, config.train_fraction, &root)?;
    test.split = Split::Test;
    Ok((train, test))
}

/// Drops the sensitive region of a synthetic cloud (the points generated
/// second). Only meaningful for clouds from [`synth_cloud`].
pub fn without_sensitive_region(config: &SynthConfig, cloud: &PointCloud) -> Result<PointCloud> {
    let (n_task, n_sens, _) = config.region_sizes();
    let keep = cloud
        .points()
        .iter()
        .enumerate()
        .filter(|(i, _)| *i < n_task || *i >= n_task + n_sens)
        .map(|(_, p)| *p)
        .collect();
    PointCloud::new(keep)
}
