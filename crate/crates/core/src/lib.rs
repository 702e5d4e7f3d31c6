//! Censoring sensitive attributes out of point-cloud datasets by learned
//! noisy sampling.
//!
//! A data owner passes every cloud through a learned sampler (keep `r`
//! points relevant to the task) and a learned distorter (add Gaussian noise
//! whose parameters depend on the sampled points), trained against proxy
//! user and attacker classifiers. The released clouds live in the same
//! space as the input, so any point-cloud model can consume them.
//!
//! Module map:
//! - [`cloud`], [`rng`]: shared types, datasets and seeded random streams.
//! - [`geometry`]: farthest point sampling, chamfer terms, soft projection
//!   and hard matching.
//! - [`nets`]: max-pooled classifier backbone, sampler and distorter
//!   networks, checkpoints.
//! - [`censor`]: the sampling + distortion pipeline in train and release
//!   modes.
//! - [`objectives`], [`training`]: losses and the alternating three-player
//!   optimisation, plus the baseline pipelines.
//! - [`evaluation`]: offline attack, utility, sweeps, Pareto front,
//!   normalised hypervolume and critical-point overlap.
//! - [`data`]: OFF meshes, surface sampling, ModelNet subsets, the synthetic
//!   two-attribute generator and the on-disk dataset format.

// `!(x > 0.0)` style checks are meant to reject NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod censor;
pub mod cloud;
pub mod data;
mod error;
pub mod evaluation;
pub mod geometry;
pub mod nets;
pub mod objectives;
pub mod rng;
pub mod training;

use std::io::Write;
use std::path::Path;

pub use censor::{CensorModel, Mode, NoiseStage, SamplerOutput, SamplerStage};
pub use cloud::{normalize_cloud, split_dataset, Attribute, Dataset, LabeledSample, PointCloud, Split};
pub use error::{Error, Result};
pub use evaluation::{nhv, pareto_front, ParetoReport, TradeoffPoint};
pub use objectives::LossBreakdown;
pub use rng::{RandomStream, Substream};
pub use training::{PipelineKind, TrainConfig, TrainHistory};

/// Writes `bytes` to `path` via a sibling temp file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}
