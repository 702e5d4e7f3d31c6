//! The censoring transformation: invariant sampling followed by noisy
//! distortion.
//!
//! Both stages have learned and fixed variants so the same type carries
//! the learned pipeline and every baseline.

use candle_core::{DType, Device, Tensor};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::{Dataset, LabeledSample, PointCloud, DIM};
use crate::error::{Error, Result};
use crate::geometry::{chamfer_terms, fps, match_hard, soft_project, DEFAULT_NEIGHBORS};
use crate::nets::{DistorterConfig, DistorterNet, NamedVar, SamplerConfig, SamplerNet};
use crate::rng::{RandomStream, Substream};

/// Sampling-loss weights: `avg + GAMMA * max + BETA * t^2`.
pub const SAMPLE_GAMMA: f64 = 1.0;
pub const SAMPLE_BETA: f64 = 1.0;

/// Train mode is soft and differentiable; release mode selects exact input
/// points.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Release,
}

#[derive(Debug, Clone)]
pub enum SamplerStage {
    Learned(SamplerNet),
    /// Farthest point sampling from index 0.
    Fps { r: usize },
    /// Keeps every point.
    Identity,
}

#[derive(Debug, Clone)]
pub enum NoiseStage {
    Learned(DistorterNet),
    /// Zero-mean noise of fixed scale on every coordinate.
    Fixed { sigma: f64 },
    Disabled,
}

/// Architecture description stored in checkpoint headers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SamplerSpec {
    Learned { config: SamplerConfig },
    Fps { r: usize },
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NoiseSpec {
    Learned { config: DistorterConfig },
    Fixed { sigma: f64 },
    Disabled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensorSpec {
    pub sampler: SamplerSpec,
    pub noise: NoiseSpec,
}

/// Sampler stage output for a batch.
#[derive(Debug, Clone)]
pub struct SamplerOutput {
    /// `(B, r, 3)` sampled clouds.
    pub p_s: Tensor,
    /// `(B, r, 3)` generated points before projection (learned stage only).
    pub raw: Option<Tensor>,
    /// Scalar projection temperature (learned stage only).
    pub temperature: Option<Tensor>,
    /// Selected input indices per cloud (release mode and FPS).
    pub indices: Option<Vec<Vec<usize>>>,
}

impl SamplerOutput {
    /// Per-cloud `(avg, max)` chamfer terms of raw against reference and
    /// the squared temperature, when the stage is learned.
    pub fn sample_loss_terms(&self, reference: &Tensor) -> Result<Option<(Tensor, Tensor, Tensor)>> {
        match (&self.raw, &self.temperature) {
            (Some(raw), Some(t)) => {
                let (avg, max) = chamfer_terms(raw, reference)?;
                Ok(Some((avg, max, t.sqr()?)))
            }
            _ => Ok(None),
        }
    }
}

/// Trainable censor `f_D . f_S`.
#[derive(Debug, Clone)]
pub struct CensorModel {
    sampler: SamplerStage,
    noise: NoiseStage,
    dtype: DType,
}

impl CensorModel {
    pub fn new(sampler: SamplerStage, noise: NoiseStage, dtype: DType) -> Result<Self> {
        if let NoiseStage::Fixed { sigma } = noise {
            if !(sigma >= 0.0 && sigma.is_finite()) {
                return Err(Error::invalid(format!("fixed noise scale must be >= 0, got {sigma}")));
            }
        }
        if let SamplerStage::Fps { r: 0 } = sampler {
            return Err(Error::invalid("sample count r must be >= 1"));
        }
        Ok(Self { sampler, noise, dtype })
    }

    /// Fresh model from a spec, initialising learned stages from the
    /// sampler-init and distorter-init substreams.
    pub fn from_spec(spec: &CensorSpec, dtype: DType, stream: &RandomStream) -> Result<Self> {
        let sampler = match &spec.sampler {
            SamplerSpec::Learned { config } => {
                SamplerStage::Learned(SamplerNet::new(config, dtype, &mut stream.substream(Substream::SamplerInit))?)
            }
            SamplerSpec::Fps { r } => SamplerStage::Fps { r: *r },
            SamplerSpec::Identity => SamplerStage::Identity,
        };
        let noise = match &spec.noise {
            NoiseSpec::Learned { config } => NoiseStage::Learned(DistorterNet::new(
                config,
                dtype,
                &mut stream.substream(Substream::DistorterInit),
            )?),
            NoiseSpec::Fixed { sigma } => NoiseStage::Fixed { sigma: *sigma },
            NoiseSpec::Disabled => NoiseStage::Disabled,
        };
        Self::new(sampler, noise, dtype)
    }

    pub fn spec(&self) -> CensorSpec {
        CensorSpec {
            sampler: match &self.sampler {
                SamplerStage::Learned(net) => SamplerSpec::Learned { config: net.config().clone() },
                SamplerStage::Fps { r } => SamplerSpec::Fps { r: *r },
                SamplerStage::Identity => SamplerSpec::Identity,
            },
            noise: match &self.noise {
                NoiseStage::Learned(net) => NoiseSpec::Learned { config: net.config().clone() },
                NoiseStage::Fixed { sigma } => NoiseSpec::Fixed { sigma: *sigma },
                NoiseStage::Disabled => NoiseSpec::Disabled,
            },
        }
    }

    pub fn sampler(&self) -> &SamplerStage {
        &self.sampler
    }

    pub fn noise(&self) -> &NoiseStage {
        &self.noise
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    /// Output point count for inputs of `n` points.
    pub fn output_len(&self, n: usize) -> usize {
        match &self.sampler {
            SamplerStage::Learned(net) => net.r(),
            SamplerStage::Fps { r } => *r,
            SamplerStage::Identity => n,
        }
    }

    /// Learned sampler parameters, prefixed `sampler.`.
    pub fn sampler_params(&self) -> Vec<NamedVar> {
        match &self.sampler {
            SamplerStage::Learned(net) => prefixed("sampler", net.params()),
            _ => Vec::new(),
        }
    }

    /// Learned distorter parameters, prefixed `distorter.`.
    pub fn distorter_params(&self) -> Vec<NamedVar> {
        match &self.noise {
            NoiseStage::Learned(net) => prefixed("distorter", net.params()),
            _ => Vec::new(),
        }
    }

    pub fn params(&self) -> Vec<NamedVar> {
        let mut p = self.sampler_params();
        p.extend(self.distorter_params());
        p
    }

    fn check_len(&self, n: usize) -> Result<()> {
        let r = self.output_len(n);
        if r > n {
            return Err(Error::invalid(format!("cannot sample r = {r} points from a cloud of {n}")));
        }
        Ok(())
    }

    /// Runs the sampler on `(B, n, 3)` clouds.
    pub fn sample_invariant(&self, clouds: &Tensor, mode: Mode) -> Result<SamplerOutput> {
        let clouds = clouds.to_dtype(self.dtype)?;
        let (_, n, _) = clouds.dims3()?;
        self.check_len(n)?;
        match (&self.sampler, mode) {
            (SamplerStage::Learned(net), Mode::Train) => {
                let raw = net.generate_points(&clouds)?;
                let t = net.temperature()?;
                let proj = soft_project(&raw, &clouds, &t, DEFAULT_NEIGHBORS.min(n))?;
                Ok(SamplerOutput {
                    p_s: proj.projected,
                    raw: Some(raw),
                    temperature: Some(t),
                    indices: None,
                })
            }
            (SamplerStage::Learned(net), Mode::Release) => {
                let raw = net.generate_points(&clouds)?.detach();
                let gen = host_points(&raw)?;
                let reference = host_points(&clouds)?;
                let indices = gen
                    .iter()
                    .zip(&reference)
                    .map(|(g, p)| match_hard(g, p))
                    .collect::<Result<Vec<_>>>()?;
                Ok(SamplerOutput {
                    p_s: gather(&clouds, &indices)?,
                    raw: Some(raw),
                    temperature: Some(net.temperature()?.detach()),
                    indices: Some(indices),
                })
            }
            (SamplerStage::Fps { r }, _) => {
                let indices = host_points(&clouds)?
                    .iter()
                    .map(|p| fps(p, *r, 0))
                    .collect::<Result<Vec<_>>>()?;
                Ok(SamplerOutput {
                    p_s: gather(&clouds, &indices)?,
                    raw: None,
                    temperature: None,
                    indices: Some(indices),
                })
            }
            (SamplerStage::Identity, _) => Ok(SamplerOutput {
                p_s: clouds,
                raw: None,
                temperature: None,
                indices: None,
            }),
        }
    }

    /// Noise parameters `(mu, sigma)` for sampled clouds, if the stage adds
    /// noise. Fixed noise has `mu = 0`.
    pub fn noise_params(&self, p_s: &Tensor) -> Result<Option<(Tensor, Tensor)>> {
        match &self.noise {
            NoiseStage::Learned(net) => Ok(Some(net.noise_params(p_s)?)),
            NoiseStage::Fixed { sigma } => {
                let (b, _, _) = p_s.dims3()?;
                let mu = Tensor::zeros((b, 1, DIM), self.dtype, p_s.device())?;
                let sigma = (mu.ones_like()? * *sigma)?;
                Ok(Some((mu, sigma)))
            }
            NoiseStage::Disabled => Ok(None),
        }
    }

    /// `p_s + mu + sigma * eps` for a given standard-normal draw `eps` of
    /// the same shape as `p_s`. Gradients flow to `mu` and `sigma`.
    pub fn distort_with(&self, p_s: &Tensor, eps: &Tensor) -> Result<Tensor> {
        match self.noise_params(p_s)? {
            None => Ok(p_s.clone()),
            Some((mu, sigma)) => {
                let eps = eps.to_dtype(self.dtype)?;
                Ok(p_s.broadcast_add(&mu)?.add(&eps.broadcast_mul(&sigma)?)?)
            }
        }
    }

    /// [`Self::distort_with`] drawing `eps` from `rng`.
    pub fn distort(&self, p_s: &Tensor, rng: &mut impl Rng) -> Result<Tensor> {
        if matches!(self.noise, NoiseStage::Disabled) {
            return Ok(p_s.clone());
        }
        let eps = standard_normal(p_s.dims(), self.dtype, rng)?;
        self.distort_with(p_s, &eps)
    }

    /// Train-mode forward on a batch: soft sampling then reparameterised
    /// noise.
    pub fn forward_train(&self, clouds: &Tensor, rng: &mut impl Rng) -> Result<(Tensor, SamplerOutput)> {
        let out = self.sample_invariant(clouds, Mode::Train)?;
        let censored = self.distort(&out.p_s, rng)?;
        Ok((censored, out))
    }

    /// Release-mode censoring of one cloud, noise drawn from the stream's
    /// noise substream.
    pub fn censor(&self, cloud: &PointCloud, stream: &RandomStream) -> Result<PointCloud> {
        let x = cloud.to_tensor(self.dtype, &Device::Cpu)?.unsqueeze(0)?;
        let out = self.sample_invariant(&x, Mode::Release)?;
        let released = self.distort(&out.p_s, &mut stream.substream(Substream::NoiseDraw))?;
        PointCloud::from_tensor(&released.squeeze(0)?)
    }

    /// Censors every sample with a stream derived from `(seed, index)`.
    /// Labels pass through unchanged; output order equals input order.
    pub fn censor_dataset(&self, dataset: &Dataset, seed: u64) -> Result<Dataset> {
        let root = RandomStream::new(seed);
        let samples = dataset
            .samples
            .par_iter()
            .enumerate()
            .map(|(i, s)| {
                Ok(LabeledSample {
                    cloud: self.censor(&s.cloud, &root.derive("censor", i as u64))?,
                    y_t: s.y_t,
                    y_s: s.y_s,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        dataset.with_samples(samples)
    }
}

fn prefixed(prefix: &str, params: Vec<NamedVar>) -> Vec<NamedVar> {
    params
        .into_iter()
        .map(|(name, v)| (format!("{prefix}.{name}"), v))
        .collect()
}

fn host_points(t: &Tensor) -> Result<Vec<Vec<[f32; 3]>>> {
    Ok(t
        .to_dtype(DType::F32)?
        .to_vec3::<f32>()?
        .into_iter()
        .map(|cloud| cloud.into_iter().map(|p| [p[0], p[1], p[2]]).collect())
        .collect())
}

/// Rows `indices[b]` of each cloud in `(B, n, 3)`, copied exactly.
fn gather(clouds: &Tensor, indices: &[Vec<usize>]) -> Result<Tensor> {
    let (_, n, _) = clouds.dims3()?;
    let r = indices.first().map_or(0, Vec::len);
    let flat: Vec<u32> = indices
        .iter()
        .enumerate()
        .flat_map(|(b, idx)| idx.iter().map(move |&i| (b * n + i) as u32))
        .collect();
    let idx = Tensor::from_vec(flat, indices.len() * r, clouds.device())?;
    Ok(clouds
        .reshape((indices.len() * n, DIM))?
        .index_select(&idx, 0)?
        .reshape((indices.len(), r, DIM))?)
}

/// Standard-normal tensor drawn in row-major order from `rng`.
pub fn standard_normal(shape: &[usize], dtype: DType, rng: &mut impl Rng) -> Result<Tensor> {
    let count: usize = shape.iter().product();
    let values: Vec<f64> = (0..count).map(|_| rng.sample(StandardNormal)).collect();
    Ok(Tensor::from_vec(values, shape, &Device::Cpu)?.to_dtype(dtype)?)
}
