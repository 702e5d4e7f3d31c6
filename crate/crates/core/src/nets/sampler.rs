use candle_core::{DType, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{var_from, Linear, NamedVar, PointEncoder};
use crate::cloud::DIM;
use crate::error::{Error, Result};
use candle_core::Var;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Number of points emitted per cloud.
    pub r: usize,
    pub encoder_widths: Vec<usize>,
    pub generator_widths: Vec<usize>,
    pub init_temperature: f64,
}

impl SamplerConfig {
    pub fn desk(r: usize) -> Self {
        Self {
            r,
            encoder_widths: vec![64, 64, 128],
            generator_widths: vec![256, 256],
            init_temperature: 1.0,
        }
    }
}

/// Learned point generator: pooled code of the input cloud mapped to `r`
/// raw points, plus the learned projection temperature.
#[derive(Debug, Clone)]
pub struct SamplerNet {
    cfg: SamplerConfig,
    encoder: PointEncoder,
    generator: Vec<Linear>,
    /// Temperature before the softplus.
    temperature_raw: Var,
}

impl SamplerNet {
    pub fn new(cfg: &SamplerConfig, dtype: DType, rng: &mut impl Rng) -> Result<Self> {
        if cfg.r == 0 || cfg.encoder_widths.is_empty() || !(cfg.init_temperature > 0.0) {
            return Err(Error::invalid(format!("invalid sampler config {cfg:?}")));
        }
        let encoder = PointEncoder::new(DIM, &cfg.encoder_widths, dtype, rng)?;
        let mut generator = Vec::new();
        let mut fan_in = *cfg.encoder_widths.last().unwrap();
        for &w in &cfg.generator_widths {
            generator.push(Linear::new(fan_in, w, 1.0, dtype, rng)?);
            fan_in = w;
        }
        let out = Linear::new(fan_in, cfg.r * DIM, 0.1, dtype, rng)?;
        // start from points spread through the ball of radius 0.7
        let mut seeds = Vec::with_capacity(cfg.r * DIM);
        while seeds.len() < cfg.r * DIM {
            let p: [f32; 3] = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            if p.iter().map(|c| c * c).sum::<f32>() <= 1.0 {
                seeds.extend(p.iter().map(|c| 0.7 * c));
            }
        }
        out.set_bias(seeds)?;
        generator.push(out);
        let raw = (cfg.init_temperature.exp() - 1.0).ln() as f32;
        Ok(Self {
            cfg: cfg.clone(),
            encoder,
            generator,
            temperature_raw: var_from(vec![raw], &[], dtype)?,
        })
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.cfg
    }

    pub fn r(&self) -> usize {
        self.cfg.r
    }

    /// Raw generated points `(B, r, 3)` for input clouds `(B, n, 3)`.
    pub fn generate_points(&self, clouds: &Tensor) -> Result<Tensor> {
        let b = clouds.dim(0)?;
        let mut h = self.encoder.forward(clouds)?;
        let last = self.generator.len() - 1;
        for (i, layer) in self.generator.iter().enumerate() {
            h = layer.forward(&h)?;
            if i < last {
                h = h.relu()?;
            }
        }
        Ok(h.reshape((b, self.cfg.r, DIM))?)
    }

    /// Positive projection temperature, `softplus(raw)`.
    pub fn temperature(&self) -> Result<Tensor> {
        let raw = self.temperature_raw.as_tensor();
        Ok((raw.exp()? + 1.0)?.log()?)
    }

    pub fn params(&self) -> Vec<NamedVar> {
        let mut out = Vec::new();
        self.encoder.collect("encoder", &mut out);
        for (i, l) in self.generator.iter().enumerate() {
            l.collect(&format!("generator.layer{i}"), &mut out);
        }
        out.push(("temperature_raw".to_string(), self.temperature_raw.clone()));
        out
    }
}
