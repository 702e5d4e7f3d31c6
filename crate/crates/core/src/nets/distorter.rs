use candle_core::{DType, Tensor, D};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Linear, NamedVar, PointEncoder};
use crate::cloud::DIM;
use crate::error::{Error, Result};

pub const SIGMA_MIN: f64 = 1e-4;
pub const SIGMA_MAX: f64 = 2.0;

/// Whether one noise distribution is shared by all sampled points or each
/// point gets its own.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Shared,
    Pointwise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistorterConfig {
    pub granularity: Granularity,
    /// Widths of the encoder producing the global context code.
    pub encoder_widths: Vec<usize>,
    pub hidden_widths: Vec<usize>,
    pub init_sigma: f64,
}

impl DistorterConfig {
    pub fn desk(granularity: Granularity) -> Self {
        Self {
            granularity,
            encoder_widths: vec![64, 128],
            hidden_widths: vec![128, 64],
            init_sigma: 0.05,
        }
    }
}

/// Maps sampled points to Gaussian noise parameters.
///
/// Each point sees its own coordinates and a pooled code of the whole
/// sampled cloud.
#[derive(Debug, Clone)]
pub struct DistorterNet {
    cfg: DistorterConfig,
    encoder: PointEncoder,
    hidden: Vec<Linear>,
    out: Linear,
}

impl DistorterNet {
    pub fn new(cfg: &DistorterConfig, dtype: DType, rng: &mut impl Rng) -> Result<Self> {
        if cfg.encoder_widths.is_empty() || !(SIGMA_MIN..=SIGMA_MAX).contains(&cfg.init_sigma) {
            return Err(Error::invalid(format!("invalid distorter config {cfg:?}")));
        }
        let encoder = PointEncoder::new(DIM, &cfg.encoder_widths, dtype, rng)?;
        let mut fan_in = DIM + cfg.encoder_widths.last().unwrap();
        let mut hidden = Vec::new();
        for &w in &cfg.hidden_widths {
            hidden.push(Linear::new(fan_in, w, 1.0, dtype, rng)?);
            fan_in = w;
        }
        let out = Linear::new(fan_in, 2 * DIM, 0.01, dtype, rng)?;
        let log_sigma = cfg.init_sigma.ln() as f32;
        out.set_bias(vec![0.0, 0.0, 0.0, log_sigma, log_sigma, log_sigma])?;
        Ok(Self {
            cfg: cfg.clone(),
            encoder,
            hidden,
            out,
        })
    }

    pub fn config(&self) -> &DistorterConfig {
        &self.cfg
    }

    pub fn granularity(&self) -> Granularity {
        self.cfg.granularity
    }

    /// `(mu, sigma)` for sampled points `(B, r, 3)`: each `(B, r, 3)` when
    /// pointwise, `(B, 1, 3)` when shared. Sigma is clamped to
    /// `[SIGMA_MIN, SIGMA_MAX]`.
    pub fn noise_params(&self, sampled: &Tensor) -> Result<(Tensor, Tensor)> {
        let (b, r, _) = sampled.dims3()?;
        let code = self.encoder.forward(sampled)?;
        let width = code.dim(1)?;
        let context = code.unsqueeze(1)?.broadcast_as((b, r, width))?;
        let mut h = Tensor::cat(&[sampled, &context], D::Minus1)?;
        for layer in &self.hidden {
            h = layer.forward(&h)?.relu()?;
        }
        let mut raw = self.out.forward(&h)?;
        if self.cfg.granularity == Granularity::Shared {
            raw = raw.mean_keepdim(1)?;
        }
        let mu = raw.narrow(D::Minus1, 0, DIM)?;
        let log_sigma = raw
            .narrow(D::Minus1, DIM, DIM)?
            .clamp(SIGMA_MIN.ln(), SIGMA_MAX.ln())?;
        Ok((mu, log_sigma.exp()?))
    }

    pub fn params(&self) -> Vec<NamedVar> {
        let mut out = Vec::new();
        self.encoder.collect("encoder", &mut out);
        for (i, l) in self.hidden.iter().enumerate() {
            l.collect(&format!("hidden{i}"), &mut out);
        }
        self.out.collect("out", &mut out);
        out
    }
}
