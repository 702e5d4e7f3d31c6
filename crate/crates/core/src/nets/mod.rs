//! Permutation-invariant networks built on candle's autodiff.
//!
//! Parameters are plain [`Var`]s initialised from the caller's seeded
//! generator, so two builds from the same substream are bit-identical.

mod backbone;
pub mod checkpoint;
mod distorter;
mod fused;
mod sampler;

use candle_core::{DType, Device, Tensor, Var};
use rand::Rng;

pub use backbone::{build_backbone, BackboneConfig, BackboneNet};
pub use distorter::{DistorterConfig, DistorterNet, Granularity, SIGMA_MAX, SIGMA_MIN};
pub use fused::{max_over_points, norm_affine};
pub use sampler::{SamplerConfig, SamplerNet};

use crate::error::Result;

/// A parameter with its checkpoint name.
pub type NamedVar = (String, Var);

pub(crate) fn var_from(values: Vec<f32>, shape: &[usize], dtype: DType) -> Result<Var> {
    let t = Tensor::from_vec(values, shape, &Device::Cpu)?.to_dtype(dtype)?;
    Ok(Var::from_tensor(&t)?)
}

/// Fully connected layer, `y = x W + b` with `W` stored as `(in, out)`.
#[derive(Debug, Clone)]
pub struct Linear {
    weight: Var,
    bias: Var,
}

impl Linear {
    /// Fan-in scaled uniform init; `scale` shrinks the weights further.
    pub fn new(fan_in: usize, fan_out: usize, scale: f32, dtype: DType, rng: &mut impl Rng) -> Result<Self> {
        let bound = 1.0 / (fan_in as f32).sqrt();
        let w: Vec<f32> = (0..fan_in * fan_out)
            .map(|_| scale * rng.random_range(-bound..bound))
            .collect();
        let b: Vec<f32> = (0..fan_out).map(|_| rng.random_range(-bound..bound)).collect();
        Ok(Self {
            weight: var_from(w, &[fan_in, fan_out], dtype)?,
            bias: var_from(b, &[fan_out], dtype)?,
        })
    }

    /// Overwrites the bias.
    pub(crate) fn set_bias(&self, values: Vec<f32>) -> Result<()> {
        let dtype = self.bias.dtype();
        let n = values.len();
        self.bias.set(&Tensor::from_vec(values, n, &Device::Cpu)?.to_dtype(dtype)?)?;
        Ok(())
    }

    pub(crate) fn zero_weight(&self) -> Result<()> {
        self.weight.set(&self.weight.zeros_like()?)?;
        Ok(())
    }

    /// Applies the layer to the last dimension of `x`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.project(x)?.broadcast_add(self.bias.as_tensor())?)
    }

    /// `x W` without the bias.
    pub fn project(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims().to_vec();
        let last = *dims.last().expect("non-scalar input");
        let rows = x.elem_count() / last;
        let y = x.reshape((rows, last))?.matmul(self.weight.as_tensor())?;
        let mut out = dims;
        *out.last_mut().unwrap() = y.dim(1)?;
        Ok(y.reshape(out)?)
    }

    pub fn bias(&self) -> &Tensor {
        self.bias.as_tensor()
    }

    pub fn collect(&self, prefix: &str, out: &mut Vec<NamedVar>) {
        out.push((format!("{prefix}.weight"), self.weight.clone()));
        out.push((format!("{prefix}.bias"), self.bias.clone()));
    }
}

/// Layer normalisation over the last dimension with learned affine.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    gamma: Var,
    beta: Var,
}

const LN_EPS: f64 = 1e-5;

impl LayerNorm {
    pub fn new(width: usize, dtype: DType) -> Result<Self> {
        Ok(Self {
            gamma: var_from(vec![1.0; width], &[width], dtype)?,
            beta: var_from(vec![0.0; width], &[width], dtype)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        norm_affine(x, None, self.gamma.as_tensor(), self.beta.as_tensor(), LN_EPS, false)
    }

    /// `relu(forward(lin.forward(x)))` with the bias add folded into the
    /// normalisation kernel.
    pub fn after_linear_relu(&self, lin: &Linear, x: &Tensor) -> Result<Tensor> {
        let h = lin.project(x)?;
        norm_affine(&h, Some(lin.bias()), self.gamma.as_tensor(), self.beta.as_tensor(), LN_EPS, true)
    }

    pub fn collect(&self, prefix: &str, out: &mut Vec<NamedVar>) {
        out.push((format!("{prefix}.gamma"), self.gamma.clone()));
        out.push((format!("{prefix}.beta"), self.beta.clone()));
    }
}

/// Shared per-point MLP followed by a coordinatewise max over points.
///
/// Hidden layers are `linear -> layer norm -> relu`; the last layer is
/// linear, so every pooled dimension has a well-defined arg-max point.
#[derive(Debug, Clone)]
pub struct PointEncoder {
    hidden: Vec<(Linear, LayerNorm)>,
    last: Linear,
}

impl PointEncoder {
    pub fn new(input: usize, widths: &[usize], dtype: DType, rng: &mut impl Rng) -> Result<Self> {
        assert!(!widths.is_empty(), "encoder needs at least one layer");
        let mut fan_in = input;
        let mut hidden = Vec::new();
        for &w in &widths[..widths.len() - 1] {
            hidden.push((Linear::new(fan_in, w, 1.0, dtype, rng)?, LayerNorm::new(w, dtype)?));
            fan_in = w;
        }
        let last = Linear::new(fan_in, *widths.last().unwrap(), 1.0, dtype, rng)?;
        Ok(Self { hidden, last })
    }

    fn hidden_features(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for (lin, norm) in &self.hidden {
            h = norm.after_linear_relu(lin, &h)?;
        }
        Ok(h)
    }

    /// `(B, N, in)` to per-point features `(B, N, F)`.
    pub fn point_features(&self, x: &Tensor) -> Result<Tensor> {
        self.last.forward(&self.hidden_features(x)?)
    }

    /// `(B, N, in)` to the pooled code `(B, F)`. The last bias is added
    /// after pooling, which leaves the maximum unchanged.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let pooled = max_over_points(&self.last.project(&self.hidden_features(x)?)?)?;
        Ok(pooled.broadcast_add(self.last.bias())?)
    }

    pub fn collect(&self, prefix: &str, out: &mut Vec<NamedVar>) {
        for (i, (lin, norm)) in self.hidden.iter().enumerate() {
            lin.collect(&format!("{prefix}.layer{i}"), out);
            norm.collect(&format!("{prefix}.norm{i}"), out);
        }
        self.last.collect(&format!("{prefix}.layer{}", self.hidden.len()), out);
    }
}

/// Flat copies of every parameter's values, for change detection in tests
/// and tooling.
pub fn params_snapshot(params: &[NamedVar]) -> Result<Vec<Vec<f32>>> {
    params
        .iter()
        .map(|(_, v)| Ok(v.as_tensor().to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?))
        .collect()
}
