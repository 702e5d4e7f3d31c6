use candle_core::{DType, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Linear, LayerNorm, NamedVar, PointEncoder};
use crate::cloud::PointCloud;
use crate::error::{Error, Result};

/// Architecture of a classifier backbone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub d: usize,
    /// Per-point encoder widths; the last entry is the pooled feature width.
    pub encoder_widths: Vec<usize>,
    pub head_hidden: usize,
    pub num_classes: usize,
    /// Learned 3x3 input alignment ahead of the encoder.
    #[serde(default)]
    pub input_transform: bool,
}

impl BackboneConfig {
    pub fn desk(num_classes: usize) -> Self {
        Self {
            d: 3,
            encoder_widths: vec![64, 128, 256],
            head_hidden: 128,
            num_classes,
            input_transform: false,
        }
    }

    /// Full-width variant with a 1024-wide pooled feature.
    pub fn full(num_classes: usize) -> Self {
        Self {
            encoder_widths: vec![64, 128, 1024],
            head_hidden: 256,
            input_transform: true,
            ..Self::desk(num_classes)
        }
    }

    pub fn feature_width(&self) -> usize {
        *self.encoder_widths.last().expect("validated non-empty")
    }

    fn validate(&self) -> Result<()> {
        if self.d == 0
            || self.head_hidden == 0
            || self.num_classes == 0
            || self.encoder_widths.is_empty()
            || self.encoder_widths.contains(&0)
        {
            return Err(Error::invalid(format!("backbone sizes must be >= 1: {self:?}")));
        }
        Ok(())
    }
}

/// Predicts a 3x3 alignment from the cloud and applies it.
#[derive(Debug, Clone)]
struct InputTransform {
    encoder: PointEncoder,
    hidden: Linear,
    out: Linear,
}

impl InputTransform {
    fn new(d: usize, dtype: DType, rng: &mut impl Rng) -> Result<Self> {
        let encoder = PointEncoder::new(d, &[64, 128], dtype, rng)?;
        let hidden = Linear::new(128, 64, 1.0, dtype, rng)?;
        let out = Linear::new(64, d * d, 1.0, dtype, rng)?;
        // starts as the identity map
        out.zero_weight()?;
        out.set_bias(vec![0.0; d * d])?;
        Ok(Self { encoder, hidden, out })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, _, d) = x.dims3()?;
        let code = self.encoder.forward(x)?;
        let delta = self.out.forward(&self.hidden.forward(&code)?.relu()?)?.reshape((b, d, d))?;
        let eye = Tensor::eye(d, x.dtype(), x.device())?;
        Ok(x.matmul(&delta.broadcast_add(&eye)?)?)
    }

    fn collect(&self, prefix: &str, out: &mut Vec<NamedVar>) {
        self.encoder.collect(&format!("{prefix}.encoder"), out);
        self.hidden.collect(&format!("{prefix}.hidden"), out);
        self.out.collect(&format!("{prefix}.out"), out);
    }
}

/// Max-pooled point classifier used for both proxy players and the
/// offline attacker.
#[derive(Debug, Clone)]
pub struct BackboneNet {
    cfg: BackboneConfig,
    dtype: DType,
    transform: Option<InputTransform>,
    encoder: PointEncoder,
    head_hidden: Linear,
    head_norm: LayerNorm,
    head_out: Linear,
}

/// Freshly initialised backbone drawn from `rng`.
pub fn build_backbone(cfg: &BackboneConfig, dtype: DType, rng: &mut impl Rng) -> Result<BackboneNet> {
    cfg.validate()?;
    let transform = if cfg.input_transform {
        Some(InputTransform::new(cfg.d, dtype, rng)?)
    } else {
        None
    };
    let encoder = PointEncoder::new(cfg.d, &cfg.encoder_widths, dtype, rng)?;
    let head_hidden = Linear::new(cfg.feature_width(), cfg.head_hidden, 1.0, dtype, rng)?;
    let head_norm = LayerNorm::new(cfg.head_hidden, dtype)?;
    let head_out = Linear::new(cfg.head_hidden, cfg.num_classes, 1.0, dtype, rng)?;
    Ok(BackboneNet {
        cfg: cfg.clone(),
        dtype,
        transform,
        encoder,
        head_hidden,
        head_norm,
        head_out,
    })
}

impl BackboneNet {
    pub fn config(&self) -> &BackboneConfig {
        &self.cfg
    }

    fn aligned(&self, clouds: &Tensor) -> Result<Tensor> {
        let (_, _, d) = clouds.dims3()?;
        if d != self.cfg.d {
            return Err(Error::invalid(format!("backbone expects d = {}, got {d}", self.cfg.d)));
        }
        match &self.transform {
            Some(t) => t.forward(clouds),
            None => Ok(clouds.clone()),
        }
    }

    /// Per-point features `(B, N, F)` ahead of pooling.
    pub fn point_features(&self, clouds: &Tensor) -> Result<Tensor> {
        self.encoder.point_features(&self.aligned(clouds)?)
    }

    /// Pooled global features `(B, F)`.
    pub fn encode(&self, clouds: &Tensor) -> Result<Tensor> {
        self.encoder.forward(&self.aligned(clouds)?)
    }

    pub fn head(&self, features: &Tensor) -> Result<Tensor> {
        let h = self.head_norm.after_linear_relu(&self.head_hidden, features)?;
        self.head_out.forward(&h)
    }

    /// Logits `(B, C)`.
    pub fn classify(&self, clouds: &Tensor) -> Result<Tensor> {
        self.head(&self.encode(clouds)?)
    }

    /// Features and logits from one pass.
    pub fn forward(&self, clouds: &Tensor) -> Result<(Tensor, Tensor)> {
        let features = self.encode(clouds)?;
        let logits = self.head(&features)?;
        Ok((features, logits))
    }

    pub fn encode_cloud(&self, cloud: &PointCloud) -> Result<Vec<f64>> {
        let x = cloud.to_tensor(self.dtype(), &candle_core::Device::Cpu)?.unsqueeze(0)?;
        Ok(self.encode(&x)?.squeeze(0)?.to_dtype(DType::F64)?.to_vec1::<f64>()?)
    }

    pub fn classify_cloud(&self, cloud: &PointCloud) -> Result<Vec<f64>> {
        let x = cloud.to_tensor(self.dtype(), &candle_core::Device::Cpu)?.unsqueeze(0)?;
        Ok(self.classify(&x)?.squeeze(0)?.to_dtype(DType::F64)?.to_vec1::<f64>()?)
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn params(&self) -> Vec<NamedVar> {
        let mut out = Vec::new();
        if let Some(t) = &self.transform {
            t.collect("transform", &mut out);
        }
        self.encoder.collect("encoder", &mut out);
        self.head_hidden.collect("head.hidden", &mut out);
        self.head_norm.collect("head.norm", &mut out);
        self.head_out.collect("head.out", &mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::params_snapshot;
    use candle_core::Device;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cloud(rng: &mut impl Rng, n: usize) -> PointCloud {
        PointCloud::new(
            (0..n)
                .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
                .collect(),
        )
        .unwrap()
    }

    fn net(seed: u64, cfg: &BackboneConfig) -> BackboneNet {
        build_backbone(cfg, DType::F32, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn identical_seeds_identical_parameters() {
        let cfg = BackboneConfig::desk(4);
        let a = params_snapshot(&net(3, &cfg).params()).unwrap();
        let b = params_snapshot(&net(3, &cfg).params()).unwrap();
        let c = params_snapshot(&net(4, &cfg).params()).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn one_point_cloud_gives_finite_logits() {
        let n = net(0, &BackboneConfig::desk(5));
        let logits = n.classify_cloud(&PointCloud::new(vec![[0.1, 0.2, 0.3]]).unwrap()).unwrap();
        assert_eq!(logits.len(), 5);
        assert!(logits.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn permutation_and_duplication_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for cfg in [BackboneConfig::desk(4), BackboneConfig { input_transform: true, ..BackboneConfig::desk(4) }] {
            let n = net(1, &cfg);
            let c = cloud(&mut rng, 64);
            let mut perm: Vec<usize> = (0..64).collect();
            perm.shuffle(&mut rng);
            let base = n.classify_cloud(&c).unwrap();
            let permuted = n.classify_cloud(&c.permuted(&perm)).unwrap();
            for (a, b) in base.iter().zip(&permuted) {
                assert!((a - b).abs() <= 1e-6);
            }
            let feat = n.encode_cloud(&c).unwrap();
            let mut doubled = c.points().to_vec();
            doubled.extend_from_slice(c.points());
            let feat2 = n.encode_cloud(&PointCloud::new(doubled).unwrap()).unwrap();
            for (a, b) in feat.iter().zip(&feat2) {
                assert!((a - b).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn batched_classify_shapes() {
        let n = net(2, &BackboneConfig::desk(3));
        let x = Tensor::randn(0f32, 0.5, (4, 10, 3), &Device::Cpu).unwrap();
        let (f, l) = n.forward(&x).unwrap();
        assert_eq!(f.dims(), &[4, 256]);
        assert_eq!(l.dims(), &[4, 3]);
        assert!(n.classify(&Tensor::zeros((1, 10, 2), DType::F32, &Device::Cpu).unwrap()).is_err());
    }

    #[test]
    fn rejects_zero_sizes() {
        let cfg = BackboneConfig { num_classes: 0, ..BackboneConfig::desk(1) };
        assert!(build_backbone(&cfg, DType::F32, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}
