//! Central finite-difference audits of every differentiable piece, in f64.

use candle_core::{DType, Device, Tensor, Var};
use cbns_core::censor::{CensorModel, Mode, NoiseStage, SamplerStage};
use cbns_core::geometry::{chamfer_terms, soft_project};
use cbns_core::nets::{
    build_backbone, BackboneConfig, DistorterConfig, DistorterNet, Granularity, SamplerConfig, SamplerNet,
};
use cbns_core::objectives::{aco, attacker_loss, cce, owner_objective, sample_loss, utility_loss};
use cbns_core::SamplerOutput;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const STEP: f64 = 1e-5;
/// Coordinates checked per parameter tensor in the network audits.
const ENTRIES_PER_TENSOR: usize = 3;

/// Worst relative error over a family of instances.
#[derive(Debug, Clone, Copy)]
pub struct Audit {
    pub instances: usize,
    pub worst: f64,
}

impl Audit {
    fn new() -> Self {
        Self { instances: 0, worst: 0.0 }
    }

    fn add(&mut self, rel: f64) {
        self.instances += 1;
        self.worst = self.worst.max(rel);
    }
}

fn dev() -> Device {
    Device::Cpu
}

fn var(rng: &mut impl Rng, shape: &[usize], scale: f64) -> Var {
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
    Var::from_tensor(&Tensor::from_vec(v, shape, &dev()).unwrap()).unwrap()
}

fn normal(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::from_vec(v, shape, &dev()).unwrap()
}

fn flat(t: &Tensor) -> Vec<f64> {
    t.flatten_all().unwrap().to_vec1::<f64>().unwrap()
}

fn value(f: &dyn Fn() -> Tensor) -> f64 {
    f().to_scalar::<f64>().unwrap()
}

/// `max |analytic - numeric| / max |numeric|` over the chosen coordinates
/// of every variable. `entries = None` checks all coordinates.
pub fn relative_error(vars: &[Var], f: &dyn Fn() -> Tensor, entries: Option<usize>, rng: &mut impl Rng) -> f64 {
    let grads = f().backward().unwrap();
    let (mut diff, mut scale) = (0f64, 0f64);
    for v in vars {
        let analytic = match grads.get(v) {
            Some(g) => flat(g),
            None => vec![0.0; v.elem_count()],
        };
        let base = flat(v.as_tensor());
        let coords: Vec<usize> = match entries {
            None => (0..base.len()).collect(),
            Some(k) => (0..k.min(base.len())).map(|_| rng.random_range(0..base.len())).collect(),
        };
        for i in coords {
            let probe = |delta: f64| {
                let mut p = base.clone();
                p[i] += delta;
                v.set(&Tensor::from_vec(p, v.shape(), &dev()).unwrap()).unwrap();
                value(f)
            };
            let numeric = (probe(STEP) - probe(-STEP)) / (2.0 * STEP);
            v.set(&Tensor::from_vec(base.clone(), v.shape(), &dev()).unwrap()).unwrap();
            diff = diff.max((analytic[i] - numeric).abs());
            scale = scale.max(numeric.abs()).max(analytic[i].abs());
        }
    }
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

pub fn audit_cce(instances: usize) -> Audit {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut audit = Audit::new();
    for _ in 0..instances {
        let (b, c) = (rng.random_range(1..6), rng.random_range(2..7));
        let logits = var(&mut rng, &[b, c], 3.0);
        let labels: Vec<u32> = (0..b).map(|_| rng.random_range(0..c as u32)).collect();
        let labels = Tensor::new(labels, &dev()).unwrap();
        let f = || cce(logits.as_tensor(), &labels).unwrap();
        audit.add(relative_error(std::slice::from_ref(&logits), &f, None, &mut rng));
    }
    audit
}

pub fn audit_aco(instances: usize) -> Audit {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut audit = Audit::new();
    for _ in 0..instances {
        let (b, d) = (rng.random_range(1..6), rng.random_range(2..9));
        // spread wide enough that some negatives fall outside the margin
        let scale = rng.random_range(0.5..5.0);
        let vs: Vec<Var> = (0..3).map(|_| var(&mut rng, &[b, d], scale)).collect();
        let f = || aco(vs[0].as_tensor(), vs[1].as_tensor(), vs[2].as_tensor()).unwrap();
        audit.add(relative_error(&vs, &f, None, &mut rng));
    }
    audit
}

pub fn audit_sample_loss(instances: usize) -> Audit {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut audit = Audit::new();
    for _ in 0..instances {
        let (b, r) = (rng.random_range(1..3), rng.random_range(1..4));
        let n = 6;
        let raw = var(&mut rng, &[b, r, 3], 1.0);
        let temperature = var(&mut rng, &[], 1.0);
        let reference = var(&mut rng, &[b, n, 3], 1.0).as_tensor().detach();
        let f = || {
            let out = SamplerOutput {
                p_s: raw.as_tensor().clone(),
                raw: Some(raw.as_tensor().clone()),
                temperature: Some(temperature.as_tensor().clone()),
                indices: None,
            };
            sample_loss(&out, &reference).unwrap().unwrap()
        };
        audit.add(relative_error(&[raw.clone(), temperature.clone()], &f, None, &mut rng));
    }
    audit
}

pub fn audit_chamfer(instances: usize) -> Audit {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut audit = Audit::new();
    for _ in 0..instances {
        let (r, n) = (rng.random_range(1..6), rng.random_range(1..9));
        let gen = var(&mut rng, &[2, r, 3], 1.0);
        let reference = var(&mut rng, &[2, n, 3], 1.0);
        let f = || {
            let (avg, max) = chamfer_terms(gen.as_tensor(), reference.as_tensor()).unwrap();
            (avg.sum_all().unwrap() + (max * 0.7).unwrap().sum_all().unwrap()).unwrap()
        };
        audit.add(relative_error(&[gen.clone(), reference.clone()], &f, None, &mut rng));
    }
    audit
}

pub fn audit_soft_project(instances: usize) -> Audit {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let mut audit = Audit::new();
    for _ in 0..instances {
        let (r, n) = (rng.random_range(1..5), rng.random_range(4..12));
        let k = rng.random_range(1..=n.min(8));
        let gen = var(&mut rng, &[2, r, 3], 1.0);
        let reference = var(&mut rng, &[2, n, 3], 1.0);
        let t = Var::new(rng.random_range(0.2..1.5), &dev()).unwrap();
        let w = normal(&mut rng, &[2, r, 3]);
        let f = || {
            let sp = soft_project(gen.as_tensor(), reference.as_tensor(), t.as_tensor(), k).unwrap();
            (sp.projected * &w).unwrap().sum_all().unwrap()
        };
        audit.add(relative_error(&[gen.clone(), reference.clone(), t.clone()], &f, None, &mut rng));
    }
    audit
}

fn tiny_backbone(classes: usize, rng: &mut impl Rng) -> cbns_core::nets::BackboneNet {
    let cfg = BackboneConfig {
        encoder_widths: vec![6, 8, 10],
        head_hidden: 7,
        ..BackboneConfig::desk(classes)
    };
    build_backbone(&cfg, DType::F64, rng).unwrap()
}

/// Gradient of a weighted sum of the pooled feature of an 8-point cloud
/// with respect to the points.
pub fn audit_encode(instances: usize) -> Audit {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let mut audit = Audit::new();
    for _ in 0..instances {
        let net = tiny_backbone(3, &mut rng);
        let cloud = var(&mut rng, &[1, 8, 3], 1.0);
        let w = normal(&mut rng, &[1, 10]);
        let f = || (net.encode(cloud.as_tensor()).unwrap() * &w).unwrap().sum_all().unwrap();
        audit.add(relative_error(std::slice::from_ref(&cloud), &f, None, &mut rng));
    }
    audit
}

fn tiny_sampler(r: usize, rng: &mut impl Rng) -> SamplerNet {
    let cfg = SamplerConfig {
        r,
        encoder_widths: vec![6, 8],
        generator_widths: vec![8, 8],
        init_temperature: rng.random_range(0.3..1.0),
    };
    SamplerNet::new(&cfg, DType::F64, rng).unwrap()
}

/// Gradient of the mean generated coordinate with respect to the input.
pub fn audit_generate_points(instances: usize) -> Audit {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut audit = Audit::new();
    for _ in 0..instances {
        let net = tiny_sampler(4, &mut rng);
        let cloud = var(&mut rng, &[1, 10, 3], 1.0);
        let f = || net.generate_points(cloud.as_tensor()).unwrap().mean_all().unwrap();
        audit.add(relative_error(std::slice::from_ref(&cloud), &f, None, &mut rng));
    }
    audit
}

/// The whole owner objective of one train-mode batch with the noise draw
/// frozen: sampler, soft projection, distorter, both proxies, every loss.
/// Checked against owner parameters and both proxies' parameters.
pub fn audit_pipeline(instances: usize) -> Audit {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let mut audit = Audit::new();
    for i in 0..instances {
        let (b, n, r) = (4, 12, 5);
        let sampler = tiny_sampler(r, &mut rng);
        let granularity = if i % 2 == 0 { Granularity::Pointwise } else { Granularity::Shared };
        let dcfg = DistorterConfig {
            granularity,
            encoder_widths: vec![6, 8],
            hidden_widths: vec![8],
            init_sigma: 0.1,
        };
        let distorter = DistorterNet::new(&dcfg, DType::F64, &mut rng).unwrap();
        let censor =
            CensorModel::new(SamplerStage::Learned(sampler), NoiseStage::Learned(distorter), DType::F64).unwrap();
        let user = tiny_backbone(2, &mut rng);
        let attacker = tiny_backbone(3, &mut rng);
        let clouds = var(&mut rng, &[b, n, 3], 1.0).as_tensor().detach();
        let eps = normal(&mut rng, &[b, r, 3]);
        let y_t = Tensor::new(&[0u32, 1, 1, 0], &dev()).unwrap();
        let y_s = Tensor::new(&[0u32, 1, 2, 1], &dev()).unwrap();
        let (pos, neg) = ([3usize, 2, 1, 1], [1usize, 0, 0, 2]);
        let lambda = rng.random_range(0.1..3.0);
        let f = || {
            let out = censor.sample_invariant(&clouds, Mode::Train).unwrap();
            let censored = censor.distort_with(&out.p_s, &eps).unwrap();
            let l_util = utility_loss(&user, &censored, &y_t).unwrap();
            let l_priv = attacker_loss(&attacker, &censored, &y_s, Some((&pos, &neg)), 0.5).unwrap().total;
            let l_sample = sample_loss(&out, &clouds).unwrap();
            owner_objective(&l_util, &l_priv, l_sample.as_ref(), lambda).unwrap()
        };
        let vars: Vec<Var> = censor
            .params()
            .into_iter()
            .chain(user.params())
            .chain(attacker.params())
            .map(|(_, v)| v)
            .collect();
        audit.add(relative_error(&vars, &f, Some(ENTRIES_PER_TENSOR), &mut rng));
    }
    audit
}
