//! Structural invariants of the networks and the release path.

use candle_core::DType;
use cbns_core::data::{synth_generate, SynthConfig};
use cbns_core::evaluation::critical_points;
use cbns_core::nets::{build_backbone, BackboneConfig, BackboneNet};
use cbns_core::training::{make_pipeline, TrainConfig};
use cbns_core::{PipelineKind, PointCloud, RandomStream};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub struct Report {
    pub clouds: usize,
    /// Largest coordinate change of encode/classify/censor under a shuffle.
    pub permutation_gap: f64,
    /// Released points that are not input points.
    pub foreign_points: usize,
    /// Largest logit change after dropping every non-critical point.
    pub critical_gap: f64,
    pub max_critical: usize,
    pub feature_width: usize,
}

fn gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn flat(c: &PointCloud) -> Vec<f64> {
    c.points().iter().flatten().map(|&v| v as f64).collect()
}

fn backbone(dtype: DType) -> BackboneNet {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    build_backbone(&BackboneConfig::desk(4), dtype, &mut rng).unwrap()
}

/// Checks every invariant on `clouds` synthetic clouds of 96 points.
pub fn check(clouds: usize, dtype: DType) -> Report {
    let (data, _) = synth_generate(&SynthConfig {
        n: 96,
        overlap: 0.3,
        samples_per_pair: 4,
        ..SynthConfig::default()
    })
    .unwrap();
    let net = backbone(dtype);
    let config = TrainConfig {
        r: 16,
        ..TrainConfig::default()
    };
    let censor = make_pipeline(&config, &RandomStream::new(5)).unwrap();
    assert_eq!(config.kind, PipelineKind::Cbns);
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let mut report = Report {
        clouds: 0,
        permutation_gap: 0.0,
        foreign_points: 0,
        critical_gap: 0.0,
        max_critical: 0,
        feature_width: net.config().feature_width(),
    };
    for (i, sample) in data.samples.iter().take(clouds).enumerate() {
        let cloud = &sample.cloud;
        let mut perm: Vec<usize> = (0..cloud.len()).collect();
        perm.shuffle(&mut rng);
        let shuffled = cloud.permuted(&perm);

        let stream = RandomStream::new(i as u64);
        let released = censor.censor(cloud, &stream).unwrap();
        let released_shuffled = censor.censor(&shuffled, &stream).unwrap();
        for g in [
            gap(&net.encode_cloud(cloud).unwrap(), &net.encode_cloud(&shuffled).unwrap()),
            gap(&net.classify_cloud(cloud).unwrap(), &net.classify_cloud(&shuffled).unwrap()),
            gap(&flat(&released), &flat(&released_shuffled)),
        ] {
            report.permutation_gap = report.permutation_gap.max(g);
        }

        let noiseless = cbns_core::CensorModel::new(
            censor.sampler().clone(),
            cbns_core::NoiseStage::Disabled,
            censor.dtype(),
        )
        .unwrap();
        let sampled = noiseless.censor(cloud, &stream).unwrap();
        report.foreign_points += sampled.points().iter().filter(|p| !cloud.points().contains(p)).count();

        let critical = critical_points(&net, cloud, None).unwrap();
        report.max_critical = report.max_critical.max(critical.indices.len());
        let mut keep = critical.indices.clone();
        keep.sort_unstable();
        let reduced = PointCloud::new(keep.iter().map(|&j| cloud.points()[j]).collect()).unwrap();
        report.critical_gap = report
            .critical_gap
            .max(gap(&net.classify_cloud(cloud).unwrap(), &net.classify_cloud(&reduced).unwrap()));
        report.clouds += 1;
    }
    report
}
