//! Learnability checks on the synthetic generator.

use candle_core::DType;
use cbns_core::data::{synth_generate, without_sensitive_region, SynthConfig};
use cbns_core::evaluation::accuracy;
use cbns_core::nets::{build_backbone, BackboneConfig, BackboneNet};
use cbns_core::training::{train_classifier, TrainConfig, TrainState};
use cbns_core::{Attribute, Dataset, LabeledSample, PipelineKind, PointCloud, Split};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn trained(data: &Dataset, attr: Attribute, steps: usize, seed: u64) -> BackboneNet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = build_backbone(&BackboneConfig::desk(data.num_classes(attr)), DType::F32, &mut rng).unwrap();
    train_classifier(&net, data, attr, steps, 32, 1e-3, &mut rng).unwrap();
    net
}

pub fn delta0() -> SynthConfig {
    SynthConfig {
        overlap: 0.0,
        ..SynthConfig::default()
    }
}

#[derive(Debug)]
pub struct Ablation {
    pub task_full: f64,
    pub sensitive_full: f64,
    pub task_ablated: f64,
    pub sensitive_ablated: f64,
}

/// Test accuracy of plain task and sensitive classifiers on full clouds and
/// on clouds with the sensitive region deleted.
pub fn region_ablation(steps: usize) -> Ablation {
    let cfg = delta0();
    let (train, test) = synth_generate(&cfg).unwrap();
    let ablated = test
        .with_samples(
            test.samples
                .iter()
                .map(|s| LabeledSample {
                    cloud: without_sensitive_region(&cfg, &s.cloud).unwrap(),
                    ..s.clone()
                })
                .collect(),
        )
        .unwrap();
    let task = trained(&train, Attribute::Task, steps, 41);
    let sensitive = trained(&train, Attribute::Sensitive, steps, 42);
    Ablation {
        task_full: accuracy(&task, &test, Attribute::Task).unwrap(),
        sensitive_full: accuracy(&sensitive, &test, Attribute::Sensitive).unwrap(),
        task_ablated: accuracy(&task, &ablated, Attribute::Task).unwrap(),
        sensitive_ablated: accuracy(&sensitive, &ablated, Attribute::Sensitive).unwrap(),
    }
}

/// Four blobs around distinct corners; any linear read-out of the mean
/// separates them.
pub fn separable(clouds_per_class: usize, n: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let corners = [[1.0, 1.0, 1.0], [-1.0, -1.0, 1.0], [-1.0, 1.0, -1.0], [1.0, -1.0, -1.0]];
    let mut samples = Vec::new();
    for (label, corner) in corners.iter().enumerate() {
        for _ in 0..clouds_per_class {
            let points = (0..n)
                .map(|_| {
                    std::array::from_fn(|k| {
                        let z: f64 = rng.sample(StandardNormal);
                        (0.5 * corner[k] + 0.1 * z) as f32
                    })
                })
                .collect();
            samples.push(LabeledSample {
                cloud: PointCloud::new(points).unwrap(),
                y_t: label,
                y_s: label,
            });
        }
    }
    let names: Vec<String> = (0..4).map(|i| format!("c{i}")).collect();
    Dataset::new(samples, names.clone(), names, Split::Train).unwrap()
}

/// Train accuracy after `steps` steps on [`separable`] data.
pub fn separable_accuracy(steps: usize) -> f64 {
    let data = separable(16, 64);
    let net = trained(&data, Attribute::Task, steps, 52);
    accuracy(&net, &data, Attribute::Task).unwrap()
}

/// Attacker train accuracy after `steps` CBNS steps with lambda 0 and
/// alpha 1, once with the owner learning and once with the owner frozen.
/// Everything else, including the attacker's batches, is identical.
pub fn ascent_against_frozen_owner(steps: usize, seed: u64) -> (f64, f64) {
    let data = separable(16, 64);
    let base = TrainConfig {
        kind: PipelineKind::Cbns,
        r: 16,
        lambda: 0.0,
        alpha: 1.0,
        steps,
        seed,
        ..TrainConfig::default()
    };
    let run = |config: &TrainConfig| {
        let mut state = TrainState::new(config, 4, 4).unwrap();
        for _ in 0..steps {
            let idx = state.next_batch(data.len(), config.batch_size);
            state.train_step(&data, &idx, config).unwrap();
        }
        let released = state.censor.censor_dataset(&data, 0x5eed).unwrap();
        accuracy(&state.proxies.attacker, &released, Attribute::Sensitive).unwrap()
    };
    (run(&base), run(&TrainConfig { lr_owner: 0.0, ..base.clone() }))
}
