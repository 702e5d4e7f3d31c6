use candle_core::{DType, Device, Tensor};
use cbns_core::geometry::{chamfer, chamfer_terms, fps, match_hard, soft_project};
use cbns_core::nets::{build_backbone, BackboneConfig};
use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cloud(rng: &mut impl Rng, n: usize) -> Vec<[f32; 3]> {
    (0..n).map(|_| std::array::from_fn(|_| rng.random_range(-1.0f32..1.0))).collect()
}

fn batch(rng: &mut impl Rng, b: usize, n: usize) -> Tensor {
    let flat: Vec<f32> = (0..b * n * 3).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    Tensor::from_vec(flat, (b, n, 3), &Device::Cpu).unwrap()
}

fn host_kernels(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let points = cloud(&mut rng, 2048);
    let generated = cloud(&mut rng, 64);
    c.bench_function("fps 2048 -> 64", |b| b.iter(|| fps(&points, 64, 0).unwrap()));
    c.bench_function("match_hard 64 into 2048", |b| b.iter(|| match_hard(&generated, &points).unwrap()));
    c.bench_function("chamfer 64 vs 2048", |b| b.iter(|| chamfer(&generated, &points).unwrap()));
}

fn tensor_kernels(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let reference = batch(&mut rng, 32, 512);
    let generated = batch(&mut rng, 32, 64);
    let t = Tensor::new(0.5f32, &Device::Cpu).unwrap();
    c.bench_function("chamfer_terms b32 64 vs 512", |b| {
        b.iter(|| chamfer_terms(&generated, &reference).unwrap())
    });
    c.bench_function("soft_project b32 64 into 512 k7", |b| {
        b.iter(|| soft_project(&generated, &reference, &t, 7).unwrap())
    });

    let net = build_backbone(&BackboneConfig::desk(4), DType::F32, &mut rng).unwrap();
    let mut group = c.benchmark_group("backbone b32");
    group.sample_size(10);
    for n in [64usize, 512] {
        let x = batch(&mut rng, 32, n);
        group.bench_function(format!("classify n{n}"), |b| b.iter(|| net.classify(&x).unwrap()));
        group.bench_function(format!("classify+backward n{n}"), |b| {
            b.iter(|| net.classify(&x).unwrap().sum_all().unwrap().backward().unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, host_kernels, tensor_kernels);
criterion_main!(benches);
