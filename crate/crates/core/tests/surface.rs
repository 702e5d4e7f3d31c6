//! Face-selection frequencies of surface sampling.

use cbns_core::data::{surface_points, TriangleMesh};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const DRAWS: usize = 10_000;
/// 99th percentile of the chi-square distribution with 9 degrees of freedom.
const CHI2_9_P01: f64 = 21.666;

fn area(a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> f64 {
    let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
    let x = [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]];
    0.5 * (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt()
}

fn counts(mesh: &TriangleMesh, seed: u64) -> Vec<usize> {
    let (faces, _) = surface_points(mesh, DRAWS, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    let mut c = vec![0; mesh.faces.len()];
    for f in faces {
        c[f] += 1;
    }
    c
}

#[test]
fn areas_one_and_three() {
    // two right triangles with legs (1, 2) and (3, 2)
    let mesh = TriangleMesh::new(
        vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 2.0, 0.0], [5.0, 0.0, 1.0], [8.0, 0.0, 1.0], [5.0, 2.0, 1.0]],
        vec![[0, 1, 2], [3, 4, 5]],
    )
    .unwrap();
    let c = counts(&mesh, 1);
    let se = (0.25f64 * 0.75 / DRAWS as f64).sqrt();
    let p = c[0] as f64 / DRAWS as f64;
    assert!((p - 0.25).abs() <= 3.0 * se, "frequency {p}");
}

#[test]
fn ten_faces_pass_chi_square() {
    // a fan of ten triangles with increasing heights
    let mut vertices = vec![[0.0, 0.0, 0.0]];
    let mut faces = Vec::new();
    for k in 0..10 {
        let x = k as f64;
        vertices.push([x + 1.0, 0.0, 0.0]);
        vertices.push([x + 1.0, 1.0 + x * 0.7, 0.3 * x]);
        faces.push([0, 2 * k + 1, 2 * k + 2]);
    }
    let mesh = TriangleMesh::new(vertices.clone(), faces.clone()).unwrap();
    let areas: Vec<f64> = faces.iter().map(|f| area(vertices[f[0]], vertices[f[1]], vertices[f[2]])).collect();
    let total: f64 = areas.iter().sum();
    let c = counts(&mesh, 2);
    let stat: f64 = c
        .iter()
        .zip(&areas)
        .map(|(&o, a)| {
            let e = DRAWS as f64 * a / total;
            (o as f64 - e).powi(2) / e
        })
        .sum();
    assert!(stat < CHI2_9_P01, "chi-square {stat}");
}
