use rand::Rng;
use rand_distr::weighted::WeightedIndex;
use rand_distr::Distribution;

use super::TriangleMesh;
use crate::cloud::{normalize_cloud, PointCloud};
use crate::error::{Error, Result};

/// Area-uniform surface draws: the chosen face and the point, before
/// normalization.
pub fn surface_points(mesh: &TriangleMesh, n: usize, rng: &mut impl Rng) -> Result<(Vec<usize>, Vec<[f64; 3]>)> {
    let areas: Vec<f64> = (0..mesh.faces.len()).map(|f| mesh.face_area(f)).collect();
    let total: f64 = areas.iter().sum();
    if !(total > 0.0) {
        return Err(Error::invalid("mesh has zero surface area"));
    }
    let pick = WeightedIndex::new(&areas).map_err(|e| Error::invalid(format!("bad face areas: {e}")))?;
    let mut faces = Vec::with_capacity(n);
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        let f = pick.sample(rng);
        let (mut u, mut v): (f64, f64) = (rng.random(), rng.random());
        if u + v > 1.0 {
            u = 1.0 - u;
            v = 1.0 - v;
        }
        let [a, b, c] = mesh.faces[f].map(|i| mesh.vertices[i]);
        points.push(std::array::from_fn(|k| a[k] + u * (b[k] - a[k]) + v * (c[k] - a[k])));
        faces.push(f);
    }
    Ok((faces, points))
}

/// `n` area-uniform surface points, normalized to the unit ball.
pub fn sample_surface(mesh: &TriangleMesh, n: usize, rng: &mut impl Rng) -> Result<PointCloud> {
    if n == 0 {
        return Err(Error::invalid("cannot sample zero points"));
    }
    let (_, points) = surface_points(mesh, n, rng)?;
    let cloud = PointCloud::new(points.iter().map(|p| p.map(|c| c as f32)).collect())?;
    normalize_cloud(&cloud)
}
