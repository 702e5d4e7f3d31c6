use candle_core::{DType, Tensor, D};

use crate::error::{Error, Result};

/// Output of [`soft_project`].
#[derive(Debug, Clone)]
pub struct SoftProjection {
    /// `(B, r, 3)` weighted neighbor averages.
    pub projected: Tensor,
    /// `(B, r, k)` softmax weights, rows sum to one.
    pub weights: Tensor,
    /// Neighbor indices into each reference cloud, `[b][row][k]`.
    pub indices: Vec<Vec<Vec<usize>>>,
}

fn as_batch(t: &Tensor) -> Result<(Tensor, bool)> {
    match t.rank() {
        2 => Ok((t.unsqueeze(0)?, true)),
        3 => Ok((t.clone(), false)),
        r => Err(Error::invalid(format!("expected a (n, 3) or (B, n, 3) tensor, got rank {r}"))),
    }
}

fn host_rows(t: &Tensor) -> Result<Vec<Vec<Vec<f64>>>> {
    Ok(t.detach().to_dtype(DType::F64)?.to_vec3::<f64>()?)
}

/// Soft projection of generated points onto a reference cloud.
///
/// Each generated point is replaced by a softmax-weighted average of its `k`
/// nearest reference points, with weights `exp(-d^2 / t^2)`. Neighbor search
/// is a non-differentiable selection; the result is differentiable in the
/// generated points and in `temperature`. Accepts `(r, 3)`/`(n, 3)` or
/// batched `(B, r, 3)`/`(B, n, 3)` inputs.
pub fn soft_project(
    generated: &Tensor,
    reference: &Tensor,
    temperature: &Tensor,
    k: usize,
) -> Result<SoftProjection> {
    let t = temperature.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
    if t.len() != 1 || !(t[0] > 0.0) {
        return Err(Error::invalid(format!("temperature must be a positive scalar, got {t:?}")));
    }
    let (gen, squeeze) = as_batch(generated)?;
    let (reference, _) = as_batch(reference)?;
    let (b, r, _) = gen.dims3()?;
    let (rb, n, _) = reference.dims3()?;
    if rb != b {
        return Err(Error::invalid(format!("batch mismatch: {b} generated vs {rb} reference")));
    }
    if k == 0 || k > n {
        return Err(Error::invalid(format!("soft projection: k = {k} must lie in [1, {n}]")));
    }

    let gen_host = host_rows(&gen)?;
    let ref_host = host_rows(&reference)?;
    let mut indices = Vec::with_capacity(b);
    let mut flat = Vec::with_capacity(b * r * k);
    let mut dist = vec![(0f64, 0usize); n];
    for (bi, (g_rows, ref_rows)) in gen_host.iter().zip(&ref_host).enumerate() {
        let mut per_cloud = Vec::with_capacity(r);
        for g in g_rows {
            for (j, p) in ref_rows.iter().enumerate() {
                let d = (g[0] - p[0]).powi(2) + (g[1] - p[1]).powi(2) + (g[2] - p[2]).powi(2);
                dist[j] = (d, j);
            }
            let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            if k < n {
                dist.select_nth_unstable_by(k - 1, cmp);
            }
            let mut near: Vec<(f64, usize)> = dist[..k].to_vec();
            near.sort_by(cmp);
            let near: Vec<usize> = near.into_iter().map(|(_, j)| j).collect();
            flat.extend(near.iter().map(|&j| (bi * n + j) as u32));
            per_cloud.push(near);
        }
        indices.push(per_cloud);
    }

    let idx = Tensor::from_vec(flat, b * r * k, gen.device())?;
    let neighbors = reference
        .reshape((b * n, 3))?
        .index_select(&idx, 0)?
        .reshape((b, r, k, 3))?;
    let d2 = neighbors
        .broadcast_sub(&gen.unsqueeze(2)?)?
        .sqr()?
        .sum(D::Minus1)?;
    let t2 = temperature.reshape(())?.sqr()?;
    let logits = d2.neg()?.broadcast_div(&t2)?;
    let shift = logits.max_keepdim(D::Minus1)?.detach();
    let e = logits.broadcast_sub(&shift)?.exp()?;
    let weights = e.broadcast_div(&e.sum_keepdim(D::Minus1)?)?;
    let projected = weights.unsqueeze(3)?.broadcast_mul(&neighbors)?.sum(2)?;

    let (projected, weights) = if squeeze {
        (projected.squeeze(0)?, weights.squeeze(0)?)
    } else {
        (projected, weights)
    };
    Ok(SoftProjection {
        projected,
        weights,
        indices,
    })
}

/// Index of the nearest row of `to` for every row of `from`, offset by
/// `base` (lowest index on ties).
fn nearest(from: &[Vec<f64>], to: &[Vec<f64>], base: usize, out: &mut Vec<u32>) {
    for p in from {
        let mut best = (f64::INFINITY, 0);
        for (j, q) in to.iter().enumerate() {
            let d = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
            if d < best.0 {
                best = (d, j);
            }
        }
        out.push((base + best.1) as u32);
    }
}

/// Differentiable chamfer terms, batched.
///
/// For `(B, r, 3)` generated and `(B, n, 3)` reference points returns the
/// per-cloud `(avg, max)` terms as `(B,)` tensors, matching
/// [`super::chamfer`] with `a = generated`. Nearest neighbors are found on
/// the host and the distances recomputed on the gathered pairs, which gives
/// the same gradient as differentiating through the minimum.
pub fn chamfer_terms(generated: &Tensor, reference: &Tensor) -> Result<(Tensor, Tensor)> {
    let (gen, _) = as_batch(generated)?;
    let (reference, _) = as_batch(reference)?;
    let (b, r, _) = gen.dims3()?;
    let (rb, n, _) = reference.dims3()?;
    if rb != b || r == 0 || n == 0 {
        return Err(Error::invalid(format!("chamfer of {:?} against {:?}", gen.dims(), reference.dims())));
    }
    let (gen_host, ref_host) = (host_rows(&gen)?, host_rows(&reference)?);
    let (mut to_ref, mut to_gen) = (Vec::with_capacity(b * r), Vec::with_capacity(b * n));
    for bi in 0..b {
        nearest(&gen_host[bi], &ref_host[bi], bi * n, &mut to_ref);
        nearest(&ref_host[bi], &gen_host[bi], bi * r, &mut to_gen);
    }
    let dev = gen.device();
    let gen_flat = gen.reshape((b * r, 3))?;
    let ref_flat = reference.reshape((b * n, 3))?;
    let gen_to_ref = (&gen_flat - ref_flat.index_select(&Tensor::new(to_ref, dev)?, 0)?)?
        .sqr()?
        .sum(1)?
        .reshape((b, r))?;
    let ref_to_gen = (&ref_flat - gen_flat.index_select(&Tensor::new(to_gen, dev)?, 0)?)?
        .sqr()?
        .sum(1)?
        .reshape((b, n))?;
    let avg = (gen_to_ref.mean(1)? + ref_to_gen.mean(1)?)?;
    let max = gen_to_ref.max(1)?;
    Ok((avg, max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{chamfer, knn};
    use candle_core::{Device, Var};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pts(rng: &mut impl Rng, n: usize) -> Vec<[f32; 3]> {
        (0..n)
            .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .collect()
    }

    fn tensor(p: &[[f32; 3]], dtype: DType) -> Tensor {
        let flat: Vec<f32> = p.iter().flatten().copied().collect();
        Tensor::from_vec(flat, (p.len(), 3), &Device::Cpu).unwrap().to_dtype(dtype).unwrap()
    }

    fn scalar(v: f64) -> Tensor {
        Tensor::new(v, &Device::Cpu).unwrap()
    }

    #[test]
    fn exact_hit_with_one_neighbor() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let reference = pts(&mut rng, 20);
        let gen = vec![reference[5]];
        let sp = soft_project(&tensor(&gen, DType::F64), &tensor(&reference, DType::F64), &scalar(0.5), 1).unwrap();
        let proj = sp.projected.to_vec2::<f64>().unwrap();
        for k in 0..3 {
            assert_eq!(proj[0][k], reference[5][k] as f64);
        }
        assert_eq!(sp.weights.to_vec2::<f64>().unwrap(), vec![vec![1.0]]);
        assert_eq!(sp.indices[0][0], vec![5]);
    }

    #[test]
    fn weights_sum_to_one_and_indices_match_knn() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let reference = pts(&mut rng, 40);
        let gen = pts(&mut rng, 10);
        let sp = soft_project(&tensor(&gen, DType::F32), &tensor(&reference, DType::F32), &scalar(0.3).to_dtype(DType::F32).unwrap(), 8).unwrap();
        for row in sp.weights.to_vec2::<f32>().unwrap() {
            assert!((row.iter().sum::<f32>() - 1.0).abs() <= 1e-6);
        }
        for (g, idx) in gen.iter().zip(&sp.indices[0]) {
            assert_eq!(idx, &knn(g, &reference, 8).unwrap().indices);
        }
    }

    #[test]
    fn low_temperature_approaches_hard_nearest_neighbor() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut checked = 0;
        while checked < 20 {
            let reference = pts(&mut rng, 30);
            let min_gap = (0..30)
                .flat_map(|i| (i + 1..30).map(move |j| (i, j)))
                .map(|(i, j)| crate::geometry::sq_dist(&reference[i], &reference[j]).sqrt())
                .fold(f64::INFINITY, f64::min);
            if min_gap < 0.1 {
                continue;
            }
            checked += 1;
            let gen = pts(&mut rng, 8);
            let sp = soft_project(&tensor(&gen, DType::F64), &tensor(&reference, DType::F64), &scalar(1e-3), 8).unwrap();
            for (g, p) in gen.iter().zip(sp.projected.to_vec2::<f64>().unwrap()) {
                let nn = reference[knn(g, &reference, 1).unwrap().indices[0]];
                let err = (0..3).map(|k| (p[k] - nn[k] as f64).powi(2)).sum::<f64>().sqrt();
                assert!(err <= 1e-3, "error {err}");
            }
        }
    }

    #[test]
    fn rejects_non_positive_temperature() {
        let p = tensor(&[[0.0; 3], [1.0, 0.0, 0.0]], DType::F64);
        assert!(soft_project(&p, &p, &scalar(0.0), 1).is_err());
        assert!(soft_project(&p, &p, &scalar(-1.0), 1).is_err());
        assert!(soft_project(&p, &p, &scalar(1.0), 3).is_err());
    }

    #[test]
    fn translation_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let reference = pts(&mut rng, 25);
        let gen = pts(&mut rng, 6);
        let shift = [0.25f32, -0.5, 0.75];
        let moved = |p: &[[f32; 3]]| -> Vec<[f32; 3]> {
            p.iter().map(|q| [q[0] + shift[0], q[1] + shift[1], q[2] + shift[2]]).collect()
        };
        let a = soft_project(&tensor(&gen, DType::F64), &tensor(&reference, DType::F64), &scalar(0.4), 5).unwrap();
        let b = soft_project(&tensor(&moved(&gen), DType::F64), &tensor(&moved(&reference), DType::F64), &scalar(0.4), 5).unwrap();
        let a = a.projected.to_vec2::<f64>().unwrap();
        let b = b.projected.to_vec2::<f64>().unwrap();
        for (p, q) in a.iter().zip(&b) {
            for k in 0..3 {
                assert!((p[k] + shift[k] as f64 - q[k]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn batched_equals_per_cloud() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let refs: Vec<Vec<[f32; 3]>> = (0..3).map(|_| pts(&mut rng, 16)).collect();
        let gens: Vec<Vec<[f32; 3]>> = (0..3).map(|_| pts(&mut rng, 4)).collect();
        let stack = |v: &[Vec<[f32; 3]>]| Tensor::stack(&v.iter().map(|p| tensor(p, DType::F64)).collect::<Vec<_>>(), 0).unwrap();
        let batched = soft_project(&stack(&gens), &stack(&refs), &scalar(0.5), 4).unwrap();
        let batched = batched.projected.to_vec3::<f64>().unwrap();
        for i in 0..3 {
            let single = soft_project(&tensor(&gens[i], DType::F64), &tensor(&refs[i], DType::F64), &scalar(0.5), 4).unwrap();
            assert_eq!(single.projected.to_vec2::<f64>().unwrap(), batched[i]);
        }
    }

    #[test]
    fn chamfer_terms_match_host_chamfer() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let n_a = rng.random_range(1..=16);
            let a = pts(&mut rng, n_a);
            let n_b = rng.random_range(1..=16);
            let b = pts(&mut rng, n_b);
            let (avg, max) = chamfer_terms(&tensor(&a, DType::F64), &tensor(&b, DType::F64)).unwrap();
            let (want_avg, want_max) = chamfer(&a, &b).unwrap();
            assert!((avg.to_vec1::<f64>().unwrap()[0] - want_avg).abs() < 1e-12);
            assert!((max.to_vec1::<f64>().unwrap()[0] - want_max).abs() < 1e-12);
        }
    }

    #[test]
    fn temperature_receives_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let reference = tensor(&pts(&mut rng, 20), DType::F64);
        let gen = tensor(&pts(&mut rng, 5), DType::F64);
        let t = Var::new(0.5f64, &Device::Cpu).unwrap();
        let sp = soft_project(&gen, &reference, t.as_tensor(), 4).unwrap();
        let grads = sp.projected.sum_all().unwrap().backward().unwrap();
        let g = grads.get(&t).unwrap().to_scalar::<f64>().unwrap();
        assert!(g.is_finite() && g != 0.0);
    }
}
