//! Hand-written CPU kernels for the two hottest pieces of the encoders:
//! layer norm with affine (optionally followed by relu) and the max over
//! points. Autodiff of the generic composition allocates a tensor per
//! elementwise op; these run one pass forward and one or two backward.

use std::sync::OnceLock;

use candle_core::backend::BackendStorage;
use candle_core::{CpuStorage, CustomOp1, CustomOp3, Layout, Shape, Storage, Tensor, WithDType};

use crate::error::{Error, Result};

type CResult<T> = candle_core::Result<T>;

fn slice<'a, T: WithDType>(s: &'a CpuStorage, l: &Layout) -> CResult<&'a [T]> {
    match l.contiguous_offsets() {
        Some((a, b)) => Ok(&T::cpu_storage_as_slice(s)?[a..b]),
        None => candle_core::bail!("fused kernel needs contiguous input"),
    }
}

fn cpu<'a, T: WithDType>(s: &'a Storage, l: &Layout) -> CResult<&'a [T]> {
    match s {
        Storage::Cpu(c) => slice(c, l),
        _ => candle_core::bail!("fused kernels run on the cpu only"),
    }
}

/// Runs `f` on the contiguous data of `t`, copying only if it is strided.
fn with_data<T: WithDType, R>(t: &Tensor, f: impl FnOnce(&[T]) -> R) -> CResult<R> {
    let t = t.contiguous()?;
    let (storage, layout) = t.storage_and_layout();
    Ok(f(cpu(&storage, layout)?))
}

struct NormRelu {
    eps: f64,
    relu: bool,
    /// Per-row `(mean, 1 / std)` from the forward pass.
    stats: OnceLock<Vec<(f64, f64)>>,
}

/// Row statistics `(mean, 1 / std)`.
fn row_stats(row: &[f64], eps: f64) -> (f64, f64) {
    let w = row.len() as f64;
    let mean = row.iter().sum::<f64>() / w;
    let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / w;
    (mean, 1.0 / (var + eps).sqrt())
}

impl NormRelu {
    /// `x` is `(rows, w)`, `bias` is `(w,)` and `affine` is `gamma` then
    /// `beta`.
    fn fwd<T: WithDType>(&self, x: &[T], bias: &[T], affine: &[T]) -> Vec<T> {
        let w = bias.len();
        let (g, b) = affine.split_at(w);
        let mut out = Vec::with_capacity(x.len());
        let mut stats = Vec::with_capacity(x.len() / w);
        let mut row = vec![0f64; w];
        for src in x.chunks_exact(w) {
            for ((r, v), c) in row.iter_mut().zip(src).zip(bias) {
                *r = v.to_f64() + c.to_f64();
            }
            let (mean, inv) = row_stats(&row, self.eps);
            stats.push((mean, inv));
            for ((v, gk), bk) in row.iter().zip(g).zip(b) {
                let y = (v - mean) * inv * gk.to_f64() + bk.to_f64();
                out.push(T::from_f64(if self.relu { y.max(0.0) } else { y }));
            }
        }
        let _ = self.stats.set(stats);
        out
    }

    /// Gradients for `(x, bias, affine)`.
    fn bwd_host<T: WithDType>(
        &self,
        x: &[T],
        bias: &[T],
        affine: &[T],
        res: &[T],
        grad: &[T],
    ) -> (Vec<T>, Vec<T>, Vec<T>) {
        let w = bias.len();
        let g = &affine[..w];
        let mut dx = Vec::with_capacity(x.len());
        let mut dbias = vec![0f64; w];
        let mut daffine = vec![0f64; 2 * w];
        let (dg, db) = daffine.split_at_mut(w);
        let mut dxhat = vec![0f64; w];
        let mut xhat = vec![0f64; w];
        let mut row = vec![0f64; w];
        let rows = x.chunks_exact(w).zip(res.chunks_exact(w)).zip(grad.chunks_exact(w));
        for (i, ((src, out), gr)) in rows.enumerate() {
            for ((r, v), c) in row.iter_mut().zip(src).zip(bias) {
                *r = v.to_f64() + c.to_f64();
            }
            let (mean, inv) = match self.stats.get() {
                Some(s) => s[i],
                None => row_stats(&row, self.eps),
            };
            let (mut s1, mut s2) = (0.0, 0.0);
            for k in 0..w {
                let gk = if self.relu && out[k].to_f64() <= 0.0 { 0.0 } else { gr[k].to_f64() };
                xhat[k] = (row[k] - mean) * inv;
                dg[k] += gk * xhat[k];
                db[k] += gk;
                dxhat[k] = gk * g[k].to_f64();
                s1 += dxhat[k];
                s2 += dxhat[k] * xhat[k];
            }
            let (m1, m2) = (s1 / w as f64, s2 / w as f64);
            for k in 0..w {
                let d = inv * (dxhat[k] - m1 - xhat[k] * m2);
                dbias[k] += d;
                dx.push(T::from_f64(d));
            }
        }
        let cast = |v: Vec<f64>| v.into_iter().map(T::from_f64).collect();
        (dx, cast(dbias), cast(daffine))
    }
}

impl CustomOp3 for NormRelu {
    fn name(&self) -> &'static str {
        "norm-relu"
    }

    fn cpu_fwd(
        &self,
        s1: &CpuStorage,
        l1: &Layout,
        s2: &CpuStorage,
        l2: &Layout,
        s3: &CpuStorage,
        l3: &Layout,
    ) -> CResult<(CpuStorage, Shape)> {
        let storage = match s1 {
            CpuStorage::F32(_) => {
                CpuStorage::F32(self.fwd::<f32>(slice(s1, l1)?, slice(s2, l2)?, slice(s3, l3)?))
            }
            CpuStorage::F64(_) => {
                CpuStorage::F64(self.fwd::<f64>(slice(s1, l1)?, slice(s2, l2)?, slice(s3, l3)?))
            }
            other => candle_core::bail!("norm-relu: unsupported dtype {:?}", other.dtype()),
        };
        Ok((storage, l1.shape().clone()))
    }

    fn bwd(
        &self,
        x: &Tensor,
        bias: &Tensor,
        affine: &Tensor,
        res: &Tensor,
        grad: &Tensor,
    ) -> CResult<(Option<Tensor>, Option<Tensor>, Option<Tensor>)> {
        let dev = x.device();
        macro_rules! run {
            ($t:ty) => {{
                let held = [x, bias, affine, res, grad].map(|t| t.contiguous());
                let held = held.into_iter().collect::<CResult<Vec<_>>>()?;
                let guards: Vec<_> = held.iter().map(|t| t.storage_and_layout()).collect();
                let v = guards.iter().map(|(s, l)| cpu::<$t>(s, l)).collect::<CResult<Vec<_>>>()?;
                let (dx, dbias, daffine) = self.bwd_host(v[0], v[1], v[2], v[3], v[4]);
                (
                    Tensor::from_vec(dx, x.shape(), dev)?,
                    Tensor::from_vec(dbias, bias.shape(), dev)?,
                    Tensor::from_vec(daffine, affine.shape(), dev)?,
                )
            }};
        }
        let (dx, dbias, daffine) = match x.dtype() {
            candle_core::DType::F32 => run!(f32),
            candle_core::DType::F64 => run!(f64),
            d => candle_core::bail!("norm-relu: unsupported dtype {d:?}"),
        };
        Ok((Some(dx), Some(dbias), Some(daffine)))
    }
}

/// `relu(layer_norm(x + bias) * gamma + beta)` over the last dimension,
/// without the relu when `relu` is false. A missing bias is zero.
pub fn norm_affine(
    x: &Tensor,
    bias: Option<&Tensor>,
    gamma: &Tensor,
    beta: &Tensor,
    eps: f64,
    relu: bool,
) -> Result<Tensor> {
    let w = gamma.elem_count();
    let bias = match bias {
        Some(b) => b.contiguous()?,
        None => gamma.zeros_like()?.detach(),
    };
    if x.dims().last() != Some(&w) || beta.elem_count() != w || bias.elem_count() != w || gamma.dtype() != x.dtype() {
        return Err(Error::invalid(format!("layer norm of width {w} applied to {:?}", x.dims())));
    }
    let affine = Tensor::cat(&[gamma, beta], 0)?;
    let op = NormRelu {
        eps,
        relu,
        stats: OnceLock::new(),
    };
    Ok(x.contiguous()?.apply_op3(&bias, &affine, op)?)
}

struct MaxOverPoints {
    argmax: OnceLock<Vec<usize>>,
}

/// Index of the first maximum per `(b, f)`, laid out `(B, F)`.
fn argmax_points<T: WithDType>(x: &[T], b: usize, n: usize, f: usize) -> Vec<usize> {
    let mut best = vec![0usize; b * f];
    for bi in 0..b {
        let base = bi * n * f;
        let arg = &mut best[bi * f..(bi + 1) * f];
        for j in 1..n {
            let row = &x[base + j * f..base + (j + 1) * f];
            for k in 0..f {
                if row[k] > x[base + arg[k] * f + k] {
                    arg[k] = j;
                }
            }
        }
    }
    best
}

impl CustomOp1 for MaxOverPoints {
    fn name(&self) -> &'static str {
        "max-over-points"
    }

    fn cpu_fwd(&self, s: &CpuStorage, l: &Layout) -> CResult<(CpuStorage, Shape)> {
        let (b, n, f) = l.shape().dims3()?;
        fn gather<T: WithDType>(x: &[T], cache: &OnceLock<Vec<usize>>, (b, n, f): (usize, usize, usize)) -> Vec<T> {
            let arg = argmax_points(x, b, n, f);
            let out = arg.iter().enumerate().map(|(i, &j)| x[(i / f) * n * f + j * f + i % f]).collect();
            let _ = cache.set(arg);
            out
        }
        let storage = match s {
            CpuStorage::F32(_) => CpuStorage::F32(gather(slice::<f32>(s, l)?, &self.argmax, (b, n, f))),
            CpuStorage::F64(_) => CpuStorage::F64(gather(slice::<f64>(s, l)?, &self.argmax, (b, n, f))),
            other => candle_core::bail!("max-over-points: unsupported dtype {:?}", other.dtype()),
        };
        Ok((storage, Shape::from((b, f))))
    }

    fn bwd(&self, x: &Tensor, _res: &Tensor, grad: &Tensor) -> CResult<Option<Tensor>> {
        let (b, n, f) = x.dims3()?;
        let computed;
        let arg = match self.argmax.get() {
            Some(a) => a,
            None => {
                computed = match x.dtype() {
                    candle_core::DType::F32 => with_data::<f32, _>(x, |x| argmax_points(x, b, n, f))?,
                    _ => with_data::<f64, _>(x, |x| argmax_points(x, b, n, f))?,
                };
                &computed
            }
        };
        fn scatter<T: WithDType>(arg: &[usize], grad: &[T], n: usize, f: usize) -> Vec<T> {
            let mut out = vec![T::zero(); grad.len() * n];
            for (i, &j) in arg.iter().enumerate() {
                out[(i / f) * n * f + j * f + i % f] = grad[i];
            }
            out
        }
        let dx = match x.dtype() {
            candle_core::DType::F32 => {
                Tensor::from_vec(with_data::<f32, _>(grad, |g| scatter(arg, g, n, f))?, (b, n, f), x.device())?
            }
            candle_core::DType::F64 => {
                Tensor::from_vec(with_data::<f64, _>(grad, |g| scatter(arg, g, n, f))?, (b, n, f), x.device())?
            }
            d => candle_core::bail!("max-over-points: unsupported dtype {d:?}"),
        };
        Ok(Some(dx))
    }
}

/// Max over dimension 1 of a `(B, N, F)` tensor. The gradient goes to the
/// lowest-index arg-max, which is also the critical point reported by
/// [`crate::evaluation::critical_points`].
pub fn max_over_points(x: &Tensor) -> Result<Tensor> {
    x.dims3()?;
    Ok(x.contiguous()?.apply_op1(MaxOverPoints {
        argmax: OnceLock::new(),
    })?)
}
