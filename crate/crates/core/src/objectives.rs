//! Losses for the three players.
//!
//! Sign convention: the attacker descends its loss `L_priv`, the user
//! descends `L_util`, and the owner descends
//! `lambda * L_util + L_sample - L_priv`.

use candle_core::{DType, Tensor, D};
use serde::{Deserialize, Serialize};

use crate::censor::{SamplerOutput, SAMPLE_BETA, SAMPLE_GAMMA};
use crate::error::{Error, Result};
use crate::nets::BackboneNet;

/// Cap on the negative-pair distance in [`aco`].
pub const ACO_MARGIN: f64 = 10.0;

/// Per-row cross entropy of `(B, C)` logits against `(B,)` u32 labels.
pub fn cce_per_sample(logits: &Tensor, labels: &Tensor) -> Result<Tensor> {
    let (b, c) = logits.dims2()?;
    if labels.dims() != [b] {
        return Err(Error::invalid(format!("{b} logit rows but label shape {:?}", labels.dims())));
    }
    let max = labels.to_dtype(DType::U32)?.to_vec1::<u32>()?.into_iter().max();
    if max.is_some_and(|m| m as usize >= c) {
        return Err(Error::invalid(format!("label out of range for {c} classes")));
    }
    let shift = logits.max_keepdim(D::Minus1)?.detach();
    let z = logits.broadcast_sub(&shift)?;
    let lse = z.exp()?.sum(D::Minus1)?.log()?;
    let picked = z
        .gather(&labels.to_dtype(DType::U32)?.unsqueeze(1)?, D::Minus1)?
        .squeeze(1)?;
    Ok((lse - picked)?)
}

/// Mean cross entropy over the batch.
pub fn cce(logits: &Tensor, labels: &Tensor) -> Result<Tensor> {
    Ok(cce_per_sample(logits, labels)?.mean_all()?)
}

/// Adversarial contrastive term, averaged over rows of `(B, F)` embeddings:
/// `|a - p|^2 - min(|a - n|, margin)^2`.
pub fn aco(anchor: &Tensor, positive: &Tensor, negative: &Tensor) -> Result<Tensor> {
    if anchor.dims() != positive.dims() || anchor.dims() != negative.dims() {
        return Err(Error::invalid(format!(
            "embedding shapes differ: {:?}, {:?}, {:?}",
            anchor.dims(),
            positive.dims(),
            negative.dims()
        )));
    }
    let pos = (anchor - positive)?.sqr()?.sum(D::Minus1)?;
    let neg = (anchor - negative)?
        .sqr()?
        .sum(D::Minus1)?
        .clamp(0.0, ACO_MARGIN * ACO_MARGIN)?;
    Ok((pos - neg)?.mean_all()?)
}

/// Attacker loss terms for one batch.
#[derive(Debug, Clone)]
pub struct AttackerTerms {
    pub total: Tensor,
    pub cce: Tensor,
    pub aco: Tensor,
}

/// `alpha * cce + (1 - alpha) * aco` through the attacker backbone.
///
/// Row `i` of the batch is the anchor for `pos[i]` and `neg[i]`, which
/// index the same batch. With `pairs = None` the contrastive term is zero
/// and the loss is pure cross entropy.
pub fn attacker_loss(
    attacker: &BackboneNet,
    censored: &Tensor,
    y_s: &Tensor,
    pairs: Option<(&[usize], &[usize])>,
    alpha: f64,
) -> Result<AttackerTerms> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    let (features, logits) = attacker.forward(censored)?;
    let cce_term = cce(&logits, y_s)?;
    let aco_term = match pairs {
        Some((pos, neg)) => {
            let pos = index(&features, pos)?;
            let neg = index(&features, neg)?;
            aco(&features, &pos, &neg)?
        }
        None => cce_term.zeros_like()?,
    };
    let total = ((&cce_term * alpha)? + (&aco_term * (1.0 - alpha))?)?;
    Ok(AttackerTerms {
        total,
        cce: cce_term,
        aco: aco_term,
    })
}

fn index(features: &Tensor, rows: &[usize]) -> Result<Tensor> {
    let idx: Vec<u32> = rows.iter().map(|&i| i as u32).collect();
    let idx = Tensor::from_vec(idx, rows.len(), features.device())?;
    Ok(features.index_select(&idx, 0)?)
}

/// Mean task cross entropy of the user on censored clouds.
pub fn utility_loss(user: &BackboneNet, censored: &Tensor, y_t: &Tensor) -> Result<Tensor> {
    cce(&user.classify(censored)?, y_t)
}

/// Batch mean of `avg + gamma * max` chamfer terms of the raw generated
/// points against `reference`, plus `beta * t^2`. `None` for non-learned
/// samplers.
pub fn sample_loss(out: &SamplerOutput, reference: &Tensor) -> Result<Option<Tensor>> {
    let Some((avg, max, t2)) = out.sample_loss_terms(&reference.to_dtype(out.p_s.dtype())?)? else {
        return Ok(None);
    };
    let chamfer = (avg + (max * SAMPLE_GAMMA)?)?.mean_all()?;
    Ok(Some((chamfer + (t2 * SAMPLE_BETA)?)?))
}

/// Owner descent objective `lambda * l_util + l_sample - l_priv`.
pub fn owner_objective(l_util: &Tensor, l_priv: &Tensor, l_sample: Option<&Tensor>, lambda: f64) -> Result<Tensor> {
    if !(lambda >= 0.0) {
        return Err(Error::invalid(format!("lambda must be >= 0, got {lambda}")));
    }
    let mut total = ((l_util * lambda)? - l_priv)?;
    if let Some(s) = l_sample {
        total = (total + s)?;
    }
    Ok(total)
}

/// One logged training step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub step: usize,
    pub l_util: f64,
    pub l_priv: f64,
    pub l_cce_attacker: f64,
    pub l_aco: f64,
    pub l_sample: f64,
    pub total_owner: f64,
}

impl LossBreakdown {
    pub const CSV_HEADER: [&'static str; 7] =
        ["step", "l_util", "l_priv", "l_cce_attacker", "l_aco", "l_sample", "total_owner"];

    pub fn is_finite(&self) -> bool {
        [self.l_util, self.l_priv, self.l_cce_attacker, self.l_aco, self.l_sample, self.total_owner]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Writes breakdown rows as CSV with the [`LossBreakdown::CSV_HEADER`]
/// columns.
pub fn write_history_csv<W: std::io::Write>(rows: &[LossBreakdown], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    if rows.is_empty() {
        w.write_record(LossBreakdown::CSV_HEADER)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_history_csv<R: std::io::Read>(input: R) -> Result<Vec<LossBreakdown>> {
    let mut r = csv::Reader::from_reader(input);
    Ok(r.deserialize().collect::<std::result::Result<Vec<_>, _>>()?)
}

/// Scalar value of a one-element tensor.
pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?[0])
}
