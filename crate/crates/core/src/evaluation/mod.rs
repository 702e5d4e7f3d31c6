//! Privacy and utility measurement, sweeps, Pareto fronts and critical
//! points.

mod plot;

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, D};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use plot::tradeoff_svg;

use crate::censor::CensorModel;
use crate::cloud::{Attribute, Dataset, PointCloud};
use crate::error::{Error, Result};
use crate::nets::{build_backbone, BackboneConfig, BackboneNet};
use crate::rng::{RandomStream, Substream};
use crate::data::encode_split;
use crate::nets::checkpoint::hex_digest;
use crate::training::{make_pipeline, train, train_classifier, PipelineKind, TrainConfig};

/// One measured configuration. Privacy is offline-attacker accuracy
/// (lower is better), utility is fresh-user accuracy (higher is better).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffPoint {
    pub config_id: String,
    pub seed: u64,
    pub lambda: Option<f64>,
    pub sigma: Option<f64>,
    pub kind: PipelineKind,
    pub privacy: f64,
    pub utility: f64,
}

impl TradeoffPoint {
    /// A bare point for front and hypervolume computations.
    pub fn at(privacy: f64, utility: f64) -> Self {
        Self {
            config_id: String::new(),
            seed: 0,
            lambda: None,
            sigma: None,
            kind: PipelineKind::NoPrivacy,
            privacy,
            utility,
        }
    }
}

/// `q` dominates `p`: no worse on both axes and strictly better on one.
pub fn dominates(q: &TradeoffPoint, p: &TradeoffPoint) -> bool {
    (q.privacy < p.privacy && q.utility >= p.utility) || (q.privacy <= p.privacy && q.utility > p.utility)
}

/// Points not dominated by any other point, in input order. Exact
/// duplicates are all kept.
pub fn pareto_front(points: &[TradeoffPoint]) -> Vec<TradeoffPoint> {
    let mut front: Vec<(usize, &TradeoffPoint)> = Vec::new();
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        points[a]
            .privacy
            .total_cmp(&points[b].privacy)
            .then(points[b].utility.total_cmp(&points[a].utility))
            .then(a.cmp(&b))
    });
    // sweep by ascending privacy; a point survives if its utility beats
    // every strictly-lower-privacy point and ties the best at equal privacy
    let mut best_below = f64::NEG_INFINITY;
    let mut i = 0;
    while i < order.len() {
        let priv_i = points[order[i]].privacy;
        let mut j = i;
        while j < order.len() && points[order[j]].privacy == priv_i {
            j += 1;
        }
        let top = points[order[i]].utility;
        if top > best_below {
            for &k in &order[i..j] {
                if points[k].utility == top {
                    front.push((k, &points[k]));
                }
            }
            best_below = top;
        }
        i = j;
    }
    front.sort_by_key(|(k, _)| *k);
    front.into_iter().map(|(_, p)| p.clone()).collect()
}

/// Area of the unit square dominated by `points` relative to the reference
/// (privacy 1, utility 0).
pub fn nhv(points: &[TradeoffPoint]) -> Result<f64> {
    for p in points {
        if !(0.0..=1.0).contains(&p.privacy) || !(0.0..=1.0).contains(&p.utility) {
            return Err(Error::invalid(format!(
                "point ({}, {}) lies outside the unit square",
                p.privacy, p.utility
            )));
        }
    }
    let mut front: Vec<(f64, f64)> = pareto_front(points).iter().map(|p| (p.privacy, p.utility)).collect();
    front.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut area = 0.0;
    let mut height: f64 = 0.0;
    for (i, &(x, u)) in front.iter().enumerate() {
        height = height.max(u);
        let next = front.get(i + 1).map_or(1.0, |p| p.0);
        area += (next - x) * height;
    }
    Ok(area)
}

/// Reference corner of the hypervolume.
pub const NHV_REFERENCE: (f64, f64) = (1.0, 0.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoReport {
    pub points: Vec<TradeoffPoint>,
    pub front: Vec<TradeoffPoint>,
    pub nhv: f64,
    pub reference: (f64, f64),
}

impl ParetoReport {
    pub fn new(points: Vec<TradeoffPoint>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("a Pareto report needs at least one point"));
        }
        let front = pareto_front(&points);
        let nhv = nhv(&points)?;
        Ok(Self {
            points,
            front,
            nhv,
            reference: NHV_REFERENCE,
        })
    }
}

pub fn write_points_csv<W: std::io::Write>(points: &[TradeoffPoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if points.is_empty() {
        w.write_record(["config_id", "seed", "lambda", "sigma", "kind", "privacy", "utility"])?;
    }
    for p in points {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_points_csv<R: std::io::Read>(input: R) -> Result<Vec<TradeoffPoint>> {
    let mut r = csv::Reader::from_reader(input);
    Ok(r.deserialize().collect::<std::result::Result<Vec<_>, _>>()?)
}

/// Fraction of samples whose arg-max logit equals the `attr` label.
pub fn accuracy(net: &BackboneNet, data: &Dataset, attr: Attribute) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::invalid("accuracy of an empty dataset"));
    }
    let mut correct = 0usize;
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(64) {
        let x = data.batch_tensor(chunk, net.dtype(), &Device::Cpu)?;
        let pred = net.classify(&x)?.argmax(D::Minus1)?.to_vec1::<u32>()?;
        correct += chunk
            .iter()
            .zip(pred)
            .filter(|(&i, p)| data.label(i, attr) == *p as usize)
            .count();
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Training budgets of the offline evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalBudget {
    pub pretrain_steps: usize,
    pub finetune_steps: usize,
    pub utility_steps: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for EvalBudget {
    fn default() -> Self {
        Self {
            pretrain_steps: 1000,
            finetune_steps: 1000,
            utility_steps: 1000,
            batch_size: 32,
            lr: 1e-3,
        }
    }
}

/// Copy of a backbone with its own parameter storage.
pub fn duplicate(net: &BackboneNet) -> Result<BackboneNet> {
    let copy = build_backbone(net.config(), net.dtype(), &mut ChaCha8Rng::seed_from_u64(0))?;
    for ((_, src), (_, dst)) in net.params().iter().zip(copy.params()) {
        dst.set(src.as_tensor())?;
    }
    Ok(copy)
}

/// A fresh sensitive-attribute classifier trained on uncensored data.
pub fn pretrain_attacker(train_set: &Dataset, budget: &EvalBudget, stream: &RandomStream) -> Result<BackboneNet> {
    let stream = stream.derive("offline-attacker", 0);
    let net = build_backbone(
        &BackboneConfig::desk(train_set.num_classes(Attribute::Sensitive)),
        DType::F32,
        &mut stream.substream(Substream::AttackerInit),
    )?;
    train_classifier(
        &net,
        train_set,
        Attribute::Sensitive,
        budget.pretrain_steps,
        budget.batch_size,
        budget.lr,
        &mut stream.substream(Substream::Data),
    )?;
    Ok(net)
}

/// Both splits censored with fixed per-split seeds.
pub fn censor_splits(
    censor: &CensorModel,
    train_set: &Dataset,
    test_set: &Dataset,
    stream: &RandomStream,
) -> Result<(Dataset, Dataset)> {
    Ok((
        censor.censor_dataset(train_set, stream.derive("censor-train", 0).seed())?,
        censor.censor_dataset(test_set, stream.derive("censor-test", 0).seed())?,
    ))
}

/// Fine-tunes a copy of `pretrained` on censored training data and returns
/// its censored-test accuracy on the sensitive label.
pub fn attack_censored(
    pretrained: &BackboneNet,
    censored_train: &Dataset,
    censored_test: &Dataset,
    budget: &EvalBudget,
    stream: &RandomStream,
) -> Result<f64> {
    let net = duplicate(pretrained)?;
    train_classifier(
        &net,
        censored_train,
        Attribute::Sensitive,
        budget.finetune_steps,
        budget.batch_size,
        budget.lr,
        &mut stream.derive("offline-finetune", 0).substream(Substream::Data),
    )?;
    accuracy(&net, censored_test, Attribute::Sensitive)
}

/// Offline attack: pretrain on the raw training split (or reuse
/// `pretrained`), censor both splits, fine-tune, score on censored test.
pub fn offline_attack(
    censor: &CensorModel,
    train_set: &Dataset,
    test_set: &Dataset,
    budget: &EvalBudget,
    stream: &RandomStream,
    pretrained: Option<&BackboneNet>,
) -> Result<f64> {
    let owned;
    let pretrained = match pretrained {
        Some(p) => p,
        None => {
            owned = pretrain_attacker(train_set, budget, stream)?;
            &owned
        }
    };
    let (ctrain, ctest) = censor_splits(censor, train_set, test_set, stream)?;
    attack_censored(pretrained, &ctrain, &ctest, budget, stream)
}

/// Task accuracy of a fresh user trained on censored data.
pub fn utility_censored(
    censored_train: &Dataset,
    censored_test: &Dataset,
    budget: &EvalBudget,
    stream: &RandomStream,
) -> Result<f64> {
    let stream = stream.derive("offline-user", 0);
    let net = build_backbone(
        &BackboneConfig::desk(censored_train.num_classes(Attribute::Task)),
        DType::F32,
        &mut stream.substream(Substream::UserInit),
    )?;
    train_classifier(
        &net,
        censored_train,
        Attribute::Task,
        budget.utility_steps,
        budget.batch_size,
        budget.lr,
        &mut stream.substream(Substream::Data),
    )?;
    accuracy(&net, censored_test, Attribute::Task)
}

pub fn measure_utility(
    censor: &CensorModel,
    train_set: &Dataset,
    test_set: &Dataset,
    budget: &EvalBudget,
    stream: &RandomStream,
) -> Result<f64> {
    let (ctrain, ctest) = censor_splits(censor, train_set, test_set, stream)?;
    utility_censored(&ctrain, &ctest, budget, stream)
}

/// Privacy and utility of one censor, censoring the splits once.
pub fn evaluate_censor(
    censor: &CensorModel,
    train_set: &Dataset,
    test_set: &Dataset,
    budget: &EvalBudget,
    stream: &RandomStream,
    pretrained: &BackboneNet,
) -> Result<(f64, f64)> {
    let (ctrain, ctest) = censor_splits(censor, train_set, test_set, stream)?;
    let privacy = attack_censored(pretrained, &ctrain, &ctest, budget, stream)?;
    let utility = utility_censored(&ctrain, &ctest, budget, stream)?;
    Ok((privacy, utility))
}

/// One sweep job.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub kind: PipelineKind,
    pub lambda: Option<f64>,
    pub sigma: Option<f64>,
    pub seed: u64,
}

impl SweepCell {
    /// Stable identifier of the grid position (without the seed).
    pub fn config_id(&self) -> String {
        let mut id = self.kind.name().to_string();
        if let Some(l) = self.lambda {
            id.push_str(&format!("-lambda{l}"));
        }
        if let Some(s) = self.sigma {
            id.push_str(&format!("-sigma{s}"));
        }
        id
    }

    pub fn file_stem(&self) -> String {
        format!("{}-seed{}", self.config_id(), self.seed)
    }

    pub fn config(&self, base: &TrainConfig) -> TrainConfig {
        TrainConfig {
            kind: self.kind,
            lambda: self.lambda.unwrap_or(base.lambda),
            sigma: self.sigma.unwrap_or(base.sigma),
            seed: self.seed,
            ..base.clone()
        }
    }
}

/// Grid cells for `kinds`. Fixed-noise kinds sweep sigma, the others
/// sweep lambda, and the identity release is always included once per
/// seed.
pub fn sweep_cells(kinds: &[PipelineKind], lambda_grid: &[f64], sigma_grid: &[f64], seeds: &[u64]) -> Result<Vec<SweepCell>> {
    if lambda_grid.is_empty() || sigma_grid.is_empty() || seeds.is_empty() {
        return Err(Error::invalid("sweep grids and seed list must be non-empty"));
    }
    let mut kinds: Vec<PipelineKind> = kinds.to_vec();
    if !kinds.contains(&PipelineKind::NoPrivacy) {
        kinds.push(PipelineKind::NoPrivacy);
    }
    kinds.sort();
    kinds.dedup();
    let mut cells = Vec::new();
    for &seed in seeds {
        for &kind in &kinds {
            match kind {
                PipelineKind::NoPrivacy => cells.push(SweepCell { kind, lambda: None, sigma: None, seed }),
                k if k.fixed_noise() => cells.extend(sigma_grid.iter().map(|&s| SweepCell {
                    kind,
                    lambda: None,
                    sigma: Some(s),
                    seed,
                })),
                _ => cells.extend(lambda_grid.iter().map(|&l| SweepCell { kind, lambda: Some(l), sigma: None, seed })),
            }
        }
    }
    Ok(cells)
}

/// A cell that failed; the sweep carries on without it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepFailure {
    pub cell: SweepCell,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    /// Sorted by `(config_id, seed)`.
    pub points: Vec<TradeoffPoint>,
    pub failures: Vec<SweepFailure>,
    /// Cells answered from the cache directory.
    pub reused: usize,
}

/// Options of [`sweep`].
#[derive(Debug, Clone)]
pub struct SweepOptions {
    pub budget: EvalBudget,
    /// Where finished cells are recorded; existing records are reused.
    pub cache_dir: Option<PathBuf>,
    /// Concurrent cells; 1 runs serially.
    pub jobs: usize,
}

fn cell_path(dir: &Path, cell: &SweepCell) -> PathBuf {
    dir.join(format!("{}.json", cell.file_stem()))
}

#[derive(Serialize, Deserialize)]
struct CellRecord {
    cell: SweepCell,
    /// Digest of the base config, budget and data the cell was run with.
    fingerprint: String,
    point: TradeoffPoint,
}

fn cached(dir: &Path, cell: &SweepCell, fingerprint: &str) -> Option<TradeoffPoint> {
    let text = std::fs::read_to_string(cell_path(dir, cell)).ok()?;
    let rec: CellRecord = serde_json::from_str(&text).ok()?;
    (rec.cell == *cell && rec.fingerprint == fingerprint).then_some(rec.point)
}

fn sweep_fingerprint(base: &TrainConfig, budget: &EvalBudget, train_set: &Dataset, test_set: &Dataset) -> Result<String> {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(&(base, budget))?);
    h.update(encode_split(train_set)?);
    h.update(encode_split(test_set)?);
    Ok(hex_digest(&h.finalize()))
}

/// Trains and evaluates every cell.
///
/// The offline attacker is pretrained once per seed and shared across that
/// seed's cells; every cell fine-tunes its own copy.
pub fn sweep(
    base: &TrainConfig,
    cells: &[SweepCell],
    train_set: &Dataset,
    test_set: &Dataset,
    options: &SweepOptions,
) -> Result<SweepOutcome> {
    base.validate()?;
    let fingerprint = sweep_fingerprint(base, &options.budget, train_set, test_set)?;
    let mut todo = Vec::new();
    let mut points = Vec::new();
    let mut reused = 0;
    for cell in cells {
        match options.cache_dir.as_deref().and_then(|d| cached(d, cell, &fingerprint)) {
            Some(p) => {
                reused += 1;
                points.push(p);
            }
            None => todo.push(cell.clone()),
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.jobs.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("cannot build worker pool: {e}")))?;

    let mut seeds: Vec<u64> = todo.iter().map(|c| c.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    let pretrained: HashMap<u64, Result<BackboneNet>> = pool.install(|| {
        seeds
            .par_iter()
            .map(|&s| (s, pretrain_attacker(train_set, &options.budget, &RandomStream::new(s))))
            .collect()
    });

    let results: Vec<(SweepCell, Result<TradeoffPoint>)> = pool.install(|| {
        todo.par_iter()
            .map(|cell| {
                let result = (|| {
                    let attacker = pretrained[&cell.seed]
                        .as_ref()
                        .map_err(|e| Error::invalid(format!("attacker pretraining failed: {e}")))?;
                    let config = cell.config(base);
                    // Without owner parameters the released data does not
                    // depend on training.
                    let censor = if config.kind.has_owner() {
                        train(&config, train_set, None)?.censor
                    } else {
                        make_pipeline(&config, &RandomStream::new(config.seed))?
                    };
                    let stream = RandomStream::new(cell.seed).derive("evaluate", 0);
                    let (privacy, utility) =
                        evaluate_censor(&censor, train_set, test_set, &options.budget, &stream, attacker)?;
                    log::info!("{}: privacy {privacy:.4} utility {utility:.4}", cell.file_stem());
                    let point = TradeoffPoint {
                        config_id: cell.config_id(),
                        seed: cell.seed,
                        lambda: cell.lambda,
                        sigma: cell.sigma,
                        kind: cell.kind,
                        privacy,
                        utility,
                    };
                    // Recorded as soon as it finishes so an interrupted sweep
                    // keeps its progress.
                    if let Some(dir) = options.cache_dir.as_deref() {
                        let record = CellRecord {
                            cell: cell.clone(),
                            fingerprint: fingerprint.clone(),
                            point: point.clone(),
                        };
                        crate::write_atomic(&cell_path(dir, cell), serde_json::to_string_pretty(&record)?.as_bytes())?;
                    }
                    Ok(point)
                })();
                (cell.clone(), result)
            })
            .collect()
    });

    let mut failures = Vec::new();
    for (cell, result) in results {
        match result {
            Ok(p) => points.push(p),
            Err(e) => {
                log::warn!("cell {} failed: {e}", cell.file_stem());
                failures.push(SweepFailure { cell, error: e.to_string() });
            }
        }
    }
    points.sort_by(|a, b| a.config_id.cmp(&b.config_id).then(a.seed.cmp(&b.seed)));
    Ok(SweepOutcome { points, failures, reused })
}

/// Median over seeds of each configuration, keyed by config id.
pub fn median_by_config(points: &[TradeoffPoint]) -> Vec<TradeoffPoint> {
    let mut groups: BTreeMap<&str, Vec<&TradeoffPoint>> = BTreeMap::new();
    for p in points {
        groups.entry(&p.config_id).or_default().push(p);
    }
    groups
        .into_values()
        .map(|g| {
            let mut out = g[0].clone();
            out.privacy = median(g.iter().map(|p| p.privacy).collect());
            out.utility = median(g.iter().map(|p| p.utility).collect());
            out
        })
        .collect()
}

/// Per-kind view of a sweep: the hypervolume of each seed's points of that
/// kind and the median over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindSummary {
    pub kind: PipelineKind,
    pub nhv_by_seed: BTreeMap<u64, f64>,
    pub median_nhv: f64,
    /// Median over seeds of the leakiest configuration of the kind.
    pub median_max_privacy: f64,
}

pub fn summarize_by_kind(points: &[TradeoffPoint]) -> Result<Vec<KindSummary>> {
    let mut groups: BTreeMap<PipelineKind, BTreeMap<u64, Vec<TradeoffPoint>>> = BTreeMap::new();
    for p in points {
        groups.entry(p.kind).or_default().entry(p.seed).or_default().push(p.clone());
    }
    groups
        .into_iter()
        .map(|(kind, by_seed)| {
            let nhv_by_seed = by_seed
                .iter()
                .map(|(&s, pts)| Ok((s, nhv(pts)?)))
                .collect::<Result<BTreeMap<u64, f64>>>()?;
            let worst: Vec<f64> = by_seed
                .values()
                .map(|pts| pts.iter().map(|p| p.privacy).fold(f64::NEG_INFINITY, f64::max))
                .collect();
            Ok(KindSummary {
                kind,
                median_nhv: median(nhv_by_seed.values().copied().collect()),
                median_max_privacy: median(worst),
                nhv_by_seed,
            })
        })
        .collect()
}

pub fn median(mut v: Vec<f64>) -> f64 {
    assert!(!v.is_empty(), "median of nothing");
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

/// Input points whose features attain the pooled maximum, ranked by the
/// number of feature dimensions they win (ties by index).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CriticalSet {
    pub indices: Vec<usize>,
    pub wins: Vec<usize>,
}

pub fn critical_points(net: &BackboneNet, cloud: &PointCloud, top_k: Option<usize>) -> Result<CriticalSet> {
    let x = cloud.to_tensor(net.dtype(), &Device::Cpu)?.unsqueeze(0)?;
    let feats = net.point_features(&x)?.squeeze(0)?.to_dtype(DType::F64)?.to_vec2::<f64>()?;
    let width = feats[0].len();
    let mut wins = vec![0usize; feats.len()];
    for f in 0..width {
        let mut best = 0;
        for (i, row) in feats.iter().enumerate() {
            if row[f] > feats[best][f] {
                best = i;
            }
        }
        wins[best] += 1;
    }
    let mut ranked: Vec<usize> = (0..feats.len()).filter(|&i| wins[i] > 0).collect();
    ranked.sort_by(|&a, &b| wins[b].cmp(&wins[a]).then(a.cmp(&b)));
    if let Some(k) = top_k {
        ranked.truncate(k);
    }
    Ok(CriticalSet {
        wins: ranked.iter().map(|&i| wins[i]).collect(),
        indices: ranked,
    })
}

/// Intersection over union of two index sets; two empty sets give 1.
pub fn critical_miou(a: &CriticalSet, b: &CriticalSet) -> f64 {
    let sa: std::collections::BTreeSet<usize> = a.indices.iter().copied().collect();
    let sb: std::collections::BTreeSet<usize> = b.indices.iter().copied().collect();
    let union = sa.union(&sb).count();
    if union == 0 {
        return 1.0;
    }
    sa.intersection(&sb).count() as f64 / union as f64
}

/// Result of the critical-point overlap analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PremiseReport {
    pub miou: f64,
    pub per_cloud: Vec<f64>,
    pub top_k: usize,
    pub task_accuracy: f64,
    pub sensitive_accuracy: f64,
}

/// Trains a task and a sensitive classifier on `train_set` and averages
/// the IoU of their top-k critical sets over `test_set`.
pub fn premise(
    train_set: &Dataset,
    test_set: &Dataset,
    steps: usize,
    top_k: usize,
    stream: &RandomStream,
) -> Result<PremiseReport> {
    let nets: Vec<BackboneNet> = [Attribute::Task, Attribute::Sensitive]
        .into_iter()
        .enumerate()
        .map(|(i, attr)| {
            let s = stream.derive("premise", i as u64);
            let net = build_backbone(
                &BackboneConfig::desk(train_set.num_classes(attr)),
                DType::F32,
                &mut s.substream(Substream::UserInit),
            )?;
            train_classifier(&net, train_set, attr, steps, 32, 1e-3, &mut s.substream(Substream::Data))?;
            Ok(net)
        })
        .collect::<Result<_>>()?;
    let per_cloud = test_set
        .samples
        .iter()
        .map(|s| {
            let a = critical_points(&nets[0], &s.cloud, Some(top_k))?;
            let b = critical_points(&nets[1], &s.cloud, Some(top_k))?;
            Ok(critical_miou(&a, &b))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(PremiseReport {
        miou: per_cloud.iter().sum::<f64>() / per_cloud.len().max(1) as f64,
        per_cloud,
        top_k,
        task_accuracy: accuracy(&nets[0], test_set, Attribute::Task)?,
        sensitive_accuracy: accuracy(&nets[1], test_set, Attribute::Sensitive)?,
    })
}
