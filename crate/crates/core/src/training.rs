//! Alternating three-player optimisation and the baseline pipelines.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use candle_core::{DType, Device};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::censor::{CensorModel, CensorSpec, NoiseSpec, NoiseStage, SamplerSpec, SamplerStage};
use crate::cloud::{Attribute, Dataset};
use crate::error::{Error, Result};
use crate::evaluation::accuracy;
use crate::nets::{build_backbone, checkpoint, BackboneConfig, BackboneNet, DistorterConfig, Granularity, NamedVar, SamplerConfig};
use crate::objectives::{attacker_loss, owner_objective, sample_loss, scalar, utility_loss, LossBreakdown};
use crate::rng::{RandomStream, Substream};

/// Which censoring pipeline to train.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PipelineKind {
    /// Learned sampler and learned noise.
    #[serde(rename = "CBNS")]
    Cbns,
    /// FPS and fixed noise.
    #[serde(rename = "AS-AN")]
    AsAn,
    /// FPS and learned noise.
    #[serde(rename = "AS-ON")]
    AsOn,
    /// Learned sampler and fixed noise.
    #[serde(rename = "OS-AN")]
    OsAn,
    /// Learned sampler, no noise.
    #[serde(rename = "OS")]
    Os,
    /// Identity release.
    #[serde(rename = "NO-PRIVACY")]
    NoPrivacy,
}

impl PipelineKind {
    pub const ALL: [PipelineKind; 6] = [
        PipelineKind::Cbns,
        PipelineKind::AsAn,
        PipelineKind::AsOn,
        PipelineKind::OsAn,
        PipelineKind::Os,
        PipelineKind::NoPrivacy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PipelineKind::Cbns => "CBNS",
            PipelineKind::AsAn => "AS-AN",
            PipelineKind::AsOn => "AS-ON",
            PipelineKind::OsAn => "OS-AN",
            PipelineKind::Os => "OS",
            PipelineKind::NoPrivacy => "NO-PRIVACY",
        }
    }

    /// Whether the noise scale is a fixed, swept hyperparameter.
    pub fn fixed_noise(self) -> bool {
        matches!(self, PipelineKind::AsAn | PipelineKind::OsAn)
    }

    /// Whether the owner has parameters to train.
    pub fn has_owner(self) -> bool {
        !matches!(self, PipelineKind::AsAn | PipelineKind::NoPrivacy)
    }
}

impl fmt::Display for PipelineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PipelineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PipelineKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                let names: Vec<_> = PipelineKind::ALL.iter().map(|k| k.name()).collect();
                Error::invalid(format!("unknown pipeline kind {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

fn default_eval_every() -> usize {
    0
}

/// Training hyperparameters. Unknown JSON keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub kind: PipelineKind,
    pub r: usize,
    pub alpha: f64,
    pub lambda: f64,
    /// Noise scale of the fixed-noise baselines.
    pub sigma: f64,
    pub granularity: Granularity,
    pub lr_owner: f64,
    pub lr_user: f64,
    pub lr_attacker: f64,
    pub attacker_steps_per_owner_step: usize,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    /// Steps between accuracy snapshots; 0 disables them.
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    /// Use the 1024-wide backbone for both proxies.
    #[serde(default)]
    pub full_backbone: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            kind: PipelineKind::Cbns,
            r: 64,
            alpha: 0.5,
            lambda: 1.0,
            sigma: 0.05,
            granularity: Granularity::Pointwise,
            lr_owner: 1e-3,
            lr_user: 1e-3,
            lr_attacker: 1e-3,
            attacker_steps_per_owner_step: 1,
            batch_size: 32,
            steps: 2000,
            seed: 0,
            eval_every: 0,
            full_backbone: false,
        }
    }
}

/// Default lambda sweep grid.
pub const LAMBDA_GRID: [f64; 5] = [0.1, 0.3, 1.0, 3.0, 10.0];
/// Default fixed-noise sweep grid.
pub const SIGMA_GRID: [f64; 4] = [0.01, 0.05, 0.1, 0.2];

impl TrainConfig {
    /// Every violated constraint, empty when the config is usable.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.r == 0 {
            out.push("r must be >= 1".to_string());
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            out.push(format!("alpha must lie in [0, 1], got {}", self.alpha));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            out.push(format!("lambda must be finite and >= 0, got {}", self.lambda));
        }
        if self.kind.fixed_noise() && !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            out.push(format!("sigma must be finite and >= 0, got {}", self.sigma));
        }
        for (name, lr) in [("lr_owner", self.lr_owner), ("lr_user", self.lr_user), ("lr_attacker", self.lr_attacker)] {
            if !(lr > 0.0 && lr.is_finite()) {
                out.push(format!("{name} must be > 0, got {lr}"));
            }
        }
        if self.attacker_steps_per_owner_step == 0 {
            out.push("attacker_steps_per_owner_step must be >= 1".to_string());
        }
        if self.batch_size < 2 {
            out.push(format!("batch_size must be >= 2, got {}", self.batch_size));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::invalid(problems.join("; ")))
        }
    }

    /// Attacker loss mixing weight actually used. Learned noise on a fixed
    /// sampler is fit by likelihood alone.
    pub fn effective_alpha(&self) -> f64 {
        match self.kind {
            PipelineKind::AsOn => 1.0,
            _ => self.alpha,
        }
    }

    pub fn backbone(&self, num_classes: usize) -> BackboneConfig {
        if self.full_backbone {
            BackboneConfig::full(num_classes)
        } else {
            BackboneConfig::desk(num_classes)
        }
    }
}

/// Builds the censor for `config.kind`, initialising learned stages from
/// `stream`.
pub fn make_pipeline(config: &TrainConfig, stream: &RandomStream) -> Result<CensorModel> {
    let learned_sampler = || SamplerSpec::Learned { config: SamplerConfig::desk(config.r) };
    let learned_noise = || NoiseSpec::Learned { config: DistorterConfig::desk(config.granularity) };
    let (sampler, noise) = match config.kind {
        PipelineKind::Cbns => (learned_sampler(), learned_noise()),
        PipelineKind::AsAn => (SamplerSpec::Fps { r: config.r }, NoiseSpec::Fixed { sigma: config.sigma }),
        PipelineKind::AsOn => (SamplerSpec::Fps { r: config.r }, learned_noise()),
        PipelineKind::OsAn => (learned_sampler(), NoiseSpec::Fixed { sigma: config.sigma }),
        PipelineKind::Os => (learned_sampler(), NoiseSpec::Disabled),
        PipelineKind::NoPrivacy => (SamplerSpec::Identity, NoiseSpec::Disabled),
    };
    CensorModel::from_spec(&CensorSpec { sampler, noise }, DType::F32, stream)
}

/// The training-time user and attacker classifiers. They share no
/// parameters.
#[derive(Debug, Clone)]
pub struct ProxyHeads {
    pub user: BackboneNet,
    pub attacker: BackboneNet,
}

impl ProxyHeads {
    pub fn new(user: &BackboneConfig, attacker: &BackboneConfig, dtype: DType, stream: &RandomStream) -> Result<Self> {
        Ok(Self {
            user: build_backbone(user, dtype, &mut stream.substream(Substream::UserInit))?,
            attacker: build_backbone(attacker, dtype, &mut stream.substream(Substream::AttackerInit))?,
        })
    }

    pub fn params(&self) -> Vec<NamedVar> {
        let mut out: Vec<NamedVar> = self.user.params().into_iter().map(|(n, v)| (format!("user.{n}"), v)).collect();
        out.extend(self.attacker.params().into_iter().map(|(n, v)| (format!("attacker.{n}"), v)));
        out
    }
}

/// For each anchor, a uniformly drawn same-class positive (not the anchor)
/// and different-class negative from the same batch.
///
/// An anchor alone in its class uses itself as positive. Returns `None` if
/// the batch holds fewer than two sensitive classes.
pub fn pick_pairs(y_s: &[usize], rng: &mut impl Rng) -> Option<(Vec<usize>, Vec<usize>)> {
    let mut pos = Vec::with_capacity(y_s.len());
    let mut neg = Vec::with_capacity(y_s.len());
    for (i, &y) in y_s.iter().enumerate() {
        let same: Vec<usize> = (0..y_s.len()).filter(|&j| j != i && y_s[j] == y).collect();
        let diff: Vec<usize> = (0..y_s.len()).filter(|&j| y_s[j] != y).collect();
        let n = *diff.choose(rng)?;
        let p = match same.choose(rng) {
            Some(&p) => p,
            None => {
                log::debug!("anchor {i} is alone in sensitive class {y}; using itself as positive");
                i
            }
        };
        pos.push(p);
        neg.push(n);
    }
    Some((pos, neg))
}

/// Accuracy snapshot taken during training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSnapshot {
    pub step: usize,
    pub user_train: f64,
    pub attacker_train: f64,
    pub user_test: Option<f64>,
    pub attacker_test: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub rows: Vec<LossBreakdown>,
    pub snapshots: Vec<EvalSnapshot>,
}

fn adam(vars: Vec<NamedVar>, lr: f64) -> Result<AdamW> {
    let params = ParamsAdamW {
        lr,
        weight_decay: 0.0,
        ..ParamsAdamW::default()
    };
    Ok(AdamW::new(vars.into_iter().map(|(_, v)| v).collect(), params)?)
}

/// Models, optimiser slots and generators of a training run.
pub struct TrainState {
    pub censor: CensorModel,
    pub proxies: ProxyHeads,
    owner_opt: Option<AdamW>,
    user_opt: AdamW,
    attacker_opt: AdamW,
    noise_rng: ChaCha8Rng,
    pair_rng: ChaCha8Rng,
    batch_rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    step: usize,
}

impl TrainState {
    /// Fresh state for `config` on data with the given class counts.
    pub fn new(config: &TrainConfig, task_classes: usize, sensitive_classes: usize) -> Result<Self> {
        let stream = RandomStream::new(config.seed);
        let censor = make_pipeline(config, &stream)?;
        let proxies = ProxyHeads::new(
            &config.backbone(task_classes),
            &config.backbone(sensitive_classes),
            DType::F32,
            &stream,
        )?;
        let owner_params = censor.params();
        let owner_opt = if owner_params.is_empty() {
            None
        } else {
            Some(adam(owner_params, config.lr_owner)?)
        };
        Ok(Self {
            owner_opt,
            user_opt: adam(proxies.user.params(), config.lr_user)?,
            attacker_opt: adam(proxies.attacker.params(), config.lr_attacker)?,
            censor,
            proxies,
            noise_rng: stream.substream(Substream::NoiseDraw),
            pair_rng: stream.substream(Substream::PairPick),
            batch_rng: stream.substream(Substream::Data),
            order: Vec::new(),
            cursor: 0,
            step: 0,
        })
    }

    pub fn step(&self) -> usize {
        self.step
    }

    /// Next minibatch, reshuffling at each epoch boundary.
    pub fn next_batch(&mut self, len: usize, batch: usize) -> Vec<usize> {
        let batch = batch.min(len);
        if self.order.len() != len || self.cursor + batch > len {
            self.order = (0..len).collect();
            self.order.shuffle(&mut self.batch_rng);
            self.cursor = 0;
        }
        let out = self.order[self.cursor..self.cursor + batch].to_vec();
        self.cursor += batch;
        out
    }

    /// One alternating step on the samples at `indices`.
    ///
    /// Attacker phase: `attacker_steps_per_owner_step` descent steps on the
    /// attacker loss over the detached censored batch. Owner phase: the
    /// censor descends `lambda * L_util + L_sample - L_priv`; the user then
    /// descends `L_util` on the detached censored batch.
    pub fn train_step(&mut self, data: &Dataset, indices: &[usize], config: &TrainConfig) -> Result<LossBreakdown> {
        let device = Device::Cpu;
        let clouds = data.batch_tensor(indices, DType::F32, &device)?;
        let y_t = data.label_tensor(indices, Attribute::Task, &device)?;
        let y_s = data.label_tensor(indices, Attribute::Sensitive, &device)?;
        let ys_host: Vec<usize> = indices.iter().map(|&i| data.samples[i].y_s).collect();

        let (censored, sampled) = self.censor.forward_train(&clouds, &mut self.noise_rng)?;
        let pairs = pick_pairs(&ys_host, &mut self.pair_rng);
        let alpha = if pairs.is_some() { config.effective_alpha() } else { 1.0 };
        let pairs_ref = pairs.as_ref().map(|(p, n)| (&p[..], &n[..]));

        let frozen = censored.detach();
        for _ in 0..config.attacker_steps_per_owner_step {
            let terms = attacker_loss(&self.proxies.attacker, &frozen, &y_s, pairs_ref, alpha)?;
            self.check(scalar(&terms.total)?, "attacker loss")?;
            self.attacker_opt.backward_step(&terms.total)?;
        }

        let priv_terms = attacker_loss(&self.proxies.attacker, &censored, &y_s, pairs_ref, alpha)?;
        let l_util = utility_loss(&self.proxies.user, &censored, &y_t)?;
        let l_sample = sample_loss(&sampled, &clouds)?;
        let total = owner_objective(&l_util, &priv_terms.total, l_sample.as_ref(), config.lambda)?;
        let row = LossBreakdown {
            step: self.step,
            l_util: scalar(&l_util)?,
            l_priv: scalar(&priv_terms.total)?,
            l_cce_attacker: scalar(&priv_terms.cce)?,
            l_aco: scalar(&priv_terms.aco)?,
            l_sample: l_sample.as_ref().map(scalar).transpose()?.unwrap_or(0.0),
            total_owner: scalar(&total)?,
        };
        if !row.is_finite() {
            return Err(Error::NonFinite {
                step: self.step,
                row: format!("{row:?}"),
            });
        }
        if let Some(opt) = self.owner_opt.as_mut() {
            opt.backward_step(&total)?;
            // a diverged update would otherwise surface later as an
            // invalid temperature or noise scale
            for (name, v) in self.censor.params() {
                let sum = scalar(&v.as_tensor().sum_all()?)?;
                if !sum.is_finite() {
                    return Err(Error::NonFinite {
                        step: self.step,
                        row: format!("owner parameter {name} diverged"),
                    });
                }
            }
        }
        let user_loss = utility_loss(&self.proxies.user, &frozen, &y_t)?;
        self.user_opt.backward_step(&user_loss)?;

        self.step += 1;
        Ok(row)
    }

    fn check(&self, v: f64, what: &str) -> Result<()> {
        if v.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite {
                step: self.step,
                row: format!("{what} = {v}"),
            })
        }
    }

    fn snapshot(&self, train: &Dataset, eval: Option<&Dataset>) -> Result<EvalSnapshot> {
        let cap = |d: &Dataset| -> Result<Dataset> {
            let keep = d.samples.iter().take(256).cloned().collect();
            d.with_samples(keep)
        };
        let seed = 0x5eed;
        let train = self.censor.censor_dataset(&cap(train)?, seed)?;
        let test = eval.map(|d| cap(d).and_then(|d| self.censor.censor_dataset(&d, seed))).transpose()?;
        Ok(EvalSnapshot {
            step: self.step,
            user_train: accuracy(&self.proxies.user, &train, Attribute::Task)?,
            attacker_train: accuracy(&self.proxies.attacker, &train, Attribute::Sensitive)?,
            user_test: test.as_ref().map(|d| accuracy(&self.proxies.user, d, Attribute::Task)).transpose()?,
            attacker_test: test
                .as_ref()
                .map(|d| accuracy(&self.proxies.attacker, d, Attribute::Sensitive))
                .transpose()?,
        })
    }
}

/// A finished run.
pub struct TrainedRun {
    pub config: TrainConfig,
    pub censor: CensorModel,
    pub proxies: ProxyHeads,
    pub history: TrainHistory,
}

/// Runs `config.steps` alternating steps on `train_set`. `eval_set`, when
/// given, feeds the test columns of periodic snapshots.
pub fn train(config: &TrainConfig, train_set: &Dataset, eval_set: Option<&Dataset>) -> Result<TrainedRun> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let n = train_set.points_per_cloud();
    if config.kind != PipelineKind::NoPrivacy && config.r >= n {
        return Err(Error::invalid(format!("r = {} must be below the cloud size {n}", config.r)));
    }
    let mut state = TrainState::new(
        config,
        train_set.num_classes(Attribute::Task),
        train_set.num_classes(Attribute::Sensitive),
    )?;
    let mut history = TrainHistory::default();
    for step in 0..config.steps {
        let batch = state.next_batch(train_set.len(), config.batch_size);
        let row = state.train_step(train_set, &batch, config)?;
        if step % 100 == 0 {
            log::debug!("{} step {step}: {row:?}", config.kind);
        }
        history.rows.push(row);
        if config.eval_every > 0 && (step + 1) % config.eval_every == 0 {
            history.snapshots.push(state.snapshot(train_set, eval_set)?);
        }
    }
    Ok(TrainedRun {
        config: config.clone(),
        censor: state.censor,
        proxies: state.proxies,
        history,
    })
}

/// Trains a classifier on `attr` with Adam and batch sampling from `rng`.
pub fn train_classifier(
    net: &BackboneNet,
    data: &Dataset,
    attr: Attribute,
    steps: usize,
    batch_size: usize,
    lr: f64,
    rng: &mut impl Rng,
) -> Result<()> {
    if data.is_empty() {
        return Err(Error::invalid("cannot train a classifier on an empty dataset"));
    }
    let mut opt = adam(net.params(), lr)?;
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let batch = batch_size.min(data.len());
    for step in 0..steps {
        if order.is_empty() || cursor + batch > order.len() {
            order = (0..data.len()).collect();
            order.shuffle(rng);
            cursor = 0;
        }
        let idx = &order[cursor..cursor + batch];
        cursor += batch;
        let x = data.batch_tensor(idx, net.dtype(), &Device::Cpu)?;
        let y = data.label_tensor(idx, attr, &Device::Cpu)?;
        let loss = crate::objectives::cce(&net.classify(&x)?, &y)?;
        let v = scalar(&loss)?;
        if !v.is_finite() {
            return Err(Error::NonFinite {
                step,
                row: format!("classifier loss = {v}"),
            });
        }
        opt.backward_step(&loss)?;
    }
    Ok(())
}

const CHECKPOINT_FORMAT: &str = "cbns-checkpoint-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CheckpointHeader {
    format: String,
    config: TrainConfig,
    censor: CensorSpec,
    user: BackboneConfig,
    attacker: BackboneConfig,
}

impl TrainedRun {
    fn header(&self) -> CheckpointHeader {
        CheckpointHeader {
            format: CHECKPOINT_FORMAT.to_string(),
            config: self.config.clone(),
            censor: self.censor.spec(),
            user: self.proxies.user.config().clone(),
            attacker: self.proxies.attacker.config().clone(),
        }
    }

    fn all_params(censor: &CensorModel, proxies: &ProxyHeads) -> Vec<NamedVar> {
        let mut p = censor.params();
        p.extend(proxies.params());
        p
    }

    /// Writes censor and proxies to one archive.
    pub fn save(&self, path: &Path) -> Result<()> {
        let header = serde_json::to_string(&self.header())?;
        checkpoint::save(path, &header, &Self::all_params(&self.censor, &self.proxies))
    }

    /// Restores a run saved by [`TrainedRun::save`]; the history is empty.
    pub fn load(path: &Path) -> Result<TrainedRun> {
        let (header, tensors) = checkpoint::load(path)?;
        let header: CheckpointHeader = serde_json::from_str(&header)
            .map_err(|e| Error::integrity(path, format!("bad checkpoint header: {e}")))?;
        if header.format != CHECKPOINT_FORMAT {
            return Err(Error::integrity(path, format!("unsupported checkpoint format {:?}", header.format)));
        }
        let stream = RandomStream::new(header.config.seed);
        let censor = CensorModel::from_spec(&header.censor, DType::F32, &stream)?;
        let proxies = ProxyHeads::new(&header.user, &header.attacker, DType::F32, &stream)?;
        checkpoint::assign(&Self::all_params(&censor, &proxies), &tensors)
            .map_err(|e| Error::integrity(path, e.to_string()))?;
        Ok(TrainedRun {
            config: header.config,
            censor,
            proxies,
            history: TrainHistory::default(),
        })
    }
}

/// Whether the censor stage is trainable for this run, per stage.
pub fn trainable_counts(censor: &CensorModel) -> (usize, usize) {
    let sampler = match censor.sampler() {
        SamplerStage::Learned(_) => censor.sampler_params().len(),
        _ => 0,
    };
    let noise = match censor.noise() {
        NoiseStage::Learned(_) => censor.distorter_params().len(),
        _ => 0,
    };
    (sampler, noise)
}
