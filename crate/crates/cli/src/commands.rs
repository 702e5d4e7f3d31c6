use std::fmt;
use std::path::{Path, PathBuf};

use cbns_core::data::{load_dataset, load_manifest, load_modelnet_subset, save_dataset, synth_generate, Manifest, SynthConfig};
use cbns_core::evaluation::{
    evaluate_censor, median_by_config, offline_attack, pretrain_attacker, read_points_csv, summarize_by_kind,
    sweep_cells, tradeoff_svg, write_points_csv, EvalBudget, KindSummary, SweepCell, SweepFailure, SweepOptions,
};
use cbns_core::nets::checkpoint::file_sha256;
use cbns_core::objectives::write_history_csv;
use cbns_core::training::TrainedRun;
use cbns_core::{
    write_atomic, Attribute, Dataset, Error, ParetoReport, PipelineKind, RandomStream, Split, TradeoffPoint,
    TrainConfig,
};
use serde::Serialize;
use serde_json::{json, Value};

use crate::manifest::{write_json, Recorder};
use crate::{AttackArgs, BudgetArgs, CensorArgs, ConfigArgs, EvaluateArgs, ModelnetArgs, PremiseArgs, SweepArgs, SynthArgs, TrainArgs};

pub enum Failure {
    Usage(String),
    Core(Error),
    Failed(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    /// 2 usage, 3 input integrity, 4 non-finite numerics, 1 anything else.
    pub fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Core(e) => match e {
                Error::InvalidArgument(_) => 2,
                Error::Integrity { .. } | Error::Parse { .. } | Error::ZeroSpread | Error::Json(_) | Error::Csv(_) => 3,
                Error::Io(_) => 3,
                Error::NonFinite { .. } => 4,
                Error::Tensor(_) => 1,
            },
            Failure::Failed(_) => 1,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Failed(m) => f.write_str(m),
            Failure::Core(e) => write!(f, "{e}"),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn integrity(path: &Path, msg: impl fmt::Display) -> Failure {
    Failure::Core(Error::Integrity {
        path: path.to_path_buf(),
        msg: msg.to_string(),
    })
}

fn to_value<T: Serialize>(v: &T) -> Result<Value, Failure> {
    serde_json::to_value(v).map_err(|e| Failure::Core(e.into()))
}

/// Refuses to write into an input.
fn distinct(input: &Path, out: &Path) -> CmdResult {
    let same = match (input.canonicalize(), out.canonicalize()) {
        (Ok(a), Ok(b)) => a == b,
        _ => false,
    };
    if same {
        return Err(Failure::Usage(format!("--out {} would overwrite an input", out.display())));
    }
    Ok(())
}

fn save_splits(out: &Path, splits: &[&Dataset], seed: u64, provenance: Value, rec: &mut Recorder) -> CmdResult {
    let manifest = save_dataset(out, splits, Some(seed), Some(provenance))?;
    for entry in manifest.splits.values() {
        rec.output(&out.join(&entry.file));
    }
    rec.output(&out.join(cbns_core::data::MANIFEST));
    Ok(())
}

pub fn prepare_synth(a: &SynthArgs) -> CmdResult {
    let mut rec = Recorder::start("prepare-data synth");
    let config = SynthConfig {
        task_classes: a.classes_t,
        sensitive_classes: a.classes_s,
        n: a.output.n.unwrap_or(SynthConfig::default().n),
        overlap: a.overlap,
        noise_floor: a.noise_floor,
        samples_per_pair: a.samples_per_pair,
        seed: a.output.seed,
        train_fraction: a.train_fraction,
    };
    let (train, test) = synth_generate(&config)?;
    let provenance = json!({ "source": "synth", "config": config, "manifest": crate::manifest::RUN_MANIFEST });
    save_splits(&a.output.out, &[&train, &test], a.output.seed, provenance, &mut rec)?;
    rec.finish(&a.output.out, to_value(&config)?, Some(a.output.seed))?;
    Ok(())
}

pub fn prepare_modelnet(a: &ModelnetArgs) -> CmdResult {
    let mut rec = Recorder::start("prepare-data modelnet");
    let n = a.output.n.unwrap_or(cbns_core::data::DEFAULT_POINTS);
    distinct(&a.root, &a.output.out)?;
    let (train, test) = load_modelnet_subset(&a.root, &a.classes, n, a.output.seed)?;
    rec.input_tree(&a.root)?;
    let config = json!({ "root": a.root, "classes": a.classes, "n": n });
    let provenance = json!({ "source": "modelnet", "config": config, "manifest": crate::manifest::RUN_MANIFEST });
    save_splits(&a.output.out, &[&train, &test], a.output.seed, provenance, &mut rec)?;
    rec.finish(&a.output.out, config, Some(a.output.seed))?;
    Ok(())
}

/// Merges the JSON config file and flag overrides onto the defaults and
/// reports every problem at once.
pub fn resolve_config(args: &ConfigArgs, kind: Option<PipelineKind>, seed: Option<u64>, n: Option<usize>) -> Result<TrainConfig, Failure> {
    let defaults = to_value(&TrainConfig::default())?;
    let mut merged = defaults.clone();
    let mut problems = Vec::new();
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path).map_err(|e| integrity(path, format!("cannot read config: {e}")))?;
        let user: Value = serde_json::from_str(&text).map_err(|e| integrity(path, format!("malformed config: {e}")))?;
        let Value::Object(map) = user else {
            return Err(integrity(path, "config must be a JSON object"));
        };
        for (key, value) in map {
            if defaults.get(&key).is_none() {
                problems.push(format!("unknown config key {key:?}"));
                continue;
            }
            let mut probe = defaults.clone();
            probe[&key] = value.clone();
            match serde_json::from_value::<TrainConfig>(probe) {
                Ok(_) => merged[&key] = value,
                Err(e) => problems.push(format!("config key {key:?}: {e}")),
            }
        }
    }
    let mut config: TrainConfig = serde_json::from_value(merged).map_err(|e| Failure::Core(e.into()))?;
    if let Some(k) = kind {
        config.kind = k;
    }
    if let Some(s) = seed {
        config.seed = s;
    }
    if let Some(v) = args.lambda {
        config.lambda = v;
    }
    if let Some(v) = args.alpha {
        config.alpha = v;
    }
    if let Some(v) = args.sigma {
        config.sigma = v;
    }
    if let Some(v) = args.r {
        config.r = v;
    }
    if let Some(v) = args.steps {
        config.steps = v;
    }
    problems.extend(config.problems());
    if let Some(n) = n {
        if config.kind != PipelineKind::NoPrivacy && config.r >= n {
            problems.push(format!("r = {} must be below the cloud size {n}", config.r));
        }
    }
    if problems.is_empty() {
        Ok(config)
    } else {
        let list: Vec<String> = problems.iter().map(|p| format!("  - {p}")).collect();
        Err(Failure::Usage(format!("invalid training config:\n{}", list.join("\n"))))
    }
}

fn budget(b: &BudgetArgs) -> EvalBudget {
    EvalBudget {
        pretrain_steps: b.pretrain_steps,
        finetune_steps: b.finetune_steps,
        utility_steps: b.utility_steps,
        batch_size: b.eval_batch_size,
        lr: b.eval_lr,
    }
}

fn check_budget(b: &EvalBudget) -> CmdResult {
    if b.batch_size == 0 || !(b.lr > 0.0 && b.lr.is_finite()) {
        return Err(Failure::Usage(format!("evaluation batch size and learning rate must be positive: {b:?}")));
    }
    Ok(())
}

fn both_splits(dir: &Path) -> Result<(Manifest, Dataset, Dataset), Failure> {
    let manifest = load_manifest(dir)?;
    Ok((manifest, load_dataset(dir, Split::Train)?, load_dataset(dir, Split::Test)?))
}

fn load_run(path: &Path) -> Result<TrainedRun, Failure> {
    if !path.is_file() {
        return Err(integrity(path, "checkpoint not found"));
    }
    Ok(TrainedRun::load(path)?)
}

pub const CHECKPOINT: &str = "checkpoint.safetensors";
pub const HISTORY: &str = "history.csv";

pub fn train(a: &TrainArgs) -> CmdResult {
    let mut rec = Recorder::start("train");
    let manifest = load_manifest(&a.data)?;
    let config = resolve_config(&a.config, a.kind, a.seed, Some(manifest.n))?;
    if let Some(c) = &a.config.config {
        rec.input(c)?;
    }
    rec.input(&a.data)?;
    distinct(&a.data, &a.out)?;
    let train_set = load_dataset(&a.data, Split::Train)?;
    let eval_set = if config.eval_every > 0 && manifest.splits.contains_key(&Split::Test) {
        Some(load_dataset(&a.data, Split::Test)?)
    } else {
        None
    };
    log::info!("training {} for {} steps on {} clouds", config.kind, config.steps, train_set.len());
    let run = cbns_core::training::train(&config, &train_set, eval_set.as_ref())?;

    std::fs::create_dir_all(&a.out).map_err(Error::from)?;
    let ckpt = a.out.join(CHECKPOINT);
    run.save(&ckpt)?;
    rec.output(&ckpt);
    let mut csv = Vec::new();
    write_history_csv(&run.history.rows, &mut csv)?;
    let history = a.out.join(HISTORY);
    write_atomic(&history, &csv)?;
    rec.output(&history);
    if !run.history.snapshots.is_empty() {
        let path = a.out.join("snapshots.json");
        write_json(&path, &json!({ "snapshots": run.history.snapshots }))?;
        rec.output(&path);
    }
    let path = a.out.join("config.json");
    write_json(&path, &config)?;
    rec.output(&path);
    rec.finish(&a.out, to_value(&config)?, Some(config.seed))?;
    Ok(())
}

fn split_seed(seed: u64, split: Split) -> u64 {
    RandomStream::new(seed).derive(&format!("censor-{}", split.name()), 0).seed()
}

pub fn censor(a: &CensorArgs) -> CmdResult {
    let mut rec = Recorder::start("censor");
    distinct(&a.data, &a.out)?;
    let run = load_run(&a.checkpoint)?;
    rec.input(&a.checkpoint)?;
    rec.input(&a.data)?;
    let manifest = load_manifest(&a.data)?;
    let mut released = Vec::new();
    for &split in manifest.splits.keys() {
        let data = load_dataset(&a.data, split)?;
        released.push(run.censor.censor_dataset(&data, split_seed(a.seed, split))?);
    }
    let provenance = json!({
        "source": "censor",
        "checkpoint_sha256": file_sha256(&a.checkpoint)?,
        "kind": run.config.kind,
        "manifest": crate::manifest::RUN_MANIFEST,
    });
    let refs: Vec<&Dataset> = released.iter().collect();
    save_splits(&a.out, &refs, a.seed, provenance, &mut rec)?;
    rec.finish(&a.out, json!({ "checkpoint": a.checkpoint, "kind": run.config.kind }), Some(a.seed))?;
    Ok(())
}

#[derive(Serialize)]
struct AttackReport {
    privacy: f64,
    chance: f64,
    kind: PipelineKind,
    seed: u64,
    budget: EvalBudget,
}

pub fn attack(a: &AttackArgs) -> CmdResult {
    let mut rec = Recorder::start("attack");
    let budget = budget(&a.budget);
    check_budget(&budget)?;
    let run = load_run(&a.checkpoint)?;
    rec.input(&a.checkpoint)?;
    rec.input(&a.data)?;
    let (_, train, test) = both_splits(&a.data)?;
    let privacy = offline_attack(&run.censor, &train, &test, &budget, &RandomStream::new(a.seed), None)?;
    let report = AttackReport {
        privacy,
        chance: 1.0 / train.num_classes(Attribute::Sensitive) as f64,
        kind: run.config.kind,
        seed: a.seed,
        budget: budget.clone(),
    };
    log::info!("offline attack accuracy {privacy:.4}");
    let path = a.out.join("privacy.json");
    write_json(&path, &report)?;
    rec.output(&path);
    rec.finish(&a.out, to_value(&budget)?, Some(a.seed))?;
    Ok(())
}

/// The grid position a trained run corresponds to.
fn cell_of(config: &TrainConfig) -> SweepCell {
    let (lambda, sigma) = match config.kind {
        PipelineKind::NoPrivacy => (None, None),
        k if k.fixed_noise() => (None, Some(config.sigma)),
        _ => (Some(config.lambda), None),
    };
    SweepCell {
        kind: config.kind,
        lambda,
        sigma,
        seed: config.seed,
    }
}

fn write_points(path: &Path, points: &[TradeoffPoint], rec: &mut Recorder) -> CmdResult {
    let mut csv = Vec::new();
    write_points_csv(points, &mut csv)?;
    write_atomic(path, &csv)?;
    rec.output(path);
    Ok(())
}

fn write_front(out: &Path, points: Vec<TradeoffPoint>, plot: bool, rec: &mut Recorder) -> Result<ParetoReport, Failure> {
    let report = ParetoReport::new(points)?;
    let path = out.join("pareto.json");
    write_json(&path, &report)?;
    rec.output(&path);
    if plot {
        let path = out.join("tradeoff.svg");
        write_atomic(&path, tradeoff_svg(&report.points).as_bytes())?;
        rec.output(&path);
    }
    Ok(report)
}

pub fn evaluate(a: &EvaluateArgs) -> CmdResult {
    let mut rec = Recorder::start("evaluate");
    let points = match (&a.points, &a.data) {
        (Some(csv), _) => {
            let file = std::fs::File::open(csv).map_err(|e| integrity(csv, format!("cannot read points: {e}")))?;
            rec.input(csv)?;
            read_points_csv(file).map_err(|e| integrity(csv, e))?
        }
        (None, Some(data)) => {
            let budget = budget(&a.budget);
            check_budget(&budget)?;
            let runs = a.checkpoint.iter().map(|p| load_run(p)).collect::<Result<Vec<_>, _>>()?;
            for p in &a.checkpoint {
                rec.input(p)?;
            }
            rec.input(data)?;
            let (_, train, test) = both_splits(data)?;
            let stream = RandomStream::new(a.seed);
            let attacker = pretrain_attacker(&train, &budget, &stream)?;
            let mut points = Vec::new();
            for run in &runs {
                let cell = cell_of(&run.config);
                let (privacy, utility) =
                    evaluate_censor(&run.censor, &train, &test, &budget, &stream.derive("evaluate", 0), &attacker)?;
                log::info!("{}: privacy {privacy:.4} utility {utility:.4}", cell.config_id());
                points.push(TradeoffPoint {
                    config_id: cell.config_id(),
                    seed: a.seed,
                    lambda: cell.lambda,
                    sigma: cell.sigma,
                    kind: cell.kind,
                    privacy,
                    utility,
                });
            }
            write_points(&a.out.join("points.csv"), &points, &mut rec)?;
            points
        }
        (None, None) => return Err(Failure::Usage("give --points or --checkpoint with --data".into())),
    };
    if points.is_empty() {
        return Err(Failure::Usage("no trade-off points to evaluate".into()));
    }
    let report = write_front(&a.out, points, a.plot, &mut rec)?;
    println!("nhv {:.6} front {}", report.nhv, report.front.len());
    rec.finish(&a.out, json!({ "plot": a.plot }), Some(a.seed))?;
    Ok(())
}

#[derive(Serialize)]
struct SweepSummary {
    kinds: Vec<KindSummary>,
    failures: Vec<SweepFailure>,
}

pub fn sweep(a: &SweepArgs) -> CmdResult {
    let mut rec = Recorder::start("sweep");
    let budget = budget(&a.budget);
    check_budget(&budget)?;
    if a.jobs == 0 {
        return Err(Failure::Usage("--jobs must be >= 1".into()));
    }
    let manifest = load_manifest(&a.data)?;
    let base = resolve_config(&a.config, None, None, Some(manifest.n))?;
    let cells = sweep_cells(&a.kinds, &a.lambdas, &a.sigmas, &a.seeds)?;
    for cell in &cells {
        let problems = cell.config(&base).problems();
        if !problems.is_empty() {
            return Err(Failure::Usage(format!("cell {}: {}", cell.file_stem(), problems.join("; "))));
        }
    }
    if let Some(c) = &a.config.config {
        rec.input(c)?;
    }
    rec.input(&a.data)?;
    distinct(&a.data, &a.out)?;
    let (_, train, test) = both_splits(&a.data)?;
    let options = SweepOptions {
        budget: budget.clone(),
        cache_dir: Some(a.out.join("cells")),
        jobs: a.jobs,
    };
    let outcome = cbns_core::evaluation::sweep(&base, &cells, &train, &test, &options)?;
    log::info!(
        "{} cells: {} reused, {} failed",
        cells.len(),
        outcome.reused,
        outcome.failures.len()
    );
    write_points(&a.out.join("points.csv"), &outcome.points, &mut rec)?;
    let summary = SweepSummary {
        kinds: summarize_by_kind(&outcome.points)?,
        failures: outcome.failures.clone(),
    };
    for k in &summary.kinds {
        println!("{:<11} median nhv {:.4}  median max privacy {:.4}", k.kind.name(), k.median_nhv, k.median_max_privacy);
    }
    let path = a.out.join("summary.json");
    write_json(&path, &summary)?;
    rec.output(&path);
    if !outcome.points.is_empty() {
        write_front(&a.out, median_by_config(&outcome.points), a.plot, &mut rec)?;
    }
    let config = json!({
        "base": base,
        "budget": budget,
        "kinds": a.kinds,
        "lambdas": a.lambdas,
        "sigmas": a.sigmas,
        "seeds": a.seeds,
        "jobs": a.jobs,
    });
    rec.finish(&a.out, config, None)?;
    if outcome.failures.is_empty() {
        Ok(())
    } else {
        Err(Failure::Failed(format!("{} sweep cells failed; see summary.json", outcome.failures.len())))
    }
}

pub fn premise(a: &PremiseArgs) -> CmdResult {
    let mut rec = Recorder::start("premise");
    if a.top_k == 0 {
        return Err(Failure::Usage("--top-k must be >= 1".into()));
    }
    rec.input(&a.data)?;
    let (_, train, test) = both_splits(&a.data)?;
    let report = cbns_core::evaluation::premise(&train, &test, a.steps, a.top_k, &RandomStream::new(a.seed))?;
    println!("critical-set miou {:.4}", report.miou);
    let path: PathBuf = a.out.join("premise.json");
    write_json(&path, &report)?;
    rec.output(&path);
    rec.finish(&a.out, json!({ "steps": a.steps, "top_k": a.top_k }), Some(a.seed))?;
    Ok(())
}
