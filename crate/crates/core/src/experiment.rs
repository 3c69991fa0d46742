//! Declarative sweeps over the engines.
//!
//! A spec is a flat `key = value` file. Each cell of the cross product of
//! sweep values and seeds is an independent run; cells execute on a bounded
//! worker pool and every random stream is keyed by the cell's own seed, so
//! the artifacts do not depend on the worker count.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, Mutex, OnceLock};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{generate_synthetic, load_sparse, partition, Dataset, Example};
use crate::error::{config, invalid, Error, Result};
use crate::loss::{FeasibleSet, LossKind, LossModel, StepsizeSchedule};
use crate::metrics::{empirical_regret, theorem2_bound, BoundInputs, ComparatorCache, RegretCase};
use crate::offline::{run_offline, OfflineRunConfig, RegularizeAt};
use crate::online::{run_online, OnlineRunConfig, RunRecord};
use crate::plot::{line_chart, Series};
use crate::privacy::{audit_sensitivity, AuditConfig, AuditReport, PrivacyParams};
use crate::rng::mix;
use crate::topology::{CommSchedule, ScheduleMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    PrivacySweep,
    NodeSweep,
    BatchSweep,
    SvmAccuracyTable,
    BoundsCompare,
    Audits,
}

impl ExperimentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::PrivacySweep => "privacy_sweep",
            Self::NodeSweep => "node_sweep",
            Self::BatchSweep => "batch_sweep",
            Self::SvmAccuracyTable => "svm_accuracy_table",
            Self::BoundsCompare => "bounds_compare",
            Self::Audits => "audits",
        }
    }

    /// Name of the parameter the `sweep` key ranges over.
    pub fn swept(&self) -> &'static str {
        match self {
            Self::PrivacySweep | Self::BoundsCompare => "epsilon",
            Self::NodeSweep => "learners",
            Self::BatchSweep => "batch",
            Self::SvmAccuracyTable => "learners,epsilon",
            Self::Audits => "batch",
        }
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "privacy_sweep" => Self::PrivacySweep,
            "node_sweep" => Self::NodeSweep,
            "batch_sweep" => Self::BatchSweep,
            "svm_accuracy_table" => Self::SvmAccuracyTable,
            "bounds_compare" => Self::BoundsCompare,
            "audits" => Self::Audits,
            _ => return Err(config("kind", format!("unknown experiment kind `{s}`"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "source")]
pub enum DataSpec {
    Synthetic { dim: usize, count: usize, margin: f64 },
    Sparse { path: PathBuf, dim_cap: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    Online,
    Offline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepsizeChoice {
    Auto,
    Convex,
    StronglyConvex,
}

/// Parameters shared by all cells before the sweep overrides them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseConfig {
    pub data: DataSpec,
    /// Seed of the data generator and of the shard shuffle.
    pub data_seed: u64,
    /// Draw fresh data and shards for every seed.
    pub resample_data: bool,
    pub holdout: f64,
    pub learners: usize,
    /// Rounds per learner; the shard length when absent.
    pub rounds: Option<usize>,
    pub loss: LossKind,
    /// Strength of the `(λ/2)‖w‖²` term folded into the loss.
    pub lambda: f64,
    pub radius: f64,
    /// `f64::INFINITY` runs without noise.
    pub epsilon: f64,
    pub stepsize: StepsizeChoice,
    pub mode: ScheduleMode,
    pub eta: f64,
    /// Connectivity window; the number of learners when absent.
    pub window: Option<usize>,
    pub engine: Engine,
    pub batch: usize,
    pub phi_reg: f64,
    pub regularize_at: RegularizeAt,
    pub excess_risk: bool,
}

impl Default for BaseConfig {
    fn default() -> Self {
        Self {
            data: DataSpec::Synthetic {
                dim: 10,
                count: 100_000,
                margin: 0.0,
            },
            data_seed: 1,
            resample_data: false,
            holdout: 0.0,
            learners: 64,
            rounds: None,
            loss: LossKind::Hinge,
            lambda: 0.0,
            radius: 1.0,
            epsilon: f64::INFINITY,
            stepsize: StepsizeChoice::Auto,
            mode: ScheduleMode::RandomPairwiseGossip,
            eta: 0.1,
            window: None,
            engine: Engine::Online,
            batch: 1,
            phi_reg: 0.0,
            regularize_at: RegularizeAt::Local,
            excess_risk: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub seeds: usize,
    /// Master seed; cell `k` uses `mix(seed, k)`.
    pub seed: u64,
    pub out_dir: PathBuf,
    pub workers: usize,
    pub base: BaseConfig,
    /// Values of the swept parameter (ε, learners or batch size).
    pub sweep: Vec<f64>,
    /// Node counts of the accuracy table.
    pub nodes: Vec<usize>,
    /// Privacy levels of the accuracy table.
    pub epsilons: Vec<f64>,
    pub per_run_csv: bool,
    pub trajectories: bool,
    /// Trials per audit.
    pub audit_trials: usize,
}

fn parse_num<T: FromStr>(field: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| config(field, format!("cannot parse `{v}`")))
}

fn parse_bool(field: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(config(field, format!("expected true or false, got `{v}`"))),
    }
}

/// `inf`, `none` and `non-private` mean no noise.
pub fn parse_epsilon(field: &str, v: &str) -> Result<f64> {
    match v {
        "inf" | "infinity" | "none" | "non-private" | "nonprivate" => Ok(f64::INFINITY),
        _ => {
            let e: f64 = parse_num(field, v)?;
            if e > 0.0 {
                Ok(e)
            } else {
                Err(config(field, format!("epsilon must be > 0, got {e}")))
            }
        }
    }
}

fn parse_list<T>(field: &str, v: &str, item: impl Fn(&str, &str) -> Result<T>) -> Result<Vec<T>> {
    let out: Vec<T> = v
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| item(field, s))
        .collect::<Result<_>>()?;
    if out.is_empty() {
        return Err(config(field, "list is empty"));
    }
    Ok(out)
}

fn epsilon_label(e: f64) -> String {
    if e.is_infinite() {
        "non-private".into()
    } else {
        format!("{e}")
    }
}

impl ExperimentSpec {
    pub fn new(kind: ExperimentKind, out_dir: impl Into<PathBuf>) -> Self {
        let sweep = match kind {
            ExperimentKind::PrivacySweep | ExperimentKind::BoundsCompare => {
                vec![f64::INFINITY, 1.0, 0.1, 0.01]
            }
            ExperimentKind::NodeSweep => vec![1.0, 4.0, 16.0, 64.0],
            ExperimentKind::BatchSweep => vec![1.0, 5.0],
            ExperimentKind::Audits => vec![1.0, 5.0],
            ExperimentKind::SvmAccuracyTable => vec![],
        };
        Self {
            kind,
            seeds: 20,
            seed: 1,
            out_dir: out_dir.into(),
            workers: 1,
            base: BaseConfig::default(),
            sweep,
            nodes: vec![1, 4, 64],
            epsilons: vec![f64::INFINITY, 1.0, 0.1, 0.01],
            per_run_csv: false,
            trajectories: false,
            audit_trials: 1000,
        }
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path.as_ref())?;
        let mut spec = Self::parse(&text)?;
        if spec.out_dir.is_relative() && spec.out_dir.as_os_str().is_empty() {
            spec.out_dir = PathBuf::from("results");
        }
        Ok(spec)
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut kv: BTreeMap<String, String> = BTreeMap::new();
        for (k, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(Error::Parse {
                line: k + 1,
                message: format!("expected key = value, got `{line}`"),
            })?;
            let key = key.trim().to_string();
            if kv.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(config(&key, "given twice"));
            }
        }
        let kind: ExperimentKind = kv
            .remove("kind")
            .ok_or_else(|| config("kind", "missing"))?
            .parse()?;
        let mut spec = Self::new(kind, "results");
        let mut synth = (10usize, 100_000usize, 0.0f64);
        let mut sparse: Option<PathBuf> = None;
        let mut dim_cap = 1000usize;
        let b = &mut spec.base;
        for (key, v) in &kv {
            let f = key.as_str();
            match f {
                "seeds" => spec.seeds = parse_num(f, v)?,
                "seed" => spec.seed = parse_num(f, v)?,
                "out" | "out_dir" => spec.out_dir = PathBuf::from(v),
                "workers" => spec.workers = parse_num(f, v)?,
                "per_run_csv" => spec.per_run_csv = parse_bool(f, v)?,
                "trajectories" => spec.trajectories = parse_bool(f, v)?,
                "audit_trials" => spec.audit_trials = parse_num(f, v)?,
                "sweep" => {
                    spec.sweep = if matches!(kind, ExperimentKind::PrivacySweep | ExperimentKind::BoundsCompare) {
                        parse_list(f, v, parse_epsilon)?
                    } else {
                        parse_list(f, v, parse_num::<f64>)?
                    }
                }
                "nodes" => spec.nodes = parse_list(f, v, parse_num)?,
                "epsilons" => spec.epsilons = parse_list(f, v, parse_epsilon)?,
                "data" => match v.as_str() {
                    "synthetic" => sparse = None,
                    path => sparse = Some(PathBuf::from(path)),
                },
                "dim" => synth.0 = parse_num(f, v)?,
                "count" => synth.1 = parse_num(f, v)?,
                "margin" => synth.2 = parse_num(f, v)?,
                "dim_cap" => dim_cap = parse_num(f, v)?,
                "data_seed" => b.data_seed = parse_num(f, v)?,
                "resample_data" => b.resample_data = parse_bool(f, v)?,
                "holdout" => b.holdout = parse_num(f, v)?,
                "learners" => b.learners = parse_num(f, v)?,
                "rounds" => b.rounds = Some(parse_num(f, v)?),
                "loss" => b.loss = v.parse().map_err(|_| config(f, format!("unknown loss `{v}`")))?,
                "lambda" => b.lambda = parse_num(f, v)?,
                "radius" => b.radius = parse_num(f, v)?,
                "epsilon" => b.epsilon = parse_epsilon(f, v)?,
                "stepsize" => {
                    b.stepsize = match v.as_str() {
                        "auto" => StepsizeChoice::Auto,
                        "convex" => StepsizeChoice::Convex,
                        "strongly_convex" => StepsizeChoice::StronglyConvex,
                        _ => return Err(config(f, format!("unknown stepsize `{v}`"))),
                    }
                }
                "mode" => b.mode = v.parse().map_err(|_| config(f, format!("unknown mode `{v}`")))?,
                "eta" => b.eta = parse_num(f, v)?,
                "window" => b.window = Some(parse_num(f, v)?),
                "engine" => {
                    b.engine = match v.as_str() {
                        "online" => Engine::Online,
                        "offline" => Engine::Offline,
                        _ => return Err(config(f, format!("unknown engine `{v}`"))),
                    }
                }
                "batch" => b.batch = parse_num(f, v)?,
                "phi_reg" => b.phi_reg = parse_num(f, v)?,
                "regularize_at" => {
                    b.regularize_at = v.parse().map_err(|_| config(f, format!("unknown point `{v}`")))?
                }
                "excess_risk" => b.excess_risk = parse_bool(f, v)?,
                _ => return Err(config(f, "unknown key")),
            }
        }
        b.data = match sparse {
            Some(path) => DataSpec::Sparse { path, dim_cap },
            None => DataSpec::Synthetic {
                dim: synth.0,
                count: synth.1,
                margin: synth.2,
            },
        };
        if matches!(kind, ExperimentKind::BatchSweep | ExperimentKind::SvmAccuracyTable) {
            b.engine = Engine::Offline;
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds < 1 {
            return Err(config("seeds", "must be >= 1"));
        }
        if self.workers < 1 {
            return Err(config("workers", "must be >= 1"));
        }
        match self.kind {
            ExperimentKind::SvmAccuracyTable => {
                if self.nodes.is_empty() || self.nodes.contains(&0) {
                    return Err(config("nodes", "must be a nonempty list of positive counts"));
                }
                if self.epsilons.is_empty() {
                    return Err(config("epsilons", "list is empty"));
                }
            }
            ExperimentKind::PrivacySweep | ExperimentKind::BoundsCompare => {
                if self.sweep.is_empty() || self.sweep.iter().any(|e| !(*e > 0.0)) {
                    return Err(config("sweep", "needs positive epsilon values"));
                }
            }
            _ => {
                if self.sweep.is_empty() || self.sweep.iter().any(|v| !(*v >= 1.0 && v.fract() == 0.0)) {
                    return Err(config("sweep", "needs positive integer values"));
                }
            }
        }
        let b = &self.base;
        if b.learners < 1 {
            return Err(config("learners", "must be >= 1"));
        }
        if b.batch < 1 {
            return Err(config("batch", "must be >= 1"));
        }
        if !(0.0..1.0).contains(&b.holdout) {
            return Err(config("holdout", "must lie in [0, 1)"));
        }
        if !(b.radius > 0.0) {
            return Err(config("radius", "must be > 0"));
        }
        if !(b.lambda >= 0.0) {
            return Err(config("lambda", "must be >= 0"));
        }
        if !(b.phi_reg >= 0.0) {
            return Err(config("phi_reg", "must be >= 0"));
        }
        if !(b.eta > 0.0 && b.eta < 1.0) {
            return Err(config("eta", "must lie in (0, 1)"));
        }
        if b.stepsize == StepsizeChoice::StronglyConvex && b.lambda == 0.0 {
            return Err(config("stepsize", "strongly_convex needs lambda > 0"));
        }
        if let DataSpec::Synthetic { dim, count, margin } = b.data {
            if dim == 0 || count == 0 {
                return Err(config("dim", "dimension and count must be >= 1"));
            }
            if !(0.0..1.0).contains(&margin) {
                return Err(config("margin", "must lie in [0, 1)"));
            }
        }
        if self.kind == ExperimentKind::SvmAccuracyTable && b.loss != LossKind::Hinge {
            return Err(config("loss", "the accuracy table trains a hinge-loss SVM"));
        }
        Ok(())
    }

    /// Canonical serialization used for hashing.
    fn canonical(&self) -> String {
        let mut copy = self.clone();
        copy.workers = 1;
        copy.out_dir = PathBuf::new();
        serde_json::to_string(&copy).unwrap_or_default()
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut s = String::with_capacity(64);
    for b in digest {
        let _ = write!(s, "{b:02x}");
    }
    s
}

/// Resolved parameters of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellConfig {
    pub value_index: usize,
    pub seed_index: usize,
    pub learners: usize,
    pub epsilon: f64,
    pub batch: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellEntry {
    pub label: String,
    pub seed_index: usize,
    pub seed: u64,
    pub config_hash: String,
    pub status: String,
    pub message: Option<String>,
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputEntry {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: ExperimentKind,
    pub spec_hash: String,
    pub cells: Vec<CellEntry>,
    pub outputs: Vec<OutputEntry>,
    /// Every cell finished and passed its in-run checks.
    pub all_ok: bool,
}

/// Seed-aggregated results of one sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub label: String,
    pub learners: usize,
    pub epsilon: f64,
    pub batch: usize,
    pub runs: usize,
    pub failed: usize,
    pub mean_final_regret: f64,
    pub std_final_regret: f64,
    pub mean_final_normalized: f64,
    pub std_final_normalized: f64,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub mean_excess_risk: f64,
    pub bound: f64,
    /// Seed mean of `R_D(t)/t` per round.
    pub curve: Vec<f64>,
    pub curve_std: Vec<f64>,
}

/// Outcome of one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub final_regret: f64,
    pub final_normalized: f64,
    pub normalized: Vec<f64>,
    pub accuracy: f64,
    pub excess_risk: f64,
    pub violations: Vec<String>,
    pub max_noise_ratio: f64,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

type Split = (Vec<Vec<Example>>, Vec<Example>);

struct Prepared {
    dataset: Option<Arc<Dataset>>,
    /// Shards per learner count when the data is shared by all seeds.
    splits: Mutex<BTreeMap<usize, Arc<OnceLock<Result<Split>>>>>,
    cache: ComparatorCache,
}

impl Prepared {
    fn shared_split(&self, base: &BaseConfig, dataset: &Dataset, learners: usize) -> Result<Arc<OnceLock<Result<Split>>>> {
        let slot = {
            let mut map = self.splits.lock().unwrap_or_else(|e| e.into_inner());
            map.entry(learners).or_default().clone()
        };
        slot.get_or_init(|| shards_for(base, dataset, learners, base.data_seed));
        Ok(slot)
    }
}

fn load_dataset(spec: &DataSpec, seed: u64) -> Result<Dataset> {
    match spec {
        DataSpec::Synthetic { dim, count, margin } => generate_synthetic(*dim, *count, *margin, seed),
        DataSpec::Sparse { path, dim_cap } => load_sparse(path, *dim_cap),
    }
}

/// Splits `dataset` and builds the streams and held-out set for one cell.
fn shards_for(
    base: &BaseConfig,
    dataset: &Dataset,
    learners: usize,
    seed: u64,
) -> Result<(Vec<Vec<Example>>, Vec<Example>)> {
    let plan = partition(dataset, learners, base.holdout, seed)?;
    let s = plan.materialize(dataset);
    Ok((s.train, s.holdout))
}

fn build_loss(base: &BaseConfig) -> Result<(LossModel, FeasibleSet)> {
    let set = FeasibleSet::new(base.radius)?;
    let mut loss = LossModel::new(base.loss);
    if base.lambda > 0.0 {
        loss = loss.regularized(base.lambda, &set)?;
    }
    Ok((loss, set))
}

fn build_stepsize(base: &BaseConfig, loss: &LossModel) -> Result<StepsizeSchedule> {
    Ok(match base.stepsize {
        StepsizeChoice::Auto => StepsizeSchedule::for_loss(loss),
        StepsizeChoice::Convex => StepsizeSchedule::Convex,
        StepsizeChoice::StronglyConvex => StepsizeSchedule::strongly_convex(base.lambda)?,
    })
}

fn schedule_for(base: &BaseConfig, m: usize, seed: u64) -> Result<CommSchedule> {
    let mode = if m == 1 { ScheduleMode::FixedComplete } else { base.mode };
    let eta = if m == 1 { base.eta.min(0.5) } else { base.eta };
    CommSchedule::new(mode, m, eta, base.window.unwrap_or(m).max(1), mix(seed, 0x7070))
}

fn noise_checks(record: &RunRecord, violations: &mut Vec<String>) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..record.learners {
        let scales: Vec<(usize, f64)> = record
            .noise
            .iter()
            .filter(|n| n.learner == i && n.round >= 1)
            .map(|n| (n.round, n.scale))
            .collect();
        for w in scales.windows(2) {
            if !(w[1].1 < w[0].1) {
                violations.push(format!(
                    "noise scale of learner {i} did not decrease from round {} to {}",
                    w[0].0, w[1].0
                ));
                return worst;
            }
            worst = worst.max(w[1].1 / w[0].1);
        }
    }
    worst
}

fn run_cell(
    spec: &ExperimentSpec,
    prepared: &Prepared,
    cell: &CellConfig,
    run_dir: Option<&Path>,
    label: &str,
) -> Result<(CellResult, Vec<String>)> {
    let base = &spec.base;
    let owned_data;
    let owned_split: Split;
    let shared;
    let (dataset, streams, holdout): (&Dataset, &[Vec<Example>], &[Example]) = match &prepared.dataset {
        Some(d) => {
            shared = prepared.shared_split(base, d, cell.learners)?;
            match shared.get() {
                Some(Ok((train, hold))) => (d, train, hold),
                Some(Err(e)) => return Err(invalid(e.to_string())),
                None => return Err(invalid("shard cache was not filled")),
            }
        }
        None => {
            owned_data = load_dataset(&base.data, mix(base.data_seed, cell.seed))?;
            owned_split = shards_for(base, &owned_data, cell.learners, mix(base.data_seed ^ 0x5eed, cell.seed))?;
            (&owned_data, &owned_split.0, &owned_split.1)
        }
    };
    let shard = streams[0].len();
    let (loss, set) = build_loss(base)?;
    let stepsize = build_stepsize(base, &loss)?;
    let schedule = schedule_for(base, cell.learners, cell.seed)?;
    let privacy = if cell.epsilon.is_infinite() {
        PrivacyParams::non_private()
    } else {
        PrivacyParams::private(cell.epsilon)?
    };
    let mut rounds = base.rounds.unwrap_or(shard);
    if rounds > shard {
        return Err(Error::RunTruncated {
            last_complete_round: shard,
            reason: format!("{rounds} rounds requested, shards hold {shard} examples"),
        });
    }
    if base.engine == Engine::Offline {
        rounds -= rounds % cell.batch;
    }
    let mut online = OnlineRunConfig::new(rounds, dataset.dim, loss, schedule, privacy, stepsize, cell.seed);
    online.set = set;
    let (record, accuracy_value, excess) = match base.engine {
        Engine::Online => {
            let rec = run_online(&online, streams)?;
            let acc = if holdout.is_empty() {
                f64::NAN
            } else {
                crate::metrics::accuracy(&rec.final_states[rec.reference].w, holdout)?
            };
            (rec, acc, f64::NAN)
        }
        Engine::Offline => {
            let mut cfg = OfflineRunConfig::new(online.clone(), cell.batch, base.phi_reg);
            cfg.regularize_at = base.regularize_at;
            cfg.excess_risk = base.excess_risk;
            let eval: &[Example] = if holdout.is_empty() { &streams[0] } else { holdout };
            let (rec, est) = run_offline(&cfg, streams, eval)?;
            let acc = if holdout.is_empty() { f64::NAN } else { est.accuracy };
            (rec, acc, est.gap)
        }
    };

    let mut violations = Vec::new();
    if record.lipschitz_violations > 0 {
        violations.push(format!(
            "{} subgradients inside the feasible set exceeded L = {}",
            record.lipschitz_violations, online.loss.lipschitz
        ));
    }
    if record.max_param_norm > set.radius * (1.0 + 1e-12) + 1e-12 {
        violations.push(format!("parameter norm {} left the feasible set", record.max_param_norm));
    }
    let max_noise_ratio = noise_checks(&record, &mut violations);

    let needs_regret = spec.kind != ExperimentKind::SvmAccuracyTable;
    let report = if needs_regret {
        Some(empirical_regret(&record, streams, &online.loss, &set, Some(&prepared.cache))?)
    } else {
        None
    };
    let mut outputs = Vec::new();
    if let Some(dir) = run_dir {
        if spec.per_run_csv {
            let name = format!("runs/{label}_seed{}.csv", cell.seed_index);
            write_run_csv(&dir.join(&name), &record, report.as_ref().map(|r| r.normalized.as_slice()), accuracy_value, excess)?;
            outputs.push(name);
        }
        if spec.trajectories {
            let name = format!("runs/{label}_seed{}.traj", cell.seed_index);
            let mut f = BufWriter::new(fs::File::create(dir.join(&name))?);
            write_trajectory(&record, &mut f)?;
            f.flush()?;
            outputs.push(name);
        }
    }
    let (final_regret, final_normalized, normalized) = match report {
        Some(r) => (r.final_regret(), r.final_normalized(), r.normalized),
        None => (f64::NAN, f64::NAN, vec![]),
    };
    Ok((
        CellResult {
            final_regret,
            final_normalized,
            normalized,
            accuracy: accuracy_value,
            excess_risk: excess,
            violations,
            max_noise_ratio,
        },
        outputs,
    ))
}

fn write_run_csv(
    path: &Path,
    record: &RunRecord,
    normalized: Option<&[f64]>,
    accuracy: f64,
    excess: f64,
) -> Result<()> {
    let mut f = BufWriter::new(fs::File::create(path)?);
    writeln!(f, "t,learner,loss,noise_l2,cum_regret_normalized,h,phi_reg,accuracy,excess_risk")?;
    for (t, row) in record.losses.iter().enumerate() {
        let reg = normalized.and_then(|n| n.get(t)).copied().unwrap_or(f64::NAN);
        for (i, loss) in row.iter().enumerate() {
            writeln!(
                f,
                "{},{},{},{},{},{},{},{},{}",
                t + 1,
                i,
                loss,
                record.noise_l2(t + 1, i),
                reg,
                record.batch,
                record.phi_reg,
                accuracy,
                excess
            )?;
        }
    }
    f.flush()?;
    Ok(())
}

pub const TRAJECTORY_HEADER: &str = "# dpol-trajectory v1";

/// Text dump of a run: one line per round and learner with the parameters.
pub fn write_trajectory<W: Write>(record: &RunRecord, out: &mut W) -> Result<()> {
    writeln!(out, "{TRAJECTORY_HEADER}")?;
    writeln!(
        out,
        "learners={} rounds={} dim={} reference={}",
        record.learners, record.rounds, record.dim, record.reference
    )?;
    let line = |out: &mut W, t: usize, i: usize, w: &[f64]| -> Result<()> {
        let coords: Vec<String> = w.iter().map(|v| format!("{v:e}")).collect();
        writeln!(out, "{t} {i} {}", coords.join(" "))?;
        Ok(())
    };
    match &record.trajectories {
        Some(all) => {
            for (t, round) in all.iter().enumerate() {
                for (i, w) in round.iter().enumerate() {
                    line(out, t, i, w)?;
                }
            }
        }
        None => {
            for (t, w) in record.reference_trajectory.iter().enumerate() {
                line(out, t, record.reference, w)?;
            }
        }
    }
    Ok(())
}

/// Reads a trajectory dump back as `(round, learner, w)` triples.
pub fn read_trajectory(text: &str) -> Result<Vec<(usize, usize, Vec<f64>)>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == TRAJECTORY_HEADER => {}
        _ => {
            return Err(Error::Parse {
                line: 1,
                message: "missing trajectory header".into(),
            })
        }
    }
    lines.next();
    let mut out = Vec::new();
    for (k, l) in lines {
        let bad = |m: &str| Error::Parse {
            line: k + 1,
            message: m.to_string(),
        };
        let mut it = l.split_whitespace();
        let t = it.next().and_then(|v| v.parse().ok()).ok_or_else(|| bad("bad round"))?;
        let i = it.next().and_then(|v| v.parse().ok()).ok_or_else(|| bad("bad learner"))?;
        let w = it
            .map(|v| v.parse::<f64>().map_err(|_| bad("bad coordinate")))
            .collect::<Result<Vec<_>>>()?;
        out.push((t, i, w));
    }
    Ok(out)
}

fn cells_for(spec: &ExperimentSpec) -> (Vec<(String, usize, f64, usize)>, &'static str) {
    let b = &spec.base;
    match spec.kind {
        ExperimentKind::PrivacySweep | ExperimentKind::BoundsCompare => (
            spec.sweep
                .iter()
                .map(|&e| (format!("eps_{}", epsilon_label(e)), b.learners, e, b.batch))
                .collect(),
            "epsilon",
        ),
        ExperimentKind::NodeSweep => (
            spec.sweep
                .iter()
                .map(|&m| (format!("m_{m}"), m as usize, b.epsilon, b.batch))
                .collect(),
            "learners",
        ),
        ExperimentKind::BatchSweep | ExperimentKind::Audits => (
            spec.sweep
                .iter()
                .map(|&h| (format!("h_{h}"), b.learners, b.epsilon, h as usize))
                .collect(),
            "batch",
        ),
        ExperimentKind::SvmAccuracyTable => {
            let mut v = Vec::new();
            for &m in &spec.nodes {
                for &e in &spec.epsilons {
                    v.push((format!("m_{m}_eps_{}", epsilon_label(e)), m, e, b.batch));
                }
            }
            (v, "learners,epsilon")
        }
    }
}

/// Full result of an experiment, in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    pub manifest: Manifest,
    pub summary: Vec<SummaryRow>,
    /// `results[value][seed]`.
    pub results: Vec<Vec<Option<CellResult>>>,
    pub audits: Vec<AuditReport>,
}

/// Runs every cell of `spec` and writes the artifacts under `spec.out_dir`.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Manifest> {
    Ok(execute(spec, true)?.manifest)
}

/// Runs every cell and returns the results; writes artifacts when `write`.
pub fn execute(spec: &ExperimentSpec, write: bool) -> Result<ExperimentOutcome> {
    spec.validate()?;
    let dir = spec.out_dir.clone();
    if write {
        fs::create_dir_all(&dir)?;
        if spec.per_run_csv || spec.trajectories {
            fs::create_dir_all(dir.join("runs"))?;
        }
    }
    let spec_hash = sha256_hex(spec.canonical().as_bytes());
    if spec.kind == ExperimentKind::Audits {
        return run_audits(spec, spec_hash, write.then_some(dir.as_path()));
    }

    let prepared = Prepared {
        dataset: if spec.base.resample_data {
            None
        } else {
            Some(Arc::new(load_dataset(&spec.base.data, spec.base.data_seed)?))
        },
        splits: Mutex::new(BTreeMap::new()),
        cache: ComparatorCache::new(),
    };
    let (points, param) = cells_for(spec);
    let jobs: Vec<(usize, usize)> = (0..points.len())
        .flat_map(|v| (0..spec.seeds).map(move |s| (v, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.workers)
        .build()
        .map_err(|e| invalid(format!("thread pool: {e}")))?;
    let run_dir = write.then_some(dir.as_path());
    let outcomes: Vec<(CellConfig, String, Result<(CellResult, Vec<String>)>)> = pool.install(|| {
        jobs.par_iter()
            .map(|&(v, s)| {
                let (label, m, e, h) = &points[v];
                let cell = CellConfig {
                    value_index: v,
                    seed_index: s,
                    learners: *m,
                    epsilon: *e,
                    batch: *h,
                    seed: mix(spec.seed, s as u64),
                };
                let hash = sha256_hex(
                    format!("{}|{}", spec.canonical(), serde_json::to_string(&cell).unwrap_or_default())
                        .as_bytes(),
                );
                let res = run_cell(spec, &prepared, &cell, run_dir, label);
                (cell, hash, res)
            })
            .collect()
    });

    let mut results: Vec<Vec<Option<CellResult>>> = vec![vec![None; spec.seeds]; points.len()];
    let mut cells = Vec::with_capacity(outcomes.len());
    let mut all_ok = true;
    for (cell, hash, res) in outcomes {
        let label = points[cell.value_index].0.clone();
        let entry = match res {
            Ok((r, outputs)) => {
                let (status, message) = if r.violations.is_empty() {
                    ("ok".to_string(), None)
                } else {
                    all_ok = false;
                    ("invariant_violation".to_string(), Some(r.violations.join("; ")))
                };
                results[cell.value_index][cell.seed_index] = Some(r);
                CellEntry {
                    label,
                    seed_index: cell.seed_index,
                    seed: cell.seed,
                    config_hash: hash,
                    status,
                    message,
                    outputs,
                }
            }
            Err(e) => {
                all_ok = false;
                log::error!("cell {label} seed {} failed: {e}", cell.seed_index);
                CellEntry {
                    label,
                    seed_index: cell.seed_index,
                    seed: cell.seed,
                    config_hash: hash,
                    status: "failed".into(),
                    message: Some(e.to_string()),
                    outputs: vec![],
                }
            }
        };
        cells.push(entry);
    }

    let summary = summarize(spec, &points, &results)?;
    let mut manifest = Manifest {
        kind: spec.kind,
        spec_hash,
        cells,
        outputs: vec![],
        all_ok,
    };
    if write {
        let mut files = vec![("summary.csv".to_string(), summary_csv(spec, param, &summary))];
        if spec.kind == ExperimentKind::SvmAccuracyTable {
            files.push(("table1.csv".into(), table_csv(spec, &summary)));
            files.push(("plot.svg".into(), table_plot(spec, &summary)));
        } else {
            files.push(("curves.csv".into(), curves_csv(&summary)));
            files.push(("plot.svg".into(), curve_plot(spec, &summary)));
        }
        for (name, body) in &files {
            fs::write(dir.join(name), body)?;
            manifest.outputs.push(OutputEntry {
                path: name.clone(),
                sha256: sha256_hex(body.as_bytes()),
            });
        }
        for c in &manifest.cells {
            for o in &c.outputs {
                let bytes = fs::read(dir.join(o))?;
                manifest.outputs.push(OutputEntry {
                    path: o.clone(),
                    sha256: sha256_hex(&bytes),
                });
            }
        }
        let json = serde_json::to_string_pretty(&manifest).map_err(|e| invalid(e.to_string()))?;
        fs::write(dir.join("manifest.json"), json + "\n")?;
    }
    Ok(ExperimentOutcome {
        manifest,
        summary,
        results,
        audits: vec![],
    })
}

fn bound_for(spec: &ExperimentSpec, learners: usize, epsilon: f64, rounds: usize, dim: usize) -> Result<f64> {
    let b = &spec.base;
    if b.engine != Engine::Online || rounds == 0 {
        return Ok(f64::NAN);
    }
    let (loss, set) = build_loss(b)?;
    let schedule = schedule_for(b, learners, 0)?;
    let inputs = BoundInputs::new(
        learners,
        rounds,
        dim,
        loss.lipschitz,
        b.lambda,
        set.diameter(),
        epsilon,
        schedule.eta,
        schedule.window,
    )?;
    let case = match build_stepsize(b, &loss)? {
        StepsizeSchedule::StronglyConvex { .. } => RegretCase::StronglyConvex,
        StepsizeSchedule::Convex => RegretCase::Convex,
    };
    theorem2_bound(&inputs, case)
}

fn summarize(
    spec: &ExperimentSpec,
    points: &[(String, usize, f64, usize)],
    results: &[Vec<Option<CellResult>>],
) -> Result<Vec<SummaryRow>> {
    let dim = match &spec.base.data {
        DataSpec::Synthetic { dim, .. } => *dim,
        DataSpec::Sparse { dim_cap, .. } => *dim_cap,
    };
    let mut rows = Vec::with_capacity(points.len());
    for ((label, m, e, h), seeds) in points.iter().zip(results) {
        let ok: Vec<&CellResult> = seeds.iter().flatten().collect();
        let col = |f: fn(&CellResult) -> f64| -> Vec<f64> { ok.iter().map(|r| f(r)).collect() };
        let (mr, sr) = mean_std(&col(|r| r.final_regret));
        let (mn, sn) = mean_std(&col(|r| r.final_normalized));
        let (ma, sa) = mean_std(&col(|r| r.accuracy));
        let (me, _) = mean_std(&col(|r| r.excess_risk));
        let len = ok.iter().map(|r| r.normalized.len()).min().unwrap_or(0);
        let mut curve = Vec::with_capacity(len);
        let mut curve_std = Vec::with_capacity(len);
        for t in 0..len {
            let v: Vec<f64> = ok.iter().map(|r| r.normalized[t]).collect();
            let (a, s) = mean_std(&v);
            curve.push(a);
            curve_std.push(s);
        }
        let bound = if spec.kind == ExperimentKind::SvmAccuracyTable {
            f64::NAN
        } else {
            bound_for(spec, *m, *e, len, dim)?
        };
        rows.push(SummaryRow {
            label: label.clone(),
            learners: *m,
            epsilon: *e,
            batch: *h,
            runs: ok.len(),
            failed: seeds.len() - ok.len(),
            mean_final_regret: mr,
            std_final_regret: sr,
            mean_final_normalized: mn,
            std_final_normalized: sn,
            mean_accuracy: ma,
            std_accuracy: sa,
            mean_excess_risk: me,
            bound,
            curve,
            curve_std,
        });
    }
    Ok(rows)
}

fn summary_csv(spec: &ExperimentSpec, param: &str, rows: &[SummaryRow]) -> String {
    let mut s = String::from(
        "kind,param,label,learners,epsilon,batch,runs,failed,mean_final_regret,std_final_regret,\
         mean_final_normalized,std_final_normalized,mean_accuracy,std_accuracy,mean_excess_risk,bound\n",
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{},\"{}\",{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            spec.kind.as_str(),
            param,
            r.label,
            r.learners,
            epsilon_label(r.epsilon),
            r.batch,
            r.runs,
            r.failed,
            r.mean_final_regret,
            r.std_final_regret,
            r.mean_final_normalized,
            r.std_final_normalized,
            r.mean_accuracy,
            r.std_accuracy,
            r.mean_excess_risk,
            r.bound
        );
    }
    s
}

fn curves_csv(rows: &[SummaryRow]) -> String {
    let mut s = String::from("label,t,mean_normalized_regret,std_normalized_regret\n");
    for r in rows {
        for (t, (m, sd)) in r.curve.iter().zip(&r.curve_std).enumerate() {
            let _ = writeln!(s, "{},{},{},{}", r.label, t + 1, m, sd);
        }
    }
    s
}

fn curve_plot(spec: &ExperimentSpec, rows: &[SummaryRow]) -> String {
    let series: Vec<Series> = rows
        .iter()
        .map(|r| {
            let stride = (r.curve.len() / 500).max(1);
            Series {
                label: r.label.clone(),
                points: r
                    .curve
                    .iter()
                    .enumerate()
                    .filter(|(t, _)| t % stride == 0 || *t + 1 == r.curve.len())
                    .map(|(t, v)| ((t + 1) as f64, *v))
                    .collect(),
            }
        })
        .collect();
    line_chart(spec.kind.as_str(), "round t", "mean R(t)/t", &series)
}

/// Accuracy grid with one row per node count and one column per ε.
pub fn table_csv(spec: &ExperimentSpec, rows: &[SummaryRow]) -> String {
    let mut s = String::from("nodes");
    for e in &spec.epsilons {
        let _ = write!(s, ",{}", epsilon_label(*e));
    }
    s.push('\n');
    for &m in &spec.nodes {
        let _ = write!(s, "{m}");
        for &e in &spec.epsilons {
            let acc = rows
                .iter()
                .find(|r| r.learners == m && r.epsilon == e)
                .map_or(f64::NAN, |r| r.mean_accuracy);
            let _ = write!(s, ",{acc}");
        }
        s.push('\n');
    }
    s
}

fn table_plot(spec: &ExperimentSpec, rows: &[SummaryRow]) -> String {
    let series: Vec<Series> = spec
        .nodes
        .iter()
        .map(|&m| Series {
            label: format!("m = {m}"),
            points: spec
                .epsilons
                .iter()
                .enumerate()
                .map(|(k, &e)| {
                    let acc = rows
                        .iter()
                        .find(|r| r.learners == m && r.epsilon == e)
                        .map_or(f64::NAN, |r| r.mean_accuracy);
                    (k as f64, acc)
                })
                .collect(),
        })
        .collect();
    line_chart("accuracy by privacy level", "privacy level index (weaker to stronger)", "accuracy", &series)
}

/// Seed-averaged accuracy table (nodes × ε) of a `svm_accuracy_table` spec.
pub fn emit_table1_analog(spec: &ExperimentSpec) -> Result<Vec<Vec<f64>>> {
    if spec.kind != ExperimentKind::SvmAccuracyTable {
        return Err(config("kind", "the accuracy table needs kind = svm_accuracy_table"));
    }
    let outcome = execute(spec, true)?;
    Ok(spec
        .nodes
        .iter()
        .map(|&m| {
            spec.epsilons
                .iter()
                .map(|&e| {
                    outcome
                        .summary
                        .iter()
                        .find(|r| r.learners == m && r.epsilon == e)
                        .map_or(f64::NAN, |r| r.mean_accuracy)
                })
                .collect()
        })
        .collect())
}

fn run_audits(spec: &ExperimentSpec, spec_hash: String, dir: Option<&Path>) -> Result<ExperimentOutcome> {
    let b = &spec.base;
    let (loss, set) = build_loss(b)?;
    let dim = match b.data {
        DataSpec::Synthetic { dim, .. } => dim,
        DataSpec::Sparse { dim_cap, .. } => dim_cap,
    };
    let mut reports = Vec::new();
    let mut cells = Vec::new();
    let mut summary = String::from("label,batch,trials,max_ratio,passed\n");
    let mut outputs = Vec::new();
    for &h in &spec.sweep {
        let h = h as usize;
        let label = format!("h_{h}");
        let mut cfg = AuditConfig::new(dim, b.learners, b.rounds.unwrap_or(1000), spec.audit_trials, spec.seed);
        cfg.loss = loss;
        cfg.set = set;
        cfg.stepsize = build_stepsize(b, &loss)?;
        cfg.batch = h;
        cfg.phi_reg = b.phi_reg;
        let hash = sha256_hex(format!("{spec_hash}|{label}").as_bytes());
        match audit_sensitivity(&cfg) {
            Ok(r) => {
                let _ = writeln!(summary, "{label},{h},{},{},{}", r.trials.len(), r.max_ratio, r.passed);
                let mut names = vec![];
                if let Some(d) = dir {
                    let name = format!("audit_{label}.csv");
                    let mut buf = Vec::new();
                    r.write_csv(&mut buf)?;
                    fs::write(d.join(&name), &buf)?;
                    outputs.push(OutputEntry {
                        path: name.clone(),
                        sha256: sha256_hex(&buf),
                    });
                    names.push(name);
                }
                cells.push(CellEntry {
                    label,
                    seed_index: 0,
                    seed: spec.seed,
                    config_hash: hash,
                    status: if r.passed { "ok".into() } else { "invariant_violation".into() },
                    message: (!r.passed).then(|| format!("max ratio {}", r.max_ratio)),
                    outputs: names,
                });
                reports.push(r);
            }
            Err(e) => cells.push(CellEntry {
                label,
                seed_index: 0,
                seed: spec.seed,
                config_hash: hash,
                status: "failed".into(),
                message: Some(e.to_string()),
                outputs: vec![],
            }),
        }
    }
    let all_ok = cells.iter().all(|c| c.status == "ok");
    let mut manifest = Manifest {
        kind: spec.kind,
        spec_hash,
        cells,
        outputs: vec![],
        all_ok,
    };
    if let Some(d) = dir {
        fs::write(d.join("summary.csv"), &summary)?;
        manifest.outputs.push(OutputEntry {
            path: "summary.csv".into(),
            sha256: sha256_hex(summary.as_bytes()),
        });
        manifest.outputs.extend(outputs);
        let json = serde_json::to_string_pretty(&manifest).map_err(|e| invalid(e.to_string()))?;
        fs::write(d.join("manifest.json"), json + "\n")?;
    }
    Ok(ExperimentOutcome {
        manifest,
        summary: vec![],
        results: vec![],
        audits: reports,
    })
}
