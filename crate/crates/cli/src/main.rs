use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dpol::experiment::{execute, ExperimentKind, ExperimentSpec};
use dpol::metrics::{
    bound_confidence, centralized_offline_bound, minibatch_offline_bound, offline_utility_bound,
    theorem2_bound, BoundInputs, RegretCase,
};
use dpol::privacy::{audit_sensitivity, AuditConfig};
use dpol::topology::{parse_schedule_text, validate_matrix, CommSchedule, ScheduleMode};
use dpol::{FeasibleSet, LossModel, StepsizeSchedule};

#[derive(Parser)]
#[command(name = "dpol", version, about = "Private distributed online learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Master seed (overrides the spec).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides the spec).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (overrides the spec).
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment spec file.
    Run {
        spec: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Measure one-step sensitivity on adjacent datasets.
    Audit {
        #[arg(long, default_value_t = 8)]
        dim: usize,
        #[arg(long, default_value_t = 3)]
        learners: usize,
        #[arg(long, default_value_t = 1000)]
        rounds: usize,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 1)]
        batch: usize,
        /// Strong convexity of the regularized hinge loss (0 for plain hinge).
        #[arg(long, default_value_t = 0.0)]
        lambda: f64,
        #[arg(long, default_value_t = 0.0)]
        phi_reg: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate the closed-form regret and utility bounds.
    Bounds(BoundArgs),
    /// Check a communication schedule: stochasticity, threshold, connectivity
    /// and the geometric consensus rate.
    ValidateTopology {
        #[arg(long, value_enum, default_value_t = Mode::RandomPairwiseGossip)]
        mode: Mode,
        #[arg(long, default_value_t = 4)]
        m: usize,
        #[arg(long, default_value_t = 0.1)]
        eta: f64,
        #[arg(long)]
        window: Option<usize>,
        #[arg(long, default_value_t = 200)]
        rounds: usize,
        /// Write the matrices as text.
        #[arg(long)]
        dump: Option<PathBuf>,
        /// Validate matrices read from a text dump instead of generating them.
        #[arg(long)]
        check: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    FixedComplete,
    RandomPairwiseGossip,
    RingRotation,
}

impl From<Mode> for ScheduleMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::FixedComplete => ScheduleMode::FixedComplete,
            Mode::RandomPairwiseGossip => ScheduleMode::RandomPairwiseGossip,
            Mode::RingRotation => ScheduleMode::RingRotation,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Case {
    StronglyConvex,
    Convex,
}

#[derive(Args)]
struct BoundArgs {
    #[arg(long, default_value_t = 4)]
    m: usize,
    #[arg(long, default_value_t = 2000)]
    rounds: usize,
    #[arg(long, default_value_t = 10)]
    dim: usize,
    #[arg(long, default_value_t = 1.0)]
    lipschitz: f64,
    #[arg(long, default_value_t = 0.1)]
    lambda: f64,
    /// Diameter of the feasible set.
    #[arg(long, default_value_t = 2.0)]
    diameter: f64,
    /// Privacy level; omit for the non-private bound.
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long, default_value_t = 0.1)]
    eta: f64,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long, value_enum, default_value_t = Case::StronglyConvex)]
    case: Case,
    #[arg(long, default_value_t = 1)]
    batch: usize,
    #[arg(long, default_value_t = 0.01)]
    gamma: f64,
    /// Regret value plugged into the offline utility bounds.
    #[arg(long)]
    regret: Option<f64>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cmd: Command) -> dpol::Result<bool> {
    match cmd {
        Command::Run { spec, common } => run(spec, common),
        Command::Audit {
            dim,
            learners,
            rounds,
            trials,
            batch,
            lambda,
            phi_reg,
            common,
        } => {
            let mut cfg = AuditConfig::new(dim, learners, rounds, trials, common.seed.unwrap_or(1));
            let set = FeasibleSet::default();
            if lambda > 0.0 {
                cfg.loss = LossModel::hinge().regularized(lambda, &set)?;
                cfg.stepsize = StepsizeSchedule::strongly_convex(lambda)?;
            }
            cfg.batch = batch;
            cfg.phi_reg = phi_reg;
            let report = audit_sensitivity(&cfg)?;
            if let Some(dir) = common.out {
                fs::create_dir_all(&dir)?;
                let path = dir.join("audit.csv");
                report.write_csv(fs::File::create(&path)?)?;
                println!("wrote {}", path.display());
            }
            println!(
                "trials={} max_ratio={} passed={}",
                report.trials.len(),
                report.max_ratio,
                report.passed
            );
            Ok(report.passed)
        }
        Command::Bounds(args) => bounds(args),
        Command::ValidateTopology {
            mode,
            m,
            eta,
            window,
            rounds,
            dump,
            check,
            common,
        } => validate_topology(mode.into(), m, eta, window, rounds, dump, check, common.seed.unwrap_or(1)),
    }
}

fn run(path: PathBuf, common: Common) -> dpol::Result<bool> {
    let mut spec = ExperimentSpec::from_file(&path)?;
    if let Some(s) = common.seed {
        spec.seed = s;
    }
    if let Some(o) = common.out {
        spec.out_dir = o;
    }
    if let Some(w) = common.workers {
        spec.workers = w;
    }
    spec.validate()?;
    let outcome = execute(&spec, true)?;
    let m = &outcome.manifest;
    for row in &outcome.summary {
        if spec.kind == ExperimentKind::SvmAccuracyTable {
            println!("{}: accuracy {:.4} (runs {}, failed {})", row.label, row.mean_accuracy, row.runs, row.failed);
        } else {
            println!(
                "{}: final R/T {:.6} ± {:.6}, R {:.4}, bound {:.4e} (runs {}, failed {})",
                row.label,
                row.mean_final_normalized,
                row.std_final_normalized,
                row.mean_final_regret,
                row.bound,
                row.runs,
                row.failed
            );
        }
    }
    for c in m.cells.iter().filter(|c| c.status != "ok") {
        eprintln!(
            "{} seed {}: {} {}",
            c.label,
            c.seed_index,
            c.status,
            c.message.as_deref().unwrap_or("")
        );
    }
    println!("wrote {}", spec.out_dir.join("manifest.json").display());
    Ok(m.all_ok)
}

fn bounds(a: BoundArgs) -> dpol::Result<bool> {
    let eps = a.epsilon.unwrap_or(f64::INFINITY);
    let mut inputs = BoundInputs::new(
        a.m,
        a.rounds,
        a.dim,
        a.lipschitz,
        a.lambda,
        a.diameter,
        eps,
        a.eta,
        a.window.unwrap_or(a.m),
    )?;
    inputs.batch = a.batch;
    inputs.gamma = a.gamma;
    let case = match a.case {
        Case::StronglyConvex => RegretCase::StronglyConvex,
        Case::Convex => RegretCase::Convex,
    };
    println!("theta={}", inputs.theta);
    println!("beta={}", inputs.beta);
    println!("online_regret_bound={}", theorem2_bound(&inputs, case)?);
    if let Some(r) = a.regret {
        println!("offline_utility_bound={}", offline_utility_bound(&inputs, r)?);
        println!(
            "centralized_bound={}",
            centralized_offline_bound(a.lipschitz, a.lambda, a.rounds, a.gamma, r)?
        );
        println!(
            "centralized_minibatch_bound={}",
            minibatch_offline_bound(a.lipschitz, a.lambda, a.rounds, a.batch, a.gamma, r)?
        );
        println!("confidence={}", bound_confidence(a.gamma, a.rounds));
    }
    Ok(true)
}

#[allow(clippy::too_many_arguments)]
fn validate_topology(
    mode: ScheduleMode,
    m: usize,
    eta: f64,
    window: Option<usize>,
    rounds: usize,
    dump: Option<PathBuf>,
    check: Option<PathBuf>,
    seed: u64,
) -> dpol::Result<bool> {
    let (schedule, matrices) = match check {
        Some(path) => {
            let f = std::io::BufReader::new(fs::File::open(path)?);
            parse_schedule_text(f)?
        }
        None => {
            let s = CommSchedule::new(mode, m, eta, window.unwrap_or(m), seed)?;
            let mats = (1..=rounds).map(|t| s.matrix(t)).collect();
            (s, mats)
        }
    };
    if let Some(path) = dump {
        let last = matrices.last().map_or(0, |a| a.round());
        let first = matrices.first().map_or(1, |a| a.round());
        fs::write(&path, schedule.to_text(first, last))?;
        println!("wrote {}", path.display());
    }
    let mut ok = true;
    for a in &matrices {
        let r = validate_matrix(a, schedule.eta);
        if !r.passed() {
            ok = false;
            println!("round {}: {:?}", a.round(), r);
        }
    }
    let start = matrices.first().map_or(0, |a| a.round().saturating_sub(1));
    let horizon = matrices.len();
    let mut disconnected = 0;
    for t in start..start + horizon.saturating_sub(schedule.window) + 1 {
        if !schedule.check_connectivity(t) {
            disconnected += 1;
        }
    }
    let rate = schedule.consensus_rate()?;
    let mut worst: f64 = 0.0;
    for (k, phi) in schedule.phi_products_from(start).take(horizon) {
        let dev = phi
            .rows()
            .iter()
            .flatten()
            .map(|v| (v - 1.0 / schedule.m as f64).abs())
            .fold(0.0, f64::max);
        worst = worst.max(dev / (rate.bound(k - start) + 1e-9));
    }
    println!("matrices={} doubly_stochastic_and_threshold={}", matrices.len(), ok);
    println!("windows_not_strongly_connected={disconnected}");
    println!("theta={} beta={} max_deviation_over_bound={worst}", rate.theta, rate.beta);
    Ok(ok && disconnected == 0 && worst <= 1.0)
}
