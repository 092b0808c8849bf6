//! `aoi-harq`: solvers, simulators and experiment sweeps for multi-source
//! HARQ status updating under an average-AoI constraint.
//!
//! Exit codes: 0 success, 1 usage or runtime error, 2 infeasible instance
//! (the AoI limit cannot be met), 3 solver non-convergence.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use aoi_harq::cmdp::{
    bisection_solve_prepared, enumerate_states_capped, load_policy, save_policy, KernelTable,
    PolicyKind, SolveOptions,
};
use aoi_harq::config::{ConfigEntries, CONFIG_KEYS};
use aoi_harq::dql::{
    episode_csv_line, load_checkpoint, save_checkpoint, train, TrainConfig, CURVE_CSV_HEADER,
    TRAIN_KEYS,
};
use aoi_harq::eval::{
    run_sweep, simulate, AllIdleController, BaselineController, ControllerId, DqlGreedyController,
    LcdtController, RunMetrics, SweepSpec, TablePolicyController, AGGREGATE_CSV_HEADER,
};
use aoi_harq::lyapunov::{run_lcdt, slot_record_csv_line, SLOT_CSV_HEADER};
use aoi_harq::{SolveError, SystemConfig};

const THREADS_ENV: &str = "AOI_HARQ_THREADS";

#[derive(Parser)]
#[command(name = "aoi-harq", version, about, disable_help_subcommand = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat key = value config file (see `config keys` in the README).
    #[arg(long)]
    config: PathBuf,
    /// Output directory for artifacts and the run manifest.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config file's rng_seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; the AOI_HARQ_THREADS environment variable wins over
    /// this flag.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the constrained problem exactly: enumeration, relative value
    /// iteration, bisection. Writes the feasible and lower-bound policies.
    SolveCmdp {
        #[command(flatten)]
        common: Common,
    },
    /// Run the low-complexity dynamic transmission policy.
    RunLcdt {
        #[command(flatten)]
        common: Common,
        /// Slots to simulate.
        #[arg(long, default_value_t = 100_000)]
        horizon: usize,
    },
    /// Train the deep Q-learning policy; training keys come from the same
    /// config file.
    TrainDql {
        #[command(flatten)]
        common: Common,
    },
    /// Simulate a controller over several seeds and write metrics.
    EvalPolicy {
        #[command(flatten)]
        common: Common,
        /// cmdp | lower-bound | lcdt | dql | baseline | all-idle
        #[arg(long)]
        controller: String,
        /// Policy table (for cmdp / lower-bound).
        #[arg(long)]
        policy: Option<PathBuf>,
        /// Network checkpoint (for dql).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 100_000)]
        horizon: usize,
        /// Comma-separated seed list; defaults to ten seeds derived from the
        /// config seed.
        #[arg(long)]
        seeds: Option<String>,
    },
    /// Sweep one config parameter over a value list for several controllers.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Config field to vary (e.g. first_error_prob).
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long)]
        values: String,
        /// Comma-separated controller ids.
        #[arg(long, default_value = "lcdt")]
        controllers: String,
        #[arg(long, default_value_t = 100_000)]
        horizon: usize,
        #[arg(long)]
        seeds: Option<String>,
    },
    /// Run the self-check suites (closed-form oracles, kernel
    /// normalization, gradient check).
    Verify {
        /// Seed for the sampled checks.
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // Render clap's message but keep usage errors at exit code 1.
            let _ = err.print();
            return match err.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    ExitCode::SUCCESS
                }
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err.message);
            ExitCode::from(err.code)
        }
    }
}

struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }
}

impl<E: std::error::Error + 'static> From<E> for CliError {
    fn from(err: E) -> Self {
        let code = if let Some(solve) = source_of::<SolveError>(&err) {
            match solve {
                SolveError::Infeasible { .. } | SolveError::BracketExhausted { .. } => 2,
                SolveError::NoConvergence { .. } | SolveError::StationaryNoConvergence { .. } => 3,
                _ => 1,
            }
        } else {
            1
        };
        Self {
            code,
            message: err.to_string(),
        }
    }
}

/// Walks the error itself and its source chain for a typed cause.
fn source_of<'a, T: std::error::Error + 'static>(
    err: &'a (dyn std::error::Error + 'static),
) -> Option<&'a T> {
    let mut current: Option<&(dyn std::error::Error + 'static)> = Some(err);
    while let Some(e) = current {
        if let Some(t) = e.downcast_ref::<T>() {
            return Some(t);
        }
        current = e.source();
    }
    None
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::SolveCmdp { common } => solve_cmdp(&common),
        Command::RunLcdt { common, horizon } => run_lcdt_cmd(&common, horizon),
        Command::TrainDql { common } => train_dql(&common),
        Command::EvalPolicy {
            common,
            controller,
            policy,
            checkpoint,
            horizon,
            seeds,
        } => eval_policy(&common, &controller, policy, checkpoint, horizon, seeds),
        Command::Sweep {
            common,
            param,
            values,
            controllers,
            horizon,
            seeds,
        } => sweep(&common, &param, &values, &controllers, horizon, seeds),
        Command::Verify { seed } => verify(seed),
    }
}

fn init_threads(flag: Option<usize>) {
    let from_env = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok());
    if let Some(n) = from_env.or(flag) {
        // Ignores the error if a global pool already exists.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

/// Loads the system and training configs from one flat key = value file,
/// rejecting unknown keys. Training keys are optional and validated even by
/// subcommands that ignore them, so one experiment file can drive every
/// subcommand.
fn load_configs(common: &Common) -> Result<(SystemConfig, TrainConfig), CliError> {
    let text = std::fs::read_to_string(&common.config)
        .map_err(|e| CliError::usage(format!("{}: {e}", common.config.display())))?;
    let mut entries = ConfigEntries::parse(&text)?;
    let mut cfg = SystemConfig::from_entries(&mut entries)?;
    let train_cfg = TrainConfig::from_entries(&mut entries)?;
    let valid: Vec<&str> = CONFIG_KEYS
        .iter()
        .chain(TRAIN_KEYS.iter())
        .copied()
        .collect();
    entries.reject_unknown(&valid)?;
    if let Some(seed) = common.seed {
        cfg.rng_seed = seed;
    }
    Ok((cfg, train_cfg))
}

fn parse_seed_list(raw: &Option<String>, cfg: &SystemConfig) -> Result<Vec<u64>, CliError> {
    match raw {
        None => Ok((0..10).map(|i| cfg.rng_seed.wrapping_add(i)).collect()),
        Some(text) => text
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<u64>()
                    .map_err(|_| CliError::usage(format!("bad seed `{s}` in --seeds")))
            })
            .collect(),
    }
}

/// Every run writes a manifest sufficient to re-run it bit-identically.
fn write_manifest(
    out: &Path,
    subcommand: &str,
    cfg: &SystemConfig,
    extra: &[(&str, String)],
) -> Result<(), CliError> {
    let mut text = String::new();
    text.push_str(&format!("tool = aoi-harq {}\n", env!("CARGO_PKG_VERSION")));
    text.push_str(&format!("subcommand = {subcommand}\n"));
    for (key, value) in extra {
        text.push_str(&format!("{key} = {value}\n"));
    }
    text.push_str("# resolved configuration\n");
    text.push_str(&cfg.to_key_values());
    std::fs::write(out.join("run_manifest.txt"), text).map_err(CliError::from)
}

fn prepare_out(common: &Common) -> Result<(), CliError> {
    std::fs::create_dir_all(&common.out).map_err(CliError::from)
}

fn solve_cmdp(common: &Common) -> Result<(), CliError> {
    init_threads(common.threads);
    let (cfg, _) = load_configs(common)?;
    prepare_out(common)?;
    let opts = SolveOptions::default();
    let space = enumerate_states_capped(&cfg, opts.state_cap)?;
    let table = KernelTable::build(&space, &cfg);
    let solved = bisection_solve_prepared(&cfg, &space, &table, opts)?;

    save_policy(
        common.out.join("feasible.policy"),
        &solved.feasible,
        PolicyKind::Feasible,
        &cfg,
    )?;
    save_policy(
        common.out.join("lower_bound.policy"),
        &solved.lower_bound,
        PolicyKind::LowerBound,
        &cfg,
    )?;

    let mut summary = String::new();
    summary.push_str(&format!("states = {}\n", solved.state_count));
    summary.push_str(&format!("beta_tilde = {}\n", solved.beta_tilde));
    summary.push_str(&format!(
        "feasible: beta = {}, tau_bar = {:.6}, delta_bar = {:.6} ({})\n",
        solved.feasible.beta,
        solved.feasible.tau_bar,
        solved.feasible.delta_bar,
        solved.feasible.eval_method,
    ));
    summary.push_str(&format!(
        "lower_bound: beta = {}, tau_bar = {:.6}, delta_bar = {:.6} ({})\n",
        solved.lower_bound.beta,
        solved.lower_bound.tau_bar,
        solved.lower_bound.delta_bar,
        solved.lower_bound.eval_method,
    ));
    summary.push_str("# bisection trace: beta tau_bar delta_bar avg_lagrangian feasible\n");
    for step in &solved.trace {
        summary.push_str(&format!(
            "{} {:.6} {:.6} {:.6} {}\n",
            step.beta, step.tau_bar, step.delta_bar, step.avg_lagrangian, step.feasible
        ));
    }
    std::fs::write(common.out.join("solve_summary.txt"), &summary)?;
    write_manifest(&common.out, "solve-cmdp", &cfg, &[])?;
    print!("{summary}");
    Ok(())
}

fn run_lcdt_cmd(common: &Common, horizon: usize) -> Result<(), CliError> {
    init_threads(common.threads);
    let (cfg, _) = load_configs(common)?;
    prepare_out(common)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let run = run_lcdt(&cfg, horizon, &mut rng);

    let mut csv = String::with_capacity(64 * run.records.len());
    csv.push_str(SLOT_CSV_HEADER);
    csv.push('\n');
    for record in &run.records {
        csv.push_str(&slot_record_csv_line(record));
        csv.push('\n');
    }
    std::fs::write(common.out.join("lcdt_per_slot.csv"), csv)?;

    let (tau_bar, delta_bar) = run.final_averages();
    let summary = format!(
        "horizon = {horizon}\ntau_bar = {tau_bar:.6}\ndelta_bar = {delta_bar:.6}\nmean_queue = {:.6}\n",
        run.mean_queue()
    );
    std::fs::write(common.out.join("lcdt_summary.txt"), &summary)?;
    write_manifest(
        &common.out,
        "run-lcdt",
        &cfg,
        &[("horizon", horizon.to_string())],
    )?;
    print!("{summary}");
    Ok(())
}

fn train_dql(common: &Common) -> Result<(), CliError> {
    init_threads(common.threads);
    let (cfg, train_cfg) = load_configs(common)?;
    prepare_out(common)?;
    let outcome = train(&cfg, &train_cfg, cfg.rng_seed)?;

    save_checkpoint(common.out.join("qnet.ckpt"), &outcome.network, outcome.q_scale)?;
    let mut csv = String::new();
    csv.push_str(CURVE_CSV_HEADER);
    csv.push('\n');
    for stats in &outcome.curve {
        csv.push_str(&episode_csv_line(stats));
        csv.push('\n');
    }
    std::fs::write(common.out.join("learning_curve.csv"), csv)?;

    let last = outcome.curve.last().expect("at least one episode");
    let summary = format!(
        "episodes = {}\nfinal_mean_return = {:.6}\nfinal_tau_bar = {:.6}\nfinal_delta_bar = {:.6}\n",
        outcome.curve.len(),
        last.mean_return,
        last.tau_bar,
        last.delta_bar
    );
    std::fs::write(common.out.join("train_summary.txt"), &summary)?;
    write_manifest(
        &common.out,
        "train-dql",
        &cfg,
        &[
            ("episodes", train_cfg.episodes.to_string()),
            ("steps_per_episode", train_cfg.steps_per_episode.to_string()),
            ("hidden", format!("{:?}", train_cfg.hidden)),
        ],
    )?;
    print!("{summary}");
    Ok(())
}

fn eval_policy(
    common: &Common,
    controller: &str,
    policy: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
    horizon: usize,
    seeds: Option<String>,
) -> Result<(), CliError> {
    init_threads(common.threads);
    let (cfg, _) = load_configs(common)?;
    prepare_out(common)?;
    let seeds = parse_seed_list(&seeds, &cfg)?;

    let metrics: RunMetrics = match controller {
        "lcdt" => simulate(&LcdtController, &cfg, horizon, &seeds)?,
        "baseline" => simulate(&BaselineController::new(), &cfg, horizon, &seeds)?,
        "all-idle" => simulate(&AllIdleController, &cfg, horizon, &seeds)?,
        "cmdp" | "lower-bound" => {
            let path = policy.ok_or_else(|| {
                CliError::usage("--policy <file> is required for table controllers")
            })?;
            let file = load_policy(&path, &cfg)?;
            let space = Arc::new(enumerate_states_capped(&cfg, SolveOptions::default().state_cap)?);
            if space.len() != file.policy.actions.len() {
                return Err(CliError::usage(format!(
                    "policy table covers {} states but the instance enumerates {}",
                    file.policy.actions.len(),
                    space.len()
                )));
            }
            let ctrl = TablePolicyController::new(space, Arc::new(file.policy.actions));
            simulate(&ctrl, &cfg, horizon, &seeds)?
        }
        "dql" => {
            let path = checkpoint.ok_or_else(|| {
                CliError::usage("--checkpoint <file> is required for the dql controller")
            })?;
            let (net, q_scale) = load_checkpoint(&path)?;
            let expected = 4 * cfg.num_sources() + 1;
            if net.input_dim() != expected {
                return Err(CliError::usage(format!(
                    "checkpoint expects {} input features but the instance has {}",
                    net.input_dim(),
                    expected
                )));
            }
            let ctrl = DqlGreedyController::new(Arc::new(net), q_scale);
            simulate(&ctrl, &cfg, horizon, &seeds)?
        }
        other => {
            let _ = ControllerId::from_str(other).map_err(|e| CliError::usage(e.to_string()))?;
            unreachable!("dql handled above");
        }
    };

    let seed_list = seeds
        .iter()
        .map(|s| s.to_string())
        .collect::<Vec<_>>()
        .join(";");
    let mut csv = String::new();
    csv.push_str(AGGREGATE_CSV_HEADER);
    csv.push('\n');
    for outcome in &metrics.per_seed {
        csv.push_str(&format!(
            "-,0,{},{:.6},,{:.6},,{},{},{}\n",
            controller,
            outcome.tau_bar,
            outcome.delta_bar,
            outcome.delta_bar <= cfg.aoi_limit,
            outcome.seed,
            horizon
        ));
    }
    csv.push_str(&format!(
        "-,0,{},{:.6},{:.6},{:.6},{:.6},{},{},{}\n",
        controller,
        metrics.tau_bar,
        metrics.tau_ci,
        metrics.delta_bar,
        metrics.delta_ci,
        metrics.feasible(),
        seed_list,
        horizon
    ));
    std::fs::write(common.out.join("metrics.csv"), &csv)?;

    let mut per_slot = String::new();
    per_slot.push_str(SLOT_CSV_HEADER);
    per_slot.push('\n');
    for record in &metrics.first_seed_records {
        per_slot.push_str(&slot_record_csv_line(record));
        per_slot.push('\n');
    }
    std::fs::write(common.out.join("per_slot.csv"), per_slot)?;

    write_manifest(
        &common.out,
        "eval-policy",
        &cfg,
        &[
            ("controller", controller.to_string()),
            ("horizon", horizon.to_string()),
            ("seeds", seed_list.clone()),
        ],
    )?;
    println!(
        "{}: tau_bar = {:.6} ± {:.6}, delta_bar = {:.6} ± {:.6}, feasible = {}",
        controller,
        metrics.tau_bar,
        metrics.tau_ci,
        metrics.delta_bar,
        metrics.delta_ci,
        metrics.feasible()
    );
    Ok(())
}

fn sweep(
    common: &Common,
    param: &str,
    values: &str,
    controllers: &str,
    horizon: usize,
    seeds: Option<String>,
) -> Result<(), CliError> {
    init_threads(common.threads);
    let (cfg, _) = load_configs(common)?;
    prepare_out(common)?;
    let values: Vec<f64> = values
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| CliError::usage(format!("bad value `{v}` in --values")))
        })
        .collect::<Result<_, _>>()?;
    let controllers: Vec<ControllerId> = controllers
        .split(',')
        .map(|c| ControllerId::from_str(c.trim()).map_err(|e| CliError::usage(e.to_string())))
        .collect::<Result<_, _>>()?;
    let seeds = parse_seed_list(&seeds, &cfg)?;

    let spec = SweepSpec {
        param: param.to_string(),
        values: values.clone(),
        base: cfg.clone(),
        controllers,
        horizon,
        seeds: seeds.clone(),
        solve_options: SolveOptions::default(),
    };
    let csv = run_sweep(&spec)?;
    std::fs::write(common.out.join("sweep.csv"), &csv)?;
    write_manifest(
        &common.out,
        "sweep",
        &cfg,
        &[
            ("param", param.to_string()),
            (
                "values",
                values
                    .iter()
                    .map(|v| v.to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            ("horizon", horizon.to_string()),
            (
                "seeds",
                seeds
                    .iter()
                    .map(|s| s.to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            ),
        ],
    )?;
    println!("wrote {} rows to sweep.csv", csv.lines().count() - 1);
    Ok(())
}

fn verify(seed: u64) -> Result<(), CliError> {
    let reports = aoi_harq::verify::run_all(seed);
    let mut failed = false;
    for report in &reports {
        println!("{report}");
        failed |= !report.passed;
    }
    if failed {
        Err(CliError::usage("verification failed"))
    } else {
        Ok(())
    }
}
