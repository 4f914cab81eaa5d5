//! Command-line entry point: one binary whose subcommands walk the pipeline
//! from balance-controller design through training, evaluation, robustness
//! sweeps, and figures.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 numerical
//! failure, 3 I/O failure. All artifacts land in the configured output
//! directory and are written atomically (temp file + rename), so re-running
//! a command with the same config and seed reproduces every file byte for
//! byte.

use crate::checkpoint::{atomic_write, Checkpoint, CheckpointError, TrainBlock};
use crate::config::{derive_seed, load_config, seed_tags, ConfigError, RunConfig};
use crate::dynamics::{DynamicsError, State};
use crate::env::{Env, EnvError};
use crate::eval::{
    compute_metrics, robustness_suite, EvalError, RobustnessConfig, RobustnessReport,
};
use crate::hybrid::{HybridController, HybridError};
use crate::lqr::{design_lqr, LqrDesign, LqrError};
use crate::plot::{plot_robustness, plot_trajectory, PlotError};
use crate::roa::{estimate_rho, RoaError, RoaEstimate};
use crate::sac::{
    train_from, ReplayBuffer, SacAgent, SacError, TrainCursor, TrainingLog,
};
use crate::traj::{TrajError, Trajectory, CSV_HEADER};
use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Lqr(#[from] LqrError),
    #[error(transparent)]
    Roa(#[from] RoaError),
    #[error(transparent)]
    Sac(#[from] SacError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Hybrid(#[from] HybridError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Traj(#[from] TrajError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Plot(#[from] PlotError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn env_code(e: &EnvError) -> i32 {
    match e {
        EnvError::InvalidConfig(_) | EnvError::EpisodeOver => 1,
        EnvError::NonFinite { .. } | EnvError::Dynamics(_) => 2,
    }
}

fn traj_code(e: &TrajError) -> i32 {
    match e {
        TrajError::Io(_) => 3,
        _ => 1,
    }
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Config(e) => match e {
                ConfigError::Io(_) => 3,
                _ => 1,
            },
            CliError::Lqr(_) => 2,
            CliError::Roa(e) => match e {
                RoaError::InvalidConfig(_) => 1,
                _ => 2,
            },
            CliError::Sac(e) => match e {
                SacError::InvalidConfig(_) => 1,
                SacError::Env(inner) => env_code(inner),
                _ => 2,
            },
            CliError::Env(e) => env_code(e),
            CliError::Hybrid(_) => 1,
            CliError::Eval(e) => match e {
                EvalError::Traj(t) => traj_code(t),
                _ => 1,
            },
            CliError::Traj(t) => traj_code(t),
            CliError::Checkpoint(e) => match e {
                CheckpointError::Io(_) => 3,
                _ => 1,
            },
            CliError::Plot(e) => match e {
                PlotError::NonFinite => 2,
                _ => 1,
            },
            CliError::Dynamics(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "swingup",
    version,
    about = "Swing-up and balance workbench for torque-limited double pendulums"
)]
struct Cli {
    /// TOML run configuration; the built-in pendubot run when omitted.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one config value by dotted path, e.g. --set sac.lr=3e-4.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the balance controller for the configured plant.
    DesignLqr,
    /// Estimate the balance controller's region of attraction.
    EstimateRoa,
    /// Train the swing-up policy, saving progress into the checkpoint.
    Train {
        /// Environment steps to run.
        #[arg(long)]
        steps: u64,
        /// Continue the checkpoint's suspended training run.
        #[arg(long)]
        resume: bool,
        /// Also save the checkpoint every N steps while training.
        #[arg(long, value_name = "N")]
        checkpoint_every: Option<u64>,
    },
    /// Roll out the hybrid controller from rest and score the trajectory.
    Evaluate,
    /// Sweep the perturbation families and report success fractions.
    Robustness,
    /// Draw a figure from a trajectory or robustness table.
    Plot {
        /// Trajectory CSV or robustness CSV to draw.
        input: PathBuf,
        /// Output SVG path; defaults to the input with an .svg extension.
        #[arg(long, value_name = "FILE")]
        output: Option<PathBuf>,
    },
    /// Roll out the hybrid controller from a chosen state to a CSV.
    Simulate {
        /// Initial state as p1,p2,v1,v2 (radians, rad/s).
        #[arg(long, default_value = "0,0,0,0", value_name = "STATE")]
        x0: String,
        /// Rollout horizon in seconds; defaults to the evaluation horizon.
        #[arg(long)]
        horizon: Option<f64>,
        /// Output CSV path; defaults to <out_dir>/simulation.csv.
        #[arg(long, value_name = "FILE")]
        output: Option<PathBuf>,
    },
}

/// Run the CLI; returns the process exit code.
pub fn run() -> i32 {
    run_from(std::env::args_os())
}

/// Run the CLI on an explicit argument list.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    if let Command::Plot { input, output } = &cli.command {
        // figures need no run configuration, only the table itself
        return cmd_plot(input, output.as_deref());
    }
    let cfg = load_config(cli.config.as_deref(), &cli.overrides)?;
    match cli.command {
        Command::DesignLqr => cmd_design_lqr(&cfg),
        Command::EstimateRoa => cmd_estimate_roa(&cfg),
        Command::Train {
            steps,
            resume,
            checkpoint_every,
        } => cmd_train(&cfg, steps, resume, checkpoint_every),
        Command::Evaluate => cmd_evaluate(&cfg),
        Command::Robustness => cmd_robustness(&cfg),
        Command::Simulate {
            x0,
            horizon,
            output,
        } => cmd_simulate(&cfg, &x0, horizon, output),
        Command::Plot { .. } => unreachable!("handled above"),
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn checkpoint_path(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir.join("checkpoint.bin")
}

fn load_or_new(path: &Path) -> Result<Checkpoint, CliError> {
    if path.exists() {
        Ok(Checkpoint::load(path)?)
    } else {
        Ok(Checkpoint::default())
    }
}

fn load_required(path: &Path) -> Result<Checkpoint, CliError> {
    if !path.exists() {
        return Err(usage(format!(
            "no checkpoint at {}; run design-lqr / estimate-roa / train first",
            path.display()
        )));
    }
    Ok(Checkpoint::load(path)?)
}

/// Assemble the execution-time controller from checkpoint blocks.
fn controller_from(ck: &Checkpoint, cfg: &RunConfig) -> Result<HybridController, CliError> {
    let (agent, _) = ck
        .agent
        .as_ref()
        .ok_or_else(|| usage("checkpoint has no trained policy; run train first"))?;
    let design = ck
        .design
        .clone()
        .ok_or_else(|| usage("checkpoint has no balance controller; run design-lqr first"))?;
    let roa = ck
        .roa
        .clone()
        .ok_or_else(|| usage("checkpoint has no attraction region; run estimate-roa first"))?;
    Ok(HybridController::new(
        agent.policy.clone(),
        design,
        roa,
        cfg.model,
        cfg.eval.dt_control,
        cfg.env.v_max,
    )?)
}

fn matrix_lines(out: &mut String, name: &str, rows: &[Vec<f64>]) {
    for (i, row) in rows.iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        let _ = writeln!(out, "{name}_row_{i} {}", cells.join(" "));
    }
}

fn design_report(design: &LqrDesign) -> String {
    let mut out = String::new();
    let goal: Vec<String> = design.goal.iter().map(|v| format!("{v:.16e}")).collect();
    let _ = writeln!(out, "goal {}", goal.join(" "));
    matrix_lines(&mut out, "gain", &design.k);
    matrix_lines(&mut out, "cost_to_go", &design.s);
    let _ = writeln!(out, "riccati_residual {:.16e}", design.residual);
    out
}

fn roa_report(roa: &RoaEstimate) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "rho {:.16e}", roa.rho);
    let goal: Vec<String> = roa.goal.iter().map(|v| format!("{v:.16e}")).collect();
    let _ = writeln!(out, "goal {}", goal.join(" "));
    matrix_lines(&mut out, "cost_to_go", &roa.s);
    out
}

fn cmd_design_lqr(cfg: &RunConfig) -> Result<(), CliError> {
    std::fs::create_dir_all(&cfg.out_dir)?;
    let design = design_lqr(&cfg.model, &cfg.lqr)?;
    let path = checkpoint_path(cfg);
    let mut ck = load_or_new(&path)?;
    if ck.roa.as_ref().is_some_and(|r| r.s != design.s) {
        println!("dropping stale attraction region (balance controller changed)");
        ck.roa = None;
    }
    ck.design = Some(design.clone());
    ck.save(&path)?;
    atomic_write(
        &cfg.out_dir.join("lqr_report.txt"),
        design_report(&design).as_bytes(),
    )?;
    println!(
        "balance controller solved: residual {:.3e}, gain rows {}",
        design.residual,
        design.k.len()
    );
    Ok(())
}

fn cmd_estimate_roa(cfg: &RunConfig) -> Result<(), CliError> {
    std::fs::create_dir_all(&cfg.out_dir)?;
    let path = checkpoint_path(cfg);
    let mut ck = load_or_new(&path)?;
    let design = match ck.design.clone() {
        Some(d) => d,
        None => design_lqr(&cfg.model, &cfg.lqr)?,
    };
    let roa = estimate_rho(&design, &cfg.model, &cfg.roa)?;
    atomic_write(&cfg.out_dir.join("roa_report.txt"), roa_report(&roa).as_bytes())?;
    println!("attraction region estimated: rho {:.6e}", roa.rho);
    ck.design = Some(design);
    ck.roa = Some(roa);
    ck.save(&path)?;
    Ok(())
}

/// One `step,episode,return,ep_len,q_loss,pi_loss` row per finished episode,
/// carrying the latest loss sample seen by that episode's end (zeros before
/// the first update).
fn train_log_csv(log: &TrainingLog) -> String {
    let mut out = String::from("step,episode,return,ep_len,q_loss,pi_loss\n");
    let mut next_loss = 0usize;
    let mut last = (0.0f64, 0.0f64);
    for (i, ep) in log.episodes.iter().enumerate() {
        while next_loss < log.losses.len() && log.losses[next_loss].step <= ep.end_step {
            last = (log.losses[next_loss].q_loss, log.losses[next_loss].pi_loss);
            next_loss += 1;
        }
        let _ = writeln!(
            out,
            "{},{},{:.16e},{},{:.16e},{:.16e}",
            ep.end_step,
            i + 1,
            ep.ret,
            ep.len,
            last.0,
            last.1
        );
    }
    out
}

fn cmd_train(
    cfg: &RunConfig,
    steps: u64,
    resume: bool,
    checkpoint_every: Option<u64>,
) -> Result<(), CliError> {
    if checkpoint_every == Some(0) {
        return Err(usage("--checkpoint-every must be positive"));
    }
    std::fs::create_dir_all(&cfg.out_dir)?;
    let path = checkpoint_path(cfg);
    let mut ck = load_or_new(&path)?;
    let design = match ck.design.take() {
        Some(d) => d,
        None => design_lqr(&cfg.model, &cfg.lqr)?,
    };
    let roa = match ck.roa.take() {
        Some(r) => r,
        None => estimate_rho(&design, &cfg.model, &cfg.roa)?,
    };

    // the attraction region feeds the terminal-set reward term
    let mut env_cfg = cfg.env.clone();
    env_cfg.reward.s_lqr = roa.s.clone();
    env_cfg.reward.rho = roa.rho;
    env_cfg.reward.goal = roa.goal;

    let mut sac_cfg = cfg.sac.clone();
    let mut env = Env::new(env_cfg, cfg.model, derive_seed(cfg.seed, seed_tags::ENV))?;
    let (mut agent, mut buffer, mut cursor, mut log) = if resume {
        let block = ck.train.take().ok_or_else(|| {
            usage("checkpoint has no suspended training run; train without --resume first")
        })?;
        let (agent, stored) = ck
            .agent
            .take()
            .ok_or_else(|| usage("checkpoint has no trained policy to resume"))?;
        // a resumed run must keep the hyperparameters it started with
        sac_cfg = stored;
        env.restore(block.env);
        (agent, block.buffer, block.cursor, block.log)
    } else {
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, seed_tags::AGENT_INIT));
        let agent = SacAgent::new(
            cfg.model.actuation.input_dim(),
            &sac_cfg.hidden,
            &mut rng,
        );
        (
            agent,
            ReplayBuffer::new(sac_cfg.buffer_capacity),
            TrainCursor::new(sac_cfg.seed),
            TrainingLog::default(),
        )
    };

    let chunk = checkpoint_every.unwrap_or(steps).max(1);
    let mut remaining = steps;
    loop {
        let n = remaining.min(chunk);
        train_from(
            &mut env, &mut agent, &mut buffer, &sac_cfg, n, &mut cursor, &mut log,
        )?;
        remaining -= n;
        let snapshot = Checkpoint {
            agent: Some((agent.clone(), sac_cfg.clone())),
            design: Some(design.clone()),
            roa: Some(roa.clone()),
            train: Some(TrainBlock {
                cursor: cursor.clone(),
                env: env.snapshot(),
                buffer: buffer.clone(),
                log: log.clone(),
            }),
        };
        snapshot.save(&path)?;
        atomic_write(
            &cfg.out_dir.join("train_log.csv"),
            train_log_csv(&log).as_bytes(),
        )?;
        println!(
            "trained through step {} ({} episodes)",
            cursor.steps_done,
            log.episodes.len()
        );
        if remaining == 0 {
            break;
        }
    }
    if let Some(ep) = log.episodes.last() {
        println!(
            "last episode: return {:.4}, length {}",
            ep.ret, ep.len
        );
    }
    Ok(())
}

fn cmd_evaluate(cfg: &RunConfig) -> Result<(), CliError> {
    let path = checkpoint_path(cfg);
    let ck = load_required(&path)?;
    let ctrl = controller_from(&ck, cfg)?;
    let roa = ck.roa.as_ref().expect("controller implies region");
    let traj = ctrl.rollout(&cfg.model, State::bottom(), cfg.eval.horizon_s);
    let mut csv = Vec::new();
    traj.write_csv(&mut csv)?;
    atomic_write(&cfg.out_dir.join("trajectory.csv"), &csv)?;
    let metrics = compute_metrics(&traj, &cfg.model, roa, &cfg.eval.criteria)?;
    let kv = metrics.to_kv();
    atomic_write(&cfg.out_dir.join("metrics.txt"), kv.as_bytes())?;
    print!("{kv}");
    Ok(())
}

fn cmd_robustness(cfg: &RunConfig) -> Result<(), CliError> {
    let path = checkpoint_path(cfg);
    let ck = load_required(&path)?;
    let ctrl = controller_from(&ck, cfg)?;
    let rcfg = RobustnessConfig {
        specs: cfg.eval.robustness.specs.clone(),
        x0: State::bottom(),
        horizon_s: cfg.eval.robustness.horizon_s,
        criteria: cfg.eval.criteria.clone(),
        parallel: cfg.eval.robustness.parallel,
    };
    let report = robustness_suite(&ctrl, &cfg.model, &rcfg)?;
    atomic_write(
        &cfg.out_dir.join("robustness.csv"),
        report.to_csv().as_bytes(),
    )?;
    let kv = report.to_kv();
    atomic_write(&cfg.out_dir.join("robustness.txt"), kv.as_bytes())?;
    print!("{kv}");
    Ok(())
}

fn cmd_plot(input: &Path, output: Option<&Path>) -> Result<(), CliError> {
    let text = std::fs::read_to_string(input)?;
    let first = text.lines().next().unwrap_or("").trim_end();
    let title = input
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "figure".into());
    let svg = if first == CSV_HEADER {
        let traj = Trajectory::read_csv(text.as_bytes())?;
        plot_trajectory(&traj, &title)?
    } else if first == "kind,level,success" {
        plot_robustness(&RobustnessReport::from_csv_str(&text)?, &title)?
    } else {
        return Err(usage(format!(
            "unrecognized table header {first:?}: expected a trajectory or robustness CSV"
        )));
    };
    let out = match output {
        Some(p) => p.to_path_buf(),
        None => input.with_extension("svg"),
    };
    atomic_write(&out, svg.as_bytes())?;
    println!("wrote {}", out.display());
    Ok(())
}

fn parse_x0(text: &str) -> Result<State, CliError> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    if parts.len() != 4 {
        return Err(usage(format!(
            "initial state must be 4 comma-separated numbers, got {text:?}"
        )));
    }
    let mut vals = [0.0f64; 4];
    for (slot, part) in vals.iter_mut().zip(&parts) {
        *slot = part
            .parse()
            .map_err(|e| usage(format!("bad number {part:?} in initial state: {e}")))?;
        if !slot.is_finite() {
            return Err(usage("initial state must be finite"));
        }
    }
    Ok(State::new(vals[0], vals[1], vals[2], vals[3]))
}

fn cmd_simulate(
    cfg: &RunConfig,
    x0: &str,
    horizon: Option<f64>,
    output: Option<PathBuf>,
) -> Result<(), CliError> {
    let x0 = parse_x0(x0)?;
    let horizon = horizon.unwrap_or(cfg.eval.horizon_s);
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(usage("--horizon must be positive"));
    }
    let path = checkpoint_path(cfg);
    let ck = load_required(&path)?;
    let ctrl = controller_from(&ck, cfg)?;
    let traj = ctrl.rollout(&cfg.model, x0, horizon);
    let out = output.unwrap_or_else(|| cfg.out_dir.join("simulation.csv"));
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    let mut csv = Vec::new();
    traj.write_csv(&mut csv)?;
    atomic_write(&out, &csv)?;
    let last = traj.states.last().expect("rollout emits rows");
    println!(
        "wrote {} ({} rows{}); final state ({:.4}, {:.4}, {:.4}, {:.4})",
        out.display(),
        traj.len(),
        if traj.diverged { ", diverged" } else { "" },
        last.p1,
        last.p2,
        last.v1,
        last.v2
    );
    Ok(())
}
