use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fql_ems::config::RunConfig;
use fql_ems::env::write_trajectory;
use fql_ems::fql::Agent;
use fql_ems::trainer::{compare_start_penalty, evaluate_recorded, train, write_training_curve, CompareRow};
use fql_ems::Error;

const AGENT_FILE: &str = "agent.json";
const CURVE_FILE: &str = "training_curve.csv";
const SNAPSHOT_FILE: &str = "config.resolved";
const REPORT_FILE: &str = "eval_report.json";
const TRAJECTORY_FILE: &str = "trajectory.csv";
const COMPARE_FILE: &str = "compare.json";

/// Fuzzy Q-learning energy management for fuel-cell hybrid vehicles.
#[derive(Parser)]
#[command(name = "fql-ems", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an agent and write agent.json, training_curve.csv and config.resolved.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Bundled cycle name (udds, nedc) or CSV path.
        #[arg(long)]
        cycle: Option<String>,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        /// Print progress every this many episodes; 0 disables it.
        #[arg(long, default_value_t = 100)]
        progress: usize,
    },
    /// Evaluate an agent greedily and write eval_report.json, trajectory.csv and config.resolved.
    Eval {
        #[arg(long)]
        agent: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        cycle: Option<String>,
        /// Initial state of charge, as a fraction.
        #[arg(long, default_value_t = 0.5)]
        soc0: f64,
        #[arg(long, default_value_t = 1)]
        repeat: usize,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Fit the polarization curve and print or write the calibration report.
    Calibrate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train paired agents with and without the start penalty and compare them.
    Compare {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        cycle: Option<String>,
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long)]
        episodes: Option<usize>,
        /// Start penalty of the penalized strategy.
        #[arg(long, default_value_t = 0.2)]
        penalty: f64,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

/// Failure carrying the process exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let usage = match &e {
            Error::Config(_)
            | Error::Param(_)
            | Error::Parse { .. }
            | Error::NonUniformSampling { .. }
            | Error::NegativeVelocity { .. }
            | Error::ShapeMismatch { .. }
            | Error::Json(_) => true,
            Error::Io { source, .. } => source.kind() == std::io::ErrorKind::NotFound,
            _ => false,
        };
        Failure {
            code: if usage { 2 } else { 1 },
            message: e.to_string(),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn load_config(path: Option<&Path>) -> Result<RunConfig, Failure> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply_seed_fallback()?;
    Ok(cfg)
}

fn create_dir(dir: &Path) -> CmdResult {
    std::fs::create_dir_all(dir).map_err(|e| Failure {
        code: 1,
        message: format!("{}: {e}", dir.display()),
    })
}

fn cmd_train(
    config: Option<&Path>,
    cycle: Option<String>,
    episodes: Option<usize>,
    seed: Option<u64>,
    out_dir: &Path,
    progress: usize,
) -> CmdResult {
    let mut cfg = load_config(config)?;
    if let Some(c) = cycle {
        cfg.cycle = c;
    }
    if let Some(n) = episodes {
        cfg.train.episodes = n;
    }
    if let Some(s) = seed {
        cfg.set_seed(s);
    }
    let run = cfg.resolve()?;
    create_dir(out_dir)?;
    cfg.write_snapshot(out_dir.join(SNAPSHOT_FILE))?;
    let out = train(&run.cycle, &run.model, &cfg.train, |m| {
        if progress > 0 && (m.episode + 1) % progress == 0 {
            eprintln!(
                "episode {:>6}  eps {:.4}  avg_reward {:.5}  final_soc {:.4}  starts {}",
                m.episode + 1,
                m.epsilon,
                m.avg_reward,
                m.final_soc,
                m.n_start
            );
        }
    })?;
    out.agent.save(out_dir.join(AGENT_FILE))?;
    write_training_curve(out_dir.join(CURVE_FILE), &out.episodes)?;
    println!("wrote {}", out_dir.display());
    Ok(())
}

fn cmd_eval(
    agent_path: &Path,
    config: Option<&Path>,
    cycle: Option<String>,
    soc0: f64,
    repeat: usize,
    out_dir: &Path,
) -> CmdResult {
    let mut cfg = load_config(config)?;
    let agent = Agent::load(agent_path)?;
    // without a config file, score with the penalty the agent was trained under
    if config.is_none() {
        if let Some(k) = agent.metadata.get("start_penalty").and_then(|v| v.as_f64()) {
            cfg.train.env.start_penalty = k;
        }
    }
    if let Some(c) = cycle {
        cfg.cycle = c;
    }
    cfg.train.env.initial_soc = soc0;
    let run = cfg.resolve()?;
    let (report, log) = evaluate_recorded(&agent, &run.cycle, &run.model, &cfg.train.env, soc0, repeat)?;
    create_dir(out_dir)?;
    cfg.write_snapshot(out_dir.join(SNAPSHOT_FILE))?;
    report.write_json(out_dir.join(REPORT_FILE))?;
    write_trajectory(out_dir.join(TRAJECTORY_FILE), &run.cycle, &log)?;
    println!("{:>4} {:>9} {:>9} {:>6} {:>12} {:>10}", "rep", "soc0", "soc_end", "starts", "h2_g/100km", "avg_rew");
    for r in &report.repetitions {
        println!(
            "{:>4} {:>9.4} {:>9.4} {:>6} {:>12} {:>10.5}",
            r.repetition + 1,
            r.initial_soc,
            r.final_soc,
            r.n_start,
            r.h2_g_per_100km.map_or("-".into(), |h| format!("{h:.2}")),
            r.avg_reward
        );
    }
    if !report.completed {
        eprintln!("warning: SOC left its bounds in repetition {}", report.repetitions.len());
    }
    Ok(())
}

fn cmd_calibrate(config: Option<&Path>, out: Option<&Path>) -> CmdResult {
    let cfg = load_config(config)?;
    cfg.validate()?;
    let cfg = RunConfig {
        calibrate: true,
        ..cfg
    };
    let (_, report) = cfg.fuel_cell_resolved()?;
    let mut json = serde_json::to_string_pretty(&report).map_err(Error::from)?;
    json.push('\n');
    match out {
        Some(path) => {
            std::fs::write(path, json).map_err(|e| Failure {
                code: 1,
                message: format!("{}: {e}", path.display()),
            })?;
            cfg.write_snapshot(path.with_extension(SNAPSHOT_FILE))?;
            Ok(())
        }
        None => {
            print!("{json}");
            Ok(())
        }
    }
}

fn print_compare(rows: &[CompareRow]) {
    println!("{:>13} {:>12} {:>14} {:>14}", "start_penalty", "mean_starts", "mean_h2_g/100km", "mean_final_soc");
    for r in rows {
        println!(
            "{:>13} {:>12.2} {:>14.2} {:>14.4}",
            r.start_penalty, r.mean_n_start, r.mean_h2_g_per_100km, r.mean_final_soc
        );
    }
}

fn cmd_compare(
    config: Option<&Path>,
    cycle: Option<String>,
    seeds: u64,
    episodes: Option<usize>,
    penalty: f64,
    out_dir: Option<&Path>,
) -> CmdResult {
    if seeds == 0 {
        return Err(Failure {
            code: 2,
            message: "--seeds must be >= 1".into(),
        });
    }
    let mut cfg = load_config(config)?;
    if let Some(c) = cycle {
        cfg.cycle = c;
    }
    if let Some(n) = episodes {
        cfg.train.episodes = n;
    }
    let run = cfg.resolve()?;
    let base = cfg.train.agent.seed;
    let seed_list: Vec<u64> = (0..seeds).map(|i| base + i).collect();
    let rows = compare_start_penalty(&run.cycle, &run.model, &cfg.train, &[0.0, penalty], &seed_list)?;
    print_compare(&rows);
    if let Some(dir) = out_dir {
        create_dir(dir)?;
        cfg.write_snapshot(dir.join(SNAPSHOT_FILE))?;
        let mut json = serde_json::to_string_pretty(&rows).map_err(Error::from)?;
        json.push('\n');
        let path = dir.join(COMPARE_FILE);
        std::fs::write(&path, json).map_err(|e| Failure {
            code: 1,
            message: format!("{}: {e}", path.display()),
        })?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train {
            config,
            cycle,
            episodes,
            seed,
            out_dir,
            progress,
        } => cmd_train(config.as_deref(), cycle, episodes, seed, &out_dir, progress),
        Command::Eval {
            agent,
            config,
            cycle,
            soc0,
            repeat,
            out_dir,
        } => cmd_eval(&agent, config.as_deref(), cycle, soc0, repeat, &out_dir),
        Command::Calibrate { config, out } => cmd_calibrate(config.as_deref(), out.as_deref()),
        Command::Compare {
            config,
            cycle,
            seeds,
            episodes,
            penalty,
            out_dir,
        } => cmd_compare(config.as_deref(), cycle, seeds, episodes, penalty, out_dir.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
