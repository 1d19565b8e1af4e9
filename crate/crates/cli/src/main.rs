use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use tnf::checks::run_checks;
use tnf::config::ExperimentConfig;
use tnf::experiment::{eval_checkpoint, run_experiment, sample_checkpoint, RunOptions};
use tnf::Error;

/// Temporal normalizing flow solver for Fokker-Planck equations.
#[derive(Parser)]
#[command(name = "tnf", version)]
struct Cli {
    /// Cap on worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Apply the config's reduced desk-scale settings.
    #[arg(long)]
    desk_scale: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train, evaluate and write all artifacts.
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Also write PPM heatmaps of the density dumps.
        #[arg(long)]
        ppm: bool,
    },
    /// Run the derivative, invertibility and residual self-checks.
    Validate {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Recompute the evaluation report of a saved flow.
    EvalCheckpoint {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Round number written in the report.
        #[arg(long, default_value_t = 0)]
        round: usize,
        /// Write the CSV here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw samples from a saved flow.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Sampling times (repeatable).
        #[arg(long = "t", required = true)]
        times: Vec<f64>,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(args: &ConfigArgs) -> Result<ExperimentConfig, Error> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if args.desk_scale {
        let (desk, changes) = cfg.desk_scaled()?;
        for c in changes {
            log::info!("desk scale: {c}");
        }
        cfg = desk;
    }
    if let Some(seed) = args.seed {
        if seed != cfg.seed {
            log::info!("seed: {} -> {seed}", cfg.seed);
            cfg.seed = seed;
        }
    }
    Ok(cfg)
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<(), Error> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::Io {
            path: p.to_path_buf(),
            source: e,
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn execute(cli: Cli) -> Result<bool, Error> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidArgument {
                field: "threads".into(),
                reason: e.to_string(),
            })?;
    }
    match cli.command {
        Command::Run { cfg, out, ppm } => {
            let config = load_config(&cfg)?;
            let result = run_experiment(&config, &out, &RunOptions { ppm })?;
            for r in result.report.rows.iter().filter(|r| r.round == config.train.rounds) {
                println!(
                    "t={} {} relative_l2={:.4e} relative_kl={}",
                    r.t,
                    r.set,
                    r.relative_l2,
                    r.relative_kl.map(|k| format!("{k:.4e}")).unwrap_or_else(|| "-".into())
                );
            }
            println!("artifacts written to {}", out.display());
            Ok(true)
        }
        Command::Validate { cfg } => {
            let config = load_config(&cfg)?;
            let problem = config.problem()?;
            let results = run_checks(&config.flow_spec(problem.dim), &problem, config.seed)?;
            let mut ok = true;
            for r in &results {
                println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
                ok &= r.passed;
            }
            Ok(ok)
        }
        Command::EvalCheckpoint {
            checkpoint,
            cfg,
            round,
            out,
        } => {
            let config = load_config(&cfg)?;
            let base = out.as_deref().and_then(Path::parent);
            let report = eval_checkpoint(&checkpoint, &config, round, base)?;
            write_or_print(out.as_deref(), &report.to_csv())?;
            Ok(true)
        }
        Command::Sample {
            checkpoint,
            times,
            n,
            seed,
            out,
        } => {
            let csv = sample_checkpoint(&checkpoint, &times, n, seed)?;
            write_or_print(out.as_deref(), &csv)?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("{}", json!({"error": e.kind(), "message": e.to_string()}));
            ExitCode::from(1)
        }
    }
}
