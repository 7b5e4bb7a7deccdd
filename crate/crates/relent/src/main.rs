use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use relent::config::{parse_config, ExperimentKind, RunConfig};
use relent::dispatch::{dispatch, EXIT_USAGE};

/// Relative-energy experiments for the stochastic compressible Navier–Stokes system.
#[derive(Parser)]
#[command(name = "relent", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Energy ledgers and the discrete energy inequality.
    Energy(RunArgs),
    /// Weak run against a strong reference on one Wiener path.
    Twin(RunArgs),
    /// Low Mach number sweep against the incompressible Euler reference.
    EpsSweep(RunArgs),
    /// Itô product-rule residual on toy processes.
    ItoCheck(RunArgs),
    /// Coercivity constants of the pressure potential.
    Coercivity(RunArgs),
    /// Print the JSON schema of the configuration file.
    Schema,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    jobs: Option<usize>,
    /// Overrides RELENT_SEED and the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides output_dir.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load(kind: ExperimentKind, args: &RunArgs) -> Result<RunConfig, String> {
    let text = std::fs::read_to_string(&args.config).map_err(|e| format!("{}: {e}", args.config.display()))?;
    let mut cfg = parse_config(&text).map_err(|e| e.to_string())?;
    cfg.experiment.kind = kind;
    if let Some(seed) = args.seed {
        cfg.experiment.seed = seed;
    } else if let Ok(s) = std::env::var("RELENT_SEED") {
        cfg.experiment.seed = s.trim().parse().map_err(|_| format!("RELENT_SEED: not an unsigned integer: {s:?}"))?;
    }
    if let Some(out) = &args.out {
        cfg.output_dir = out.to_string_lossy().into_owned();
    }
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            // clap's own status for bad arguments is 2, which here means a failed verdict
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    let (kind, args) = match &cli.command {
        Command::Energy(a) => (ExperimentKind::Energy, a),
        Command::Twin(a) => (ExperimentKind::Twin, a),
        Command::EpsSweep(a) => (ExperimentKind::EpsSweep, a),
        Command::ItoCheck(a) => (ExperimentKind::ItoCheck, a),
        Command::Coercivity(a) => (ExperimentKind::Coercivity, a),
        Command::Schema => {
            let schema = schemars::schema_for!(RunConfig);
            println!("{}", serde_json::to_string_pretty(&schema).expect("schema serializes"));
            return ExitCode::SUCCESS;
        }
    };
    let cfg = match load(kind, args) {
        Ok(c) => c,
        Err(msg) => {
            eprintln!("relent: {msg}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let jobs = args.jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let outcome = dispatch(&cfg, jobs);
    println!("{}", serde_json::to_string_pretty(&outcome.summary).expect("json"));
    eprintln!("relent: {} ({})", outcome.message, outcome.dir.display());
    ExitCode::from(outcome.code)
}
