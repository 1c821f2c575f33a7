//! widthlab: analytic wide-network theory with a Monte Carlo cross-check.
//!
//! Exit codes: 0 success, 1 validation failure, 2 configuration error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use widthlab_cli::commands;
use widthlab_cli::config::{RngConfig, RunConfig};

#[derive(Parser)]
#[command(name = "widthlab", version, about = "Wide-network kernel theory and its Monte Carlo validation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON run configuration; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker thread count (default: machine parallelism).
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory override.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// NNGP kernel recursion over a dataset.
    Kernel(Common),
    /// Tangent-kernel recursion over a dataset.
    Ntk(Common),
    /// Ordered/chaotic phase diagram sweep.
    PhaseDiagram(Common),
    /// Exact GP posterior from the NNGP kernel.
    GpPredict(Common),
    /// Full-batch GD against the linearized model.
    TrainCompare(Common),
    /// Per-layer fourth-cumulant profile.
    FiniteWidth(Common),
    /// Catapult map trajectories and the critical-slowdown scan.
    Catapult(Common),
    /// Run a validation suite.
    Validate {
        #[command(flatten)]
        common: Common,
        /// Suite name (see `--suite help` for the list).
        #[arg(long, default_value = "acceptance")]
        suite: String,
    },
}

fn load_config(common: &Common, command_name: &str) -> Result<RunConfig, String> {
    let mut config = match &common.config {
        Some(path) => RunConfig::from_file(path).map_err(|e| e.to_string())?,
        None => RunConfig {
            command: command_name.to_string(),
            arch: None,
            widths: None,
            dataset: None,
            query: None,
            sweep: None,
            rng: None,
            out_dir: None,
            workers: None,
            tolerances: Default::default(),
            options: Default::default(),
        },
    };
    // Flags override config fields.
    if common.config.is_some() && config.command != command_name {
        return Err(format!(
            "config invalid at $.command: config says '{}' but the '{command_name}' subcommand was invoked",
            config.command
        ));
    }
    config.command = command_name.to_string();
    if let Some(seed) = common.seed {
        config.rng = Some(RngConfig { master_seed: seed });
    }
    if let Some(workers) = common.workers {
        config.workers = Some(workers);
    }
    if let Some(out) = &common.out {
        config.out_dir = Some(out.clone());
    }
    config.validate().map_err(|e| e.to_string())?;
    Ok(config)
}

fn install_workers(config: &RunConfig) {
    if let Some(workers) = config.workers {
        // Build errors only if a global pool already exists; that is fine.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global();
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (common, name, suite) = match &cli.command {
        Command::Kernel(c) => (c, "kernel", None),
        Command::Ntk(c) => (c, "ntk", None),
        Command::PhaseDiagram(c) => (c, "phase-diagram", None),
        Command::GpPredict(c) => (c, "gp-predict", None),
        Command::TrainCompare(c) => (c, "train-compare", None),
        Command::FiniteWidth(c) => (c, "finite-width", None),
        Command::Catapult(c) => (c, "catapult", None),
        Command::Validate { common, suite } => (common, "validate", Some(suite.clone())),
    };
    let config = match load_config(common, name) {
        Ok(c) => c,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
    };
    install_workers(&config);

    let result = match name {
        "kernel" => commands::run_kernel(&config),
        "ntk" => commands::run_ntk(&config),
        "phase-diagram" => commands::run_phase_diagram(&config),
        "gp-predict" => commands::run_gp_predict(&config),
        "train-compare" => commands::run_train_compare(&config),
        "finite-width" => commands::run_finite_width(&config),
        "catapult" => commands::run_catapult(&config),
        "validate" => {
            let dir = commands::out_dir(&config);
            match commands::run_validate(&config, suite.as_deref().unwrap_or("acceptance"), &dir) {
                Ok(true) => {
                    println!("all checks passed");
                    return ExitCode::SUCCESS;
                }
                Ok(false) => {
                    eprintln!("validation failed; see {}", dir.join("validate_report.csv").display());
                    return ExitCode::from(1);
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            }
        }
        _ => unreachable!("clap restricts the command set"),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // Module errors surface with command context; config-shaped
            // problems exit 2, computational failures exit 1.
            let msg = format!("{e:#}");
            eprintln!("error in '{name}': {msg}");
            if msg.contains("config invalid") {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
