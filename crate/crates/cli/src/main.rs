use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ota_private_inference::harness::acceptance::{list_criteria, Acceptance, AcceptanceOptions, CRITERIA};
use ota_private_inference::harness::single::run_single;
use ota_private_inference::harness::sweep::{run_sweep, sweep_csv, SweepMode, SweepSpec};
use ota_private_inference::{Error, SystemConfig};

const EXIT_VALIDATION: u8 = 1;
const EXIT_ACCEPTANCE: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

/// Simulator for privacy-preserving over-the-air multi-view inference.
#[derive(Debug, Parser)]
#[command(name = "ota-sim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML config; the built-in 12-device setup when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; results go to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a config file and report every violation.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// One experiment, reported as JSON.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 4000)]
        trials: usize,
    },
    /// Epsilon sweep, reported as CSV.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Trials per grid point.
        #[arg(long, default_value_t = 4000)]
        trials: usize,
        /// uniform, weight or clip; repeat for several. All three by default.
        #[arg(long = "mode")]
        modes: Vec<SweepMode>,
        /// Comma-separated target epsilons.
        #[arg(long, value_delimiter = ',')]
        eps: Option<Vec<f64>>,
        #[arg(long, default_value_t = 40)]
        targets: usize,
        #[arg(long, default_value_t = 0.5)]
        sensitive_fraction: f64,
        #[arg(long, default_value_t = 0.5)]
        rho: f64,
    },
    /// Run the acceptance criteria.
    Accept {
        #[command(flatten)]
        common: Common,
        /// Trials per sweep point.
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
        /// Print the criteria without running them.
        #[arg(long)]
        list: bool,
        /// Run only these criteria.
        #[arg(long = "only", value_delimiter = ',')]
        only: Vec<u8>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn exit_code_for(e: &Error) -> u8 {
    match e {
        Error::InvalidConfig(_) | Error::Parse(_) => EXIT_VALIDATION,
        Error::Stage { source, .. } => exit_code_for(source),
        _ => EXIT_RUNTIME,
    }
}

fn load(common: &Common, default_q: usize) -> Result<SystemConfig, Error> {
    let cfg = match &common.config {
        Some(path) => SystemConfig::load(path)?,
        None => SystemConfig::paper_default(default_q),
    };
    let cfg = match common.seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    };
    ota_private_inference::config::validated(cfg)
}

fn emit(out: Option<&Path>, name: &str, contents: &str) -> Result<(), Error> {
    match out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let path = dir.join(name);
            std::fs::write(&path, contents)?;
            eprintln!("wrote {}", path.display());
        }
        None => print!("{contents}"),
    }
    Ok(())
}

fn dispatch(command: Command) -> Result<ExitCode, Error> {
    match command {
        Command::Validate { config } => {
            let cfg = ota_private_inference::config::validated(SystemConfig::load(&config)?)?;
            println!("ok: {} devices, d = {}, r = {}, hash {}", cfg.num_devices, cfg.feature_dim, cfg.reduced_dim, cfg.config_hash());
            Ok(ExitCode::SUCCESS)
        }
        Command::Run { common, trials } => {
            let cfg = load(&common, 16)?;
            let report = run_single(&cfg, trials)?;
            emit(common.out.as_deref(), "report.json", &report.to_json()?)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep { common, trials, modes, eps, targets, sensitive_fraction, rho } => {
            let cfg = load(&common, 16)?;
            let modes = if modes.is_empty() { SweepMode::ALL.to_vec() } else { modes };
            let mut rows = Vec::new();
            for mode in modes {
                let mut spec = SweepSpec::new(mode);
                spec.trials_per_point = trials;
                spec.targets_per_point = targets;
                spec.sensitive_fraction = sensitive_fraction;
                spec.rho = rho;
                if let Some(grid) = &eps {
                    spec.eps_grid = grid.clone();
                }
                let batch = run_sweep(&cfg, &spec)?;
                for row in &batch {
                    if let Some(reason) = &row.failure {
                        eprintln!("warning: {mode} eps {} not calibrated: {reason}", row.eps_target);
                    }
                }
                rows.extend(batch);
            }
            emit(common.out.as_deref(), "sweep.csv", &sweep_csv(&cfg, &rows))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Accept { common, trials, list, only } => {
            if list {
                print!("{}", list_criteria());
                return Ok(ExitCode::SUCCESS);
            }
            let cfg = load(&common, 16)?;
            let opts = AcceptanceOptions { sweep_trials_per_point: trials, ..AcceptanceOptions::default() };
            let suite = Acceptance::with_config(cfg, opts);
            let ids: Vec<u8> = if only.is_empty() { CRITERIA.iter().map(|c| c.id).collect() } else { only };
            let mut failed = 0;
            for id in ids {
                let o = suite.run(id);
                println!("{o}");
                failed += usize::from(!o.passed);
            }
            if let (Some(dir), Ok(artifacts)) = (common.out.as_deref(), suite.artifacts()) {
                for (name, contents) in &artifacts.files {
                    emit(Some(dir), name, contents)?;
                }
            }
            if failed > 0 {
                println!("{failed} criteria failed");
                Ok(ExitCode::from(EXIT_ACCEPTANCE))
            } else {
                println!("all criteria passed");
                Ok(ExitCode::SUCCESS)
            }
        }
    }
}
