//! `otfs-sim`: runs the BER, sparsity and convergence experiments and
//! writes their CSV tables plus a run manifest.
//!
//! Exit status: 0 on success, 1 for configuration errors, 2 for runtime
//! failures (including failed self-checks).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use otfs_core::sim::{
    manifest, quick_checks, run_ber_experiment, run_convergence_experiment, run_sparsity_experiment, ExperimentOutput,
    SimConfig,
};
use otfs_core::Error;

#[derive(Debug, Parser)]
#[command(name = "otfs-sim", version, about = "Multi-antenna OTFS receiver experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Paired OTFS MP-MRC versus OFDM MMSE-MRC bit error rate.
    Ber(RunArgs),
    /// Per-branch nonzero count of the effective channel versus array size.
    Sparsity(RunArgs),
    /// Iterations to stop of MP-MRC versus single-antenna MP.
    Convergence(RunArgs),
    /// Fast oracle and property checks.
    Validate(RunArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// TOML configuration; omitted sections keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, env = "OTFS_SEED")]
    seed: Option<u64>,
    /// Output directory for CSV files and the manifest.
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Trials (frames or channel draws) per point.
    #[arg(long)]
    trials: Option<usize>,
    /// Comma-separated SNR grid in dB (`inf` for noise-free).
    #[arg(long, value_delimiter = ',')]
    snr: Option<Vec<f64>>,
    /// Comma-separated receive-antenna counts.
    #[arg(long, value_delimiter = ',')]
    antennas: Option<Vec<usize>>,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    threads: Option<usize>,
}

/// Failure classes mapped to exit codes.
enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_config_error() {
            Failure::Config(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

impl RunArgs {
    /// Loads the config and applies the command-line overrides that every
    /// experiment shares.
    fn resolve(&self) -> Result<SimConfig, Failure> {
        let mut cfg = match &self.config {
            // any failure to read or parse the file is a configuration problem
            Some(path) => SimConfig::load(path).map_err(|e| Failure::Config(e.to_string()))?,
            None => SimConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.run.seed = seed;
        }
        if let Some(threads) = self.threads {
            cfg.run.threads = threads;
        }
        Ok(cfg)
    }
}

fn write_outputs(dir: &Path, cfg: &SimConfig, experiment: &str, tables: &[ExperimentOutput]) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", dir.display())))?;
    for table in tables {
        let path = table.save(dir)?;
        println!("wrote {}", path.display());
    }
    let path = dir.join("manifest.txt");
    fs::write(&path, manifest(cfg, experiment))
        .map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", path.display())))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Ber(args) => {
            let mut cfg = args.resolve()?;
            if let Some(t) = args.trials {
                cfg.run.trials = t;
            }
            if let Some(snr) = &args.snr {
                cfg.run.snr_db = snr.clone();
            }
            if let Some(a) = &args.antennas {
                cfg.ber.antennas = a.clone();
            }
            cfg.validate()?;
            let exp = run_ber_experiment(&cfg, &cfg.ber.antennas)?;
            write_outputs(&args.out, &cfg, "ber", &[exp.summary(), exp.trial_table()])
        }
        Command::Sparsity(args) => {
            let mut cfg = args.resolve()?;
            if let Some(t) = args.trials {
                cfg.sparsity.trials = t;
            }
            if let Some(a) = &args.antennas {
                cfg.sparsity.antennas = a.clone();
            }
            if args.snr.is_some() {
                return Err(Failure::Config(
                    "--snr does not apply to the sparsity experiment".into(),
                ));
            }
            cfg.validate()?;
            let exp = run_sparsity_experiment(&cfg, &cfg.sparsity.antennas)?;
            write_outputs(&args.out, &cfg, "sparsity", &[exp.summary()])
        }
        Command::Convergence(args) => {
            let mut cfg = args.resolve()?;
            if let Some(t) = args.trials {
                cfg.convergence.trials = t;
            }
            if let Some(snr) = &args.snr {
                cfg.convergence.snr_db = snr.clone();
            }
            if let Some(a) = &args.antennas {
                match a.as_slice() {
                    [n] => cfg.array.antennas = *n,
                    _ => return Err(Failure::Config("convergence takes a single --antennas value".into())),
                }
            }
            cfg.validate()?;
            let exp = run_convergence_experiment(&cfg)?;
            write_outputs(&args.out, &cfg, "convergence", &[exp.summary(), exp.trial_table()])
        }
        Command::Validate(args) => {
            let cfg = args.resolve()?;
            cfg.validate()?;
            let outcomes = quick_checks(&cfg)?;
            for o in &outcomes {
                println!("{} {}: {}", if o.passed { "PASS" } else { "FAIL" }, o.name, o.detail);
            }
            let failed = outcomes.iter().filter(|o| !o.passed).count();
            if failed == 0 {
                Ok(())
            } else {
                Err(Failure::Runtime(format!("{failed} check(s) failed")))
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // malformed arguments are configuration errors; help and version are not errors
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("otfs-sim: config error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("otfs-sim: error: {msg}");
            ExitCode::from(2)
        }
    }
}
