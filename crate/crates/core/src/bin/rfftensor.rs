use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rfftensor::estimators::Method;
use rfftensor::harness::{
    run_convergence, run_crlb_only, run_sweep, write_convergence, write_rows, ExperimentConfig, SweepAxis,
};

#[derive(Parser)]
#[command(name = "rfftensor", version, about = "Monte-Carlo sweeps for tensor-based DoA and RF fingerprint estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// RMSE of every method versus SNR.
    SweepSnr(Common),
    /// RMSE versus the I/Q amplitude imbalance scale at fixed SNR.
    SweepAmplitude(Common),
    /// RMSE versus the I/Q phase imbalance scale at fixed SNR.
    SweepPhase(Common),
    /// Per-iteration TALS loss traces.
    Convergence(Common),
    /// Cramér-Rao bounds only, versus SNR.
    CrlbOnly(Common),
}

#[derive(Args)]
struct Common {
    /// Scenario file (TOML).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    /// Output CSV; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated subset of TALS,KRF,LS.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<Method>>,
    /// Worker threads; all cores when absent.
    #[arg(long)]
    jobs: Option<usize>,
}

impl Common {
    fn load(&self) -> rfftensor::Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.run.seed = seed;
        }
        if let Some(trials) = self.trials {
            cfg.run.trials = trials;
        }
        if let Some(methods) = &self.methods {
            cfg.run.methods = methods.clone();
        }
        if let Some(out) = &self.out {
            cfg.run.out = Some(out.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn output(cfg: &ExperimentConfig) -> rfftensor::Result<Box<dyn Write>> {
    Ok(match &cfg.run.out {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            Box::new(BufWriter::new(File::create(path)?))
        }
        None => Box::new(io::stdout().lock()),
    })
}

fn run(cli: Cli) -> rfftensor::Result<()> {
    let start = Instant::now();
    let (common, axis) = match &cli.command {
        Command::SweepSnr(c) => (c, Some(SweepAxis::SnrDb)),
        Command::SweepAmplitude(c) => (c, Some(SweepAxis::AmplitudeScale)),
        Command::SweepPhase(c) => (c, Some(SweepAxis::PhaseScale)),
        Command::Convergence(c) | Command::CrlbOnly(c) => (c, None),
    };
    let cfg = common.load()?;
    match (&cli.command, axis) {
        (_, Some(axis)) => {
            let rows = run_sweep(&cfg, axis, common.jobs)?;
            write_rows(&rows, output(&cfg)?)?;
        }
        (Command::Convergence(_), None) => {
            let report = run_convergence(&cfg, common.jobs)?;
            for &snr in &cfg.sweep.convergence_snr_db {
                if let Some(med) = report.median_iterations(snr) {
                    eprintln!("{snr} dB: median {med} iterations");
                }
            }
            if !report.failures.is_empty() {
                eprintln!("{} trials failed", report.failures.len());
            }
            write_convergence(&report.rows, output(&cfg)?)?;
        }
        _ => {
            let rows = run_crlb_only(&cfg, common.jobs)?;
            write_rows(&rows, output(&cfg)?)?;
        }
    }
    eprintln!("done in {:.1} s", start.elapsed().as_secs_f64());
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
