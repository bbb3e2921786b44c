use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mvtransfer::harness::output::{
    emit_csv, emit_svg_plot, to_json_string, write_json, write_samples, SweepSummary, PROTOCOL_NOTE,
};
use mvtransfer::harness::sweep::{Instance, STUDENT_STREAM};
use mvtransfer::harness::{
    fit_rate, run_cca_suite, run_comparison, run_rate_sweep, stability_probe, ExperimentConfig,
};
use mvtransfer::synth::{derive_seed, sample_paired};
use mvtransfer::Error;

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_SOLVER: u8 = 3;
const EXIT_ASSERT: u8 = 4;

#[derive(Parser)]
#[command(
    name = "mvtransfer",
    version,
    about = "Two-view transfer experiments for linear predictors"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the randomized CCA identity suite.
    CcaCheck {
        #[arg(long, default_value_t = 1000)]
        instances: usize,
        #[arg(long, default_value_t = 8)]
        max_dim: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Sweep n for one pipeline and fit the log-log rate.
    RateSweep {
        config: PathBuf,
        /// Exit with status 4 when the fitted slope leaves the config's slope_band.
        #[arg(long)]
        assert: bool,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Paired per-seed comparison of two pipelines.
    Compare {
        config_a: PathBuf,
        config_b: PathBuf,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Replace-one stability check for ridge-regularized ERM.
    StabilityProbe {
        config: PathBuf,
        #[arg(long)]
        assert: bool,
    },
    /// Write one training sample of the configured model as CSV.
    GenData {
        config: PathBuf,
        out: PathBuf,
        /// Sample size; defaults to the first entry of n_grid.
        #[arg(long)]
        n: Option<usize>,
    },
}

enum Failure {
    Error(Error),
    Assert(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Assert(msg)) => {
            eprintln!("assertion failed: {msg}");
            ExitCode::from(EXIT_ASSERT)
        }
        Err(Failure::Error(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config(_) => EXIT_CONFIG,
                Error::TooManyFailures { .. } | Error::Convergence { .. } => EXIT_SOLVER,
                _ => EXIT_FAILURE,
            })
        }
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::CcaCheck {
            instances,
            max_dim,
            seed,
        } => {
            if max_dim == 0 {
                return Err(Error::Config("--max-dim must be positive".into()).into());
            }
            let report = run_cca_suite(instances, max_dim, seed)?;
            for c in &report.checks {
                println!(
                    "{} {} (instances {}, max error {:.3e}, tolerance {:.1e})",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.instances,
                    c.max_error,
                    c.tolerance
                );
            }
            if !report.passed() {
                return Err(Failure::Assert(
                    "CCA identity suite reported failures".into(),
                ));
            }
        }
        Command::RateSweep {
            config,
            assert,
            output_dir,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let dir = output_dir.unwrap_or_else(|| cfg.output_dir.clone());
            let result = run_rate_sweep(&cfg)?;
            let fit = fit_rate(&result);
            emit_csv(&result, &dir.join("sweep.csv"))?;
            emit_svg_plot(&result, fit.as_ref().ok(), &dir.join("rate.svg"))?;
            let summary = SweepSummary {
                pipeline: result.pipeline.name(),
                protocol: PROTOCOL_NOTE,
                rate_fit: fit.as_ref().ok(),
                rate_fit_error: fit.as_ref().err().map(|e| e.to_string()),
                slope_band: cfg.slope_band,
                per_n: &result.summary,
                failures: result.failures,
                failure_messages: &result.failure_messages,
            };
            write_json(&summary, &dir.join("summary.json"))?;
            for s in &result.summary {
                println!(
                    "n={:<6} median={:.4e} mean={:.4e} se={:.2e} floored={} failures={}",
                    s.n, s.median, s.mean, s.std_error, s.floored, s.failures
                );
            }
            match &fit {
                Ok(f) => println!(
                    "slope {:.4} (r2 {:.4}, n {}..{}, {} points)",
                    f.slope, f.r_squared, f.n_range_used.0, f.n_range_used.1, f.points_used
                ),
                Err(e) => println!("no rate fit: {e}"),
            }
            println!("wrote {}", dir.display());
            if assert {
                check_band(&cfg, fit.as_ref().ok().map(|f| f.slope), fit.as_ref().err())?;
            }
        }
        Command::Compare {
            config_a,
            config_b,
            output_dir,
        } => {
            let a = ExperimentConfig::load(&config_a)?;
            let b = ExperimentConfig::load(&config_b)?;
            let comparison = run_comparison(&a, &b)?;
            println!("{} vs {}", comparison.pipeline_a, comparison.pipeline_b);
            for r in &comparison.rows {
                println!(
                    "n={:<6} win_rate={:.3} ({}/{}) median_ratio={:.4}",
                    r.n, r.win_rate, r.wins, r.paired, r.median_ratio
                );
            }
            if let Some(dir) = output_dir {
                write_json(&comparison, &dir.join("comparison.json"))?;
            }
        }
        Command::StabilityProbe { config, assert } => {
            let cfg = ExperimentConfig::load(&config)?;
            let report = stability_probe(&cfg, cfg.probe.replacements)?;
            print!("{}", to_json_string(&report)?);
            if assert && !report.passed() {
                return Err(Failure::Assert(format!(
                    "stability probe: inequality holds = {}, displacement violations = {}",
                    report.inequality_holds, report.displacement_violations
                )));
            }
        }
        Command::GenData { config, out, n } => {
            let cfg = ExperimentConfig::load(&config)?;
            cfg.validate()?;
            let instance = Instance::new(&cfg)?;
            let n = n.unwrap_or(cfg.n_grid[0]);
            let seed = derive_seed(cfg.master_seed, &[STUDENT_STREAM]);
            let samples = sample_paired(
                &instance.model,
                Some(&instance.labels),
                n,
                seed,
                cfg.boundedness,
            )?;
            write_samples(&samples, &out)?;
            println!("wrote {} samples to {}", samples.len(), out.display());
        }
    }
    Ok(())
}

fn check_band(
    cfg: &ExperimentConfig,
    slope: Option<f64>,
    fit_error: Option<&Error>,
) -> Result<(), Failure> {
    let Some([low, high]) = cfg.slope_band else {
        return Err(Error::Config("--assert needs slope_band in the config".into()).into());
    };
    match slope {
        Some(s) if (low..=high).contains(&s) => Ok(()),
        Some(s) => Err(Failure::Assert(format!(
            "slope {s:.4} outside [{low}, {high}]"
        ))),
        None => Err(Failure::Assert(format!(
            "no slope to check against [{low}, {high}]: {}",
            fit_error.map(|e| e.to_string()).unwrap_or_default()
        ))),
    }
}
