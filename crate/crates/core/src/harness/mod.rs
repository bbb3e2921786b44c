//! Experiment harness: configuration, sweeps, comparisons, probes and artifacts.

pub mod config;
pub mod output;
pub mod probe;
pub mod suite;
pub mod sweep;

pub use config::{ExperimentConfig, PipelineKind};
pub use probe::{stability_probe, ProbeReport};
pub use suite::{run_cca_suite, SuiteReport};
pub use sweep::{
    compare_results, fit_rate, run_comparison, run_rate_sweep, RateFit, SweepResult, SweepRow,
};
