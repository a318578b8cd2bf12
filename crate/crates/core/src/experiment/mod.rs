//! Experiment plumbing: TOML configs with sweeps, cached domain generation,
//! per-run metrics CSVs and a summary over seeds.

mod metrics;
mod runner;
mod spec;

pub use metrics::{emit_metrics, metrics_header, write_metrics};
pub use runner::{
    cached_domain, domain_key, final_accuracy_from_csv, run_experiment, ExperimentReport, RunFailure,
    RunMeta, SummaryRow,
};
pub use spec::{assignment_label, parse_config, Assignment, DomainSpec, ExperimentSpec, GeneratorSpec, SweepSpec};
