//! Sweep execution: domain cache, per-run metrics, resume and summary.
//!
//! Layout under the output directory:
//!
//! * `cache/<hash>.gdsd`: generated domains keyed by their spec hash.
//! * `runs/<run id>.csv`: per-round metrics of one run.
//! * `runs/<run id>.json`: run metadata, written last as a completion marker.
//! * `summary.csv`: mean and population std of final accuracy per sweep point.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::metrics::emit_metrics;
use super::spec::{assignment_label, DomainSpec, ExperimentSpec};
use crate::domainsim::{load_dataset, save_dataset, DomainDataset};
use crate::error::{Error, Result};
use crate::federation::{run_protocol, ProtocolConfig};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMeta {
    pub run_id: String,
    pub experiment: String,
    pub assignment: String,
    pub seed_index: usize,
    pub protocol: String,
    pub config: ProtocolConfig,
    pub final_accuracy: f64,
    pub metrics_file: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub assignment: String,
    pub protocol: String,
    pub scheduled: usize,
    pub completed: usize,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug)]
pub struct RunFailure {
    pub run_id: String,
    pub assignment: String,
    pub seed_index: usize,
    pub error: Error,
}

#[derive(Debug)]
pub struct ExperimentReport {
    pub executed: usize,
    pub skipped: usize,
    pub failures: Vec<RunFailure>,
    pub summary: Vec<SummaryRow>,
    pub output_dir: PathBuf,
}

impl ExperimentReport {
    /// 0 when every run completed; otherwise 3 if any run hit a numeric
    /// abort, else the code of the first failure.
    pub fn exit_code(&self) -> i32 {
        if self.failures.is_empty() {
            0
        } else if self.failures.iter().any(|f| f.error.exit_code() == 3) {
            3
        } else {
            self.failures[0].error.exit_code()
        }
    }
}

fn sha_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    serde_json::to_vec(value).expect("spec types serialize to JSON")
}

pub fn domain_key(spec: &DomainSpec) -> String {
    sha_hex(&json_bytes(spec))
}

/// Load a domain from the cache, generating and storing it on a miss.
pub fn cached_domain(spec: &DomainSpec, cache_dir: &Path) -> Result<DomainDataset> {
    let path = cache_dir.join(format!("{}.gdsd", domain_key(spec)));
    if path.exists() {
        log::debug!("domain {} from cache {}", spec.name, path.display());
        return load_dataset(&path);
    }
    let d = spec.generate()?;
    let tmp = path.with_extension("tmp");
    save_dataset(&d, &tmp)?;
    fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
    load_dataset(&path)
}

fn run_id(cfg: &ProtocolConfig, domain_keys: &[String], target: &str) -> String {
    let key = (cfg, domain_keys, target);
    sha_hex(&json_bytes(&key))[..16].to_string()
}

/// Final-round target accuracy from a metrics CSV.
pub fn final_accuracy_from_csv(path: &Path) -> Result<f64> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    let mut last = None;
    for row in rdr.records() {
        let row = row.map_err(|e| Error::io(path, std::io::Error::other(e)))?;
        last = Some(row[1].to_string());
    }
    let field = last.ok_or_else(|| Error::io(path, std::io::Error::other("metrics file has no rows")))?;
    field
        .parse()
        .map_err(|_| Error::io(path, std::io::Error::other(format!("bad target_acc `{field}`"))))
}

struct PlannedRun {
    id: String,
    label: String,
    seed_index: usize,
    cfg: ProtocolConfig,
}

fn mean_and_population_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn write_summary(rows: &[SummaryRow], path: &Path) -> Result<()> {
    let io = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(io)?;
    w.write_record(["config", "protocol", "scheduled", "completed", "mean_final_acc", "std_final_acc"])
        .map_err(io)?;
    for r in rows {
        w.write_record([
            r.assignment.clone(),
            r.protocol.clone(),
            r.scheduled.to_string(),
            r.completed.to_string(),
            r.mean.to_string(),
            r.std.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn execute(
    spec: &ExperimentSpec,
    run: &PlannedRun,
    sources: &[DomainDataset],
    target: &DomainDataset,
    runs_dir: &Path,
) -> Result<f64> {
    let out = run_protocol(&run.cfg, sources, target)?;
    let csv_path = runs_dir.join(format!("{}.csv", run.id));
    let tmp = runs_dir.join(format!("{}.csv.tmp", run.id));
    emit_metrics(&out.records, sources.len(), &tmp)?;
    fs::rename(&tmp, &csv_path).map_err(|e| Error::io(&csv_path, e))?;
    let meta = RunMeta {
        run_id: run.id.clone(),
        experiment: spec.name.clone(),
        assignment: run.label.clone(),
        seed_index: run.seed_index,
        protocol: run.cfg.protocol.label().to_string(),
        config: run.cfg.clone(),
        final_accuracy: out.final_accuracy(),
        metrics_file: format!("{}.csv", run.id),
    };
    let meta_path = runs_dir.join(format!("{}.json", run.id));
    let text = serde_json::to_string_pretty(&meta).expect("metadata serializes");
    fs::write(&meta_path, text + "\n").map_err(|e| Error::io(&meta_path, e))?;
    Ok(out.final_accuracy())
}

/// Run every (sweep point, seed) pair. Runs whose metrics and metadata
/// already exist are skipped. Up to `parallel` runs execute at once
/// (`None` uses the global rayon pool). Failed runs are reported, not
/// propagated; errors before any run starts (cache, layout) are returned.
pub fn run_experiment(spec: &ExperimentSpec, parallel: Option<usize>) -> Result<ExperimentReport> {
    spec.validate()?;
    let out_dir = spec.output_dir.clone();
    let cache_dir = out_dir.join("cache");
    let runs_dir = out_dir.join("runs");
    for dir in [&out_dir, &cache_dir, &runs_dir] {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let keys: Vec<String> = spec.domains.iter().map(domain_key).collect();
    let mut sources = Vec::new();
    let mut target = None;
    for d in &spec.domains {
        let data = cached_domain(d, &cache_dir)?;
        if d.name == spec.target {
            target = Some(data);
        } else {
            sources.push(data);
        }
    }
    let target = target.expect("validated target");

    let mut planned = Vec::new();
    for assignment in spec.assignments() {
        for seed_index in 0..spec.num_seeds {
            let cfg = spec.config_for(&assignment, seed_index)?;
            planned.push(PlannedRun {
                id: run_id(&cfg, &keys, &spec.target),
                label: assignment_label(&assignment),
                seed_index,
                cfg,
            });
        }
    }

    let is_done = |run: &PlannedRun| {
        runs_dir.join(format!("{}.json", run.id)).exists() && runs_dir.join(format!("{}.csv", run.id)).exists()
    };
    let work = || -> Vec<(bool, Result<f64>)> {
        planned
            .par_iter()
            .map(|run| {
                if is_done(run) {
                    log::info!("skipping completed run {} ({}, seed {})", run.id, run.label, run.seed_index);
                    (true, final_accuracy_from_csv(&runs_dir.join(format!("{}.csv", run.id))))
                } else {
                    log::info!("run {} ({}, seed {})", run.id, run.label, run.seed_index);
                    (false, execute(spec, run, &sources, &target, &runs_dir))
                }
            })
            .collect()
    };
    let results = match parallel {
        Some(p) => rayon::ThreadPoolBuilder::new()
            .num_threads(p.max(1))
            .build()
            .map_err(|e| Error::Config(format!("parallel: {e}")))?
            .install(work),
        None => work(),
    };

    let mut report = ExperimentReport {
        executed: 0,
        skipped: 0,
        failures: Vec::new(),
        summary: Vec::new(),
        output_dir: out_dir.clone(),
    };
    let mut finals: Vec<Vec<f64>> = vec![Vec::new(); spec.assignments().len()];
    for (k, (run, (skipped, result))) in planned.iter().zip(results).enumerate() {
        match result {
            Ok(acc) => {
                if skipped {
                    report.skipped += 1;
                } else {
                    report.executed += 1;
                }
                finals[k / spec.num_seeds].push(acc);
            }
            Err(error) => {
                log::error!("run {} ({}, seed {}) failed: {error}", run.id, run.label, run.seed_index);
                report.failures.push(RunFailure {
                    run_id: run.id.clone(),
                    assignment: run.label.clone(),
                    seed_index: run.seed_index,
                    error,
                });
            }
        }
    }
    for (assignment, accs) in spec.assignments().iter().zip(&finals) {
        let (mean, std) = mean_and_population_std(accs);
        report.summary.push(SummaryRow {
            assignment: assignment_label(assignment),
            protocol: spec.config_for(assignment, 0)?.protocol.label().to_string(),
            scheduled: spec.num_seeds,
            completed: accs.len(),
            mean,
            std,
        });
    }
    write_summary(&report.summary, &out_dir.join("summary.csv"))?;
    Ok(report)
}
