//! `gala`: run federated domain adaptation experiments from TOML configs.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numeric abort, 4 I/O error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gala_core::experiment::{cached_domain, parse_config, run_experiment, ExperimentSpec};
use gala_core::federation::similarity_matrix;
use gala_core::gradsuite::{gradient_suite, GRAD_TOLERANCE};
use gala_core::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "gala", version, about = "Federated multi-source domain adaptation simulator")]
struct Cli {
    /// Base protocol seed, overriding `protocol.seed` in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory, overriding `output_dir` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads; runs of a sweep execute concurrently up to this many.
    #[arg(long, global = true)]
    parallel: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Execute every sweep point and seed of an experiment config.
    Run { config: PathBuf },
    /// Train on each domain alone and test on every domain.
    Simmatrix { config: PathBuf },
    /// Check analytic gradients against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        trials: usize,
    },
}

fn load_spec(path: &Path, cli: &Cli) -> Result<ExperimentSpec> {
    let mut spec = parse_config(path)?;
    if let Some(seed) = cli.seed {
        spec.protocol.seed = seed;
    }
    if let Some(out) = &cli.out {
        spec.output_dir = out.clone();
    }
    spec.validate()?;
    Ok(spec)
}

fn run(path: &Path, cli: &Cli) -> Result<i32> {
    let spec = load_spec(path, cli)?;
    let report = run_experiment(&spec, cli.parallel)?;
    for row in &report.summary {
        println!(
            "{} [{}]: {:.4} ± {:.4} over {}/{} seeds",
            row.assignment, row.protocol, row.mean, row.std, row.completed, row.scheduled
        );
    }
    for f in &report.failures {
        eprintln!("run {} ({}, seed {}) failed: {}", f.run_id, f.assignment, f.seed_index, f.error);
    }
    println!(
        "{} runs executed, {} skipped, {} failed; results in {}",
        report.executed,
        report.skipped,
        report.failures.len(),
        report.output_dir.display()
    );
    Ok(report.exit_code())
}

fn simmatrix(path: &Path, cli: &Cli) -> Result<i32> {
    let spec = load_spec(path, cli)?;
    let cache = spec.output_dir.join("cache");
    fs::create_dir_all(&cache).map_err(|e| Error::Io { path: cache.clone(), source: e })?;
    let domains = spec
        .domains
        .iter()
        .map(|d| cached_domain(d, &cache))
        .collect::<Result<Vec<_>>>()?;
    let compute = || similarity_matrix(&domains, &spec.protocol);
    let matrix = match cli.parallel {
        Some(p) => rayon_pool(p)?.install(compute)?,
        None => compute()?,
    };
    let names: Vec<&str> = spec.domains.iter().map(|d| d.name.as_str()).collect();
    let mut text = format!("train,{}\n", names.join(","));
    for (name, row) in names.iter().zip(&matrix) {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        text.push_str(&format!("{name},{}\n", cells.join(",")));
    }
    let out = spec.output_dir.join("simmatrix.csv");
    fs::write(&out, &text).map_err(|e| Error::Io { path: out.clone(), source: e })?;
    print!("{text}");
    Ok(0)
}

fn rayon_pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Config(format!("parallel: {e}")))
}

fn gradcheck(trials: usize, cli: &Cli) -> Result<i32> {
    let report = gradient_suite(trials, cli.seed.unwrap_or(0))?;
    println!(
        "cross-entropy max relative error {:.3e}, IGD max relative error {:.3e} over {} trials ({} kink redraws)",
        report.ce_max_error, report.igd_max_error, report.trials, report.redraws
    );
    if report.passed() {
        println!("gradients agree within {GRAD_TOLERANCE:e}");
        Ok(0)
    } else {
        eprintln!("gradient mismatch above {GRAD_TOLERANCE:e}");
        Ok(3)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config } => run(config, &cli),
        Command::Simmatrix { config } => simmatrix(config, &cli),
        Command::Gradcheck { trials } => gradcheck(*trials, &cli),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
