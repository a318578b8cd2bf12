//! Experiment config files.
//!
//! ```toml
//! name = "tau-sweep"
//! target = "t"
//! num_seeds = 5
//!
//! [protocol]
//! rounds = 100
//!
//! [[domain]]
//! name = "t"
//! generator = { kind = "gaussian", classes = 4, per_class = 200, dim = 8, seed = 1 }
//! transforms = [{ kind = "rotate", angle = 0.9 }]
//!
//! [[sweep]]
//! field = "tau"
//! values = [0.2, 1.0, 3.0]
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::domainsim::{apply_chain, gen_gaussian_domain, gen_glyph_domain, DomainDataset, GlyphStyle, TransformSpec};
use crate::error::{Error, Result};
use crate::federation::ProtocolConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeneratorSpec {
    Gaussian {
        classes: usize,
        per_class: usize,
        dim: usize,
        #[serde(default)]
        seed: u64,
    },
    Glyph {
        classes: usize,
        per_class: usize,
        canvas: usize,
        #[serde(default = "one")]
        channels: usize,
        #[serde(default)]
        seed: u64,
    },
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub name: String,
    pub generator: GeneratorSpec,
    #[serde(default)]
    pub transforms: Vec<TransformSpec>,
}

impl DomainSpec {
    pub fn generate(&self) -> Result<DomainDataset> {
        let base = match self.generator {
            GeneratorSpec::Gaussian {
                classes,
                per_class,
                dim,
                seed,
            } => gen_gaussian_domain(&self.name, classes, per_class, dim, &[], seed)?,
            GeneratorSpec::Glyph {
                classes,
                per_class,
                canvas,
                channels,
                seed,
            } => gen_glyph_domain(&self.name, classes, per_class, canvas, channels, GlyphStyle::default(), seed)?,
        };
        apply_chain(base, &self.transforms)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    /// A protocol field, optionally prefixed with `protocol.`.
    pub field: String,
    pub values: Vec<toml::Value>,
}

impl SweepSpec {
    pub fn key(&self) -> &str {
        self.field.strip_prefix("protocol.").unwrap_or(&self.field)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    pub target: String,
    #[serde(default)]
    pub protocol: ProtocolConfig,
    #[serde(rename = "domain")]
    pub domains: Vec<DomainSpec>,
    #[serde(default, rename = "sweep")]
    pub sweeps: Vec<SweepSpec>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "one")]
    pub num_seeds: usize,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

/// One assignment of sweep values, in sweep declaration order.
pub type Assignment = Vec<(String, toml::Value)>;

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: ExperimentSpec = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let hits = self.domains.iter().filter(|d| d.name == self.target).count();
        if hits != 1 {
            return Err(Error::Config(format!(
                "target: `{}` must name exactly one domain, found {hits}",
                self.target
            )));
        }
        for (i, d) in self.domains.iter().enumerate() {
            if self.domains[..i].iter().any(|o| o.name == d.name) {
                return Err(Error::Config(format!("domain: duplicate name `{}`", d.name)));
            }
        }
        if self.num_seeds == 0 {
            return Err(Error::Config("num_seeds: must be at least 1".into()));
        }
        for sweep in &self.sweeps {
            if sweep.values.is_empty() {
                return Err(Error::Config(format!("sweep.{}: no values", sweep.field)));
            }
        }
        for assignment in self.assignments() {
            self.config_for(&assignment, 0)?
                .validate(self.domains.len() - 1)?;
        }
        Ok(())
    }

    /// Cartesian product of all sweep value lists.
    pub fn assignments(&self) -> Vec<Assignment> {
        self.sweeps.iter().fold(vec![Vec::new()], |acc, sweep| {
            acc.iter()
                .flat_map(|prefix| {
                    sweep.values.iter().map(move |v| {
                        let mut a = prefix.clone();
                        a.push((sweep.key().to_string(), v.clone()));
                        a
                    })
                })
                .collect()
        })
    }

    /// Protocol config for one assignment and seed index; the run seed is
    /// `protocol.seed + seed_index`.
    pub fn config_for(&self, assignment: &Assignment, seed_index: usize) -> Result<ProtocolConfig> {
        let mut table = toml::Value::try_from(&self.protocol)
            .map_err(|e| Error::Config(format!("protocol: {e}")))?;
        let map = table.as_table_mut().expect("protocol serializes to a table");
        for (field, value) in assignment {
            if !map.contains_key(field) && field != "mixup_alpha" {
                return Err(Error::Config(format!("sweep.{field}: no such protocol field")));
            }
            map.insert(field.clone(), value.clone());
        }
        let mut cfg: ProtocolConfig = table
            .try_into()
            .map_err(|e| Error::Config(format!("sweep: {e}")))?;
        cfg.seed = cfg.seed.wrapping_add(seed_index as u64);
        Ok(cfg)
    }

    pub fn total_runs(&self) -> usize {
        self.assignments().len() * self.num_seeds
    }
}

pub fn assignment_label(assignment: &Assignment) -> String {
    if assignment.is_empty() {
        return "base".into();
    }
    assignment
        .iter()
        .map(|(k, v)| match v {
            toml::Value::String(s) => format!("{k}={s}"),
            other => format!("{k}={other}"),
        })
        .collect::<Vec<_>>()
        .join(",")
}

pub fn parse_config(path: &Path) -> Result<ExperimentSpec> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ExperimentSpec::from_toml(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}
