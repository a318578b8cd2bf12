//! Protocol configuration with the documented defaults.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::weighting::WeightingScheme;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Gala,
    FactIdd,
    FullPairwise,
    SourceOnly,
    Oracle,
}

impl Protocol {
    /// Label written to run metadata.
    pub fn label(self) -> &'static str {
        match self {
            Protocol::Gala => "gala",
            Protocol::FactIdd => "fact_idd (reimplementation)",
            Protocol::FullPairwise => "full_pairwise",
            Protocol::SourceOnly => "source_only",
            Protocol::Oracle => "oracle",
        }
    }

    pub fn min_sources(self) -> usize {
        match self {
            Protocol::Gala | Protocol::FactIdd | Protocol::FullPairwise => 2,
            Protocol::SourceOnly => 1,
            Protocol::Oracle => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    pub protocol: Protocol,
    pub weighting: WeightingScheme,
    /// Run the target-side discrepancy step (GALA and full pairwise).
    pub use_igd: bool,
    pub tau: f64,
    pub rounds: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub gamma: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub mixup_alpha: Option<f64>,
    pub hidden_dims: Vec<usize>,
    pub feature_dim: usize,
    /// Fraction of the target held out for evaluation.
    pub target_test_fraction: f64,
    /// When false the wall-clock columns are written as zero so metrics are
    /// reproducible byte for byte.
    pub record_wall_time: bool,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            protocol: Protocol::Gala,
            weighting: WeightingScheme::MdmgbPlus,
            use_igd: true,
            tau: 1.0,
            rounds: 500,
            local_epochs: 1,
            batch_size: 128,
            lr0: 0.01,
            gamma: 0.75,
            momentum: 0.9,
            weight_decay: 5e-4,
            seed: 0,
            mixup_alpha: None,
            hidden_dims: vec![64],
            feature_dim: 32,
            target_test_fraction: 0.2,
            record_wall_time: false,
        }
    }
}

impl ProtocolConfig {
    /// Checks ranges and, given the number of sources, the protocol's
    /// minimum.
    pub fn validate(&self, num_sources: usize) -> Result<()> {
        let fail = |field: &str, msg: String| Err(Error::Config(format!("protocol.{field}: {msg}")));
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return fail("tau", format!("must be positive, got {}", self.tau));
        }
        if self.rounds == 0 {
            return fail("rounds", "must be at least 1".into());
        }
        if self.local_epochs == 0 {
            return fail("local_epochs", "must be at least 1".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size", "must be at least 1".into());
        }
        if !(self.lr0 >= 0.0 && self.lr0.is_finite()) {
            return fail("lr0", format!("must be nonnegative, got {}", self.lr0));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return fail("gamma", format!("must lie in (0, 1], got {}", self.gamma));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail("momentum", format!("must lie in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return fail("weight_decay", format!("must be nonnegative, got {}", self.weight_decay));
        }
        if let Some(a) = self.mixup_alpha {
            if !(a > 0.0 && a.is_finite()) {
                return fail("mixup_alpha", format!("must be positive, got {a}"));
            }
        }
        if self.feature_dim == 0 || self.hidden_dims.contains(&0) {
            return fail("hidden_dims", "layer sizes must be positive".into());
        }
        if !(self.target_test_fraction > 0.0 && self.target_test_fraction < 1.0) {
            return fail(
                "target_test_fraction",
                format!("must lie in (0, 1), got {}", self.target_test_fraction),
            );
        }
        if num_sources < self.protocol.min_sources() {
            return fail(
                "protocol",
                format!(
                    "{} needs at least {} sources, got {num_sources}",
                    self.protocol.label(),
                    self.protocol.min_sources()
                ),
            );
        }
        if num_sources > 128 {
            return fail("protocol", format!("at most 128 sources are supported, got {num_sources}"));
        }
        Ok(())
    }
}
