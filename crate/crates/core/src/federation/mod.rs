//! Round-based protocols over simulated clients.
//!
//! Within a round, per-source work (centroids, local training, classifier
//! fine-tuning) runs on the rayon pool; every stochastic step draws from a
//! stream derived from `(seed, stage, round, client)` and all reductions run
//! in source order, so results do not depend on scheduling.

mod client;
mod comm;
mod config;
mod protocols;
mod simmatrix;

pub use client::{accuracy, extract_features, finetune_classifier, train_supervised};
pub use comm::{account_communication, ModelSize, BYTES_PER_VALUE};
pub use config::{Protocol, ProtocolConfig};
pub use protocols::{
    initial_model, pair_from_index, run_fact_idd, run_gala, run_oracle, run_protocol,
    run_source_only, sample_pair, split_target,
};
pub use simmatrix::similarity_matrix;

use crate::nn::{Classifier, FeatureExtractor};

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    pub target_acc: f64,
    /// Target-side discrepancy loss; `None` for protocols without that step.
    pub igd_loss: Option<f64>,
    pub mean_source_loss: f64,
    /// Local training loss per source; `None` for sources idle this round.
    pub source_losses: Vec<Option<f64>>,
    pub bytes_up: u64,
    pub bytes_down: u64,
    /// Maximum over the round's participants (active sources and the
    /// target) of their local compute time.
    pub wall_max_client_ms: f64,
    /// Aggregation, partitioning and merging on the server.
    pub wall_server_ms: f64,
    /// Global weight per source (empty for the oracle).
    pub weights: Vec<f64>,
    pub similarity: Vec<f64>,
    /// Sources in the first group (GALA) or the active pair (random pair).
    pub g1_mask: Option<u128>,
    /// `max |Σ_i w_Gi F_Gi − Σ_n w_n F_n|` over classifier parameters.
    pub merge_gap: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub protocol: String,
    pub records: Vec<RoundRecord>,
    pub extractor: FeatureExtractor,
    pub classifier: Classifier,
    pub model_size: ModelSize,
}

impl RunOutput {
    pub fn final_accuracy(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.target_acc)
    }
}
