//! Simulated communication volume.
//!
//! Counts 4 bytes per parameter or centroid component crossing the
//! source/server boundary in one round. Traffic between the server and the
//! target is not counted.

use super::config::Protocol;

pub const BYTES_PER_VALUE: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelSize {
    pub extractor: usize,
    pub classifier: usize,
    pub num_classes: usize,
    pub feature_dim: usize,
}

/// `(bytes_up, bytes_down)` for one round with `num_sources` sources.
///
/// * GALA and full pairwise: each source uploads its centroids and masses,
///   its extractor and its fine-tuned classifier
///   (`|G| + |F| + C·d + C`), and receives the global model and the
///   aggregated extractor (`2|G| + |F|`).
/// * Random pair: two sources each exchange one model in each direction.
/// * Source-only: every source exchanges one model in each direction.
/// * Oracle: no sources, no traffic.
pub fn account_communication(protocol: Protocol, num_sources: usize, size: ModelSize) -> (u64, u64) {
    let (g, f) = (size.extractor as u64, size.classifier as u64);
    let (c, d) = (size.num_classes as u64, size.feature_dim as u64);
    let n = num_sources as u64;
    let (up, down) = match protocol {
        Protocol::Gala | Protocol::FullPairwise => (n * (g + f + c * d + c), n * (2 * g + f)),
        Protocol::FactIdd => (2 * (g + f), 2 * (g + f)),
        Protocol::SourceOnly => (n * (g + f), n * (g + f)),
        Protocol::Oracle => (0, 0),
    };
    (up * BYTES_PER_VALUE, down * BYTES_PER_VALUE)
}
