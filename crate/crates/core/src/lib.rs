//! Desk-scale simulator for federated unsupervised multi-source domain
//! adaptation.
//!
//! The crate implements GALA (temperature-scaled centroid weighting of
//! sources plus inter-group discrepancy minimization on the target) together
//! with its comparison protocols: a random-pair discrepancy variant, full
//! pairwise discrepancy, source-only federated averaging and a supervised
//! target oracle.
//!
//! * [`nn`]: dense networks with hand-written backpropagation.
//! * [`domainsim`]: shifted synthetic domains, raster transforms, dataset files.
//! * [`weighting`]: soft centroids, similarity scores, source weights.
//! * [`discrepancy`]: partitions, group classifiers, discrepancy losses.
//! * [`federation`]: the round-based protocols and accounting.
//! * [`experiment`]: config files, sweeps, metrics CSVs.
//! * [`gradsuite`]: randomized finite-difference gradient checks.

pub mod discrepancy;
pub mod domainsim;
pub mod error;
pub mod experiment;
pub mod federation;
pub mod gradsuite;
pub mod nn;
pub mod rng;
pub mod weighting;

pub use error::{Error, Result};
