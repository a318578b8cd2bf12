//! Cross-domain transfer matrix: train on one domain, test on every domain.

use rayon::prelude::*;

use super::client::{accuracy, train_supervised};
use super::config::{Protocol, ProtocolConfig};
use super::protocols::initial_model;
use crate::domainsim::{DomainDataset, LabeledSamples};
use crate::error::{Error, Result};
use crate::nn::lr_schedule;
use crate::rng::{derive_seed, rng_from};

const SIM_SPLIT: u64 = 11;
const SIM_TRAIN: u64 = 12;

/// Entry `(i, j)` is the test accuracy on domain `j` of a model trained for
/// `cfg.rounds` epochs on domain `i`'s training split alone. The protocol
/// field of `cfg` is ignored.
pub fn similarity_matrix(domains: &[DomainDataset], cfg: &ProtocolConfig) -> Result<Vec<Vec<f64>>> {
    ProtocolConfig {
        protocol: Protocol::Oracle,
        ..cfg.clone()
    }
    .validate(0)?;
    let first = domains
        .first()
        .ok_or_else(|| Error::Config("similarity matrix needs at least one domain".into()))?;
    for d in domains {
        if d.feature_dim() != first.feature_dim() || d.num_classes() != first.num_classes() {
            return Err(Error::Config(format!(
                "domain {} is incompatible with {}",
                d.name(),
                first.name()
            )));
        }
    }
    let splits: Vec<(LabeledSamples, LabeledSamples)> = domains
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let (train, test) = d.split(cfg.target_test_fraction, derive_seed(cfg.seed, &[SIM_SPLIT, i as u64]))?;
            Ok((train.labeled()?, test.labeled()?))
        })
        .collect::<Result<_>>()?;
    let rows: Vec<Result<Vec<f64>>> = splits
        .par_iter()
        .enumerate()
        .map(|(i, (train, _))| {
            let (mut g, mut f) = initial_model(cfg, first.feature_dim(), first.num_classes())?;
            for epoch in 0..cfg.rounds {
                let lr = lr_schedule(cfg.lr0, epoch, cfg.gamma);
                let mut rng = rng_from(cfg.seed, &[SIM_TRAIN, i as u64, epoch as u64]);
                train_supervised(&mut g, &mut f, train, cfg, lr, &mut rng).map_err(|e| e.at(epoch, &train.name))?;
            }
            Ok(splits.iter().map(|(_, test)| accuracy(&g, &f, test)).collect())
        })
        .collect();
    rows.into_iter().collect()
}
