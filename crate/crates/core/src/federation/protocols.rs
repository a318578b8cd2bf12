//! Round loops for GALA and the comparison protocols.

use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;

use super::client::{accuracy, extract_features, finetune_classifier, train_supervised};
use super::comm::{account_communication, ModelSize};
use super::config::{Protocol, ProtocolConfig};
use super::{RoundRecord, RunOutput};
use crate::discrepancy::{
    adversarial_update, random_partition, Discrepancy, GroupClassifier,
};
use crate::domainsim::{DomainDataset, LabeledSamples, UnlabeledSamples};
use crate::error::{Error, Result};
use crate::nn::{lr_schedule, Classifier, FeatureExtractor, OptimizerState, ParamVec};
use crate::rng::{derive_seed, rng_from};
use crate::weighting::{compute_centroids, similarity_score, uniform_weights, DomainWeights};

// stream tags for derived seeds
const SPLIT: u64 = 1;
const INIT: u64 = 2;
const TRAIN: u64 = 3;
const FINETUNE: u64 = 4;
const PARTITION: u64 = 5;
const TARGET: u64 = 6;
const PAIR: u64 = 7;

/// Data and initial model shared by every protocol.
struct Setup {
    sources: Vec<LabeledSamples>,
    target_train: UnlabeledSamples,
    target_test: LabeledSamples,
    g: FeatureExtractor,
    f: Classifier,
}

impl Setup {
    fn size(&self) -> ModelSize {
        ModelSize {
            extractor: self.g.params().len(),
            classifier: self.f.params().len(),
            num_classes: self.f.num_classes(),
            feature_dim: self.f.input_dim(),
        }
    }
}

/// Held-out split of the target: `(train, test)`, seeded from the config.
pub fn split_target(cfg: &ProtocolConfig, target: &DomainDataset) -> Result<(DomainDataset, DomainDataset)> {
    target.split(cfg.target_test_fraction, derive_seed(cfg.seed, &[SPLIT]))
}

pub fn initial_model(cfg: &ProtocolConfig, input_dim: usize, num_classes: usize) -> Result<(FeatureExtractor, Classifier)> {
    let mut rng = rng_from(cfg.seed, &[INIT]);
    let g = FeatureExtractor::new(input_dim, &cfg.hidden_dims, cfg.feature_dim, &mut rng)?;
    let f = Classifier::new(cfg.feature_dim, num_classes, &mut rng)?;
    Ok((g, f))
}

fn check_domains(sources: &[DomainDataset], target: &DomainDataset) -> Result<()> {
    for s in sources {
        if s.feature_dim() != target.feature_dim() {
            return Err(Error::Config(format!(
                "source {} has feature dim {}, target {} has {}",
                s.name(),
                s.feature_dim(),
                target.name(),
                target.feature_dim()
            )));
        }
        if s.num_classes() != target.num_classes() {
            return Err(Error::Config(format!(
                "source {} has {} classes, target {} has {}",
                s.name(),
                s.num_classes(),
                target.name(),
                target.num_classes()
            )));
        }
        if s.labels().is_none() {
            return Err(Error::Config(format!("source {} is unlabeled", s.name())));
        }
    }
    Ok(())
}

fn prepare(cfg: &ProtocolConfig, sources: &[DomainDataset], target: &DomainDataset) -> Result<Setup> {
    cfg.validate(sources.len())?;
    check_domains(sources, target)?;
    let (train, test) = split_target(cfg, target)?;
    let (g, f) = initial_model(cfg, target.feature_dim(), target.num_classes())?;
    Ok(Setup {
        sources: sources.iter().map(|s| s.labeled()).collect::<Result<_>>()?,
        target_train: train.unlabeled(),
        target_test: test.labeled()?,
        g,
        f,
    })
}

fn ms_since(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

/// Collect per-client results in index order so the first error reported is
/// independent of scheduling.
fn ordered<T>(results: Vec<Result<T>>) -> Result<Vec<T>> {
    results.into_iter().collect()
}

struct LocalUpdate {
    g: FeatureExtractor,
    f: Classifier,
    loss: f64,
    ms: f64,
}

fn local_train(
    cfg: &ProtocolConfig,
    g: &FeatureExtractor,
    f: &Classifier,
    src: &LabeledSamples,
    round: usize,
    client: usize,
    lr: f64,
) -> Result<LocalUpdate> {
    let start = Instant::now();
    let (mut gn, mut fnn) = (g.clone(), f.clone());
    let mut rng = rng_from(cfg.seed, &[TRAIN, round as u64, client as u64]);
    let loss = train_supervised(&mut gn, &mut fnn, src, cfg, lr, &mut rng).map_err(|e| e.at(round, &src.name))?;
    Ok(LocalUpdate {
        g: gn,
        f: fnn,
        loss,
        ms: ms_since(start),
    })
}

fn weighted_extractor(template: &FeatureExtractor, parts: &[(&FeatureExtractor, f64)]) -> Result<FeatureExtractor> {
    template.with_params(ParamVec::weighted_sum(parts.iter().map(|(g, w)| (g.params(), *w)))?)
}

fn weighted_classifier(template: &Classifier, parts: &[(&Classifier, f64)]) -> Result<Classifier> {
    template.with_params(ParamVec::weighted_sum(parts.iter().map(|(f, w)| (f.params(), *w)))?)
}

fn target_optimizer(cfg: &ProtocolConfig, g: &FeatureExtractor) -> Result<OptimizerState> {
    OptimizerState::new(g.params(), cfg.lr0, cfg.momentum, cfg.weight_decay)
}

fn wall(cfg: &ProtocolConfig, ms: f64) -> f64 {
    if cfg.record_wall_time {
        ms
    } else {
        0.0
    }
}

/// GALA, or with `Protocol::FullPairwise` the same round structure with the
/// target minimizing the sum of all pairwise discrepancies instead of IGD.
pub fn run_gala(cfg: &ProtocolConfig, sources: &[DomainDataset], target: &DomainDataset) -> Result<RunOutput> {
    if !matches!(cfg.protocol, Protocol::Gala | Protocol::FullPairwise) {
        return Err(Error::Config(format!("run_gala cannot run protocol {}", cfg.protocol.label())));
    }
    let setup = prepare(cfg, sources, target)?;
    let n = setup.sources.len();
    let (up, down) = account_communication(cfg.protocol, n, setup.size());
    let (mut g, mut f) = (setup.g.clone(), setup.f.clone());
    let mut records = Vec::with_capacity(cfg.rounds);
    for t in 0..cfg.rounds {
        let lr = lr_schedule(cfg.lr0, t, cfg.gamma);

        // centroids under the broadcast model, then local training
        let target_start = Instant::now();
        let target_centroids = compute_centroids(&g, &f, &setup.target_train.name, &setup.target_train.samples)
            .map_err(|e| e.at(t, &setup.target_train.name))?;
        let mut target_ms = ms_since(target_start);
        let stage_a = ordered(
            setup
                .sources
                .par_iter()
                .enumerate()
                .map(|(k, src)| {
                    let start = Instant::now();
                    let centroids =
                        compute_centroids(&g, &f, &src.name, &src.samples).map_err(|e| e.at(t, &src.name))?;
                    let centroid_ms = ms_since(start);
                    let mut upd = local_train(cfg, &g, &f, src, t, k, lr)?;
                    upd.ms += centroid_ms;
                    Ok((centroids, upd))
                })
                .collect(),
        )?;

        let server_start = Instant::now();
        let similarity = stage_a
            .iter()
            .map(|(c, _)| similarity_score(&target_centroids, c))
            .collect::<Result<Vec<_>>>()?;
        let partition = random_partition(n, derive_seed(cfg.seed, &[PARTITION, t as u64]))?;
        let weights = DomainWeights::new(cfg.weighting, similarity, cfg.tau, partition)
            .map_err(|e| e.at(t, "server"))?;
        let parts: Vec<_> = stage_a.iter().map(|(_, u)| &u.g).zip(weights.global.iter().copied()).collect();
        let g_agg = weighted_extractor(&g, &parts)?;
        let mut server_ms = ms_since(server_start);

        // fine-tune classifiers on the frozen aggregated extractor
        let stage_b = ordered(
            setup
                .sources
                .par_iter()
                .zip(&stage_a)
                .enumerate()
                .map(|(k, (src, (_, upd)))| {
                    let start = Instant::now();
                    let feats = extract_features(&g_agg, &src.samples)?;
                    let mut fk = upd.f.clone();
                    let mut rng = rng_from(cfg.seed, &[FINETUNE, t as u64, k as u64]);
                    finetune_classifier(&mut fk, &feats, &src.labels, cfg, lr, &mut rng)
                        .map_err(|e| e.at(t, &src.name))?;
                    Ok((fk, ms_since(start)))
                })
                .collect(),
        )?;
        let classifiers: Vec<Classifier> = stage_b.iter().map(|(fk, _)| fk.clone()).collect();
        let wall_sources = stage_a
            .iter()
            .zip(&stage_b)
            .map(|((_, u), (_, ms))| u.ms + ms)
            .fold(0.0, f64::max);

        // group classifiers and the target's extractor update
        let target_start = Instant::now();
        let p = &weights.partition;
        let gc1 = GroupClassifier::from_group(&classifiers, p.g1(), &weights.group_normalized)?;
        let gc2 = GroupClassifier::from_group(&classifiers, p.g2(), &weights.group_normalized)?;
        let objective = match cfg.protocol {
            Protocol::FullPairwise => Discrepancy::FullPairwise(&classifiers),
            _ => Discrepancy::InterGroup(gc1.clone(), gc2.clone()),
        };
        let mut g_next = g_agg;
        let target_loss = if cfg.use_igd {
            let mut opt = target_optimizer(cfg, &g_next)?;
            let mut rng = rng_from(cfg.seed, &[TARGET, t as u64]);
            adversarial_update(
                &mut g_next,
                &objective,
                &setup.target_train.samples,
                1,
                cfg.batch_size,
                &mut opt,
                lr,
                &mut rng,
            )
            .map_err(|e| e.at(t, &setup.target_train.name))?
        } else {
            let all: Vec<&[f64]> = setup.target_train.samples.rows().collect();
            objective.loss(&g_next, &all)?
        };
        target_ms += ms_since(target_start);

        // classifier merge
        let server_start = Instant::now();
        let (w_g1, w_g2) = weights.group_totals();
        let merged = ParamVec::weighted_sum([(&gc1.averaged_params()?, w_g1), (&gc2.averaged_params()?, w_g2)])?;
        let direct = ParamVec::weighted_sum(classifiers.iter().map(|c| c.params()).zip(weights.global.iter().copied()))?;
        let merge_gap = merged.max_abs_diff(&direct);
        f = f.with_params(merged)?;
        g = g_next;
        server_ms += ms_since(server_start);

        let acc = accuracy(&g, &f, &setup.target_test);
        let losses: Vec<Option<f64>> = stage_a.iter().map(|(_, u)| Some(u.loss)).collect();
        records.push(RoundRecord {
            round: t,
            target_acc: acc,
            igd_loss: Some(target_loss),
            mean_source_loss: mean_present(&losses),
            source_losses: losses,
            bytes_up: up,
            bytes_down: down,
            wall_max_client_ms: wall(cfg, wall_sources.max(target_ms)),
            wall_server_ms: wall(cfg, server_ms),
            g1_mask: Some(weights.partition.g1_bitmask()),
            weights: weights.global.clone(),
            similarity: weights.similarity.clone(),
            merge_gap: Some(merge_gap),
        });
        log::debug!("round {t}: acc {acc:.4}, target loss {target_loss:.5}");
    }
    Ok(RunOutput {
        protocol: cfg.protocol.label().to_string(),
        records,
        extractor: g,
        classifier: f,
        model_size: setup.size(),
    })
}

fn mean_present(losses: &[Option<f64>]) -> f64 {
    let present: Vec<f64> = losses.iter().flatten().copied().collect();
    if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    }
}

/// Index `k` of the unordered pairs `(i, j)`, `i < j`, in lexicographic
/// order.
pub fn pair_from_index(n: usize, mut k: usize) -> (usize, usize) {
    for i in 0..n {
        let row = n - 1 - i;
        if k < row {
            return (i, i + 1 + k);
        }
        k -= row;
    }
    panic!("pair index out of range for {n} sources");
}

/// The pair of sources active in round `round` of the random-pair protocol.
pub fn sample_pair(seed: u64, round: usize, n: usize) -> (usize, usize) {
    let total = n * (n - 1) / 2;
    let k = rng_from(seed, &[PAIR, round as u64]).random_range(0..total);
    pair_from_index(n, k)
}

/// Random-pair discrepancy protocol: each round two sources train, the
/// target minimizes their disagreement, and the pair's models are averaged.
pub fn run_fact_idd(cfg: &ProtocolConfig, sources: &[DomainDataset], target: &DomainDataset) -> Result<RunOutput> {
    if cfg.protocol != Protocol::FactIdd {
        return Err(Error::Config(format!("run_fact_idd cannot run protocol {}", cfg.protocol.label())));
    }
    let setup = prepare(cfg, sources, target)?;
    let n = setup.sources.len();
    let (up, down) = account_communication(cfg.protocol, n, setup.size());
    let (mut g, mut f) = (setup.g.clone(), setup.f.clone());
    let mut records = Vec::with_capacity(cfg.rounds);
    for t in 0..cfg.rounds {
        let lr = lr_schedule(cfg.lr0, t, cfg.gamma);
        let (i, j) = sample_pair(cfg.seed, t, n);
        let updates = ordered(
            [i, j]
                .par_iter()
                .map(|&k| local_train(cfg, &g, &f, &setup.sources[k], t, k, lr))
                .collect(),
        )?;
        let server_start = Instant::now();
        let mut g_next = weighted_extractor(&g, &[(&updates[0].g, 0.5), (&updates[1].g, 0.5)])?;
        let mut server_ms = ms_since(server_start);
        let target_start = Instant::now();
        let objective = Discrepancy::Pair(&updates[0].f, &updates[1].f);
        let target_loss = if cfg.use_igd {
            let mut opt = target_optimizer(cfg, &g_next)?;
            let mut rng = rng_from(cfg.seed, &[TARGET, t as u64]);
            adversarial_update(
                &mut g_next,
                &objective,
                &setup.target_train.samples,
                1,
                cfg.batch_size,
                &mut opt,
                lr,
                &mut rng,
            )
            .map_err(|e| e.at(t, &setup.target_train.name))?
        } else {
            let all: Vec<&[f64]> = setup.target_train.samples.rows().collect();
            objective.loss(&g_next, &all)?
        };
        let target_ms = ms_since(target_start);
        let server_start = Instant::now();
        f = weighted_classifier(&f, &[(&updates[0].f, 0.5), (&updates[1].f, 0.5)])?;
        g = g_next;
        server_ms += ms_since(server_start);

        let mut weights = vec![0.0; n];
        weights[i] = 0.5;
        weights[j] = 0.5;
        let mut losses = vec![None; n];
        losses[i] = Some(updates[0].loss);
        losses[j] = Some(updates[1].loss);
        let acc = accuracy(&g, &f, &setup.target_test);
        records.push(RoundRecord {
            round: t,
            target_acc: acc,
            igd_loss: Some(target_loss),
            mean_source_loss: mean_present(&losses),
            source_losses: losses,
            bytes_up: up,
            bytes_down: down,
            wall_max_client_ms: wall(cfg, updates[0].ms.max(updates[1].ms).max(target_ms)),
            wall_server_ms: wall(cfg, server_ms),
            g1_mask: Some((1u128 << i) | (1u128 << j)),
            weights,
            similarity: Vec::new(),
            merge_gap: None,
        });
    }
    Ok(RunOutput {
        protocol: cfg.protocol.label().to_string(),
        records,
        extractor: g,
        classifier: f,
        model_size: setup.size(),
    })
}

/// Federated averaging with uniform weights and cross-entropy only.
pub fn run_source_only(cfg: &ProtocolConfig, sources: &[DomainDataset], target: &DomainDataset) -> Result<RunOutput> {
    if cfg.protocol != Protocol::SourceOnly {
        return Err(Error::Config(format!("run_source_only cannot run protocol {}", cfg.protocol.label())));
    }
    let setup = prepare(cfg, sources, target)?;
    let n = setup.sources.len();
    let (up, down) = account_communication(cfg.protocol, n, setup.size());
    let w = uniform_weights(n);
    let (mut g, mut f) = (setup.g.clone(), setup.f.clone());
    let mut records = Vec::with_capacity(cfg.rounds);
    for t in 0..cfg.rounds {
        let lr = lr_schedule(cfg.lr0, t, cfg.gamma);
        let updates = ordered(
            setup
                .sources
                .par_iter()
                .enumerate()
                .map(|(k, src)| local_train(cfg, &g, &f, src, t, k, lr))
                .collect(),
        )?;
        let server_start = Instant::now();
        let gs: Vec<_> = updates.iter().map(|u| &u.g).zip(w.iter().copied()).collect();
        let fs: Vec<_> = updates.iter().map(|u| &u.f).zip(w.iter().copied()).collect();
        g = weighted_extractor(&g, &gs)?;
        f = weighted_classifier(&f, &fs)?;
        let server_ms = ms_since(server_start);
        let losses: Vec<Option<f64>> = updates.iter().map(|u| Some(u.loss)).collect();
        records.push(RoundRecord {
            round: t,
            target_acc: accuracy(&g, &f, &setup.target_test),
            igd_loss: None,
            mean_source_loss: mean_present(&losses),
            source_losses: losses,
            bytes_up: up,
            bytes_down: down,
            wall_max_client_ms: wall(cfg, updates.iter().map(|u| u.ms).fold(0.0, f64::max)),
            wall_server_ms: wall(cfg, server_ms),
            g1_mask: None,
            weights: w.clone(),
            similarity: Vec::new(),
            merge_gap: None,
        });
    }
    Ok(RunOutput {
        protocol: cfg.protocol.label().to_string(),
        records,
        extractor: g,
        classifier: f,
        model_size: setup.size(),
    })
}

/// Supervised training on the labeled target training split.
pub fn run_oracle(cfg: &ProtocolConfig, target: &DomainDataset) -> Result<RunOutput> {
    if cfg.protocol != Protocol::Oracle {
        return Err(Error::Config(format!("run_oracle cannot run protocol {}", cfg.protocol.label())));
    }
    cfg.validate(0)?;
    let (train, test) = split_target(cfg, target)?;
    let train = train.labeled()?;
    let test = test.labeled()?;
    let (mut g, mut f) = initial_model(cfg, target.feature_dim(), target.num_classes())?;
    let size = ModelSize {
        extractor: g.params().len(),
        classifier: f.params().len(),
        num_classes: f.num_classes(),
        feature_dim: f.input_dim(),
    };
    let mut records = Vec::with_capacity(cfg.rounds);
    for t in 0..cfg.rounds {
        let lr = lr_schedule(cfg.lr0, t, cfg.gamma);
        let start = Instant::now();
        let mut rng = rng_from(cfg.seed, &[TRAIN, t as u64, u64::MAX]);
        let loss = train_supervised(&mut g, &mut f, &train, cfg, lr, &mut rng).map_err(|e| e.at(t, &train.name))?;
        let ms = ms_since(start);
        records.push(RoundRecord {
            round: t,
            target_acc: accuracy(&g, &f, &test),
            igd_loss: None,
            mean_source_loss: loss,
            source_losses: Vec::new(),
            bytes_up: 0,
            bytes_down: 0,
            wall_max_client_ms: wall(cfg, ms),
            wall_server_ms: 0.0,
            g1_mask: None,
            weights: Vec::new(),
            similarity: Vec::new(),
            merge_gap: None,
        });
    }
    Ok(RunOutput {
        protocol: cfg.protocol.label().to_string(),
        records,
        extractor: g,
        classifier: f,
        model_size: size,
    })
}

/// Dispatch on `cfg.protocol`.
pub fn run_protocol(cfg: &ProtocolConfig, sources: &[DomainDataset], target: &DomainDataset) -> Result<RunOutput> {
    match cfg.protocol {
        Protocol::Gala | Protocol::FullPairwise => run_gala(cfg, sources, target),
        Protocol::FactIdd => run_fact_idd(cfg, sources, target),
        Protocol::SourceOnly => run_source_only(cfg, sources, target),
        Protocol::Oracle => run_oracle(cfg, target),
    }
}
