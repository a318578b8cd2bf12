//! Local training steps run by individual participants.

use rand::Rng;

use super::config::ProtocolConfig;
use crate::domainsim::{mixup, one_hot, LabeledSamples, SampleMatrix};
use crate::error::{Error, Result};
use crate::nn::{
    argmax, classifier_cross_entropy_grad, cross_entropy_grad, minibatches, sgd_step, Classifier,
    FeatureExtractor, OptimizerState, Targets,
};

/// `epochs` passes of minibatch cross-entropy SGD on both networks, with
/// fresh optimizer state. Returns the sample-weighted mean loss of the last
/// pass.
pub fn train_supervised<R: Rng + ?Sized>(
    g: &mut FeatureExtractor,
    f: &mut Classifier,
    data: &LabeledSamples,
    cfg: &ProtocolConfig,
    lr: f64,
    rng: &mut R,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Precondition(format!("domain {} has no training samples", data.name)));
    }
    let mut opt_g = OptimizerState::new(g.params(), cfg.lr0, cfg.momentum, cfg.weight_decay)?;
    let mut opt_f = OptimizerState::new(f.params(), cfg.lr0, cfg.momentum, cfg.weight_decay)?;
    let mut last = 0.0;
    for _ in 0..cfg.local_epochs {
        let mut total = 0.0;
        for idx in minibatches(data.len(), cfg.batch_size, rng) {
            let inputs = data.samples.gather(&idx);
            let labels: Vec<usize> = idx.iter().map(|&i| data.labels[i]).collect();
            let lg = match cfg.mixup_alpha {
                Some(alpha) if idx.len() >= 2 => {
                    let soft: Vec<Vec<f64>> =
                        labels.iter().map(|&y| one_hot(y, data.num_classes)).collect();
                    let (xs, ys) = mixup(&inputs, &soft, alpha, rng, None)?;
                    let refs: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();
                    cross_entropy_grad(g, f, &refs, Targets::Soft(&ys))?
                }
                _ => cross_entropy_grad(g, f, &inputs, Targets::Hard(&labels))?,
            };
            total += lg.loss * idx.len() as f64;
            sgd_step(g.params_mut(), &lg.grad_extractor, &mut opt_g, lr)?;
            sgd_step(f.params_mut(), &lg.grad_classifier, &mut opt_f, lr)?;
        }
        last = total / data.len() as f64;
    }
    Ok(last)
}

/// Features of every sample under a frozen extractor.
pub fn extract_features(g: &FeatureExtractor, samples: &SampleMatrix) -> Result<SampleMatrix> {
    let rows: Vec<Vec<f64>> = samples.rows().map(|x| g.forward(x)).collect();
    SampleMatrix::from_rows(&rows)
}

/// Cross-entropy SGD on the classifier alone over precomputed features.
pub fn finetune_classifier<R: Rng + ?Sized>(
    f: &mut Classifier,
    features: &SampleMatrix,
    labels: &[usize],
    cfg: &ProtocolConfig,
    lr: f64,
    rng: &mut R,
) -> Result<f64> {
    let mut opt = OptimizerState::new(f.params(), cfg.lr0, cfg.momentum, cfg.weight_decay)?;
    let mut last = 0.0;
    for _ in 0..cfg.local_epochs {
        let mut total = 0.0;
        for idx in minibatches(features.len(), cfg.batch_size, rng) {
            let z = features.gather(&idx);
            let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let (loss, grad) = classifier_cross_entropy_grad(f, &z, Targets::Hard(&y))?;
            total += loss * idx.len() as f64;
            sgd_step(f.params_mut(), &grad, &mut opt, lr)?;
        }
        last = total / features.len() as f64;
    }
    Ok(last)
}

pub fn accuracy(g: &FeatureExtractor, f: &Classifier, data: &LabeledSamples) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let correct = data
        .samples
        .rows()
        .zip(&data.labels)
        .filter(|(x, &y)| argmax(&f.forward(&g.forward(x))) == y)
        .count();
    correct as f64 / data.len() as f64
}
