//! Cross-entropy with exact analytic gradients for `G` and `F`.
//!
//! Mean reduction over the batch, no label smoothing. Soft targets (mixup)
//! use the same code path with `−Σ_c y_c log p_c`.

use super::model::{check_compatible, Classifier, ExtractorTrace, FeatureExtractor};
use super::param::ParamVec;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub enum Targets<'a> {
    Hard(&'a [usize]),
    Soft(&'a [Vec<f64>]),
}

impl Targets<'_> {
    fn len(&self) -> usize {
        match self {
            Targets::Hard(l) => l.len(),
            Targets::Soft(s) => s.len(),
        }
    }

    fn validate(&self, num_classes: usize) -> Result<()> {
        match self {
            Targets::Hard(labels) => {
                if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
                    return Err(Error::Data(format!(
                        "label {bad} out of range for {num_classes} classes"
                    )));
                }
            }
            Targets::Soft(rows) => {
                if let Some(r) = rows.iter().find(|r| r.len() != num_classes) {
                    return Err(Error::mismatch("soft target", r.len(), "classes", num_classes));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LossGrad {
    pub loss: f64,
    pub grad_extractor: ParamVec,
    pub grad_classifier: ParamVec,
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

/// Writes `∂(−Σ y_c log p_c)/∂logits = p − y` (scaled) and returns the loss
/// contribution of one sample.
fn sample_loss_and_dlogits(
    logits: &[f64],
    targets: &Targets<'_>,
    i: usize,
    scale: f64,
    d_logits: &mut [f64],
) -> f64 {
    let logp = log_softmax(logits);
    for (d, lp) in d_logits.iter_mut().zip(&logp) {
        *d = lp.exp() * scale;
    }
    match targets {
        Targets::Hard(labels) => {
            let y = labels[i];
            d_logits[y] -= scale;
            -logp[y]
        }
        Targets::Soft(rows) => {
            let mut loss = 0.0;
            for (c, &yc) in rows[i].iter().enumerate() {
                d_logits[c] -= yc * scale;
                if yc != 0.0 {
                    loss -= yc * logp[c];
                }
            }
            loss
        }
    }
}

fn check_batch(inputs: &[&[f64]], targets: &Targets<'_>, g: &FeatureExtractor) -> Result<()> {
    if inputs.is_empty() {
        return Err(Error::Precondition("cross-entropy on an empty batch".into()));
    }
    if inputs.len() != targets.len() {
        return Err(Error::mismatch("inputs", inputs.len(), "targets", targets.len()));
    }
    if let Some(x) = inputs.iter().find(|x| x.len() != g.input_dim()) {
        return Err(Error::mismatch("input", x.len(), "extractor input", g.input_dim()));
    }
    Ok(())
}

/// Mean cross-entropy over the batch and its gradients w.r.t. both networks.
pub fn cross_entropy_grad(
    g: &FeatureExtractor,
    f: &Classifier,
    inputs: &[&[f64]],
    targets: Targets<'_>,
) -> Result<LossGrad> {
    check_compatible(g, f)?;
    check_batch(inputs, &targets, g)?;
    targets.validate(f.num_classes())?;

    let scale = 1.0 / inputs.len() as f64;
    let mut grad_g = ParamVec::zeros(g.params().shape().clone());
    let mut grad_f = ParamVec::zeros(f.params().shape().clone());
    let mut d_logits = vec![0.0; f.num_classes()];
    let mut dz = vec![0.0; f.input_dim()];
    let mut loss = 0.0;
    for (i, x) in inputs.iter().enumerate() {
        let trace: ExtractorTrace = g.forward_trace(x);
        let z = trace.features();
        let logits = f.logits(z);
        loss += sample_loss_and_dlogits(&logits, &targets, i, scale, &mut d_logits);
        f.backward(z, &d_logits, grad_f.values_mut(), Some(&mut dz));
        g.backward(&trace, &dz, grad_g.values_mut());
    }
    Ok(LossGrad {
        loss: loss * scale,
        grad_extractor: grad_g,
        grad_classifier: grad_f,
    })
}

/// Forward-only mean cross-entropy.
pub fn cross_entropy_loss(
    g: &FeatureExtractor,
    f: &Classifier,
    inputs: &[&[f64]],
    targets: Targets<'_>,
) -> Result<f64> {
    check_compatible(g, f)?;
    check_batch(inputs, &targets, g)?;
    targets.validate(f.num_classes())?;
    let mut total = 0.0;
    for (i, x) in inputs.iter().enumerate() {
        let logp = log_softmax(&f.logits(&g.forward(x)));
        total += match &targets {
            Targets::Hard(labels) => -logp[labels[i]],
            Targets::Soft(rows) => -rows[i]
                .iter()
                .zip(&logp)
                .filter(|(y, _)| **y != 0.0)
                .map(|(y, lp)| y * lp)
                .sum::<f64>(),
        };
    }
    Ok(total / inputs.len() as f64)
}

/// Cross-entropy gradient for the classifier alone, on precomputed features
/// (the extractor is frozen).
pub fn classifier_cross_entropy_grad(
    f: &Classifier,
    features: &[&[f64]],
    targets: Targets<'_>,
) -> Result<(f64, ParamVec)> {
    if features.is_empty() {
        return Err(Error::Precondition("cross-entropy on an empty batch".into()));
    }
    if features.len() != targets.len() {
        return Err(Error::mismatch("features", features.len(), "targets", targets.len()));
    }
    targets.validate(f.num_classes())?;
    let scale = 1.0 / features.len() as f64;
    let mut grad_f = ParamVec::zeros(f.params().shape().clone());
    let mut d_logits = vec![0.0; f.num_classes()];
    let mut loss = 0.0;
    for (i, z) in features.iter().enumerate() {
        let logits = f.logits(z);
        loss += sample_loss_and_dlogits(&logits, &targets, i, scale, &mut d_logits);
        f.backward(z, &d_logits, grad_f.values_mut(), None);
    }
    Ok((loss * scale, grad_f))
}
