//! Mixup augmentation over (input, soft label) batches.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution};

use crate::error::{Error, Result};

pub fn one_hot(label: usize, num_classes: usize) -> Vec<f64> {
    let mut v = vec![0.0; num_classes];
    v[label] = 1.0;
    v
}

/// Draws `λ ~ Beta(alpha, alpha)`.
pub fn sample_lambda<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> Result<f64> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Parameter(format!("mixup alpha must be positive, got {alpha}")));
    }
    let beta = Beta::new(alpha, alpha).map_err(|e| Error::Parameter(format!("mixup alpha: {e}")))?;
    Ok(beta.sample(rng))
}

/// Mixed inputs and soft targets.
pub type MixedBatch = (Vec<Vec<f64>>, Vec<Vec<f64>>);

/// Pairs every sample with a partner from a random permutation and returns
/// `(λx_i + (1−λ)x_j, λy_i + (1−λ)y_j)` with one `λ` per batch.
/// `lambda_override` replaces the Beta draw.
pub fn mixup<R: Rng + ?Sized>(
    inputs: &[&[f64]],
    targets: &[Vec<f64>],
    alpha: f64,
    rng: &mut R,
    lambda_override: Option<f64>,
) -> Result<MixedBatch> {
    if inputs.len() != targets.len() {
        return Err(Error::mismatch("mixup inputs", inputs.len(), "targets", targets.len()));
    }
    if inputs.len() < 2 {
        return Err(Error::Precondition(format!(
            "mixup needs a batch of at least 2, got {}",
            inputs.len()
        )));
    }
    let lambda = match lambda_override {
        Some(l) => l,
        None => sample_lambda(alpha, rng)?,
    };
    let mut partner: Vec<usize> = (0..inputs.len()).collect();
    partner.shuffle(rng);
    let mix = |a: &[f64], b: &[f64]| -> Vec<f64> {
        a.iter().zip(b).map(|(x, y)| lambda * x + (1.0 - lambda) * y).collect()
    };
    let xs = (0..inputs.len()).map(|i| mix(inputs[i], inputs[partner[i]])).collect();
    let ys = (0..inputs.len()).map(|i| mix(&targets[i], &targets[partner[i]])).collect();
    Ok((xs, ys))
}
