//! Low-dimensional Gaussian-mixture domains.

use rand_distr::{Distribution, StandardNormal};

use super::dataset::DomainDataset;
use super::transform::{apply_chain, TransformSpec};
use crate::error::{Error, Result};
use crate::rng::rng_from;

/// Distance of every class center from the origin.
pub const CENTER_RADIUS: f64 = 3.0;

/// Center of class `c`: `±3·e_(c mod d_in)`, with the sign flipping on each
/// wrap past `d_in` so up to `2·d_in` classes stay distinct.
pub fn class_center(c: usize, input_dim: usize) -> Vec<f64> {
    let mut center = vec![0.0; input_dim];
    let sign = if (c / input_dim).is_multiple_of(2) { 1.0 } else { -1.0 };
    center[c % input_dim] = sign * CENTER_RADIUS;
    center
}

/// Samples `samples_per_class` points per class with unit isotropic noise
/// around [`class_center`], in class-major order, then applies `shift`.
pub fn gen_gaussian_domain(
    name: &str,
    num_classes: usize,
    samples_per_class: usize,
    input_dim: usize,
    shift: &[TransformSpec],
    seed: u64,
) -> Result<DomainDataset> {
    if num_classes < 2 {
        return Err(Error::Parameter(format!("need at least 2 classes, got {num_classes}")));
    }
    if samples_per_class < 8 {
        return Err(Error::Parameter(format!(
            "need at least 8 samples per class, got {samples_per_class}"
        )));
    }
    if input_dim < 2 {
        return Err(Error::Parameter(format!("input dimension must be at least 2, got {input_dim}")));
    }
    if num_classes > 2 * input_dim {
        return Err(Error::Parameter(format!(
            "{num_classes} classes do not fit distinct centers in {input_dim} dimensions"
        )));
    }
    let mut rng = rng_from(seed, &[0x6A55]);
    let mut features = Vec::with_capacity(num_classes * samples_per_class * input_dim);
    let mut labels = Vec::with_capacity(num_classes * samples_per_class);
    for c in 0..num_classes {
        let center = class_center(c, input_dim);
        for _ in 0..samples_per_class {
            for &m in &center {
                let noise: f64 = StandardNormal.sample(&mut rng);
                features.push((m + noise) as f32);
            }
            labels.push(c);
        }
    }
    let base = DomainDataset::new(name, features, input_dim, Some(labels), num_classes)?
        .with_provenance(format!(
            "gaussian(classes={num_classes}, per_class={samples_per_class}, dim={input_dim}, seed={seed})"
        ));
    apply_chain(base, shift)
}
