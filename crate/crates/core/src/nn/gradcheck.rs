//! Finite-difference gradient checking.

use super::loss::{cross_entropy_grad, cross_entropy_loss, Targets};
use super::model::{Classifier, FeatureExtractor};
use crate::error::{Error, Result};

/// Below this magnitude an analytic coordinate is compared by absolute error.
pub const ABSOLUTE_ERROR_FLOOR: f64 = 1e-8;

/// Central differences `(f(x + εe_i) − f(x − εe_i)) / 2ε` for every coordinate.
pub fn central_differences<F>(mut f: F, x: &[f64], eps: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + eps;
            let plus = f(&probe);
            probe[i] = x[i] - eps;
            let minus = f(&probe);
            probe[i] = x[i];
            (plus - minus) / (2.0 * eps)
        })
        .collect()
}

/// Largest per-coordinate error between analytic and numeric gradients,
/// relative to the numeric value, or absolute where the analytic value is
/// below [`ABSOLUTE_ERROR_FLOOR`].
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| {
            let diff = (a - n).abs();
            if a.abs() < ABSOLUTE_ERROR_FLOOR {
                diff
            } else {
                diff / n.abs().max(ABSOLUTE_ERROR_FLOOR)
            }
        })
        .fold(0.0, f64::max)
}

/// Compare the cross-entropy gradients of every parameter of `G` and `F`
/// against central differences of the loss.
pub fn grad_check(
    g: &FeatureExtractor,
    f: &Classifier,
    inputs: &[&[f64]],
    labels: &[usize],
    eps: f64,
) -> Result<f64> {
    if !(eps > 1e-7 && eps < 1e-3) {
        return Err(Error::Parameter(format!("epsilon must lie in (1e-7, 1e-3), got {eps}")));
    }
    let analytic = cross_entropy_grad(g, f, inputs, Targets::Hard(labels))?;

    let mut probe_g = g.clone();
    let numeric_g = central_differences(
        |theta| {
            probe_g.params_mut().values_mut().copy_from_slice(theta);
            cross_entropy_loss(&probe_g, f, inputs, Targets::Hard(labels)).unwrap_or(f64::NAN)
        },
        g.params().values(),
        eps,
    );
    let mut probe_f = f.clone();
    let numeric_f = central_differences(
        |theta| {
            probe_f.params_mut().values_mut().copy_from_slice(theta);
            cross_entropy_loss(g, &probe_f, inputs, Targets::Hard(labels)).unwrap_or(f64::NAN)
        },
        f.params().values(),
        eps,
    );
    Ok(max_relative_error(analytic.grad_extractor.values(), &numeric_g)
        .max(max_relative_error(analytic.grad_classifier.values(), &numeric_f)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use rand::Rng;

    #[test]
    fn quadratic_differences() {
        let d = central_differences(|v| v[0] * v[0] + 3.0 * v[0] * v[1], &[1.0, 2.0], 1e-5);
        assert!((d[0] - 8.0).abs() < 1e-8);
        assert!((d[1] - 3.0).abs() < 1e-8);
    }

    #[test]
    fn doubled_gradient_reports_unit_error() {
        let numeric = [0.5, -0.25, 2.0];
        let doubled: Vec<f64> = numeric.iter().map(|v| v * 2.0).collect();
        assert!((max_relative_error(&doubled, &numeric) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn small_model_passes() {
        let mut rng = rng_from(21, &[]);
        let g = FeatureExtractor::new(4, &[6], 5, &mut rng).unwrap();
        let f = Classifier::new(5, 3, &mut rng).unwrap();
        let xs: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let inputs: Vec<&[f64]> = xs.iter().map(|x| &x[..]).collect();
        let err = grad_check(&g, &f, &inputs, &[0, 1, 2, 1], 1e-5).unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn zero_inputs_give_zero_first_layer_weight_gradient() {
        let mut rng = rng_from(22, &[]);
        let g = FeatureExtractor::new(3, &[4], 5, &mut rng).unwrap();
        let f = Classifier::new(5, 2, &mut rng).unwrap();
        let zero = [0.0; 3];
        let out = cross_entropy_grad(&g, &f, &[&zero, &zero], Targets::Hard(&[0, 1])).unwrap();
        let (off, len) = g.params().shape().locate("g0.weight").unwrap();
        assert!(out.grad_extractor.values()[off..off + len].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn epsilon_range_enforced() {
        let mut rng = rng_from(23, &[]);
        let g = FeatureExtractor::new(2, &[], 2, &mut rng).unwrap();
        let f = Classifier::new(2, 2, &mut rng).unwrap();
        assert!(grad_check(&g, &f, &[&[0.0, 1.0]], &[0], 1e-2).is_err());
    }
}
