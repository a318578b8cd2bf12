//! Randomized gradient checks over small models.
//!
//! Each trial draws layer sizes, weights and a batch from its own seed.
//! Trials whose batch lands within [`KINK_MARGIN`] of a ReLU kink (both
//! objectives) or of an L1 kink (IGD) are redrawn, since finite differences
//! straddling a kink do not estimate the one-sided derivative.

use rand::Rng;

use crate::discrepancy::{igd_grad_check, igd_kink_margin, GroupClassifier};
use crate::error::{Error, Result};
use crate::nn::{grad_check, Classifier, FeatureExtractor};
use crate::rng::rng_from;

pub const KINK_MARGIN: f64 = 1e-3;
pub const GRAD_EPS: f64 = 1e-5;
pub const GRAD_TOLERANCE: f64 = 1e-4;
const MAX_REDRAWS: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct GradSuiteReport {
    pub trials: usize,
    pub ce_max_error: f64,
    pub igd_max_error: f64,
    pub redraws: usize,
}

impl GradSuiteReport {
    pub fn passed(&self) -> bool {
        self.ce_max_error < GRAD_TOLERANCE && self.igd_max_error < GRAD_TOLERANCE
    }
}

struct Trial {
    g: FeatureExtractor,
    classifiers: Vec<Classifier>,
    weights: [Vec<f64>; 2],
    batch: Vec<Vec<f64>>,
    labels: Vec<usize>,
}

fn draw_trial<R: Rng>(rng: &mut R) -> Result<Trial> {
    let d_in = rng.random_range(2..6);
    let hidden = rng.random_range(3..7);
    let d = rng.random_range(2..6);
    let c = rng.random_range(2..5);
    let n = rng.random_range(4..7);
    let g = FeatureExtractor::new(d_in, &[hidden], d, rng)?;
    let classifiers = (0..n).map(|_| Classifier::new(d, c, rng)).collect::<Result<Vec<_>>>()?;
    let half = n / 2;
    let mut draw_weights = |k: usize| {
        let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..1.0)).collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|w| w / total).collect::<Vec<f64>>()
    };
    let weights = [draw_weights(half), draw_weights(n - half)];
    let b = rng.random_range(3..8);
    let batch = (0..b)
        .map(|_| (0..d_in).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();
    let labels = (0..b).map(|_| rng.random_range(0..c)).collect();
    Ok(Trial {
        g,
        classifiers,
        weights,
        batch,
        labels,
    })
}

/// Run `trials` cross-entropy checks and `trials` IGD checks.
pub fn gradient_suite(trials: usize, seed: u64) -> Result<GradSuiteReport> {
    let mut report = GradSuiteReport {
        trials,
        ce_max_error: 0.0,
        igd_max_error: 0.0,
        redraws: 0,
    };
    for t in 0..trials {
        let mut attempt = 0;
        loop {
            if attempt >= MAX_REDRAWS {
                return Err(Error::Precondition(format!(
                    "gradient trial {t}: no draw clear of kinks after {MAX_REDRAWS} attempts"
                )));
            }
            let mut rng = rng_from(seed, &[t as u64, attempt as u64]);
            attempt += 1;
            let trial = draw_trial(&mut rng)?;
            let batch: Vec<&[f64]> = trial.batch.iter().map(|x| x.as_slice()).collect();
            if trial.g.min_abs_preactivation(batch.iter().copied()) < KINK_MARGIN {
                report.redraws += 1;
                continue;
            }
            let n = trial.classifiers.len();
            let half = n / 2;
            let gc1 = GroupClassifier::new(
                (0..half).map(|i| (i, &trial.classifiers[i])).collect(),
                trial.weights[0].clone(),
            )?;
            let gc2 = GroupClassifier::new(
                (half..n).map(|i| (i, &trial.classifiers[i])).collect(),
                trial.weights[1].clone(),
            )?;
            if igd_kink_margin(&trial.g, &gc1, &gc2, &batch)? < KINK_MARGIN {
                report.redraws += 1;
                continue;
            }
            let ce = grad_check(&trial.g, &trial.classifiers[0], &batch, &trial.labels, GRAD_EPS)?;
            let igd = igd_grad_check(&trial.g, &gc1, &gc2, &batch, GRAD_EPS)?;
            report.ce_max_error = report.ce_max_error.max(ce);
            report.igd_max_error = report.igd_max_error.max(igd);
            break;
        }
    }
    Ok(report)
}
