//! SGD with momentum and weight decay, plus the step learning-rate schedule.

use rand::seq::SliceRandom;
use rand::Rng;

use super::param::ParamVec;
use crate::error::{Error, Result};

/// Rounds between learning-rate decays.
pub const LR_DECAY_PERIOD: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    momentum_buffer: ParamVec,
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    step_count: u64,
}

impl OptimizerState {
    pub fn new(like: &ParamVec, lr0: f64, momentum: f64, weight_decay: f64) -> Result<Self> {
        if !(lr0 >= 0.0 && lr0.is_finite()) {
            return Err(Error::Config(format!("learning rate must be nonnegative, got {lr0}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Config(format!("momentum must lie in [0, 1), got {momentum}")));
        }
        if !(weight_decay >= 0.0 && weight_decay.is_finite()) {
            return Err(Error::Config(format!(
                "weight decay must be nonnegative, got {weight_decay}"
            )));
        }
        Ok(Self {
            momentum_buffer: ParamVec::zeros(like.shape().clone()),
            lr0,
            momentum,
            weight_decay,
            step_count: 0,
        })
    }

    pub fn momentum_buffer(&self) -> &ParamVec {
        &self.momentum_buffer
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }
}

/// One update:
/// `buffer ← momentum·buffer + grad + weight_decay·params`,
/// `params ← params − lr·buffer`.
pub fn sgd_step(
    params: &mut ParamVec,
    grad: &ParamVec,
    state: &mut OptimizerState,
    lr: f64,
) -> Result<()> {
    if !params.same_shape(grad) || !params.same_shape(&state.momentum_buffer) {
        return Err(Error::mismatch("params", params.len(), "gradient", grad.len()));
    }
    if let Some(i) = grad.values().iter().position(|g| !g.is_finite()) {
        return Err(Error::numeric(format!(
            "non-finite gradient entry {} at index {i} of {}",
            grad.values()[i],
            grad.len()
        )));
    }
    let (mu, wd) = (state.momentum, state.weight_decay);
    let buf = state.momentum_buffer.values_mut();
    for ((p, g), b) in params.values_mut().iter_mut().zip(grad.values()).zip(buf.iter_mut()) {
        *b = mu * *b + g + wd * *p;
        *p -= lr * *b;
    }
    state.step_count += 1;
    if !params.is_finite() {
        return Err(Error::numeric("parameters became non-finite after SGD step"));
    }
    Ok(())
}

/// Step decay: `lr0 · gamma^⌊t / 100⌋`.
pub fn lr_schedule(lr0: f64, round: usize, gamma: f64) -> f64 {
    lr0 * gamma.powi((round / LR_DECAY_PERIOD) as i32)
}

/// One epoch of shuffled minibatch indices; the last batch may be short.
pub fn minibatches<R: Rng + ?Sized>(n: usize, batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size.max(1)).map(|c| c.to_vec()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::param::ShapeSpec;
    use std::sync::Arc;

    fn pv(vals: &[f64]) -> ParamVec {
        let shape = Arc::new(ShapeSpec::new(vec![("p".into(), vec![vals.len()])]));
        ParamVec::from_values(shape, vals.to_vec()).unwrap()
    }

    #[test]
    fn vanilla_sgd_step() {
        let mut p = pv(&[1.0]);
        let mut st = OptimizerState::new(&p, 0.1, 0.0, 0.0).unwrap();
        sgd_step(&mut p, &pv(&[2.0]), &mut st, 0.1).unwrap();
        assert!((p.values()[0] - 0.8).abs() < 1e-15);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn zero_lr_leaves_params_but_updates_buffer() {
        let mut p = pv(&[1.0, -2.0]);
        let mut st = OptimizerState::new(&p, 0.1, 0.9, 5e-4).unwrap();
        sgd_step(&mut p, &pv(&[0.5, 0.25]), &mut st, 0.0).unwrap();
        assert_eq!(p.values(), &[1.0, -2.0]);
        assert!((st.momentum_buffer().values()[0] - (0.5 + 5e-4)).abs() < 1e-15);
    }

    #[test]
    fn momentum_accumulates() {
        let g = 0.3;
        let lr = 0.05;
        let mut p = pv(&[0.0]);
        let mut st = OptimizerState::new(&p, lr, 0.9, 0.0).unwrap();
        sgd_step(&mut p, &pv(&[g]), &mut st, lr).unwrap();
        let after_first = p.values()[0];
        sgd_step(&mut p, &pv(&[g]), &mut st, lr).unwrap();
        let displacement = after_first - p.values()[0];
        assert!((displacement - lr * 1.9 * g).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut p = pv(&[1.0, 2.0]);
        let mut st = OptimizerState::new(&p, 0.1, 0.9, 0.0).unwrap();
        let err = sgd_step(&mut p, &pv(&[0.0, f64::NAN]), &mut st, 0.1).unwrap_err();
        assert!(matches!(err, Error::Numeric { .. }));
        assert_eq!(p.values(), &[1.0, 2.0]);
    }

    #[test]
    fn bad_hyperparameters_rejected() {
        let p = pv(&[1.0]);
        assert!(OptimizerState::new(&p, 0.1, 1.0, 0.0).is_err());
        assert!(OptimizerState::new(&p, 0.1, 0.5, -1.0).is_err());
    }

    #[test]
    fn minibatches_cover_every_index_once() {
        let mut rng = crate::rng::rng_from(1, &[]);
        let batches = minibatches(10, 4, &mut rng);
        assert_eq!(batches.iter().map(|b| b.len()).collect::<Vec<_>>(), vec![4, 4, 2]);
        let mut all: Vec<usize> = batches.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn schedule_values() {
        assert_eq!(lr_schedule(0.01, 0, 0.75), 0.01);
        assert!((lr_schedule(0.01, 99, 0.75) - 0.01).abs() < 1e-18);
        assert!((lr_schedule(0.01, 100, 0.75) - 0.0075).abs() < 1e-15);
        assert!((lr_schedule(0.01, 250, 0.75) - 0.005625).abs() < 1e-15);
    }

    #[test]
    fn schedule_is_nonincreasing() {
        for gamma in [0.1, 0.5, 0.75, 1.0] {
            let mut prev = lr_schedule(0.3, 0, gamma);
            assert_eq!(prev, 0.3);
            for t in 1..1000 {
                let cur = lr_schedule(0.3, t, gamma);
                assert!(cur <= prev);
                prev = cur;
            }
        }
    }
}
