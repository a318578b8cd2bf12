//! Minimal dense neural-network engine: parameters, forward passes, analytic
//! gradients, SGD with momentum, and a finite-difference checker.

pub mod gradcheck;
pub mod loss;
pub mod model;
pub mod optim;
pub mod param;

pub use gradcheck::{central_differences, grad_check, max_relative_error};
pub use loss::{classifier_cross_entropy_grad, cross_entropy_grad, cross_entropy_loss, LossGrad, Targets};
pub use model::{argmax, check_compatible, forward_model, softmax, Classifier, ExtractorTrace, FeatureExtractor};
pub use optim::{lr_schedule, minibatches, sgd_step, OptimizerState, LR_DECAY_PERIOD};
pub use param::{ParamVec, ShapeSpec};
