//! The behavior-cloning network, its losses, training and evaluation.

mod checkpoint;
mod gradcheck;
mod layers;
mod loss;
mod net;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointFile, NamedTensor, CHECKPOINT_SCHEMA_VERSION};
pub use gradcheck::{grad_check, relative_error, GradCheckConfig, GradCheckReport, TensorCheck, VariantReport};
pub use loss::{
    direction_loss, direction_loss_grad, loss, loss_and_grad, LossComponents, LossGrad, LossWeights, COS_CLAMP,
    DIR_MIN_NORM,
};
pub use net::{ConvSpec, GripperHead, NetConfig, Policy, PolicyCache, PolicyParams, Prediction, TensorInfo};
pub use train::{
    batch_loss_grad, eval_bc_mse, eval_bc_mse_with, fit_input, predict_all, random_baseline_mse, random_prediction,
    train, Adam, BcMse, EpochRecord, LrSchedule, OptimConfig, TrainConfig,
};
