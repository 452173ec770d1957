//! Losses, learning-rate schedules and the two-stage optimization procedure.

mod adam;
mod config;
mod loss;
mod schedule;
mod trainer;

pub use adam::{clip_grad_norm, Adam, AdamConfig};
pub use config::{TrainConfig, Variant};
pub use loss::{classification_loss, classification_loss_grad, mask_loss, mask_loss_grad, total_loss};
pub use schedule::{lr_at, StageSchedule};
pub use trainer::{
    argmax, face_tensors, fit, joint_gradients, joint_objective, stage1_gradients, train_joint, train_joint_with, train_stage1,
    train_stage1_with, Batch, EpochHook, EpochRecord, History, StepStats, TrainingSet,
};
