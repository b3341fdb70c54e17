//! Training loop, category pre-training, 2AFC evaluation, checkpoints and
//! the finite-difference gradient checker.

mod category;
mod checkpoint;
mod config;
mod eval;
mod gradcheck;
mod trainer;

pub use category::{pretrain_category, CategoryOutcome};
pub use checkpoint::{
    decode_model, encode_model, load_category, load_checkpoint, rounded_to_f32, save_category,
    save_checkpoint, CategoryShape, Metadata, TensorEntry, MAGIC,
};
pub use config::{CategoryConfig, TrainConfig};
pub use eval::{evaluate, evaluate_records, pair_credit, EvalReport};
pub use gradcheck::{grad_check, rel_error, toy_model, GradCheckConfig, GradCheckReport, TensorCheck};
pub use trainer::{train, train_with, EpochMetrics, TrainOutcome};
