//! Dense linear algebra, a one-hidden-layer perceptron with exact manual
//! gradients, the Adam optimizer, the halving learning-rate schedule, a
//! central-difference gradient checker, and the tensor container used for
//! checkpoints.

mod adam;
pub mod container;
mod gradcheck;
mod matrix;
mod mlp;
mod params;
mod schedule;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{grad_check, GradCheck};
pub use matrix::{dot, Matrix};
pub use mlp::{draw_keep_mask, dropout_gate, DenseLayer, Mlp, MlpCache, MlpGrads};
pub use params::{assign_flat, flatten, ParamBlock, ParamBlockMut, ParamSet};
pub use schedule::LrSchedule;
