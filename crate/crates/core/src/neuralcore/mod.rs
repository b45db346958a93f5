//! Dense MLP encoder with a linear head, reverse-mode gradients for both the
//! parameters and the input, and an AdamW updater.

mod matrix;
mod model;
mod optim;

pub use matrix::DenseMatrix;
pub use model::{
    Architecture, ForwardTrace, InputGradient, Linear, ModelParams, ObjectiveValue,
    MIN_EMBEDDING_NORM,
};
pub use optim::{adamw_step, AdamWConfig, OptimizerState};

#[cfg(test)]
mod tests;
