//! Dense matrices and the reverse-mode gradient tape used for training.

mod matrix;
mod tape;

pub use matrix::{DenseMatrix, EPSILON_NORM};
pub use tape::{logistic, Gradients, Tape, Var};
