//! Minimal dense tensors with a reverse-mode gradient tape.
//!
//! Everything is generic over [`Scalar`] (`f32` or `f64`); the models in this
//! workspace use the `f64` aliases below.

pub mod checkpoint;
mod error;
pub mod gradcheck;
mod optim;
mod params;
mod scalar;
mod sparse;
mod tape;
mod tensor;

pub use error::{Result, TensorError};
pub use gradcheck::{finite_diff_check, GradCheckReport};
pub use optim::{Adam, AdamConfig};
pub use params::{Gradients, Param, ParamId, ParamStore};
pub use scalar::Scalar;
pub use sparse::SparseMatrix;
pub use tape::{Tape, Var, BCE_EPS};
pub use tensor::Tensor;

pub type Tensor64 = Tensor<f64>;
pub type Tape64 = Tape<f64>;
pub type ParamStore64 = ParamStore<f64>;
pub type Adam64 = Adam<f64>;
