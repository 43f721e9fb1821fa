//! Dense `f64` tensors, a recording tape and Adam.

mod adam;
mod gradcheck;
pub mod layers;
mod params;
mod tape;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use gradcheck::{grad_check, rel_err, GradCheckReport, DEFAULT_EPS};
pub use params::{glorot, Bound, ParamStore};
pub use tape::{sigmoid, softmax, Faults, Gradients, Tape, Var};
pub use tensor::Tensor;
