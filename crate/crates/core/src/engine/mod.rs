//! Reverse-mode differentiable tensor engine.
//!
//! Values are recorded on a [`Tape`] as they are computed; [`Tape::backward`]
//! walks the records in reverse to produce exact gradients. Every op kind
//! used by the model has a hand-written vector-Jacobian product in [`ops`].

pub mod gradcheck;
pub mod ops;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, grad_check_inputs, GradCheckReport};
pub use ops::Op;
pub use tape::{Gradients, Record, Tape, Var};
pub use tensor::{Tensor, MAX_RANK};
