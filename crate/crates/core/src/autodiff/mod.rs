//! Reverse-mode differentiation over [`Tensor4`](crate::tensor::Tensor4) values.

mod gradcheck;
mod ops;
mod tape;

pub use gradcheck::{grad_check, relative_error, GradCheckReport, REL_FLOOR};
pub use ops::{sigmoid, ElementwiseOp};
pub use tape::{BackwardCtx, Gradients, InputGrads, Tape, Var};
