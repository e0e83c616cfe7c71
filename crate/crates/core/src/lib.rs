//! Densely deformable saliency network built on a small reverse-mode
//! differentiation engine.
//!
//! The crate is organized bottom-up: [`tensor`] and [`autodiff`] provide
//! the value type and tape; [`nn`] and [`deform`] the spatial operators;
//! [`model`] assembles the network; [`losses`], [`metrics`], [`data`],
//! [`optim`] and [`harness`] cover training and evaluation.

pub mod autodiff;
pub mod data;
pub mod deform;
pub mod error;
pub mod harness;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod param;
pub mod scalar;
pub mod tensor;

pub use autodiff::{grad_check, GradCheckReport, Tape, Var};
pub use error::{Error, Result};
pub use param::{ParamId, ParamStore, Parameter};
pub use scalar::Scalar;
pub use tensor::{Dims, Tensor4};
