//! Training loop, inference, directory evaluation, gradient-check suites
//! and parameter reports behind the command-line tool.

mod config;
mod gradcheck;
mod infer;
mod train;

pub use config::{model_from_table, TrainConfig};
pub use gradcheck::{gradcheck_model, gradcheck_op, gradcheck_ops, random_conv_case, GradRow, KINK_GAP, MODEL_EPS, MODEL_FLOOR, MODEL_TOLERANCE, OPS, OPS_EPS, OPS_TOLERANCE, SSIM_EPS};
pub use infer::{evaluate_dirs, infer, list_images, InferRecord};
pub use train::{evaluate_model, to_map, train, EpochLog, TrainOutcome};

use crate::model::Model;
use crate::scalar::Scalar;

/// Trainable scalars per top-level stage, in build order.
pub fn param_breakdown<T: Scalar>(model: &Model<T>) -> Vec<(String, usize)> {
    let mut out: Vec<(String, usize)> = Vec::new();
    for p in model.params().iter() {
        let stage = p.name.split('.').next().unwrap_or(&p.name);
        match out.last_mut() {
            Some((s, n)) if s == stage => *n += p.value.len(),
            _ => out.push((stage.to_string(), p.value.len())),
        }
    }
    out
}
