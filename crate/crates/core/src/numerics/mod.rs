//! Dense math for the fixed computation graphs used by the agent: matrices,
//! multi-layer perceptrons with analytic backward passes, optimizers and the
//! central finite-difference oracle used to certify every gradient.

mod finite_diff;
mod matrix;
mod mlp;
mod optim;
mod params;

pub use finite_diff::{finite_diff_grad, relative_error};
pub use matrix::Matrix;
pub use mlp::{mlp_backward, mlp_forward, softmax, Activation, MlpSpec, OutputHead, Tape};
pub use optim::{adam_step, sgd_step, AdamHyper, AdamState, Optimizer, OptimizerKind};
pub use params::{ParameterVector, Segment};

pub(crate) fn ensure_finite(module: &'static str, what: &str, values: &[f64]) -> crate::Result<()> {
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(crate::MrdgError::non_finite(
            module,
            format!("{what}[{i}] = {}", values[i]),
        ));
    }
    Ok(())
}
