//! Hypernetwork that turns the summed (retrieved action one-hot + positional
//! code) of every other agent into the parameters of the learner's adapted
//! layer.

use serde::{Deserialize, Serialize};

use crate::numerics::{mlp_backward, mlp_forward, Activation, MlpSpec, OutputHead, Tape};
use crate::{MrdgError, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HyperSpec {
    pub input_width: usize,
    pub hidden: Vec<usize>,
    /// Parameter count of the learner's adapted slice.
    pub output_width: usize,
}

impl HyperSpec {
    pub fn mlp(&self) -> Result<MlpSpec> {
        let mut sizes = vec![self.input_width];
        sizes.extend(&self.hidden);
        sizes.push(self.output_width);
        MlpSpec::new(sizes, Activation::Relu, OutputHead::Linear)
    }
}

/// One-hot of a retrieved action, or all-zero when retrieval had nothing to
/// return. `width` may exceed the action count (padding).
pub fn one_hot(action: Option<usize>, width: usize) -> Vec<f64> {
    let mut v = vec![0.0; width];
    if let Some(a) = action {
        v[a] = 1.0;
    }
    v
}

/// `sum_i (a_r^i + p_i)` over the other agents.
pub fn aggregate_inputs(retrieved: &[Vec<f64>], codes: &[Vec<f64>]) -> Result<Vec<f64>> {
    if retrieved.is_empty() || retrieved.len() != codes.len() {
        return Err(MrdgError::contract(
            "hypernet",
            "need one retrieved action and one code per other agent",
        ));
    }
    let width = retrieved[0].len();
    let mut sum = vec![0.0; width];
    for (a, p) in retrieved.iter().zip(codes) {
        if a.len() != width || p.len() != width {
            return Err(MrdgError::contract("hypernet", "action and code widths differ"));
        }
        for ((s, x), y) in sum.iter_mut().zip(a).zip(p) {
            *s += x + y;
        }
    }
    Ok(sum)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hypernet {
    pub spec: MlpSpec,
    pub params: Vec<f64>,
}

impl Hypernet {
    pub fn new(spec: MlpSpec, params: Vec<f64>) -> Result<Self> {
        if params.len() != spec.param_count() {
            return Err(MrdgError::Config("hypernetwork parameter count mismatch".into()));
        }
        Ok(Self { spec, params })
    }

    pub fn output_width(&self) -> usize {
        self.spec.output_width()
    }

    /// Generated adapted-layer parameters plus the tape for `hyper_backward`.
    pub fn generate(&self, aggregated: &[f64]) -> Result<(Vec<f64>, Tape)> {
        if aggregated.len() != self.spec.input_width() {
            return Err(MrdgError::contract(
                "hypernet",
                format!("input width {} but hypernet expects {}", aggregated.len(), self.spec.input_width()),
            ));
        }
        mlp_forward(&self.spec, &self.params, aggregated)
    }

    /// Gradient on the hypernet parameters given the gradient on the
    /// generated parameters.
    pub fn hyper_backward(&self, tape: &Tape, upstream: &[f64]) -> Result<Vec<f64>> {
        if upstream.len() != self.output_width() {
            return Err(MrdgError::contract("hypernet", "upstream gradient width mismatch"));
        }
        mlp_backward(&self.spec, &self.params, tape, upstream)
            .map(|(g, _)| g)
            .map_err(|e| match e {
                MrdgError::Contract { message, .. } => MrdgError::contract("hypernet", message),
                other => other,
            })
    }
}
