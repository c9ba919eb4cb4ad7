//! Sinusoidal codes for agent indices and the per-agent viewpoint-alignment
//! encoders trained with a squared-distance alignment loss.

use serde::{Deserialize, Serialize};

use crate::numerics::{mlp_backward, mlp_forward, MlpSpec, Optimizer};
use crate::{MrdgError, Result};

/// What the exponent denominator of the frequency `w_k = 10000^(-2k/D)` is.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PeBase {
    /// `D = d`, the code width.
    #[default]
    Width,
    /// `D = N - 1`, one less than the number of agents.
    Agents,
}

impl PeBase {
    pub fn denominator(self, width: usize, n_agents: usize) -> f64 {
        match self {
            PeBase::Width => width as f64,
            PeBase::Agents => n_agents.saturating_sub(1).max(1) as f64,
        }
    }
}

/// Code of agent `index`: entry `2k` is `sin(w_k i)`, entry `2k+1` is
/// `cos(w_k i)`, with `w_k = 10000^(-2k / denominator)`.
pub fn positional_code(index: usize, width: usize, denominator: f64) -> Result<Vec<f64>> {
    if width < 2 || width % 2 != 0 {
        return Err(MrdgError::Config(format!("positional code width must be even and >= 2, got {width}")));
    }
    if !(denominator > 0.0) {
        return Err(MrdgError::Config("positional code denominator must be > 0".into()));
    }
    let i = index as f64;
    let mut code = Vec::with_capacity(width);
    for k in 0..width / 2 {
        let w = 10000f64.powf(-(2.0 * k as f64) / denominator);
        code.push((w * i).sin());
        code.push((w * i).cos());
    }
    Ok(code)
}

/// Viewpoint-alignment encoder of one other agent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VaEncoder {
    pub agent_id: usize,
    pub spec: MlpSpec,
    pub params: Vec<f64>,
}

impl VaEncoder {
    pub fn new(agent_id: usize, spec: MlpSpec, params: Vec<f64>) -> Result<Self> {
        if params.len() != spec.param_count() {
            return Err(MrdgError::Config(format!("VA encoder {agent_id}: parameter count mismatch")));
        }
        Ok(Self { agent_id, spec, params })
    }

    /// Serves both the other agent's own observation and the learner's
    /// observation seen through this agent's encoder.
    pub fn encode(&self, observation: &[f64]) -> Result<Vec<f64>> {
        if observation.len() != self.spec.input_width() {
            return Err(MrdgError::contract(
                "encoding",
                format!("observation width {} but encoder expects {}", observation.len(), self.spec.input_width()),
            ));
        }
        Ok(mlp_forward(&self.spec, &self.params, observation)?.0)
    }

    pub fn embedding_width(&self) -> usize {
        self.spec.output_width()
    }
}

/// `sum_t |x_t - b_t|^2` over paired steps.
pub fn va_loss(xs: &[Vec<f64>], bs: &[Vec<f64>]) -> Result<f64> {
    if xs.len() != bs.len() {
        return Err(MrdgError::contract("encoding", "alignment sequences differ in length"));
    }
    let mut total = 0.0;
    for (x, b) in xs.iter().zip(bs) {
        if x.len() != b.len() {
            return Err(MrdgError::contract("encoding", "alignment embeddings differ in width"));
        }
        total += x.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>();
    }
    Ok(total)
}

/// A paired step: the other agent's observation and the learner's.
pub type VaPair = (Vec<f64>, Vec<f64>);

/// Alignment loss of a batch and its gradient with respect to the encoder
/// parameters. Both embeddings depend on the encoder, so both contribute.
pub fn va_loss_and_grad(encoder: &VaEncoder, batch: &[VaPair]) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; encoder.params.len()];
    let mut loss = 0.0;
    for (other, learner) in batch {
        for o in [other, learner] {
            if o.len() != encoder.spec.input_width() {
                return Err(MrdgError::contract("encoding", "observation width mismatch in alignment batch"));
            }
        }
        let (x, tx) = mlp_forward(&encoder.spec, &encoder.params, other)?;
        let (b, tb) = mlp_forward(&encoder.spec, &encoder.params, learner)?;
        let diff: Vec<f64> = x.iter().zip(&b).map(|(p, q)| p - q).collect();
        loss += diff.iter().map(|d| d * d).sum::<f64>();
        let up: Vec<f64> = diff.iter().map(|d| 2.0 * d).collect();
        let neg: Vec<f64> = up.iter().map(|g| -g).collect();
        let (gx, _) = mlp_backward(&encoder.spec, &encoder.params, &tx, &up)?;
        let (gb, _) = mlp_backward(&encoder.spec, &encoder.params, &tb, &neg)?;
        for ((g, a), c) in grad.iter_mut().zip(&gx).zip(&gb) {
            *g += a + c;
        }
    }
    Ok((loss, grad))
}

/// One optimizer step on the alignment loss; returns the loss before the step.
pub fn va_update(encoder: &mut VaEncoder, optimizer: &mut Optimizer, batch: &[VaPair]) -> Result<f64> {
    let (loss, grad) = va_loss_and_grad(encoder, batch)?;
    optimizer.step(&mut encoder.params, &grad)?;
    Ok(loss)
}
