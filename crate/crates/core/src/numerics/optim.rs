use serde::{Deserialize, Serialize};

use super::ensure_finite;
use crate::{MrdgError, Result};

/// `p <- p - lr * g`.
pub fn sgd_step(params: &mut [f64], grads: &[f64], learning_rate: f64) -> Result<()> {
    check(params, grads, learning_rate)?;
    for (p, g) in params.iter_mut().zip(grads) {
        *p -= learning_rate * g;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamHyper {
    pub fn with_lr(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
    pub steps: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            first: vec![0.0; len],
            second: vec![0.0; len],
            steps: 0,
        }
    }
}

/// Adam with bias-corrected moments.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, hyper: &AdamHyper) -> Result<()> {
    check(params, grads, hyper.learning_rate)?;
    if state.first.len() != params.len() {
        *state = AdamState::new(params.len());
    }
    state.steps += 1;
    let t = state.steps as i32;
    let c1 = 1.0 - hyper.beta1.powi(t);
    let c2 = 1.0 - hyper.beta2.powi(t);
    for (i, (p, &g)) in params.iter_mut().zip(grads).enumerate() {
        let m = &mut state.first[i];
        let v = &mut state.second[i];
        *m = hyper.beta1 * *m + (1.0 - hyper.beta1) * g;
        *v = hyper.beta2 * *v + (1.0 - hyper.beta2) * g * g;
        *p -= hyper.learning_rate * (*m / c1) / ((*v / c2).sqrt() + hyper.epsilon);
    }
    Ok(())
}

fn check(params: &[f64], grads: &[f64], learning_rate: f64) -> Result<()> {
    if params.len() != grads.len() {
        return Err(MrdgError::contract(
            "numerics",
            format!("{} parameters but {} gradients", params.len(), grads.len()),
        ));
    }
    if !(learning_rate > 0.0) {
        return Err(MrdgError::Config(format!("learning rate must be > 0, got {learning_rate}")));
    }
    ensure_finite("numerics", "gradient", grads)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// An optimizer bound to one parameter block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Optimizer {
    Sgd { learning_rate: f64 },
    Adam { hyper: AdamHyper, state: AdamState },
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64, len: usize) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd { learning_rate },
            OptimizerKind::Adam => Optimizer::Adam {
                hyper: AdamHyper::with_lr(learning_rate),
                state: AdamState::new(len),
            },
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        match self {
            Optimizer::Sgd { learning_rate } => sgd_step(params, grads, *learning_rate),
            Optimizer::Adam { hyper, state } => adam_step(params, grads, state, hyper),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_examples() {
        let mut p = [1.0];
        sgd_step(&mut p, &[2.0], 0.5).unwrap();
        assert_eq!(p, [0.0]);
        let mut q = [1.5, -2.0];
        sgd_step(&mut q, &[0.0, 0.0], 0.1).unwrap();
        assert_eq!(q, [1.5, -2.0]);
    }

    #[test]
    fn adam_first_step() {
        // m = 0.1, v = 0.001; bias correction restores m_hat = v_hat = 1, so the
        // step is lr * 1 / (1 + 1e-8).
        let mut p = [0.0];
        let mut s = AdamState::new(1);
        adam_step(&mut p, &[1.0], &mut s, &AdamHyper::with_lr(0.1)).unwrap();
        let expected = -0.1 / (1.0 + 1e-8);
        assert!((p[0] - expected).abs() < 1e-15, "{}", p[0]);
        assert_eq!(s.steps, 1);
    }

    #[test]
    fn rejects_non_finite_and_bad_lr() {
        let mut p = [0.0, 0.0];
        assert!(matches!(
            sgd_step(&mut p, &[1.0, f64::NAN], 0.1),
            Err(MrdgError::NonFinite { .. })
        ));
        assert!(sgd_step(&mut p, &[1.0, 1.0], 0.0).is_err());
        assert!(sgd_step(&mut p, &[1.0], 0.1).is_err());
    }
}
