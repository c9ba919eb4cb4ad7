use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{MrdgError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative given the pre-activation `z` and post-activation `a`.
    /// The ReLU subgradient at exactly zero is 0.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputHead {
    Linear,
    Softmax,
}

/// Shape of a fully connected network. Hidden layers use `activation`; the
/// last layer is affine followed by `output_head`.
///
/// Parameters are laid out layer by layer: the `out x in` weight matrix in
/// row-major order, then the `out` biases.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub output_head: OutputHead,
}

impl MlpSpec {
    pub fn new(layer_sizes: Vec<usize>, activation: Activation, output_head: OutputHead) -> Result<Self> {
        let spec = Self {
            layer_sizes,
            activation,
            output_head,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(MrdgError::Config("an MLP needs at least two layer sizes".into()));
        }
        if self.layer_sizes.iter().any(|&s| s == 0) {
            return Err(MrdgError::Config("MLP layer sizes must be >= 1".into()));
        }
        Ok(())
    }

    pub fn n_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn input_width(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_width(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn layer_param_count(&self, layer: usize) -> usize {
        let (i, o) = (self.layer_sizes[layer], self.layer_sizes[layer + 1]);
        o * i + o
    }

    pub fn param_count(&self) -> usize {
        (0..self.n_layers()).map(|l| self.layer_param_count(l)).sum()
    }

    pub fn layer_range(&self, layer: usize) -> Range<usize> {
        let start: usize = (0..layer).map(|l| self.layer_param_count(l)).sum();
        start..start + self.layer_param_count(layer)
    }

    /// Glorot-uniform weights and zero biases for one layer.
    pub fn init_layer<R: Rng + ?Sized>(&self, layer: usize, rng: &mut R) -> Vec<f64> {
        let (fan_in, fan_out) = (self.layer_sizes[layer], self.layer_sizes[layer + 1]);
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let mut out: Vec<f64> = (0..fan_in * fan_out).map(|_| rng.gen_range(-bound..=bound)).collect();
        out.extend(std::iter::repeat(0.0).take(fan_out));
        out
    }

    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.n_layers()).flat_map(|l| self.init_layer(l, rng)).collect()
    }
}

/// Activation record of one forward pass.
#[derive(Clone, Debug)]
pub struct Tape {
    layer_sizes: Vec<usize>,
    fingerprint: u64,
    /// Input to each layer; `inputs[0]` is the network input.
    inputs: Vec<Vec<f64>>,
    preacts: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl Tape {
    pub fn output(&self) -> &[f64] {
        &self.output
    }

    pub fn input(&self) -> &[f64] {
        &self.inputs[0]
    }

    /// Smallest |pre-activation| over ReLU hidden units, or +inf when the
    /// network has none. Finite-difference checks re-sample when this is tiny.
    pub fn kink_margin(&self, activation: Activation) -> f64 {
        if activation != Activation::Relu {
            return f64::INFINITY;
        }
        let hidden = self.preacts.len().saturating_sub(1);
        self.preacts[..hidden]
            .iter()
            .flatten()
            .fold(f64::INFINITY, |m, z| m.min(z.abs()))
    }
}

fn fingerprint(params: &[f64]) -> u64 {
    params.iter().fold(0x243f_6a88_85a3_08d3u64, |h, v| {
        (h ^ v.to_bits()).rotate_left(17).wrapping_mul(0x9e37_79b9_7f4a_7c15)
    })
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn check_params(spec: &MlpSpec, params: &[f64]) -> Result<()> {
    spec.validate()?;
    if params.len() != spec.param_count() {
        return Err(MrdgError::Config(format!(
            "MLP {:?} needs {} parameters, got {}",
            spec.layer_sizes,
            spec.param_count(),
            params.len()
        )));
    }
    Ok(())
}

pub fn mlp_forward(spec: &MlpSpec, params: &[f64], input: &[f64]) -> Result<(Vec<f64>, Tape)> {
    check_params(spec, params)?;
    if input.len() != spec.input_width() {
        return Err(MrdgError::Config(format!(
            "MLP input width {} but got {}",
            spec.input_width(),
            input.len()
        )));
    }
    let n = spec.n_layers();
    let mut inputs = Vec::with_capacity(n);
    let mut preacts = Vec::with_capacity(n);
    let mut x = input.to_vec();
    for l in 0..n {
        let (fan_in, fan_out) = (spec.layer_sizes[l], spec.layer_sizes[l + 1]);
        let layer = &params[spec.layer_range(l)];
        let (w, b) = layer.split_at(fan_in * fan_out);
        let z: Vec<f64> = w
            .chunks_exact(fan_in)
            .zip(b)
            .map(|(row, bias)| bias + row.iter().zip(&x).map(|(a, c)| a * c).sum::<f64>())
            .collect();
        let next = if l + 1 < n {
            z.iter().map(|&v| spec.activation.apply(v)).collect()
        } else {
            match spec.output_head {
                OutputHead::Linear => z.clone(),
                OutputHead::Softmax => softmax(&z),
            }
        };
        inputs.push(std::mem::replace(&mut x, next));
        preacts.push(z);
    }
    let tape = Tape {
        layer_sizes: spec.layer_sizes.clone(),
        fingerprint: fingerprint(params),
        inputs,
        preacts,
        output: x.clone(),
    };
    Ok((x, tape))
}

/// Reverse pass. Returns `(param_grad, input_grad)` for the scalar whose
/// gradient with respect to the network output is `upstream`.
pub fn mlp_backward(spec: &MlpSpec, params: &[f64], tape: &Tape, upstream: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    check_params(spec, params)?;
    if tape.layer_sizes != spec.layer_sizes || tape.fingerprint != fingerprint(params) {
        return Err(MrdgError::contract("numerics", "tape does not match these parameters"));
    }
    if upstream.len() != spec.output_width() {
        return Err(MrdgError::contract("numerics", "upstream gradient width mismatch"));
    }
    let n = spec.n_layers();
    let mut grad = vec![0.0; params.len()];
    // Gradient w.r.t. the last pre-activation.
    let mut delta: Vec<f64> = match spec.output_head {
        OutputHead::Linear => upstream.to_vec(),
        OutputHead::Softmax => {
            let y = &tape.output;
            let dot: f64 = y.iter().zip(upstream).map(|(a, b)| a * b).sum();
            y.iter().zip(upstream).map(|(yi, gi)| yi * (gi - dot)).collect()
        }
    };
    for l in (0..n).rev() {
        let (fan_in, fan_out) = (spec.layer_sizes[l], spec.layer_sizes[l + 1]);
        let range = spec.layer_range(l);
        let w = &params[range.start..range.start + fan_in * fan_out];
        let x = &tape.inputs[l];
        {
            let g = &mut grad[range];
            let (gw, gb) = g.split_at_mut(fan_in * fan_out);
            for (o, &d) in delta.iter().enumerate() {
                if d != 0.0 {
                    for (gwi, xi) in gw[o * fan_in..(o + 1) * fan_in].iter_mut().zip(x) {
                        *gwi += d * xi;
                    }
                }
                gb[o] += d;
            }
        }
        let mut dx = vec![0.0; fan_in];
        for (o, &d) in delta.iter().enumerate() {
            if d != 0.0 {
                for (dxi, wi) in dx.iter_mut().zip(&w[o * fan_in..(o + 1) * fan_in]) {
                    *dxi += d * wi;
                }
            }
        }
        if l == 0 {
            return Ok((grad, dx));
        }
        let z = &tape.preacts[l - 1];
        let a = &tape.inputs[l];
        delta = dx
            .iter()
            .zip(z.iter().zip(a))
            .map(|(g, (&zi, &ai))| g * spec.activation.derivative(zi, ai))
            .collect();
    }
    unreachable!("an MLP has at least one layer")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_grad, relative_error};
    use crate::rng;

    fn identity_net() -> (MlpSpec, Vec<f64>) {
        let spec = MlpSpec::new(vec![2, 2], Activation::Identity, OutputHead::Linear).unwrap();
        (spec, vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0])
    }

    #[test]
    fn identity_case() {
        let (spec, p) = identity_net();
        let (y, _) = mlp_forward(&spec, &p, &[1.0, 2.0]).unwrap();
        assert_eq!(y, vec![1.0, 2.0]);
    }

    #[test]
    fn softmax_head_symmetry_and_shift() {
        let spec = MlpSpec::new(vec![1, 2], Activation::Identity, OutputHead::Softmax).unwrap();
        let (y, _) = mlp_forward(&spec, &[0.0, 0.0, 0.0, 0.0], &[1.0]).unwrap();
        assert_eq!(y, vec![0.5, 0.5]);
        let a = softmax(&[0.3, -1.2, 2.0]);
        let b = softmax(&[100.3, 98.8, 102.0]);
        for (x, z) in a.iter().zip(&b) {
            assert!((x - z).abs() < 1e-12);
        }
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_config_error() {
        let (spec, p) = identity_net();
        assert!(matches!(mlp_forward(&spec, &p, &[1.0]), Err(MrdgError::Config(_))));
        assert!(matches!(mlp_forward(&spec, &p[..5], &[1.0, 2.0]), Err(MrdgError::Config(_))));
        assert!(MlpSpec::new(vec![3], Activation::Relu, OutputHead::Linear).is_err());
        assert!(MlpSpec::new(vec![3, 0], Activation::Relu, OutputHead::Linear).is_err());
    }

    #[test]
    fn hand_derivative_linear() {
        let spec = MlpSpec::new(vec![1, 1], Activation::Identity, OutputHead::Linear).unwrap();
        let p = [0.7, 0.0];
        let (_, tape) = mlp_forward(&spec, &p, &[3.0]).unwrap();
        let (g, dx) = mlp_backward(&spec, &p, &tape, &[1.0]).unwrap();
        assert_eq!(g, vec![3.0, 1.0]);
        assert_eq!(dx, vec![0.7]);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let spec = MlpSpec::new(vec![3, 4, 2], Activation::Tanh, OutputHead::Softmax).unwrap();
        let p = spec.init_params(&mut rng::stream(1, "t"));
        let (_, tape) = mlp_forward(&spec, &p, &[0.1, -0.2, 0.3]).unwrap();
        let (g, dx) = mlp_backward(&spec, &p, &tape, &[0.0, 0.0]).unwrap();
        assert!(g.iter().chain(&dx).all(|&v| v == 0.0));
    }

    #[test]
    fn stale_tape_is_rejected() {
        let spec = MlpSpec::new(vec![2, 3, 1], Activation::Relu, OutputHead::Linear).unwrap();
        let mut p = spec.init_params(&mut rng::stream(2, "t"));
        let (_, tape) = mlp_forward(&spec, &p, &[1.0, 1.0]).unwrap();
        p[0] += 1.0;
        assert!(matches!(
            mlp_backward(&spec, &p, &tape, &[1.0]),
            Err(MrdgError::Contract { .. })
        ));
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let spec = MlpSpec::new(vec![1, 1, 1], Activation::Relu, OutputHead::Linear).unwrap();
        // hidden pre-activation = 1*0 + 0 = 0
        let p = [1.0, 0.0, 2.0, 0.0];
        let (_, tape) = mlp_forward(&spec, &p, &[0.0]).unwrap();
        let (g, _) = mlp_backward(&spec, &p, &tape, &[1.0]).unwrap();
        assert_eq!(g[0], 0.0);
        assert_eq!(g[1], 0.0);
    }

    #[test]
    fn random_three_layer_net_matches_finite_differences() {
        let mut r = rng::stream(3, "mlp-fd");
        for act in [Activation::Tanh, Activation::Relu, Activation::Identity] {
            for head in [OutputHead::Linear, OutputHead::Softmax] {
                let spec = MlpSpec::new(vec![4, 5, 3, 3], act, head).unwrap();
                let p = spec.init_params(&mut r);
                let x: Vec<f64> = (0..4).map(|_| r.gen_range(-1.0..1.0)).collect();
                let up: Vec<f64> = (0..3).map(|_| r.gen_range(-1.0..1.0)).collect();
                let (_, tape) = mlp_forward(&spec, &p, &x).unwrap();
                if tape.kink_margin(act) < 1e-5 {
                    continue;
                }
                let (g, _) = mlp_backward(&spec, &p, &tape, &up).unwrap();
                let fd = finite_diff_grad(
                    |q| {
                        let (y, _) = mlp_forward(&spec, q, &x).unwrap();
                        y.iter().zip(&up).map(|(a, b)| a * b).sum()
                    },
                    &p,
                    1e-6,
                )
                .unwrap();
                assert!(relative_error(&g, &fd) < 1e-4, "{act:?} {head:?}");
            }
        }
    }

    #[test]
    fn forward_is_bit_deterministic() {
        let spec = MlpSpec::new(vec![3, 8, 2], Activation::Relu, OutputHead::Linear).unwrap();
        let p = spec.init_params(&mut rng::stream(4, "t"));
        let a = mlp_forward(&spec, &p, &[0.3, 0.1, -0.7]).unwrap().0;
        let b = mlp_forward(&spec, &p, &[0.3, 0.1, -0.7]).unwrap().0;
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }
}
