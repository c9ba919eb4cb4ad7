use std::collections::BTreeMap;
use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::replay::Transition;
use crate::hypernet::Hypernet;
use crate::numerics::{mlp_backward, mlp_forward, MlpSpec, ParameterVector, Tape};
use crate::rng;
use crate::{MrdgError, Result};

/// Which learner layers the hypernetwork writes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdaptedLayers {
    /// The layer producing the second hidden activation.
    #[default]
    Second,
    /// The first two layers.
    FirstTwo,
}

impl AdaptedLayers {
    pub fn indices(self) -> Vec<usize> {
        match self {
            AdaptedLayers::Second => vec![1],
            AdaptedLayers::FirstTwo => vec![0, 1],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HypeState {
    /// The adapted slice is an ordinary learned parameter.
    Learned,
    /// Generated for the current step.
    Fresh,
    /// Generated by hypernet parameters that have since changed.
    Stale,
}

/// Learner Q-network parameters: segments `marl/l<k>` hold ordinary layers
/// and `hype/l<k>` the adapted slice, in network layer order.
#[derive(Clone, Debug)]
pub struct LearnerParams {
    spec: MlpSpec,
    adapted: Vec<usize>,
    params: ParameterVector,
    hype_state: HypeState,
}

pub fn segment_name(layer: usize, adapted: bool) -> String {
    if adapted {
        format!("hype/l{layer}")
    } else {
        format!("marl/l{layer}")
    }
}

impl LearnerParams {
    /// Glorot init, each layer seeded by `(seed, "learner/<segment>")`.
    pub fn init(spec: MlpSpec, adapted: &[usize], seed: u64) -> Result<Self> {
        spec.validate()?;
        if adapted.is_empty() || adapted.iter().any(|&l| l >= spec.n_layers()) {
            return Err(MrdgError::Config(format!(
                "adapted layers {adapted:?} do not exist in a {}-layer learner network",
                spec.n_layers()
            )));
        }
        let mut params = ParameterVector::new();
        for l in 0..spec.n_layers() {
            let name = segment_name(l, adapted.contains(&l));
            let values = spec.init_layer(l, &mut rng::stream(seed, &format!("learner/{name}")));
            params.push(name, values)?;
        }
        Ok(Self {
            spec,
            adapted: adapted.to_vec(),
            params,
            hype_state: HypeState::Learned,
        })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn adapted(&self) -> &[usize] {
        &self.adapted
    }

    pub fn vector(&self) -> &ParameterVector {
        &self.params
    }

    pub fn vector_mut(&mut self) -> &mut ParameterVector {
        &mut self.params
    }

    pub fn hype_state(&self) -> HypeState {
        self.hype_state
    }

    pub(crate) fn set_hype_state(&mut self, s: HypeState) {
        self.hype_state = s;
    }

    pub fn hype_ranges(&self) -> Vec<Range<usize>> {
        self.adapted.iter().map(|&l| self.spec.layer_range(l)).collect()
    }

    pub fn marl_ranges(&self) -> Vec<Range<usize>> {
        (0..self.spec.n_layers())
            .filter(|l| !self.adapted.contains(l))
            .map(|l| self.spec.layer_range(l))
            .collect()
    }

    pub fn hype_len(&self) -> usize {
        self.hype_ranges().iter().map(|r| r.len()).sum()
    }

    pub fn marl_len(&self) -> usize {
        self.marl_ranges().iter().map(|r| r.len()).sum()
    }

    pub fn marl(&self) -> Vec<f64> {
        gather(self.params.as_slice(), &self.marl_ranges())
    }

    pub fn hype(&self) -> Vec<f64> {
        gather(self.params.as_slice(), &self.hype_ranges())
    }

    pub fn set_marl(&mut self, values: &[f64]) -> Result<()> {
        let ranges = self.marl_ranges();
        scatter(self.params.as_mut_slice(), &ranges, values)
    }

    pub fn set_hype(&mut self, values: &[f64]) -> Result<()> {
        let ranges = self.hype_ranges();
        scatter(self.params.as_mut_slice(), &ranges, values)
    }

    /// Writes a freshly generated adapted slice.
    pub fn install_hype(&mut self, values: &[f64]) -> Result<()> {
        self.set_hype(values)?;
        self.hype_state = HypeState::Fresh;
        Ok(())
    }

    /// Full flat parameter array with `hype` substituted for the adapted slice.
    pub fn assembled(&self, hype: &[f64]) -> Result<Vec<f64>> {
        let mut full = self.params.as_slice().to_vec();
        scatter(&mut full, &self.hype_ranges(), hype)?;
        Ok(full)
    }
}

pub(crate) fn gather(data: &[f64], ranges: &[Range<usize>]) -> Vec<f64> {
    ranges.iter().flat_map(|r| data[r.clone()].iter().copied()).collect()
}

pub(crate) fn scatter(data: &mut [f64], ranges: &[Range<usize>], values: &[f64]) -> Result<()> {
    let total: usize = ranges.iter().map(|r| r.len()).sum();
    if total != values.len() {
        return Err(MrdgError::contract(
            "learner",
            format!("slice has {total} entries, got {}", values.len()),
        ));
    }
    let mut off = 0;
    for r in ranges {
        data[r.clone()].copy_from_slice(&values[off..off + r.len()]);
        off += r.len();
    }
    Ok(())
}

/// Q values from the parameters as they stand. Refuses to run on an adapted
/// slice generated by hypernet parameters that have since been updated.
pub fn q_values(params: &LearnerParams, observation: &[f64]) -> Result<Vec<f64>> {
    if params.hype_state == HypeState::Stale {
        return Err(MrdgError::contract(
            "learner",
            "adapted layer is stale; regenerate it before querying Q values",
        ));
    }
    Ok(mlp_forward(&params.spec, params.params.as_slice(), observation)?.0)
}

/// Epsilon-greedy: uniform with probability `epsilon`, otherwise the argmax
/// with ties going to the smallest index.
pub fn select_action<R: Rng + ?Sized>(q: &[f64], epsilon: f64, rng: &mut R) -> usize {
    if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
        return rng.gen_range(0..q.len());
    }
    argmax(q)
}

pub fn argmax(q: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate().skip(1) {
        if v > q[best] {
            best = i;
        }
    }
    best
}

/// `r + gamma * max(next_q)`, or `r` at episode end.
pub fn td_target(reward: f64, gamma: f64, next_q: &[f64], done: bool) -> f64 {
    if done || gamma == 0.0 {
        reward
    } else {
        reward + gamma * next_q.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// `theta_marl <- lambda * theta_marl + gamma * theta_ri`.
pub fn reinitialize(marl: &mut [f64], fresh: &[f64], lambda: f64, gamma: f64) -> Result<()> {
    if marl.len() != fresh.len() {
        return Err(MrdgError::contract("learner", "re-initialization shapes differ"));
    }
    if !(lambda >= 0.0) || !(gamma >= 0.0) {
        return Err(MrdgError::Config("re-initialization factors must be >= 0".into()));
    }
    for (p, r) in marl.iter_mut().zip(fresh) {
        *p = lambda * *p + gamma * r;
    }
    Ok(())
}

/// Learner Q network, optionally with its adapted slice produced by a
/// hypernetwork.
#[derive(Clone, Debug)]
pub struct QNet {
    pub params: LearnerParams,
    pub hyper: Option<Hypernet>,
}

impl QNet {
    pub fn new(params: LearnerParams, hyper: Option<Hypernet>) -> Result<Self> {
        if let Some(h) = &hyper {
            if h.output_width() != params.hype_len() {
                return Err(MrdgError::Config(format!(
                    "hypernet emits {} values but the adapted slice has {}",
                    h.output_width(),
                    params.hype_len()
                )));
            }
        }
        Ok(Self { params, hyper })
    }

    /// Adapted slice for a hypernet input, or the learned slice without one.
    pub fn generate(&self, hyper_input: &[f64]) -> Result<Vec<f64>> {
        match &self.hyper {
            Some(h) => Ok(h.generate(hyper_input)?.0),
            None => Ok(self.params.hype()),
        }
    }

    /// Regenerates and installs the adapted slice for this step.
    pub fn refresh(&mut self, hyper_input: &[f64]) -> Result<()> {
        if self.hyper.is_some() {
            let hype = self.generate(hyper_input)?;
            self.params.install_hype(&hype)?;
        }
        Ok(())
    }

    pub fn q_values(&self, observation: &[f64]) -> Result<Vec<f64>> {
        q_values(&self.params, observation)
    }

    /// Q values for an explicit hypernet input without touching state.
    pub fn q_values_for(&self, observation: &[f64], hyper_input: &[f64]) -> Result<Vec<f64>> {
        if self.hyper.is_none() {
            return self.q_values(observation);
        }
        let full = self.params.assembled(&self.generate(hyper_input)?)?;
        Ok(mlp_forward(self.params.spec(), &full, observation)?.0)
    }

    /// Marks the installed slice stale after the hypernet parameters change.
    pub fn hyper_updated(&mut self) {
        if self.hyper.is_some() {
            self.params.set_hype_state(HypeState::Stale);
        }
    }
}

#[derive(Clone, Debug)]
pub struct TdResult {
    pub loss: f64,
    /// Gradient in the learner's full layout. With a hypernet the adapted
    /// slice entries are zero; their gradient is routed into `hyper_grad`.
    pub learner_grad: Vec<f64>,
    pub hyper_grad: Option<Vec<f64>>,
    /// Smallest ReLU margin seen (for gradient checks).
    pub kink_margin: f64,
}

fn bits_key(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

struct Generated {
    full: Vec<f64>,
    tape: Option<Tape>,
}

fn generate_all<'a>(net: &QNet, inputs: impl Iterator<Item = &'a Vec<f64>>) -> Result<BTreeMap<Vec<u64>, Generated>> {
    let mut out = BTreeMap::new();
    for x in inputs {
        let key = bits_key(x);
        if out.contains_key(&key) {
            continue;
        }
        let g = match &net.hyper {
            Some(h) => {
                let (hype, tape) = h.generate(x)?;
                Generated {
                    full: net.params.assembled(&hype)?,
                    tape: Some(tape),
                }
            }
            None => Generated {
                full: net.params.vector().as_slice().to_vec(),
                tape: None,
            },
        };
        out.insert(key, g);
    }
    Ok(out)
}

/// TD targets of a batch under the (frozen) target network.
pub fn td_targets(target: &QNet, batch: &[&Transition], gamma: f64) -> Result<Vec<f64>> {
    let gens = generate_all(target, batch.iter().filter(|t| !t.done).map(|t| &t.next_hyper_input))?;
    batch
        .iter()
        .map(|t| {
            if t.done {
                return Ok(t.reward);
            }
            let g = &gens[&bits_key(&t.next_hyper_input)];
            let (nq, _) = mlp_forward(target.params.spec(), &g.full, &t.next_obs)?;
            Ok(td_target(t.reward, gamma, &nq, false))
        })
        .collect()
}

/// Mean squared TD error of the batch against fixed `targets` and its
/// gradient, routed through the hypernetwork for the adapted slice.
pub fn td_loss_and_grad_with_targets(online: &QNet, batch: &[&Transition], targets: &[f64]) -> Result<TdResult> {
    if batch.is_empty() || batch.len() != targets.len() {
        return Err(MrdgError::contract("learner", "TD batch and targets must be non-empty and aligned"));
    }
    let spec = online.params.spec();
    let n = batch.len() as f64;
    let gens = generate_all(online, batch.iter().map(|t| &t.hyper_input))?;
    let mut per_input: BTreeMap<Vec<u64>, Vec<f64>> = BTreeMap::new();
    let mut loss = 0.0;
    let mut margin = f64::INFINITY;
    for (t, &y) in batch.iter().zip(targets) {
        if t.action >= spec.output_width() {
            return Err(MrdgError::contract("learner", "transition action out of range"));
        }
        let key = bits_key(&t.hyper_input);
        let g = &gens[&key];
        let (q, tape) = mlp_forward(spec, &g.full, &t.obs)?;
        margin = margin.min(tape.kink_margin(spec.activation));
        let err = q[t.action] - y;
        loss += err * err / n;
        let mut up = vec![0.0; q.len()];
        up[t.action] = 2.0 * err / n;
        let (pg, _) = mlp_backward(spec, &g.full, &tape, &up)?;
        let acc = per_input.entry(key).or_insert_with(|| vec![0.0; pg.len()]);
        for (a, b) in acc.iter_mut().zip(&pg) {
            *a += b;
        }
    }
    if !loss.is_finite() {
        return Err(MrdgError::non_finite("learner", "TD loss"));
    }
    let mut learner_grad = vec![0.0; spec.param_count()];
    for g in per_input.values() {
        for (a, b) in learner_grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    let hype_ranges = online.params.hype_ranges();
    let hyper_grad = match &online.hyper {
        Some(h) => {
            let mut hg = vec![0.0; h.params.len()];
            for (key, g) in &per_input {
                let gen = &gens[key];
                let tape = gen.tape.as_ref().expect("hypernet tape");
                margin = margin.min(tape.kink_margin(h.spec.activation));
                let upstream = gather(g, &hype_ranges);
                for (a, b) in hg.iter_mut().zip(h.hyper_backward(tape, &upstream)?) {
                    *a += b;
                }
            }
            let zeros = vec![0.0; online.params.hype_len()];
            scatter(&mut learner_grad, &hype_ranges, &zeros)?;
            Some(hg)
        }
        None => None,
    };
    Ok(TdResult {
        loss,
        learner_grad,
        hyper_grad,
        kink_margin: margin,
    })
}

/// Targets from `target`, loss and gradients for `online`.
pub fn td_loss_and_grad(online: &QNet, target: &QNet, batch: &[&Transition], gamma: f64) -> Result<TdResult> {
    let targets = td_targets(target, batch, gamma)?;
    td_loss_and_grad_with_targets(online, batch, &targets)
}
