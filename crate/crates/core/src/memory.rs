//! Episodic memory of other agents' embedded observations and actions, with
//! nearest-neighbour retrieval through a learned projection and mode
//! aggregation of the retrieved actions.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::numerics::{mlp_backward, mlp_forward, softmax, MlpSpec, Tape};
use crate::{MrdgError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub agent_id: usize,
    pub embedding: Vec<f64>,
    pub action: usize,
    pub time: u64,
}

/// Per-agent ring buffers; the oldest entry is evicted first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodicMemory {
    width: usize,
    capacity: usize,
    buffers: BTreeMap<usize, VecDeque<MemoryEntry>>,
}

impl EpisodicMemory {
    pub fn new(width: usize, capacity: usize) -> Result<Self> {
        if width == 0 || capacity == 0 {
            return Err(MrdgError::Config("memory width and capacity must be >= 1".into()));
        }
        Ok(Self {
            width,
            capacity,
            buffers: BTreeMap::new(),
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn append(&mut self, agent_id: usize, embedding: Vec<f64>, action: usize, time: u64) -> Result<()> {
        if embedding.len() != self.width {
            return Err(MrdgError::contract(
                "memory",
                format!("embedding width {} but memory expects {}", embedding.len(), self.width),
            ));
        }
        let buf = self.buffers.entry(agent_id).or_default();
        if buf.back().is_some_and(|e| e.time > time) {
            return Err(MrdgError::contract("memory", "entries must be appended in time order"));
        }
        if buf.len() == self.capacity {
            buf.pop_front();
        }
        buf.push_back(MemoryEntry {
            agent_id,
            embedding,
            action,
            time,
        });
        Ok(())
    }

    pub fn entries(&self, agent_id: usize) -> impl ExactSizeIterator<Item = &MemoryEntry> + '_ {
        static EMPTY: VecDeque<MemoryEntry> = VecDeque::new();
        self.buffers.get(&agent_id).unwrap_or(&EMPTY).iter()
    }

    pub fn len(&self, agent_id: usize) -> usize {
        self.buffers.get(&agent_id).map_or(0, VecDeque::len)
    }

    pub fn agents(&self) -> impl Iterator<Item = usize> + '_ {
        self.buffers.keys().copied()
    }

    pub fn clear(&mut self) {
        self.buffers.clear();
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    /// Squared Euclidean distance; ranks identically to Euclidean.
    #[default]
    Euclidean,
    /// `1 - cos(q, k)`.
    Cosine,
}

impl Metric {
    fn distance(self, q: &[f64], k: &[f64]) -> f64 {
        match self {
            Metric::Euclidean => q.iter().zip(k).map(|(a, b)| (a - b) * (a - b)).sum(),
            Metric::Cosine => {
                let (dot, nq, nk) = cos_parts(q, k);
                1.0 - dot / (nq * nk)
            }
        }
    }

    /// `(d/dq, d/dk)` of the distance.
    fn gradients(self, q: &[f64], k: &[f64]) -> (Vec<f64>, Vec<f64>) {
        match self {
            Metric::Euclidean => {
                let gq: Vec<f64> = q.iter().zip(k).map(|(a, b)| 2.0 * (a - b)).collect();
                let gk = gq.iter().map(|g| -g).collect();
                (gq, gk)
            }
            Metric::Cosine => {
                let (dot, nq, nk) = cos_parts(q, k);
                let c = dot / (nq * nk);
                let gq = q.iter().zip(k).map(|(qi, ki)| -(ki / (nq * nk) - c * qi / (nq * nq))).collect();
                let gk = q.iter().zip(k).map(|(qi, ki)| -(qi / (nq * nk) - c * ki / (nk * nk))).collect();
                (gq, gk)
            }
        }
    }
}

fn cos_parts(q: &[f64], k: &[f64]) -> (f64, f64, f64) {
    let dot: f64 = q.iter().zip(k).map(|(a, b)| a * b).sum();
    let nq = q.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
    let nk = k.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
    (dot, nq, nk)
}

/// The retrieval network: a projection applied to both the query and the
/// stored embeddings before distances are measured.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalParams {
    pub spec: MlpSpec,
    pub params: Vec<f64>,
    pub metric: Metric,
}

impl RetrievalParams {
    pub fn new(spec: MlpSpec, params: Vec<f64>, metric: Metric) -> Result<Self> {
        if params.len() != spec.param_count() {
            return Err(MrdgError::Config("retrieval parameter count mismatch".into()));
        }
        Ok(Self { spec, params, metric })
    }

    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(mlp_forward(&self.spec, &self.params, x)?.0)
    }

    fn project_taped(&self, x: &[f64]) -> Result<(Vec<f64>, Tape)> {
        mlp_forward(&self.spec, &self.params, x)
    }
}

/// Actions of the `m` stored entries nearest to `query` in projected space,
/// nearest first. Equal distances go to the smaller time index.
pub fn retrieve(memory: &EpisodicMemory, agent_id: usize, query: &[f64], m: usize, retr: &RetrievalParams) -> Result<Vec<usize>> {
    if m == 0 {
        return Err(MrdgError::contract("memory", "m must be >= 1"));
    }
    if memory.len(agent_id) == 0 {
        return Err(MrdgError::Retrieval(format!("no memory entries for agent {agent_id}")));
    }
    let q = retr.project(query)?;
    let mut scored = Vec::with_capacity(memory.len(agent_id));
    for e in memory.entries(agent_id) {
        let k = retr.project(&e.embedding)?;
        scored.push((retr.metric.distance(&q, &k), e.time, e.action));
    }
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(scored.into_iter().take(m).map(|(_, _, a)| a).collect())
}

/// Most frequent action; ties go to the smallest action index.
pub fn mode(actions: &[usize]) -> Result<usize> {
    let max = *actions
        .iter()
        .max()
        .ok_or_else(|| MrdgError::contract("memory", "mode of an empty list"))?;
    let mut counts = vec![0usize; max + 1];
    for &a in actions {
        counts[a] += 1;
    }
    let best = counts.iter().max().copied().unwrap_or(0);
    Ok(counts.iter().position(|&c| c == best).unwrap_or(0))
}

/// Auxiliary action-prediction loss that trains the retrieval projection.
///
/// Stored entries (the `max_entries` most recent) vote for their action with
/// weight `softmax(-distance)`; the votes are turned into a distribution with
/// a second softmax and scored by cross-entropy against `true_action`.
/// Returns the loss and its gradient with respect to `retr.params`.
pub fn retrieval_aux_loss(
    retr: &RetrievalParams,
    memory: &EpisodicMemory,
    agent_id: usize,
    query: &[f64],
    true_action: usize,
    n_actions: usize,
    max_entries: usize,
) -> Result<(f64, Vec<f64>)> {
    if true_action >= n_actions {
        return Err(MrdgError::contract("memory", "true action out of range"));
    }
    let n = memory.len(agent_id);
    if n == 0 {
        return Err(MrdgError::Retrieval(format!("no memory entries for agent {agent_id}")));
    }
    let skip = n.saturating_sub(max_entries.max(1));
    let entries: Vec<&MemoryEntry> = memory.entries(agent_id).skip(skip).collect();
    if let Some(e) = entries.iter().find(|e| e.action >= n_actions) {
        return Err(MrdgError::contract("memory", format!("stored action {} out of range", e.action)));
    }

    let (q, q_tape) = retr.project_taped(query)?;
    let keys = entries
        .iter()
        .map(|e| retr.project_taped(&e.embedding))
        .collect::<Result<Vec<_>>>()?;
    let neg_dist: Vec<f64> = keys.iter().map(|(k, _)| -retr.metric.distance(&q, k)).collect();
    let weights = softmax(&neg_dist);
    let mut votes = vec![0.0; n_actions];
    for (w, e) in weights.iter().zip(&entries) {
        votes[e.action] += w;
    }
    let probs = softmax(&votes);
    let loss = -probs[true_action].ln();

    // Backward: votes -> weights -> distances -> projections -> params.
    let d_votes: Vec<f64> = probs
        .iter()
        .enumerate()
        .map(|(a, p)| p - if a == true_action { 1.0 } else { 0.0 })
        .collect();
    let d_w: Vec<f64> = entries.iter().map(|e| d_votes[e.action]).collect();
    let mean: f64 = weights.iter().zip(&d_w).map(|(w, g)| w * g).sum();
    let d_dist: Vec<f64> = weights.iter().zip(&d_w).map(|(w, g)| -w * (g - mean)).collect();

    let mut grad = vec![0.0; retr.params.len()];
    let mut d_q = vec![0.0; q.len()];
    for ((k, tape), &dd) in keys.iter().zip(&d_dist) {
        let (gq, gk) = retr.metric.gradients(&q, k);
        for (a, b) in d_q.iter_mut().zip(&gq) {
            *a += dd * b;
        }
        let up: Vec<f64> = gk.iter().map(|g| dd * g).collect();
        let (pg, _) = mlp_backward(&retr.spec, &retr.params, tape, &up)?;
        for (a, b) in grad.iter_mut().zip(&pg) {
            *a += b;
        }
    }
    let (pg, _) = mlp_backward(&retr.spec, &retr.params, &q_tape, &d_q)?;
    for (a, b) in grad.iter_mut().zip(&pg) {
        *a += b;
    }
    Ok((loss, grad))
}

/// Smallest ReLU pre-activation margin over every projection the auxiliary
/// loss evaluates; used by gradient checks to avoid kinks.
pub fn aux_kink_margin(retr: &RetrievalParams, memory: &EpisodicMemory, agent_id: usize, query: &[f64], max_entries: usize) -> Result<f64> {
    let n = memory.len(agent_id);
    let skip = n.saturating_sub(max_entries.max(1));
    let mut margin = retr.project_taped(query)?.1.kink_margin(retr.spec.activation);
    for e in memory.entries(agent_id).skip(skip) {
        margin = margin.min(retr.project_taped(&e.embedding)?.1.kink_margin(retr.spec.activation));
    }
    Ok(margin)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_grad, relative_error, Activation, OutputHead};
    use crate::rng;
    use rand::Rng;

    fn identity_retr(width: usize) -> RetrievalParams {
        let spec = MlpSpec::new(vec![width, width], Activation::Identity, OutputHead::Linear).unwrap();
        let mut p = vec![0.0; spec.param_count()];
        for i in 0..width {
            p[i * width + i] = 1.0;
        }
        RetrievalParams::new(spec, p, Metric::Euclidean).unwrap()
    }

    #[test]
    fn ring_semantics() {
        let mut m = EpisodicMemory::new(1, 2).unwrap();
        m.append(1, vec![0.0], 0, 0).unwrap();
        assert_eq!(m.len(1), 1);
        m.append(1, vec![1.0], 1, 1).unwrap();
        m.append(1, vec![2.0], 0, 2).unwrap();
        let times: Vec<u64> = m.entries(1).map(|e| e.time).collect();
        assert_eq!(times, vec![1, 2]);
        assert!(m.append(1, vec![0.0, 1.0], 0, 3).is_err());
        assert!(m.append(1, vec![0.0], 0, 1).is_err());
    }

    #[test]
    fn retrieval_examples() {
        let retr = identity_retr(2);
        let mut m = EpisodicMemory::new(2, 10).unwrap();
        assert!(matches!(retrieve(&m, 1, &[0.0, 0.0], 1, &retr), Err(MrdgError::Retrieval(_))));
        m.append(1, vec![0.3, 0.1], 1, 0).unwrap();
        assert_eq!(retrieve(&m, 1, &[5.0, 5.0], 1, &retr).unwrap(), vec![1]);
        m.append(1, vec![1.0, 1.0], 0, 1).unwrap();
        m.append(1, vec![2.0, 2.0], 1, 2).unwrap();
        assert_eq!(retrieve(&m, 1, &[1.0, 1.0], 1, &retr).unwrap(), vec![0]);
        assert_eq!(retrieve(&m, 1, &[1.0, 1.0], 10, &retr).unwrap().len(), 3);
        // other agents' buffers are invisible
        m.append(2, vec![1.0, 1.0], 1, 3).unwrap();
        assert_eq!(retrieve(&m, 1, &[1.0, 1.0], 1, &retr).unwrap(), vec![0]);
    }

    #[test]
    fn ties_go_to_older_entries() {
        let retr = identity_retr(1);
        let mut m = EpisodicMemory::new(1, 10).unwrap();
        m.append(1, vec![1.0], 1, 4).unwrap();
        m.append(1, vec![1.0], 0, 7).unwrap();
        m.append(1, vec![-1.0], 2, 9).unwrap();
        assert_eq!(retrieve(&m, 1, &[0.0], 3, &retr).unwrap(), vec![1, 0, 2]);
    }

    #[test]
    fn mode_examples() {
        assert_eq!(mode(&[2, 2, 3]).unwrap(), 2);
        assert_eq!(mode(&[1, 2]).unwrap(), 1);
        assert!(mode(&[]).is_err());
    }

    #[test]
    fn aux_loss_ordering_and_uniform_case() {
        let retr = identity_retr(2);
        let mut good = EpisodicMemory::new(2, 10).unwrap();
        let mut bad = EpisodicMemory::new(2, 10).unwrap();
        for t in 0..3 {
            good.append(1, vec![t as f64, 0.0], 1, t).unwrap();
            bad.append(1, vec![t as f64, 0.0], 0, t).unwrap();
        }
        let q = [0.5, 0.5];
        let (lg, _) = retrieval_aux_loss(&retr, &good, 1, &q, 1, 3, 64).unwrap();
        let (lb, _) = retrieval_aux_loss(&retr, &bad, 1, &q, 1, 3, 64).unwrap();
        assert!(lg < lb);

        let mut uniform = EpisodicMemory::new(2, 10).unwrap();
        for a in 0..3 {
            uniform.append(1, vec![1.0, 1.0], a, a as u64).unwrap();
        }
        let (lu, _) = retrieval_aux_loss(&retr, &uniform, 1, &q, 2, 3, 64).unwrap();
        assert!((lu - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn aux_gradient_matches_finite_differences() {
        let mut r = rng::stream(11, "aux");
        for metric in [Metric::Euclidean, Metric::Cosine] {
            let spec = MlpSpec::new(vec![3, 5, 4], Activation::Tanh, OutputHead::Linear).unwrap();
            let retr = RetrievalParams::new(spec.clone(), spec.init_params(&mut r), metric).unwrap();
            let mut m = EpisodicMemory::new(3, 50).unwrap();
            for t in 0..8 {
                let e: Vec<f64> = (0..3).map(|_| r.gen_range(-1.0..1.0)).collect();
                m.append(2, e, r.gen_range(0..3), t).unwrap();
            }
            let q: Vec<f64> = (0..3).map(|_| r.gen_range(-1.0..1.0)).collect();
            let (_, g) = retrieval_aux_loss(&retr, &m, 2, &q, 1, 3, 6).unwrap();
            let fd = finite_diff_grad(
                |p| {
                    let rp = RetrievalParams { params: p.to_vec(), ..retr.clone() };
                    retrieval_aux_loss(&rp, &m, 2, &q, 1, 3, 6).unwrap().0
                },
                &retr.params,
                1e-6,
            )
            .unwrap();
            assert!(relative_error(&g, &fd) < 1e-4, "{metric:?}");
        }
    }
}
