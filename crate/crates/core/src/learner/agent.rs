use rand::Rng;

use super::qnet::{reinitialize, select_action, td_loss_and_grad, LearnerParams, QNet};
use super::replay::ReplayBuffer;
use crate::config::RunConfig;
use crate::encoding::{positional_code, va_loss_and_grad, VaEncoder, VaPair};
use crate::hypernet::{aggregate_inputs, one_hot, HyperSpec, Hypernet};
use crate::memory::{mode, retrieval_aux_loss, retrieve, EpisodicMemory, RetrievalParams};
use crate::numerics::{Activation, MlpSpec, Optimizer, OutputHead};
use crate::rng;
use crate::{MrdgError, Result};

/// Module switches of the ablation study.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Ablation {
    pub no_pe: bool,
    pub no_hn: bool,
    pub no_va: bool,
}

/// State that lives for one episode (or longer when memory is kept).
#[derive(Clone, Debug)]
pub struct EpisodeContext {
    pub memory: EpisodicMemory,
    /// Per partner, the (partner observation, learner observation) pairs seen
    /// so far this episode.
    pub va_pairs: Vec<Vec<VaPair>>,
}

/// What the learner computed before acting at one step.
#[derive(Clone, Debug)]
pub struct StepView {
    pub hyper_input: Vec<f64>,
    /// Per partner, the learner observation through that partner's encoder.
    pub queries: Vec<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct RecordStats {
    pub aux_loss: Option<f64>,
    pub va_loss: Option<f64>,
}

/// The controllable agent: Q network with hypernetwork-written layer,
/// target copy, retrieval projection, one alignment encoder per partner.
#[derive(Clone, Debug)]
pub struct MrdgAgent {
    pub online: QNet,
    pub target: QNet,
    pub retrieval: RetrievalParams,
    pub va: Vec<VaEncoder>,
    pub codes: Vec<Vec<f64>>,
    pub ablation: Ablation,
    n_actions: usize,
    code_width: usize,
    m: usize,
    aux_max_entries: usize,
    memory_capacity: usize,
    gamma: f64,
    batch_size: usize,
    seed: u64,
    reinit: (f64, f64),
    reinit_count: usize,
    learner_opt: Optimizer,
    hyper_opt: Option<Optimizer>,
    retrieval_opt: Optimizer,
    va_opts: Vec<Optimizer>,
}

fn mlp(sizes: Vec<usize>, activation: Activation) -> Result<MlpSpec> {
    MlpSpec::new(sizes, activation, OutputHead::Linear)
}

impl MrdgAgent {
    /// Builds every network from the config. Each parameter block is seeded
    /// by its own name, so variants that share a block share its values.
    pub fn new(cfg: &RunConfig, seed: u64, ablation: Ablation) -> Result<Self> {
        let spec = cfg.substrate_spec(&cfg.substrate.game)?;
        let n_actions = spec.actions();
        let obs_width = spec.observation_width();
        let n_partners = spec.n_agents - 1;
        let code_width = cfg.pe_width()?;
        let lc = &cfg.learner;
        let mc = &cfg.mrdg;

        let mut sizes = vec![obs_width];
        sizes.extend(&lc.hidden);
        sizes.push(n_actions);
        let q_spec = mlp(sizes, lc.activation)?;
        let params = LearnerParams::init(q_spec, &lc.adapted_layers.indices(), seed)?;

        let hyper = if ablation.no_hn {
            None
        } else {
            let hs = HyperSpec {
                input_width: code_width,
                hidden: mc.hyper_hidden.clone(),
                output_width: params.hype_len(),
            };
            let h_spec = hs.mlp()?;
            let mut h_params = h_spec.init_params(&mut rng::stream(seed, "hypernet"));
            // Start by emitting the learner's own initial slice.
            let last = h_spec.layer_range(h_spec.n_layers() - 1);
            let hype = params.hype();
            h_params[last.end - hype.len()..last.end].copy_from_slice(&hype);
            Some(Hypernet::new(h_spec, h_params)?)
        };
        let online = QNet::new(params, hyper)?;
        let target = online.clone();

        let mut r_sizes = vec![mc.embedding_width];
        r_sizes.extend(&mc.retrieval_hidden);
        r_sizes.push(mc.retrieval_index_width);
        let r_spec = mlp(r_sizes, Activation::Relu)?;
        let r_params = r_spec.init_params(&mut rng::stream(seed, "retrieval"));
        let retrieval = RetrievalParams::new(r_spec, r_params, mc.retrieval_metric)?;

        let mut va = Vec::with_capacity(n_partners);
        let mut codes = Vec::with_capacity(n_partners);
        let denom = mc.pe_base.denominator(code_width, spec.n_agents);
        for i in 1..=n_partners {
            let mut v_sizes = vec![obs_width];
            v_sizes.extend(&mc.va_hidden);
            v_sizes.push(mc.embedding_width);
            let v_spec = mlp(v_sizes, Activation::Relu)?;
            let v_params = v_spec.init_params(&mut rng::stream(seed, &format!("va/{i}")));
            va.push(VaEncoder::new(i, v_spec, v_params)?);
            codes.push(if ablation.no_pe {
                vec![0.0; code_width]
            } else {
                positional_code(i, code_width, denom)?
            });
        }

        let learner_opt = Optimizer::new(lc.optimizer, lc.learning_rate, online.params.vector().len());
        let hyper_opt = online
            .hyper
            .as_ref()
            .map(|h| Optimizer::new(lc.optimizer, mc.hyper_learning_rate, h.params.len()));
        let retrieval_opt = Optimizer::new(lc.optimizer, mc.retrieval_learning_rate, retrieval.params.len());
        let va_opts = va
            .iter()
            .map(|e| Optimizer::new(lc.optimizer, mc.va_learning_rate, e.params.len()))
            .collect();
        Ok(Self {
            online,
            target,
            retrieval,
            va,
            codes,
            ablation,
            n_actions,
            code_width,
            m: mc.m,
            aux_max_entries: mc.aux_max_entries,
            memory_capacity: mc.memory_capacity,
            gamma: lc.gamma,
            batch_size: lc.batch_size,
            seed,
            reinit: (mc.reinit_lambda, mc.reinit_gamma),
            reinit_count: 0,
            learner_opt,
            hyper_opt,
            retrieval_opt,
            va_opts,
        })
    }

    pub fn n_partners(&self) -> usize {
        self.va.len()
    }

    pub fn reinit_count(&self) -> usize {
        self.reinit_count
    }

    pub fn new_context(&self) -> Result<EpisodeContext> {
        let width = self.va.first().map_or(1, VaEncoder::embedding_width);
        Ok(EpisodeContext {
            memory: EpisodicMemory::new(width, self.memory_capacity)?,
            va_pairs: vec![Vec::new(); self.n_partners()],
        })
    }

    /// Retrieval for every partner and the summed hypernetwork input.
    pub fn view(&self, ctx: &EpisodeContext, learner_obs: &[f64]) -> Result<StepView> {
        let mut retrieved = Vec::with_capacity(self.n_partners());
        let mut queries = Vec::with_capacity(self.n_partners());
        for enc in &self.va {
            let query = enc.encode(learner_obs)?;
            let action = if ctx.memory.len(enc.agent_id) == 0 {
                None
            } else {
                let actions = retrieve(&ctx.memory, enc.agent_id, &query, self.m, &self.retrieval)?;
                Some(mode(&actions)?)
            };
            retrieved.push(one_hot(action, self.code_width));
            queries.push(query);
        }
        Ok(StepView {
            hyper_input: aggregate_inputs(&retrieved, &self.codes)?,
            queries,
        })
    }

    /// Installs the generated layer for this step and picks an action.
    pub fn act<R: Rng + ?Sized>(&mut self, obs: &[f64], hyper_input: &[f64], epsilon: f64, rng: &mut R) -> Result<usize> {
        self.online.refresh(hyper_input)?;
        let q = self.online.q_values(obs)?;
        Ok(select_action(&q, epsilon, rng))
    }

    /// Greedy Q values for an explicit hypernetwork input.
    pub fn q_values(&self, obs: &[f64], hyper_input: &[f64]) -> Result<Vec<f64>> {
        self.online.q_values_for(obs, hyper_input)
    }

    /// Records the partners' actions of this step. With `learn` set, the
    /// retrieval projection takes one step on the auxiliary loss (computed
    /// before the new entries are stored) and every encoder takes one step
    /// on its alignment loss over the episode's pairs.
    pub fn record_partners(
        &mut self,
        ctx: &mut EpisodeContext,
        view: &StepView,
        learner_obs: &[f64],
        partner_obs: &[Vec<f64>],
        partner_actions: &[usize],
        time: u64,
        learn: bool,
    ) -> Result<RecordStats> {
        if partner_obs.len() != self.n_partners() || partner_actions.len() != self.n_partners() {
            return Err(MrdgError::contract("learner", "one observation and action per partner required"));
        }
        let mut stats = RecordStats::default();
        if learn {
            let mut grad = vec![0.0; self.retrieval.params.len()];
            let mut total = 0.0;
            let mut count = 0usize;
            for (k, enc) in self.va.iter().enumerate() {
                if ctx.memory.len(enc.agent_id) == 0 {
                    continue;
                }
                let (loss, g) = retrieval_aux_loss(
                    &self.retrieval,
                    &ctx.memory,
                    enc.agent_id,
                    &view.queries[k],
                    partner_actions[k],
                    self.n_actions,
                    self.aux_max_entries,
                )?;
                total += loss;
                count += 1;
                for (a, b) in grad.iter_mut().zip(&g) {
                    *a += b;
                }
            }
            if count > 0 {
                let scale = 1.0 / count as f64;
                grad.iter_mut().for_each(|g| *g *= scale);
                self.retrieval_opt.step(&mut self.retrieval.params, &grad)?;
                stats.aux_loss = Some(total * scale);
            }
        }
        self.remember(ctx, learner_obs, partner_obs, partner_actions, time)?;
        if learn {
            let mut total = 0.0;
            for k in 0..self.va.len() {
                let (loss, grad) = va_loss_and_grad(&self.va[k], &ctx.va_pairs[k])?;
                total += loss / ctx.va_pairs[k].len() as f64;
                if !self.ablation.no_va {
                    self.va_opts[k].step(&mut self.va[k].params, &grad)?;
                }
            }
            stats.va_loss = Some(total / self.va.len().max(1) as f64);
        }
        Ok(stats)
    }

    /// Stores each partner's embedded observation and action in memory and
    /// keeps the observation pair for alignment.
    pub fn remember(
        &self,
        ctx: &mut EpisodeContext,
        learner_obs: &[f64],
        partner_obs: &[Vec<f64>],
        partner_actions: &[usize],
        time: u64,
    ) -> Result<()> {
        if partner_obs.len() != self.n_partners() || partner_actions.len() != self.n_partners() {
            return Err(MrdgError::contract("learner", "one observation and action per partner required"));
        }
        for (k, enc) in self.va.iter().enumerate() {
            let emb = enc.encode(&partner_obs[k])?;
            ctx.memory.append(enc.agent_id, emb, partner_actions[k], time)?;
            ctx.va_pairs[k].push((partner_obs[k].clone(), learner_obs.to_vec()));
        }
        Ok(())
    }

    /// One TD update of the Q network and hypernetwork on a replay batch.
    pub fn train_step<R: Rng + ?Sized>(&mut self, replay: &ReplayBuffer, rng: &mut R) -> Result<f64> {
        let batch = replay.sample(self.batch_size, rng)?;
        let res = td_loss_and_grad(&self.online, &self.target, &batch, self.gamma)?;
        self.learner_opt
            .step(self.online.params.vector_mut().as_mut_slice(), &res.learner_grad)?;
        if let (Some(h), Some(opt), Some(g)) = (self.online.hyper.as_mut(), self.hyper_opt.as_mut(), &res.hyper_grad) {
            opt.step(&mut h.params, g)?;
        }
        self.online.hyper_updated();
        Ok(res.loss)
    }

    pub fn refresh_target(&mut self) {
        self.target = self.online.clone();
    }

    /// Blends the ordinary layers with a fresh draw from the initializer.
    pub fn reinitialize(&mut self) -> Result<()> {
        self.reinit_count += 1;
        let fresh = LearnerParams::init(
            self.online.params.spec().clone(),
            self.online.params.adapted(),
            rng::derive_seed(self.seed, &format!("reinit/{}", self.reinit_count)),
        )?;
        let mut marl = self.online.params.marl();
        reinitialize(&mut marl, &fresh.marl(), self.reinit.0, self.reinit.1)?;
        self.online.params.set_marl(&marl)
    }
}
