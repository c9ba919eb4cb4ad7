use std::collections::BTreeMap;
use std::time::Instant;

use rand::Rng as _;

use super::agent::{Ablation, EpisodeContext, MrdgAgent};
use super::partner::{IqlPartner, PartnerAgent};
use super::qnet::argmax;
use super::replay::{ReplayBuffer, Transition};
use crate::config::{PartnerSpec, RunConfig};
use crate::dpp::{PolicyDescriptor, PolicyPool, SchemeId};
use crate::metrics::{mean_std, MetricsRow, MetricsSink};
use crate::rng::{self, Rng};
use crate::substrates::{MatrixGame, ScriptedKind, ScriptedPolicy, SubstrateSpec};
use crate::{MrdgError, Result};

/// Linearly annealed exploration rate.
pub fn epsilon_at(step: usize, total_steps: usize, start: f64, end: f64, fraction: f64) -> f64 {
    let horizon = (total_steps as f64 * fraction).floor();
    if horizon <= 0.0 || step as f64 >= horizon {
        return end;
    }
    start + (end - start) * (step as f64 / horizon)
}

/// Greedy returns of the agent against one fixed partner policy (used for
/// every uncontrollable agent). Each episode starts with an empty memory;
/// no parameter changes. The episode seeds come from `seed`.
pub fn evaluate(agent: &MrdgAgent, spec: &SubstrateSpec, partner: &ScriptedKind, episodes: usize, seed: u64) -> Result<Vec<f64>> {
    if episodes == 0 {
        return Err(MrdgError::Config("evaluation needs at least one episode".into()));
    }
    let mut r = rng::stream(seed, &format!("eval/{partner}"));
    let mut returns = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let (mut game, mut obs) = MatrixGame::reset(spec, r.gen())?;
        let mut partners = (1..spec.n_agents)
            .map(|_| ScriptedPolicy::new(partner.clone(), spec.actions()))
            .collect::<Result<Vec<_>>>()?;
        let mut ctx = agent.new_context()?;
        let mut total = 0.0;
        while !game.is_done() {
            let lo = obs[0].vector.clone();
            let view = agent.view(&ctx, &lo)?;
            let mut joint = vec![argmax(&agent.q_values(&lo, &view.hyper_input)?)];
            for (k, p) in partners.iter_mut().enumerate() {
                joint.push(p.act(&obs[k + 1], &mut r));
            }
            let res = game.step(&joint)?;
            let partner_obs: Vec<Vec<f64>> = obs[1..].iter().map(|o| o.vector.clone()).collect();
            agent.remember(&mut ctx, &lo, &partner_obs, &joint[1..], game.time() as u64)?;
            total += res.rewards[0];
            obs = res.observations;
        }
        returns.push(total);
    }
    Ok(returns)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PartnerEval {
    pub partner: ScriptedKind,
    pub mean: f64,
    pub std: f64,
    pub returns: Vec<f64>,
}

/// Evaluation against every roster entry.
pub fn evaluate_roster(agent: &MrdgAgent, spec: &SubstrateSpec, roster: &[ScriptedKind], episodes: usize, seed: u64) -> Result<Vec<PartnerEval>> {
    if roster.is_empty() {
        return Err(MrdgError::Config("evaluation roster is empty".into()));
    }
    roster
        .iter()
        .map(|p| {
            let returns = evaluate(agent, spec, p, episodes, seed)?;
            let (mean, std) = mean_std(&returns);
            Ok(PartnerEval {
                partner: p.clone(),
                mean,
                std,
                returns,
            })
        })
        .collect()
}

/// Pooled mean and std over every episode of a roster evaluation.
pub fn pooled(evals: &[PartnerEval]) -> (f64, f64) {
    let all: Vec<f64> = evals.iter().flat_map(|e| e.returns.iter().copied()).collect();
    mean_std(&all)
}

#[derive(Default)]
struct IntervalStats {
    train_returns: Vec<f64>,
    td: Vec<f64>,
    va: Vec<f64>,
    aux: Vec<f64>,
}

fn mean_or_nan(v: &[f64]) -> f64 {
    mean_std(v).0
}

/// The training loop: sample partners from the pool, play, record partner
/// behaviour, learn, and evaluate at fixed intervals.
pub struct Trainer {
    cfg: RunConfig,
    pub agent: MrdgAgent,
    pub pool: PolicyPool,
    /// Co-trained partners.
    live: Vec<IqlPartner>,
    /// Per scheme index (or the single run-long partner set when the pool is
    /// disabled), the live partner index of each uncontrollable agent.
    live_slots: BTreeMap<usize, Vec<Option<usize>>>,
    specs: BTreeMap<String, SubstrateSpec>,
    base_spec: SubstrateSpec,
    replay: ReplayBuffer,
    memory: Option<EpisodeContext>,
    episode: usize,
    steps: usize,
    no_dpp: bool,
    explore_rng: Rng,
    replay_rng: Rng,
    dpp_rng: Rng,
    partner_rng: Rng,
    episode_rng: Rng,
    stats: IntervalStats,
    started: Instant,
}

const NO_DPP_SLOT: usize = usize::MAX;

impl Trainer {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let seed = cfg.run.seed;
        let ablation = Ablation {
            no_pe: cfg.ablation.no_pe,
            no_hn: cfg.ablation.no_hn,
            no_va: cfg.ablation.no_va,
        };
        let agent = MrdgAgent::new(cfg, seed, ablation)?;
        let base_spec = cfg.substrate_spec(&cfg.substrate.game)?;
        let n_partners = base_spec.n_agents - 1;
        let mut specs = BTreeMap::new();
        let mut live = Vec::new();
        let mut live_slots = BTreeMap::new();
        let max = (cfg.dpp.max_entries_per_slot > 0).then_some(cfg.dpp.max_entries_per_slot);
        let mut pool = PolicyPool::new(max);
        let no_dpp = cfg.ablation.no_dpp;
        specs.insert(cfg.substrate.game.clone(), base_spec.clone());
        if no_dpp {
            let mut slots = Vec::with_capacity(n_partners);
            for k in 0..n_partners {
                let s = rng::derive_seed(seed, &format!("partner/solo/{k}"));
                live.push(IqlPartner::new(&base_spec, &cfg.learner, s)?);
                slots.push(Some(live.len() - 1));
            }
            live_slots.insert(NO_DPP_SLOT, slots);
        } else {
            for (s_idx, scheme) in cfg.dpp.schemes.iter().enumerate() {
                let game = cfg.scheme_game(scheme).to_string();
                let spec = cfg.substrate_spec(&game)?;
                let mut joint = Vec::with_capacity(n_partners);
                let mut slots = Vec::with_capacity(n_partners);
                for (k, p) in cfg.scheme_partners(scheme)?.into_iter().enumerate() {
                    match p {
                        PartnerSpec::Scripted(kind) => {
                            joint.push(PolicyDescriptor::Scripted(kind));
                            slots.push(None);
                        }
                        PartnerSpec::Learned => {
                            let s = rng::derive_seed(seed, &format!("partner/{s_idx}/{k}"));
                            let partner = IqlPartner::new(&spec, &cfg.learner, s)?;
                            joint.push(partner.snapshot());
                            live.push(partner);
                            slots.push(Some(live.len() - 1));
                        }
                    }
                }
                pool.store(&SchemeId::new(game.clone(), s_idx), joint);
                live_slots.insert(s_idx, slots);
                specs.insert(game, spec);
            }
        }
        Ok(Self {
            cfg: cfg.clone(),
            agent,
            pool,
            live,
            live_slots,
            specs,
            base_spec,
            replay: ReplayBuffer::new(cfg.learner.buffer_capacity)?,
            memory: None,
            episode: 0,
            steps: 0,
            no_dpp,
            explore_rng: rng::stream(seed, "learner/explore"),
            replay_rng: rng::stream(seed, "learner/replay"),
            dpp_rng: rng::stream(seed, "dpp"),
            partner_rng: rng::stream(seed, "partners"),
            episode_rng: rng::stream(seed, "episodes"),
            stats: IntervalStats::default(),
            started: Instant::now(),
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn episode(&self) -> usize {
        self.episode
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn base_spec(&self) -> &SubstrateSpec {
        &self.base_spec
    }

    /// Persistent memory, present only when it is kept across episodes.
    pub fn memory(&self) -> Option<&EpisodeContext> {
        self.memory.as_ref()
    }

    fn epsilon(&self) -> f64 {
        let l = &self.cfg.learner;
        epsilon_at(self.steps, self.cfg.total_steps(), l.epsilon_start, l.epsilon_end, l.epsilon_anneal_fraction)
    }

    /// Plays and learns from one episode; returns the learner's return.
    pub fn train_episode(&mut self) -> Result<f64> {
        // The blend due after every K-th episode is applied when training
        // resumes, so a run never ends on an untrained blend.
        let k = self.cfg.mrdg.reinit_period;
        if k > 0 && self.episode > 0 && self.episode % k == 0 {
            self.agent.reinitialize()?;
        }
        let (game_id, scheme, partners) = self.pick_partners()?;
        let spec = self.specs[&game_id].clone();
        let (mut game, mut obs) = MatrixGame::reset(&spec, self.episode_rng.gen())?;
        let mut partners = partners;
        let mut ctx = match self.memory.take() {
            Some(c) if !self.cfg.mrdg.reset_memory_each_episode => c,
            _ => self.agent.new_context()?,
        };
        let warmup = self.cfg.learner.warmup.max(1);
        let train_every = self.cfg.learner.train_every;
        let mut pending: Option<Transition> = None;
        let mut total = 0.0;
        while !game.is_done() {
            let lo = obs[0].vector.clone();
            let view = self.agent.view(&ctx, &lo)?;
            if let Some(mut t) = pending.take() {
                t.next_hyper_input = view.hyper_input.clone();
                self.replay.push(t);
            }
            let eps = self.epsilon();
            let a0 = self.agent.act(&lo, &view.hyper_input, eps, &mut self.explore_rng)?;
            let mut joint = vec![a0];
            for (k, p) in partners.iter_mut().enumerate() {
                let a = match p {
                    PartnerAgent::Live(i) => self.live[*i].act(&obs[k + 1].vector, eps, &mut self.explore_rng)?,
                    other => other.act_fixed(&obs[k + 1], &mut self.partner_rng)?,
                };
                joint.push(a);
            }
            let res = game.step(&joint)?;
            let partner_obs: Vec<Vec<f64>> = obs[1..].iter().map(|o| o.vector.clone()).collect();
            let rec = self
                .agent
                .record_partners(&mut ctx, &view, &lo, &partner_obs, &joint[1..], self.steps as u64, true)?;
            self.stats.aux.extend(rec.aux_loss);
            self.stats.va.extend(rec.va_loss);
            for (k, p) in partners.iter().enumerate() {
                if let PartnerAgent::Live(i) = p {
                    let next = &res.observations[k + 1].vector;
                    self.live[*i].observe(&obs[k + 1].vector, joint[k + 1], res.rewards[k + 1], next, res.done);
                }
            }
            let t = Transition {
                obs: lo,
                action: a0,
                partner_actions: joint[1..].to_vec(),
                reward: res.rewards[0],
                next_obs: res.observations[0].vector.clone(),
                done: res.done,
                next_hyper_input: view.hyper_input.clone(),
                hyper_input: view.hyper_input,
            };
            if res.done {
                self.replay.push(t);
            } else {
                pending = Some(t);
            }
            total += res.rewards[0];
            self.steps += 1;
            if self.steps % train_every == 0 {
                if self.replay.len() >= warmup {
                    let loss = self.agent.train_step(&self.replay, &mut self.replay_rng)?;
                    self.stats.td.push(loss);
                }
                for p in &partners {
                    if let PartnerAgent::Live(i) = p {
                        if self.live[*i].replay_len() >= warmup {
                            self.live[*i].train_step(&mut self.replay_rng)?;
                        }
                    }
                }
            }
            obs = res.observations;
        }
        self.episode += 1;
        if self.episode % self.cfg.learner.target_period == 0 {
            self.agent.refresh_target();
            self.live.iter_mut().for_each(IqlPartner::refresh_target);
        }
        if let Some(s) = scheme {
            // Pool update: new snapshots of the co-trained partners only.
            if partners.iter().any(|p| matches!(p, PartnerAgent::Live(_))) {
                let joint = self.joint_snapshot(s)?;
                self.pool.store(&SchemeId::new(game_id, s), joint);
            }
        }
        if !self.cfg.mrdg.reset_memory_each_episode {
            self.memory = Some(ctx);
        }
        self.stats.train_returns.push(total);
        Ok(total)
    }

    fn joint_snapshot(&self, scheme: usize) -> Result<Vec<PolicyDescriptor>> {
        let cfg_scheme = &self.cfg.dpp.schemes[scheme];
        let specs = self.cfg.scheme_partners(cfg_scheme)?;
        Ok(specs
            .into_iter()
            .zip(&self.live_slots[&scheme])
            .map(|(p, slot)| match (p, slot) {
                (_, Some(i)) => self.live[*i].snapshot(),
                (PartnerSpec::Scripted(k), None) => PolicyDescriptor::Scripted(k),
                (PartnerSpec::Learned, None) => unreachable!("learned partners always have a live slot"),
            })
            .collect())
    }

    fn pick_partners(&mut self) -> Result<(String, Option<usize>, Vec<PartnerAgent>)> {
        let actions = self.base_spec.actions();
        if self.no_dpp {
            let partners = self.live_slots[&NO_DPP_SLOT]
                .iter()
                .map(|s| PartnerAgent::Live(s.expect("solo partners are live")))
                .collect();
            return Ok((self.cfg.substrate.game.clone(), None, partners));
        }
        let game = self.pool.sample_substrate(&mut self.dpp_rng)?;
        let (scheme, joint) = self.pool.sample_scheme(&game, &mut self.dpp_rng)?;
        let slots = &self.live_slots[&scheme];
        let partners = joint
            .iter()
            .zip(slots)
            .map(|(d, slot)| match slot {
                Some(i) => Ok(PartnerAgent::Live(*i)),
                None => PartnerAgent::from_descriptor(d, actions),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((game, Some(scheme), partners))
    }

    /// Greedy evaluation against the configured roster.
    pub fn evaluate(&self) -> Result<Vec<PartnerEval>> {
        evaluate_roster(&self.agent, &self.base_spec, &self.cfg.eval.partners, self.cfg.eval.episodes, self.cfg.run.seed)
    }

    fn metrics_row(&mut self) -> Result<MetricsRow> {
        let (eval_mean, eval_std) = pooled(&self.evaluate()?);
        let s = std::mem::take(&mut self.stats);
        Ok(MetricsRow {
            episode: self.episode,
            steps: self.steps,
            train_return: mean_or_nan(&s.train_returns),
            eval_return_mean: eval_mean,
            eval_return_std: eval_std,
            td_loss: mean_or_nan(&s.td),
            va_loss_mean: mean_or_nan(&s.va),
            retrieval_aux_loss: mean_or_nan(&s.aux),
            reinit_count: self.agent.reinit_count(),
            wallclock_s: if self.cfg.run.record_wallclock {
                self.started.elapsed().as_secs_f64()
            } else {
                0.0
            },
        })
    }

    /// Trains for `episodes` more episodes, emitting a metrics row at every
    /// evaluation interval.
    pub fn run(&mut self, episodes: usize, sink: &mut dyn MetricsSink) -> Result<()> {
        for _ in 0..episodes {
            self.train_episode()?;
            if self.episode % self.cfg.eval.interval == 0 {
                let row = self.metrics_row()?;
                sink.record(&row)?;
            }
        }
        Ok(())
    }
}
