use rand::Rng;

use super::qnet::{argmax, select_action, td_loss_and_grad, LearnerParams, QNet};
use super::replay::{ReplayBuffer, Transition};
use crate::config::LearnerConfig;
use crate::dpp::PolicyDescriptor;
use crate::numerics::{mlp_forward, MlpSpec, Optimizer, OutputHead, ParameterVector};
use crate::substrates::{Observation, ScriptedPolicy, SubstrateSpec};
use crate::Result;

/// Independent Q-learner used as a co-trained partner.
#[derive(Clone, Debug)]
pub struct IqlPartner {
    online: QNet,
    target: QNet,
    opt: Optimizer,
    replay: ReplayBuffer,
    gamma: f64,
    batch_size: usize,
}

impl IqlPartner {
    pub fn new(spec: &SubstrateSpec, cfg: &LearnerConfig, seed: u64) -> Result<Self> {
        let mut sizes = vec![spec.observation_width()];
        sizes.extend(&cfg.hidden);
        sizes.push(spec.actions());
        let q_spec = MlpSpec::new(sizes, cfg.activation, OutputHead::Linear)?;
        let params = LearnerParams::init(q_spec, &cfg.adapted_layers.indices(), seed)?;
        let online = QNet::new(params, None)?;
        Ok(Self {
            target: online.clone(),
            opt: Optimizer::new(cfg.optimizer, cfg.learning_rate, online.params.vector().len()),
            online,
            replay: ReplayBuffer::new(cfg.buffer_capacity)?,
            gamma: cfg.gamma,
            batch_size: cfg.batch_size,
        })
    }

    pub fn act<R: Rng + ?Sized>(&self, obs: &[f64], epsilon: f64, rng: &mut R) -> Result<usize> {
        Ok(select_action(&self.online.q_values(obs)?, epsilon, rng))
    }

    /// Stores the transition that ended at `obs`; `done` closes the episode.
    pub fn observe(&mut self, obs: &[f64], action: usize, reward: f64, next_obs: &[f64], done: bool) {
        self.replay.push(Transition {
            obs: obs.to_vec(),
            action,
            partner_actions: Vec::new(),
            reward,
            next_obs: next_obs.to_vec(),
            done,
            hyper_input: Vec::new(),
            next_hyper_input: Vec::new(),
        });
    }

    pub fn replay_len(&self) -> usize {
        self.replay.len()
    }

    pub fn train_step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<f64> {
        let batch = self.replay.sample(self.batch_size, rng)?;
        let res = td_loss_and_grad(&self.online, &self.target, &batch, self.gamma)?;
        self.opt
            .step(self.online.params.vector_mut().as_mut_slice(), &res.learner_grad)?;
        Ok(res.loss)
    }

    pub fn refresh_target(&mut self) {
        self.target = self.online.clone();
    }

    /// Frozen greedy copy for the policy pool.
    pub fn snapshot(&self) -> PolicyDescriptor {
        PolicyDescriptor::Learned {
            spec: self.online.params.spec().clone(),
            params: self.online.params.vector().clone(),
        }
    }
}

/// A partner as it plays one episode.
#[derive(Debug)]
pub enum PartnerAgent {
    Scripted(ScriptedPolicy),
    /// Greedy network snapshot.
    Frozen { spec: MlpSpec, params: ParameterVector },
    /// Index into the trainer's co-trained partners.
    Live(usize),
}

impl PartnerAgent {
    pub fn from_descriptor(d: &PolicyDescriptor, actions: usize) -> Result<Self> {
        Ok(match d {
            PolicyDescriptor::Scripted(k) => PartnerAgent::Scripted(ScriptedPolicy::new(k.clone(), actions)?),
            PolicyDescriptor::Learned { spec, params } => PartnerAgent::Frozen {
                spec: spec.clone(),
                params: params.clone(),
            },
        })
    }

    /// Action of a partner that does not learn. Live partners are driven by
    /// their owner and must not be passed here.
    pub fn act_fixed<R: Rng + ?Sized>(&mut self, obs: &Observation, rng: &mut R) -> Result<usize> {
        match self {
            PartnerAgent::Scripted(p) => Ok(p.act(obs, rng)),
            PartnerAgent::Frozen { spec, params } => Ok(argmax(&mlp_forward(spec, params.as_slice(), &obs.vector)?.0)),
            PartnerAgent::Live(_) => Err(crate::MrdgError::contract("learner", "live partner has no fixed policy")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::substrates::{MatrixGame, Pairing, PayoffMatrix, ScriptedKind};

    #[test]
    fn co_trained_partner_learns_dominant_defection() {
        let spec = SubstrateSpec::new(PayoffMatrix::prisoners_dilemma(), 2, 5, 1, Pairing::Fixed).unwrap();
        let cfg = LearnerConfig {
            hidden: vec![8, 8],
            batch_size: 16,
            learning_rate: 1e-2,
            ..LearnerConfig::default()
        };
        let mut p = IqlPartner::new(&spec, &cfg, 4).unwrap();
        let mut r = rng::stream(4, "t");
        let mut opp = ScriptedPolicy::new(ScriptedKind::Random(vec![0.5, 0.5]), 2).unwrap();
        for ep in 0..200 {
            let (mut game, mut obs) = MatrixGame::reset(&spec, ep).unwrap();
            while !game.is_done() {
                let a = p.act(&obs[0].vector, 0.3, &mut r).unwrap();
                let b = opp.act(&obs[1], &mut r);
                let res = game.step(&[a, b]).unwrap();
                p.observe(&obs[0].vector, a, res.rewards[0], &res.observations[0].vector, res.done);
                obs = res.observations;
                p.train_step(&mut r).unwrap();
            }
            if ep % 10 == 0 {
                p.refresh_target();
            }
        }
        let (_, obs) = MatrixGame::reset(&spec, 0).unwrap();
        assert_eq!(p.act(&obs[0].vector, 0.0, &mut r).unwrap(), 1);
        let snap = PartnerAgent::from_descriptor(&p.snapshot(), 2).unwrap();
        let mut snap = snap;
        assert_eq!(snap.act_fixed(&obs[0], &mut r).unwrap(), 1);
    }
}
