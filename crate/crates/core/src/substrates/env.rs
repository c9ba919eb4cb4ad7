use std::collections::VecDeque;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::payoff::{payoff_lookup, PayoffMatrix};
use crate::rng::{self, Rng};
use crate::{MrdgError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pairing {
    /// Agents `(0,1)`, `(2,3)`, ... meet every step; agent `2k` is the row player.
    Fixed,
    /// Agents are shuffled into pairs every step.
    RandomMatching,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubstrateSpec {
    pub payoff: PayoffMatrix,
    pub n_agents: usize,
    pub episode_length: usize,
    pub history: usize,
    pub pairing: Pairing,
}

impl SubstrateSpec {
    pub fn new(payoff: PayoffMatrix, n_agents: usize, episode_length: usize, history: usize, pairing: Pairing) -> Result<Self> {
        let spec = Self {
            payoff,
            n_agents,
            episode_length,
            history,
            pairing,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_agents < 2 {
            return Err(MrdgError::Config("a substrate needs at least 2 agents".into()));
        }
        if self.episode_length == 0 {
            return Err(MrdgError::Config("episode_length must be >= 1".into()));
        }
        if self.history == 0 {
            return Err(MrdgError::Config("history window must be >= 1".into()));
        }
        Ok(())
    }

    pub fn actions(&self) -> usize {
        self.payoff.actions()
    }

    /// `N * L * A`.
    pub fn observation_width(&self) -> usize {
        self.n_agents * self.history * self.actions()
    }
}

/// One agent's view: its own last `L` actions, then every other agent's last
/// `L` actions ordered by relative index `(j - i) mod N`. Slot 0 of a block is
/// the most recent action; unknown actions are all-zero.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub vector: Vec<f64>,
    pub own_last: Option<usize>,
    /// Last action of the agent this one was most recently paired with.
    pub last_opponent: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub observations: Vec<Observation>,
    pub rewards: Vec<f64>,
    pub done: bool,
}

/// Running state of one iterated matrix game.
#[derive(Clone, Debug)]
pub struct MatrixGame {
    spec: SubstrateSpec,
    t: usize,
    /// Per agent, most recent first.
    histories: Vec<VecDeque<usize>>,
    last_opponent: Vec<Option<usize>>,
    rng: Rng,
}

impl MatrixGame {
    pub fn reset(spec: &SubstrateSpec, seed: u64) -> Result<(Self, Vec<Observation>)> {
        spec.validate()?;
        let game = Self {
            spec: spec.clone(),
            t: 0,
            histories: vec![VecDeque::with_capacity(spec.history); spec.n_agents],
            last_opponent: vec![None; spec.n_agents],
            rng: rng::stream(seed, "substrate/matching"),
        };
        let obs = game.observations();
        Ok((game, obs))
    }

    pub fn spec(&self) -> &SubstrateSpec {
        &self.spec
    }

    pub fn time(&self) -> usize {
        self.t
    }

    pub fn is_done(&self) -> bool {
        self.t >= self.spec.episode_length
    }

    pub fn observation(&self, agent: usize) -> Observation {
        let n = self.spec.n_agents;
        let l = self.spec.history;
        let a = self.spec.actions();
        let mut vector = vec![0.0; n * l * a];
        for rel in 0..n {
            let j = (agent + rel) % n;
            for (slot, &act) in self.histories[j].iter().enumerate() {
                vector[(rel * l + slot) * a + act] = 1.0;
            }
        }
        Observation {
            vector,
            own_last: self.histories[agent].front().copied(),
            last_opponent: self.last_opponent[agent],
        }
    }

    pub fn observations(&self) -> Vec<Observation> {
        (0..self.spec.n_agents).map(|i| self.observation(i)).collect()
    }

    fn pairs(&mut self) -> Vec<(usize, usize)> {
        let mut order: Vec<usize> = (0..self.spec.n_agents).collect();
        if self.spec.pairing == Pairing::RandomMatching {
            order.shuffle(&mut self.rng);
        }
        order.chunks_exact(2).map(|p| (p[0], p[1])).collect()
    }

    pub fn step(&mut self, joint_actions: &[usize]) -> Result<StepResult> {
        let n = self.spec.n_agents;
        if joint_actions.len() != n {
            return Err(MrdgError::contract(
                "substrates",
                format!("expected {n} actions, got {}", joint_actions.len()),
            ));
        }
        if self.is_done() {
            return Err(MrdgError::contract("substrates", "step called after the episode ended"));
        }
        if let Some(&bad) = joint_actions.iter().find(|&&a| a >= self.spec.actions()) {
            return Err(MrdgError::contract("substrates", format!("action {bad} out of range")));
        }
        let mut rewards = vec![0.0; n];
        for (row, col) in self.pairs() {
            let (rr, rc) = payoff_lookup(&self.spec.payoff, joint_actions[row], joint_actions[col])?;
            rewards[row] += rr;
            rewards[col] += rc;
            self.last_opponent[row] = Some(joint_actions[col]);
            self.last_opponent[col] = Some(joint_actions[row]);
        }
        for (h, &a) in self.histories.iter_mut().zip(joint_actions) {
            h.push_front(a);
            h.truncate(self.spec.history);
        }
        self.t += 1;
        Ok(StepResult {
            observations: self.observations(),
            rewards,
            done: self.is_done(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(payoff: PayoffMatrix, n: usize, len: usize, l: usize) -> SubstrateSpec {
        let pairing = if n == 2 { Pairing::Fixed } else { Pairing::RandomMatching };
        SubstrateSpec::new(payoff, n, len, l, pairing).unwrap()
    }

    #[test]
    fn reset_is_empty_history() {
        let s = spec(PayoffMatrix::stag_hunt(), 2, 5, 1);
        let (_, obs) = MatrixGame::reset(&s, 3).unwrap();
        assert_eq!(obs[0].vector.len(), 4);
        assert!(obs.iter().all(|o| o.vector.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn all_stag_returns_forty() {
        let s = spec(PayoffMatrix::stag_hunt(), 2, 10, 3);
        let (mut g, _) = MatrixGame::reset(&s, 0).unwrap();
        let mut ret = [0.0; 2];
        loop {
            let r = g.step(&[0, 0]).unwrap();
            ret[0] += r.rewards[0];
            ret[1] += r.rewards[1];
            if r.done {
                break;
            }
        }
        assert_eq!(ret, [40.0, 40.0]);
        assert!(g.step(&[0, 0]).is_err());
    }

    #[test]
    fn mutual_defection_pays_one() {
        let s = spec(PayoffMatrix::prisoners_dilemma(), 2, 3, 1);
        let (mut g, _) = MatrixGame::reset(&s, 0).unwrap();
        for _ in 0..3 {
            assert_eq!(g.step(&[1, 1]).unwrap().rewards, vec![1.0, 1.0]);
        }
    }

    #[test]
    fn history_shift_and_relative_order() {
        let s = spec(PayoffMatrix::pure_coordination(), 3, 4, 2);
        let (mut g, _) = MatrixGame::reset(&s, 9).unwrap();
        let r = g.step(&[2, 0, 1]).unwrap();
        let a = 3;
        let o1 = &r.observations[1].vector;
        // own block, slot 0 = own action 0
        assert_eq!(&o1[0..a], &[1.0, 0.0, 0.0]);
        // relative agent 1 of agent 1 is agent 2 (action 1)
        assert_eq!(&o1[2 * a..3 * a], &[0.0, 1.0, 0.0]);
        // relative agent 2 of agent 1 is agent 0 (action 2)
        assert_eq!(&o1[4 * a..5 * a], &[0.0, 0.0, 1.0]);
        // slot 1 is still unknown
        assert!(o1[a..2 * a].iter().all(|&v| v == 0.0));
        let r = g.step(&[0, 0, 0]).unwrap();
        assert_eq!(&r.observations[1].vector[a..2 * a], &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn wrong_action_count() {
        let s = spec(PayoffMatrix::stag_hunt(), 2, 3, 1);
        let (mut g, _) = MatrixGame::reset(&s, 0).unwrap();
        assert!(g.step(&[0]).is_err());
        assert!(g.step(&[0, 5]).is_err());
    }

    #[test]
    fn invalid_specs() {
        let p = PayoffMatrix::stag_hunt();
        assert!(SubstrateSpec::new(p.clone(), 1, 5, 1, Pairing::Fixed).is_err());
        assert!(SubstrateSpec::new(p.clone(), 2, 0, 1, Pairing::Fixed).is_err());
        assert!(SubstrateSpec::new(p, 2, 5, 0, Pairing::Fixed).is_err());
    }

    #[test]
    fn random_matching_is_seeded() {
        let s = spec(PayoffMatrix::prisoners_dilemma(), 5, 6, 1);
        let run = |seed| {
            let (mut g, _) = MatrixGame::reset(&s, seed).unwrap();
            (0..6).map(|t| g.step(&[t % 2, 1, 0, 1, 0]).unwrap().rewards).collect::<Vec<_>>()
        };
        assert_eq!(run(4), run(4));
    }
}
