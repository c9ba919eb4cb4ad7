use rand::Rng;

use crate::{MrdgError, Result};

/// One learner transition. The hypernet inputs are the aggregated retrieval
/// results that were (or will be) in force at `obs` and `next_obs`; they are
/// constants for learning.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: usize,
    pub partner_actions: Vec<usize>,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub done: bool,
    pub hyper_input: Vec<f64>,
    pub next_hyper_input: Vec<f64>,
}

/// Fixed-capacity ring buffer with uniform sampling (with replacement).
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(MrdgError::Config("replay capacity must be >= 1".into()));
        }
        Ok(Self {
            capacity,
            items: Vec::new(),
            next: 0,
        })
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Vec<&Transition>> {
        if self.items.is_empty() {
            return Err(MrdgError::Sampling("replay buffer is empty".into()));
        }
        Ok((0..batch).map(|_| &self.items[rng.gen_range(0..self.items.len())]).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn t(r: f64) -> Transition {
        Transition {
            obs: vec![],
            action: 0,
            partner_actions: vec![],
            reward: r,
            next_obs: vec![],
            done: false,
            hyper_input: vec![],
            next_hyper_input: vec![],
        }
    }

    #[test]
    fn capacity_and_sampling() {
        let mut b = ReplayBuffer::new(3).unwrap();
        let mut r = rng::stream(0, "t");
        assert!(b.sample(1, &mut r).is_err());
        for i in 0..5 {
            b.push(t(i as f64));
        }
        assert_eq!(b.len(), 3);
        let s = b.sample(100, &mut r).unwrap();
        assert!(s.iter().all(|x| x.reward >= 2.0));
    }
}
