//! Diversity policy pool: joint partner policies stored per (substrate,
//! coordination scheme) slot and sampled uniformly to vary who the learner
//! trains with.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::numerics::{MlpSpec, ParameterVector};
use crate::substrates::ScriptedKind;
use crate::{MrdgError, Result};

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SchemeId {
    pub substrate_id: String,
    pub scheme_index: usize,
}

impl SchemeId {
    pub fn new(substrate_id: impl Into<String>, scheme_index: usize) -> Self {
        Self {
            substrate_id: substrate_id.into(),
            scheme_index,
        }
    }
}

/// Policy of one uncontrollable agent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum PolicyDescriptor {
    Scripted(ScriptedKind),
    /// Greedy Q network snapshot of a co-trained partner.
    Learned { spec: MlpSpec, params: ParameterVector },
}

impl PolicyDescriptor {
    pub fn is_learned(&self) -> bool {
        matches!(self, PolicyDescriptor::Learned { .. })
    }
}

/// One policy per uncontrollable agent, in agent order.
pub type JointPolicy = Vec<PolicyDescriptor>;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PolicyPool {
    slots: BTreeMap<String, BTreeMap<usize, Vec<JointPolicy>>>,
    /// When set, storing into a full slot evicts its oldest entry.
    max_entries_per_slot: Option<usize>,
}

impl PolicyPool {
    pub fn new(max_entries_per_slot: Option<usize>) -> Self {
        Self {
            slots: BTreeMap::new(),
            max_entries_per_slot: max_entries_per_slot.filter(|&m| m > 0),
        }
    }

    pub fn store(&mut self, scheme: &SchemeId, policy: JointPolicy) {
        let slot = self
            .slots
            .entry(scheme.substrate_id.clone())
            .or_default()
            .entry(scheme.scheme_index)
            .or_default();
        slot.push(policy);
        if let Some(max) = self.max_entries_per_slot {
            if slot.len() > max {
                let excess = slot.len() - max;
                slot.drain(..excess);
            }
        }
    }

    pub fn is_empty(&self) -> bool {
        self.slots.values().all(|s| s.values().all(Vec::is_empty))
    }

    pub fn substrates(&self) -> impl Iterator<Item = &str> {
        self.slots
            .iter()
            .filter(|(_, s)| s.values().any(|v| !v.is_empty()))
            .map(|(k, _)| k.as_str())
    }

    pub fn slot(&self, scheme: &SchemeId) -> &[JointPolicy] {
        self.slots
            .get(&scheme.substrate_id)
            .and_then(|s| s.get(&scheme.scheme_index))
            .map_or(&[], Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.slots.values().flat_map(|s| s.values()).map(Vec::len).sum()
    }

    /// Uniform over substrates holding at least one policy.
    pub fn sample_substrate<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<String> {
        let subs: Vec<&str> = self.substrates().collect();
        if subs.is_empty() {
            return Err(MrdgError::Sampling("policy pool is empty".into()));
        }
        Ok(subs[rng.gen_range(0..subs.len())].to_string())
    }

    /// Uniform over every stored (scheme, entry) pair of the substrate. The
    /// returned policy is an owned copy.
    pub fn sample_scheme<R: Rng + ?Sized>(&self, substrate_id: &str, rng: &mut R) -> Result<(usize, JointPolicy)> {
        let slot = self
            .slots
            .get(substrate_id)
            .filter(|s| s.values().any(|v| !v.is_empty()))
            .ok_or_else(|| MrdgError::Sampling(format!("no policies stored for substrate {substrate_id:?}")))?;
        let total: usize = slot.values().map(Vec::len).sum();
        let mut k = rng.gen_range(0..total);
        for (&scheme, entries) in slot {
            if k < entries.len() {
                return Ok((scheme, entries[k].clone()));
            }
            k -= entries.len();
        }
        unreachable!("index within total")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("pool serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| MrdgError::Checkpoint(format!("policy pool: {e}")))
    }
}
