//! Iterated matrix games in partially observable form, plus the scripted
//! partner and opponent policies that populate the uncontrollable group.

mod env;
mod payoff;
mod scripted;

pub use env::{MatrixGame, Observation, Pairing, StepResult, SubstrateSpec};
pub use payoff::{payoff_lookup, PayoffMatrix};
pub use scripted::{ScriptedKind, ScriptedPolicy};
