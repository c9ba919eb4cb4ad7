//! The controllable agent: a Q network whose adapted layer is written by the
//! hypernetwork, TD learning with a target copy, epsilon-greedy action
//! selection, partial re-initialization, and the training loop that ties the
//! pool, memory, encoders and hypernetwork together.

mod agent;
mod partner;
mod qnet;
mod replay;
mod trainer;

pub use agent::{Ablation, EpisodeContext, MrdgAgent, RecordStats, StepView};
pub use partner::{IqlPartner, PartnerAgent};
pub use qnet::{
    argmax, q_values, reinitialize, segment_name, select_action, td_loss_and_grad, td_loss_and_grad_with_targets,
    td_target, td_targets, AdaptedLayers, HypeState, LearnerParams, QNet, TdResult,
};
pub use replay::{ReplayBuffer, Transition};
pub use trainer::{epsilon_at, evaluate, evaluate_roster, pooled, PartnerEval, Trainer};
