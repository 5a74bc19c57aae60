//! Intention recognition: per-goal MDPs, softmax action likelihoods and
//! Bayesian filtering over the observed agent's believed state.

pub mod grid;
pub mod mdp;
pub mod model;

pub use grid::{IntentionConfig, IntentionGoal, IntentionTracker};
pub use mdp::{Mdp, MdpError, MdpParams, SolvedMdp};
pub use model::{decide_help, Confusion, HelpDecision, IntentionPosterior, NONE};
