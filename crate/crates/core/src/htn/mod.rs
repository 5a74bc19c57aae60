//! Hierarchical task-network planning of shared plans.

pub mod domain;
pub mod negotiate;
pub mod pattern;
pub mod plan;
pub mod planner;
pub mod social;

pub use domain::{ExecSpec, HtnDomain};
pub use negotiate::{Negotiation, NegotiationOutcome, PlanResponse};
pub use pattern::Task;
pub use plan::{PlanStep, SharedPlan, StepId, Violation};
pub use planner::{plan, PlanError, PlanRequest};
pub use social::{Constraint, LabeledConstraint, NegotiationConstraints, PolicyMode, SocialPolicy};
