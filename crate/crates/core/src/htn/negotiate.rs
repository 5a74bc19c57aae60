//! Plan proposal responses and the per-episode negotiation loop.

use serde::{Deserialize, Serialize};

use super::plan::SharedPlan;
use super::planner::PlanError;
use super::social::NegotiationConstraints;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum PlanResponse {
    #[serde(rename_all = "camelCase")]
    Accept { plan_id: String },
    #[serde(rename_all = "camelCase")]
    Reject {
        plan_id: String,
        #[serde(default)]
        constraints: NegotiationConstraints,
    },
}

impl PlanResponse {
    pub fn plan_id(&self) -> &str {
        match self {
            PlanResponse::Accept { plan_id } | PlanResponse::Reject { plan_id, .. } => plan_id,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum NegotiationOutcome {
    Accepted(SharedPlan),
    Replanned(SharedPlan),
    Infeasible(PlanError),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("response addresses plan `{got}`, current plan is `{current}`")]
pub struct StalePlan {
    pub got: String,
    pub current: String,
}

/// Constraints accumulated over one goal episode.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Negotiation {
    pub constraints: NegotiationConstraints,
    pub rounds: u32,
}

impl Negotiation {
    /// Handles a response to `current`. `replan` is called with the
    /// accumulated constraints when the plan is rejected.
    pub fn respond(
        &mut self,
        current: &SharedPlan,
        response: &PlanResponse,
        replan: impl FnOnce(&NegotiationConstraints) -> Result<SharedPlan, PlanError>,
    ) -> Result<NegotiationOutcome, StalePlan> {
        if response.plan_id() != current.id {
            return Err(StalePlan {
                got: response.plan_id().to_string(),
                current: current.id.clone(),
            });
        }
        match response {
            PlanResponse::Accept { .. } => Ok(NegotiationOutcome::Accepted(current.clone())),
            PlanResponse::Reject { constraints, .. } => {
                self.rounds += 1;
                self.constraints.merge(constraints);
                Ok(match replan(&self.constraints) {
                    Ok(p) => NegotiationOutcome::Replanned(p),
                    Err(e) => NegotiationOutcome::Infeasible(e),
                })
            }
        }
    }
}
