//! Seeded simulated humans, and the adapter for an externally driven one.
//!
//! Humans execute their requested step greedily in their own beliefs: they
//! walk to where they think the object is, which may be out of date.

use std::collections::{BTreeSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::comm::{CommAct, Payload};
use crate::facts::FactBase;
use crate::geometry::Cell;
use crate::htn::{ExecSpec, NegotiationConstraints, SharedPlan, StepId};
use crate::intention::grid::goal_region;
use crate::mental::{AgentMentalState, StepBelief};
use crate::world::{EntityId, GridWorld, Placement, PrimitiveAction};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum HumanPolicy {
    Cooperative,
    /// Waits with probability `p` each tick and sees only `viewRange` cells.
    #[serde(rename_all = "camelCase")]
    Distracted {
        #[serde(default = "default_p")]
        p: f64,
        #[serde(default = "default_view")]
        view_range: i32,
    },
    /// Rejects the first proposal with these constraints.
    Reluctant {
        #[serde(default)]
        refuse: NegotiationConstraints,
    },
    /// Plays a fixed action list, then waits. Accepts proposals.
    Scripted {
        actions: Vec<PrimitiveAction>,
    },
    Interactive,
}

fn default_p() -> f64 {
    0.3
}
fn default_view() -> i32 {
    3
}

impl HumanPolicy {
    pub fn kind_name(&self) -> &'static str {
        match self {
            HumanPolicy::Cooperative => "cooperative",
            HumanPolicy::Distracted { .. } => "distracted",
            HumanPolicy::Reluctant { .. } => "reluctant",
            HumanPolicy::Scripted { .. } => "scripted",
            HumanPolicy::Interactive => "interactive",
        }
    }

    /// Default-parameter policy by name (`scripted` gets an empty list).
    pub fn from_name(name: &str) -> Option<HumanPolicy> {
        Some(match name.to_ascii_lowercase().as_str() {
            "cooperative" => HumanPolicy::Cooperative,
            "distracted" => HumanPolicy::Distracted {
                p: default_p(),
                view_range: default_view(),
            },
            "reluctant" => HumanPolicy::Reluctant {
                refuse: NegotiationConstraints::default(),
            },
            "scripted" => HumanPolicy::Scripted {
                actions: Vec::new(),
            },
            "interactive" => HumanPolicy::Interactive,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanConfig {
    #[serde(flatten)]
    pub policy: HumanPolicy,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum HumanError {
    #[error("interactive human `{0}` has no driver attached")]
    NoDriver(EntityId),
}

/// What a human sees when deciding.
pub struct HumanView<'a> {
    pub world: &'a GridWorld,
    /// The robot's assessment, used only for what this human can see.
    pub facts: &'a FactBase,
    pub mental: &'a AgentMentalState,
    pub inbox: &'a [CommAct],
    pub plan: Option<&'a SharedPlan>,
}

/// Input queued by an external driver for an interactive human.
#[derive(Debug, Clone, Default)]
pub struct Driver {
    pub actions: VecDeque<PrimitiveAction>,
    pub acts: VecDeque<Payload>,
}

#[derive(Debug, Clone)]
pub struct HumanAgent {
    pub id: EntityId,
    pub policy: HumanPolicy,
    rng: ChaCha8Rng,
    /// Step the robot asked this human to do (or to take part in).
    pub pending: Option<StepId>,
    rejected: bool,
    script: VecDeque<PrimitiveAction>,
    pub driver: Option<Driver>,
}

impl HumanAgent {
    pub fn new(id: impl Into<EntityId>, config: &HumanConfig) -> Self {
        let script = match &config.policy {
            HumanPolicy::Scripted { actions } => actions.iter().cloned().collect(),
            _ => VecDeque::new(),
        };
        HumanAgent {
            id: id.into(),
            policy: config.policy.clone(),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            pending: None,
            rejected: false,
            script,
            driver: None,
        }
    }

    pub fn attach_driver(&mut self) {
        self.driver.get_or_insert_with(Driver::default);
    }

    /// One decision: a kernel action and outgoing acts.
    pub fn decide(
        &mut self,
        view: &HumanView<'_>,
    ) -> Result<(PrimitiveAction, Vec<CommAct>), HumanError> {
        let tick = view.world.tick;
        if let HumanPolicy::Interactive = self.policy {
            let driver = self
                .driver
                .as_mut()
                .ok_or_else(|| HumanError::NoDriver(self.id.clone()))?;
            let acts = driver
                .acts
                .drain(..)
                .map(|p| CommAct::new(self.id.clone(), reply_to(view.inbox, &p), tick, p))
                .collect();
            return Ok((
                driver.actions.pop_front().unwrap_or(PrimitiveAction::Wait),
                acts,
            ));
        }
        let outbox = self.read_inbox(view, tick);
        if let Some(step) = &self.pending {
            let done = view.mental.step_beliefs.get(step) == Some(&StepBelief::Done);
            if done || view.plan.and_then(|p| p.step(step)).is_none() {
                self.pending = None;
            }
        }
        // Drawn every tick so the stream does not depend on what happened.
        let draw: f64 = self.rng.gen();
        let action = match &self.policy {
            HumanPolicy::Scripted { .. } => {
                self.script.pop_front().unwrap_or(PrimitiveAction::Wait)
            }
            HumanPolicy::Distracted { p, .. } if draw < *p => PrimitiveAction::Wait,
            _ => self.act(view),
        };
        Ok((action, outbox))
    }

    fn read_inbox(&mut self, view: &HumanView<'_>, tick: u64) -> Vec<CommAct> {
        let mut out = Vec::new();
        for act in view.inbox.iter().filter(|a| a.to == self.id) {
            match &act.payload {
                Payload::ProposePlan { plan_id, .. } => {
                    let payload = match &self.policy {
                        HumanPolicy::Reluctant { refuse } if !self.rejected => {
                            self.rejected = true;
                            Payload::RejectPlan {
                                plan_id: plan_id.clone(),
                                constraints: refuse.clone(),
                            }
                        }
                        _ => Payload::AcceptPlan {
                            plan_id: plan_id.clone(),
                        },
                    };
                    out.push(CommAct::new(
                        self.id.clone(),
                        act.from.clone(),
                        tick,
                        payload,
                    ));
                }
                Payload::RequestAction { step_id, .. }
                    if !matches!(self.policy, HumanPolicy::Scripted { .. }) =>
                {
                    self.pending = Some(step_id.clone());
                }
                Payload::AskFact { pattern } => {
                    let facts = view
                        .mental
                        .beliefs
                        .facts
                        .keys()
                        .filter(|f| pattern.matches(f))
                        .cloned()
                        .collect();
                    out.push(CommAct::new(
                        self.id.clone(),
                        act.from.clone(),
                        tick,
                        Payload::Answer { facts },
                    ));
                }
                _ => {}
            }
        }
        out
    }

    fn act(&self, view: &HumanView<'_>) -> PrimitiveAction {
        let world = view.world;
        let Some(me) = world.agents.get(&self.id) else {
            return PrimitiveAction::Wait;
        };
        if me.holding.is_none() {
            for other in world.agents.values() {
                if let Some((o, to)) = &other.offering {
                    if *to == self.id {
                        return PrimitiveAction::Take {
                            object: o.clone(),
                            from: other.id.clone(),
                        };
                    }
                }
            }
        }
        let Some(step) = self.pending.as_ref().and_then(|s| view.plan?.step(s)) else {
            return PrimitiveAction::Wait;
        };
        if step.agent != self.id {
            return match &step.exec {
                ExecSpec::Handover { to, .. } if *to == self.id => PrimitiveAction::LookAt {
                    target: step.agent.clone(),
                },
                _ => PrimitiveAction::Wait,
            };
        }
        self.pursue(view, &step.exec)
    }

    fn pursue(&self, view: &HumanView<'_>, spec: &ExecSpec) -> PrimitiveAction {
        let world = view.world;
        let me = &world.agents[&self.id];
        let holding = me.holding.as_deref();
        match spec {
            ExecSpec::PickUp { object } => {
                if holding.is_some() {
                    return PrimitiveAction::Wait;
                }
                self.reach_for(
                    view,
                    object,
                    PrimitiveAction::PickUp {
                        object: object.clone(),
                    },
                )
            }
            ExecSpec::StateOp {
                object,
                prop,
                value,
            } => {
                let op = PrimitiveAction::StateOp {
                    object: object.clone(),
                    prop: prop.clone(),
                    value: value.into(),
                };
                if holding == Some(object.as_str()) {
                    return op;
                }
                self.reach_for(view, object, op)
            }
            ExecSpec::Place { object, surface } => {
                if holding != Some(object.as_str()) {
                    return self.pursue(
                        view,
                        &ExecSpec::PickUp {
                            object: object.clone(),
                        },
                    );
                }
                match place_cell(world, &self.id, surface) {
                    Some(cell) => PrimitiveAction::Place {
                        object: object.clone(),
                        cell,
                    },
                    None => self.walk(world, |c| near_surface(world, surface, c)),
                }
            }
            ExecSpec::Handover { object, to } => {
                if holding != Some(object.as_str()) {
                    return self.pursue(
                        view,
                        &ExecSpec::PickUp {
                            object: object.clone(),
                        },
                    );
                }
                match world.agents.get(to) {
                    Some(t) if t.position.chebyshev(me.position) <= 1 => PrimitiveAction::Give {
                        object: object.clone(),
                        to: to.clone(),
                    },
                    Some(t) => {
                        let at = t.position;
                        self.walk(world, |c| c.chebyshev(at) <= 1)
                    }
                    None => PrimitiveAction::Wait,
                }
            }
        }
    }

    /// Goes to the object and performs `action` there. A visible object is
    /// approached where it really is; otherwise where it is believed to be.
    fn reach_for(
        &self,
        view: &HumanView<'_>,
        object: &str,
        action: PrimitiveAction,
    ) -> PrimitiveAction {
        let world = view.world;
        let me = &world.agents[&self.id];
        if view.mental.visible(view.facts).contains(object) {
            let Some(at) = world.position_of(object) else {
                return PrimitiveAction::Wait;
            };
            if world.reachable(me, at) {
                return action;
            }
            return self.walk(world, |c| {
                c.chebyshev(at) <= me.reach && world.map.room(c) == world.map.room(at)
            });
        }
        let beliefs: BTreeSet<_> = view.mental.beliefs.set();
        match goal_region(&world.map, &beliefs, object) {
            Some(region) if region.contains(&me.position) => action,
            Some(region) => self.walk(world, |c| region.contains(&c)),
            None => PrimitiveAction::Wait,
        }
    }

    fn walk(&self, world: &GridWorld, goal: impl Fn(Cell) -> bool) -> PrimitiveAction {
        match world.next_move_toward(&self.id, goal) {
            Some(dir) => PrimitiveAction::Move { dir },
            None => PrimitiveAction::Wait,
        }
    }
}

fn reply_to(inbox: &[CommAct], payload: &Payload) -> EntityId {
    let about = match payload {
        Payload::AcceptPlan { plan_id } | Payload::RejectPlan { plan_id, .. } => Some(plan_id),
        _ => None,
    };
    inbox
        .iter()
        .rev()
        .find(|a| match (&a.payload, about) {
            (Payload::ProposePlan { plan_id, .. }, Some(p)) => plan_id == p,
            (_, None) => true,
            _ => false,
        })
        .map(|a| a.from.clone())
        .unwrap_or_else(|| "robot".to_string())
}

/// Walkable cell from which some cell of `surface` is within reach 1 in the
/// same room.
pub fn near_surface(world: &GridWorld, surface: &str, c: Cell) -> bool {
    world.map.is_walkable(c)
        && world
            .map
            .surface_cells(surface)
            .iter()
            .any(|s| s.chebyshev(c) <= 1 && world.map.room(*s) == world.map.room(c))
}

/// A reachable cell of `surface` to put something on, empty ones first.
pub fn place_cell(world: &GridWorld, agent: &str, surface: &str) -> Option<Cell> {
    let me = world.agents.get(agent)?;
    let occupied: BTreeSet<Cell> = world
        .objects
        .values()
        .filter_map(|o| match o.placement {
            Placement::OnSurface(c) | Placement::Cell(c) => Some(c),
            Placement::HeldBy(_) => None,
        })
        .collect();
    let cells: Vec<Cell> = world
        .map
        .surface_cells(surface)
        .into_iter()
        .filter(|c| world.reachable(me, *c))
        .collect();
    cells
        .iter()
        .copied()
        .find(|c| !occupied.contains(c))
        .or_else(|| cells.first().copied())
}
