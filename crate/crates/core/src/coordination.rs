//! Action-level coordination: the partner engagement filter, the handover
//! phase machine and the workspace safety gate.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::comm::{express, CommAct, Payload, SignalKind};
use crate::facts::{FactBase, Predicate};
use crate::geometry::Cell;
use crate::world::{AgentKind, EntityId, Event, GridWorld, PrimitiveAction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Engagement {
    Engaged,
    Distracted,
    Disengaged,
}

impl Engagement {
    pub const ALL: [Engagement; 3] = [
        Engagement::Engaged,
        Engagement::Distracted,
        Engagement::Disengaged,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum EngagementCue {
    LookingAt,
    MovingToward,
    Idle,
    MovingAway,
}

impl EngagementCue {
    pub const ALL: [EngagementCue; 4] = [
        EngagementCue::LookingAt,
        EngagementCue::MovingToward,
        EngagementCue::Idle,
        EngagementCue::MovingAway,
    ];

    fn index(self) -> usize {
        self as usize
    }
}

/// `likelihood[state][cue]` and `transition[from][to]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct EngagementModel {
    pub likelihood: [[f64; 4]; 3],
    pub transition: [[f64; 3]; 3],
}

impl Default for EngagementModel {
    fn default() -> Self {
        let rest = 0.4 / 3.0;
        EngagementModel {
            likelihood: [
                [0.6, 0.3, 0.05, 0.05],
                [rest, rest, 0.6, rest],
                [rest, rest, rest, 0.6],
            ],
            transition: [[0.8, 0.1, 0.1], [0.1, 0.8, 0.1], [0.1, 0.1, 0.8]],
        }
    }
}

impl EngagementModel {
    pub fn check(&self) -> Result<(), String> {
        for row in &self.likelihood {
            if row.iter().any(|p| *p <= 0.0) {
                return Err("likelihoods must be positive".into());
            }
        }
        for row in &self.transition {
            if row.iter().any(|p| *p < 0.0) || (row.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err("transition rows must be distributions".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EngagementBelief(pub [f64; 3]);

impl Default for EngagementBelief {
    fn default() -> Self {
        EngagementBelief([1.0 / 3.0; 3])
    }
}

impl EngagementBelief {
    pub fn p(&self, s: Engagement) -> f64 {
        self.0[s as usize]
    }

    /// Predict with the stickiness matrix, weight by the cue likelihood,
    /// renormalize.
    pub fn update(&self, model: &EngagementModel, cue: EngagementCue) -> EngagementBelief {
        let mut next = [0.0; 3];
        for (j, n) in next.iter_mut().enumerate() {
            let predicted: f64 = (0..3).map(|i| self.0[i] * model.transition[i][j]).sum();
            *n = predicted * model.likelihood[j][cue.index()];
        }
        let z: f64 = next.iter().sum();
        EngagementBelief(next.map(|x| x / z))
    }
}

/// Classifies the partner's behaviour toward `robot` this tick. Movement is
/// judged by the partner's own displacement relative to where the robot
/// stood before the tick.
pub fn engagement_cue(
    facts: &FactBase,
    prev: &GridWorld,
    now: &GridWorld,
    partner: &str,
    robot: &str,
    object: &str,
) -> EngagementCue {
    if let Some(t) = facts
        .value(partner, &Predicate::IsLookingAt)
        .and_then(|t| t.as_name())
    {
        if t == robot || t == object {
            return EngagementCue::LookingAt;
        }
    }
    if facts.holds(partner, Predicate::IsMovingToward, robot) {
        return EngagementCue::MovingToward;
    }
    let (Some(r), Some(before), Some(after)) = (
        prev.position_of(robot),
        prev.position_of(partner),
        now.position_of(partner),
    ) else {
        return EngagementCue::Idle;
    };
    match r.chebyshev(after).cmp(&r.chebyshev(before)) {
        std::cmp::Ordering::Less => EngagementCue::MovingToward,
        std::cmp::Ordering::Greater => EngagementCue::MovingAway,
        std::cmp::Ordering::Equal => EngagementCue::Idle,
    }
}

pub const EXTEND_THRESHOLD: f64 = 0.6;
pub const DISENGAGED_THRESHOLD: f64 = 0.7;
pub const DISENGAGED_STREAK: u32 = 5;
pub const CUE_PERIOD: u32 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum HandoverPhase {
    Approach,
    Extend,
    Transfer,
    Done,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct JointActionSession {
    pub giver: EntityId,
    pub partner: EntityId,
    pub object: EntityId,
    pub phase: HandoverPhase,
    pub ticks_in_phase: u32,
    pub disengaged_streak: u32,
    pub waiting_ticks: u32,
    pub belief: EngagementBelief,
    pub abort_reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum HandoverOutput {
    Act(PrimitiveAction),
    /// Wait with an attention cue: the kernel action plus the signal act.
    Signal(PrimitiveAction, CommAct),
    Done,
    Aborted(String),
}

impl JointActionSession {
    pub fn handover(
        giver: impl Into<EntityId>,
        partner: impl Into<EntityId>,
        object: impl Into<EntityId>,
    ) -> Self {
        JointActionSession {
            giver: giver.into(),
            partner: partner.into(),
            object: object.into(),
            phase: HandoverPhase::Approach,
            ticks_in_phase: 0,
            disengaged_streak: 0,
            waiting_ticks: 0,
            belief: EngagementBelief::default(),
            abort_reason: None,
        }
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self.phase, HandoverPhase::Done | HandoverPhase::Aborted)
    }

    fn enter(&mut self, phase: HandoverPhase) {
        if self.phase != phase {
            self.phase = phase;
            self.ticks_in_phase = 0;
        }
    }

    fn abort(&mut self, reason: &str) -> HandoverOutput {
        self.enter(HandoverPhase::Aborted);
        self.abort_reason = Some(reason.to_string());
        HandoverOutput::Aborted(reason.to_string())
    }

    /// Folds this tick's cue into the engagement belief.
    pub fn observe(&mut self, model: &EngagementModel, cue: EngagementCue) {
        self.belief = self.belief.update(model, cue);
        if self.belief.p(Engagement::Disengaged) > DISENGAGED_THRESHOLD {
            self.disengaged_streak += 1;
        } else {
            self.disengaged_streak = 0;
        }
    }

    /// Chooses the giver's next action.
    pub fn step(&mut self, world: &GridWorld, tick: u64) -> HandoverOutput {
        if self.is_terminal() {
            return match self.phase {
                HandoverPhase::Done => HandoverOutput::Done,
                _ => HandoverOutput::Aborted(self.abort_reason.clone().unwrap_or_default()),
            };
        }
        self.ticks_in_phase += 1;
        if world.holder_of(&self.object) == Some(&self.partner) {
            self.enter(HandoverPhase::Done);
            return HandoverOutput::Done;
        }
        let (Some(me), Some(partner)) = (
            world.agents.get(&self.giver),
            world.agents.get(&self.partner),
        ) else {
            return self.abort("UNKNOWN_AGENT");
        };
        if me.holding.as_deref() != Some(self.object.as_str()) {
            return self.abort("OBJECT_LOST");
        }
        if self.disengaged_streak >= DISENGAGED_STREAK {
            return self.abort("DISENGAGED");
        }
        let adjacent = me.position.chebyshev(partner.position) <= 1;
        let give = PrimitiveAction::Give {
            object: self.object.clone(),
            to: self.partner.clone(),
        };
        match self.phase {
            HandoverPhase::Approach if !adjacent => {
                let target = partner.position;
                match world.next_move_toward(&self.giver, |c: Cell| c.chebyshev(target) <= 1) {
                    Some(dir) => HandoverOutput::Act(PrimitiveAction::Move { dir }),
                    None => self.wait(tick),
                }
            }
            HandoverPhase::Approach => {
                if self.belief.p(Engagement::Engaged) > EXTEND_THRESHOLD {
                    self.enter(HandoverPhase::Extend);
                    self.waiting_ticks = 0;
                    HandoverOutput::Act(give)
                } else {
                    self.wait(tick)
                }
            }
            HandoverPhase::Extend | HandoverPhase::Transfer => {
                if !adjacent {
                    self.enter(HandoverPhase::Approach);
                    return self.step(world, tick);
                }
                if partner.holding.is_none() && me.offering.is_some() {
                    self.enter(HandoverPhase::Transfer);
                }
                HandoverOutput::Act(give)
            }
            HandoverPhase::Done | HandoverPhase::Aborted => unreachable!(),
        }
    }

    fn wait(&mut self, tick: u64) -> HandoverOutput {
        self.waiting_ticks += 1;
        if self.waiting_ticks % CUE_PERIOD == 0 {
            let act = CommAct::new(
                self.giver.clone(),
                self.partner.clone(),
                tick,
                Payload::Signal {
                    signal: SignalKind::LookAt,
                    target: self.partner.clone(),
                },
            );
            HandoverOutput::Signal(express(SignalKind::LookAt, &self.partner), act)
        } else {
            HandoverOutput::Act(PrimitiveAction::Wait)
        }
    }
}

/// Cell a manipulation acts on: the object's cell, the placement cell, or
/// the actor's own cell for hand-to-hand transfers.
pub fn manipulation_cell(world: &GridWorld, actor: &str, action: &PrimitiveAction) -> Option<Cell> {
    match action {
        PrimitiveAction::PickUp { object } | PrimitiveAction::StateOp { object, .. } => {
            world.position_of(object)
        }
        PrimitiveAction::Place { cell, .. } => Some(*cell),
        PrimitiveAction::Give { .. } | PrimitiveAction::Take { .. } => world.position_of(actor),
        _ => None,
    }
}

/// Workspace label touched by an agent's manipulation, if any.
pub fn manipulation_workspace(
    world: &GridWorld,
    actor: &str,
    action: &PrimitiveAction,
) -> Option<String> {
    if !action.is_manipulation() {
        return None;
    }
    manipulation_cell(world, actor, action).and_then(|c| world.map.workspace(c).map(String::from))
}

/// A Give and the matching Take between two agents form one joint action
/// and are not a workspace conflict.
pub fn is_handover_pair(a: (&str, &PrimitiveAction), b: (&str, &PrimitiveAction)) -> bool {
    match (a.1, b.1) {
        (PrimitiveAction::Give { object, to }, PrimitiveAction::Take { object: o, from })
        | (PrimitiveAction::Take { object: o, from }, PrimitiveAction::Give { object, to }) => {
            let (giver, taker) = if matches!(a.1, PrimitiveAction::Give { .. }) {
                (a.0, b.0)
            } else {
                (b.0, a.0)
            };
            object == o && to == taker && from == giver
        }
        _ => false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Allow,
    Hold,
}

/// Holds a robot manipulation whose workspace a human manipulated in last
/// tick's events, or is about to manipulate this tick (`human_intents`,
/// the onset of a reach is visible before it completes). Navigation and
/// signals always pass.
pub fn safety_gate(
    world: &GridWorld,
    robot: &str,
    action: &PrimitiveAction,
    last_events: &[Event],
    human_intents: &BTreeMap<EntityId, PrimitiveAction>,
) -> Gate {
    let Some(ws) = manipulation_workspace(world, robot, action) else {
        return Gate::Allow;
    };
    let is_human = |id: &str| {
        world
            .agents
            .get(id)
            .is_some_and(|a| a.kind == AgentKind::Human)
    };
    let recent = last_events
        .iter()
        .filter(|e| is_human(&e.actor) && e.action.is_manipulation())
        .any(|e| {
            manipulation_workspace(world, &e.actor, &e.action).as_deref() == Some(ws.as_str())
        });
    let concurrent = human_intents
        .iter()
        .filter(|(h, _)| is_human(h))
        .any(|(h, a)| {
            !is_handover_pair((robot, action), (h, a))
                && manipulation_workspace(world, h, a).as_deref() == Some(ws.as_str())
        });
    if recent || concurrent {
        Gate::Hold
    } else {
        Gate::Allow
    }
}
