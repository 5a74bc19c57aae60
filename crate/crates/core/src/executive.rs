//! Shared-plan execution: proposals, step requests, know-how explanations,
//! divergence-driven informing, commitment tracking, replanning and robot
//! step dispatch.
//!
//! Per tick the simulation calls [`ExecutionState::monitor`] with the human
//! acts of this tick and the events of the previous one, then
//! [`ExecutionState::dispatch`] once the humans' intended actions are known.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::comm::{CommAct, Payload, TaskSummary};
use crate::coordination::{engagement_cue, safety_gate, Gate, HandoverOutput, JointActionSession};
use crate::facts::{Fact, FactBase};
use crate::geometry::Cell;
use crate::htn::{
    plan, Constraint, ExecSpec, HtnDomain, Negotiation, NegotiationConstraints, NegotiationOutcome,
    PlanError, PlanRequest, PlanResponse, PlanStep, SharedPlan, StepId,
};
use crate::human::{near_surface, place_cell};
use crate::mental::{knowledge_of, AgentMentalState, Divergence, Know, StepBelief};
use crate::scenario::{GoalSpec, RunParams};
use crate::world::{AgentKind, EntityId, Event, GridWorld, PrimitiveAction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Phase {
    Proposing,
    Executing,
    Replanning,
    Achieved,
    Aborted,
}

impl Phase {
    pub fn is_terminal(self) -> bool {
        matches!(self, Phase::Achieved | Phase::Aborted)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum StepStatus {
    Pending,
    Active,
    Done,
    Failed,
}

impl StepStatus {
    fn belief(self) -> StepBelief {
        match self {
            StepStatus::Done => StepBelief::Done,
            StepStatus::Failed => StepBelief::Failed,
            StepStatus::Pending | StepStatus::Active => StepBelief::Pending,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub goal: String,
    pub to: Phase,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Commitment {
    Committed,
    Disengaged(EntityId),
}

/// Read-only inputs shared by every planning call of a run.
#[derive(Clone, Copy)]
pub struct ExecContext<'a> {
    pub robot: &'a str,
    pub domain: &'a HtnDomain,
    pub agents: &'a [(EntityId, AgentKind)],
    pub params: &'a RunParams,
}

impl ExecContext<'_> {
    fn is_human(&self, id: &str) -> bool {
        self.agents
            .iter()
            .any(|(a, k)| a == id && *k == AgentKind::Human)
    }

    fn with_static(&self, facts: &FactBase) -> BTreeSet<Fact> {
        facts
            .iter()
            .cloned()
            .chain(self.domain.static_facts.iter().cloned())
            .collect()
    }

    pub fn plan_goal(
        &self,
        goal: &GoalSpec,
        facts: &FactBase,
        mentals: &BTreeMap<EntityId, AgentMentalState>,
        constraints: &NegotiationConstraints,
        id: &str,
    ) -> Result<SharedPlan, PlanError> {
        let state = self.with_static(facts);
        let knowledge = knowledge_of(mentals.values());
        plan(
            PlanRequest {
                domain: self.domain,
                facts: &state,
                goal: &goal.task,
                condition: &goal.condition,
                knowledge: &knowledge,
                policy: &self.params.policy,
                constraints,
                agents: self.agents,
                cancel: None,
            },
            id,
        )
    }
}

/// What monitoring produced this tick.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Verdict {
    pub acts: Vec<CommAct>,
    pub transitions: Vec<Transition>,
    /// Relevant divergences seen this tick, before any repair.
    pub divergences: Vec<Divergence>,
}

/// The robot's command for this tick.
#[derive(Debug, Clone, PartialEq)]
pub struct Dispatch {
    pub action: PrimitiveAction,
    pub act: Option<CommAct>,
    pub transition: Option<Transition>,
    /// A manipulation held back by the safety gate.
    pub held: bool,
}

impl Dispatch {
    fn wait() -> Self {
        Dispatch {
            action: PrimitiveAction::Wait,
            act: None,
            transition: None,
            held: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ExecutionState {
    pub goal: GoalSpec,
    pub plan: SharedPlan,
    pub status: BTreeMap<StepId, StepStatus>,
    pub wait_timers: BTreeMap<StepId, u32>,
    pub request_counts: BTreeMap<EntityId, u32>,
    pub phase: Phase,
    pub reason: Option<String>,
    pub negotiation: Negotiation,
    /// `mustNotDo(agent, *)` for agents found disengaged.
    pub withdrawn: NegotiationConstraints,
    pub handover: Option<(StepId, JointActionSession)>,
    requested: BTreeSet<StepId>,
    explained: BTreeSet<(EntityId, String)>,
    proposed: BTreeSet<EntityId>,
    awaiting: BTreeSet<EntityId>,
    plans_made: u32,
    /// Tick at which the current replanning phase began.
    replan_since: Option<u64>,
}

impl ExecutionState {
    /// Plans the goal from the current facts and enters the first phase.
    pub fn start(
        ctx: &ExecContext<'_>,
        goal: &GoalSpec,
        facts: &FactBase,
        mentals: &BTreeMap<EntityId, AgentMentalState>,
    ) -> (ExecutionState, Transition) {
        let mut st = ExecutionState {
            goal: goal.clone(),
            plan: SharedPlan::empty(String::new(), goal.task.clone()),
            status: BTreeMap::new(),
            wait_timers: BTreeMap::new(),
            request_counts: BTreeMap::new(),
            phase: Phase::Executing,
            reason: None,
            negotiation: Negotiation::default(),
            withdrawn: NegotiationConstraints::default(),
            handover: None,
            requested: BTreeSet::new(),
            explained: BTreeSet::new(),
            proposed: BTreeSet::new(),
            awaiting: BTreeSet::new(),
            plans_made: 0,
            replan_since: None,
        };
        let id = st.next_plan_id();
        let t = match ctx.plan_goal(
            goal,
            facts,
            mentals,
            &NegotiationConstraints::default(),
            &id,
        ) {
            Ok(p) => st.install(ctx, p, true, "planned"),
            Err(e) => st.enter(Phase::Aborted, format!("planning failed: {e}")),
        };
        (st, t)
    }

    fn next_plan_id(&mut self) -> String {
        self.plans_made += 1;
        format!("{}-plan-{}", self.goal.id, self.plans_made)
    }

    fn enter(&mut self, phase: Phase, reason: impl Into<String>) -> Transition {
        let reason = reason.into();
        self.phase = phase;
        self.reason = Some(reason.clone());
        Transition {
            goal: self.goal.id.clone(),
            to: phase,
            reason,
        }
    }

    fn constraints(&self) -> NegotiationConstraints {
        let mut c = self.negotiation.constraints.clone();
        c.merge(&self.withdrawn);
        c
    }

    fn human_assignments(
        &self,
        ctx: &ExecContext<'_>,
        plan: &SharedPlan,
    ) -> Vec<(EntityId, String)> {
        let mut v: Vec<(EntityId, String)> = plan
            .steps
            .iter()
            .filter(|s| {
                ctx.is_human(&s.agent)
                    && self
                        .status
                        .get(&s.id)
                        .map_or(true, |st| *st != StepStatus::Done)
            })
            .map(|s| (s.agent.clone(), s.task.to_string()))
            .collect();
        v.sort();
        v
    }

    /// Installs a plan. Humans with steps get a proposal when `propose`.
    fn install(
        &mut self,
        ctx: &ExecContext<'_>,
        plan: SharedPlan,
        propose: bool,
        why: &str,
    ) -> Transition {
        let plan = if self.plans_made > 1 {
            let prefix = format!("r{}.", self.plans_made);
            retag(plan, &prefix)
        } else {
            plan
        };
        self.status = plan
            .steps
            .iter()
            .map(|s| (s.id.clone(), StepStatus::Pending))
            .collect();
        self.wait_timers.clear();
        self.requested.clear();
        self.proposed.clear();
        self.handover = None;
        self.replan_since = None;
        self.awaiting = plan
            .steps
            .iter()
            .filter(|s| ctx.is_human(&s.agent))
            .map(|s| s.agent.clone())
            .collect();
        let id = plan.id.clone();
        let empty = plan.steps.is_empty();
        self.plan = plan;
        if empty {
            return self.enter(Phase::Achieved, "goal condition holds");
        }
        if propose && !self.awaiting.is_empty() {
            self.enter(Phase::Proposing, format!("{why}: proposing {id}"))
        } else {
            self.awaiting.clear();
            self.enter(Phase::Executing, format!("{why}: executing {id}"))
        }
    }

    fn step_beliefs(&self) -> BTreeMap<StepId, StepBelief> {
        self.status
            .iter()
            .map(|(k, v)| (k.clone(), v.belief()))
            .collect()
    }

    fn preds_done(&self, id: &str) -> bool {
        self.plan
            .predecessors(id)
            .iter()
            .all(|p| self.status.get(*p) == Some(&StepStatus::Done))
    }

    fn summaries(&self) -> Vec<TaskSummary> {
        let mut out: Vec<TaskSummary> = Vec::new();
        for i in self.plan.topological() {
            let s = &self.plan.steps[i];
            let task = s.group.to_string();
            let entry = match out.iter_mut().position(|t| t.task == task) {
                Some(k) => &mut out[k],
                None => {
                    out.push(TaskSummary {
                        task,
                        agents: Vec::new(),
                        steps: Vec::new(),
                    });
                    out.last_mut().unwrap()
                }
            };
            if !entry.agents.contains(&s.agent) {
                entry.agents.push(s.agent.clone());
            }
            entry.steps.push(s.id.clone());
        }
        out
    }

    pub fn commitment(&self, ctx: &ExecContext<'_>) -> Commitment {
        self.request_counts
            .iter()
            .find(|(_, n)| **n >= ctx.params.ignored_requests)
            .map_or(Commitment::Committed, |(a, _)| {
                Commitment::Disengaged(a.clone())
            })
    }

    /// Monitoring half of the tick: negotiation, step bookkeeping, plan
    /// validation, informing, proposals, explanations and requests.
    pub fn monitor(
        &mut self,
        ctx: &ExecContext<'_>,
        tick: u64,
        facts: &FactBase,
        events: &[Event],
        mentals: &BTreeMap<EntityId, AgentMentalState>,
        human_acts: &[CommAct],
    ) -> Verdict {
        let mut v = Verdict::default();
        if self.phase.is_terminal() {
            return v;
        }
        if self.phase == Phase::Proposing {
            self.negotiate(ctx, facts, mentals, human_acts, &mut v);
            if self.phase.is_terminal() {
                return v;
            }
        }
        self.track_events(ctx, events, &mut v);
        if !self.status.is_empty() && self.status.values().all(|s| *s == StepStatus::Done) {
            v.transitions
                .push(self.enter(Phase::Achieved, "all steps done"));
            return v;
        }
        if self.phase == Phase::Replanning {
            if self.replan_since.is_some_and(|t| t < tick) {
                let t = self.replan(ctx, facts, mentals);
                v.transitions.push(t);
            }
            if self.phase != Phase::Executing && self.phase != Phase::Proposing {
                return v;
            }
        }
        if self.phase == Phase::Executing {
            let remaining = self.plan.remaining(&self.done());
            if let Err(violation) = remaining.validate(&ctx.with_static(facts)) {
                v.transitions
                    .push(self.begin_replan(tick, violation.to_string()));
                return v;
            }
        }

        let informed = self.inform(ctx, tick, facts, mentals, &mut v);
        if self.phase == Phase::Proposing {
            let summaries = self.summaries();
            for h in self.awaiting.clone() {
                if self.proposed.insert(h.clone()) {
                    v.acts.push(CommAct::new(
                        ctx.robot,
                        h,
                        tick,
                        Payload::ProposePlan {
                            plan_id: self.plan.id.clone(),
                            summaries: summaries.clone(),
                        },
                    ));
                }
            }
            return v;
        }
        let fresh = self.request(ctx, tick, mentals, &informed, &mut v);
        if let Some(t) = self.tick_timers(ctx, tick, &fresh) {
            v.transitions.push(t);
        }
        v
    }

    fn done(&self) -> BTreeSet<StepId> {
        self.status
            .iter()
            .filter(|(_, s)| **s == StepStatus::Done)
            .map(|(k, _)| k.clone())
            .collect()
    }

    fn negotiate(
        &mut self,
        ctx: &ExecContext<'_>,
        facts: &FactBase,
        mentals: &BTreeMap<EntityId, AgentMentalState>,
        human_acts: &[CommAct],
        v: &mut Verdict,
    ) {
        for act in human_acts {
            let response = match &act.payload {
                Payload::AcceptPlan { plan_id } => PlanResponse::Accept {
                    plan_id: plan_id.clone(),
                },
                Payload::RejectPlan {
                    plan_id,
                    constraints,
                } => PlanResponse::Reject {
                    plan_id: plan_id.clone(),
                    constraints: constraints.clone(),
                },
                _ => continue,
            };
            if self.phase != Phase::Proposing || !self.awaiting.contains(&act.from) {
                continue;
            }
            let id = format!("{}-plan-{}", self.goal.id, self.plans_made + 1);
            let withdrawn = self.withdrawn.clone();
            let plan = self.plan.clone();
            let goal = self.goal.clone();
            let outcome = self.negotiation.respond(&plan, &response, |c| {
                let mut all = c.clone();
                all.merge(&withdrawn);
                ctx.plan_goal(&goal, facts, mentals, &all, &id)
            });
            match outcome {
                Err(_) => {}
                Ok(NegotiationOutcome::Accepted(_)) => {
                    self.awaiting.remove(&act.from);
                    if self.awaiting.is_empty() {
                        let t = self.enter(Phase::Executing, format!("{} accepted", self.plan.id));
                        v.transitions.push(t);
                    }
                }
                Ok(NegotiationOutcome::Replanned(p)) => {
                    self.plans_made += 1;
                    let t = self.install(
                        ctx,
                        p,
                        true,
                        &format!("{} rejected by {}", plan.id, act.from),
                    );
                    v.transitions.push(t);
                }
                Ok(NegotiationOutcome::Infeasible(e)) => {
                    let t = self.enter(Phase::Aborted, format!("negotiation infeasible: {e}"));
                    v.transitions.push(t);
                    return;
                }
            }
        }
    }

    fn track_events(&mut self, ctx: &ExecContext<'_>, events: &[Event], v: &mut Verdict) {
        let mut failed = None;
        for ev in events {
            for s in &self.plan.steps {
                if self.status.get(&s.id) == Some(&StepStatus::Done) {
                    continue;
                }
                match s.event_outcome(ev) {
                    Some(true) => {
                        self.status.insert(s.id.clone(), StepStatus::Done);
                    }
                    Some(false) if !ctx.is_human(&ev.actor) || s.agent == ev.actor => {
                        // Failed human attempts are retried; a robot failure
                        // invalidates the plan.
                        if !ctx.is_human(&ev.actor) {
                            self.status.insert(s.id.clone(), StepStatus::Failed);
                            failed.get_or_insert_with(|| s.id.clone());
                        }
                    }
                    _ => {}
                }
                if ctx.is_human(&ev.actor)
                    && s.agent == ev.actor
                    && ev.action != PrimitiveAction::Wait
                {
                    if let Some(t) = self.wait_timers.get_mut(&s.id) {
                        *t = 0;
                    }
                }
            }
        }
        if let Some(id) = failed {
            if self.phase == Phase::Executing {
                let t = self.begin_replan(ev_tick(events), format!("step {id} failed"));
                v.transitions.push(t);
            }
        }
    }

    fn begin_replan(&mut self, tick: u64, reason: String) -> Transition {
        self.replan_since = Some(tick);
        self.handover = None;
        self.enter(Phase::Replanning, reason)
    }

    /// Replans from the current facts. Humans are only asked again when
    /// their share of the work changed.
    fn replan(
        &mut self,
        ctx: &ExecContext<'_>,
        facts: &FactBase,
        mentals: &BTreeMap<EntityId, AgentMentalState>,
    ) -> Transition {
        let old = self.human_assignments(ctx, &self.plan);
        let id = self.next_plan_id();
        match ctx.plan_goal(&self.goal, facts, mentals, &self.constraints(), &id) {
            Err(e) => {
                let why = self.reason.clone().unwrap_or_default();
                self.enter(
                    Phase::Aborted,
                    format!("replanning after {why} failed: {e}"),
                )
            }
            Ok(p) => {
                // Fresh ids are absent from `status`, so every step counts.
                let new = self.human_assignments(ctx, &retag(p.clone(), "?"));
                let propose = !new.is_empty() && new != old;
                self.install(ctx, p, propose, "replanned")
            }
        }
    }

    /// At most one Inform per human, for a relevant divergence that some
    /// robot fact repairs. Returns the humans still holding such a
    /// divergence.
    fn inform(
        &mut self,
        ctx: &ExecContext<'_>,
        tick: u64,
        facts: &FactBase,
        mentals: &BTreeMap<EntityId, AgentMentalState>,
        v: &mut Verdict,
    ) -> BTreeSet<EntityId> {
        let beliefs = self.step_beliefs();
        let mut blocked = BTreeSet::new();
        for (id, m) in mentals {
            if !ctx.is_human(id) {
                continue;
            }
            let relevant: Vec<Divergence> = m
                .divergences(facts, Some(&self.plan), &beliefs)
                .into_iter()
                .filter(|d| d.relevant)
                .collect();
            let repair = relevant.iter().find_map(|d| repair_fact(d, m, facts));
            v.divergences.extend(relevant);
            if let Some(fact) = repair {
                v.acts.push(CommAct::new(
                    ctx.robot,
                    id.clone(),
                    tick,
                    Payload::Inform { fact },
                ));
                blocked.insert(id.clone());
            }
        }
        blocked
    }

    fn request(
        &mut self,
        ctx: &ExecContext<'_>,
        tick: u64,
        mentals: &BTreeMap<EntityId, AgentMentalState>,
        informed: &BTreeSet<EntityId>,
        v: &mut Verdict,
    ) -> BTreeSet<StepId> {
        let mut fresh = BTreeSet::new();
        let mut served: BTreeSet<EntityId> = BTreeSet::new();
        for i in self.plan.topological() {
            let s = self.plan.steps[i].clone();
            if self.status.get(&s.id) == Some(&StepStatus::Done) || !self.preds_done(&s.id) {
                continue;
            }
            // The receiver of a robot handover is asked to take part.
            let (who, human_step) = match &s.exec {
                ExecSpec::Handover { to, .. } if !ctx.is_human(&s.agent) && ctx.is_human(to) => {
                    (to.clone(), false)
                }
                _ if ctx.is_human(&s.agent) => (s.agent.clone(), true),
                _ => continue,
            };
            if !served.insert(who.clone())
                || informed.contains(&who)
                || self.requested.contains(&s.id)
            {
                continue;
            }
            let task = s.task.to_string();
            let unknown = mentals
                .get(&who)
                .is_some_and(|m| m.knows(&s.task.name) == Know::Unknown);
            if human_step && unknown && self.explained.insert((who.clone(), s.task.name.clone())) {
                v.acts.push(CommAct::new(
                    ctx.robot,
                    who,
                    tick,
                    Payload::Explain {
                        task: s.task.name.clone(),
                    },
                ));
                continue;
            }
            self.requested.insert(s.id.clone());
            fresh.insert(s.id.clone());
            if human_step {
                self.status.insert(s.id.clone(), StepStatus::Active);
                self.wait_timers.insert(s.id.clone(), 0);
            }
            v.acts.push(CommAct::new(
                ctx.robot,
                who,
                tick,
                Payload::RequestAction {
                    step_id: s.id.clone(),
                    task,
                },
            ));
        }
        fresh
    }

    /// Ages requested human steps; a request ignored for longer than the
    /// timeout counts against the agent.
    fn tick_timers(
        &mut self,
        ctx: &ExecContext<'_>,
        tick: u64,
        fresh: &BTreeSet<StepId>,
    ) -> Option<Transition> {
        let mut expired = None;
        for s in &self.plan.steps {
            if self.status.get(&s.id) != Some(&StepStatus::Active) || !ctx.is_human(&s.agent) {
                continue;
            }
            let Some(t) = self.wait_timers.get_mut(&s.id) else {
                continue;
            };
            // The tick the request goes out does not count.
            if !fresh.contains(&s.id) {
                *t += 1;
            }
            if *t > ctx.params.request_timeout && expired.is_none() {
                expired = Some((s.id.clone(), s.agent.clone()));
            }
        }
        let (step, agent) = expired?;
        let n = self.request_counts.entry(agent.clone()).or_insert(0);
        *n += 1;
        if *n >= ctx.params.ignored_requests {
            Some(self.disengage(tick, &agent))
        } else {
            Some(self.begin_replan(tick, format!("timeout({step})")))
        }
    }

    fn disengage(&mut self, tick: u64, agent: &str) -> Transition {
        self.withdrawn
            .must_not_do
            .insert(Constraint::new(agent, "*"));
        self.begin_replan(tick, format!("disengaged({agent})"))
    }

    /// Chooses the robot's command: the running handover, else the earliest
    /// eligible robot step whose preconditions hold now.
    pub fn dispatch(
        &mut self,
        ctx: &ExecContext<'_>,
        world: &GridWorld,
        prev: Option<&GridWorld>,
        facts: &FactBase,
        last_events: &[Event],
        human_intents: &BTreeMap<EntityId, PrimitiveAction>,
    ) -> Dispatch {
        if self.phase != Phase::Executing {
            return Dispatch::wait();
        }
        if self.handover.is_some() {
            return self.run_handover(ctx, world, prev, facts, last_events, human_intents, true);
        }
        let state = ctx.with_static(facts);
        let mut chosen = None;
        for i in self.plan.topological() {
            let s = &self.plan.steps[i];
            let open = matches!(
                self.status.get(&s.id),
                Some(StepStatus::Pending | StepStatus::Active)
            );
            if s.agent != ctx.robot || !open || !self.preds_done(&s.id) || !applicable(s, &state) {
                continue;
            }
            chosen = Some(s.clone());
            break;
        }
        let Some(step) = chosen else {
            return Dispatch::wait();
        };
        self.status.insert(step.id.clone(), StepStatus::Active);
        if let ExecSpec::Handover { object, to } = &step.exec {
            self.handover = Some((
                step.id.clone(),
                JointActionSession::handover(ctx.robot, to.clone(), object.clone()),
            ));
            return self.run_handover(ctx, world, prev, facts, last_events, human_intents, false);
        }
        let action = robot_action(world, ctx.robot, &step.exec);
        gate(world, ctx.robot, action, None, last_events, human_intents)
    }

    #[allow(clippy::too_many_arguments)]
    fn run_handover(
        &mut self,
        ctx: &ExecContext<'_>,
        world: &GridWorld,
        prev: Option<&GridWorld>,
        facts: &FactBase,
        last_events: &[Event],
        human_intents: &BTreeMap<EntityId, PrimitiveAction>,
        observe: bool,
    ) -> Dispatch {
        let Some((step, mut session)) = self.handover.take() else {
            return Dispatch::wait();
        };
        if observe {
            if let Some(prev) = prev {
                let cue = engagement_cue(
                    facts,
                    prev,
                    world,
                    &session.partner,
                    ctx.robot,
                    &session.object,
                );
                session.observe(&ctx.params.engagement, cue);
            }
        }
        let out = session.step(world, world.tick);
        let partner = session.partner.clone();
        match out {
            HandoverOutput::Act(a) => {
                self.handover = Some((step, session));
                gate(world, ctx.robot, a, None, last_events, human_intents)
            }
            HandoverOutput::Signal(a, act) => {
                self.handover = Some((step, session));
                gate(world, ctx.robot, a, Some(act), last_events, human_intents)
            }
            HandoverOutput::Done => Dispatch::wait(),
            HandoverOutput::Aborted(reason) => {
                let t = if reason == "DISENGAGED" {
                    let n = self.request_counts.entry(partner.clone()).or_insert(0);
                    *n = (*n).max(ctx.params.ignored_requests);
                    self.disengage(world.tick, &partner)
                } else {
                    self.begin_replan(world.tick, format!("handover aborted: {reason}"))
                };
                let mut d = Dispatch::wait();
                d.transition = Some(t);
                d
            }
        }
    }

    /// Engagement belief of the running handover, for traces.
    pub fn engagement(&self) -> Option<&JointActionSession> {
        self.handover.as_ref().map(|(_, s)| s)
    }
}

fn ev_tick(events: &[Event]) -> u64 {
    events.first().map_or(0, |e| e.tick)
}

fn gate(
    world: &GridWorld,
    robot: &str,
    action: PrimitiveAction,
    act: Option<CommAct>,
    last_events: &[Event],
    human_intents: &BTreeMap<EntityId, PrimitiveAction>,
) -> Dispatch {
    match safety_gate(world, robot, &action, last_events, human_intents) {
        Gate::Allow => Dispatch {
            action,
            act,
            transition: None,
            held: false,
        },
        Gate::Hold => Dispatch {
            action: PrimitiveAction::Wait,
            act,
            transition: None,
            held: true,
        },
    }
}

/// Positive and negative preconditions of a step against a fact set.
pub fn applicable(step: &PlanStep, facts: &BTreeSet<Fact>) -> bool {
    step.pre.iter().all(|p| facts.contains(p))
        && !step.neg.iter().any(|n| facts.iter().any(|f| n.matches(f)))
}

/// The robot's next kernel action toward executing `spec` in the real world.
pub fn robot_action(world: &GridWorld, robot: &str, spec: &ExecSpec) -> PrimitiveAction {
    let Some(me) = world.agents.get(robot) else {
        return PrimitiveAction::Wait;
    };
    let holding = me.holding.as_deref();
    let walk = |goal: &dyn Fn(Cell) -> bool| match world.next_move_toward(robot, goal) {
        Some(dir) => PrimitiveAction::Move { dir },
        None => PrimitiveAction::Wait,
    };
    let reach_then = |object: &str, action: PrimitiveAction| {
        let Some(at) = world.position_of(object) else {
            return PrimitiveAction::Wait;
        };
        if world.reachable(me, at) {
            return action;
        }
        walk(&|c: Cell| c.chebyshev(at) <= me.reach && world.map.room(c) == world.map.room(at))
    };
    match spec {
        ExecSpec::PickUp { object } => {
            if holding.is_some() {
                return PrimitiveAction::Wait;
            }
            reach_then(
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
            reach_then(object, op)
        }
        ExecSpec::Place { object, surface } => {
            if holding != Some(object.as_str()) {
                return PrimitiveAction::Wait;
            }
            match place_cell(world, robot, surface) {
                Some(cell) => PrimitiveAction::Place {
                    object: object.clone(),
                    cell,
                },
                None => walk(&|c: Cell| near_surface(world, surface, c)),
            }
        }
        // Handovers run through a joint-action session.
        ExecSpec::Handover { .. } => PrimitiveAction::Wait,
    }
}

/// A robot fact that, told to the agent, removes the divergence: the actual
/// fact when there is one, else a fact that displaces the stale belief.
pub fn repair_fact(d: &Divergence, m: &AgentMentalState, facts: &FactBase) -> Option<Fact> {
    if let Some(a) = &d.actual {
        return Some(a.clone());
    }
    let stale = d.believed.as_ref()?;
    facts
        .iter()
        .filter(|f| f.predicate.is_observable())
        .filter(|f| {
            f.subject == stale.subject || f.object.as_name() == Some(stale.subject.as_str())
        })
        .find(|f| {
            let mut b = m.beliefs.clone();
            b.insert((*f).clone(), facts.tick);
            !b.contains(stale)
        })
        .cloned()
}

/// Renames step ids with a prefix so steps of successive plans never share
/// an id.
fn retag(mut plan: SharedPlan, prefix: &str) -> SharedPlan {
    let tag = |id: &mut String| *id = format!("{prefix}{id}");
    for s in &mut plan.steps {
        tag(&mut s.id);
    }
    for (a, b) in &mut plan.ordering {
        tag(a);
        tag(b);
    }
    for l in &mut plan.causal_links {
        if let Some(p) = &mut l.producer {
            tag(p);
        }
        tag(&mut l.consumer);
    }
    plan
}
