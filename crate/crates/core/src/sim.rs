//! The tick loop tying kernel, assessment, mental states, humans, intention
//! recognition and the executive together.
//!
//! Order within tick t: humans decide (reading the robot's acts from t-1),
//! their plan acceptances land in their own mental state, the executive
//! monitors and dispatches, the kernel steps, the new world is assessed,
//! every human perceives, the robot's acts are delivered, and the intention
//! tracker scores the observed human's action.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::assess::{assess, diff, MOTION_WINDOW};
use crate::comm::{CommAct, Payload};
use crate::coordination::JointActionSession;
use crate::executive::{ExecContext, ExecutionState, Phase, Transition};
use crate::facts::FactBase;
use crate::htn::{HtnDomain, PolicyMode, SocialPolicy};
use crate::human::{HumanAgent, HumanConfig, HumanError, HumanPolicy, HumanView};
use crate::intention::{HelpDecision, IntentionTracker};
use crate::mental::{AgentMentalState, BeliefDigest, Divergence};
use crate::scenario::{GoalSpec, GoalStart, RunParams, Scenario, ScenarioError};
use crate::world::{AgentKind, EntityId, Event, GridWorld, PrimitiveAction};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("scenario needs exactly one robot, found {0}")]
    RobotCount(usize),
    #[error("unknown human policy `{0}`")]
    UnknownPolicy(String),
    #[error(transparent)]
    Human(#[from] HumanError),
    #[error("intention model: {0}")]
    Intention(String),
    #[error("max ticks must be positive")]
    MaxTicks,
}

/// Run-time changes to a scenario, recorded in trace headers.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Overrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_ticks: Option<u64>,
    /// Policy kind applied to every human.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub human: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy_mode: Option<PolicyMode>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Terminal {
    Achieved,
    Aborted,
    Timeout,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactDelta {
    pub added: Vec<String>,
    pub removed: Vec<String>,
}

/// Everything that happened in one tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TraceRecord {
    pub tick: u64,
    pub events: Vec<Event>,
    pub fact_delta: FactDelta,
    pub comm_acts: Vec<CommAct>,
    pub belief_digests: BTreeMap<EntityId, BeliefDigest>,
    pub posterior: Option<BTreeMap<String, f64>>,
    pub goal: Option<String>,
    pub phase: Option<Phase>,
    pub transitions: Vec<Transition>,
    pub engagement: Option<JointActionSession>,
    /// Relevant divergences the executive saw this tick.
    pub divergences: Vec<Divergence>,
    /// Robot manipulation held back by the safety gate.
    pub gate_hold: bool,
    pub terminal: Option<Terminal>,
}

#[derive(Clone)]
pub struct Sim {
    pub scenario: Scenario,
    pub overrides: Overrides,
    pub robot: EntityId,
    pub domain: HtnDomain,
    pub params: RunParams,
    agents: Vec<(EntityId, AgentKind)>,
    pub world: GridWorld,
    history: VecDeque<GridWorld>,
    pub facts: FactBase,
    pub mentals: BTreeMap<EntityId, AgentMentalState>,
    pub humans: BTreeMap<EntityId, HumanAgent>,
    pub seeds: BTreeMap<EntityId, u64>,
    /// The robot's acts from the previous tick, read by humans this tick.
    inbox: Vec<CommAct>,
    last_events: Vec<Event>,
    pub exec: Option<ExecutionState>,
    queue: VecDeque<GoalSpec>,
    watching: Vec<GoalSpec>,
    pub tracker: Option<IntentionTracker>,
    landmarks: BTreeSet<String>,
    pub terminal: Option<Terminal>,
}

fn policy_for(config: Option<&HumanConfig>, kind: Option<&str>) -> Result<HumanPolicy, SimError> {
    let base = config.map_or(HumanPolicy::Cooperative, |c| c.policy.clone());
    match kind {
        None => Ok(base),
        Some(k) if base.kind_name() == k.to_ascii_lowercase() => Ok(base),
        Some(k) => HumanPolicy::from_name(k).ok_or_else(|| SimError::UnknownPolicy(k.to_string())),
    }
}

impl Sim {
    pub fn new(scenario: Scenario, overrides: Overrides) -> Result<Sim, SimError> {
        let robots: Vec<EntityId> = scenario.world.robots().map(|a| a.id.clone()).collect();
        if robots.len() != 1 {
            return Err(SimError::RobotCount(robots.len()));
        }
        let robot = robots[0].clone();
        let doc = &scenario.doc;
        let mut params = doc.domain.params.clone();
        if let Some(m) = overrides.max_ticks {
            params.max_ticks = m;
        }
        if params.max_ticks == 0 {
            return Err(SimError::MaxTicks);
        }
        if let Some(mode) = overrides.policy_mode {
            params.policy = SocialPolicy::with_mode(mode);
        }
        let mut world = scenario.world.clone();
        let mut humans = BTreeMap::new();
        let mut seeds = BTreeMap::new();
        let human_ids: Vec<EntityId> = world.humans().map(|a| a.id.clone()).collect();
        for id in human_ids {
            let cfg = doc.humans.get(&id);
            let policy = policy_for(cfg, overrides.human.as_deref())?;
            let seed = overrides.seed.or(cfg.map(|c| c.seed)).unwrap_or(doc.seed);
            if let HumanPolicy::Distracted { view_range, .. } = &policy {
                if let Some(a) = world.agents.get_mut(&id) {
                    a.view_range = *view_range;
                }
            }
            let mut agent = HumanAgent::new(id.clone(), &HumanConfig { policy, seed });
            if agent.policy == HumanPolicy::Interactive {
                agent.attach_driver();
            }
            seeds.insert(id.clone(), seed);
            humans.insert(id, agent);
        }
        let facts = assess(&world, &[]);
        let knowledge = scenario.knowledge();
        let mentals = humans
            .keys()
            .map(|id| {
                (
                    id.clone(),
                    AgentMentalState::new(id.clone(), &facts, &knowledge),
                )
            })
            .collect();
        let tracker = doc
            .domain
            .intentions
            .clone()
            .map(IntentionTracker::new)
            .transpose()
            .map_err(|e| SimError::Intention(e.to_string()))?;
        let queue = doc
            .goals
            .iter()
            .filter(|g| g.start == GoalStart::Immediate)
            .cloned()
            .collect();
        let watching = doc
            .goals
            .iter()
            .filter(|g| g.start == GoalStart::OnIntention)
            .cloned()
            .collect();
        let landmarks = world.map.landmarks();
        Ok(Sim {
            domain: doc.domain.htn.clone(),
            agents: scenario.agents(),
            scenario,
            overrides,
            robot,
            params,
            world,
            history: VecDeque::new(),
            facts,
            mentals,
            humans,
            seeds,
            inbox: Vec::new(),
            last_events: Vec::new(),
            exec: None,
            queue,
            watching,
            tracker,
            landmarks,
            terminal: None,
        })
    }

    pub fn tick(&self) -> u64 {
        self.world.tick
    }

    pub fn plan(&self) -> Option<&crate::htn::SharedPlan> {
        self.exec.as_ref().map(|e| &e.plan)
    }

    /// Humans driven from outside (protocol sessions, replay).
    pub fn interactive(&self) -> impl Iterator<Item = &EntityId> {
        self.humans
            .iter()
            .filter(|(_, h)| h.driver.is_some())
            .map(|(id, _)| id)
    }

    pub fn queue_action(&mut self, human: &str, action: PrimitiveAction) -> bool {
        match self.humans.get_mut(human).and_then(|h| h.driver.as_mut()) {
            Some(d) => {
                d.actions.push_back(action);
                true
            }
            None => false,
        }
    }

    pub fn queue_act(&mut self, human: &str, payload: Payload) -> bool {
        match self.humans.get_mut(human).and_then(|h| h.driver.as_mut()) {
            Some(d) => {
                d.acts.push_back(payload);
                true
            }
            None => false,
        }
    }

    fn ctx(&self) -> (&str, &HtnDomain, &[(EntityId, AgentKind)], &RunParams) {
        (&self.robot, &self.domain, &self.agents, &self.params)
    }

    /// Starts the next goal: queued ones first, then an intention-adopted one.
    fn next_goal(&mut self, transitions: &mut Vec<Transition>) {
        let (robot, domain, agents, params) = self.ctx();
        let ctx = ExecContext {
            robot,
            domain,
            agents,
            params,
        };
        let goal = match self.queue.front() {
            Some(g) => Some(g.clone()),
            None => self.tracker.as_ref().and_then(|t| {
                let decision = t.decide(|g| {
                    self.watching.iter().find(|w| w.id == g).is_some_and(|w| {
                        ctx.plan_goal(w, &self.facts, &self.mentals, &Default::default(), "probe")
                            .is_ok()
                    })
                });
                match decision {
                    HelpDecision::Adopt(id) => self.watching.iter().find(|w| w.id == id).cloned(),
                    HelpDecision::Observe => None,
                }
            }),
        };
        let Some(goal) = goal else { return };
        let (exec, t) = ExecutionState::start(&ctx, &goal, &self.facts, &self.mentals);
        self.queue.retain(|g| g.id != goal.id);
        self.watching.retain(|g| g.id != goal.id);
        transitions.push(t);
        self.exec = Some(exec);
    }

    /// Advances one tick and returns its record.
    pub fn step(&mut self) -> Result<TraceRecord, SimError> {
        let tick = self.world.tick;
        let mut transitions = Vec::new();
        if self.exec.is_none() && self.terminal.is_none() {
            self.next_goal(&mut transitions);
        }

        // Humans decide on last tick's state.
        let plan = self.exec.as_ref().map(|e| e.plan.clone());
        let mut human_actions: BTreeMap<EntityId, PrimitiveAction> = BTreeMap::new();
        let mut human_acts = Vec::new();
        for (id, h) in &mut self.humans {
            let view = HumanView {
                world: &self.world,
                facts: &self.facts,
                mental: &self.mentals[id],
                inbox: &self.inbox,
                plan: plan.as_ref(),
            };
            let (a, acts) = h.decide(&view)?;
            human_actions.insert(id.clone(), a);
            human_acts.extend(acts);
        }
        for act in &human_acts {
            if let (Payload::AcceptPlan { .. }, Some(m)) =
                (&act.payload, self.mentals.get_mut(&act.from))
            {
                // A stale acceptance just leaves awareness unchanged.
                let _ = m.apply_comm(act, plan.as_ref());
            }
        }

        let mut robot_acts = Vec::new();
        let mut divergences = Vec::new();
        let mut gate_hold = false;
        let mut robot_action = PrimitiveAction::Wait;
        if let Some(exec) = self.exec.as_mut() {
            let ctx = ExecContext {
                robot: &self.robot,
                domain: &self.domain,
                agents: &self.agents,
                params: &self.params,
            };
            let v = exec.monitor(
                &ctx,
                tick,
                &self.facts,
                &self.last_events,
                &self.mentals,
                &human_acts,
            );
            robot_acts.extend(v.acts);
            transitions.extend(v.transitions);
            divergences = v.divergences;
            let d = exec.dispatch(
                &ctx,
                &self.world,
                self.history.back(),
                &self.facts,
                &self.last_events,
                &human_actions,
            );
            robot_action = d.action;
            robot_acts.extend(d.act);
            transitions.extend(d.transition);
            gate_hold = d.held;
        }

        let mut actions = human_actions.clone();
        actions.insert(self.robot.clone(), robot_action);
        let (next, events) = self.world.step(&actions);
        let before = std::mem::replace(&mut self.world, next);
        let observed = self.tracker.as_ref().map(|t| {
            let who = t.config.agent.clone();
            let at = before.position_of(&who);
            let beliefs = self
                .mentals
                .get(&who)
                .map(|m| m.beliefs.set())
                .unwrap_or_default();
            (who, at, beliefs)
        });
        self.history.push_back(before);
        while self.history.len() >= MOTION_WINDOW {
            self.history.pop_front();
        }
        let hist: Vec<GridWorld> = self.history.iter().cloned().collect();
        let facts = assess(&self.world, &hist);
        let (added, removed) = diff(&self.facts, &facts);
        self.facts = facts;

        let plan = self.exec.as_ref().map(|e| &e.plan);
        for m in self.mentals.values_mut() {
            m.perceive_update(&self.facts, &events, &self.landmarks, plan);
        }
        for act in &robot_acts {
            if let Some(m) = self.mentals.get_mut(&act.to) {
                m.apply_comm(act, plan)
                    .expect("robot acts reference the current plan");
            }
        }
        if let (Some(t), Some((who, Some(at), beliefs))) = (self.tracker.as_mut(), observed) {
            if let Some(a) = human_actions.get(&who) {
                t.observe(&self.world.map, &beliefs, at, a);
            }
        }

        let mut comm_acts = human_acts;
        comm_acts.extend(robot_acts.iter().cloned());
        self.inbox = robot_acts;
        self.last_events = events.clone();

        let record_goal = self.exec.as_ref().map(|e| e.goal.id.clone());
        let phase = self.exec.as_ref().map(|e| e.phase);
        let engagement = self.exec.as_ref().and_then(|e| e.engagement().cloned());
        if let Some(e) = &self.exec {
            match e.phase {
                Phase::Aborted => self.terminal = Some(Terminal::Aborted),
                Phase::Achieved => self.exec = None,
                _ => {}
            }
        }
        if self.terminal.is_none()
            && self.exec.is_none()
            && self.queue.is_empty()
            && self.watching.is_empty()
        {
            self.terminal = Some(Terminal::Achieved);
        }
        if self.terminal.is_none() && tick + 1 >= self.params.max_ticks {
            self.terminal = Some(Terminal::Timeout);
        }
        Ok(TraceRecord {
            tick,
            events,
            fact_delta: FactDelta {
                added: added.iter().map(ToString::to_string).collect(),
                removed: removed.iter().map(ToString::to_string).collect(),
            },
            comm_acts,
            belief_digests: self
                .mentals
                .iter()
                .map(|(k, m)| (k.clone(), m.digest()))
                .collect(),
            posterior: self.tracker.as_ref().map(|t| t.posterior.probs.clone()),
            goal: record_goal,
            phase,
            transitions,
            engagement,
            divergences,
            gate_hold,
            terminal: self.terminal,
        })
    }
}
