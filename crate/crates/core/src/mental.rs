//! Per-agent mental states: belief bases filtered by perception, task
//! know-how, plan awareness and step-status beliefs.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::comm::{CommAct, Payload};
use crate::facts::{Fact, FactBase, FactKey, Predicate, Term};
use crate::htn::pattern::Slot;
use crate::htn::{SharedPlan, StepId};
use crate::world::{EntityId, Event};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Know {
    Known,
    Unknown,
}

/// Task know-how per agent. Undeclared pairs default to known; once known a
/// task stays known.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct KnowledgeModel {
    entries: BTreeMap<String, BTreeMap<String, Know>>,
}

impl KnowledgeModel {
    pub fn new() -> Self {
        Self::default()
    }

    /// Declares tasks the agent does not know.
    pub fn with_unknown<'a>(
        mut self,
        agent: &str,
        tasks: impl IntoIterator<Item = &'a str>,
    ) -> Self {
        for t in tasks {
            self.entries
                .entry(agent.to_string())
                .or_default()
                .insert(t.to_string(), Know::Unknown);
        }
        self
    }

    pub fn knows(&self, agent: &str, task: &str) -> Know {
        self.entries
            .get(agent)
            .and_then(|m| m.get(task))
            .copied()
            .unwrap_or(Know::Known)
    }

    pub fn learn(&mut self, agent: &str, task: &str) {
        self.entries
            .entry(agent.to_string())
            .or_default()
            .insert(task.to_string(), Know::Known);
    }

    /// Entries for one agent.
    pub fn slice(&self, agent: &str) -> BTreeMap<String, Know> {
        self.entries.get(agent).cloned().unwrap_or_default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepBelief {
    Pending,
    Done,
    Failed,
}

impl StepBelief {
    pub fn name(self) -> &'static str {
        match self {
            StepBelief::Pending => "pending",
            StepBelief::Done => "done",
            StepBelief::Failed => "failed",
        }
    }
}

/// An agent's believed facts, each stamped with the tick it was last
/// confirmed. Functional keys are last-writer-wins.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BeliefBase {
    pub agent: EntityId,
    pub facts: BTreeMap<Fact, u64>,
}

impl BeliefBase {
    pub fn new(agent: impl Into<EntityId>) -> Self {
        BeliefBase {
            agent: agent.into(),
            facts: BTreeMap::new(),
        }
    }

    /// Inserts `f`, dropping any fact it contradicts: other values of a
    /// functional key, and placements an object cannot have at once (held
    /// versus lying somewhere, or held by two agents).
    pub fn insert(&mut self, f: Fact, tick: u64) {
        if f.predicate.is_functional() {
            self.facts.retain(|g, _| {
                !(g.subject == f.subject && g.predicate == f.predicate && g.object != f.object)
            });
        }
        match (&f.predicate, f.object.as_name()) {
            (Predicate::IsHolding, Some(obj)) => self.facts.retain(|g, _| {
                let placed =
                    g.subject == obj && matches!(g.predicate, Predicate::IsOn | Predicate::IsIn);
                let other_holder = g.predicate == Predicate::IsHolding
                    && g.object == f.object
                    && g.subject != f.subject;
                !(placed || other_holder)
            }),
            (Predicate::IsOn | Predicate::IsIn, _) => {
                let obj = f.subject.clone();
                self.facts.retain(|g, _| {
                    !(g.predicate == Predicate::IsHolding
                        && g.object.as_name() == Some(obj.as_str()))
                });
            }
            _ => {}
        }
        self.facts.insert(f, tick);
    }

    pub fn remove(&mut self, f: &Fact) {
        self.facts.remove(f);
    }

    pub fn contains(&self, f: &Fact) -> bool {
        self.facts.contains_key(f)
    }

    pub fn set(&self) -> BTreeSet<Fact> {
        self.facts.keys().cloned().collect()
    }

    pub fn value(&self, subject: &str, predicate: &Predicate) -> Option<&Term> {
        self.facts
            .keys()
            .find(|f| f.subject == subject && &f.predicate == predicate)
            .map(|f| &f.object)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AgentMentalState {
    pub agent: EntityId,
    pub beliefs: BeliefBase,
    pub knowledge: BTreeMap<String, Know>,
    pub goal_aware: bool,
    pub plan_aware: Option<String>,
    pub step_beliefs: BTreeMap<StepId, StepBelief>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CommError {
    #[error("act for {to} applied to {agent}")]
    WrongAddressee { agent: EntityId, to: EntityId },
    #[error("act references unknown plan `{0}`")]
    UnknownPlan(String),
    #[error("act references unknown step `{0}`")]
    UnknownStep(StepId),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Divergence {
    pub agent: EntityId,
    pub believed: Option<Fact>,
    pub actual: Option<Fact>,
    pub relevant: bool,
}

impl Divergence {
    pub fn key(&self) -> FactKey {
        self.believed
            .as_ref()
            .or(self.actual.as_ref())
            .map(Fact::key)
            .expect("divergence has a fact")
    }
}

/// Per-tick belief snapshot written to traces.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BeliefDigest {
    pub facts: Vec<String>,
    pub goal_aware: bool,
    pub plan_aware: Option<String>,
    pub step_beliefs: BTreeMap<StepId, StepBelief>,
}

impl AgentMentalState {
    /// Starts from the observable facts of the initial assessment.
    pub fn new(agent: impl Into<EntityId>, initial: &FactBase, knowledge: &KnowledgeModel) -> Self {
        let agent = agent.into();
        let mut beliefs = BeliefBase::new(agent.clone());
        for f in initial.iter().filter(|f| f.predicate.is_believable()) {
            beliefs.insert(f.clone(), initial.tick);
        }
        AgentMentalState {
            knowledge: knowledge.slice(&agent),
            agent,
            beliefs,
            goal_aware: false,
            plan_aware: None,
            step_beliefs: BTreeMap::new(),
        }
    }

    pub fn knows(&self, task: &str) -> Know {
        self.knowledge.get(task).copied().unwrap_or(Know::Known)
    }

    /// Entities this agent perceives now, per the robot's assessment.
    pub fn visible(&self, robot_facts: &FactBase) -> BTreeSet<EntityId> {
        robot_facts
            .iter()
            .filter(|f| f.subject == self.agent && f.predicate == Predicate::CanSee)
            .filter_map(|f| f.object.as_name().map(String::from))
            .chain(std::iter::once(self.agent.clone()))
            .collect()
    }

    /// Perceptual filtering. A fact is copied iff every entity it mentions is
    /// visible (landmarks always are) or its subject is the agent; believed
    /// facts about fully visible entities that no longer hold are dropped.
    /// Visible completion events update step beliefs.
    pub fn perceive_update(
        &mut self,
        robot_facts: &FactBase,
        events: &[Event],
        landmarks: &BTreeSet<String>,
        plan: Option<&SharedPlan>,
    ) {
        let visible = self.visible(robot_facts);
        let seen = |f: &Fact| {
            f.subject == self.agent
                || f.mentions()
                    .all(|e| landmarks.contains(e) || visible.contains(e))
        };
        let stale: Vec<Fact> = self
            .beliefs
            .facts
            .keys()
            .filter(|f| seen(f) && !robot_facts.contains(f))
            .cloned()
            .collect();
        for f in stale {
            self.beliefs.remove(&f);
        }
        for f in robot_facts
            .iter()
            .filter(|f| f.predicate.is_believable() && seen(f))
        {
            self.beliefs.insert(f.clone(), robot_facts.tick);
        }
        let Some(plan) = plan.filter(|p| self.plan_aware.as_deref() == Some(p.id.as_str())) else {
            return;
        };
        for ev in events.iter().filter(|e| visible.contains(&e.actor)) {
            for step in &plan.steps {
                if let Some(ok) = step.event_outcome(ev) {
                    let b = if ok {
                        StepBelief::Done
                    } else {
                        StepBelief::Failed
                    };
                    self.step_beliefs.insert(step.id.clone(), b);
                }
            }
        }
    }

    /// Applies an act addressed to this agent, or this agent's own plan
    /// acceptance.
    pub fn apply_comm(
        &mut self,
        act: &CommAct,
        plan: Option<&SharedPlan>,
    ) -> Result<(), CommError> {
        if let Payload::AcceptPlan { plan_id } = &act.payload {
            if act.from == self.agent {
                if plan.map(|p| &p.id) != Some(plan_id) {
                    return Err(CommError::UnknownPlan(plan_id.clone()));
                }
                self.plan_aware = Some(plan_id.clone());
                self.goal_aware = true;
                return Ok(());
            }
        }
        if act.to != self.agent {
            return Err(CommError::WrongAddressee {
                agent: self.agent.clone(),
                to: act.to.clone(),
            });
        }
        match &act.payload {
            Payload::Inform { fact } => self.absorb(fact, act.tick),
            Payload::Answer { facts } => {
                for f in facts {
                    self.absorb(f, act.tick);
                }
            }
            Payload::Explain { task } => {
                self.knowledge.insert(task.clone(), Know::Known);
            }
            Payload::ProposePlan { plan_id, summaries } => {
                let plan = plan
                    .filter(|p| &p.id == plan_id)
                    .ok_or_else(|| CommError::UnknownPlan(plan_id.clone()))?;
                for id in summaries.iter().flat_map(|s| &s.steps) {
                    if plan.step(id).is_none() {
                        return Err(CommError::UnknownStep(id.clone()));
                    }
                }
                self.goal_aware = true;
            }
            Payload::RequestAction { step_id, .. } => {
                let plan = plan
                    .filter(|p| p.step(step_id).is_some())
                    .ok_or_else(|| CommError::UnknownStep(step_id.clone()))?;
                // A request is only made once everything ordered before the
                // step is done.
                let before = plan.before();
                let j = plan
                    .steps
                    .iter()
                    .position(|s| &s.id == step_id)
                    .expect("step checked above");
                for (i, s) in plan.steps.iter().enumerate() {
                    if before[i][j] {
                        self.step_beliefs.insert(s.id.clone(), StepBelief::Done);
                    }
                }
                self.step_beliefs
                    .insert(step_id.clone(), StepBelief::Pending);
            }
            Payload::AskFact { .. }
            | Payload::AcceptPlan { .. }
            | Payload::RejectPlan { .. }
            | Payload::Signal { .. } => {}
        }
        Ok(())
    }

    fn absorb(&mut self, f: &Fact, tick: u64) {
        match f.predicate {
            Predicate::HasStatus => {
                let status = match f.object.as_name() {
                    Some("done") => StepBelief::Done,
                    Some("failed") => StepBelief::Failed,
                    _ => StepBelief::Pending,
                };
                self.step_beliefs.insert(f.subject.clone(), status);
            }
            Predicate::IsAwareOf => {
                self.plan_aware = f.object.as_name().map(String::from);
            }
            _ => self.beliefs.insert(f.clone(), tick),
        }
    }

    /// Disagreements between this agent's beliefs and the robot's facts over
    /// observable keys; for a plan the agent works on, also stale plan
    /// awareness and finished predecessors of steps the agent believes
    /// pending. `status` is the executive's view of each step.
    pub fn divergences(
        &self,
        robot_facts: &FactBase,
        plan: Option<&SharedPlan>,
        status: &BTreeMap<StepId, StepBelief>,
    ) -> Vec<Divergence> {
        let mut relevant_keys: BTreeSet<FactKey> = BTreeSet::new();
        let mine: Vec<&crate::htn::PlanStep> = plan
            .map(|p| {
                p.steps
                    .iter()
                    .filter(|s| {
                        s.agent == self.agent && status.get(&s.id) != Some(&StepBelief::Done)
                    })
                    .collect()
            })
            .unwrap_or_default();
        for s in &mine {
            relevant_keys.extend(s.pre.iter().map(Fact::key));
            for n in &s.neg {
                if let Slot::Const(Term::Name(subject)) = &n.subject {
                    relevant_keys.insert(FactKey {
                        subject: subject.clone(),
                        predicate: n.predicate.name().to_string(),
                    });
                }
            }
        }

        let believed: BTreeMap<FactKey, Vec<&Fact>> = group(
            self.beliefs
                .facts
                .keys()
                .filter(|f| f.predicate.is_observable()),
        );
        let actual: BTreeMap<FactKey, Vec<&Fact>> =
            group(robot_facts.iter().filter(|f| f.predicate.is_observable()));
        let keys: BTreeSet<&FactKey> = believed.keys().chain(actual.keys()).collect();
        let mut out = Vec::new();
        for k in keys {
            let b = believed.get(k).and_then(|v| v.first()).copied();
            let a = actual.get(k).and_then(|v| v.first()).copied();
            if b != a {
                out.push(Divergence {
                    agent: self.agent.clone(),
                    believed: b.cloned(),
                    actual: a.cloned(),
                    relevant: relevant_keys.contains(k),
                });
            }
        }

        let Some(p) = plan.filter(|_| !mine.is_empty()) else {
            return out;
        };
        match &self.plan_aware {
            Some(old) if *old != p.id => {
                let fact = |id: &str| Fact::rel(self.agent.clone(), Predicate::IsAwareOf, id);
                out.push(Divergence {
                    agent: self.agent.clone(),
                    believed: Some(fact(old)),
                    actual: Some(fact(&p.id)),
                    relevant: true,
                });
            }
            Some(_) => {
                let before = &p.before();
                let idx: BTreeMap<&str, usize> = p
                    .steps
                    .iter()
                    .enumerate()
                    .map(|(i, s)| (s.id.as_str(), i))
                    .collect();
                let preds: BTreeSet<usize> = mine
                    .iter()
                    .filter(|s| self.step_beliefs.get(&s.id) == Some(&StepBelief::Pending))
                    .flat_map(|s| {
                        let j = idx[s.id.as_str()];
                        (0..p.steps.len()).filter(move |&i| before[i][j])
                    })
                    .collect();
                for i in preds {
                    let id = &p.steps[i].id;
                    let actual = status.get(id).copied().unwrap_or(StepBelief::Pending);
                    let believed = self.step_beliefs.get(id).copied();
                    if actual == StepBelief::Pending || believed == Some(actual) {
                        continue;
                    }
                    let fact =
                        |b: StepBelief| Fact::rel(id.clone(), Predicate::HasStatus, b.name());
                    out.push(Divergence {
                        agent: self.agent.clone(),
                        believed: believed.map(fact),
                        actual: Some(fact(actual)),
                        relevant: true,
                    });
                }
            }
            None => {}
        }
        out
    }

    pub fn digest(&self) -> BeliefDigest {
        BeliefDigest {
            facts: self.beliefs.facts.keys().map(ToString::to_string).collect(),
            goal_aware: self.goal_aware,
            plan_aware: self.plan_aware.clone(),
            step_beliefs: self.step_beliefs.clone(),
        }
    }
}

fn group<'a>(facts: impl Iterator<Item = &'a Fact>) -> BTreeMap<FactKey, Vec<&'a Fact>> {
    let mut m: BTreeMap<FactKey, Vec<&Fact>> = BTreeMap::new();
    for f in facts {
        m.entry(f.key()).or_default().push(f);
    }
    m
}

/// Combined know-how of several agents, as the planner consumes it.
pub fn knowledge_of<'a>(states: impl IntoIterator<Item = &'a AgentMentalState>) -> KnowledgeModel {
    let mut k = KnowledgeModel::new();
    for s in states {
        let unknown = s
            .knowledge
            .iter()
            .filter(|(_, v)| **v == Know::Unknown)
            .map(|(t, _)| t.as_str());
        k = k.with_unknown(&s.agent, unknown);
    }
    k
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::comm::TaskSummary;
    use crate::htn::plan::tests::{plan, step};
    use crate::world::{Outcome, PrimitiveAction};

    fn base(tick: u64, xs: &[&str]) -> FactBase {
        FactBase::from_facts(tick, xs.iter().map(|s| s.parse().unwrap()))
    }

    fn f(s: &str) -> Fact {
        s.parse().unwrap()
    }

    fn landmarks() -> BTreeSet<String> {
        ["COUNTER", "TABLE", "KITCHEN"]
            .iter()
            .map(|s| s.to_string())
            .collect()
    }

    fn bob() -> AgentMentalState {
        let init = base(
            0,
            &["MUG isOn COUNTER", "BOB isIn KITCHEN", "BOB canSee MUG"],
        );
        AgentMentalState::new(
            "BOB",
            &init,
            &KnowledgeModel::new().with_unknown("BOB", ["fill"]),
        )
    }

    fn act(payload: Payload) -> CommAct {
        CommAct::new("robot", "BOB", 3, payload)
    }

    #[test]
    fn initial_beliefs_keep_believable_facts() {
        let m = bob();
        assert!(m.beliefs.contains(&f("MUG isOn COUNTER")));
        assert!(!m.beliefs.contains(&f("BOB canSee MUG")));
        assert_eq!(m.knows("fill"), Know::Unknown);
        assert_eq!(m.knows("wash"), Know::Known);
    }

    #[test]
    fn unseen_changes_are_missed() {
        let mut m = bob();
        // BOB looks away; the mug moves.
        let now = base(1, &["MUG isOn TABLE", "BOB isIn KITCHEN"]);
        m.perceive_update(&now, &[], &landmarks(), None);
        assert!(m.beliefs.contains(&f("MUG isOn COUNTER")));
        assert!(!m.beliefs.contains(&f("MUG isOn TABLE")));
        let d = m.divergences(&now, None, &BTreeMap::new());
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].key().subject, "MUG");
        assert!(!d[0].relevant);
    }

    #[test]
    fn seen_changes_replace_old_beliefs() {
        let mut m = bob();
        let now = base(1, &["MUG isOn TABLE", "BOB isIn KITCHEN", "BOB canSee MUG"]);
        m.perceive_update(&now, &[], &landmarks(), None);
        assert!(m.beliefs.contains(&f("MUG isOn TABLE")));
        assert!(!m.beliefs.contains(&f("MUG isOn COUNTER")));
        assert!(m.divergences(&now, None, &BTreeMap::new()).is_empty());
    }

    #[test]
    fn inform_replaces_contradicting_placements() {
        let mut m = bob();
        m.apply_comm(
            &act(Payload::Inform {
                fact: f("robot isHolding MUG"),
            }),
            None,
        )
        .unwrap();
        assert!(m.beliefs.contains(&f("robot isHolding MUG")));
        assert!(!m.beliefs.contains(&f("MUG isOn COUNTER")));
        m.apply_comm(
            &act(Payload::Inform {
                fact: f("MUG isOn TABLE"),
            }),
            None,
        )
        .unwrap();
        assert!(!m.beliefs.contains(&f("robot isHolding MUG")));
        assert_eq!(
            m.beliefs.value("MUG", &Predicate::IsOn),
            Some(&Term::name("TABLE"))
        );
    }

    #[test]
    fn explain_teaches_and_wrong_addressee_is_refused() {
        let mut m = bob();
        m.apply_comm(
            &act(Payload::Explain {
                task: "fill".into(),
            }),
            None,
        )
        .unwrap();
        assert_eq!(m.knows("fill"), Know::Known);
        let stray = CommAct::new("robot", "ALICE", 3, Payload::Explain { task: "x".into() });
        assert!(matches!(
            m.apply_comm(&stray, None),
            Err(CommError::WrongAddressee { .. })
        ));
    }

    #[test]
    fn acceptance_and_requests_track_plan_state() {
        let p = plan(
            vec![
                step("s1", "robot", &[], &["A isOn T"], &[]),
                step("s2", "robot", &["A isOn T"], &["B isOn T"], &[]),
                step("s3", "BOB", &["B isOn T"], &[], &[]),
            ],
            &[("s1", "s2"), ("s2", "s3")],
        );
        let mut m = bob();
        let propose = act(Payload::ProposePlan {
            plan_id: "p".into(),
            summaries: vec![TaskSummary {
                task: "g".into(),
                agents: vec!["robot".into(), "BOB".into()],
                steps: vec!["s1".into(), "s9".into()],
            }],
        });
        assert_eq!(
            m.apply_comm(&propose, Some(&p)),
            Err(CommError::UnknownStep("s9".into()))
        );
        let accept = CommAct::new(
            "BOB",
            "robot",
            1,
            Payload::AcceptPlan {
                plan_id: "p".into(),
            },
        );
        m.apply_comm(&accept, Some(&p)).unwrap();
        assert_eq!(m.plan_aware.as_deref(), Some("p"));
        assert!(m.goal_aware);

        let request = act(Payload::RequestAction {
            step_id: "s3".into(),
            task: "op(s3)".into(),
        });
        m.apply_comm(&request, Some(&p)).unwrap();
        assert_eq!(m.step_beliefs["s1"], StepBelief::Done);
        assert_eq!(m.step_beliefs["s2"], StepBelief::Done);
        assert_eq!(m.step_beliefs["s3"], StepBelief::Pending);
    }

    #[test]
    fn visible_completions_update_step_beliefs() {
        let p = plan(vec![step("s1", "robot", &[], &[], &[])], &[]);
        let mut m = bob();
        m.plan_aware = Some("p".into());
        let ev = Event {
            tick: 1,
            actor: "robot".into(),
            action: PrimitiveAction::PickUp { object: "X".into() },
            outcome: Outcome::Succeeded,
        };
        let blind = base(1, &["BOB isIn KITCHEN"]);
        m.perceive_update(&blind, std::slice::from_ref(&ev), &landmarks(), Some(&p));
        assert!(m.step_beliefs.is_empty());
        let seeing = base(1, &["BOB isIn KITCHEN", "BOB canSee robot"]);
        m.perceive_update(&seeing, &[ev], &landmarks(), Some(&p));
        assert_eq!(m.step_beliefs["s1"], StepBelief::Done);
    }

    #[test]
    fn relevance_follows_own_open_steps() {
        let p = plan(vec![step("s1", "BOB", &["MUG isOn TABLE"], &[], &[])], &[]);
        let m = bob();
        let now = base(1, &["MUG isOn TABLE", "BOB isIn KITCHEN"]);
        let d = m.divergences(&now, Some(&p), &BTreeMap::new());
        assert!(d.iter().any(|d| d.key().subject == "MUG" && d.relevant));
        let done = BTreeMap::from([("s1".to_string(), StepBelief::Done)]);
        let d = m.divergences(&now, Some(&p), &done);
        assert!(d.iter().all(|d| !d.relevant));
    }

    #[test]
    fn stale_plan_awareness_is_a_relevant_divergence() {
        let p = plan(vec![step("s1", "BOB", &[], &[], &[])], &[]);
        let mut m = bob();
        m.plan_aware = Some("old".into());
        let d = m.divergences(&base(1, &[]), Some(&p), &BTreeMap::new());
        let aware: Vec<_> = d
            .iter()
            .filter(|d| d.key().predicate == Predicate::IsAwareOf.name())
            .collect();
        assert_eq!(aware.len(), 1);
        assert!(aware[0].relevant);
        assert_eq!(aware[0].actual, Some(f("BOB isAwareOf p")));
    }

    #[test]
    fn knowledge_of_collects_unknown_tasks() {
        let k = knowledge_of([&bob()]);
        assert_eq!(k.knows("BOB", "fill"), Know::Unknown);
        assert_eq!(k.knows("BOB", "wash"), Know::Known);
    }
}
