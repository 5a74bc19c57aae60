//! Depth-first HTN decomposition with branch-and-bound on social cost.
//!
//! Abstract tasks are decomposed as soon as they become ready (all network
//! predecessors finished). The search branches over methods and their
//! bindings, then over which ready primitive runs next, which agent performs
//! it and how its preconditions bind. Branching order is method order, agent
//! id, then sorted bindings, so ties resolve to the first plan found.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicBool, Ordering};

use super::domain::{ExecSpec, HtnDomain};
use super::pattern::{match_all, Bindings, Pattern, Task};
use super::plan::{CostBreakdown, PlanStep, SharedPlan};
use super::social::{LabeledConstraint, NegotiationConstraints, SocialPolicy};
use crate::facts::{Fact, Term};
use crate::mental::{Know, KnowledgeModel};
use crate::world::{AgentKind, EntityId};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PlanError {
    #[error("no plan for {goal}{}", culprit_suffix(.culprits))]
    Infeasible {
        goal: String,
        /// Constraints whose removal alone would make the goal feasible.
        culprits: Vec<LabeledConstraint>,
    },
    #[error("decomposition depth bound {0} exceeded")]
    DepthExceeded(usize),
    #[error("contradictory constraints {0} and {1}")]
    Contradiction(LabeledConstraint, LabeledConstraint),
    #[error("undeclared goal task `{0}`")]
    UnknownTask(String),
    #[error("planning cancelled")]
    Cancelled,
}

fn culprit_suffix(c: &[LabeledConstraint]) -> String {
    if c.is_empty() {
        String::new()
    } else {
        let names: Vec<String> = c.iter().map(ToString::to_string).collect();
        format!(" under {}", names.join(", "))
    }
}

/// Everything a planning call depends on.
#[derive(Clone, Copy)]
pub struct PlanRequest<'a> {
    pub domain: &'a HtnDomain,
    pub facts: &'a BTreeSet<Fact>,
    pub goal: &'a Task,
    /// Facts whose joint truth means the goal is already achieved.
    pub condition: &'a [Fact],
    pub knowledge: &'a KnowledgeModel,
    pub policy: &'a SocialPolicy,
    pub constraints: &'a NegotiationConstraints,
    pub agents: &'a [(EntityId, AgentKind)],
    pub cancel: Option<&'a AtomicBool>,
}

#[derive(Debug, Clone)]
struct NetTask {
    uid: usize,
    task: Task,
    preds: BTreeSet<usize>,
    /// Already-executed steps this task is method-ordered after.
    after_steps: BTreeSet<usize>,
    group: Option<Task>,
}

#[derive(Debug, Clone)]
struct Node {
    network: Vec<NetTask>,
    state: BTreeSet<Fact>,
    steps: Vec<PlanStep>,
    method_edges: BTreeSet<(usize, usize)>,
    next_uid: usize,
    depth: usize,
    base: f64,
    robot_effort: f64,
    human_effort: f64,
    unknown: usize,
}

struct Search<'a> {
    req: PlanRequest<'a>,
    agents: Vec<(EntityId, AgentKind)>,
    min_costs: BTreeMap<String, f64>,
    max_prims: BTreeMap<String, Option<usize>>,
    best: Option<(f64, Node)>,
    depth_hit: bool,
    cancelled: bool,
    expanded: u64,
}

/// Plans `req.goal`. The returned plan's id is `plan_id`.
pub fn plan(req: PlanRequest<'_>, plan_id: &str) -> Result<SharedPlan, PlanError> {
    if let Some((a, b)) = req.constraints.contradiction() {
        return Err(PlanError::Contradiction(a, b));
    }
    match search(req, plan_id) {
        Err(PlanError::Infeasible { goal, .. }) if !req.constraints.is_empty() => {
            let culprits = req
                .constraints
                .labeled()
                .into_iter()
                .filter(|c| {
                    let relaxed = req.constraints.without(c);
                    search(
                        PlanRequest {
                            constraints: &relaxed,
                            ..req
                        },
                        plan_id,
                    )
                    .is_ok()
                })
                .collect();
            Err(PlanError::Infeasible { goal, culprits })
        }
        other => other,
    }
}

fn search(req: PlanRequest<'_>, plan_id: &str) -> Result<SharedPlan, PlanError> {
    let goal = req.goal;
    if req.domain.operator(&goal.name).is_none() && req.domain.task(&goal.name).is_none() {
        return Err(PlanError::UnknownTask(goal.name.clone()));
    }
    if !req.condition.is_empty() && req.condition.iter().all(|f| req.facts.contains(f)) {
        return Ok(SharedPlan::empty(plan_id, goal.clone()));
    }
    let mut agents = req.agents.to_vec();
    agents.sort();
    let mut state = req.facts.clone();
    state.extend(req.domain.static_facts.iter().cloned());
    let root = Node {
        network: vec![NetTask {
            uid: 0,
            task: goal.clone(),
            preds: BTreeSet::new(),
            after_steps: BTreeSet::new(),
            group: req.domain.operator(&goal.name).map(|_| goal.clone()),
        }],
        state,
        steps: Vec::new(),
        method_edges: BTreeSet::new(),
        next_uid: 1,
        depth: 0,
        base: 0.0,
        robot_effort: 0.0,
        human_effort: 0.0,
        unknown: 0,
    };
    let mut s = Search {
        req,
        agents,
        min_costs: req.domain.min_costs(),
        max_prims: req.domain.max_primitives(),
        best: None,
        depth_hit: false,
        cancelled: false,
        expanded: 0,
    };
    s.dfs(root);
    if s.cancelled {
        return Err(PlanError::Cancelled);
    }
    match s.best {
        Some((total, node)) => {
            let cost = CostBreakdown {
                base: node.base,
                robot_effort: node.robot_effort,
                human_effort: node.human_effort,
                unknown_count: node.unknown,
                total,
            };
            Ok(SharedPlan::deorder(
                plan_id,
                goal.clone(),
                node.steps,
                &node.method_edges,
                cost,
            ))
        }
        None if s.depth_hit => Err(PlanError::DepthExceeded(req.domain.depth_bound)),
        None => Err(PlanError::Infeasible {
            goal: goal.to_string(),
            culprits: Vec::new(),
        }),
    }
}

impl Search<'_> {
    fn total(&self, n: &Node) -> f64 {
        self.req
            .policy
            .cost(n.base, n.robot_effort, n.human_effort, n.unknown)
    }

    fn lower_bound(&self, n: &Node) -> f64 {
        let remaining: f64 = n
            .network
            .iter()
            .map(|t| self.min_costs.get(&t.task.name).copied().unwrap_or(0.0))
            .sum();
        let p = self.req.policy;
        let social = match p.mode.sign() {
            s if s > 0.0 => p.mu * n.unknown as f64,
            s if s < 0.0 => {
                let more: Option<usize> = n
                    .network
                    .iter()
                    .map(|t| self.max_prims.get(&t.task.name).copied().flatten())
                    .sum();
                match more {
                    Some(m) => -p.mu * (n.unknown + m) as f64,
                    None => f64::NEG_INFINITY,
                }
            }
            _ => 0.0,
        };
        n.base + remaining + social
    }

    fn must_do_satisfied(&self, steps: &[PlanStep]) -> bool {
        self.req.constraints.must_do.iter().all(|c| {
            let matching: Vec<&PlanStep> = steps
                .iter()
                .filter(|s| c.task_matches(&s.task.to_string()))
                .collect();
            !matching.is_empty()
                && matching
                    .iter()
                    .all(|s| c.agent_matches(&s.agent, s.agent_kind))
        })
    }

    fn dfs(&mut self, node: Node) {
        if self.cancelled || self.req.cancel.is_some_and(|c| c.load(Ordering::Relaxed)) {
            self.cancelled = true;
            return;
        }
        self.expanded += 1;
        if let Some((best, _)) = &self.best {
            if self.lower_bound(&node) >= best - 1e-9 {
                return;
            }
        }
        if node.network.is_empty() {
            if !self.must_do_satisfied(&node.steps) {
                return;
            }
            let total = self.total(&node);
            if self.best.as_ref().map_or(true, |(b, _)| total < b - 1e-9) {
                self.best = Some((total, node));
            }
            return;
        }
        let ready: Vec<usize> = (0..node.network.len())
            .filter(|&i| node.network[i].preds.is_empty())
            .collect();
        let abstract_ready = ready
            .iter()
            .copied()
            .find(|&i| self.req.domain.task(&node.network[i].task.name).is_some());
        match abstract_ready {
            Some(i) => self.decompose(&node, i),
            None => {
                for i in ready {
                    self.execute(&node, i);
                    if self.cancelled {
                        return;
                    }
                }
            }
        }
    }

    fn decompose(&mut self, node: &Node, i: usize) {
        if node.depth >= self.req.domain.depth_bound {
            self.depth_hit = true;
            return;
        }
        let domain = self.req.domain;
        let target = node.network[i].clone();
        let is_goal = node.steps.is_empty() && target.uid == 0;
        for m in domain.methods_for(&target.task.name) {
            let Some(head) = m.bind_head(&target.task.args) else {
                continue;
            };
            for b in match_all(&m.pre, &node.state, &head) {
                let Some(subs) = m
                    .subtasks
                    .iter()
                    .map(|s| s.task.ground(&b))
                    .collect::<Option<Vec<_>>>()
                else {
                    continue;
                };
                let mut next = node.clone();
                next.depth += 1;
                let uids: Vec<usize> = (0..subs.len()).map(|k| next.next_uid + k).collect();
                next.next_uid += subs.len();
                let children: Vec<NetTask> = subs
                    .into_iter()
                    .enumerate()
                    .map(|(k, task)| {
                        let sid = &m.subtasks[k].id;
                        let preds = m
                            .order
                            .iter()
                            .filter(|(_, after)| after == sid)
                            .filter_map(|(before, _)| {
                                m.subtasks.iter().position(|s| &s.id == before)
                            })
                            .map(|p| uids[p])
                            .collect();
                        NetTask {
                            uid: uids[k],
                            group: if is_goal {
                                Some(task.clone())
                            } else {
                                target.group.clone()
                            },
                            task,
                            preds,
                            after_steps: target.after_steps.clone(),
                        }
                    })
                    .collect();
                for t in &mut next.network {
                    if t.preds.remove(&target.uid) {
                        t.preds.extend(uids.iter().copied());
                    }
                }
                next.network.splice(i..=i, children);
                self.dfs(next);
                if self.cancelled {
                    return;
                }
            }
        }
    }

    fn execute(&mut self, node: &Node, i: usize) {
        let domain = self.req.domain;
        let target = &node.network[i];
        let Some(op) = domain.operator(&target.task.name) else {
            return;
        };
        if op.params.len() != target.task.args.len() {
            return;
        }
        let task_str = target.task.to_string();
        let mut params = Bindings::new();
        for (p, a) in op.params.iter().zip(&target.task.args) {
            params.insert(p.trim_start_matches('?').to_string(), Term::parse(a));
        }
        for (agent, kind) in self.agents.clone() {
            let Some(cost) = op.cost_for(kind) else {
                continue;
            };
            if !self.req.constraints.permits(&agent, kind, &task_str) {
                continue;
            }
            let mut base = params.clone();
            base.insert("agent".into(), Term::name(agent.clone()));
            for b in match_all(&op.pre, &node.state, &base) {
                let ground = |ps: &[Pattern]| {
                    ps.iter()
                        .map(|p| p.ground(&b))
                        .collect::<Option<Vec<Fact>>>()
                };
                let pre_pos: Vec<_> = op
                    .pre
                    .iter()
                    .filter(|l| !l.negated)
                    .map(|l| l.pattern.clone())
                    .collect();
                let (Some(pre), Some(add), Some(del), Some(exec)) = (
                    ground(&pre_pos),
                    ground(&op.add),
                    ground(&op.del),
                    op.exec.ground(&b),
                ) else {
                    continue;
                };
                // A handover also involves whoever receives the object.
                if let ExecSpec::Handover { to, .. } = &exec {
                    let receiver = self.agents.iter().find(|(a, _)| a == to);
                    if receiver
                        .is_some_and(|(a, k)| !self.req.constraints.permits(a, *k, &task_str))
                    {
                        continue;
                    }
                }
                let neg = op
                    .pre
                    .iter()
                    .filter(|l| l.negated)
                    .map(|l| l.pattern.resolve(&b))
                    .collect();
                let unknown = kind == AgentKind::Human
                    && self.req.knowledge.knows(&agent, &op.name) == Know::Unknown;
                let mut next = node.clone();
                let k = next.steps.len();
                for s in &target.after_steps {
                    next.method_edges.insert((*s, k));
                }
                for f in &del {
                    next.state.remove(f);
                }
                next.state.extend(add.iter().cloned());
                let group = target.group.clone().unwrap_or_else(|| target.task.clone());
                next.steps.push(PlanStep {
                    id: format!("s{}", k + 1),
                    task: target.task.clone(),
                    agent: agent.clone(),
                    agent_kind: kind,
                    pre,
                    neg,
                    add,
                    del,
                    exec,
                    group,
                    cost,
                    unknown,
                });
                next.base += cost;
                match kind {
                    AgentKind::Robot => next.robot_effort += cost,
                    AgentKind::Human => next.human_effort += cost,
                }
                if unknown {
                    next.unknown += 1;
                }
                let uid = target.uid;
                next.network.remove(i);
                for t in &mut next.network {
                    if t.preds.remove(&uid) {
                        t.after_steps.insert(k);
                    }
                }
                self.dfs(next);
                if self.cancelled {
                    return;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::htn::social::{Constraint, PolicyMode};

    fn domain() -> HtnDomain {
        serde_json::from_str(
            r#"{
          "operators": [
            {"name": "fetch", "params": ["?o"], "agents": ["robot", "human"],
             "cost": {"robot": 1.0, "human": 1.5},
             "pre": ["?o isOn SHELF"],
             "add": ["?o isOn TABLE1"], "del": ["?o isOn SHELF"],
             "exec": {"kind": "pickUp", "object": "?o"}}
          ],
          "tasks": [{"name": "setTable", "params": ["?a", "?b"]}],
          "methods": [
            {"name": "both", "task": "setTable(?a,?b)",
             "subtasks": [{"id": "f1", "task": "fetch(?a)"}, {"id": "f2", "task": "fetch(?b)"}]}
          ]
        }"#,
        )
        .unwrap()
    }

    fn facts() -> BTreeSet<Fact> {
        ["PLATE isOn SHELF", "CUP isOn SHELF"]
            .iter()
            .map(|s| s.parse().unwrap())
            .collect()
    }

    fn agents() -> Vec<(EntityId, AgentKind)> {
        vec![
            ("robot".into(), AgentKind::Robot),
            ("BOB".into(), AgentKind::Human),
        ]
    }

    fn run(
        mode: PolicyMode,
        constraints: &NegotiationConstraints,
    ) -> Result<SharedPlan, PlanError> {
        let d = domain();
        let f = facts();
        let goal: Task = "setTable(PLATE,CUP)".parse().unwrap();
        let k = KnowledgeModel::new().with_unknown("BOB", ["fetch"]);
        let policy = SocialPolicy::with_mode(mode);
        let agents = agents();
        plan(
            PlanRequest {
                domain: &d,
                facts: &f,
                goal: &goal,
                condition: &[],
                knowledge: &k,
                policy: &policy,
                constraints,
                agents: &agents,
                cancel: None,
            },
            "plan-1",
        )
    }

    #[test]
    fn efficient_gives_both_to_robot() {
        let p = run(PolicyMode::Efficient, &NegotiationConstraints::default()).unwrap();
        assert!(p.steps.iter().all(|s| s.agent == "robot"));
        assert!((p.cost.total - 3.0).abs() < 1e-9);
        assert!(p.validate(&facts()).is_ok());
    }

    #[test]
    fn teach_splits_work() {
        let p = run(PolicyMode::Teach, &NegotiationConstraints::default()).unwrap();
        assert_eq!(p.cost.unknown_count, 1);
        assert!((p.cost.total - 1.75).abs() < 1e-9);
    }

    #[test]
    fn contradiction_and_culprits() {
        let mut c = NegotiationConstraints::default();
        c.must_not_do.insert(Constraint::new("*", "fetch(CUP)"));
        match run(PolicyMode::Efficient, &c) {
            Err(PlanError::Infeasible { culprits, .. }) => {
                assert_eq!(
                    culprits,
                    vec![LabeledConstraint::MustNotDo(Constraint::new(
                        "*",
                        "fetch(CUP)"
                    ))]
                )
            }
            other => panic!("{other:?}"),
        }
        c.must_do.insert(Constraint::new("*", "fetch(CUP)"));
        assert!(matches!(
            run(PolicyMode::Efficient, &c),
            Err(PlanError::Contradiction(..))
        ));
    }

    #[test]
    fn recursion_hits_depth_bound() {
        let mut d = domain();
        d.methods[0].subtasks = vec![super::super::domain::Subtask {
            id: "again".into(),
            task: "setTable(?a,?b)".parse().unwrap(),
        }];
        let f = facts();
        let goal: Task = "setTable(PLATE,CUP)".parse().unwrap();
        let agents = agents();
        let r = plan(
            PlanRequest {
                domain: &d,
                facts: &f,
                goal: &goal,
                condition: &[],
                knowledge: &KnowledgeModel::new(),
                policy: &SocialPolicy::default(),
                constraints: &NegotiationConstraints::default(),
                agents: &agents,
                cancel: None,
            },
            "p",
        );
        assert_eq!(r.unwrap_err(), PlanError::DepthExceeded(50));
    }
}
