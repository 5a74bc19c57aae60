//! Shared plans: agent-assigned steps under a partial order, causal links,
//! and threat-based validation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::domain::ExecSpec;
use super::pattern::{Pattern, Task};
use crate::facts::{Fact, Term};
use crate::world::{AgentKind, EntityId, Event, PrimitiveAction};

pub type StepId = String;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PlanStep {
    pub id: StepId,
    /// Operator instance, e.g. `fetch(MUG)`.
    pub task: Task,
    pub agent: EntityId,
    pub agent_kind: AgentKind,
    pub pre: Vec<Fact>,
    /// Negative preconditions; unbound slots act as wildcards.
    #[serde(default)]
    pub neg: Vec<Pattern>,
    pub add: Vec<Fact>,
    pub del: Vec<Fact>,
    pub exec: ExecSpec,
    /// Task directly below the goal that this step belongs to.
    pub group: Task,
    pub cost: f64,
    /// Assigned to a human who did not know the task at planning time.
    #[serde(default)]
    pub unknown: bool,
}

impl PlanStep {
    fn adds(&self, f: &Fact) -> bool {
        self.add.contains(f)
    }

    /// Net deletion: deleted and not re-added.
    fn deletes(&self, f: &Fact) -> bool {
        self.del.contains(f) && !self.add.contains(f)
    }

    fn touches(&self, f: &Fact) -> bool {
        self.pre.contains(f)
            || self.add.contains(f)
            || self.del.contains(f)
            || self.neg.iter().any(|n| n.matches(f))
    }

    fn modifies(&self) -> impl Iterator<Item = &Fact> {
        self.add.iter().chain(self.del.iter())
    }

    /// Whether `ev` is this step's completing action, and if so whether it
    /// succeeded. A handover completes with the receiver's Take.
    pub fn event_outcome(&self, ev: &Event) -> Option<bool> {
        let hit = match (&self.exec, &ev.action) {
            (ExecSpec::PickUp { object }, PrimitiveAction::PickUp { object: o }) => {
                ev.actor == self.agent && o == object
            }
            (ExecSpec::Place { object, .. }, PrimitiveAction::Place { object: o, .. }) => {
                ev.actor == self.agent && o == object
            }
            (
                ExecSpec::StateOp {
                    object,
                    prop,
                    value,
                },
                PrimitiveAction::StateOp {
                    object: o,
                    prop: p,
                    value: v,
                },
            ) => ev.actor == self.agent && o == object && p == prop && Term::from(v) == *value,
            (ExecSpec::Handover { object, to }, PrimitiveAction::Take { object: o, from }) => {
                ev.actor == *to && *from == self.agent && o == object
            }
            _ => false,
        };
        hit.then(|| ev.outcome.succeeded())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CausalLink {
    /// `None` when the initial state supplies the fact.
    pub producer: Option<StepId>,
    pub consumer: StepId,
    pub fact: Fact,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CostBreakdown {
    pub base: f64,
    pub robot_effort: f64,
    pub human_effort: f64,
    pub unknown_count: usize,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SharedPlan {
    pub id: String,
    pub goal: Task,
    pub steps: Vec<PlanStep>,
    /// Transitively reduced ordering edges `(before, after)`.
    pub ordering: Vec<(StepId, StepId)>,
    pub causal_links: Vec<CausalLink>,
    pub cost: CostBreakdown,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Violation {
    pub step: StepId,
    pub precondition: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "violated({}, {})", self.step, self.precondition)
    }
}

/// Reachability matrix of a DAG given by edges over indices.
pub fn closure(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<bool>> {
    let mut m = vec![vec![false; n]; n];
    for &(a, b) in edges {
        m[a][b] = true;
    }
    for k in 0..n {
        for i in 0..n {
            if m[i][k] {
                for j in 0..n {
                    if m[k][j] {
                        m[i][j] = true;
                    }
                }
            }
        }
    }
    m
}

fn reduce(n: usize, before: &[Vec<bool>]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if before[i][j] && !(0..n).any(|k| before[i][k] && before[k][j]) {
                out.push((i, j));
            }
        }
    }
    out
}

impl SharedPlan {
    pub fn empty(id: impl Into<String>, goal: Task) -> Self {
        SharedPlan {
            id: id.into(),
            goal,
            steps: Vec::new(),
            ordering: Vec::new(),
            causal_links: Vec::new(),
            cost: CostBreakdown::default(),
        }
    }

    /// Builds a plan from a totally ordered step sequence, keeping only the
    /// orderings that matter: same agent, method order, and any pair of steps
    /// interacting on a fact one of them modifies.
    pub fn deorder(
        id: impl Into<String>,
        goal: Task,
        steps: Vec<PlanStep>,
        method_edges: &BTreeSet<(usize, usize)>,
        cost: CostBreakdown,
    ) -> Self {
        let n = steps.len();
        let mut edges = Vec::new();
        for j in 0..n {
            for i in 0..j {
                let (a, b) = (&steps[i], &steps[j]);
                let interferes =
                    a.modifies().any(|f| b.touches(f)) || b.modifies().any(|f| a.touches(f));
                if a.agent == b.agent || method_edges.contains(&(i, j)) || interferes {
                    edges.push((i, j));
                }
            }
        }
        let before = closure(n, &edges);
        let mut causal_links = Vec::new();
        for (j, s) in steps.iter().enumerate() {
            for p in &s.pre {
                let producer = (0..j).rev().find(|&i| before[i][j] && steps[i].adds(p));
                causal_links.push(CausalLink {
                    producer: producer.map(|i| steps[i].id.clone()),
                    consumer: s.id.clone(),
                    fact: p.clone(),
                });
            }
        }
        let ordering = reduce(n, &before)
            .into_iter()
            .map(|(a, b)| (steps[a].id.clone(), steps[b].id.clone()))
            .collect();
        SharedPlan {
            id: id.into(),
            goal,
            steps,
            ordering,
            causal_links,
            cost,
        }
    }

    pub fn step(&self, id: &str) -> Option<&PlanStep> {
        self.steps.iter().find(|s| s.id == id)
    }

    fn index(&self) -> BTreeMap<&str, usize> {
        self.steps
            .iter()
            .enumerate()
            .map(|(i, s)| (s.id.as_str(), i))
            .collect()
    }

    fn edge_indices(&self) -> Vec<(usize, usize)> {
        let idx = self.index();
        self.ordering
            .iter()
            .filter_map(|(a, b)| Some((*idx.get(a.as_str())?, *idx.get(b.as_str())?)))
            .collect()
    }

    /// `before[i][j]`: step i necessarily precedes step j.
    pub fn before(&self) -> Vec<Vec<bool>> {
        closure(self.steps.len(), &self.edge_indices())
    }

    pub fn is_acyclic(&self) -> bool {
        let b = self.before();
        (0..self.steps.len()).all(|i| !b[i][i])
    }

    /// Direct predecessors of a step.
    pub fn predecessors(&self, id: &str) -> Vec<&str> {
        self.ordering
            .iter()
            .filter(|(_, b)| b == id)
            .map(|(a, _)| a.as_str())
            .collect()
    }

    /// Topological order, ties broken by step position.
    pub fn topological(&self) -> Vec<usize> {
        let n = self.steps.len();
        let edges = self.edge_indices();
        let mut indeg = vec![0usize; n];
        for &(_, b) in &edges {
            indeg[b] += 1;
        }
        let mut ready: BTreeSet<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
        let mut out = Vec::with_capacity(n);
        while let Some(i) = ready.pop_first() {
            out.push(i);
            for &(a, b) in &edges {
                if a == i {
                    indeg[b] -= 1;
                    if indeg[b] == 0 {
                        ready.insert(b);
                    }
                }
            }
        }
        out
    }

    /// The sub-plan of steps not in `done`, keeping the induced order.
    pub fn remaining(&self, done: &BTreeSet<StepId>) -> SharedPlan {
        let before = self.before();
        let keep: Vec<usize> = (0..self.steps.len())
            .filter(|&i| !done.contains(&self.steps[i].id))
            .collect();
        let m = keep.len();
        let mut sub = vec![vec![false; m]; m];
        for (a, &i) in keep.iter().enumerate() {
            for (b, &j) in keep.iter().enumerate() {
                sub[a][b] = before[i][j];
            }
        }
        let ordering = reduce(m, &sub)
            .into_iter()
            .map(|(a, b)| {
                (
                    self.steps[keep[a]].id.clone(),
                    self.steps[keep[b]].id.clone(),
                )
            })
            .collect();
        let kept: BTreeSet<&str> = keep.iter().map(|&i| self.steps[i].id.as_str()).collect();
        SharedPlan {
            id: self.id.clone(),
            goal: self.goal.clone(),
            steps: keep.iter().map(|&i| self.steps[i].clone()).collect(),
            ordering,
            causal_links: self
                .causal_links
                .iter()
                .filter(|l| kept.contains(l.consumer.as_str()))
                .map(|l| CausalLink {
                    producer: l.producer.clone().filter(|p| kept.contains(p.as_str())),
                    ..l.clone()
                })
                .collect(),
            cost: self.cost,
        }
    }

    /// Whether every linearization of the partial order executes from
    /// `facts` with all preconditions met. Uses threat analysis: a condition
    /// holds necessarily at a step iff some necessarily-earlier establisher
    /// has each possibly-intervening clobberer either ordered before it or
    /// followed by a white knight that necessarily precedes the step.
    pub fn validate(&self, facts: &BTreeSet<Fact>) -> Result<(), Violation> {
        let before = self.before();
        let n = self.steps.len();
        for s in self.topological() {
            let step = &self.steps[s];
            for p in &step.pre {
                let ok = necessarily(
                    n,
                    s,
                    &before,
                    facts.contains(p),
                    |i| self.steps[i].adds(p),
                    |i| self.steps[i].deletes(p),
                );
                if !ok {
                    return Err(Violation {
                        step: step.id.clone(),
                        precondition: p.to_string(),
                    });
                }
            }
            for neg in &step.neg {
                let candidates: BTreeSet<&Fact> = facts
                    .iter()
                    .chain(self.steps.iter().flat_map(|t| t.add.iter()))
                    .filter(|f| neg.matches(f))
                    .collect();
                for q in candidates {
                    let ok = necessarily(
                        n,
                        s,
                        &before,
                        !facts.contains(q),
                        |i| self.steps[i].deletes(q),
                        |i| self.steps[i].adds(q),
                    );
                    if !ok {
                        return Err(Violation {
                            step: step.id.clone(),
                            precondition: format!("!{neg}"),
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

/// Truth criterion for one condition at step `s`. `makes` establishes the
/// condition, `breaks` clobbers it.
fn necessarily(
    n: usize,
    s: usize,
    before: &[Vec<bool>],
    initially: bool,
    makes: impl Fn(usize) -> bool,
    breaks: impl Fn(usize) -> bool,
) -> bool {
    let clobberers: Vec<usize> = (0..n)
        .filter(|&c| c != s && breaks(c) && !before[s][c])
        .collect();
    let knights: Vec<usize> = (0..n).filter(|&w| makes(w) && before[w][s]).collect();
    let covered = |c: usize, e: Option<usize>| {
        e.is_some_and(|e| before[c][e]) || knights.iter().any(|&w| before[c][w])
    };
    let establishers = initially
        .then_some(None)
        .into_iter()
        .chain(knights.iter().map(|&w| Some(w)));
    for e in establishers {
        if clobberers.iter().all(|&c| covered(c, e)) {
            return true;
        }
    }
    false
}
