//! Declarative HTN domains: abstract tasks, methods and agent-assignable
//! primitive operators.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::pattern::{Bindings, Literal, Pattern, Slot, TaskCall};
use crate::facts::{Fact, Term};
use crate::world::AgentKind;

pub const DEFAULT_DEPTH_BOUND: usize = 50;

/// How the executive turns an operator instance into kernel actions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum ExecTemplate {
    PickUp {
        object: String,
    },
    Place {
        object: String,
        surface: String,
    },
    StateOp {
        object: String,
        prop: String,
        value: String,
    },
    Handover {
        object: String,
        to: String,
    },
}

/// A ground execution recipe.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum ExecSpec {
    PickUp {
        object: String,
    },
    Place {
        object: String,
        surface: String,
    },
    StateOp {
        object: String,
        prop: String,
        value: Term,
    },
    Handover {
        object: String,
        to: String,
    },
}

impl ExecSpec {
    /// Object the step manipulates.
    pub fn object(&self) -> &str {
        match self {
            ExecSpec::PickUp { object }
            | ExecSpec::Place { object, .. }
            | ExecSpec::StateOp { object, .. }
            | ExecSpec::Handover { object, .. } => object,
        }
    }
}

fn ground_arg(s: &str, b: &Bindings) -> Option<Term> {
    match Slot::parse(s).resolve(b) {
        Slot::Const(t) => Some(t),
        _ => None,
    }
}

fn ground_name(s: &str, b: &Bindings) -> Option<String> {
    match ground_arg(s, b)? {
        Term::Name(n) => Some(n),
        Term::Bool(_) => None,
    }
}

impl ExecTemplate {
    pub fn ground(&self, b: &Bindings) -> Option<ExecSpec> {
        Some(match self {
            ExecTemplate::PickUp { object } => ExecSpec::PickUp {
                object: ground_name(object, b)?,
            },
            ExecTemplate::Place { object, surface } => ExecSpec::Place {
                object: ground_name(object, b)?,
                surface: ground_name(surface, b)?,
            },
            ExecTemplate::StateOp {
                object,
                prop,
                value,
            } => ExecSpec::StateOp {
                object: ground_name(object, b)?,
                prop: prop.clone(),
                value: ground_arg(value, b)?,
            },
            ExecTemplate::Handover { object, to } => ExecSpec::Handover {
                object: ground_name(object, b)?,
                to: ground_name(to, b)?,
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Operator {
    pub name: String,
    /// Parameter variables, `?`-prefixed. `?agent` is bound to the assignee.
    #[serde(default)]
    pub params: Vec<String>,
    pub agents: Vec<AgentKind>,
    pub cost: BTreeMap<AgentKind, f64>,
    #[serde(default)]
    pub pre: Vec<Literal>,
    #[serde(default)]
    pub add: Vec<Pattern>,
    #[serde(default)]
    pub del: Vec<Pattern>,
    pub exec: ExecTemplate,
}

impl Operator {
    pub fn cost_for(&self, kind: AgentKind) -> Option<f64> {
        if self.agents.contains(&kind) {
            self.cost.get(&kind).copied()
        } else {
            None
        }
    }

    pub fn min_cost(&self) -> f64 {
        self.agents
            .iter()
            .filter_map(|k| self.cost.get(k))
            .fold(f64::INFINITY, |a, &c| a.min(c))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AbstractTask {
    pub name: String,
    #[serde(default)]
    pub params: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Subtask {
    pub id: String,
    pub task: TaskCall,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Method {
    pub name: String,
    /// Head, e.g. `setTable(?a,?b)`; arguments bind positionally.
    pub task: TaskCall,
    #[serde(default)]
    pub pre: Vec<Literal>,
    #[serde(default)]
    pub subtasks: Vec<Subtask>,
    /// Ordering pairs over subtask ids (`[before, after]`).
    #[serde(default)]
    pub order: Vec<(String, String)>,
}

impl Method {
    /// Binds the head against a ground task; `None` if constants clash.
    pub fn bind_head(&self, args: &[String]) -> Option<Bindings> {
        if self.task.args.len() != args.len() {
            return None;
        }
        let mut b = Bindings::new();
        for (slot, arg) in self.task.args.iter().zip(args) {
            let t = Term::parse(arg);
            match slot {
                Slot::Any => {}
                Slot::Const(c) if *c == t => {}
                Slot::Const(_) => return None,
                Slot::Var(v) => match b.get(v) {
                    Some(prev) if *prev != t => return None,
                    Some(_) => {}
                    None => {
                        b.insert(v.clone(), t);
                    }
                },
            }
        }
        Some(b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "camelCase")]
pub struct HtnDomain {
    #[serde(default)]
    pub operators: Vec<Operator>,
    #[serde(default)]
    pub tasks: Vec<AbstractTask>,
    #[serde(default)]
    pub methods: Vec<Method>,
    /// Facts that hold throughout (e.g. `BOB canAccess SHELF`).
    #[serde(default)]
    pub static_facts: Vec<Fact>,
    #[serde(default = "default_depth")]
    pub depth_bound: usize,
}

fn default_depth() -> usize {
    DEFAULT_DEPTH_BOUND
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DomainError {
    #[error("abstract task `{0}` has no method")]
    NoMethod(String),
    #[error("`{0}` references undeclared task `{1}`")]
    UndeclaredTask(String, String),
    #[error("`{0}` calls `{1}` with {2} arguments, expected {3}")]
    Arity(String, String, usize, usize),
    #[error("duplicate declaration `{0}`")]
    Duplicate(String),
    #[error("method `{0}` orders unknown subtask `{1}`")]
    UnknownSubtask(String, String),
    #[error("operator `{0}` has no cost for agent kind `{1}`")]
    MissingCost(String, String),
}

impl HtnDomain {
    pub fn operator(&self, name: &str) -> Option<&Operator> {
        self.operators.iter().find(|o| o.name == name)
    }

    pub fn task(&self, name: &str) -> Option<&AbstractTask> {
        self.tasks.iter().find(|t| t.name == name)
    }

    pub fn methods_for<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a Method> + 'a {
        self.methods.iter().filter(move |m| m.task.name == name)
    }

    fn arity(&self, name: &str) -> Option<usize> {
        self.operator(name)
            .map(|o| o.params.len())
            .or_else(|| self.task(name).map(|t| t.params.len()))
    }

    /// Structural checks run at load time.
    pub fn check(&self) -> Result<(), DomainError> {
        let mut names = std::collections::BTreeSet::new();
        for n in self
            .operators
            .iter()
            .map(|o| &o.name)
            .chain(self.tasks.iter().map(|t| &t.name))
        {
            if !names.insert(n) {
                return Err(DomainError::Duplicate(n.clone()));
            }
        }
        for o in &self.operators {
            for k in &o.agents {
                if !o.cost.contains_key(k) {
                    return Err(DomainError::MissingCost(o.name.clone(), k.label().into()));
                }
            }
        }
        for t in &self.tasks {
            if self.methods_for(&t.name).next().is_none() {
                return Err(DomainError::NoMethod(t.name.clone()));
            }
        }
        for m in &self.methods {
            let head = self
                .task(&m.task.name)
                .ok_or_else(|| DomainError::UndeclaredTask(m.name.clone(), m.task.name.clone()))?;
            if head.params.len() != m.task.args.len() {
                return Err(DomainError::Arity(
                    m.name.clone(),
                    m.task.name.clone(),
                    m.task.args.len(),
                    head.params.len(),
                ));
            }
            for s in &m.subtasks {
                let n = self.arity(&s.task.name).ok_or_else(|| {
                    DomainError::UndeclaredTask(m.name.clone(), s.task.name.clone())
                })?;
                if n != s.task.args.len() {
                    return Err(DomainError::Arity(
                        m.name.clone(),
                        s.task.name.clone(),
                        s.task.args.len(),
                        n,
                    ));
                }
            }
            for (a, b) in &m.order {
                for id in [a, b] {
                    if !m.subtasks.iter().any(|s| &s.id == id) {
                        return Err(DomainError::UnknownSubtask(m.name.clone(), id.clone()));
                    }
                }
            }
        }
        Ok(())
    }

    /// Lower bound on the base cost of completing each task, computed as a
    /// least fixpoint from zero (ignores preconditions, so it never
    /// overestimates).
    pub fn min_costs(&self) -> BTreeMap<String, f64> {
        let mut mc: BTreeMap<String, f64> = BTreeMap::new();
        for o in &self.operators {
            mc.insert(o.name.clone(), o.min_cost());
        }
        for t in &self.tasks {
            mc.insert(t.name.clone(), 0.0);
        }
        for _ in 0..=self.tasks.len() + 1 {
            let mut changed = false;
            for t in &self.tasks {
                let best = self
                    .methods_for(&t.name)
                    .map(|m| {
                        m.subtasks
                            .iter()
                            .map(|s| mc.get(&s.task.name).copied().unwrap_or(0.0))
                            .sum::<f64>()
                    })
                    .fold(f64::INFINITY, f64::min);
                let best = if best.is_finite() { best } else { 0.0 };
                if best > mc[&t.name] + 1e-12 {
                    mc.insert(t.name.clone(), best);
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        mc
    }

    /// Upper bound on the number of primitive steps each task can expand
    /// into; `None` when recursion makes it unbounded.
    pub fn max_primitives(&self) -> BTreeMap<String, Option<usize>> {
        fn go(
            d: &HtnDomain,
            name: &str,
            stack: &mut Vec<String>,
            memo: &mut BTreeMap<String, Option<usize>>,
        ) -> Option<usize> {
            if let Some(v) = memo.get(name) {
                return *v;
            }
            if d.operator(name).is_some() {
                return Some(1);
            }
            if stack.iter().any(|s| s == name) {
                return None;
            }
            stack.push(name.to_string());
            let mut best = Some(0usize);
            for m in d.methods_for(name) {
                let mut sum = Some(0usize);
                for s in &m.subtasks {
                    sum = match (sum, go(d, &s.task.name, stack, memo)) {
                        (Some(a), Some(b)) => Some(a + b),
                        _ => None,
                    };
                }
                best = match (best, sum) {
                    (Some(a), Some(b)) => Some(a.max(b)),
                    _ => None,
                };
            }
            stack.pop();
            memo.insert(name.to_string(), best);
            best
        }
        let mut memo = BTreeMap::new();
        let names: Vec<String> = self
            .operators
            .iter()
            .map(|o| o.name.clone())
            .chain(self.tasks.iter().map(|t| t.name.clone()))
            .collect();
        names
            .into_iter()
            .map(|n| {
                let v = go(self, &n, &mut Vec::new(), &mut memo);
                (n, v)
            })
            .collect()
    }
}
