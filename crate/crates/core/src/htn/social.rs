//! Social cost policy and negotiation constraints.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::pattern::glob_match;
use crate::world::AgentKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PolicyMode {
    #[default]
    Efficient,
    Teach,
    Balanced,
}

impl PolicyMode {
    /// Sign applied to the unknown-task term.
    pub fn sign(self) -> f64 {
        match self {
            PolicyMode::Efficient => 1.0,
            PolicyMode::Teach => -1.0,
            PolicyMode::Balanced => 0.0,
        }
    }

    pub fn parse(s: &str) -> Option<PolicyMode> {
        match s.to_ascii_lowercase().as_str() {
            "efficient" => Some(PolicyMode::Efficient),
            "teach" => Some(PolicyMode::Teach),
            "balanced" => Some(PolicyMode::Balanced),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SocialPolicy {
    #[serde(default)]
    pub mode: PolicyMode,
    /// Effort-imbalance weight.
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Unknown-task weight.
    #[serde(default = "default_mu")]
    pub mu: f64,
}

fn default_lambda() -> f64 {
    0.5
}

fn default_mu() -> f64 {
    1.0
}

impl Default for SocialPolicy {
    fn default() -> Self {
        SocialPolicy {
            mode: PolicyMode::Efficient,
            lambda: default_lambda(),
            mu: default_mu(),
        }
    }
}

impl SocialPolicy {
    pub fn with_mode(mode: PolicyMode) -> Self {
        SocialPolicy {
            mode,
            ..SocialPolicy::default()
        }
    }

    /// Total social cost of a plan summary.
    pub fn cost(&self, base: f64, robot_effort: f64, human_effort: f64, unknown: usize) -> f64 {
        base + self.lambda * (robot_effort - human_effort).abs()
            + self.mode.sign() * self.mu * unknown as f64
    }
}

/// `(agent, task pattern)`. The agent is an id, a kind label (`human`,
/// `robot`) or `*`; the pattern is a `*`-glob over task instances such as
/// `fetch(MUG)`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Constraint {
    pub agent: String,
    pub task: String,
}

impl Constraint {
    pub fn new(agent: impl Into<String>, task: impl Into<String>) -> Self {
        Constraint {
            agent: agent.into(),
            task: task.into(),
        }
    }

    pub fn agent_matches(&self, id: &str, kind: AgentKind) -> bool {
        self.agent == "*" || self.agent == id || self.agent == kind.label()
    }

    pub fn task_matches(&self, task: &str) -> bool {
        glob_match(&self.task, task)
    }
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.agent, self.task)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum LabeledConstraint {
    MustDo(Constraint),
    MustNotDo(Constraint),
}

impl fmt::Display for LabeledConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LabeledConstraint::MustDo(c) => write!(f, "mustDo{c}"),
            LabeledConstraint::MustNotDo(c) => write!(f, "mustNotDo{c}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct NegotiationConstraints {
    #[serde(default)]
    pub must_do: BTreeSet<Constraint>,
    #[serde(default)]
    pub must_not_do: BTreeSet<Constraint>,
}

impl NegotiationConstraints {
    pub fn is_empty(&self) -> bool {
        self.must_do.is_empty() && self.must_not_do.is_empty()
    }

    pub fn merge(&mut self, other: &NegotiationConstraints) {
        self.must_do.extend(other.must_do.iter().cloned());
        self.must_not_do.extend(other.must_not_do.iter().cloned());
    }

    /// The first `(agent, pattern)` present in both lists.
    pub fn contradiction(&self) -> Option<(LabeledConstraint, LabeledConstraint)> {
        self.must_do
            .intersection(&self.must_not_do)
            .next()
            .map(|c| {
                (
                    LabeledConstraint::MustDo(c.clone()),
                    LabeledConstraint::MustNotDo(c.clone()),
                )
            })
    }

    pub fn labeled(&self) -> Vec<LabeledConstraint> {
        self.must_do
            .iter()
            .cloned()
            .map(LabeledConstraint::MustDo)
            .chain(
                self.must_not_do
                    .iter()
                    .cloned()
                    .map(LabeledConstraint::MustNotDo),
            )
            .collect()
    }

    pub fn without(&self, c: &LabeledConstraint) -> NegotiationConstraints {
        let mut out = self.clone();
        match c {
            LabeledConstraint::MustDo(x) => out.must_do.remove(x),
            LabeledConstraint::MustNotDo(x) => out.must_not_do.remove(x),
        };
        out
    }

    /// Whether assigning `task` to the agent is allowed by both lists.
    pub fn permits(&self, id: &str, kind: AgentKind, task: &str) -> bool {
        !self
            .must_not_do
            .iter()
            .any(|c| c.task_matches(task) && c.agent_matches(id, kind))
            && self
                .must_do
                .iter()
                .all(|c| !c.task_matches(task) || c.agent_matches(id, kind))
    }
}
