//! Structured communicative acts, perspective-taking reference resolution
//! and generation, and signal-based disambiguation.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::facts::{Fact, Predicate, Term};
use crate::htn::pattern::Pattern;
use crate::htn::plan::StepId;
use crate::htn::social::NegotiationConstraints;
use crate::world::{EntityId, PrimitiveAction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SignalKind {
    LookAt,
    PointAt,
}

/// One task directly below the goal, with who does it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TaskSummary {
    pub task: String,
    pub agents: Vec<EntityId>,
    pub steps: Vec<StepId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "camelCase")]
pub enum Payload {
    Inform {
        fact: Fact,
    },
    AskFact {
        pattern: Pattern,
    },
    Answer {
        facts: Vec<Fact>,
    },
    #[serde(rename_all = "camelCase")]
    ProposePlan {
        plan_id: String,
        summaries: Vec<TaskSummary>,
    },
    #[serde(rename_all = "camelCase")]
    AcceptPlan {
        plan_id: String,
    },
    #[serde(rename_all = "camelCase")]
    RejectPlan {
        plan_id: String,
        constraints: NegotiationConstraints,
    },
    #[serde(rename_all = "camelCase")]
    RequestAction {
        step_id: StepId,
        task: String,
    },
    Explain {
        task: String,
    },
    Signal {
        signal: SignalKind,
        target: EntityId,
    },
}

impl Payload {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Payload::Inform { .. } => "inform",
            Payload::AskFact { .. } => "askFact",
            Payload::Answer { .. } => "answer",
            Payload::ProposePlan { .. } => "proposePlan",
            Payload::AcceptPlan { .. } => "acceptPlan",
            Payload::RejectPlan { .. } => "rejectPlan",
            Payload::RequestAction { .. } => "requestAction",
            Payload::Explain { .. } => "explain",
            Payload::Signal { .. } => "signal",
        }
    }
}

/// Wire form: `{"kind": ..., "from": ..., "to": ..., "payload": ..., "tick": ...}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommAct {
    pub from: EntityId,
    pub to: EntityId,
    pub tick: u64,
    #[serde(flatten)]
    pub payload: Payload,
}

impl CommAct {
    pub fn new(
        from: impl Into<EntityId>,
        to: impl Into<EntityId>,
        tick: u64,
        payload: Payload,
    ) -> Self {
        CommAct {
            from: from.into(),
            to: to.into(),
            tick,
            payload,
        }
    }
}

/// Compiles a signal into the kernel action that realizes it.
pub fn express(signal: SignalKind, target: &str) -> PrimitiveAction {
    match signal {
        SignalKind::LookAt => PrimitiveAction::LookAt {
            target: target.to_string(),
        },
        SignalKind::PointAt => PrimitiveAction::PointAt {
            target: target.to_string(),
        },
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ReferringExpression {
    pub type_label: String,
    pub constraints: Vec<(Predicate, Term)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Resolution {
    Unique(EntityId),
    Ambiguous(BTreeSet<EntityId>),
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RefError {
    #[error("predicate `{0}` cannot appear in a referring expression")]
    UnknownPredicate(String),
    #[error("`{0}` is absent from the addressee's beliefs")]
    Absent(EntityId),
}

/// Entity types and the declared property vocabulary.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TypeCatalog {
    pub types: BTreeMap<EntityId, String>,
    pub props: BTreeSet<String>,
}

impl TypeCatalog {
    fn admits(&self, p: &Predicate) -> bool {
        match p {
            Predicate::Prop(name) => self.props.contains(name),
            other => other.is_believable(),
        }
    }

    /// Entities of the type that the beliefs mention as a subject.
    fn believed_of_type(&self, type_label: &str, beliefs: &BTreeSet<Fact>) -> BTreeSet<EntityId> {
        let believed: BTreeSet<&str> = beliefs.iter().map(|f| f.subject.as_str()).collect();
        self.types
            .iter()
            .filter(|(id, t)| *t == type_label && believed.contains(id.as_str()))
            .map(|(id, _)| id.clone())
            .collect()
    }
}

fn classify(c: BTreeSet<EntityId>) -> Resolution {
    match c.len() {
        0 => Resolution::None,
        1 => Resolution::Unique(c.into_iter().next().unwrap()),
        _ => Resolution::Ambiguous(c),
    }
}

fn candidates(
    expr: &ReferringExpression,
    beliefs: &BTreeSet<Fact>,
    catalog: &TypeCatalog,
) -> Result<BTreeSet<EntityId>, RefError> {
    for (p, _) in &expr.constraints {
        if !catalog.admits(p) {
            return Err(RefError::UnknownPredicate(p.name().to_string()));
        }
    }
    Ok(catalog
        .believed_of_type(&expr.type_label, beliefs)
        .into_iter()
        .filter(|e| {
            expr.constraints
                .iter()
                .all(|(p, v)| beliefs.contains(&Fact::new(e.clone(), p.clone(), v.clone())))
        })
        .collect())
}

/// Grounds an expression against the speaker's beliefs.
pub fn resolve_reference(
    expr: &ReferringExpression,
    speaker_beliefs: &BTreeSet<Fact>,
    catalog: &TypeCatalog,
) -> Result<Resolution, RefError> {
    candidates(expr, speaker_beliefs, catalog).map(classify)
}

/// Greedy constraint selection in preference order type, isOn, isIn,
/// isNextTo; a constraint is kept only if it shrinks the candidate set.
/// `Ok(None)` means no discriminating set exists.
pub fn generate_reference(
    entity: &str,
    addressee_beliefs: &BTreeSet<Fact>,
    catalog: &TypeCatalog,
) -> Result<Option<ReferringExpression>, RefError> {
    let type_label = catalog
        .types
        .get(entity)
        .filter(|_| addressee_beliefs.iter().any(|f| f.subject == entity))
        .ok_or_else(|| RefError::Absent(entity.to_string()))?;
    let mut expr = ReferringExpression {
        type_label: type_label.clone(),
        constraints: Vec::new(),
    };
    let mut current = candidates(&expr, addressee_beliefs, catalog)?;
    for pred in [Predicate::IsOn, Predicate::IsIn, Predicate::IsNextTo] {
        for f in addressee_beliefs
            .iter()
            .filter(|f| f.subject == entity && f.predicate == pred)
        {
            if current.len() <= 1 {
                break;
            }
            // A same-typed neighbour would itself need a description.
            let same_type =
                f.object.as_name().and_then(|n| catalog.types.get(n)) == Some(type_label);
            if pred == Predicate::IsNextTo && same_type {
                continue;
            }
            let mut trial = expr.clone();
            trial.constraints.push((pred.clone(), f.object.clone()));
            let next = candidates(&trial, addressee_beliefs, catalog)?;
            if next.len() < current.len() {
                expr = trial;
                current = next;
            }
        }
    }
    Ok((current.len() == 1).then_some(expr))
}

/// Narrows an ambiguous set with the speaker's pointing (first) and gaze
/// facts. An empty intersection leaves the set unchanged.
pub fn disambiguate_with_signal(
    ambiguous: &BTreeSet<EntityId>,
    speaker: &str,
    signals: &[Fact],
) -> Resolution {
    let mut set = ambiguous.clone();
    for pred in [Predicate::IsPointingAt, Predicate::IsLookingAt] {
        let targets: BTreeSet<EntityId> = signals
            .iter()
            .filter(|f| f.subject == speaker && f.predicate == pred)
            .filter_map(|f| f.object.as_name().map(String::from))
            .collect();
        let narrowed: BTreeSet<EntityId> = set.intersection(&targets).cloned().collect();
        if !narrowed.is_empty() {
            set = narrowed;
        }
        if set.len() == 1 {
            break;
        }
    }
    match set.len() {
        1 => Resolution::Unique(set.into_iter().next().unwrap()),
        _ => Resolution::Ambiguous(set),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn facts(xs: &[&str]) -> BTreeSet<Fact> {
        xs.iter().map(|s| s.parse().unwrap()).collect()
    }

    fn catalog(entries: &[(&str, &str)]) -> TypeCatalog {
        TypeCatalog {
            types: entries
                .iter()
                .map(|(a, b)| (a.to_string(), b.to_string()))
                .collect(),
            props: BTreeSet::from(["isFull".to_string()]),
        }
    }

    #[test]
    fn wire_form() {
        let act = CommAct::new(
            "robot",
            "BOB",
            4,
            Payload::Inform {
                fact: "MUG isIn LIVINGROOM".parse().unwrap(),
            },
        );
        let v = serde_json::to_value(&act).unwrap();
        assert_eq!(v["kind"], "inform");
        assert_eq!(v["payload"]["fact"], "MUG isIn LIVINGROOM");
        let back: CommAct = serde_json::from_value(v).unwrap();
        assert_eq!(back, act);
    }

    #[test]
    fn two_mugs_on_different_tables() {
        let b = facts(&[
            "MUG1 isOn TABLE1",
            "MUG2 isOn TABLE2",
            "MUG1 isIn KITCHEN",
            "MUG2 isIn KITCHEN",
        ]);
        let cat = catalog(&[("MUG1", "mug"), ("MUG2", "mug")]);
        let plain = ReferringExpression {
            type_label: "mug".into(),
            constraints: vec![],
        };
        assert!(
            matches!(resolve_reference(&plain, &b, &cat).unwrap(), Resolution::Ambiguous(s) if s.len() == 2)
        );
        let e = generate_reference("MUG2", &b, &cat).unwrap().unwrap();
        assert_eq!(e.constraints, vec![(Predicate::IsOn, Term::name("TABLE2"))]);
        assert_eq!(
            resolve_reference(&e, &b, &cat).unwrap(),
            Resolution::Unique("MUG2".into())
        );
    }

    #[test]
    fn twins_are_impossible_and_unknown_predicates_rejected() {
        let b = facts(&[
            "MUG1 isOn TABLE1",
            "MUG2 isOn TABLE1",
            "MUG1 isNextTo MUG2",
            "MUG2 isNextTo MUG1",
        ]);
        let cat = catalog(&[("MUG1", "mug"), ("MUG2", "mug")]);
        assert_eq!(generate_reference("MUG1", &b, &cat).unwrap(), None);
        let bad = ReferringExpression {
            type_label: "mug".into(),
            constraints: vec![(Predicate::CanSee, Term::name("X"))],
        };
        assert!(resolve_reference(&bad, &b, &cat).is_err());
        assert!(generate_reference("MUG9", &b, &cat).is_err());
    }

    #[test]
    fn signals_disambiguate() {
        let set = BTreeSet::from(["MUG1".to_string(), "MUG2".to_string()]);
        let pointing = facts(&["BOB isPointingAt MUG2", "BOB isLookingAt MUG1"]);
        let sig: Vec<Fact> = pointing.into_iter().collect();
        assert_eq!(
            disambiguate_with_signal(&set, "BOB", &sig),
            Resolution::Unique("MUG2".into())
        );
        assert!(matches!(
            disambiguate_with_signal(&set, "BOB", &[]),
            Resolution::Ambiguous(_)
        ));
        let off: Vec<Fact> = facts(&["BOB isPointingAt BOTTLE"]).into_iter().collect();
        assert_eq!(
            disambiguate_with_signal(&set, "BOB", &off),
            Resolution::Ambiguous(set.clone())
        );
    }
}
