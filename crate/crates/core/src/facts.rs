//! Symbolic facts: `subject predicate object` triples and fact bases.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::world::PropValue;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Predicate {
    IsIn,
    IsOn,
    IsNextTo,
    IsHolding,
    CanSee,
    CanReach,
    IsLookingAt,
    IsPointingAt,
    IsMovingToward,
    /// Plan step status meta-fact: `s3 hasStatus done`.
    HasStatus,
    /// Plan awareness meta-fact: `BOB isAwareOf plan-1`.
    IsAwareOf,
    /// Object state property declared by the scenario (`isFull`, `color`, ...).
    Prop(String),
}

impl Predicate {
    /// At most one object per subject.
    pub fn is_functional(&self) -> bool {
        matches!(
            self,
            Predicate::IsIn
                | Predicate::IsOn
                | Predicate::IsHolding
                | Predicate::IsLookingAt
                | Predicate::IsPointingAt
                | Predicate::HasStatus
                | Predicate::IsAwareOf
                | Predicate::Prop(_)
        )
    }

    /// Placement and state predicates compared between belief and world.
    pub fn is_observable(&self) -> bool {
        matches!(
            self,
            Predicate::IsIn | Predicate::IsOn | Predicate::IsHolding | Predicate::Prop(_)
        )
    }

    /// Predicates kept in belief bases.
    pub fn is_believable(&self) -> bool {
        self.is_observable() || *self == Predicate::IsNextTo
    }

    pub fn is_meta(&self) -> bool {
        matches!(self, Predicate::HasStatus | Predicate::IsAwareOf)
    }

    pub fn name(&self) -> &str {
        match self {
            Predicate::IsIn => "isIn",
            Predicate::IsOn => "isOn",
            Predicate::IsNextTo => "isNextTo",
            Predicate::IsHolding => "isHolding",
            Predicate::CanSee => "canSee",
            Predicate::CanReach => "canReach",
            Predicate::IsLookingAt => "isLookingAt",
            Predicate::IsPointingAt => "isPointingAt",
            Predicate::IsMovingToward => "isMovingToward",
            Predicate::HasStatus => "hasStatus",
            Predicate::IsAwareOf => "isAwareOf",
            Predicate::Prop(p) => p,
        }
    }

    pub fn parse(s: &str) -> Predicate {
        match s {
            "isIn" => Predicate::IsIn,
            "isOn" => Predicate::IsOn,
            "isNextTo" => Predicate::IsNextTo,
            "isHolding" => Predicate::IsHolding,
            "canSee" => Predicate::CanSee,
            "canReach" => Predicate::CanReach,
            "isLookingAt" => Predicate::IsLookingAt,
            "isPointingAt" | "isPointing" => Predicate::IsPointingAt,
            "isMovingToward" => Predicate::IsMovingToward,
            "hasStatus" => Predicate::HasStatus,
            "isAwareOf" => Predicate::IsAwareOf,
            other => Predicate::Prop(other.to_string()),
        }
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for Predicate {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Predicate {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ok(Predicate::parse(&String::deserialize(d)?))
    }
}

/// Fact object: an entity or landmark name, a symbol, or a boolean.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Term {
    Bool(bool),
    Name(String),
}

impl Term {
    pub fn name(s: impl Into<String>) -> Term {
        Term::Name(s.into())
    }

    pub fn as_name(&self) -> Option<&str> {
        match self {
            Term::Name(n) => Some(n),
            Term::Bool(_) => None,
        }
    }

    pub fn parse(s: &str) -> Term {
        match s {
            "TRUE" => Term::Bool(true),
            "FALSE" => Term::Bool(false),
            other => Term::Name(other.to_string()),
        }
    }
}

impl From<&PropValue> for Term {
    fn from(v: &PropValue) -> Self {
        match v {
            PropValue::Bool(b) => Term::Bool(*b),
            PropValue::Symbol(s) => Term::Name(s.clone()),
        }
    }
}

impl From<&Term> for PropValue {
    fn from(t: &Term) -> Self {
        match t {
            Term::Bool(b) => PropValue::Bool(*b),
            Term::Name(s) => PropValue::Symbol(s.clone()),
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Bool(true) => f.write_str("TRUE"),
            Term::Bool(false) => f.write_str("FALSE"),
            Term::Name(n) => f.write_str(n),
        }
    }
}

impl Serialize for Term {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Term {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ok(Term::parse(&String::deserialize(d)?))
    }
}

/// A `subject predicate object` triple. The derivation tick lives on the
/// containing [`FactBase`] (or per entry in a belief base).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Fact {
    pub subject: String,
    pub predicate: Predicate,
    pub object: Term,
}

/// The `(subject, predicate)` part of a fact.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FactKey {
    pub subject: String,
    pub predicate: String,
}

impl fmt::Display for FactKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.subject, self.predicate)
    }
}

impl Fact {
    pub fn new(subject: impl Into<String>, predicate: Predicate, object: Term) -> Self {
        Fact {
            subject: subject.into(),
            predicate,
            object,
        }
    }

    pub fn rel(
        subject: impl Into<String>,
        predicate: Predicate,
        object: impl Into<String>,
    ) -> Self {
        Fact::new(subject, predicate, Term::Name(object.into()))
    }

    pub fn key(&self) -> FactKey {
        FactKey {
            subject: self.subject.clone(),
            predicate: self.predicate.name().to_string(),
        }
    }

    /// Names mentioned by the fact (subject and, when a name, object).
    pub fn mentions(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.subject.as_str()).chain(self.object.as_name())
    }
}

impl fmt::Display for Fact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.subject, self.predicate, self.object)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed fact `{0}`: expected `subject predicate object`")]
pub struct FactParseError(pub String);

impl FromStr for Fact {
    type Err = FactParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split_whitespace().collect();
        match parts.as_slice() {
            [subj, pred, obj] => Ok(Fact::new(*subj, Predicate::parse(pred), Term::parse(obj))),
            _ => Err(FactParseError(s.to_string())),
        }
    }
}

impl Serialize for Fact {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Fact {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A deduplicated set of facts derived at one tick.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactBase {
    pub tick: u64,
    pub facts: BTreeSet<Fact>,
}

impl FactBase {
    pub fn new(tick: u64) -> Self {
        FactBase {
            tick,
            facts: BTreeSet::new(),
        }
    }

    pub fn from_facts(tick: u64, facts: impl IntoIterator<Item = Fact>) -> Self {
        FactBase {
            tick,
            facts: facts.into_iter().collect(),
        }
    }

    pub fn insert(&mut self, f: Fact) -> bool {
        self.facts.insert(f)
    }

    pub fn contains(&self, f: &Fact) -> bool {
        self.facts.contains(f)
    }

    pub fn len(&self) -> usize {
        self.facts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.facts.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Fact> {
        self.facts.iter()
    }

    /// Facts with the given subject and predicate.
    pub fn values<'a>(
        &'a self,
        subject: &'a str,
        predicate: &'a Predicate,
    ) -> impl Iterator<Item = &'a Term> + 'a {
        self.facts
            .iter()
            .filter(move |f| f.subject == subject && &f.predicate == predicate)
            .map(|f| &f.object)
    }

    pub fn value<'a>(&'a self, subject: &'a str, predicate: &'a Predicate) -> Option<&'a Term> {
        self.values(subject, predicate).next()
    }

    pub fn holds(&self, subject: &str, predicate: Predicate, object: impl Into<String>) -> bool {
        self.facts.contains(&Fact::rel(subject, predicate, object))
    }

    pub fn strings(&self) -> Vec<String> {
        self.facts.iter().map(ToString::to_string).collect()
    }
}
