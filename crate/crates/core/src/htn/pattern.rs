//! Fact patterns with `?variables` and `*` wildcards, unification against a
//! fact set, and ground task calls such as `fetch(MUG)`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::facts::{Fact, Predicate, Term};

pub type Bindings = BTreeMap<String, Term>;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Slot {
    Var(String),
    Const(Term),
    Any,
}

impl Slot {
    pub fn parse(s: &str) -> Slot {
        if s == "*" {
            Slot::Any
        } else if let Some(v) = s.strip_prefix('?') {
            Slot::Var(v.to_string())
        } else {
            Slot::Const(Term::parse(s))
        }
    }

    /// Substitutes a bound variable; unbound variables stay variables.
    pub fn resolve(&self, b: &Bindings) -> Slot {
        match self {
            Slot::Var(v) => b
                .get(v)
                .map_or_else(|| self.clone(), |t| Slot::Const(t.clone())),
            other => other.clone(),
        }
    }

    fn unify(&self, t: &Term, b: &mut Bindings) -> bool {
        match self {
            Slot::Any => true,
            Slot::Const(c) => c == t,
            Slot::Var(v) => match b.get(v) {
                Some(bound) => bound == t,
                None => {
                    b.insert(v.clone(), t.clone());
                    true
                }
            },
        }
    }
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Slot::Var(v) => write!(f, "?{v}"),
            Slot::Const(t) => write!(f, "{t}"),
            Slot::Any => f.write_str("*"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Pattern {
    pub subject: Slot,
    pub predicate: Predicate,
    pub object: Slot,
}

impl Pattern {
    pub fn resolve(&self, b: &Bindings) -> Pattern {
        Pattern {
            subject: self.subject.resolve(b),
            predicate: self.predicate.clone(),
            object: self.object.resolve(b),
        }
    }

    /// The fact this pattern denotes once every slot is constant.
    pub fn ground(&self, b: &Bindings) -> Option<Fact> {
        let p = self.resolve(b);
        match (p.subject, p.object) {
            (Slot::Const(Term::Name(s)), Slot::Const(o)) => Some(Fact::new(s, p.predicate, o)),
            _ => None,
        }
    }

    pub fn unify(&self, f: &Fact, b: &mut Bindings) -> bool {
        f.predicate == self.predicate
            && self.subject.unify(&Term::Name(f.subject.clone()), b)
            && self.object.unify(&f.object, b)
    }

    /// Matches a fact treating unbound variables as wildcards.
    pub fn matches(&self, f: &Fact) -> bool {
        let mut scratch = Bindings::new();
        self.unify(f, &mut scratch)
    }

    pub fn variables(&self) -> impl Iterator<Item = &str> {
        [&self.subject, &self.object]
            .into_iter()
            .filter_map(|s| match s {
                Slot::Var(v) => Some(v.as_str()),
                _ => None,
            })
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.subject, self.predicate, self.object)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed pattern `{0}`")]
pub struct PatternError(pub String);

impl FromStr for Pattern {
    type Err = PatternError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split_whitespace().collect();
        match parts.as_slice() {
            [s_, p, o] if !p.starts_with('?') && *p != "*" => Ok(Pattern {
                subject: Slot::parse(s_),
                predicate: Predicate::parse(p),
                object: Slot::parse(o),
            }),
            _ => Err(PatternError(s.to_string())),
        }
    }
}

/// A precondition literal: a pattern, possibly negated (`!`).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Literal {
    pub negated: bool,
    pub pattern: Pattern,
}

impl FromStr for Literal {
    type Err = PatternError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        match t.strip_prefix('!') {
            Some(rest) => Ok(Literal {
                negated: true,
                pattern: rest.trim().parse()?,
            }),
            None => Ok(Literal {
                negated: false,
                pattern: t.parse()?,
            }),
        }
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.negated {
            write!(f, "!{}", self.pattern)
        } else {
            write!(f, "{}", self.pattern)
        }
    }
}

macro_rules! string_serde {
    ($t:ty) => {
        impl Serialize for $t {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.collect_str(self)
            }
        }
        impl<'de> Deserialize<'de> for $t {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

string_serde!(Pattern);
string_serde!(Literal);
string_serde!(Task);
string_serde!(TaskCall);

/// Every binding extension under which all positive literals match `state`
/// and no negated literal does. Positive literals are matched in order;
/// results are sorted for determinism.
pub fn match_all(literals: &[Literal], state: &BTreeSet<Fact>, base: &Bindings) -> Vec<Bindings> {
    let positives: Vec<&Pattern> = literals
        .iter()
        .filter(|l| !l.negated)
        .map(|l| &l.pattern)
        .collect();
    let mut frontier = vec![base.clone()];
    for p in positives {
        let mut next = Vec::new();
        for b in &frontier {
            for f in state {
                let mut nb = b.clone();
                if p.unify(f, &mut nb) {
                    next.push(nb);
                }
            }
        }
        frontier = next;
        if frontier.is_empty() {
            return frontier;
        }
    }
    let mut out: Vec<Bindings> = frontier
        .into_iter()
        .filter(|b| {
            literals
                .iter()
                .filter(|l| l.negated)
                .all(|l| !state.iter().any(|f| l.pattern.resolve(b).matches(f)))
        })
        .collect();
    out.sort();
    out.dedup();
    out
}

/// A ground task instance such as `fetch(MUG)`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Task {
    pub name: String,
    pub args: Vec<String>,
}

impl Task {
    pub fn new(name: impl Into<String>, args: &[&str]) -> Self {
        Task {
            name: name.into(),
            args: args.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({})", self.name, self.args.join(","))
    }
}

fn split_call(s: &str) -> Option<(&str, Vec<&str>)> {
    let s = s.trim();
    match s.find('(') {
        None => Some((s, Vec::new())),
        Some(i) => {
            let inner = s[i + 1..].strip_suffix(')')?;
            let args = if inner.trim().is_empty() {
                Vec::new()
            } else {
                inner.split(',').map(str::trim).collect()
            };
            Some((&s[..i], args))
        }
    }
}

impl FromStr for Task {
    type Err = PatternError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (name, args) = split_call(s).ok_or_else(|| PatternError(s.to_string()))?;
        if name.is_empty() || args.iter().any(|a| a.is_empty() || a.starts_with('?')) {
            return Err(PatternError(s.to_string()));
        }
        Ok(Task {
            name: name.to_string(),
            args: args.into_iter().map(String::from).collect(),
        })
    }
}

/// A task reference inside a method body, arguments possibly variables.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TaskCall {
    pub name: String,
    pub args: Vec<Slot>,
}

impl TaskCall {
    pub fn ground(&self, b: &Bindings) -> Option<Task> {
        let args = self
            .args
            .iter()
            .map(|a| match a.resolve(b) {
                Slot::Const(t) => Some(t.to_string()),
                _ => None,
            })
            .collect::<Option<Vec<_>>>()?;
        Some(Task {
            name: self.name.clone(),
            args,
        })
    }
}

impl fmt::Display for TaskCall {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let args: Vec<String> = self.args.iter().map(ToString::to_string).collect();
        write!(f, "{}({})", self.name, args.join(","))
    }
}

impl FromStr for TaskCall {
    type Err = PatternError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (name, args) = split_call(s).ok_or_else(|| PatternError(s.to_string()))?;
        if name.is_empty() {
            return Err(PatternError(s.to_string()));
        }
        Ok(TaskCall {
            name: name.to_string(),
            args: args.into_iter().map(Slot::parse).collect(),
        })
    }
}

/// `*`-glob match, used by negotiation task patterns (`fetch*`, `fetch(MUG)`, `*`).
pub fn glob_match(pattern: &str, text: &str) -> bool {
    let p: Vec<char> = pattern.chars().collect();
    let t: Vec<char> = text.chars().collect();
    let (mut pi, mut ti) = (0, 0);
    let (mut star, mut mark) = (None, 0);
    while ti < t.len() {
        if pi < p.len() && p[pi] != '*' && p[pi] == t[ti] {
            pi += 1;
            ti += 1;
        } else if pi < p.len() && p[pi] == '*' {
            star = Some(pi);
            mark = ti;
            pi += 1;
        } else if let Some(s) = star {
            pi = s + 1;
            mark += 1;
            ti = mark;
        } else {
            return false;
        }
    }
    while pi < p.len() && p[pi] == '*' {
        pi += 1;
    }
    pi == p.len()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn facts(xs: &[&str]) -> BTreeSet<Fact> {
        xs.iter().map(|s| s.parse().unwrap()).collect()
    }

    #[test]
    fn unification_binds_and_checks_negation() {
        let state = facts(&["MUG isOn SHELF", "CUP isOn TABLE1", "robot isHolding KNIFE"]);
        let lits: Vec<Literal> = ["?o isOn ?s", "!?a isHolding *"]
            .iter()
            .map(|s| s.parse().unwrap())
            .collect();
        let base = Bindings::from([("a".to_string(), Term::name("BOB"))]);
        let got = match_all(&lits, &state, &base);
        assert_eq!(got.len(), 2);
        assert_eq!(got[0]["o"], Term::name("CUP"));
        let robot = Bindings::from([("a".to_string(), Term::name("robot"))]);
        assert!(match_all(&lits, &state, &robot).is_empty());
    }

    #[test]
    fn task_parsing() {
        let t: Task = "serve(MUG, TABLE1)".parse().unwrap();
        assert_eq!(t.to_string(), "serve(MUG,TABLE1)");
        let c: TaskCall = "fetch(?o)".parse().unwrap();
        let b = Bindings::from([("o".to_string(), Term::name("MUG"))]);
        assert_eq!(c.ground(&b).unwrap().to_string(), "fetch(MUG)");
        assert!("fetch(?o)".parse::<Task>().is_err());
    }

    #[test]
    fn globbing() {
        assert!(glob_match("*", "fetch(MUG)"));
        assert!(glob_match("fetch*", "fetch(MUG)"));
        assert!(glob_match("fetch(MUG)", "fetch(MUG)"));
        assert!(!glob_match("fetch(MUG)", "fetch(KNIFE)"));
        assert!(glob_match("*(MUG)", "place(MUG)"));
    }
}
