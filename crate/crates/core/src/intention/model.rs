//! Bayesian filtering over candidate intentions with a softmax rationality
//! action model, and the help-adoption decision.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

/// Name of the null intention.
pub const NONE: &str = "none";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentionPosterior {
    pub probs: BTreeMap<String, f64>,
    /// Goals whose believed state could not be mapped on the last update.
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub flagged: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum IntentionError {
    #[error("prior for context `{0}` is missing")]
    MissingContext(String),
    #[error("prior does not sum to 1 (got {0})")]
    Unnormalized(f64),
    #[error("negative probability for `{0}`")]
    Negative(String),
    #[error("confusion matrix must be {0}x{0}")]
    Confusion(usize),
    #[error("rationality temperature must be positive")]
    Beta,
}

/// `P(observed | true)` over action templates; `None` means identity.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Confusion(pub Option<Vec<Vec<f64>>>);

impl Confusion {
    pub fn p(&self, observed: usize, truth: usize) -> f64 {
        match &self.0 {
            None => f64::from(u8::from(observed == truth)),
            Some(m) => m[truth][observed],
        }
    }

    pub fn check(&self, n: usize) -> Result<(), IntentionError> {
        match &self.0 {
            None => Ok(()),
            Some(m) => {
                let ok = m.len() == n
                    && m.iter().all(|r| {
                        r.len() == n
                            && ((r.iter().sum::<f64>() - 1.0).abs() < 1e-9)
                            && r.iter().all(|p| *p >= 0.0)
                    });
                if ok {
                    Ok(())
                } else {
                    Err(IntentionError::Confusion(n))
                }
            }
        }
    }
}

impl IntentionPosterior {
    /// Validates and copies a prior.
    pub fn from_prior(prior: &BTreeMap<String, f64>) -> Result<Self, IntentionError> {
        if let Some((k, _)) = prior.iter().find(|(_, p)| **p < 0.0) {
            return Err(IntentionError::Negative(k.clone()));
        }
        let sum: f64 = prior.values().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(IntentionError::Unnormalized(sum));
        }
        Ok(IntentionPosterior {
            probs: prior.clone(),
            flagged: BTreeSet::new(),
        })
    }

    pub fn get(&self, goal: &str) -> f64 {
        self.probs.get(goal).copied().unwrap_or(0.0)
    }

    /// One filtering step. `policies[g]` is goal g's action distribution at
    /// the observed agent's believed state, or `None` if that state cannot be
    /// mapped (uniform likelihood, flagged). The null intention is uniform.
    pub fn observe(
        &self,
        observed: usize,
        n_actions: usize,
        policies: &BTreeMap<String, Option<Vec<f64>>>,
        confusion: &Confusion,
    ) -> IntentionPosterior {
        let uniform: f64 = (0..n_actions)
            .map(|a| confusion.p(observed, a))
            .sum::<f64>()
            / n_actions as f64;
        let mut flagged = BTreeSet::new();
        let mut weights: BTreeMap<String, f64> = BTreeMap::new();
        for (g, p) in &self.probs {
            let like = match policies.get(g) {
                Some(Some(pi)) => (0..n_actions)
                    .map(|a| confusion.p(observed, a) * pi[a])
                    .sum(),
                Some(None) => {
                    flagged.insert(g.clone());
                    uniform
                }
                None => uniform,
            };
            weights.insert(g.clone(), p * like);
        }
        let z: f64 = weights.values().sum();
        let probs = if z > 0.0 {
            weights.into_iter().map(|(g, w)| (g, w / z)).collect()
        } else {
            self.probs.clone()
        };
        IntentionPosterior { probs, flagged }
    }

    pub fn argmax(&self) -> Option<(&str, f64)> {
        let mut best: Option<(&str, f64)> = None;
        for (g, p) in &self.probs {
            if best.map_or(true, |(_, b)| *p > b) {
                best = Some((g, *p));
            }
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HelpDecision {
    Adopt(String),
    Observe,
}

/// Adopt the most probable goal when it clears `theta` and the robot can
/// help with it. Ties go to the lexicographically smaller goal.
pub fn decide_help(
    posterior: &IntentionPosterior,
    theta: f64,
    feasible: impl Fn(&str) -> bool,
) -> HelpDecision {
    match posterior.argmax() {
        Some((g, p)) if g != NONE && p > theta && feasible(g) => HelpDecision::Adopt(g.to_string()),
        _ => HelpDecision::Observe,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn post(xs: &[(&str, f64)]) -> IntentionPosterior {
        IntentionPosterior::from_prior(&xs.iter().map(|(k, v)| (k.to_string(), *v)).collect())
            .unwrap()
    }

    #[test]
    fn equal_likelihoods_leave_posterior_unchanged() {
        let p = post(&[("A", 0.3), ("B", 0.5), (NONE, 0.2)]);
        let pol = BTreeMap::from([
            ("A".to_string(), Some(vec![0.5, 0.5])),
            ("B".to_string(), Some(vec![0.5, 0.5])),
        ]);
        let q = p.observe(1, 2, &pol, &Confusion::default());
        for (k, v) in &p.probs {
            assert!((q.probs[k] - v).abs() < 1e-12);
        }
    }

    #[test]
    fn unmappable_goal_is_flagged() {
        let p = post(&[("A", 0.5), ("B", 0.5)]);
        let pol = BTreeMap::from([
            ("A".to_string(), None),
            ("B".to_string(), Some(vec![0.9, 0.1])),
        ]);
        let q = p.observe(0, 2, &pol, &Confusion::default());
        assert!(q.flagged.contains("A"));
        assert!((q.get("B") - 0.9 / 1.4).abs() < 1e-12);
    }

    #[test]
    fn help_decisions() {
        let yes = |_: &str| true;
        assert_eq!(
            decide_help(&post(&[("A", 0.9), (NONE, 0.1)]), 0.8, yes),
            HelpDecision::Adopt("A".into())
        );
        assert_eq!(
            decide_help(&post(&[("A", 0.6), (NONE, 0.4)]), 0.8, yes),
            HelpDecision::Observe
        );
        assert_eq!(
            decide_help(&post(&[("A", 0.9), (NONE, 0.1)]), 0.8, |_| false),
            HelpDecision::Observe
        );
        assert_eq!(
            decide_help(&post(&[("A", 0.5), ("B", 0.5)]), 0.4, yes),
            HelpDecision::Adopt("A".into())
        );
    }

    #[test]
    fn prior_validation() {
        let bad = BTreeMap::from([("A".to_string(), 0.7)]);
        assert!(IntentionPosterior::from_prior(&bad).is_err());
    }
}
