//! Finite MDPs with absorbing goal states, solved by synchronous value
//! iteration.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct MdpParams {
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// Reward collected on every non-goal step (a cost when negative).
    #[serde(default = "default_step")]
    pub step_reward: f64,
    /// Value of reaching a goal state.
    #[serde(default = "default_goal")]
    pub goal_reward: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

fn default_gamma() -> f64 {
    0.95
}
fn default_step() -> f64 {
    -0.04
}
fn default_goal() -> f64 {
    1.0
}
fn default_epsilon() -> f64 {
    1e-6
}

impl Default for MdpParams {
    fn default() -> Self {
        MdpParams {
            gamma: default_gamma(),
            step_reward: default_step(),
            goal_reward: default_goal(),
            epsilon: default_epsilon(),
        }
    }
}

impl MdpParams {
    /// The same decision problem with `c` added to every reward. Goal states
    /// keep collecting `c` forever, so their value rises by `c / (1 - gamma)`.
    pub fn shifted(&self, c: f64) -> MdpParams {
        MdpParams {
            step_reward: self.step_reward + c,
            goal_reward: self.goal_reward + c / (1.0 - self.gamma),
            ..*self
        }
    }
}

/// `transitions[s][a]` lists `(next_state, probability)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mdp {
    pub n_states: usize,
    pub n_actions: usize,
    pub transitions: Vec<Vec<Vec<(usize, f64)>>>,
    pub goal: Vec<bool>,
    pub params: MdpParams,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MdpError {
    #[error("discount {0} must lie in [0, 1)")]
    Discount(f64),
    #[error("transition row ({0}, {1}) sums to {2}")]
    Row(usize, usize, f64),
    #[error("transition ({0}, {1}) leads to unknown state {2}")]
    Target(usize, usize, usize),
    #[error("shape mismatch: {0}")]
    Shape(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolvedMdp {
    pub q: Vec<Vec<f64>>,
    pub v: Vec<f64>,
    pub sweeps: usize,
}

impl Mdp {
    pub fn check(&self) -> Result<(), MdpError> {
        let g = self.params.gamma;
        if !(0.0..1.0).contains(&g) {
            return Err(MdpError::Discount(g));
        }
        if self.transitions.len() != self.n_states || self.goal.len() != self.n_states {
            return Err(MdpError::Shape(format!(
                "{} states declared",
                self.n_states
            )));
        }
        for (s, row) in self.transitions.iter().enumerate() {
            if row.len() != self.n_actions {
                return Err(MdpError::Shape(format!(
                    "state {s} has {} actions",
                    row.len()
                )));
            }
            for (a, dist) in row.iter().enumerate() {
                let sum: f64 = dist.iter().map(|(_, p)| p).sum();
                if (sum - 1.0).abs() > 1e-9 {
                    return Err(MdpError::Row(s, a, sum));
                }
                if let Some((t, _)) = dist.iter().find(|(t, _)| *t >= self.n_states) {
                    return Err(MdpError::Target(s, a, *t));
                }
            }
        }
        Ok(())
    }

    fn backup(&self, v: &[f64], s: usize, a: usize) -> f64 {
        if self.goal[s] {
            return self.params.goal_reward;
        }
        self.params.step_reward
            + self.params.gamma
                * self.transitions[s][a]
                    .iter()
                    .map(|&(t, p)| p * v[t])
                    .sum::<f64>()
    }

    /// Iterates full backups until no Q entry moves by `epsilon` or more.
    pub fn value_iteration(&self) -> Result<SolvedMdp, MdpError> {
        self.check()?;
        let (n, m) = (self.n_states, self.n_actions);
        let mut q = vec![vec![0.0; m]; n];
        let mut v = vec![0.0; n];
        let mut sweeps = 0;
        loop {
            sweeps += 1;
            let mut residual: f64 = 0.0;
            let mut next = vec![vec![0.0; m]; n];
            for s in 0..n {
                for a in 0..m {
                    next[s][a] = self.backup(&v, s, a);
                    residual = residual.max((next[s][a] - q[s][a]).abs());
                }
            }
            q = next;
            for s in 0..n {
                v[s] = q[s].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            }
            if residual < self.params.epsilon {
                return Ok(SolvedMdp { q, v, sweeps });
            }
        }
    }
}

impl SolvedMdp {
    /// Lowest-index maximizing action.
    pub fn greedy(&self, s: usize) -> usize {
        let row = &self.q[s];
        let best = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.iter().position(|&x| x == best).unwrap_or(0)
    }

    pub fn likelihoods(&self, s: usize, beta: f64) -> Vec<f64> {
        softmax(&self.q[s], beta)
    }
}

/// `exp(beta * q_a) / sum exp(beta * q_a')`, stabilized by subtracting the max.
pub fn softmax(q: &[f64], beta: f64) -> Vec<f64> {
    let max = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = q.iter().map(|x| (beta * (x - max)).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

pub fn action_likelihood(q: &[f64], action: usize, beta: f64) -> f64 {
    softmax(q, beta)[action]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain() -> Mdp {
        // s0 -> s1 -> s2 (goal), one action.
        Mdp {
            n_states: 3,
            n_actions: 1,
            transitions: vec![
                vec![vec![(1, 1.0)]],
                vec![vec![(2, 1.0)]],
                vec![vec![(2, 1.0)]],
            ],
            goal: vec![false, false, true],
            params: MdpParams::default(),
        }
    }

    #[test]
    fn chain_values() {
        let s = chain().value_iteration().unwrap();
        assert!((s.v[2] - 1.0).abs() < 1e-12);
        assert!((s.v[1] - 0.91).abs() < 1e-6);
        assert!((s.v[0] - 0.8245).abs() < 1e-6);
    }

    #[test]
    fn single_goal_state_is_stable() {
        let m = Mdp {
            n_states: 1,
            n_actions: 2,
            transitions: vec![vec![vec![(0, 1.0)], vec![(0, 1.0)]]],
            goal: vec![true],
            params: MdpParams::default(),
        };
        let s = m.value_iteration().unwrap();
        assert_eq!(s.v, vec![1.0]);
        assert_eq!(s.sweeps, 2);
    }

    #[test]
    fn rejects_bad_discount_and_rows() {
        let mut m = chain();
        m.params.gamma = 1.0;
        assert_eq!(m.value_iteration(), Err(MdpError::Discount(1.0)));
        let mut m = chain();
        m.transitions[0][0] = vec![(1, 0.5)];
        assert!(matches!(m.check(), Err(MdpError::Row(0, 0, _))));
    }

    #[test]
    fn softmax_examples() {
        let p = action_likelihood(&[0.9, 0.1], 0, 5.0);
        let want = 4.5f64.exp() / (4.5f64.exp() + 0.5f64.exp());
        assert!((p - want).abs() < 1e-12);
        assert!((p - 0.982).abs() < 1e-3);
        assert_eq!(softmax(&[0.3, 0.3, 0.3], 5.0), vec![1.0 / 3.0; 3]);
        let flat = softmax(&[0.9, -2.0], 1e-12);
        assert!((flat[0] - 0.5).abs() < 1e-9);
    }
}
