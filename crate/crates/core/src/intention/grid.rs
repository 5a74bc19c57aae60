//! Navigation MDPs over the grid, one per goal region, and the tracker that
//! scores an agent's moves against the regions its beliefs imply.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::mdp::{Mdp, MdpError, MdpParams, SolvedMdp};
use super::model::{Confusion, HelpDecision, IntentionError, IntentionPosterior};
use crate::facts::{Fact, Predicate};
use crate::geometry::{Cell, Heading};
use crate::world::{EntityId, GridMap, PrimitiveAction};

/// Eight moves followed by Wait.
pub const N_ACTIONS: usize = 9;
pub const WAIT: usize = 8;

pub fn action_index(a: &PrimitiveAction) -> usize {
    match a {
        PrimitiveAction::Move { dir } => Heading::ALL.iter().position(|h| h == dir).unwrap_or(WAIT),
        _ => WAIT,
    }
}

/// A navigation MDP whose goal states are the cells of a region.
#[derive(Debug, Clone)]
pub struct GridMdp {
    pub cells: Vec<Cell>,
    index: BTreeMap<Cell, usize>,
    pub mdp: Mdp,
    pub solved: SolvedMdp,
}

impl GridMdp {
    pub fn build(
        map: &GridMap,
        region: &BTreeSet<Cell>,
        params: MdpParams,
    ) -> Result<Self, MdpError> {
        let cells: Vec<Cell> = map.all_cells().filter(|c| map.is_walkable(*c)).collect();
        let index: BTreeMap<Cell, usize> = cells.iter().enumerate().map(|(i, c)| (*c, i)).collect();
        let transitions = cells
            .iter()
            .map(|&c| {
                let mut row: Vec<Vec<(usize, f64)>> = Heading::ALL
                    .iter()
                    .map(|&h| {
                        let t = c.offset(h);
                        let to = index.get(&t).copied().unwrap_or(index[&c]);
                        vec![(to, 1.0)]
                    })
                    .collect();
                row.push(vec![(index[&c], 1.0)]);
                row
            })
            .collect();
        let mdp = Mdp {
            n_states: cells.len(),
            n_actions: N_ACTIONS,
            transitions,
            goal: cells.iter().map(|c| region.contains(c)).collect(),
            params,
        };
        let solved = mdp.value_iteration()?;
        Ok(GridMdp {
            cells,
            index,
            mdp,
            solved,
        })
    }

    pub fn state(&self, c: Cell) -> Option<usize> {
        self.index.get(&c).copied()
    }
}

fn near(map: &GridMap, targets: &[Cell]) -> BTreeSet<Cell> {
    map.all_cells()
        .filter(|c| map.is_walkable(*c) && targets.iter().any(|t| t.chebyshev(*c) <= 1))
        .collect()
}

/// Cells from which `target` is within arm's reach, according to `facts`.
/// Landmarks map directly; objects go through their believed surface,
/// holder or room. `None` if the facts say nothing usable.
pub fn goal_region(map: &GridMap, facts: &BTreeSet<Fact>, target: &str) -> Option<BTreeSet<Cell>> {
    let surface = map.surface_cells(target);
    if !surface.is_empty() {
        return Some(near(map, &surface));
    }
    let room = map.room_cells(target);
    if !room.is_empty() {
        return Some(room.into_iter().filter(|c| map.is_walkable(*c)).collect());
    }
    let value = |s: &str, p: Predicate| {
        facts
            .iter()
            .find(|f| f.subject == s && f.predicate == p)
            .and_then(|f| f.object.as_name().map(String::from))
    };
    if let Some(s) = value(target, Predicate::IsOn) {
        return goal_region(map, facts, &s);
    }
    let holder = facts
        .iter()
        .find(|f| f.predicate == Predicate::IsHolding && f.object.as_name() == Some(target))
        .map(|f| f.subject.clone());
    if let Some(r) = holder.and_then(|h| value(&h, Predicate::IsIn)) {
        return goal_region(map, facts, &r);
    }
    if let Some(r) = value(target, Predicate::IsIn) {
        return goal_region(map, facts, &r);
    }
    None
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntentionGoal {
    pub id: String,
    /// Entity or landmark the goal is about.
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct IntentionConfig {
    /// The observed agent.
    pub agent: EntityId,
    pub goals: Vec<IntentionGoal>,
    #[serde(default = "default_context")]
    pub context: String,
    /// Context -> distribution over goal ids and `none`.
    pub priors: BTreeMap<String, BTreeMap<String, f64>>,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_theta")]
    pub theta: f64,
    #[serde(default)]
    pub mdp: MdpParams,
    #[serde(default)]
    pub confusion: Confusion,
}

fn default_context() -> String {
    "default".into()
}
fn default_beta() -> f64 {
    5.0
}
fn default_theta() -> f64 {
    0.8
}

impl IntentionConfig {
    pub fn initial_posterior(&self) -> Result<IntentionPosterior, IntentionError> {
        if self.beta <= 0.0 {
            return Err(IntentionError::Beta);
        }
        self.confusion.check(N_ACTIONS)?;
        let prior = self
            .priors
            .get(&self.context)
            .ok_or_else(|| IntentionError::MissingContext(self.context.clone()))?;
        IntentionPosterior::from_prior(prior)
    }
}

/// Filters one agent's intention, caching an MDP per goal region.
#[derive(Debug, Clone)]
pub struct IntentionTracker {
    pub config: IntentionConfig,
    pub posterior: IntentionPosterior,
    cache: BTreeMap<BTreeSet<Cell>, GridMdp>,
}

impl IntentionTracker {
    pub fn new(config: IntentionConfig) -> Result<Self, IntentionError> {
        let posterior = config.initial_posterior()?;
        Ok(IntentionTracker {
            config,
            posterior,
            cache: BTreeMap::new(),
        })
    }

    /// Action distribution of each goal at `at`, in the world described by
    /// `facts`.
    pub fn policies(
        &mut self,
        map: &GridMap,
        facts: &BTreeSet<Fact>,
        at: Cell,
    ) -> BTreeMap<String, Option<Vec<f64>>> {
        let mut out = BTreeMap::new();
        for g in self.config.goals.clone() {
            let pi = goal_region(map, facts, &g.target)
                .filter(|r| !r.is_empty())
                .and_then(|region| {
                    if !self.cache.contains_key(&region) {
                        let m = GridMdp::build(map, &region, self.config.mdp).ok()?;
                        self.cache.insert(region.clone(), m);
                    }
                    let m = &self.cache[&region];
                    m.state(at)
                        .map(|s| m.solved.likelihoods(s, self.config.beta))
                });
            out.insert(g.id.clone(), pi);
        }
        out
    }

    /// Updates the posterior with an action taken at `at`, scoring it in the
    /// world the agent believes in (`facts`).
    pub fn observe(
        &mut self,
        map: &GridMap,
        facts: &BTreeSet<Fact>,
        at: Cell,
        action: &PrimitiveAction,
    ) {
        let pol = self.policies(map, facts, at);
        self.posterior = self.posterior.observe(
            action_index(action),
            N_ACTIONS,
            &pol,
            &self.config.confusion,
        );
    }

    pub fn decide(&self, feasible: impl Fn(&str) -> bool) -> HelpDecision {
        super::model::decide_help(&self.posterior, self.config.theta, feasible)
    }
}
