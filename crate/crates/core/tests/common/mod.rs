//! Independent reference implementations used by the integration tests.
//! None of these call into the code they check beyond plain data types.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::PathBuf;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use tandem::facts::Fact;
use tandem::facts::Term;
use tandem::geometry::{Cell, Heading};
use tandem::htn::pattern::{match_all, Bindings, Pattern};
use tandem::htn::{
    plan, ExecSpec, HtnDomain, NegotiationConstraints, PlanError, PlanRequest, PolicyMode,
    SharedPlan, SocialPolicy, Task,
};
use tandem::intention::Mdp;
use tandem::mental::{Know, KnowledgeModel};
use tandem::scenario::Scenario;
use tandem::world::{AgentKind, EntityId, GridMap};

pub fn scenario_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

pub fn scenario(name: &str) -> Scenario {
    Scenario::load(scenario_dir().join(format!("{name}.json"))).unwrap()
}

pub fn all_scenarios() -> Vec<(String, Scenario)> {
    let mut names: Vec<String> = std::fs::read_dir(scenario_dir())
        .unwrap()
        .filter_map(|e| {
            let p = e.ok()?.path();
            if p.extension()? != "json" {
                return None;
            }
            Some(p.file_stem()?.to_string_lossy().into_owned())
        })
        .collect();
    names.sort();
    names
        .into_iter()
        .map(|n| (n.clone(), scenario(&n)))
        .collect()
}

// ---------------------------------------------------------------- MDPs

/// Solves `A x = b` by Gaussian elimination with partial pivoting.
pub fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in 0..n {
            if row != col {
                let f = a[row][col] / a[col][col];
                for k in col..n {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
    }
    (0..n).map(|i| b[i] / a[i][i]).collect()
}

/// Exact value of a stationary deterministic policy. Goal states are
/// absorbing and worth the goal reward.
pub fn policy_value(mdp: &Mdp, policy: &[usize]) -> Vec<f64> {
    let n = mdp.n_states;
    let p = &mdp.params;
    let mut a = vec![vec![0.0; n]; n];
    let mut b = vec![0.0; n];
    for s in 0..n {
        a[s][s] = 1.0;
        if mdp.goal[s] {
            b[s] = p.goal_reward;
            continue;
        }
        b[s] = p.step_reward;
        for &(t, pr) in &mdp.transitions[s][policy[s]] {
            a[s][t] -= p.gamma * pr;
        }
    }
    solve_linear(a, b)
}

/// Best value per state over every deterministic stationary policy.
pub fn brute_force_optimum(mdp: &Mdp) -> Vec<f64> {
    let n = mdp.n_states;
    let m = mdp.n_actions;
    let mut best = vec![f64::NEG_INFINITY; n];
    let mut policy = vec![0usize; n];
    loop {
        let v = policy_value(mdp, &policy);
        for s in 0..n {
            best[s] = best[s].max(v[s]);
        }
        // Odometer over policies.
        let mut i = 0;
        loop {
            if i == n {
                return best;
            }
            policy[i] += 1;
            if policy[i] < m {
                break;
            }
            policy[i] = 0;
            i += 1;
        }
    }
}

// ---------------------------------------------------------- intentions

/// A Context -> Intention -> Action_t -> Observation_t network with the
/// context observed. `action_cpd[g][t][a]` is P(a_t = a | g); goals absent
/// from the map act uniformly.
pub struct IntentionNetwork {
    pub prior: BTreeMap<String, f64>,
    pub action_cpd: BTreeMap<String, Vec<Vec<f64>>>,
    /// `confusion[true][observed]`.
    pub confusion: Vec<Vec<f64>>,
    pub n_actions: usize,
}

impl IntentionNetwork {
    /// P(intention | context, o_1..o_T) by summing the joint over every
    /// intention and every hidden action sequence.
    pub fn posterior(&self, observed: &[usize]) -> BTreeMap<String, f64> {
        let t_max = observed.len();
        let n = self.n_actions;
        let mut joint: BTreeMap<String, f64> = BTreeMap::new();
        for (g, pg) in &self.prior {
            let mut total = 0.0;
            let mut actions = vec![0usize; t_max];
            loop {
                let mut p = *pg;
                for t in 0..t_max {
                    let pa = match self.action_cpd.get(g) {
                        Some(cpd) => cpd[t][actions[t]],
                        None => 1.0 / n as f64,
                    };
                    p *= pa * self.confusion[actions[t]][observed[t]];
                }
                total += p;
                let mut i = 0;
                loop {
                    if i == t_max {
                        break;
                    }
                    actions[i] += 1;
                    if actions[i] < n {
                        break;
                    }
                    actions[i] = 0;
                    i += 1;
                }
                if i == t_max {
                    break;
                }
            }
            joint.insert(g.clone(), total);
        }
        let z: f64 = joint.values().sum();
        joint.into_iter().map(|(g, p)| (g, p / z)).collect()
    }
}

pub fn softmax_ref(q: &[f64], beta: f64) -> Vec<f64> {
    let e: Vec<f64> = q.iter().map(|x| (beta * x).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|x| x / z).collect()
}

/// Shortest 8-connected path lengths to `region` over walkable cells.
/// Moves into non-walkable cells are blocked, as in the navigation MDP.
pub fn grid_distances(map: &GridMap, region: &BTreeSet<Cell>) -> BTreeMap<Cell, u32> {
    let mut dist = BTreeMap::new();
    let mut queue = VecDeque::new();
    for c in region {
        dist.insert(*c, 0u32);
        queue.push_back(*c);
    }
    while let Some(c) = queue.pop_front() {
        for h in Heading::ALL {
            let n = c.offset(h);
            if map.is_walkable(n) && !dist.contains_key(&n) {
                dist.insert(n, dist[&c] + 1);
                queue.push_back(n);
            }
        }
    }
    dist
}

/// Closed-form values of the deterministic navigation problem:
/// `V(d) = step * (1 - gamma^d) / (1 - gamma) + gamma^d * goal`.
pub fn nav_value(d: Option<u32>, gamma: f64, step: f64, goal: f64) -> f64 {
    match d {
        Some(d) => {
            step * (1.0 - gamma.powi(d as i32)) / (1.0 - gamma) + gamma.powi(d as i32) * goal
        }
        None => step / (1.0 - gamma),
    }
}

/// Q-values of the eight moves and Wait at `at`, toward `region`.
pub fn nav_q(map: &GridMap, region: &BTreeSet<Cell>, at: Cell) -> Vec<f64> {
    let (gamma, step, goal) = (0.95, -0.04, 1.0);
    if region.contains(&at) {
        return vec![goal; 9];
    }
    let dist = grid_distances(map, region);
    let v = |c: Cell| nav_value(dist.get(&c).copied(), gamma, step, goal);
    let mut q: Vec<f64> = Heading::ALL
        .iter()
        .map(|h| {
            let n = at.offset(*h);
            let to = if map.is_walkable(n) { n } else { at };
            step + gamma * v(to)
        })
        .collect();
    q.push(step + gamma * v(at));
    q
}

/// Walkable cells within one step of a surface.
pub fn near_surface(map: &GridMap, surface: &str) -> BTreeSet<Cell> {
    let cells = map.surface_cells(surface);
    map.all_cells()
        .filter(|c| map.is_walkable(*c) && cells.iter().any(|s| s.chebyshev(*c) <= 1))
        .collect()
}

// ------------------------------------------------------------ engagement

/// Row-vector filter step: `b' ∝ (b T) ∘ L[:, cue]`.
pub fn engagement_ref(b: [f64; 3], t: &[[f64; 3]; 3], l: &[[f64; 4]; 3], cue: usize) -> [f64; 3] {
    let mut row = [0.0; 3];
    for (j, r) in row.iter_mut().enumerate() {
        for (i, bi) in b.iter().enumerate() {
            *r += bi * t[i][j];
        }
    }
    let w: Vec<f64> = (0..3).map(|j| row[j] * l[j][cue]).collect();
    let z: f64 = w.iter().sum();
    [w[0] / z, w[1] / z, w[2] / z]
}

// ------------------------------------------------------------------ HTN

#[derive(Debug, Clone, PartialEq)]
pub struct RefStep {
    pub task: Task,
    pub agent: EntityId,
    pub kind: AgentKind,
    pub cost: f64,
    pub unknown: bool,
}

#[derive(Debug, Clone)]
struct Pending {
    task: Task,
    after: BTreeSet<usize>,
}

pub struct HtnOracle<'a> {
    pub domain: &'a HtnDomain,
    pub agents: &'a [(EntityId, AgentKind)],
    pub knowledge: &'a KnowledgeModel,
    pub constraints: &'a NegotiationConstraints,
    pub mode: PolicyMode,
    pub lambda: f64,
    pub mu: f64,
}

fn glob(p: &str, t: &str) -> bool {
    match p.split_once('*') {
        None => p == t,
        Some((head, rest)) => {
            t.starts_with(head)
                && (0..=t.len() - head.len()).any(|k| glob(rest, &t[head.len() + k..]))
        }
    }
}

impl HtnOracle<'_> {
    pub fn cost(&self, steps: &[RefStep]) -> f64 {
        let base: f64 = steps.iter().map(|s| s.cost).sum();
        let robot: f64 = steps
            .iter()
            .filter(|s| s.kind == AgentKind::Robot)
            .map(|s| s.cost)
            .sum();
        let human: f64 = steps
            .iter()
            .filter(|s| s.kind == AgentKind::Human)
            .map(|s| s.cost)
            .sum();
        let u = steps.iter().filter(|s| s.unknown).count() as f64;
        let sign = match self.mode {
            PolicyMode::Efficient => 1.0,
            PolicyMode::Teach => -1.0,
            PolicyMode::Balanced => 0.0,
        };
        base + self.lambda * (robot - human).abs() + sign * self.mu * u
    }

    fn allowed(&self, agent: &str, kind: AgentKind, task: &str) -> bool {
        let who = |c: &str| {
            c == "*"
                || c == agent
                || (c == "human" && kind == AgentKind::Human)
                || (c == "robot" && kind == AgentKind::Robot)
        };
        let banned = self
            .constraints
            .must_not_do
            .iter()
            .any(|c| who(&c.agent) && glob(&c.task, task));
        let forced_elsewhere = self
            .constraints
            .must_do
            .iter()
            .any(|c| glob(&c.task, task) && !who(&c.agent));
        !banned && !forced_elsewhere
    }

    /// Every must-do pattern is matched by some step. Assignment to the
    /// wrong agent is already excluded by `allowed`.
    fn must_do_met(&self, steps: &[RefStep]) -> bool {
        self.constraints
            .must_do
            .iter()
            .all(|c| steps.iter().any(|s| glob(&c.task, &s.task.to_string())))
    }

    /// Every complete total-order plan: any ready task may go next, each
    /// method and binding and each capable agent is tried.
    pub fn all_plans(&self, facts: &BTreeSet<Fact>, goal: &Task) -> Vec<Vec<RefStep>> {
        let mut state = facts.clone();
        state.extend(self.domain.static_facts.iter().cloned());
        let mut out = Vec::new();
        let agenda = vec![(
            0usize,
            Pending {
                task: goal.clone(),
                after: BTreeSet::new(),
            },
        )];
        self.expand(agenda, 1, state, Vec::new(), &mut out, 0);
        out.retain(|p| self.must_do_met(p));
        out
    }

    fn expand(
        &self,
        agenda: Vec<(usize, Pending)>,
        next_id: usize,
        state: BTreeSet<Fact>,
        steps: Vec<RefStep>,
        out: &mut Vec<Vec<RefStep>>,
        depth: usize,
    ) {
        if agenda.is_empty() {
            out.push(steps);
            return;
        }
        if depth > 40 {
            return;
        }
        let live: BTreeSet<usize> = agenda.iter().map(|(id, _)| *id).collect();
        let ready: Vec<usize> = (0..agenda.len())
            .filter(|&k| !agenda[k].1.after.iter().any(|a| live.contains(a)))
            .collect();
        // Method preconditions are evaluated as soon as a compound task is
        // ready, before any further primitive runs.
        let compound = ready
            .iter()
            .copied()
            .find(|&k| self.domain.operator(&agenda[k].1.task.name).is_none());
        let choices = match compound {
            Some(k) => vec![k],
            None => ready,
        };
        for k in choices {
            let (id, p) = &agenda[k];
            let mut rest = agenda.clone();
            rest.remove(k);
            if let Some(op) = self.domain.operator(&p.task.name) {
                let mut b = Bindings::new();
                for (param, arg) in op.params.iter().zip(&p.task.args) {
                    b.insert(param.trim_start_matches('?').to_string(), Term::parse(arg));
                }
                for (agent, kind) in self.agents {
                    let Some(&cost) = op.cost.get(kind).filter(|_| op.agents.contains(kind)) else {
                        continue;
                    };
                    if !self.allowed(agent, *kind, &p.task.to_string()) {
                        continue;
                    }
                    let mut base = b.clone();
                    base.insert("agent".into(), Term::name(agent.clone()));
                    for m in match_all(&op.pre, &state, &base) {
                        let g = |ps: &[Pattern]| {
                            ps.iter()
                                .map(|x| x.ground(&m))
                                .collect::<Option<Vec<Fact>>>()
                        };
                        let (Some(add), Some(del), Some(spec)) =
                            (g(&op.add), g(&op.del), op.exec.ground(&m))
                        else {
                            continue;
                        };
                        if let ExecSpec::Handover { to, .. } = &spec {
                            if let Some((_, k)) = self.agents.iter().find(|(a, _)| a == to) {
                                if !self.allowed(to, *k, &p.task.to_string()) {
                                    continue;
                                }
                            }
                        }
                        let mut st = state.clone();
                        for f in &del {
                            st.remove(f);
                        }
                        st.extend(add);
                        let mut s2 = steps.clone();
                        s2.push(RefStep {
                            task: p.task.clone(),
                            agent: agent.clone(),
                            kind: *kind,
                            cost,
                            unknown: *kind == AgentKind::Human
                                && self.knowledge.knows(agent, &op.name) == Know::Unknown,
                        });
                        self.expand(rest.clone(), next_id, st, s2, out, depth + 1);
                    }
                }
            } else {
                for method in self.domain.methods_for(&p.task.name) {
                    let Some(head) = method.bind_head(&p.task.args) else {
                        continue;
                    };
                    for b in match_all(&method.pre, &state, &head) {
                        let Some(subs) = method
                            .subtasks
                            .iter()
                            .map(|s| s.task.ground(&b))
                            .collect::<Option<Vec<_>>>()
                        else {
                            continue;
                        };
                        let ids: Vec<usize> = (0..subs.len()).map(|i| next_id + i).collect();
                        let mut ag = rest.clone();
                        // Whatever waited on the expanded task now waits on all its parts.
                        for (_, q) in &mut ag {
                            if q.after.remove(id) {
                                q.after.extend(ids.iter().copied());
                            }
                        }
                        for (i, t) in subs.into_iter().enumerate() {
                            let sid = &method.subtasks[i].id;
                            let after = method
                                .order
                                .iter()
                                .filter(|(_, later)| later == sid)
                                .filter_map(|(before, _)| {
                                    method.subtasks.iter().position(|s| &s.id == before)
                                })
                                .map(|j| ids[j])
                                .collect();
                            ag.push((ids[i], Pending { task: t, after }));
                        }
                        self.expand(
                            ag,
                            next_id + ids.len(),
                            state.clone(),
                            steps.clone(),
                            out,
                            depth + 1,
                        );
                    }
                }
            }
        }
    }

    /// Minimum cost over every plan, if any.
    pub fn minimum(&self, facts: &BTreeSet<Fact>, goal: &Task) -> Option<(f64, Vec<RefStep>)> {
        self.all_plans(facts, goal)
            .into_iter()
            .map(|p| (self.cost(&p), p))
            .min_by(|a, b| a.0.total_cmp(&b.0))
    }
}

// ------------------------------------------------------ planning fixtures

pub const ITEMS: [&str; 4] = ["MUG", "PLATE", "CUP", "BOWL"];

pub struct Fixture {
    pub domain: HtnDomain,
    pub facts: BTreeSet<Fact>,
    pub goal: Task,
    pub knowledge: KnowledgeModel,
    pub policy: SocialPolicy,
    pub agents: Vec<(EntityId, AgentKind)>,
}

/// Random fetch-everything domains: the robot can always fetch the mug;
/// every other item is fetchable by at least one agent.
pub fn planning_fixture(rng: &mut ChaCha8Rng) -> Fixture {
    let k = rng.gen_range(1..=3);
    let items: Vec<&str> = std::iter::once("MUG")
        .chain(ITEMS[1..=k].iter().copied())
        .collect();
    let mut statics = vec!["robot canFetch MUG".to_string()];
    if rng.gen_bool(0.8) {
        statics.push("BOB canFetch MUG".into());
    }
    for it in &items[1..] {
        let (r, h) = match rng.gen_range(0..3) {
            0 => (true, false),
            1 => (false, true),
            _ => (true, true),
        };
        if r {
            statics.push(format!("robot canFetch {it}"));
        }
        if h {
            statics.push(format!("BOB canFetch {it}"));
        }
    }
    let subtasks: Vec<serde_json::Value> = items
        .iter()
        .enumerate()
        .map(|(i, it)| serde_json::json!({"id": format!("f{i}"), "task": format!("fetch({it})")}))
        .collect();
    let order: Vec<serde_json::Value> = (1..items.len())
        .filter(|_| rng.gen_bool(0.4))
        .map(|i| serde_json::json!([format!("f{}", i - 1), format!("f{i}")]))
        .collect();
    let domain: HtnDomain = serde_json::from_value(serde_json::json!({
        "operators": [{
            "name": "fetch", "params": ["?o"], "agents": ["robot", "human"],
            "cost": {"robot": rng.gen_range(0.5..2.0), "human": rng.gen_range(0.5..2.0)},
            "pre": ["?agent canFetch ?o", "?o isOn SHELF"],
            "add": ["?o isOn TABLE"], "del": ["?o isOn SHELF"],
            "exec": {"kind": "pickUp", "object": "?o"}
        }],
        "tasks": [{"name": "serve", "params": []}],
        "methods": [{"name": "all", "task": "serve()", "subtasks": subtasks, "order": order}],
        "staticFacts": statics
    }))
    .unwrap();
    let mode = [
        PolicyMode::Efficient,
        PolicyMode::Teach,
        PolicyMode::Balanced,
    ][rng.gen_range(0..3)];
    let knowledge = if rng.gen_bool(0.5) {
        KnowledgeModel::new().with_unknown("BOB", ["fetch"])
    } else {
        KnowledgeModel::new()
    };
    Fixture {
        domain,
        facts: items
            .iter()
            .map(|it| format!("{it} isOn SHELF").parse().unwrap())
            .collect(),
        goal: "serve()".parse().unwrap(),
        knowledge,
        policy: SocialPolicy {
            mode,
            lambda: rng.gen_range(0.0..1.0),
            mu: rng.gen_range(0.0..2.0),
        },
        agents: vec![
            ("robot".into(), AgentKind::Robot),
            ("BOB".into(), AgentKind::Human),
        ],
    }
}

impl Fixture {
    pub fn plan(
        &self,
        constraints: &NegotiationConstraints,
        id: &str,
    ) -> Result<SharedPlan, PlanError> {
        plan(
            PlanRequest {
                domain: &self.domain,
                facts: &self.facts,
                goal: &self.goal,
                condition: &[],
                knowledge: &self.knowledge,
                policy: &self.policy,
                constraints,
                agents: &self.agents,
                cancel: None,
            },
            id,
        )
    }

    pub fn oracle_min(&self, constraints: &NegotiationConstraints) -> Option<f64> {
        HtnOracle {
            domain: &self.domain,
            agents: &self.agents,
            knowledge: &self.knowledge,
            constraints,
            mode: self.policy.mode,
            lambda: self.policy.lambda,
            mu: self.policy.mu,
        }
        .minimum(&self.facts, &self.goal)
        .map(|(c, _)| c)
    }
}

// ------------------------------------------------------- plan validation

/// Whether every linearization of the partial order executes from `facts`
/// (positive preconditions present, negated patterns absent).
pub fn all_linearizations_valid(plan: &tandem::htn::SharedPlan, facts: &BTreeSet<Fact>) -> bool {
    let n = plan.steps.len();
    let idx: BTreeMap<&str, usize> = plan
        .steps
        .iter()
        .enumerate()
        .map(|(i, s)| (s.id.as_str(), i))
        .collect();
    let mut preds = vec![BTreeSet::new(); n];
    for (a, b) in &plan.ordering {
        preds[idx[b.as_str()]].insert(idx[a.as_str()]);
    }
    fn go(
        plan: &tandem::htn::SharedPlan,
        preds: &[BTreeSet<usize>],
        done: &mut Vec<usize>,
        state: &BTreeSet<Fact>,
    ) -> bool {
        let n = plan.steps.len();
        if done.len() == n {
            return true;
        }
        for i in 0..n {
            if done.contains(&i) || !preds[i].iter().all(|p| done.contains(p)) {
                continue;
            }
            let s = &plan.steps[i];
            if !s.pre.iter().all(|f| state.contains(f))
                || s.neg.iter().any(|p| state.iter().any(|f| p.matches(f)))
            {
                return false;
            }
            let mut next = state.clone();
            for f in &s.del {
                next.remove(f);
            }
            next.extend(s.add.iter().cloned());
            done.push(i);
            let ok = go(plan, preds, done, &next);
            done.pop();
            if !ok {
                return false;
            }
        }
        true
    }
    go(plan, &preds, &mut Vec::new(), facts)
}
