//! Scenario documents: grid, entities, goals, domain and human policies.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coordination::EngagementModel;
use crate::facts::Fact;
use crate::geometry::{Cell, Heading};
use crate::htn::{HtnDomain, SocialPolicy, Task};
use crate::human::HumanConfig;
use crate::intention::IntentionConfig;
use crate::mental::KnowledgeModel;
use crate::world::{
    Agent, AgentKind, CellInfo, EntityId, GridMap, GridWorld, Obj, Placement, PropType, PropValue,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScenarioError {
    #[error("line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{field}: {message}")]
    Field { field: String, message: String },
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("entity `{id}` on blocking cell {cell}")]
    Blocked { id: String, cell: Cell },
}

fn field(field: impl Into<String>, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Field {
        field: field.into(),
        message: message.into(),
    }
}

/// One legend entry: what a grid letter stands for.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellSpec {
    #[serde(default)]
    pub room: Option<String>,
    #[serde(default)]
    pub surface: Option<String>,
    #[serde(default)]
    pub workspace: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct GridSpec {
    /// `#` blocks, `.` is free floor of `defaultRoom`, letters map through
    /// the legend.
    pub rows: Vec<String>,
    #[serde(default)]
    pub legend: BTreeMap<char, CellSpec>,
    #[serde(default)]
    pub default_room: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityKind {
    Robot,
    Human,
    Object,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct EntitySpec {
    pub id: EntityId,
    pub kind: EntityKind,
    #[serde(default)]
    pub at: Option<Cell>,
    /// Objects: surface label to put the object on (first free cell).
    #[serde(default)]
    pub on: Option<String>,
    /// Objects: agent holding it at start.
    #[serde(default)]
    pub held_by: Option<EntityId>,
    #[serde(default, rename = "type")]
    pub type_label: Option<String>,
    #[serde(default)]
    pub props: BTreeMap<String, PropValue>,
    #[serde(default)]
    pub heading: Option<Heading>,
    #[serde(default)]
    pub reach: Option<i32>,
    #[serde(default)]
    pub view_range: Option<i32>,
    #[serde(default)]
    pub view_half_angle: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum GoalStart {
    /// Pursued from the first tick, in document order.
    #[default]
    Immediate,
    /// Pursued once intention recognition adopts it.
    OnIntention,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct GoalSpec {
    pub id: String,
    pub task: Task,
    /// Facts that together mean the goal is achieved.
    #[serde(default)]
    pub condition: Vec<Fact>,
    #[serde(default)]
    pub start: GoalStart,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct RunParams {
    #[serde(default)]
    pub policy: SocialPolicy,
    /// Ticks a requested human step may see no progress before replanning.
    #[serde(default = "default_timeout")]
    pub request_timeout: u32,
    /// Ignored requests after which an agent counts as disengaged.
    #[serde(default = "default_ignored")]
    pub ignored_requests: u32,
    #[serde(default)]
    pub engagement: EngagementModel,
    #[serde(default = "default_max_ticks")]
    pub max_ticks: u64,
}

fn default_timeout() -> u32 {
    20
}
fn default_ignored() -> u32 {
    2
}
fn default_max_ticks() -> u64 {
    300
}

impl Default for RunParams {
    fn default() -> Self {
        RunParams {
            policy: SocialPolicy::default(),
            request_timeout: default_timeout(),
            ignored_requests: default_ignored(),
            engagement: EngagementModel::default(),
            max_ticks: default_max_ticks(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct DomainSpec {
    /// Declared object properties: `"bool"` or a list of symbols.
    #[serde(default)]
    pub props: BTreeMap<String, PropType>,
    #[serde(default = "empty_domain")]
    pub htn: HtnDomain,
    #[serde(default)]
    pub intentions: Option<IntentionConfig>,
    #[serde(default)]
    pub params: RunParams,
    /// Agent id -> tasks that agent does not know how to do.
    #[serde(default)]
    pub unknown_tasks: BTreeMap<EntityId, Vec<String>>,
}

fn empty_domain() -> HtnDomain {
    HtnDomain {
        operators: Vec::new(),
        tasks: Vec::new(),
        methods: Vec::new(),
        static_facts: Vec::new(),
        depth_bound: crate::htn::domain::DEFAULT_DEPTH_BOUND,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDoc {
    pub grid: GridSpec,
    pub entities: Vec<EntitySpec>,
    #[serde(default)]
    pub goals: Vec<GoalSpec>,
    pub domain: DomainSpec,
    #[serde(default)]
    pub humans: BTreeMap<EntityId, HumanConfig>,
    #[serde(default)]
    pub seed: u64,
}

/// A loaded scenario: the initial world plus everything the run needs.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub doc: ScenarioDoc,
    pub world: GridWorld,
    /// SHA-256 of the source text, hex.
    pub hash: String,
    pub source: String,
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Scenario, ScenarioError> {
        let doc: ScenarioDoc = serde_json::from_str(text).map_err(|e| ScenarioError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        let world = build_world(&doc)?;
        check_doc(&doc, &world)?;
        let hash = Sha256::digest(text.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect();
        Ok(Scenario {
            doc,
            world,
            hash,
            source: text.to_string(),
        })
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Scenario, ScenarioError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| field(path.as_ref().display().to_string(), e.to_string()))?;
        Scenario::parse(&text)
    }

    pub fn knowledge(&self) -> KnowledgeModel {
        self.doc
            .domain
            .unknown_tasks
            .iter()
            .fold(KnowledgeModel::new(), |k, (agent, tasks)| {
                k.with_unknown(agent, tasks.iter().map(String::as_str))
            })
    }

    pub fn agents(&self) -> Vec<(EntityId, AgentKind)> {
        self.world
            .agents
            .values()
            .map(|a| (a.id.clone(), a.kind))
            .collect()
    }

    pub fn goal(&self, id: &str) -> Option<&GoalSpec> {
        self.doc.goals.iter().find(|g| g.id == id)
    }
}

fn build_map(doc: &ScenarioDoc) -> Result<GridMap, ScenarioError> {
    let g = &doc.grid;
    let height = g.rows.len();
    let width = g.rows.first().map_or(0, |r| r.chars().count());
    if height == 0 || width == 0 {
        return Err(field("grid.rows", "grid is empty"));
    }
    let mut cells = Vec::with_capacity(width * height);
    for (y, row) in g.rows.iter().enumerate() {
        if row.chars().count() != width {
            return Err(field(
                format!("grid.rows[{y}]"),
                format!("expected {width} cells"),
            ));
        }
        for (x, ch) in row.chars().enumerate() {
            let info = match ch {
                '#' => CellInfo {
                    blocking: true,
                    ..CellInfo::default()
                },
                '.' => CellInfo {
                    room: Some(g.default_room.clone().ok_or_else(|| {
                        field(
                            format!("grid.rows[{y}][{x}]"),
                            "free cell needs grid.defaultRoom",
                        )
                    })?),
                    ..CellInfo::default()
                },
                c => {
                    let spec = g.legend.get(&c).ok_or_else(|| {
                        field(
                            format!("grid.rows[{y}][{x}]"),
                            format!("`{c}` not in legend"),
                        )
                    })?;
                    let room = spec
                        .room
                        .clone()
                        .or_else(|| g.default_room.clone())
                        .ok_or_else(|| field(format!("grid.legend.{c}"), "cell has no room"))?;
                    CellInfo {
                        blocking: false,
                        room: Some(room),
                        workspace: spec.workspace.clone(),
                        surface: spec.surface.clone(),
                    }
                }
            };
            cells.push(info);
        }
    }
    Ok(GridMap {
        width: width as i32,
        height: height as i32,
        cells,
        props: doc.domain.props.clone(),
    })
}

fn build_world(doc: &ScenarioDoc) -> Result<GridWorld, ScenarioError> {
    let mut world = GridWorld::new(build_map(doc)?);
    let mut seen = BTreeSet::new();
    for (i, e) in doc.entities.iter().enumerate() {
        if !seen.insert(e.id.clone()) {
            return Err(ScenarioError::DuplicateId(e.id.clone()));
        }
        let path = format!("entities[{i}]");
        match e.kind {
            EntityKind::Robot | EntityKind::Human => {
                let at =
                    e.at.ok_or_else(|| field(format!("{path}.at"), "agent needs a cell"))?;
                check_cell(&world.map, &e.id, at)?;
                if !world.map.is_walkable(at) {
                    return Err(field(
                        format!("{path}.at"),
                        "agents cannot stand on a surface",
                    ));
                }
                let kind = if e.kind == EntityKind::Robot {
                    AgentKind::Robot
                } else {
                    AgentKind::Human
                };
                let mut a = Agent::new(e.id.clone(), kind, at);
                if let Some(h) = e.heading {
                    a.heading = h;
                }
                if let Some(r) = e.reach {
                    a.reach = r;
                }
                if let Some(r) = e.view_range {
                    a.view_range = r;
                }
                if let Some(v) = e.view_half_angle {
                    a.view_half_angle = v;
                }
                world.agents.insert(e.id.clone(), a);
            }
            EntityKind::Object => {}
        }
    }
    if world
        .agents
        .values()
        .filter(|a| {
            world
                .agents
                .values()
                .filter(|b| b.position == a.position)
                .count()
                > 1
        })
        .count()
        > 0
    {
        return Err(field("entities", "two agents share a cell"));
    }
    for (i, e) in doc
        .entities
        .iter()
        .enumerate()
        .filter(|(_, e)| e.kind == EntityKind::Object)
    {
        let path = format!("entities[{i}]");
        let type_label = e
            .type_label
            .clone()
            .ok_or_else(|| field(format!("{path}.type"), "object needs a type"))?;
        for (p, v) in &e.props {
            let ty = doc
                .domain
                .props
                .get(p)
                .ok_or_else(|| field(format!("{path}.props.{p}"), "undeclared property"))?;
            if !ty.admits(v) {
                return Err(field(
                    format!("{path}.props.{p}"),
                    format!("value {v} not admitted"),
                ));
            }
        }
        let placement = match (e.at, &e.on, &e.held_by) {
            (Some(c), None, None) => {
                check_cell(&world.map, &e.id, c)?;
                if world.map.surface(c).is_some() {
                    Placement::OnSurface(c)
                } else {
                    Placement::Cell(c)
                }
            }
            (None, Some(s), None) => {
                let cells = world.map.surface_cells(s);
                if cells.is_empty() {
                    return Err(field(
                        format!("{path}.on"),
                        format!("unknown surface `{s}`"),
                    ));
                }
                let taken: BTreeSet<Cell> = world
                    .objects
                    .values()
                    .filter_map(|o| match o.placement {
                        Placement::OnSurface(c) => Some(c),
                        _ => None,
                    })
                    .collect();
                let c = cells
                    .iter()
                    .copied()
                    .find(|c| !taken.contains(c))
                    .unwrap_or(cells[0]);
                Placement::OnSurface(c)
            }
            (None, None, Some(h)) => {
                let agent = world.agents.get_mut(h).ok_or_else(|| {
                    field(format!("{path}.heldBy"), format!("unknown agent `{h}`"))
                })?;
                if agent.holding.is_some() {
                    return Err(field(
                        format!("{path}.heldBy"),
                        format!("`{h}` already holds an object"),
                    ));
                }
                agent.holding = Some(e.id.clone());
                Placement::HeldBy(h.clone())
            }
            _ => return Err(field(path, "object needs exactly one of at, on, heldBy")),
        };
        world.objects.insert(
            e.id.clone(),
            Obj {
                id: e.id.clone(),
                type_label,
                placement,
                props: e.props.clone(),
            },
        );
    }
    world.check_invariants().map_err(|m| field("entities", m))?;
    Ok(world)
}

fn check_cell(map: &GridMap, id: &str, c: Cell) -> Result<(), ScenarioError> {
    if !map.in_bounds(c) {
        return Err(field(format!("{id}.at"), format!("{c} out of bounds")));
    }
    if map.is_blocking(c) {
        return Err(ScenarioError::Blocked {
            id: id.to_string(),
            cell: c,
        });
    }
    Ok(())
}

fn check_doc(doc: &ScenarioDoc, world: &GridWorld) -> Result<(), ScenarioError> {
    doc.domain
        .htn
        .check()
        .map_err(|e| field("domain.htn", e.to_string()))?;
    let mut ids = BTreeSet::new();
    for (i, g) in doc.goals.iter().enumerate() {
        if !ids.insert(&g.id) {
            return Err(ScenarioError::DuplicateId(g.id.clone()));
        }
        if doc.domain.htn.task(&g.task.name).is_none()
            && doc.domain.htn.operator(&g.task.name).is_none()
        {
            return Err(field(
                format!("goals[{i}].task"),
                format!("undeclared task `{}`", g.task.name),
            ));
        }
    }
    for id in doc.humans.keys() {
        if world.agents.get(id).map(|a| a.kind) != Some(AgentKind::Human) {
            return Err(field(format!("humans.{id}"), "not a human agent"));
        }
    }
    for (i, g) in doc.goals.iter().enumerate() {
        if g.start == GoalStart::OnIntention {
            let known = doc
                .domain
                .intentions
                .as_ref()
                .is_some_and(|c| c.goals.iter().any(|ig| ig.id == g.id));
            if !known {
                return Err(field(
                    format!("goals[{i}].start"),
                    "onIntention goal needs a matching intention goal id",
                ));
            }
        }
    }
    if let Some(cfg) = &doc.domain.intentions {
        if world.agents.get(&cfg.agent).map(|a| a.kind) != Some(AgentKind::Human) {
            return Err(field(
                "domain.intentions.agent",
                format!("`{}` is not a human agent", cfg.agent),
            ));
        }
        cfg.initial_posterior()
            .map_err(|e| field("domain.intentions", e.to_string()))?;
    }
    doc.domain
        .params
        .engagement
        .check()
        .map_err(|m| field("domain.params.engagement", m))?;
    Ok(())
}
