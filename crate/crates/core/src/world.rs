//! The deterministic tick-based grid world: entities, simultaneous action
//! execution with lexicographic conflict resolution, and event emission.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::geometry::{Cell, Heading};

pub type EntityId = String;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentKind {
    Robot,
    Human,
}

impl AgentKind {
    pub fn label(self) -> &'static str {
        match self {
            AgentKind::Robot => "robot",
            AgentKind::Human => "human",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub id: EntityId,
    pub kind: AgentKind,
    pub position: Cell,
    pub heading: Heading,
    pub holding: Option<EntityId>,
    pub reach: i32,
    pub view_range: i32,
    pub view_half_angle: f64,
    /// Object currently held out to a receiver (arm extended).
    pub offering: Option<(EntityId, EntityId)>,
    /// Last pointing gesture: target and the tick it was performed at.
    pub pointing: Option<(EntityId, u64)>,
}

impl Agent {
    pub fn new(id: impl Into<EntityId>, kind: AgentKind, position: Cell) -> Self {
        Agent {
            id: id.into(),
            kind,
            position,
            heading: Heading::E,
            holding: None,
            reach: 1,
            view_range: 6,
            view_half_angle: 60.0,
            offering: None,
            pointing: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Placement {
    Cell(Cell),
    OnSurface(Cell),
    HeldBy(EntityId),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PropValue {
    Bool(bool),
    Symbol(String),
}

impl fmt::Display for PropValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PropValue::Bool(true) => f.write_str("TRUE"),
            PropValue::Bool(false) => f.write_str("FALSE"),
            PropValue::Symbol(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Obj {
    pub id: EntityId,
    pub type_label: String,
    pub placement: Placement,
    pub props: BTreeMap<String, PropValue>,
}

/// Value domain of a declared object property.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PropType {
    Bool,
    Symbols(Vec<String>),
}

impl PropType {
    pub fn admits(&self, value: &PropValue) -> bool {
        match (self, value) {
            (PropType::Bool, PropValue::Bool(_)) => true,
            (PropType::Symbols(allowed), PropValue::Symbol(s)) => allowed.contains(s),
            _ => false,
        }
    }

    pub fn values(&self) -> Vec<PropValue> {
        match self {
            PropType::Bool => vec![PropValue::Bool(false), PropValue::Bool(true)],
            PropType::Symbols(s) => s.iter().cloned().map(PropValue::Symbol).collect(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellInfo {
    pub blocking: bool,
    pub room: Option<String>,
    pub workspace: Option<String>,
    pub surface: Option<String>,
}

/// The static part of a world: layout, landmarks and the property vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMap {
    pub width: i32,
    pub height: i32,
    pub cells: Vec<CellInfo>,
    pub props: BTreeMap<String, PropType>,
}

impl GridMap {
    pub fn in_bounds(&self, c: Cell) -> bool {
        c.x >= 0 && c.y >= 0 && c.x < self.width && c.y < self.height
    }

    pub fn info(&self, c: Cell) -> Option<&CellInfo> {
        if self.in_bounds(c) {
            self.cells.get((c.y * self.width + c.x) as usize)
        } else {
            None
        }
    }

    pub fn is_blocking(&self, c: Cell) -> bool {
        self.info(c).map_or(true, |i| i.blocking)
    }

    /// Agents may stand here: in bounds, not a wall, not a surface.
    pub fn is_walkable(&self, c: Cell) -> bool {
        self.info(c)
            .is_some_and(|i| !i.blocking && i.surface.is_none())
    }

    pub fn room(&self, c: Cell) -> Option<&str> {
        self.info(c).and_then(|i| i.room.as_deref())
    }

    pub fn workspace(&self, c: Cell) -> Option<&str> {
        self.info(c).and_then(|i| i.workspace.as_deref())
    }

    pub fn surface(&self, c: Cell) -> Option<&str> {
        self.info(c).and_then(|i| i.surface.as_deref())
    }

    pub fn all_cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.height).flat_map(move |y| (0..self.width).map(move |x| Cell::new(x, y)))
    }

    pub fn surface_cells(&self, surface: &str) -> Vec<Cell> {
        self.all_cells()
            .filter(|&c| self.surface(c) == Some(surface))
            .collect()
    }

    pub fn room_cells(&self, room: &str) -> Vec<Cell> {
        self.all_cells()
            .filter(|&c| self.room(c) == Some(room))
            .collect()
    }

    pub fn workspace_cells(&self, ws: &str) -> Vec<Cell> {
        self.all_cells()
            .filter(|&c| self.workspace(c) == Some(ws))
            .collect()
    }

    /// Names of rooms and surfaces; these can appear as fact objects.
    pub fn landmarks(&self) -> BTreeSet<String> {
        self.cells
            .iter()
            .flat_map(|i| i.room.iter().chain(i.surface.iter()))
            .cloned()
            .collect()
    }
}

/// A primitive agent action executed by the kernel in one tick.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum PrimitiveAction {
    Move {
        dir: Heading,
    },
    PickUp {
        object: EntityId,
    },
    Place {
        object: EntityId,
        cell: Cell,
    },
    Give {
        object: EntityId,
        to: EntityId,
    },
    Take {
        object: EntityId,
        from: EntityId,
    },
    LookAt {
        target: EntityId,
    },
    PointAt {
        target: EntityId,
    },
    StateOp {
        object: EntityId,
        prop: String,
        value: PropValue,
    },
    Wait,
}

impl PrimitiveAction {
    pub fn is_manipulation(&self) -> bool {
        matches!(
            self,
            PrimitiveAction::PickUp { .. }
                | PrimitiveAction::Place { .. }
                | PrimitiveAction::Give { .. }
                | PrimitiveAction::Take { .. }
                | PrimitiveAction::StateOp { .. }
        )
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            PrimitiveAction::Move { .. } => "move",
            PrimitiveAction::PickUp { .. } => "pickUp",
            PrimitiveAction::Place { .. } => "place",
            PrimitiveAction::Give { .. } => "give",
            PrimitiveAction::Take { .. } => "take",
            PrimitiveAction::LookAt { .. } => "lookAt",
            PrimitiveAction::PointAt { .. } => "pointAt",
            PrimitiveAction::StateOp { .. } => "stateOp",
            PrimitiveAction::Wait => "wait",
        }
    }
}

impl fmt::Display for PrimitiveAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PrimitiveAction::Move { dir } => write!(f, "Move({dir})"),
            PrimitiveAction::PickUp { object } => write!(f, "PickUp({object})"),
            PrimitiveAction::Place { object, cell } => write!(f, "Place({object},{cell})"),
            PrimitiveAction::Give { object, to } => write!(f, "Give({object},{to})"),
            PrimitiveAction::Take { object, from } => write!(f, "Take({object},{from})"),
            PrimitiveAction::LookAt { target } => write!(f, "LookAt({target})"),
            PrimitiveAction::PointAt { target } => write!(f, "PointAt({target})"),
            PrimitiveAction::StateOp {
                object,
                prop,
                value,
            } => {
                write!(f, "StateOp({object},{prop},{value})")
            }
            PrimitiveAction::Wait => f.write_str("Wait"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FailReason {
    NotReachable,
    HandsFull,
    CellBlocked,
    Taken,
    NotHolding,
    NotAdjacent,
    NotOffered,
    UnknownEntity,
    UnknownProp,
    InvalidValue,
    InvalidTarget,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Outcome {
    Succeeded,
    Failed(FailReason),
}

impl Outcome {
    pub fn succeeded(self) -> bool {
        self == Outcome::Succeeded
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub tick: u64,
    pub actor: EntityId,
    pub action: PrimitiveAction,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum Resource {
    Obj(EntityId),
    Hand(EntityId),
    Body(EntityId),
    Cell(Cell),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridWorld {
    pub map: Arc<GridMap>,
    pub agents: BTreeMap<EntityId, Agent>,
    pub objects: BTreeMap<EntityId, Obj>,
    pub tick: u64,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("unknown agent `{0}`")]
pub struct UnknownAgent(pub EntityId);

impl GridWorld {
    pub fn new(map: GridMap) -> Self {
        GridWorld {
            map: Arc::new(map),
            agents: BTreeMap::new(),
            objects: BTreeMap::new(),
            tick: 0,
        }
    }

    pub fn contains(&self, id: &str) -> bool {
        self.agents.contains_key(id) || self.objects.contains_key(id)
    }

    pub fn entity_ids(&self) -> impl Iterator<Item = &EntityId> {
        self.agents.keys().chain(self.objects.keys())
    }

    /// Cell an entity occupies; held objects resolve to their holder's cell.
    pub fn position_of(&self, id: &str) -> Option<Cell> {
        if let Some(a) = self.agents.get(id) {
            return Some(a.position);
        }
        match &self.objects.get(id)?.placement {
            Placement::Cell(c) | Placement::OnSurface(c) => Some(*c),
            Placement::HeldBy(h) => self.agents.get(h).map(|a| a.position),
        }
    }

    pub fn holder_of(&self, obj: &str) -> Option<&EntityId> {
        match &self.objects.get(obj)?.placement {
            Placement::HeldBy(h) => Some(h),
            _ => None,
        }
    }

    pub fn agent_at(&self, c: Cell) -> Option<&Agent> {
        self.agents.values().find(|a| a.position == c)
    }

    /// Within reach radius (king distance) and in the same room.
    pub fn reachable(&self, agent: &Agent, c: Cell) -> bool {
        agent.position.chebyshev(c) <= agent.reach
            && self.map.room(agent.position).is_some()
            && self.map.room(agent.position) == self.map.room(c)
    }

    pub fn humans(&self) -> impl Iterator<Item = &Agent> {
        self.agents.values().filter(|a| a.kind == AgentKind::Human)
    }

    pub fn robots(&self) -> impl Iterator<Item = &Agent> {
        self.agents.values().filter(|a| a.kind == AgentKind::Robot)
    }

    /// Checks a single action against the current state, as if every other
    /// agent waited this tick.
    pub fn check_action(&self, actor: &str, action: &PrimitiveAction) -> Result<(), FailReason> {
        self.check(actor, action, false)
    }

    fn check(&self, actor: &str, action: &PrimitiveAction, paired: bool) -> Result<(), FailReason> {
        use FailReason::*;
        let me = self.agents.get(actor).ok_or(UnknownEntity)?;
        match action {
            PrimitiveAction::Wait => Ok(()),
            PrimitiveAction::Move { dir } => {
                let target = me.position.offset(*dir);
                if !self.map.is_walkable(target) || self.agent_at(target).is_some() {
                    return Err(CellBlocked);
                }
                Ok(())
            }
            PrimitiveAction::PickUp { object } => {
                self.objects.get(object).ok_or(UnknownEntity)?;
                if me.holding.is_some() {
                    return Err(HandsFull);
                }
                if self.holder_of(object).is_some() {
                    return Err(Taken);
                }
                let at = self.position_of(object).ok_or(UnknownEntity)?;
                if !self.reachable(me, at) {
                    return Err(NotReachable);
                }
                Ok(())
            }
            PrimitiveAction::Place { object, cell } => {
                self.objects.get(object).ok_or(UnknownEntity)?;
                if me.holding.as_deref() != Some(object.as_str()) {
                    return Err(NotHolding);
                }
                if self.map.is_blocking(*cell) || self.agent_at(*cell).is_some() {
                    return Err(CellBlocked);
                }
                if !self.reachable(me, *cell) {
                    return Err(NotReachable);
                }
                Ok(())
            }
            PrimitiveAction::Give { object, to } => {
                self.objects.get(object).ok_or(UnknownEntity)?;
                let other = self.agents.get(to).ok_or(UnknownEntity)?;
                if other.id == me.id {
                    return Err(InvalidTarget);
                }
                if me.holding.as_deref() != Some(object.as_str()) {
                    return Err(NotHolding);
                }
                if me.position.chebyshev(other.position) > 1 {
                    return Err(NotAdjacent);
                }
                if other.holding.is_some() {
                    return Err(HandsFull);
                }
                Ok(())
            }
            PrimitiveAction::Take { object, from } => {
                self.objects.get(object).ok_or(UnknownEntity)?;
                let giver = self.agents.get(from).ok_or(UnknownEntity)?;
                if giver.id == me.id {
                    return Err(InvalidTarget);
                }
                if me.holding.is_some() {
                    return Err(HandsFull);
                }
                if giver.holding.as_deref() != Some(object.as_str()) {
                    return Err(NotHolding);
                }
                if me.position.chebyshev(giver.position) > 1 {
                    return Err(NotAdjacent);
                }
                let offered = giver
                    .offering
                    .as_ref()
                    .is_some_and(|(o, r)| o == object && r == actor);
                if !offered && !paired {
                    return Err(NotOffered);
                }
                Ok(())
            }
            PrimitiveAction::LookAt { target } | PrimitiveAction::PointAt { target } => {
                if !self.contains(target) {
                    return Err(UnknownEntity);
                }
                if target == actor {
                    return Err(InvalidTarget);
                }
                Ok(())
            }
            PrimitiveAction::StateOp {
                object,
                prop,
                value,
            } => {
                self.objects.get(object).ok_or(UnknownEntity)?;
                let ty = self.map.props.get(prop).ok_or(UnknownProp)?;
                if !ty.admits(value) {
                    return Err(InvalidValue);
                }
                match self.holder_of(object) {
                    Some(h) if h == actor => Ok(()),
                    Some(_) => Err(Taken),
                    None => {
                        let at = self.position_of(object).ok_or(UnknownEntity)?;
                        if self.reachable(me, at) {
                            Ok(())
                        } else {
                            Err(NotReachable)
                        }
                    }
                }
            }
        }
    }

    fn claims(&self, actor: &str, action: &PrimitiveAction, paired: bool) -> Vec<Resource> {
        match action {
            PrimitiveAction::Move { dir } => {
                let target = self.agents[actor].position.offset(*dir);
                vec![Resource::Cell(target), Resource::Body(actor.to_string())]
            }
            PrimitiveAction::PickUp { object } => {
                vec![
                    Resource::Obj(object.clone()),
                    Resource::Hand(actor.to_string()),
                ]
            }
            PrimitiveAction::Place { object, cell } => {
                vec![Resource::Obj(object.clone()), Resource::Cell(*cell)]
            }
            PrimitiveAction::Give { object, to } if paired => {
                vec![Resource::Obj(object.clone()), Resource::Hand(to.clone())]
            }
            PrimitiveAction::Give { object, .. } => vec![Resource::Obj(object.clone())],
            PrimitiveAction::Take { object, from } => vec![
                Resource::Obj(object.clone()),
                Resource::Hand(actor.to_string()),
                Resource::Body(from.clone()),
            ],
            PrimitiveAction::StateOp { object, .. } => vec![Resource::Obj(object.clone())],
            PrimitiveAction::LookAt { .. }
            | PrimitiveAction::PointAt { .. }
            | PrimitiveAction::Wait => Vec::new(),
        }
    }

    /// Applies all agents' actions simultaneously. Agents absent from
    /// `actions` wait; entries for unknown agents are ignored. Conflicting
    /// claims on the same object, hand, body or cell go to the
    /// lexicographically smallest agent id; the others fail.
    pub fn step(&self, actions: &BTreeMap<EntityId, PrimitiveAction>) -> (GridWorld, Vec<Event>) {
        let wait = PrimitiveAction::Wait;
        let chosen: BTreeMap<&EntityId, &PrimitiveAction> = self
            .agents
            .keys()
            .map(|id| (id, actions.get(id).unwrap_or(&wait)))
            .collect();

        // Give/Take pairs issued in the same tick transfer immediately.
        let mut pair_of: BTreeMap<&str, String> = BTreeMap::new();
        for (&giver, &act) in &chosen {
            if let PrimitiveAction::Give { object, to } = act {
                if let Some(PrimitiveAction::Take { object: o2, from }) = chosen.get(to).copied() {
                    if o2 == object
                        && from == giver
                        && self.check(giver, act, true).is_ok()
                        && self.check(to, chosen[to], true).is_ok()
                    {
                        let token = format!("pair:{giver}");
                        pair_of.insert(giver.as_str(), token.clone());
                        pair_of.insert(to.as_str(), token);
                    }
                }
            }
        }

        let mut claimed: BTreeMap<Resource, String> = BTreeMap::new();
        let mut outcomes: BTreeMap<&EntityId, Outcome> = BTreeMap::new();
        for (&id, &act) in &chosen {
            let paired = pair_of.contains_key(id.as_str());
            let outcome = match self.check(id, act, paired) {
                Err(r) => Outcome::Failed(r),
                Ok(()) => {
                    let token = pair_of
                        .get(id.as_str())
                        .cloned()
                        .unwrap_or_else(|| id.clone());
                    let wanted = self.claims(id, act, paired);
                    let clash = wanted
                        .iter()
                        .find(|r| claimed.get(*r).is_some_and(|t| *t != token));
                    match clash {
                        Some(Resource::Cell(_)) => Outcome::Failed(FailReason::CellBlocked),
                        Some(_) => Outcome::Failed(FailReason::Taken),
                        None => {
                            for r in wanted {
                                claimed.insert(r, token.clone());
                            }
                            Outcome::Succeeded
                        }
                    }
                }
            };
            outcomes.insert(id, outcome);
        }
        // A pair only transfers if both halves won their claims.
        for (&id, outcome) in outcomes.clone().iter() {
            if let Some(token) = pair_of.get(id.as_str()) {
                let partner_ok = outcomes
                    .iter()
                    .filter(|(other, _)| {
                        **other != id && pair_of.get(other.as_str()) == Some(token)
                    })
                    .all(|(_, o)| o.succeeded());
                if outcome.succeeded() && !partner_ok {
                    let reason = match chosen[id] {
                        PrimitiveAction::Take { .. } => FailReason::NotOffered,
                        _ => FailReason::Taken,
                    };
                    outcomes.insert(id, Outcome::Failed(reason));
                }
            }
        }

        let mut next = self.clone();
        next.tick = self.tick + 1;
        let mut events = Vec::with_capacity(chosen.len());
        for (&id, &act) in &chosen {
            let outcome = outcomes[id];
            if outcome.succeeded() {
                next.apply(id, act, pair_of.contains_key(id.as_str()));
            }
            events.push(Event {
                tick: next.tick,
                actor: id.clone(),
                action: act.clone(),
                outcome,
            });
        }
        // Offers lapse when the giver does something else or the receiver leaves.
        let ids: Vec<EntityId> = next.agents.keys().cloned().collect();
        for id in ids {
            let keep = match (&next.agents[&id].offering, chosen.get(&id).copied()) {
                (None, _) => true,
                (Some((o, r)), act) => {
                    let still = next.agents[&id].holding.as_deref() == Some(o.as_str())
                        && next.agents.get(r).is_some_and(|ra| {
                            ra.position.chebyshev(next.agents[&id].position) <= 1
                        });
                    let continuing = match act {
                        None | Some(PrimitiveAction::Wait) => true,
                        Some(PrimitiveAction::Give { object, to }) => object == o && to == r,
                        Some(_) => !outcomes[&id].succeeded(),
                    };
                    still && continuing
                }
            };
            if !keep {
                next.agents.get_mut(&id).unwrap().offering = None;
            }
        }
        (next, events)
    }

    fn apply(&mut self, actor: &str, action: &PrimitiveAction, paired: bool) {
        match action {
            PrimitiveAction::Wait => {}
            PrimitiveAction::Move { dir } => {
                let a = self.agents.get_mut(actor).unwrap();
                a.position = a.position.offset(*dir);
                a.heading = *dir;
            }
            PrimitiveAction::PickUp { object } => {
                self.agents.get_mut(actor).unwrap().holding = Some(object.clone());
                self.objects.get_mut(object).unwrap().placement =
                    Placement::HeldBy(actor.to_string());
            }
            PrimitiveAction::Place { object, cell } => {
                let placement = if self.map.surface(*cell).is_some() {
                    Placement::OnSurface(*cell)
                } else {
                    Placement::Cell(*cell)
                };
                let a = self.agents.get_mut(actor).unwrap();
                a.holding = None;
                a.offering = None;
                self.objects.get_mut(object).unwrap().placement = placement;
            }
            PrimitiveAction::Give { object, to } => {
                if paired {
                    self.transfer(actor, to, object);
                } else {
                    self.agents.get_mut(actor).unwrap().offering =
                        Some((object.clone(), to.clone()));
                }
            }
            PrimitiveAction::Take { object, from } => {
                // A paired Take is applied by the matching Give.
                if !paired {
                    self.transfer(from, actor, object);
                }
            }
            PrimitiveAction::LookAt { target } => {
                self.face(actor, target);
            }
            PrimitiveAction::PointAt { target } => {
                self.face(actor, target);
                let tick = self.tick;
                self.agents.get_mut(actor).unwrap().pointing = Some((target.clone(), tick));
            }
            PrimitiveAction::StateOp {
                object,
                prop,
                value,
            } => {
                self.objects
                    .get_mut(object)
                    .unwrap()
                    .props
                    .insert(prop.clone(), value.clone());
            }
        }
    }

    fn transfer(&mut self, from: &str, to: &str, object: &str) {
        let giver = self.agents.get_mut(from).unwrap();
        giver.holding = None;
        giver.offering = None;
        self.agents.get_mut(to).unwrap().holding = Some(object.to_string());
        self.objects.get_mut(object).unwrap().placement = Placement::HeldBy(to.to_string());
    }

    fn face(&mut self, actor: &str, target: &str) {
        let from = self.agents[actor].position;
        if let Some(to) = self.position_of(target) {
            if let Some(h) = Heading::toward(from, to) {
                self.agents.get_mut(actor).unwrap().heading = h;
            }
        }
    }

    /// Every action whose outcome would be `Succeeded` if all other agents waited.
    pub fn legal_actions(&self, agent: &str) -> Result<BTreeSet<PrimitiveAction>, UnknownAgent> {
        let me = self
            .agents
            .get(agent)
            .ok_or_else(|| UnknownAgent(agent.to_string()))?;
        let mut candidates = vec![PrimitiveAction::Wait];
        candidates.extend(
            Heading::ALL
                .iter()
                .map(|&dir| PrimitiveAction::Move { dir }),
        );
        for id in self.entity_ids() {
            candidates.push(PrimitiveAction::LookAt { target: id.clone() });
            candidates.push(PrimitiveAction::PointAt { target: id.clone() });
        }
        for (oid, _) in &self.objects {
            candidates.push(PrimitiveAction::PickUp {
                object: oid.clone(),
            });
            for (prop, ty) in &self.map.props {
                for value in ty.values() {
                    candidates.push(PrimitiveAction::StateOp {
                        object: oid.clone(),
                        prop: prop.clone(),
                        value,
                    });
                }
            }
        }
        if let Some(held) = &me.holding {
            for dy in -me.reach..=me.reach {
                for dx in -me.reach..=me.reach {
                    let cell = Cell::new(me.position.x + dx, me.position.y + dy);
                    candidates.push(PrimitiveAction::Place {
                        object: held.clone(),
                        cell,
                    });
                }
            }
            for other in self.agents.keys() {
                candidates.push(PrimitiveAction::Give {
                    object: held.clone(),
                    to: other.clone(),
                });
            }
        }
        for other in self.agents.values() {
            if let Some(o) = &other.holding {
                candidates.push(PrimitiveAction::Take {
                    object: o.clone(),
                    from: other.id.clone(),
                });
            }
        }
        Ok(candidates
            .into_iter()
            .filter(|a| self.check(agent, a, false).is_ok())
            .collect())
    }

    /// Structural invariants; returns a description of the first violation.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut seen = BTreeSet::new();
        for id in self.entity_ids() {
            if !seen.insert(id) {
                return Err(format!("duplicate id {id}"));
            }
        }
        for a in self.agents.values() {
            if !self.map.is_walkable(a.position) {
                return Err(format!(
                    "agent {} on non-walkable cell {}",
                    a.id, a.position
                ));
            }
            if let Some(o) = &a.holding {
                if self.objects.get(o).map(|ob| &ob.placement)
                    != Some(&Placement::HeldBy(a.id.clone()))
                {
                    return Err(format!("agent {} holding {o} inconsistent", a.id));
                }
            }
        }
        for o in self.objects.values() {
            match &o.placement {
                Placement::Cell(c) | Placement::OnSurface(c) => {
                    if self.map.is_blocking(*c) {
                        return Err(format!("object {} on blocking cell {c}", o.id));
                    }
                }
                Placement::HeldBy(h) => {
                    if self.agents.get(h).and_then(|a| a.holding.as_deref()) != Some(o.id.as_str())
                    {
                        return Err(format!("object {} held by {h} inconsistent", o.id));
                    }
                }
            }
        }
        Ok(())
    }

    /// Walkable cells, as a navigation graph, ignoring other agents unless
    /// `avoid_agents` is set (the mover's own cell never counts as blocked).
    fn passable(&self, mover: &str, c: Cell, avoid_agents: bool) -> bool {
        self.map.is_walkable(c)
            && (!avoid_agents || self.agent_at(c).map_or(true, |a| a.id == mover))
    }

    /// First move of a shortest 8-connected path from the mover's cell to any
    /// cell satisfying `goal`. `None` if already there or unreachable.
    /// Paths avoid other agents when possible.
    pub fn next_move_toward(&self, mover: &str, goal: impl Fn(Cell) -> bool) -> Option<Heading> {
        let start = self.agents.get(mover)?.position;
        if goal(start) {
            return None;
        }
        for avoid in [true, false] {
            if let Some(h) = self.bfs_first_step(mover, start, &goal, avoid) {
                return Some(h);
            }
        }
        None
    }

    fn bfs_first_step(
        &self,
        mover: &str,
        start: Cell,
        goal: &impl Fn(Cell) -> bool,
        avoid: bool,
    ) -> Option<Heading> {
        let mut first: BTreeMap<Cell, Heading> = BTreeMap::new();
        let mut queue = VecDeque::new();
        let mut seen = BTreeSet::from([start]);
        queue.push_back(start);
        while let Some(c) = queue.pop_front() {
            for h in Heading::ALL {
                let n = c.offset(h);
                if seen.contains(&n) || !self.passable(mover, n, avoid) {
                    continue;
                }
                seen.insert(n);
                let fh = if c == start { h } else { first[&c] };
                if goal(n) {
                    // The first hop must itself be enterable this tick.
                    if self.agent_at(start.offset(fh)).is_some() {
                        return None;
                    }
                    return Some(fh);
                }
                first.insert(n, fh);
                queue.push_back(n);
            }
        }
        None
    }
}
