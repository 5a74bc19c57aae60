//! Situation assessment: derive the symbolic fact base from the world and a
//! short history of previous worlds.

use std::collections::BTreeSet;

use crate::facts::{Fact, FactBase, Predicate, Term};
use crate::geometry::{bearing_offset, bresenham, Cell};
use crate::world::{Agent, GridWorld, Placement};

/// Gaze cone used for `isLookingAt`.
pub const LOOK_HALF_ANGLE: f64 = 22.5;
/// Ticks a pointing gesture stays registered after it is performed.
pub const POINTING_PERSISTENCE: u64 = 3;
/// Number of worlds (current included) the motion predicate looks back over.
pub const MOTION_WINDOW: usize = 3;

/// Range, view cone and line of sight. A target in the agent's own cell is
/// always visible.
pub fn can_see(world: &GridWorld, agent: &Agent, target: Cell) -> bool {
    if target == agent.position {
        return true;
    }
    let range = i64::from(agent.view_range);
    if agent.position.dist2(target) > range * range {
        return false;
    }
    if bearing_offset(agent.heading, agent.position, target) > agent.view_half_angle + 1e-9 {
        return false;
    }
    bresenham(agent.position, target)
        .into_iter()
        .all(|c| !world.map.is_blocking(c))
}

/// Every entity visible to `agent`, itself included.
pub fn visible_entities(world: &GridWorld, agent: &Agent) -> BTreeSet<String> {
    world
        .entity_ids()
        .filter(|id| {
            *id == &agent.id
                || world
                    .position_of(id)
                    .is_some_and(|c| can_see(world, agent, c))
        })
        .cloned()
        .collect()
}

/// Pure, deterministic assessment. `history` holds previous worlds, oldest
/// first; motion facts need at least [`MOTION_WINDOW`] worlds in total.
pub fn assess(world: &GridWorld, history: &[GridWorld]) -> FactBase {
    let mut fb = FactBase::new(world.tick);
    let map = &world.map;

    for a in world.agents.values() {
        if let Some(room) = map.room(a.position) {
            fb.insert(Fact::rel(&a.id, Predicate::IsIn, room));
        }
        if let Some(o) = &a.holding {
            fb.insert(Fact::rel(&a.id, Predicate::IsHolding, o));
        }
    }
    for o in world.objects.values() {
        match &o.placement {
            Placement::HeldBy(_) => {}
            Placement::Cell(c) | Placement::OnSurface(c) => {
                if let Some(room) = map.room(*c) {
                    fb.insert(Fact::rel(&o.id, Predicate::IsIn, room));
                }
                if let Some(s) = map.surface(*c) {
                    fb.insert(Fact::rel(&o.id, Predicate::IsOn, s));
                }
            }
        }
        for (name, value) in &o.props {
            fb.insert(Fact::new(
                &o.id,
                Predicate::Prop(name.clone()),
                Term::from(value),
            ));
        }
    }

    // Placed (non-held) entities for adjacency.
    let placed: Vec<(&String, Cell)> = world
        .entity_ids()
        .filter(|id| world.holder_of(id).is_none())
        .filter_map(|id| world.position_of(id).map(|c| (id, c)))
        .collect();
    for (i, (a, ca)) in placed.iter().enumerate() {
        for (b, cb) in placed.iter().skip(i + 1) {
            if ca.chebyshev(*cb) <= 1 {
                fb.insert(Fact::rel(*a, Predicate::IsNextTo, *b));
                fb.insert(Fact::rel(*b, Predicate::IsNextTo, *a));
            }
        }
    }

    for agent in world.agents.values() {
        let mut gaze: Option<(i64, &String)> = None;
        for id in world.entity_ids() {
            if id == &agent.id {
                continue;
            }
            let Some(c) = world.position_of(id) else {
                continue;
            };
            let visible = can_see(world, agent, c);
            if visible {
                fb.insert(Fact::rel(&agent.id, Predicate::CanSee, id));
                if c != agent.position
                    && bearing_offset(agent.heading, agent.position, c) <= LOOK_HALF_ANGLE + 1e-9
                {
                    let d = agent.position.dist2(c);
                    if gaze.map_or(true, |(best, _)| d < best) {
                        gaze = Some((d, id));
                    }
                }
            }
            if world.objects.contains_key(id)
                && world.holder_of(id) != Some(&agent.id)
                && world.reachable(agent, c)
            {
                fb.insert(Fact::rel(&agent.id, Predicate::CanReach, id));
            }
        }
        if let Some((_, id)) = gaze {
            fb.insert(Fact::rel(&agent.id, Predicate::IsLookingAt, id));
        }
        if let Some((target, at)) = &agent.pointing {
            if world.tick.saturating_sub(*at) <= POINTING_PERSISTENCE && world.contains(target) {
                fb.insert(Fact::rel(&agent.id, Predicate::IsPointingAt, target));
            }
        }
    }

    if history.len() + 1 >= MOTION_WINDOW {
        let window: Vec<&GridWorld> = history[history.len() + 1 - MOTION_WINDOW..]
            .iter()
            .chain(std::iter::once(world))
            .collect();
        for agent in world.agents.values() {
            for id in world.entity_ids() {
                if id == &agent.id || world.holder_of(id) == Some(&agent.id) {
                    continue;
                }
                let dists: Option<Vec<i32>> = window
                    .iter()
                    .map(|w| Some(w.position_of(&agent.id)?.chebyshev(w.position_of(id)?)))
                    .collect();
                let Some(d) = dists else { continue };
                let non_increasing = d.windows(2).all(|p| p[1] <= p[0]);
                if non_increasing && d[0] - d[d.len() - 1] >= 1 {
                    fb.insert(Fact::rel(&agent.id, Predicate::IsMovingToward, id));
                }
            }
        }
    }
    fb
}

/// `(added, removed)` between two fact bases, ignoring derivation ticks.
pub fn diff(before: &FactBase, after: &FactBase) -> (BTreeSet<Fact>, BTreeSet<Fact>) {
    let added = after.facts.difference(&before.facts).cloned().collect();
    let removed = before.facts.difference(&after.facts).cloned().collect();
    (added, removed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Heading;
    use crate::world::{Agent, AgentKind, CellInfo, GridMap, Obj, PrimitiveAction};
    use std::collections::BTreeMap;

    fn room_map(w: i32, h: i32) -> GridMap {
        GridMap {
            width: w,
            height: h,
            cells: vec![
                CellInfo {
                    room: Some("ROOM".into()),
                    ..CellInfo::default()
                };
                (w * h) as usize
            ],
            props: BTreeMap::new(),
        }
    }

    fn obj(id: &str, c: Cell) -> Obj {
        Obj {
            id: id.into(),
            type_label: "thing".into(),
            placement: Placement::Cell(c),
            props: BTreeMap::new(),
        }
    }

    #[test]
    fn empty_world_has_no_facts() {
        let w = GridWorld::new(room_map(3, 3));
        assert!(assess(&w, &[]).is_empty());
    }

    #[test]
    fn wall_blocks_line_of_sight() {
        let mut w = GridWorld::new(room_map(5, 5));
        let mut bob = Agent::new("BOB", AgentKind::Human, Cell::new(0, 2));
        bob.heading = Heading::E;
        w.agents.insert("BOB".into(), bob);
        w.objects.insert("MUG".into(), obj("MUG", Cell::new(4, 2)));
        let sees = |w: &GridWorld| assess(w, &[]).holds("BOB", Predicate::CanSee, "MUG");
        assert!(sees(&w));
        let mut walled = w.clone();
        let mut map = (*walled.map).clone();
        map.cells[(2 * 5 + 2) as usize].blocking = true;
        walled.map = map.into();
        assert!(!sees(&walled));
    }

    #[test]
    fn can_see_is_not_symmetric() {
        let mut w = GridWorld::new(room_map(5, 5));
        let mut bob = Agent::new("BOB", AgentKind::Human, Cell::new(0, 2));
        bob.heading = Heading::E;
        let mut ann = Agent::new("ANN", AgentKind::Human, Cell::new(3, 2));
        ann.heading = Heading::E;
        w.agents.insert("BOB".into(), bob);
        w.agents.insert("ANN".into(), ann);
        let fb = assess(&w, &[]);
        assert!(fb.holds("BOB", Predicate::CanSee, "ANN"));
        assert!(!fb.holds("ANN", Predicate::CanSee, "BOB"));
    }

    #[test]
    fn held_object_has_no_placement_fact() {
        let mut w = GridWorld::new(room_map(3, 3));
        let mut bob = Agent::new("BOB", AgentKind::Human, Cell::new(1, 1));
        bob.holding = Some("MUG".into());
        w.agents.insert("BOB".into(), bob);
        let mut mug = obj("MUG", Cell::new(1, 1));
        mug.placement = Placement::HeldBy("BOB".into());
        w.objects.insert("MUG".into(), mug);
        let fb = assess(&w, &[]);
        assert!(fb.holds("BOB", Predicate::IsHolding, "MUG"));
        assert!(fb.value("MUG", &Predicate::IsIn).is_none());
        assert!(fb.value("MUG", &Predicate::IsOn).is_none());
    }

    #[test]
    fn pointing_persists_three_ticks() {
        let mut w = GridWorld::new(room_map(4, 1));
        w.agents.insert(
            "BOB".into(),
            Agent::new("BOB", AgentKind::Human, Cell::new(0, 0)),
        );
        w.objects.insert("MUG".into(), obj("MUG", Cell::new(3, 0)));
        let point = BTreeMap::from([(
            "BOB".to_string(),
            PrimitiveAction::PointAt {
                target: "MUG".into(),
            },
        )]);
        let mut w = w.step(&point).0;
        for _ in 0..=POINTING_PERSISTENCE {
            assert!(assess(&w, &[]).holds("BOB", Predicate::IsPointingAt, "MUG"));
            w = w.step(&BTreeMap::new()).0;
        }
        assert!(!assess(&w, &[]).holds("BOB", Predicate::IsPointingAt, "MUG"));
    }

    #[test]
    fn moving_toward_needs_three_worlds() {
        let mut w = GridWorld::new(room_map(6, 1));
        w.agents.insert(
            "BOB".into(),
            Agent::new("BOB", AgentKind::Human, Cell::new(0, 0)),
        );
        w.objects.insert("MUG".into(), obj("MUG", Cell::new(5, 0)));
        let east = BTreeMap::from([("BOB".to_string(), PrimitiveAction::Move { dir: Heading::E })]);
        let w1 = w.step(&east).0;
        let w2 = w1.step(&east).0;
        assert!(!assess(&w1, &[w.clone()]).holds("BOB", Predicate::IsMovingToward, "MUG"));
        assert!(assess(&w2, &[w.clone(), w1.clone()]).holds(
            "BOB",
            Predicate::IsMovingToward,
            "MUG"
        ));
        let w3 = w2.step(&BTreeMap::new()).0;
        let w4 = w3.step(&BTreeMap::new()).0;
        assert!(!assess(&w4, &[w2, w3]).holds("BOB", Predicate::IsMovingToward, "MUG"));
    }

    #[test]
    fn diff_of_identical_bases_is_empty() {
        let mut w = GridWorld::new(room_map(3, 3));
        w.agents.insert(
            "BOB".into(),
            Agent::new("BOB", AgentKind::Human, Cell::new(1, 1)),
        );
        let a = assess(&w, &[]);
        let (add, rem) = diff(&a, &a);
        assert!(add.is_empty() && rem.is_empty());
    }
}
