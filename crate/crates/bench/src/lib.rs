//! Inputs shared by the benchmarks in benches/.

use tandem::intention::mdp::{Mdp, MdpParams};
use tandem::scenario::Scenario;

const OFFSETS: [(i64, i64); 8] = [
    (0, -1),
    (1, -1),
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
    (-1, 0),
    (-1, -1),
];

/// An open `side` x `side` room with eight moves plus wait and the goal in
/// the far corner.
pub fn open_room(side: usize) -> Mdp {
    let n = side * side;
    let id = |x: i64, y: i64| (y as usize) * side + x as usize;
    let transitions = (0..n)
        .map(|s| {
            let (x, y) = ((s % side) as i64, (s / side) as i64);
            let mut row: Vec<Vec<(usize, f64)>> = OFFSETS
                .iter()
                .map(|&(dx, dy)| {
                    let (tx, ty) = (x + dx, y + dy);
                    let inside = (0..side as i64).contains(&tx) && (0..side as i64).contains(&ty);
                    vec![(if inside { id(tx, ty) } else { s }, 1.0)]
                })
                .collect();
            row.push(vec![(s, 1.0)]);
            row
        })
        .collect();
    let mut goal = vec![false; n];
    goal[n - 1] = true;
    Mdp {
        n_states: n,
        n_actions: 9,
        transitions,
        goal,
        params: MdpParams::default(),
    }
}

pub fn bundled(name: &str) -> Scenario {
    let path = format!("{}/../../scenarios/{name}.json", env!("CARGO_MANIFEST_DIR"));
    Scenario::load(&path).unwrap_or_else(|e| panic!("{path}: {e}"))
}
