//! Grid cells, compass headings and the discrete geometry shared by the
//! kernel and situation assessment.

use std::fmt;

use serde::{Deserialize, Serialize};

/// A grid cell. `x` grows to the east (column), `y` grows to the south (row).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "[i32; 2]", into = "[i32; 2]")]
pub struct Cell {
    pub x: i32,
    pub y: i32,
}

impl Cell {
    pub const fn new(x: i32, y: i32) -> Self {
        Cell { x, y }
    }

    /// King-move distance.
    pub fn chebyshev(self, other: Cell) -> i32 {
        (self.x - other.x).abs().max((self.y - other.y).abs())
    }

    pub fn dist2(self, other: Cell) -> i64 {
        let dx = i64::from(self.x - other.x);
        let dy = i64::from(self.y - other.y);
        dx * dx + dy * dy
    }

    pub fn offset(self, heading: Heading) -> Cell {
        let (dx, dy) = heading.delta();
        Cell::new(self.x + dx, self.y + dy)
    }
}

impl From<[i32; 2]> for Cell {
    fn from(v: [i32; 2]) -> Self {
        Cell::new(v[0], v[1])
    }
}

impl From<Cell> for [i32; 2] {
    fn from(c: Cell) -> Self {
        [c.x, c.y]
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.x, self.y)
    }
}

/// One of the eight compass directions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Heading {
    N,
    NE,
    E,
    SE,
    S,
    SW,
    W,
    NW,
}

impl Heading {
    pub const ALL: [Heading; 8] = [
        Heading::N,
        Heading::NE,
        Heading::E,
        Heading::SE,
        Heading::S,
        Heading::SW,
        Heading::W,
        Heading::NW,
    ];

    pub fn delta(self) -> (i32, i32) {
        match self {
            Heading::N => (0, -1),
            Heading::NE => (1, -1),
            Heading::E => (1, 0),
            Heading::SE => (1, 1),
            Heading::S => (0, 1),
            Heading::SW => (-1, 1),
            Heading::W => (-1, 0),
            Heading::NW => (-1, -1),
        }
    }

    /// Screen-frame angle in degrees (east = 0, south = 90).
    pub fn angle_deg(self) -> f64 {
        let (dx, dy) = self.delta();
        f64::from(dy).atan2(f64::from(dx)).to_degrees()
    }

    /// Heading closest to the vector `from -> to`; `None` when the cells coincide.
    pub fn toward(from: Cell, to: Cell) -> Option<Heading> {
        let (dx, dy) = (to.x - from.x, to.y - from.y);
        if dx == 0 && dy == 0 {
            return None;
        }
        let angle = f64::from(dy).atan2(f64::from(dx)).to_degrees();
        let sector = ((angle / 45.0).round() as i32).rem_euclid(8);
        Some(match sector {
            0 => Heading::E,
            1 => Heading::SE,
            2 => Heading::S,
            3 => Heading::SW,
            4 => Heading::W,
            5 => Heading::NW,
            6 => Heading::N,
            _ => Heading::NE,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Heading::N => "N",
            Heading::NE => "NE",
            Heading::E => "E",
            Heading::SE => "SE",
            Heading::S => "S",
            Heading::SW => "SW",
            Heading::W => "W",
            Heading::NW => "NW",
        }
    }
}

impl fmt::Display for Heading {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Unsigned angle in degrees between `heading` and the vector `from -> to`.
/// Returns 0 when the cells coincide.
pub fn bearing_offset(heading: Heading, from: Cell, to: Cell) -> f64 {
    let (dx, dy) = (to.x - from.x, to.y - from.y);
    if dx == 0 && dy == 0 {
        return 0.0;
    }
    let target = f64::from(dy).atan2(f64::from(dx)).to_degrees();
    let mut diff = (target - heading.angle_deg()).abs() % 360.0;
    if diff > 180.0 {
        diff = 360.0 - diff;
    }
    diff
}

/// Cells on the Bresenham line from `a` to `b`, both endpoints included.
pub fn bresenham(a: Cell, b: Cell) -> Vec<Cell> {
    let mut out = Vec::new();
    let (mut x0, mut y0) = (a.x, a.y);
    let dx = (b.x - x0).abs();
    let dy = -(b.y - y0).abs();
    let sx = if x0 < b.x { 1 } else { -1 };
    let sy = if y0 < b.y { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        out.push(Cell::new(x0, y0));
        if x0 == b.x && y0 == b.y {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x0 += sx;
        }
        if e2 <= dx {
            err += dx;
            y0 += sy;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toward_quantizes_to_eight_sectors() {
        let o = Cell::new(0, 0);
        assert_eq!(Heading::toward(o, Cell::new(3, 0)), Some(Heading::E));
        assert_eq!(Heading::toward(o, Cell::new(0, -2)), Some(Heading::N));
        assert_eq!(Heading::toward(o, Cell::new(2, 2)), Some(Heading::SE));
        assert_eq!(Heading::toward(o, Cell::new(-5, 1)), Some(Heading::W));
        assert_eq!(Heading::toward(o, o), None);
    }

    #[test]
    fn bresenham_endpoints_and_length() {
        let line = bresenham(Cell::new(0, 0), Cell::new(4, 2));
        assert_eq!(line.first(), Some(&Cell::new(0, 0)));
        assert_eq!(line.last(), Some(&Cell::new(4, 2)));
        assert_eq!(line.len(), 5);
        assert_eq!(
            bresenham(Cell::new(1, 1), Cell::new(1, 1)),
            vec![Cell::new(1, 1)]
        );
    }

    #[test]
    fn bearing_offset_wraps() {
        let o = Cell::new(0, 0);
        assert!((bearing_offset(Heading::E, o, Cell::new(0, 1)) - 90.0).abs() < 1e-9);
        assert!((bearing_offset(Heading::N, o, Cell::new(0, 1)) - 180.0).abs() < 1e-9);
        assert!((bearing_offset(Heading::W, o, Cell::new(-1, -1)) - 45.0).abs() < 1e-9);
    }
}
