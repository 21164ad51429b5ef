//! State space of the two-element process, the deterministic flow between
//! jumps and the two jump maps.
//!
//! A state is `Z = (i, x; j, y)`: `i`, `j` are the regime flags of the two
//! elements (0 = working, 1 = under repair) and `x`, `y` the elapsed times
//! since each element last changed regime. Between jumps both elapsed times
//! grow at unit rate. A jump changes exactly one element: `jump_cn` flips
//! `i` and resets `x`, `jump_nc` flips `j` and resets `y`. There is no
//! operation that changes both flags at once.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// A point `(i, x; j, y)` of the state space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawState", into = "RawState")]
pub struct State {
    i: u8,
    x: f64,
    j: u8,
    y: f64,
}

#[derive(Serialize, Deserialize)]
struct RawState {
    i: u8,
    x: f64,
    j: u8,
    y: f64,
}

impl TryFrom<RawState> for State {
    type Error = Error;

    fn try_from(r: RawState) -> Result<Self> {
        State::new(r.i, r.x, r.j, r.y)
    }
}

impl From<State> for RawState {
    fn from(s: State) -> Self {
        RawState {
            i: s.i,
            x: s.x,
            j: s.j,
            y: s.y,
        }
    }
}

impl State {
    /// The origin `(0, 0; 0, 0)`.
    pub const ORIGIN: State = State {
        i: 0,
        x: 0.0,
        j: 0,
        y: 0.0,
    };

    pub fn new(i: u8, x: f64, j: u8, y: f64) -> Result<Self> {
        if i > 1 || j > 1 {
            return Err(invalid(format!("regime flags must be 0 or 1, got i={i}, j={j}")));
        }
        if !(x.is_finite() && x >= 0.0) || !(y.is_finite() && y >= 0.0) {
            return Err(invalid(format!(
                "elapsed times must be finite and nonnegative, got x={x}, y={y}"
            )));
        }
        Ok(State { i, x, j, y })
    }

    #[inline]
    pub fn i(&self) -> u8 {
        self.i
    }

    #[inline]
    pub fn x(&self) -> f64 {
        self.x
    }

    #[inline]
    pub fn j(&self) -> u8 {
        self.j
    }

    #[inline]
    pub fn y(&self) -> f64 {
        self.y
    }

    /// Index of the regime pair, `2*i + j`.
    #[inline]
    pub fn regime(&self) -> usize {
        2 * self.i as usize + self.j as usize
    }

    /// `1 + x + y`, the base of the Lyapunov family.
    #[inline]
    pub fn seminorm(&self) -> f64 {
        1.0 + self.x + self.y
    }

    /// Deterministic motion for `s` time units without a jump.
    pub fn flow(&self, s: f64) -> Result<State> {
        if !(s.is_finite() && s >= 0.0) {
            return Err(invalid(format!("flow duration must be finite and >= 0, got {s}")));
        }
        Ok(self.advance(s))
    }

    /// Unchecked flow for hot loops; `s` must be finite and nonnegative.
    #[inline]
    pub(crate) fn advance(&self, s: f64) -> State {
        debug_assert!(s.is_finite() && s >= 0.0);
        State {
            i: self.i,
            x: self.x + s,
            j: self.j,
            y: self.y + s,
        }
    }

    /// Regime change of the first element.
    #[inline]
    pub fn jump_cn(&self) -> State {
        State {
            i: 1 - self.i,
            x: 0.0,
            j: self.j,
            y: self.y,
        }
    }

    /// Regime change of the second element.
    #[inline]
    pub fn jump_nc(&self) -> State {
        State {
            i: self.i,
            x: self.x,
            j: 1 - self.j,
            y: 0.0,
        }
    }

    #[inline]
    pub fn jump(&self, component: Component) -> State {
        match component {
            Component::First => self.jump_cn(),
            Component::Second => self.jump_nc(),
        }
    }

    /// The CSV column group `i,x,j,y`.
    pub fn csv_fields(&self) -> String {
        format!("{},{},{},{}", self.i, self.x, self.j, self.y)
    }
}

/// Which element jumps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    First,
    Second,
}

impl Component {
    /// 0 for the first element, 1 for the second (CSV encoding).
    pub fn index(self) -> u8 {
        match self {
            Component::First => 0,
            Component::Second => 1,
        }
    }
}
