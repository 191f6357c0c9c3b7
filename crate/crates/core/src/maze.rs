//! Continuous U-shaped maze with acceleration actions and a sparse exit reward.
//!
//! Positions live in the unit square with `y` pointing up. A wall hangs from
//! the top edge through the middle, so the agent has to go down, across and
//! back up to reach the exit in the top-right corner.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interval::IntervalBox;
use crate::reward::EnvReward;

pub const STATE_DIM: usize = 4;

/// Closed axis-aligned rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rect {
    pub x: (f64, f64),
    pub y: (f64, f64),
}

impl Rect {
    pub const fn new(x: (f64, f64), y: (f64, f64)) -> Self {
        Self { x, y }
    }

    pub fn contains(&self, px: f64, py: f64) -> bool {
        self.x.0 <= px && px <= self.x.1 && self.y.0 <= py && py <= self.y.1
    }

    pub fn intersects(&self, other: &Rect) -> bool {
        self.x.0 <= other.x.1 && other.x.0 <= self.x.1 && self.y.0 <= other.y.1 && other.y.0 <= self.y.1
    }

    fn is_valid(&self) -> bool {
        let ok = |(a, b): (f64, f64)| a.is_finite() && b.is_finite() && a <= b && a >= 0.0 && b <= 1.0;
        ok(self.x) && ok(self.y)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MazeConfig {
    pub v_max: f64,
    pub accel: f64,
    pub walls: Vec<Rect>,
    pub start: Rect,
    pub exit: Rect,
    pub max_episode_steps: u32,
}

impl Default for MazeConfig {
    fn default() -> Self {
        Self {
            v_max: 0.05,
            accel: 0.025,
            walls: vec![Rect::new((0.45, 0.55), (0.25, 1.0))],
            start: Rect::new((0.05, 0.15), (0.85, 0.95)),
            exit: Rect::new((0.85, 1.0), (0.85, 1.0)),
            max_episode_steps: 400,
        }
    }
}

impl MazeConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(format!("maze: {msg}")));
        if !(self.v_max.is_finite() && self.v_max > 0.0) {
            return bad("v_max must be positive");
        }
        if !(self.accel.is_finite() && self.accel > 0.0) {
            return bad("accel must be positive");
        }
        if self.max_episode_steps == 0 {
            return bad("max_episode_steps must be positive");
        }
        if !self.start.is_valid() || !self.exit.is_valid() || !self.walls.iter().all(Rect::is_valid) {
            return bad("walls, start and exit must be ordered rectangles inside the unit square");
        }
        if self.walls.iter().any(|w| w.intersects(&self.start)) {
            return bad("start region overlaps a wall");
        }
        if self.walls.iter().any(|w| w.intersects(&self.exit)) {
            return bad("exit region overlaps a wall");
        }
        Ok(())
    }

    /// `[0,1]^2 x [-v_max, v_max]^2`.
    pub fn state_domain(&self) -> IntervalBox {
        IntervalBox::from_bounds(&[
            (0.0, 1.0),
            (0.0, 1.0),
            (-self.v_max, self.v_max),
            (-self.v_max, self.v_max),
        ])
        .expect("v_max validated positive")
    }

    pub fn in_wall(&self, x: f64, y: f64) -> bool {
        self.walls.iter().any(|w| w.contains(x, y))
    }

    pub fn is_exit(&self, s: &MazeState) -> bool {
        self.exit.contains(s.x, s.y)
    }

    /// Uniform position in the start region, zero velocity.
    pub fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> MazeState {
        let x = self.start.x.0 + (self.start.x.1 - self.start.x.0) * rng.random::<f64>();
        let y = self.start.y.0 + (self.start.y.1 - self.start.y.0) * rng.random::<f64>();
        MazeState {
            x,
            y,
            vx: 0.0,
            vy: 0.0,
            t: 0,
        }
    }

    /// Advances one step. Each axis moves separately (x first); a motion that
    /// would leave the unit square or touch a wall is cancelled and that
    /// velocity component zeroed.
    pub fn step(&self, s: &MazeState, action: Action) -> StepOutcome {
        let (dx, dy) = action.direction();
        let mut vx = (s.vx + self.accel * dx).clamp(-self.v_max, self.v_max);
        let mut vy = (s.vy + self.accel * dy).clamp(-self.v_max, self.v_max);

        let mut x = s.x + vx;
        if self.blocks_horizontal(s.x, x, s.y) {
            x = s.x;
            vx = 0.0;
        }
        let mut y = s.y + vy;
        if self.blocks_vertical(x, s.y, y) {
            y = s.y;
            vy = 0.0;
        }
        let next = MazeState {
            x,
            y,
            vx,
            vy,
            t: s.t + 1,
        };
        let at_exit = self.is_exit(&next);
        StepOutcome {
            done: at_exit || next.t >= self.max_episode_steps,
            reward: EnvReward(if at_exit { 1.0 } else { 0.0 }),
            at_exit,
            state: next,
        }
    }

    fn blocks_horizontal(&self, x0: f64, x1: f64, y: f64) -> bool {
        let (a, b) = if x0 <= x1 { (x0, x1) } else { (x1, x0) };
        !(0.0..=1.0).contains(&x1)
            || self
                .walls
                .iter()
                .any(|w| w.y.0 <= y && y <= w.y.1 && a <= w.x.1 && w.x.0 <= b)
    }

    fn blocks_vertical(&self, x: f64, y0: f64, y1: f64) -> bool {
        let (a, b) = if y0 <= y1 { (y0, y1) } else { (y1, y0) };
        !(0.0..=1.0).contains(&y1)
            || self
                .walls
                .iter()
                .any(|w| w.x.0 <= x && x <= w.x.1 && a <= w.y.1 && w.y.0 <= b)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MazeState {
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    /// Steps taken in the current episode.
    pub t: u32,
}

impl MazeState {
    pub fn to_array(&self) -> [f64; STATE_DIM] {
        [self.x, self.y, self.vx, self.vy]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    AccelUp,
    AccelDown,
    AccelLeft,
    AccelRight,
}

impl Action {
    pub const ALL: [Action; 4] = [
        Action::AccelUp,
        Action::AccelDown,
        Action::AccelLeft,
        Action::AccelRight,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Self::ALL.get(i).copied()
    }

    pub fn direction(self) -> (f64, f64) {
        match self {
            Action::AccelUp => (0.0, 1.0),
            Action::AccelDown => (0.0, -1.0),
            Action::AccelLeft => (-1.0, 0.0),
            Action::AccelRight => (1.0, 0.0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub state: MazeState,
    pub reward: EnvReward,
    /// Exit reached or step budget exhausted.
    pub done: bool,
    pub at_exit: bool,
}
