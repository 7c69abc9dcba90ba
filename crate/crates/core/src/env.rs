//! Multi-task environment families.
//!
//! * `tinychain`: four positions on a line, two actions, horizon 3, binary
//!   task. Small enough to enumerate every hierarchical trajectory.
//! * `grid_multigoal`: open 11×11 grid, five actions, horizon 24. The goal
//!   cell is a fixed function of a 2-dim Gaussian context.
//! * `point_room` / `point_maze`: 11×11 grids with walls, one of four
//!   fixed goals, +1 on reaching the goal and the episode ends there.
//!
//! Observations are a one-hot of the agent cell followed by the context.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand_core::RngCore;

use crate::error::{Error, Result};
use crate::math;
use crate::rng;

pub const GRID_SIZE: usize = 11;

pub const UP: usize = 0;
pub const DOWN: usize = 1;
pub const LEFT: usize = 2;
pub const RIGHT: usize = 3;
pub const STAY: usize = 4;

pub const CHAIN_LEFT: usize = 0;
pub const CHAIN_RIGHT: usize = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Family {
    TinyChain,
    GridMultiGoal,
    PointRoom,
    PointMaze,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::TinyChain => "tinychain",
            Family::GridMultiGoal => "grid_multigoal",
            Family::PointRoom => "point_room",
            Family::PointMaze => "point_maze",
        }
    }

    pub fn from_name(name: &str) -> Option<Family> {
        match name {
            "tinychain" => Some(Family::TinyChain),
            "grid_multigoal" => Some(Family::GridMultiGoal),
            "point_room" => Some(Family::PointRoom),
            "point_maze" => Some(Family::PointMaze),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ContextKind {
    /// One-hot over this many tasks, uniform prior.
    Discrete(usize),
    /// Standard normal vector of this dimension.
    Continuous(usize),
}

impl ContextKind {
    pub fn dim(self) -> usize {
        match self {
            ContextKind::Discrete(n) | ContextKind::Continuous(n) => n,
        }
    }

    /// Entropy of the prior: `ln n` for discrete, `½ d ln(2πe)` for continuous.
    pub fn prior_entropy(self) -> f64 {
        match self {
            ContextKind::Discrete(n) => math::ln(n as f64),
            ContextKind::Continuous(d) => 0.5 * d as f64 * (math::LN_2PI + 1.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskContext {
    pub kind: ContextKind,
    pub value: Vec<f64>,
}

impl TaskContext {
    pub fn discrete(index: usize, n: usize) -> Result<Self> {
        if index >= n {
            return Err(Error::contract(format!("context index {index} out of range {n}")));
        }
        let mut value = vec![0.0; n];
        value[index] = 1.0;
        Ok(TaskContext { kind: ContextKind::Discrete(n), value })
    }

    pub fn continuous(value: Vec<f64>) -> Result<Self> {
        if value.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract("non-finite context"));
        }
        Ok(TaskContext { kind: ContextKind::Continuous(value.len()), value })
    }

    /// Index of a discrete context.
    pub fn index(&self) -> Option<usize> {
        match self.kind {
            ContextKind::Discrete(_) => self.value.iter().position(|&v| v == 1.0),
            ContextKind::Continuous(_) => None,
        }
    }

    pub fn validate(&self, kind: ContextKind) -> Result<()> {
        if self.kind != kind || self.value.len() != kind.dim() {
            return Err(Error::contract(format!("context {:?} does not fit {:?}", self.kind, kind)));
        }
        if let ContextKind::Discrete(_) = kind {
            let ones = self.value.iter().filter(|&&v| v == 1.0).count();
            let zeros = self.value.iter().filter(|&&v| v == 0.0).count();
            if ones != 1 || ones + zeros != self.value.len() {
                return Err(Error::contract("discrete context is not one-hot"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvState {
    /// Chain position or grid cell index `y * width + x`.
    pub pos: usize,
    pub goal: usize,
    pub t: usize,
    pub done: bool,
    pub context: TaskContext,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskSpec {
    pub family: Family,
    pub width: usize,
    pub height: usize,
    pub walls: Vec<bool>,
    pub start: usize,
    pub horizon: usize,
    pub num_actions: usize,
    pub context: ContextKind,
    /// Evaluation goals of the sparse families.
    pub goals: Vec<usize>,
    /// Goal used by `reset` in the sparse families.
    pub goal_index: usize,
    pub sparse: bool,
}

impl TaskSpec {
    pub fn tinychain() -> Self {
        TaskSpec {
            family: Family::TinyChain,
            width: 4,
            height: 1,
            walls: vec![false; 4],
            start: 1,
            horizon: 3,
            num_actions: 2,
            context: ContextKind::Discrete(2),
            goals: vec![0, 3],
            goal_index: 0,
            sparse: false,
        }
    }

    pub fn grid_multigoal() -> Self {
        let n = GRID_SIZE * GRID_SIZE;
        TaskSpec {
            family: Family::GridMultiGoal,
            width: GRID_SIZE,
            height: GRID_SIZE,
            walls: vec![false; n],
            start: cell(5, 5),
            horizon: 24,
            num_actions: 5,
            context: ContextKind::Continuous(2),
            goals: Vec::new(),
            goal_index: 0,
            sparse: false,
        }
    }

    /// Four rooms around a central hall. The hall is the ring of cells at
    /// Chebyshev distance 2 from the center, open at one doorway per side;
    /// radial walls split the outside into four rooms with one corner goal each.
    pub fn point_room(goal_index: usize) -> Self {
        let mut walls = vec![false; GRID_SIZE * GRID_SIZE];
        let doors = [(6, 7), (7, 4), (4, 3), (3, 6)];
        for y in 0..GRID_SIZE {
            for x in 0..GRID_SIZE {
                let dx = (x as i64 - 5).abs();
                let dy = (y as i64 - 5).abs();
                let ring = dx.max(dy) == 2 && !doors.contains(&(x, y));
                let radial = (x == 5 && !(3..=7).contains(&y)) || (y == 5 && !(3..=7).contains(&x));
                walls[cell(x, y)] = ring || radial;
            }
        }
        TaskSpec {
            family: Family::PointRoom,
            walls,
            goals: vec![cell(10, 10), cell(10, 0), cell(0, 0), cell(0, 10)],
            ..Self::sparse_base(goal_index)
        }
    }

    /// Serpentine corridor: two horizontal walls with gaps at opposite ends.
    pub fn point_maze(goal_index: usize) -> Self {
        let mut walls = vec![false; GRID_SIZE * GRID_SIZE];
        for x in 1..GRID_SIZE {
            walls[cell(x, 3)] = true;
        }
        for x in 0..GRID_SIZE - 1 {
            walls[cell(x, 7)] = true;
        }
        TaskSpec {
            family: Family::PointMaze,
            walls,
            goals: vec![cell(10, 0), cell(0, 10), cell(5, 0), cell(5, 10)],
            ..Self::sparse_base(goal_index)
        }
    }

    fn sparse_base(goal_index: usize) -> Self {
        TaskSpec {
            family: Family::PointRoom,
            width: GRID_SIZE,
            height: GRID_SIZE,
            walls: Vec::new(),
            start: cell(5, 5),
            horizon: 60,
            num_actions: 5,
            context: ContextKind::Continuous(2),
            goals: Vec::new(),
            goal_index: goal_index % 4,
            sparse: true,
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match Family::from_name(name) {
            Some(Family::TinyChain) => Ok(Self::tinychain()),
            Some(Family::GridMultiGoal) => Ok(Self::grid_multigoal()),
            Some(Family::PointRoom) => Ok(Self::point_room(0)),
            Some(Family::PointMaze) => Ok(Self::point_maze(0)),
            None => Err(Error::contract(format!("unknown environment `{name}`"))),
        }
    }

    pub fn with_goal(&self, goal_index: usize) -> Self {
        let mut s = self.clone();
        s.goal_index = goal_index % s.goals.len().max(1);
        s
    }

    /// Size of the agent-cell one-hot.
    pub fn num_cells(&self) -> usize {
        self.width * self.height
    }

    pub fn context_dim(&self) -> usize {
        self.context.dim()
    }

    /// Full observation width: cell one-hot plus context.
    pub fn obs_dim(&self) -> usize {
        self.num_cells() + self.context_dim()
    }

    pub fn xy(&self, pos: usize) -> (usize, usize) {
        (pos % self.width, pos / self.width)
    }

    pub fn is_wall(&self, pos: usize) -> bool {
        self.walls[pos]
    }

    /// Goal cell a context induces.
    pub fn goal_for(&self, c: &TaskContext) -> usize {
        match self.family {
            Family::TinyChain => {
                if c.index() == Some(1) {
                    3
                } else {
                    0
                }
            }
            Family::GridMultiGoal => {
                let f = |v: f64| math::round(5.0 + 2.5 * v).clamp(0.0, (GRID_SIZE - 1) as f64) as usize;
                cell(f(c.value[0]), f(c.value[1]))
            }
            Family::PointRoom | Family::PointMaze => self.goals[self.goal_index],
        }
    }

    /// `sample_task`: a draw from the context prior. Grid contexts whose goal
    /// would coincide with the start are redrawn; sparse families use a
    /// fixed all-zero context (the goal is part of the spec).
    pub fn sample_task<R: RngCore + ?Sized>(&self, rng: &mut R) -> TaskContext {
        match (self.family, self.context) {
            (_, ContextKind::Discrete(n)) => {
                let i = rng::below(rng, n);
                TaskContext::discrete(i, n).expect("index in range")
            }
            (Family::PointRoom | Family::PointMaze, ContextKind::Continuous(d)) => {
                TaskContext { kind: self.context, value: vec![0.0; d] }
            }
            (_, ContextKind::Continuous(d)) => loop {
                let value: Vec<f64> = (0..d).map(|_| rng::normal(rng)).collect();
                let c = TaskContext { kind: self.context, value };
                if self.family != Family::GridMultiGoal || self.goal_for(&c) != self.start {
                    return c;
                }
            },
        }
    }

    pub fn reset(&self, c: &TaskContext) -> Result<EnvState> {
        c.validate(self.context)?;
        Ok(EnvState { pos: self.start, goal: self.goal_for(c), t: 0, done: false, context: c.clone() })
    }

    /// Deterministic successor position; blocked moves stay in place.
    pub fn next_pos(&self, pos: usize, action: usize) -> usize {
        if self.family == Family::TinyChain {
            return match action {
                CHAIN_LEFT => pos.saturating_sub(1),
                _ => (pos + 1).min(self.width - 1),
            };
        }
        let (x, y) = self.xy(pos);
        let (nx, ny) = match action {
            UP if y + 1 < self.height => (x, y + 1),
            DOWN if y > 0 => (x, y - 1),
            LEFT if x > 0 => (x - 1, y),
            RIGHT if x + 1 < self.width => (x + 1, y),
            _ => (x, y),
        };
        let next = ny * self.width + nx;
        if self.walls[next] {
            pos
        } else {
            next
        }
    }

    /// Returns the successor, the hidden reward and whether the episode ended.
    pub fn step(&self, s: &EnvState, action: usize) -> Result<(EnvState, f64, bool)> {
        if s.done {
            return Err(Error::contract("step on a finished episode"));
        }
        if action >= self.num_actions {
            return Err(Error::contract(format!("action {action} out of range {}", self.num_actions)));
        }
        let pos = self.next_pos(s.pos, action);
        let t = s.t + 1;
        let at_goal = pos == s.goal;
        let reward = if at_goal { 1.0 } else { 0.0 };
        let done = t >= self.horizon || (self.sparse && at_goal);
        Ok((EnvState { pos, goal: s.goal, t, done, context: s.context.clone() }, reward, done))
    }

    /// Observation vector: cell one-hot followed by the context.
    pub fn observe(&self, s: &EnvState) -> Vec<f64> {
        let mut o = vec![0.0; self.obs_dim()];
        o[s.pos] = 1.0;
        o[self.num_cells()..].copy_from_slice(&s.context.value);
        o
    }

    /// Agent-only one-hot (context stripped), as stored in demonstrations.
    pub fn agent_one_hot(&self, pos: usize) -> Vec<f64> {
        let mut o = vec![0.0; self.num_cells()];
        o[pos] = 1.0;
        o
    }
}

pub fn cell(x: usize, y: usize) -> usize {
    y * GRID_SIZE + x
}

pub fn manhattan(spec: &TaskSpec, a: usize, b: usize) -> usize {
    let (ax, ay) = spec.xy(a);
    let (bx, by) = spec.xy(b);
    ax.abs_diff(bx) + ay.abs_diff(by)
}
