//! The block-placing room.
//!
//! Room layout, in room coordinates `(row, col)` with row 0 at the north:
//!
//! ```text
//! row/col 0 and 8   walls
//! row/col 1 and 7   walkway ring
//! rows/cols 2..=6   5x5 field; field (r, c) sits at room (r + 2, c + 2)
//! ```
//!
//! Field sets (colored, blocks, covered) are 25-bit masks with bit `5r + c`.

mod log;
mod render;
mod task;

pub use log::{episode_return, EpisodeLog, LoggedStep};
pub use render::{render, Frame, FRAME_LEN, FRAME_SIZE};
pub use task::{generate_task, COLOR_PROBABILITY, generate_task_counted, read_task_file, start_poses, write_task_file, TaskSpec};

use thiserror::Error;

pub const ROOM: i32 = 9;
pub const FIELD: i32 = 5;
pub const MAX_ACTIONS: u8 = 30;
pub const STEP_COST: f64 = 0.04;
pub const NUM_ACTIONS: usize = 6;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("episode already terminal after {0} actions")]
    Terminal(u8),
    #[error("noop is a model input, not an environment action")]
    Noop,
    #[error("unknown action {0:?}")]
    UnknownAction(String),
    #[error("task file line {line}: {msg}")]
    TaskFile { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Heading {
    North,
    East,
    South,
    West,
}

impl Heading {
    pub const ALL: [Heading; 4] = [Heading::North, Heading::East, Heading::South, Heading::West];

    /// Unit step as `(d_row, d_col)`.
    pub fn delta(self) -> (i32, i32) {
        match self {
            Heading::North => (-1, 0),
            Heading::East => (0, 1),
            Heading::South => (1, 0),
            Heading::West => (0, -1),
        }
    }

    pub fn left(self) -> Heading {
        match self {
            Heading::North => Heading::West,
            Heading::West => Heading::South,
            Heading::South => Heading::East,
            Heading::East => Heading::North,
        }
    }

    pub fn right(self) -> Heading {
        self.left().left().left()
    }
}

/// Agent actions. Index order is the model's one-hot layout; `Noop` encodes
/// as all zeros and is rejected by the environment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Forward,
    TurnLeft,
    TurnRight,
    StrafeRight,
    StrafeLeft,
    PlaceBlock,
    Noop,
}

impl Action {
    pub const ALL: [Action; NUM_ACTIONS] = [
        Action::Forward,
        Action::TurnLeft,
        Action::TurnRight,
        Action::StrafeRight,
        Action::StrafeLeft,
        Action::PlaceBlock,
    ];

    /// 0..6 for real actions, 6 for `Noop`.
    pub fn index(self) -> usize {
        match self {
            Action::Forward => 0,
            Action::TurnLeft => 1,
            Action::TurnRight => 2,
            Action::StrafeRight => 3,
            Action::StrafeLeft => 4,
            Action::PlaceBlock => 5,
            Action::Noop => 6,
        }
    }

    pub fn from_index(i: usize) -> Action {
        Action::ALL.get(i).copied().unwrap_or(Action::Noop)
    }

    /// One-hot for real actions, zeros for `Noop`.
    pub fn encoding(self) -> [f32; NUM_ACTIONS] {
        let mut e = [0.0; NUM_ACTIONS];
        if let Some(slot) = e.get_mut(self.index()) {
            *slot = 1.0;
        }
        e
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::Forward => "forward",
            Action::TurnLeft => "turn_left",
            Action::TurnRight => "turn_right",
            Action::StrafeRight => "strafe_right",
            Action::StrafeLeft => "strafe_left",
            Action::PlaceBlock => "place_block",
            Action::Noop => "noop",
        }
    }

    pub fn parse(s: &str) -> Result<Action, GridError> {
        Action::ALL
            .iter()
            .chain(&[Action::Noop])
            .find(|a| a.name() == s)
            .copied()
            .ok_or_else(|| GridError::UnknownAction(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AgentPose {
    pub row: i32,
    pub col: i32,
    pub heading: Heading,
}

impl AgentPose {
    pub fn ahead(&self) -> (i32, i32) {
        let (dr, dc) = self.heading.delta();
        (self.row + dr, self.col + dc)
    }
}

/// Bit for room cell `(row, col)` if it lies on the field.
pub fn field_bit(row: i32, col: i32) -> Option<u32> {
    let (r, c) = (row - 2, col - 2);
    ((0..FIELD).contains(&r) && (0..FIELD).contains(&c)).then(|| 1u32 << (r * FIELD + c))
}

pub fn is_wall(row: i32, col: i32) -> bool {
    row <= 0 || col <= 0 || row >= ROOM - 1 || col >= ROOM - 1
}

/// What a placement did.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Placement {
    None,
    Covered,
    Wrong,
    Invalid,
}

/// Ground truth for one episode. Small and `Copy`, so search can clone freely.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct WorldState {
    pub task: TaskSpec,
    pub blocks: u32,
    pub covered: u32,
    pub pose: AgentPose,
    pub actions_taken: u8,
    pub terminal: bool,
}

/// Result of a pure state transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub state: WorldState,
    pub reward: f64,
    pub placement: Placement,
}

impl WorldState {
    pub fn reset(task: &TaskSpec) -> WorldState {
        WorldState {
            task: *task,
            blocks: 0,
            covered: 0,
            pose: task.start_pose,
            actions_taken: 0,
            terminal: false,
        }
    }

    pub fn walkable(&self, row: i32, col: i32) -> bool {
        !is_wall(row, col) && field_bit(row, col).is_none_or(|b| self.blocks & b == 0)
    }

    pub fn success(&self) -> bool {
        self.covered == self.task.colored
    }

    pub fn remaining(&self) -> u32 {
        (self.task.colored & !self.covered).count_ones()
    }

    /// Outcome of `action` without rendering.
    pub fn apply(&self, action: Action) -> Result<Transition, GridError> {
        if self.terminal {
            return Err(GridError::Terminal(self.actions_taken));
        }
        let mut next = *self;
        let mut placement = Placement::None;
        let mut bonus = 0.0;
        let pose = self.pose;
        let shift = |heading: Heading| {
            let (dr, dc) = heading.delta();
            (pose.row + dr, pose.col + dc)
        };
        match action {
            Action::Noop => return Err(GridError::Noop),
            Action::TurnLeft => next.pose.heading = pose.heading.left(),
            Action::TurnRight => next.pose.heading = pose.heading.right(),
            Action::Forward | Action::StrafeRight | Action::StrafeLeft => {
                let dir = match action {
                    Action::Forward => pose.heading,
                    Action::StrafeRight => pose.heading.right(),
                    _ => pose.heading.left(),
                };
                let (r, c) = shift(dir);
                if self.walkable(r, c) {
                    next.pose.row = r;
                    next.pose.col = c;
                }
            }
            Action::PlaceBlock => {
                let (r, c) = pose.ahead();
                match field_bit(r, c) {
                    Some(b) if self.blocks & b == 0 => {
                        next.blocks |= b;
                        if self.task.colored & b != 0 {
                            next.covered |= b;
                            placement = Placement::Covered;
                            bonus = 1.0;
                        } else {
                            placement = Placement::Wrong;
                            bonus = -1.0;
                        }
                    }
                    _ => placement = Placement::Invalid,
                }
            }
        }
        next.actions_taken += 1;
        next.terminal = next.actions_taken >= MAX_ACTIONS || next.success();
        Ok(Transition { state: next, reward: bonus - STEP_COST, placement })
    }
}

/// Rendered result of one environment step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub reward: f64,
    pub frame: Frame,
    pub terminal: bool,
}

/// A stateful environment instance producing frames.
#[derive(Debug, Clone)]
pub struct Env {
    state: WorldState,
}

impl Env {
    pub fn reset(task: &TaskSpec) -> (Env, Frame) {
        let state = WorldState::reset(task);
        (Env { state }, render(&state))
    }

    pub fn state(&self) -> &WorldState {
        &self.state
    }

    pub fn step(&mut self, action: Action) -> Result<StepOutcome, GridError> {
        let t = self.state.apply(action)?;
        self.state = t.state;
        Ok(StepOutcome { reward: t.reward, frame: render(&self.state), terminal: t.state.terminal })
    }
}
