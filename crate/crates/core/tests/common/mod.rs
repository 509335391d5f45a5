//! Oracles shared by the integration tests. They re-derive the environment
//! rules from scratch instead of calling into the crate's dynamics.

#![allow(dead_code)]

use std::collections::HashSet;

use blockplan::gridworld::{Action, TaskSpec};

/// Independent bookkeeping of one episode: positions as `(x, y)` with `x` the
/// column, facing as 0..4 clockwise from north, blocks in a hash set.
pub struct Accounting {
    x: i32,
    y: i32,
    facing: usize,
    colored: HashSet<(i32, i32)>,
    blocks: HashSet<(i32, i32)>,
    pub correct: u32,
    pub wrong: u32,
    pub actions: u32,
}

const DX: [i32; 4] = [0, 1, 0, -1];
const DY: [i32; 4] = [-1, 0, 1, 0];

impl Accounting {
    pub fn new(task: &TaskSpec) -> Self {
        let p = task.start_pose;
        let facing = match p.heading {
            blockplan::gridworld::Heading::North => 0,
            blockplan::gridworld::Heading::East => 1,
            blockplan::gridworld::Heading::South => 2,
            blockplan::gridworld::Heading::West => 3,
        };
        Accounting {
            x: p.col,
            y: p.row,
            facing,
            colored: task.colored_cells().map(|(r, c)| (c + 2, r + 2)).collect(),
            blocks: HashSet::new(),
            correct: 0,
            wrong: 0,
            actions: 0,
        }
    }

    fn free(&self, x: i32, y: i32) -> bool {
        (1..=7).contains(&x) && (1..=7).contains(&y) && !self.blocks.contains(&(x, y))
    }

    pub fn done(&self) -> bool {
        self.actions >= 30 || self.correct as usize == self.colored.len()
    }

    /// Expected reward for `action`, updating the bookkeeping.
    pub fn step(&mut self, action: Action) -> f64 {
        assert!(!self.done());
        self.actions += 1;
        let mut reward = -0.04;
        let mv = |f: usize| (DX[f % 4], DY[f % 4]);
        let shift = match action {
            Action::Forward => Some(mv(self.facing)),
            Action::StrafeRight => Some(mv(self.facing + 1)),
            Action::StrafeLeft => Some(mv(self.facing + 3)),
            Action::TurnLeft => {
                self.facing = (self.facing + 3) % 4;
                None
            }
            Action::TurnRight => {
                self.facing = (self.facing + 1) % 4;
                None
            }
            Action::PlaceBlock => {
                let (tx, ty) = (self.x + DX[self.facing], self.y + DY[self.facing]);
                let on_field = (2..=6).contains(&tx) && (2..=6).contains(&ty);
                if on_field && !self.blocks.contains(&(tx, ty)) {
                    self.blocks.insert((tx, ty));
                    if self.colored.contains(&(tx, ty)) {
                        self.correct += 1;
                        reward = 0.96;
                    } else {
                        self.wrong += 1;
                        reward = -1.04;
                    }
                }
                None
            }
            Action::Noop => panic!("noop has no accounting"),
        };
        if let Some((dx, dy)) = shift {
            if self.free(self.x + dx, self.y + dy) {
                self.x += dx;
                self.y += dy;
            }
        }
        reward
    }

    /// Closed-form episode total.
    pub fn closed_form_return(&self) -> f64 {
        self.correct as f64 - self.wrong as f64 - 0.04 * self.actions as f64
    }

    pub fn pose(&self) -> (i32, i32) {
        (self.y, self.x)
    }
}

/// Tiny splitmix64 used only to drive random policies in tests.
pub struct SplitMix(pub u64);

impl SplitMix {
    pub fn next(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    pub fn action(&mut self) -> Action {
        Action::ALL[(self.next() % 6) as usize]
    }
}

/// Mean of the zero-truncated Binomial(n, p).
pub fn truncated_binomial_mean(n: u32, p: f64) -> f64 {
    n as f64 * p / (1.0 - (1.0 - p).powi(n as i32))
}
