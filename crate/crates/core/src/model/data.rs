//! Stored episodes, training pairs and the replay buffer.

use std::collections::VecDeque;
use std::sync::Arc;

use rand_chacha::rand_core::RngCore;

use super::net::Stack;
use crate::error::Result;
use crate::gridworld::{render, Action, Frame, TaskSpec, WorldState, NUM_ACTIONS};
use crate::rng;

/// Probability that a sampled record becomes a noop pair: noop is a seventh
/// action drawn uniformly against the six real ones.
pub const NOOP_PROBABILITY: f64 = 1.0 / 7.0;

/// One finished episode. `frames[t]` is the observation before action `t`,
/// so there is one more frame than actions.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub task: TaskSpec,
    pub actions: Vec<Action>,
    pub rewards: Vec<f64>,
    pub frames: Vec<Arc<Frame>>,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Rebuilds frames and rewards by replaying `actions` from the task seed.
    pub fn replay(task: &TaskSpec, actions: &[Action]) -> Result<Episode> {
        let mut state = WorldState::reset(task);
        let mut frames = vec![Arc::new(render(&state))];
        let mut rewards = Vec::with_capacity(actions.len());
        for &a in actions {
            let t = state.apply(a)?;
            state = t.state;
            rewards.push(t.reward);
            frames.push(Arc::new(render(&state)));
        }
        Ok(Episode { task: *task, actions: actions.to_vec(), rewards, frames })
    }

    /// Frames `t-3..=t`, padding before the start with the first frame.
    pub fn stack(&self, t: usize) -> Stack {
        std::array::from_fn(|j| self.frames[(t + j).saturating_sub(3)].clone())
    }

    pub fn record(&self, t: usize) -> TransitionRecord<'_> {
        assert!(t < self.len(), "record {t} of {}", self.len());
        TransitionRecord { episode: self, t }
    }
}

/// Time step `t` of a stored episode.
#[derive(Debug, Clone, Copy)]
pub struct TransitionRecord<'a> {
    pub episode: &'a Episode,
    pub t: usize,
}

impl TransitionRecord<'_> {
    pub fn action(&self) -> Action {
        self.episode.actions[self.t]
    }

    pub fn reward(&self) -> f64 {
        self.episode.rewards[self.t]
    }

    /// `s_{t+1}` is terminal exactly when it is the episode's last frame.
    pub fn next_terminal(&self) -> bool {
        self.t + 1 == self.episode.len()
    }

    /// `(a_{t+1}, r_{t+2})`, absent after a terminal `s_{t+1}`.
    pub fn next(&self) -> Option<(Action, f64)> {
        let e = self.episode;
        (!self.next_terminal()).then(|| (e.actions[self.t + 1], e.rewards[self.t + 1]))
    }
}

/// Network inputs and targets for one sample.
#[derive(Debug, Clone)]
pub struct TrainingPair {
    pub stack: Stack,
    pub action: Action,
    pub frame_target: Arc<Frame>,
    pub reward_target: [f32; NUM_ACTIONS],
    pub reward_mask: [f32; NUM_ACTIONS],
    /// `seed:t` plus `:noop` for noop pairs.
    pub provenance: String,
}

/// Real-action pair: predict `s_{t+1}` and `r_{t+2}` at `a_{t+1}`. Noop
/// pair: reproduce `s_t` and predict `r_{t+1}` at `a_t`.
pub fn make_training_pair(record: &TransitionRecord, noop: bool) -> TrainingPair {
    let e = record.episode;
    let t = record.t;
    let mut reward_target = [0.0; NUM_ACTIONS];
    let mut reward_mask = [0.0; NUM_ACTIONS];
    let mut supervise = |a: Action, r: f64| {
        reward_target[a.index()] = r as f32;
        reward_mask[a.index()] = 1.0;
    };
    let (action, frame_target) = if noop {
        supervise(record.action(), record.reward());
        (Action::Noop, e.frames[t].clone())
    } else {
        if let Some((a, r)) = record.next() {
            supervise(a, r);
        }
        (record.action(), e.frames[t + 1].clone())
    };
    TrainingPair {
        stack: e.stack(t),
        action,
        frame_target,
        reward_target,
        reward_mask,
        provenance: format!("{}:{}{}", e.task.seed, t, if noop { ":noop" } else { "" }),
    }
}

/// Episodes up to a transition-count capacity; the oldest whole episodes are
/// evicted first.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    episodes: VecDeque<Episode>,
    capacity: usize,
    transitions: usize,
    /// Transition offset of each episode, for uniform sampling.
    starts: Vec<usize>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> ReplayBuffer {
        ReplayBuffer { episodes: VecDeque::new(), capacity, transitions: 0, starts: Vec::new() }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Stored transitions.
    pub fn len(&self) -> usize {
        self.transitions
    }

    pub fn is_empty(&self) -> bool {
        self.transitions == 0
    }

    pub fn episodes(&self) -> impl Iterator<Item = &Episode> {
        self.episodes.iter()
    }

    pub fn push(&mut self, episode: Episode) {
        if episode.is_empty() {
            return;
        }
        self.transitions += episode.len();
        self.episodes.push_back(episode);
        while self.transitions > self.capacity {
            let old = self.episodes.pop_front().expect("non-empty buffer");
            self.transitions -= old.len();
        }
        self.starts.clear();
        let mut at = 0;
        for e in &self.episodes {
            self.starts.push(at);
            at += e.len();
        }
    }

    /// Transition `i` in insertion order.
    pub fn get(&self, i: usize) -> TransitionRecord<'_> {
        let e = self.starts.partition_point(|&s| s <= i) - 1;
        self.episodes[e].record(i - self.starts[e])
    }

    /// Uniform transition.
    pub fn sample(&self, rng: &mut impl RngCore) -> TransitionRecord<'_> {
        self.get(rng::below(rng, self.transitions))
    }

    /// `n` uniform records, each turned into a noop pair with probability
    /// `noop_probability`.
    pub fn sample_pairs(&self, n: usize, noop_probability: f64, rng: &mut impl RngCore) -> Vec<TrainingPair> {
        (0..n)
            .map(|_| {
                let r = self.sample(rng);
                let noop = rng::bernoulli(rng, noop_probability);
                make_training_pair(&r, noop)
            })
            .collect()
    }
}
