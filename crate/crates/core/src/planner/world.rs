//! Models the planner can search over.

use std::sync::Arc;

use crate::error::Result;
use crate::gridworld::{Action, WorldState, NUM_ACTIONS};
use crate::model::{push_frame, Predictor, Stack};

/// What the acting agent sees after each step. Learned models use only the
/// frame stack; the simulator-backed oracle reads the true state.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    pub world: &'a WorldState,
    pub stack: &'a Stack,
}

/// A deterministic transition model with one-step-ahead rewards.
pub trait WorldModel {
    type State: Clone;

    /// Search state for a ground-truth observation.
    fn observe(&self, obs: &Observation) -> Self::State;

    /// Reward of each real action from `state` (the Noop query).
    fn rewards(&self, state: &Self::State) -> Result<[f64; NUM_ACTIONS]>;

    /// Successor of `state` under `action`, with the successor's reward vector.
    fn step(&self, state: &Self::State, action: Action) -> Result<(Self::State, [f64; NUM_ACTIONS])>;
}

/// The simulator itself: exact successors and rewards. Terminal states
/// absorb every action with zero reward.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleModel;

impl OracleModel {
    fn reward_vector(state: &WorldState) -> Result<[f64; NUM_ACTIONS]> {
        let mut out = [0.0; NUM_ACTIONS];
        if !state.terminal {
            for a in Action::ALL {
                out[a.index()] = state.apply(a)?.reward;
            }
        }
        Ok(out)
    }
}

impl WorldModel for OracleModel {
    type State = WorldState;

    fn observe(&self, obs: &Observation) -> WorldState {
        *obs.world
    }

    fn rewards(&self, state: &WorldState) -> Result<[f64; NUM_ACTIONS]> {
        Self::reward_vector(state)
    }

    fn step(&self, state: &WorldState, action: Action) -> Result<(WorldState, [f64; NUM_ACTIONS])> {
        if state.terminal {
            return Ok((*state, [0.0; NUM_ACTIONS]));
        }
        let next = state.apply(action)?.state;
        Ok((next, Self::reward_vector(&next)?))
    }
}

/// Search over frame stacks predicted by the transition network.
#[derive(Debug, Clone)]
pub struct LearnedModel<P> {
    pub predictor: P,
}

impl<P> LearnedModel<P> {
    pub fn new(predictor: P) -> Self {
        LearnedModel { predictor }
    }
}

fn widen(r: [f32; NUM_ACTIONS]) -> [f64; NUM_ACTIONS] {
    r.map(f64::from)
}

impl<P: Predictor> WorldModel for LearnedModel<P> {
    type State = Stack;

    fn observe(&self, obs: &Observation) -> Stack {
        obs.stack.clone()
    }

    fn rewards(&self, state: &Stack) -> Result<[f64; NUM_ACTIONS]> {
        Ok(widen(self.predictor.predict(state, Action::Noop)?.1))
    }

    fn step(&self, state: &Stack, action: Action) -> Result<(Stack, [f64; NUM_ACTIONS])> {
        let (frame, rewards) = self.predictor.predict(state, action)?;
        Ok((push_frame(state, Arc::new(frame)), widen(rewards)))
    }
}
