//! Acting policies and the episode loop that drives them.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::expert::noisy_expert_action;
use crate::gridworld::{Action, EpisodeLog, Env, TaskSpec, WorldState};
use crate::model::{initial_stack, push_frame, Episode, Stack};
use crate::planner::{Observation, Planner, WorldModel};
use crate::rng::{self, Rng};

pub trait Agent {
    /// Called once with the reset observation.
    fn begin(&mut self, obs: &Observation) -> Result<()>;

    fn act(&mut self, obs: &Observation) -> Result<Action>;

    /// Called after `action` was executed and `obs` observed, unless the
    /// episode ended.
    fn advance(&mut self, action: Action, obs: &Observation) -> Result<()>;
}

/// Uniform over the six real actions.
pub struct RandomAgent {
    pub rng: Rng,
}

impl Agent for RandomAgent {
    fn begin(&mut self, _: &Observation) -> Result<()> {
        Ok(())
    }

    fn act(&mut self, _: &Observation) -> Result<Action> {
        Ok(Action::from_index(rng::below(&mut self.rng, Action::ALL.len())))
    }

    fn advance(&mut self, _: Action, _: &Observation) -> Result<()> {
        Ok(())
    }
}

/// Shortest-path expert that takes a uniform action with probability
/// `epsilon`. Reads the true state.
pub struct ExpertAgent {
    pub epsilon: f64,
    pub rng: Rng,
}

impl Agent for ExpertAgent {
    fn begin(&mut self, _: &Observation) -> Result<()> {
        Ok(())
    }

    fn act(&mut self, obs: &Observation) -> Result<Action> {
        Ok(noisy_expert_action(obs.world, self.epsilon, &mut self.rng))
    }

    fn advance(&mut self, _: Action, _: &Observation) -> Result<()> {
        Ok(())
    }
}

/// Plans every step and reuses the tree across steps.
pub struct MctsAgent<M: WorldModel> {
    pub planner: Planner<M>,
}

impl<M: WorldModel> Agent for MctsAgent<M> {
    fn begin(&mut self, obs: &Observation) -> Result<()> {
        self.planner.reset(obs)
    }

    fn act(&mut self, _: &Observation) -> Result<Action> {
        self.planner.plan()
    }

    fn advance(&mut self, action: Action, obs: &Observation) -> Result<()> {
        self.planner.advance_root(action, obs)
    }
}

/// A finished episode: the log, the actions taken and the final state.
#[derive(Debug, Clone)]
pub struct EpisodeResult {
    pub log: EpisodeLog,
    pub actions: Vec<Action>,
    pub final_state: WorldState,
}

impl EpisodeResult {
    pub fn total(&self) -> f64 {
        self.log.total()
    }

    pub fn success(&self) -> bool {
        self.log.success
    }
}

/// Runs `agent` on `task` until the environment reports a terminal state.
/// Errors carry the task seed.
pub fn run_episode(agent: &mut dyn Agent, task: &TaskSpec) -> Result<EpisodeResult> {
    run_inner(agent, task).map_err(|e| Error::Task { seed: task.seed, source: Box::new(e) })
}

fn run_inner(agent: &mut dyn Agent, task: &TaskSpec) -> Result<EpisodeResult> {
    let (mut env, frame) = Env::reset(task);
    let mut stack: Stack = initial_stack(frame);
    agent.begin(&Observation { world: env.state(), stack: &stack })?;
    let mut log = EpisodeLog::default();
    let mut actions = Vec::new();
    loop {
        let action = agent.act(&Observation { world: env.state(), stack: &stack })?;
        let out = env.step(action)?;
        log.push(action, out.reward, out.terminal);
        actions.push(action);
        stack = push_frame(&stack, Arc::new(out.frame));
        if out.terminal {
            break;
        }
        agent.advance(action, &Observation { world: env.state(), stack: &stack })?;
    }
    log.success = env.state().success();
    Ok(EpisodeResult { log, actions, final_state: *env.state() })
}

/// Replays a finished episode into stored form for the replay buffer.
pub fn to_episode(task: &TaskSpec, result: &EpisodeResult) -> Result<Episode> {
    Episode::replay(task, &result.actions)
}
