//! Test sets, parallel episode runs and experience collection.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use rand_chacha::rand_core::RngCore;

use super::config::CollectPolicy;
use crate::agent::{run_episode, to_episode, Agent, EpisodeResult, ExpertAgent, MctsAgent, RandomAgent};
use crate::dqn::{DqnAgent, QNet};
use crate::error::{Error, Result};
use crate::gridworld::{generate_task, TaskSpec};
use crate::model::{BatchQueue, ModelNet, ReplayBuffer};
use crate::planner::{LearnedModel, OracleModel, Planner, PlannerConfig};
use crate::rng::{self, Purpose};

/// `count` tasks whose seeds come from the test-set stream of `seed`.
pub fn build_test_set(seed: u64, count: usize) -> Vec<TaskSpec> {
    let mut rng = rng::stream(seed, Purpose::TestSet);
    (0..count).map(|_| generate_task(rng.next_u64())).collect()
}

/// An acting policy that can be instantiated once per task.
#[derive(Clone)]
pub enum Policy {
    Random,
    /// Shortest-path expert with epsilon noise.
    Expert(f64),
    /// Planner over the ground-truth simulator.
    Oracle(PlannerConfig),
    /// Planner over a learned model.
    Mcts(Arc<ModelNet>, PlannerConfig),
    Dqn(Arc<QNet>, f64),
}

/// Per-task agent seed, distinct across tasks and runs.
fn task_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(index as u64)
}

/// Runs every task to termination with `workers` threads. Results are in
/// task order and do not depend on `workers`: learned-model queries are
/// batched, and batching leaves predictions unchanged.
pub fn run_tasks(policy: &Policy, tasks: &[TaskSpec], seed: u64, workers: usize) -> Result<Vec<EpisodeResult>> {
    let workers = workers.clamp(1, tasks.len().max(1));
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<EpisodeResult>>>> = Mutex::new((0..tasks.len()).map(|_| None).collect());
    let queue = match policy {
        Policy::Mcts(net, _) => Some(BatchQueue::new(net.clone())),
        _ => None,
    };
    std::thread::scope(|s| {
        for _ in 0..workers {
            let client = queue.as_ref().map(|q| q.client());
            let (next, slots) = (&next, &slots);
            s.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= tasks.len() {
                    break;
                }
                let agent_seed = task_seed(seed, i);
                let result = match (policy, &client) {
                    (Policy::Mcts(_, config), Some(c)) => {
                        let model = LearnedModel { predictor: c };
                        run_episode(&mut MctsAgent { planner: Planner::new(model, *config, agent_seed) }, &tasks[i])
                    }
                    _ => single(policy, agent_seed, &tasks[i]),
                };
                let failed = result.is_err();
                slots.lock().unwrap_or_else(|e| e.into_inner())[i] = Some(result);
                if failed {
                    next.store(tasks.len(), Ordering::Relaxed);
                    break;
                }
            });
        }
    });
    let slots = slots.into_inner().unwrap_or_else(|e| e.into_inner());
    let mut out = Vec::with_capacity(tasks.len());
    for (i, slot) in slots.into_iter().enumerate() {
        match slot {
            Some(r) => out.push(r?),
            None => return Err(Error::Task { seed: tasks[i].seed, source: Box::new(Error::Model("not run".into())) }),
        }
    }
    Ok(out)
}

fn single(policy: &Policy, seed: u64, task: &TaskSpec) -> Result<EpisodeResult> {
    let mut agent: Box<dyn Agent> = match policy {
        Policy::Random => Box::new(RandomAgent { rng: rng::stream(seed, Purpose::Explore) }),
        Policy::Expert(epsilon) => Box::new(ExpertAgent { epsilon: *epsilon, rng: rng::stream(seed, Purpose::Expert) }),
        Policy::Oracle(config) => Box::new(MctsAgent { planner: Planner::new(OracleModel, *config, seed) }),
        Policy::Mcts(net, config) => {
            Box::new(MctsAgent { planner: Planner::new(LearnedModel { predictor: net.clone() }, *config, seed) })
        }
        Policy::Dqn(net, epsilon) => {
            Box::new(DqnAgent { net: net.clone(), epsilon: *epsilon, rng: rng::stream(seed, Purpose::Explore) })
        }
    };
    run_episode(agent.as_mut(), task)
}

/// Scores on one test set at one training step.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub step: u64,
    pub agent: String,
    pub avg_reward: f64,
    pub success_rate: f64,
    pub returns: Vec<f64>,
    pub successes: Vec<bool>,
    /// Actions taken over all tasks.
    pub actions: usize,
}

impl EvalReport {
    pub fn new(step: u64, agent: &str, results: &[EpisodeResult]) -> EvalReport {
        let returns: Vec<f64> = results.iter().map(|r| r.total()).collect();
        let successes: Vec<bool> = results.iter().map(|r| r.success()).collect();
        let n = results.len().max(1) as f64;
        EvalReport {
            step,
            agent: agent.to_string(),
            avg_reward: returns.iter().sum::<f64>() / n,
            success_rate: successes.iter().filter(|&&s| s).count() as f64 / n,
            returns,
            successes,
            actions: results.iter().map(|r| r.actions.len()).sum(),
        }
    }

    pub fn successes(&self) -> usize {
        self.successes.iter().filter(|&&s| s).count()
    }
}

/// Runs `policy` on the test set and aggregates.
pub fn evaluate(policy: &Policy, agent: &str, step: u64, tasks: &[TaskSpec], seed: u64, workers: usize) -> Result<EvalReport> {
    Ok(EvalReport::new(step, agent, &run_tasks(policy, tasks, seed, workers)?))
}

/// Fresh training tasks plus the policy draws used to act on them.
#[derive(Debug, Clone)]
pub struct Collector {
    task_rng: rng::Rng,
    episodes: u64,
    seed: u64,
}

impl Collector {
    pub fn new(seed: u64) -> Collector {
        Collector { task_rng: rng::stream(seed, Purpose::Task), episodes: 0, seed }
    }

    pub fn episodes(&self) -> u64 {
        self.episodes
    }

    /// Restores a collector that has already produced `episodes` episodes.
    pub fn resume(seed: u64, episodes: u64) -> Collector {
        let mut c = Collector::new(seed);
        for _ in 0..episodes {
            c.task_rng.next_u64();
        }
        c.episodes = episodes;
        c
    }

    fn next_task(&mut self) -> (TaskSpec, u64) {
        let task = generate_task(self.task_rng.next_u64());
        let agent_seed = task_seed(self.seed ^ 0x5eed, self.episodes as usize);
        self.episodes += 1;
        (task, agent_seed)
    }

    /// One episode of `policy` on the next task. The mixed policy cycles
    /// random, random, expert at 0.25, expert at 0.5 by episode index.
    pub fn episode(&mut self, policy: CollectPolicy, model: Option<(&Arc<ModelNet>, PlannerConfig)>) -> Result<(TaskSpec, EpisodeResult)> {
        let index = self.episodes;
        let (task, seed) = self.next_task();
        let p = match (policy, model) {
            (CollectPolicy::Random, _) => Policy::Random,
            (CollectPolicy::Mixed, _) => match index % 4 {
                0 | 1 => Policy::Random,
                2 => Policy::Expert(0.25),
                _ => Policy::Expert(0.5),
            },
            (CollectPolicy::Planner, Some((net, config))) => Policy::Mcts(net.clone(), config),
            (CollectPolicy::Planner, None) => return Err(Error::Config("planner collection needs a model".into())),
        };
        Ok((task, single(&p, seed, &task)?))
    }

    /// Episodes until `buffer` holds at least `transitions` more transitions
    /// than it started with (or is full).
    pub fn fill(&mut self, buffer: &mut ReplayBuffer, policy: CollectPolicy, transitions: usize) -> Result<()> {
        let target = (buffer.len() + transitions).min(buffer.capacity());
        let mut added = 0;
        while buffer.len() < target && added < transitions {
            let (task, result) = self.episode(policy, None)?;
            added += result.actions.len();
            buffer.push(to_episode(&task, &result)?);
        }
        Ok(())
    }
}
