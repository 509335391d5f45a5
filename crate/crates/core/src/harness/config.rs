//! Flat `key = value` experiment configuration.
//!
//! Blank lines and lines starting with `#` are skipped. Every key has a
//! default; unknown or repeated keys are errors.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use blockplan_tensor::RmsPropConfig;

use crate::dqn::DqnConfig;
use crate::error::{Error, Result};
use crate::planner::PlannerConfig;

/// How seed and acting experience is gathered.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CollectPolicy {
    Random,
    /// Alternates random episodes with epsilon-greedy shortest-path ones.
    Mixed,
    /// The planner over the current model.
    Planner,
}

impl FromStr for CollectPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(CollectPolicy::Random),
            "mixed" => Ok(CollectPolicy::Mixed),
            "planner" => Ok(CollectPolicy::Planner),
            _ => Err(Error::Config(format!("unknown policy {s:?}"))),
        }
    }
}

impl CollectPolicy {
    pub fn name(self) -> &'static str {
        match self {
            CollectPolicy::Random => "random",
            CollectPolicy::Mixed => "mixed",
            CollectPolicy::Planner => "planner",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub out_dir: PathBuf,
    pub test_seed: u64,
    pub test_tasks: usize,
    pub agent_seed: u64,
    pub data_seed: u64,
    /// Model training steps; the DQN gets the same number of updates.
    pub train_steps: u64,
    pub eval_interval: u64,
    /// Steps at which the summary table reports scores.
    pub milestones: Vec<u64>,
    pub half_window: usize,
    /// Steps averaged into one training-curve row.
    pub curve_interval: u64,
    pub replay_capacity: usize,
    pub seed_transitions: usize,
    pub seed_policy: CollectPolicy,
    /// Training steps between acting episodes; 0 disables acting.
    pub act_interval: u64,
    pub act_policy: CollectPolicy,
    pub noop_probability: f64,
    pub model_optim: RmsPropConfig,
    pub planner: PlannerConfig,
    pub dqn: DqnConfig,
    /// Transitions placed in the DQN replay before it starts acting.
    pub dqn_seed_transitions: usize,
    pub run_mcts: bool,
    pub run_ablation: bool,
    pub run_dqn: bool,
    /// Evaluation threads; learned-model queries are batched across them.
    pub workers: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            out_dir: PathBuf::from("runs/default"),
            test_seed: 7,
            test_tasks: 100,
            agent_seed: 1,
            data_seed: 2,
            train_steps: 100_000,
            eval_interval: 2000,
            milestones: vec![20_000, 50_000, 100_000],
            half_window: 8,
            curve_interval: 100,
            replay_capacity: 50_000,
            seed_transitions: 10_000,
            seed_policy: CollectPolicy::Random,
            act_interval: 500,
            act_policy: CollectPolicy::Planner,
            noop_probability: crate::model::NOOP_PROBABILITY,
            model_optim: RmsPropConfig::default(),
            planner: PlannerConfig::default(),
            dqn: DqnConfig::default(),
            dqn_seed_transitions: 0,
            run_mcts: true,
            run_ablation: true,
            run_dqn: true,
            workers: 32,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {value:?}"))),
    }
}

fn parse_list(key: &str, value: &str) -> Result<Vec<u64>> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn join(list: &[u64]) -> String {
    list.iter().map(u64::to_string).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::file(path))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut c = ExperimentConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: {key} set twice", n + 1)));
            }
            c.set(key, value).map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        c.validate()?;
        Ok(c)
    }

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "out_dir" => self.out_dir = PathBuf::from(v),
            "test_seed" => self.test_seed = parse(key, v)?,
            "test_tasks" => self.test_tasks = parse(key, v)?,
            "agent_seed" => self.agent_seed = parse(key, v)?,
            "data_seed" => self.data_seed = parse(key, v)?,
            "train_steps" => self.train_steps = parse(key, v)?,
            "eval_interval" => self.eval_interval = parse(key, v)?,
            "milestones" => self.milestones = parse_list(key, v)?,
            "half_window" => self.half_window = parse(key, v)?,
            "curve_interval" => self.curve_interval = parse(key, v)?,
            "replay_capacity" => self.replay_capacity = parse(key, v)?,
            "seed_transitions" => self.seed_transitions = parse(key, v)?,
            "seed_policy" => self.seed_policy = v.parse()?,
            "act_interval" => self.act_interval = parse(key, v)?,
            "act_policy" => self.act_policy = v.parse()?,
            "noop_probability" => self.noop_probability = parse(key, v)?,
            "model_lr" => self.model_optim.lr = parse(key, v)?,
            "model_rho" => self.model_optim.rho = parse(key, v)?,
            "model_eps" => self.model_optim.eps = parse(key, v)?,
            "planner_depth" => self.planner.depth = parse(key, v)?,
            "planner_trajectories" => self.planner.trajectories = parse(key, v)?,
            "planner_k" => self.planner.k = parse(key, v)?,
            "planner_gamma" => self.planner.gamma = parse(key, v)?,
            "dqn_gamma" => self.dqn.gamma = parse(key, v)?,
            "dqn_epsilon_start" => self.dqn.epsilon_start = parse(key, v)?,
            "dqn_epsilon_end" => self.dqn.epsilon_end = parse(key, v)?,
            "dqn_anneal_fraction" => self.dqn.anneal_fraction = parse(key, v)?,
            "dqn_target_sync" => self.dqn.target_sync = parse(key, v)?,
            "dqn_replay_capacity" => self.dqn.replay_capacity = parse(key, v)?,
            "dqn_batch" => self.dqn.batch = parse(key, v)?,
            "dqn_train_every" => self.dqn.train_every = parse(key, v)?,
            "dqn_eval_epsilon" => self.dqn.eval_epsilon = parse(key, v)?,
            "dqn_lr" => self.dqn.optim.lr = parse(key, v)?,
            "dqn_rho" => self.dqn.optim.rho = parse(key, v)?,
            "dqn_eps" => self.dqn.optim.eps = parse(key, v)?,
            "dqn_seed_transitions" => self.dqn_seed_transitions = parse(key, v)?,
            "run_mcts" => self.run_mcts = parse_bool(key, v)?,
            "run_ablation" => self.run_ablation = parse_bool(key, v)?,
            "run_dqn" => self.run_dqn = parse_bool(key, v)?,
            "workers" => self.workers = parse(key, v)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.eval_interval == 0 || self.curve_interval == 0 {
            return fail("eval_interval and curve_interval must be positive");
        }
        if self.test_tasks == 0 || self.workers == 0 {
            return fail("test_tasks and workers must be positive");
        }
        if !(0.0..=1.0).contains(&self.noop_probability) {
            return fail("noop_probability must lie in [0, 1]");
        }
        if self.seed_policy == CollectPolicy::Planner {
            return fail("seed_policy cannot be planner: there is no model yet");
        }
        if self.run_mcts && self.seed_transitions < 32 {
            return fail("seed_transitions must fill at least one batch");
        }
        if self.milestones.windows(2).any(|w| w[0] >= w[1]) {
            return fail("milestones must increase");
        }
        self.planner.validate()?;
        self.dqn.validate()
    }

    /// Every key with its resolved value, in `parse` order.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").expect("string write");
        kv("out_dir", self.out_dir.display().to_string());
        kv("test_seed", self.test_seed.to_string());
        kv("test_tasks", self.test_tasks.to_string());
        kv("agent_seed", self.agent_seed.to_string());
        kv("data_seed", self.data_seed.to_string());
        kv("train_steps", self.train_steps.to_string());
        kv("eval_interval", self.eval_interval.to_string());
        kv("milestones", join(&self.milestones));
        kv("half_window", self.half_window.to_string());
        kv("curve_interval", self.curve_interval.to_string());
        kv("replay_capacity", self.replay_capacity.to_string());
        kv("seed_transitions", self.seed_transitions.to_string());
        kv("seed_policy", self.seed_policy.name().into());
        kv("act_interval", self.act_interval.to_string());
        kv("act_policy", self.act_policy.name().into());
        kv("noop_probability", self.noop_probability.to_string());
        kv("model_lr", self.model_optim.lr.to_string());
        kv("model_rho", self.model_optim.rho.to_string());
        kv("model_eps", self.model_optim.eps.to_string());
        kv("planner_depth", self.planner.depth.to_string());
        kv("planner_trajectories", self.planner.trajectories.to_string());
        kv("planner_k", self.planner.k.to_string());
        kv("planner_gamma", self.planner.gamma.to_string());
        kv("dqn_gamma", self.dqn.gamma.to_string());
        kv("dqn_epsilon_start", self.dqn.epsilon_start.to_string());
        kv("dqn_epsilon_end", self.dqn.epsilon_end.to_string());
        kv("dqn_anneal_fraction", self.dqn.anneal_fraction.to_string());
        kv("dqn_target_sync", self.dqn.target_sync.to_string());
        kv("dqn_replay_capacity", self.dqn.replay_capacity.to_string());
        kv("dqn_batch", self.dqn.batch.to_string());
        kv("dqn_train_every", self.dqn.train_every.to_string());
        kv("dqn_eval_epsilon", self.dqn.eval_epsilon.to_string());
        kv("dqn_lr", self.dqn.optim.lr.to_string());
        kv("dqn_rho", self.dqn.optim.rho.to_string());
        kv("dqn_eps", self.dqn.optim.eps.to_string());
        kv("dqn_seed_transitions", self.dqn_seed_transitions.to_string());
        kv("run_mcts", self.run_mcts.to_string());
        kv("run_ablation", self.run_ablation.to_string());
        kv("run_dqn", self.run_dqn.to_string());
        kv("workers", self.workers.to_string());
        s
    }
}
