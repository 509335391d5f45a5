//! DQN baseline: Q-network, epsilon-greedy acting and one-step TD training
//! against a periodically synced target network.
//!
//! ```text
//! stack 4x64x64 -> conv 8/4 -> 32x15x15 -> conv 4/2 -> 64x6x6
//!   -> conv 3/1 -> 64x4x4 = 1024 -> affine 512 -> affine 6
//! ```

use std::path::Path;
use std::sync::Arc;

use blockplan_tensor::init::{gaussian, he_std, lecun_std};
use blockplan_tensor::{
    affine_forward, conv2d_forward, relu, ConvSpec, Element, Graph, ParamSet, RmsProp, RmsPropConfig, Tensor, Var,
    WEIGHTS_MAGIC,
};
use rand_chacha::rand_core::RngCore;

use crate::agent::Agent;
use crate::error::{Error, Result};
use crate::gridworld::{generate_task, Action, Env, TaskSpec, NUM_ACTIONS};
use crate::model::{initial_stack, push_frame, stack_tensor, Episode, ReplayBuffer, Stack, TransitionRecord};
use crate::planner::Observation;
use crate::rng::{self, Purpose, Rng};

/// Channel and hidden widths. The full network uses [`QShape::DQN`]; narrow
/// clones keep finite-difference checks cheap.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QShape {
    pub channels: [usize; 3],
    pub hidden: usize,
}

impl QShape {
    pub const DQN: QShape = QShape { channels: [32, 64, 64], hidden: 512 };

    pub fn convs(&self) -> [ConvSpec; 3] {
        let [a, b, c] = self.channels;
        [ConvSpec::new(4, a, 8, 4, 0), ConvSpec::new(a, b, 4, 2, 0), ConvSpec::new(b, c, 3, 1, 0)]
    }

    /// Flattened conv output for a 64x64 input.
    pub fn features(&self) -> usize {
        self.channels[2] * 4 * 4
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QNet {
    shape: QShape,
    params: ParamSet,
}

impl QNet {
    pub fn new(seed: u64) -> QNet {
        QNet::with_shape(QShape::DQN, seed)
    }

    pub fn with_shape(shape: QShape, seed: u64) -> QNet {
        let mut rng = rng::stream(seed, Purpose::Init);
        let mut p = ParamSet::new();
        for (i, s) in shape.convs().iter().enumerate() {
            let fan_in = s.in_channels * s.kernel * s.kernel;
            p.push(format!("conv{}.w", i + 1), gaussian(&[s.out_channels, s.in_channels, s.kernel, s.kernel], he_std(fan_in), &mut rng));
            p.push(format!("conv{}.b", i + 1), Tensor::zeros(&[s.out_channels]));
        }
        p.push("fc1.w", gaussian(&[shape.hidden, shape.features()], he_std(shape.features()), &mut rng));
        p.push("fc1.b", Tensor::zeros(&[shape.hidden]));
        p.push("fc2.w", gaussian(&[NUM_ACTIONS, shape.hidden], lecun_std(shape.hidden), &mut rng));
        p.push("fc2.b", Tensor::zeros(&[NUM_ACTIONS]));
        QNet { shape, params: p }
    }

    pub fn shape(&self) -> QShape {
        self.shape
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Zeroes the output layer, so every Q-value is 0.
    pub fn zero_output(&mut self) {
        let n = self.params.len();
        for i in n - 2..n {
            self.params.get_mut(i).data_mut().fill(0.0);
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(self.params.save(path, WEIGHTS_MAGIC)?)
    }

    /// Loads full-width weights.
    pub fn load(path: &Path) -> Result<QNet> {
        let params = ParamSet::load(path, WEIGHTS_MAGIC)?;
        QNet::new(0).params.check_layout(&params)?;
        Ok(QNet { shape: QShape::DQN, params })
    }

    /// Records `[B, 4, 64, 64] -> [B, 6]` on `g`. Generic so checks can run
    /// in `f64`.
    pub fn forward<E: Element>(&self, g: &mut Graph<E>, vars: &[Var], stacks: Var) -> Result<Var> {
        let batch = g.value(stacks).shape()[0];
        let mut h = stacks;
        for (i, s) in self.shape.convs().iter().enumerate() {
            h = g.conv2d(h, vars[2 * i], vars[2 * i + 1], *s)?;
            h = g.relu(h);
        }
        let h = g.reshape(h, &[batch, self.shape.features()])?;
        let h = g.affine(h, vars[6], vars[7])?;
        let h = g.relu(h);
        Ok(g.affine(h, vars[8], vars[9])?)
    }

    /// Tape-free batched Q-values.
    pub fn q_batch(&self, stacks: &[&Stack]) -> Result<Vec<[f32; NUM_ACTIONS]>> {
        if stacks.is_empty() {
            return Ok(Vec::new());
        }
        let p = |i: usize| self.params.get(i);
        let mut h = stack_tensor(stacks.iter().copied());
        for (i, s) in self.shape.convs().iter().enumerate() {
            h = relu(&conv2d_forward(&h, s, p(2 * i), p(2 * i + 1))?);
        }
        let h = h.reshape(&[stacks.len(), self.shape.features()])?;
        let h = relu(&affine_forward(&h, p(6), p(7))?);
        let q = affine_forward(&h, p(8), p(9))?;
        Ok(q.data().chunks(NUM_ACTIONS).map(|r| r.try_into().expect("six values")).collect())
    }

    pub fn q_values(&self, stack: &Stack) -> Result<[f32; NUM_ACTIONS]> {
        Ok(self.q_batch(&[stack])?[0])
    }
}

/// Argmax with ties to the lowest index.
pub fn greedy_action(q: &[f32; NUM_ACTIONS]) -> Action {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate() {
        if v > q[best] {
            best = i;
        }
    }
    Action::from_index(best)
}

/// Uniform action with probability `epsilon`, else greedy.
pub fn epsilon_greedy(q: &[f32; NUM_ACTIONS], epsilon: f64, rng: &mut impl RngCore) -> Action {
    if rng::bernoulli(rng, epsilon) {
        Action::from_index(rng::below(rng, NUM_ACTIONS))
    } else {
        greedy_action(q)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DqnConfig {
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of total environment steps over which epsilon anneals.
    pub anneal_fraction: f64,
    /// Updates between target-network syncs.
    pub target_sync: u64,
    pub replay_capacity: usize,
    pub batch: usize,
    /// Environment steps per update.
    pub train_every: u64,
    pub eval_epsilon: f64,
    pub optim: RmsPropConfig,
}

impl Default for DqnConfig {
    fn default() -> Self {
        DqnConfig {
            gamma: 0.99,
            epsilon_start: 1.0,
            epsilon_end: 0.1,
            anneal_fraction: 0.2,
            target_sync: 2000,
            replay_capacity: 50_000,
            batch: 32,
            train_every: 4,
            eval_epsilon: 0.05,
            optim: RmsPropConfig::default(),
        }
    }
}

impl DqnConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!("dqn gamma {} outside (0, 1]", self.gamma)));
        }
        if ![self.epsilon_start, self.epsilon_end, self.anneal_fraction, self.eval_epsilon].into_iter().all(unit) {
            return Err(Error::Config("dqn epsilon settings must lie in [0, 1]".into()));
        }
        if self.target_sync == 0 || self.batch == 0 || self.train_every == 0 || self.replay_capacity == 0 {
            return Err(Error::Config("dqn counts must be positive".into()));
        }
        Ok(())
    }

    /// Linear anneal over the first `anneal_fraction` of `total` steps.
    pub fn epsilon(&self, step: u64, total: u64) -> f64 {
        let span = self.anneal_fraction * total as f64;
        if span <= 0.0 || step as f64 >= span {
            return self.epsilon_end;
        }
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * (step as f64 / span)
    }
}

/// `r` for terminal successors, else `r + gamma * max Q_target(next)`.
pub fn td_target(reward: f64, terminal: bool, next_max: f64, gamma: f64) -> f64 {
    if terminal {
        reward
    } else {
        reward + gamma * next_max
    }
}

/// Online and target networks with their optimizer.
#[derive(Debug, Clone)]
pub struct DqnTrainer {
    pub net: QNet,
    pub target: QNet,
    pub optim: RmsProp,
    pub updates: u64,
    pub config: DqnConfig,
}

impl DqnTrainer {
    pub fn new(net: QNet, config: DqnConfig) -> DqnTrainer {
        DqnTrainer { target: net.clone(), optim: RmsProp::new(config.optim, net.params()), net, updates: 0, config }
    }

    pub fn sync_target(&mut self) {
        self.target = self.net.clone();
    }

    /// TD targets for `batch`; terminal successors never reach the target
    /// network.
    pub fn targets(&self, batch: &[TransitionRecord]) -> Result<Vec<f32>> {
        let live: Vec<Stack> = batch.iter().filter(|r| !r.next_terminal()).map(|r| r.episode.stack(r.t + 1)).collect();
        let refs: Vec<&Stack> = live.iter().collect();
        let mut next = self.target.q_batch(&refs)?.into_iter();
        Ok(batch
            .iter()
            .map(|r| {
                let terminal = r.next_terminal();
                let next_max = if terminal {
                    0.0
                } else {
                    let q = next.next().expect("one row per live record");
                    q.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v)) as f64
                };
                td_target(r.reward(), terminal, next_max, self.config.gamma) as f32
            })
            .collect())
    }

    /// One RMSProp step on the squared TD error of the taken actions.
    /// Syncs the target network every `target_sync` updates.
    pub fn train_step(&mut self, batch: &[TransitionRecord]) -> Result<f64> {
        let targets = self.targets(batch)?;
        let b = batch.len();
        let stacks: Vec<Stack> = batch.iter().map(|r| r.episode.stack(r.t)).collect();
        let mut target = vec![0.0f32; b * NUM_ACTIONS];
        let mut mask = vec![0.0f32; b * NUM_ACTIONS];
        for (i, (r, y)) in batch.iter().zip(&targets).enumerate() {
            target[i * NUM_ACTIONS + r.action().index()] = *y;
            mask[i * NUM_ACTIONS + r.action().index()] = 1.0;
        }
        let mut g = Graph::new();
        let vars = self.net.params().register(&mut g);
        let x = g.constant(stack_tensor(stacks.iter()));
        let q = self.net.forward(&mut g, &vars, x)?;
        let t = g.constant(Tensor::new(&[b, NUM_ACTIONS], target)?);
        let m = g.constant(Tensor::new(&[b, NUM_ACTIONS], mask)?);
        let loss_var = g.mse(q, t, Some(m))?;
        let loss = g.value(loss_var).data()[0] as f64;
        let provenance = || batch.iter().map(|r| format!("{}:{}", r.episode.task.seed, r.t)).collect::<Vec<_>>().join(",");
        if !loss.is_finite() {
            return Err(Error::NonFinite { what: "td loss", step: self.updates, provenance: provenance() });
        }
        let mut grads = g.backward(loss_var)?;
        let grads: Vec<_> = vars.iter().map(|&v| grads.take(v)).collect();
        drop(g);
        let report = self.optim.step(self.net.params_mut(), &grads)?;
        if !report.skipped.is_empty() {
            return Err(Error::NonFinite {
                what: "td gradient",
                step: self.updates,
                provenance: format!("{:?} on {}", report.skipped, provenance()),
            });
        }
        self.updates += 1;
        if self.updates.is_multiple_of(self.config.target_sync) {
            self.sync_target();
        }
        Ok(loss)
    }
}

/// Epsilon-greedy evaluation policy over a fixed network.
pub struct DqnAgent {
    pub net: Arc<QNet>,
    pub epsilon: f64,
    pub rng: Rng,
}

impl Agent for DqnAgent {
    fn begin(&mut self, _: &Observation) -> Result<()> {
        Ok(())
    }

    fn act(&mut self, obs: &Observation) -> Result<Action> {
        let q = self.net.q_values(obs.stack)?;
        Ok(epsilon_greedy(&q, self.epsilon, &mut self.rng))
    }

    fn advance(&mut self, _: Action, _: &Observation) -> Result<()> {
        Ok(())
    }
}

/// One row of the training curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TdRecord {
    pub step: u64,
    pub td_loss: f64,
    pub epsilon: f64,
}

/// Episode in progress.
#[derive(Debug, Clone)]
struct Live {
    task: TaskSpec,
    env: Env,
    stack: Stack,
    actions: Vec<Action>,
}

impl Live {
    fn start(task: TaskSpec) -> Live {
        let (env, frame) = Env::reset(&task);
        Live { task, env, stack: initial_stack(frame), actions: Vec::new() }
    }
}

/// Online DQN: acts epsilon-greedily on freshly drawn tasks, stores whole
/// episodes and trains every `train_every` environment steps.
#[derive(Debug, Clone)]
pub struct DqnLearner {
    pub trainer: DqnTrainer,
    pub replay: ReplayBuffer,
    /// Length of the run, for the epsilon schedule.
    pub total_steps: u64,
    pub env_steps: u64,
    task_rng: Rng,
    explore_rng: Rng,
    sample_rng: Rng,
    live: Live,
}

/// Resumable position of a [`DqnLearner`] apart from networks and replay.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnerCursor {
    pub env_steps: u64,
    pub updates: u64,
    pub task_rng: rng::RngState,
    pub explore_rng: rng::RngState,
    pub sample_rng: rng::RngState,
    pub live_task: u64,
    pub live_actions: Vec<Action>,
}

impl DqnLearner {
    pub fn new(net: QNet, config: DqnConfig, total_steps: u64, seed: u64) -> Result<DqnLearner> {
        config.validate()?;
        let mut task_rng = rng::stream(seed, Purpose::Task);
        let live = Live::start(generate_task(task_rng.next_u64()));
        Ok(DqnLearner {
            trainer: DqnTrainer::new(net, config),
            replay: ReplayBuffer::new(config.replay_capacity),
            total_steps,
            env_steps: 0,
            task_rng,
            explore_rng: rng::stream(seed, Purpose::Explore),
            sample_rng: rng::stream(seed, Purpose::Sample),
            live,
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.trainer.config.epsilon(self.env_steps, self.total_steps)
    }

    /// One environment step, plus an update when due and the replay can
    /// fill a batch.
    pub fn step(&mut self) -> Result<Option<TdRecord>> {
        let epsilon = self.epsilon();
        let q = self.trainer.net.q_values(&self.live.stack)?;
        let action = epsilon_greedy(&q, epsilon, &mut self.explore_rng);
        let out = self.live.env.step(action)?;
        self.live.actions.push(action);
        self.live.stack = push_frame(&self.live.stack, Arc::new(out.frame));
        self.env_steps += 1;
        if out.terminal {
            let next = Live::start(generate_task(self.task_rng.next_u64()));
            let done = std::mem::replace(&mut self.live, next);
            self.replay.push(Episode::replay(&done.task, &done.actions)?);
        }
        let config = self.trainer.config;
        if !self.env_steps.is_multiple_of(config.train_every) || self.replay.len() < config.batch {
            return Ok(None);
        }
        let batch: Vec<TransitionRecord> = (0..config.batch).map(|_| self.replay.sample(&mut self.sample_rng)).collect();
        let td_loss = self.trainer.train_step(&batch)?;
        Ok(Some(TdRecord { step: self.env_steps, td_loss, epsilon }))
    }

    pub fn cursor(&self) -> LearnerCursor {
        LearnerCursor {
            env_steps: self.env_steps,
            updates: self.trainer.updates,
            task_rng: rng::RngState::capture(&self.task_rng),
            explore_rng: rng::RngState::capture(&self.explore_rng),
            sample_rng: rng::RngState::capture(&self.sample_rng),
            live_task: self.live.task.seed,
            live_actions: self.live.actions.clone(),
        }
    }

    /// Rebuilds a learner from saved parts. The episode in progress is
    /// replayed from its task seed and actions.
    pub fn restore(trainer: DqnTrainer, replay: ReplayBuffer, total_steps: u64, cursor: &LearnerCursor) -> Result<DqnLearner> {
        let mut live = Live::start(generate_task(cursor.live_task));
        for &a in &cursor.live_actions {
            let out = live.env.step(a)?;
            live.stack = push_frame(&live.stack, Arc::new(out.frame));
            live.actions.push(a);
        }
        let mut trainer = trainer;
        trainer.updates = cursor.updates;
        Ok(DqnLearner {
            trainer,
            replay,
            total_steps,
            env_steps: cursor.env_steps,
            task_rng: cursor.task_rng.restore(),
            explore_rng: cursor.explore_rng.restore(),
            sample_rng: cursor.sample_rng.restore(),
            live,
        })
    }
}
