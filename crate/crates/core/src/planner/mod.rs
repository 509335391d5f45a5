//! UCT tree search with max-backup over a deterministic model.
//!
//! Every trajectory descends `depth` edges from the root. An edge's reward
//! is the parent's predicted reward for that action, and a node's value `v`
//! is the best discounted return seen from the edge that enters it. Leaves
//! get no bootstrap value. Unexplored actions are tried before UCT applies:
//! the highest predicted reward first, or a seeded uniform pick in the
//! ablated configuration.

mod world;

use std::io::Write;

use crate::error::{Error, Result};
use crate::gridworld::{Action, NUM_ACTIONS};
use crate::rng::{self, Purpose, Rng};

pub use world::{LearnedModel, Observation, OracleModel, WorldModel};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlannerConfig {
    pub depth: usize,
    pub trajectories: usize,
    pub k: f64,
    pub gamma: f64,
    /// Order unexplored actions by predicted reward; off means uniform.
    pub one_step_ahead: bool,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig { depth: 10, trajectories: 100, k: 8.0, gamma: 0.95, one_step_ahead: true }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.trajectories == 0 {
            return Err(Error::Config("planner depth and trajectories must be at least 1".into()));
        }
        if !(self.k >= 0.0) || !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!("planner needs k >= 0 and 0 < gamma <= 1, got k={} gamma={}", self.k, self.gamma)));
        }
        Ok(())
    }
}

/// `v + k * sqrt(ln(n_p) / n_s)`.
pub fn uct(v: f64, n_s: u64, n_p: u64, k: f64) -> f64 {
    v + k * ((n_p as f64).ln() / n_s as f64).sqrt()
}

#[derive(Debug, Clone)]
pub struct SearchNode<S> {
    pub state: S,
    /// Predicted reward of each action from this node.
    pub rewards: [f64; NUM_ACTIONS],
    /// Best return since the last root advance; unset until a completed
    /// trajectory passes through.
    pub v: Option<f64>,
    /// Value from before the last root advance. Those returns were cut one
    /// edge shorter, so they only order first visits.
    pub prior: Option<f64>,
    pub n: u64,
    pub children: [Option<usize>; NUM_ACTIONS],
    /// Set on root advance: the state was predicted from an older root and
    /// is recomputed on the next visit.
    pub stale: bool,
}

impl<S> SearchNode<S> {
    fn new(state: S, rewards: [f64; NUM_ACTIONS]) -> Self {
        SearchNode { state, rewards, v: None, prior: None, n: 0, children: [None; NUM_ACTIONS], stale: false }
    }
}

/// One edge of one trajectory, for the audit log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryEdge {
    pub trajectory: u64,
    /// 1 for the edge leaving the root.
    pub depth: usize,
    pub action: Action,
    pub edge_reward: f64,
    /// Discounted return of the whole trajectory.
    pub ret: f64,
    /// Whether this trajectory raised the root value.
    pub new_max: bool,
}

pub fn write_trajectory_log(edges: &[TrajectoryEdge], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["trajectory", "depth", "action", "edge_reward", "return", "new_max"])?;
    for e in edges {
        out.write_record([
            e.trajectory.to_string(),
            e.depth.to_string(),
            e.action.name().to_string(),
            e.edge_reward.to_string(),
            e.ret.to_string(),
            e.new_max.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// A search tree plus the model it queries. Node 0 is always the root.
pub struct Planner<M: WorldModel> {
    pub config: PlannerConfig,
    model: M,
    nodes: Vec<SearchNode<M::State>>,
    ablation_rng: Rng,
    tie_rng: Rng,
    model_calls: u64,
    trajectories: u64,
    log: Option<Vec<TrajectoryEdge>>,
}

impl<M: WorldModel> Planner<M> {
    /// `seed` drives the ablated configuration's uniform choice and the
    /// tie-breaks between equally ranked actions.
    pub fn new(model: M, config: PlannerConfig, seed: u64) -> Self {
        Planner {
            config,
            model,
            nodes: Vec::new(),
            ablation_rng: rng::stream(seed, Purpose::Ablation),
            tie_rng: rng::stream(seed, Purpose::Decision),
            model_calls: 0,
            trajectories: 0,
            log: None,
        }
    }

    pub fn model(&self) -> &M {
        &self.model
    }

    pub fn enable_log(&mut self) {
        self.log = Some(Vec::new());
    }

    /// Drains the trajectory log.
    pub fn take_log(&mut self) -> Vec<TrajectoryEdge> {
        self.log.as_mut().map(std::mem::take).unwrap_or_default()
    }

    /// Model queries so far, including root refreshes.
    pub fn model_calls(&self) -> u64 {
        self.model_calls
    }

    pub fn root(&self) -> &SearchNode<M::State> {
        &self.nodes[0]
    }

    pub fn node(&self, i: usize) -> &SearchNode<M::State> {
        &self.nodes[i]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Child of `node` under `action`, if expanded.
    pub fn child(&self, node: usize, action: Action) -> Option<usize> {
        self.nodes[node].children[action.index()]
    }

    /// Starts a fresh tree at a ground-truth observation.
    pub fn reset(&mut self, obs: &Observation) -> Result<()> {
        let state = self.model.observe(obs);
        let rewards = self.query_rewards(&state)?;
        self.nodes = vec![SearchNode::new(state, rewards)];
        Ok(())
    }

    fn query_rewards(&mut self, state: &M::State) -> Result<[f64; NUM_ACTIONS]> {
        self.model_calls += 1;
        self.model.rewards(state)
    }

    fn query_step(&mut self, node: usize, action: Action) -> Result<(M::State, [f64; NUM_ACTIONS])> {
        self.model_calls += 1;
        self.model.step(&self.nodes[node].state, action)
    }

    fn unexplored(&self, node: usize) -> Vec<usize> {
        let n = &self.nodes[node];
        (0..NUM_ACTIONS).filter(|&a| n.children[a].is_none_or(|c| self.nodes[c].v.is_none())).collect()
    }

    /// Tree policy at `node`. Unexplored children come first: carried
    /// value or predicted reward decides, and exact ties are drawn uniformly.
    /// Without one-step-ahead rewards, only carried values order them and the
    /// rest are uniform. Once every child has a value, UCT decides with ties
    /// to the lowest index.
    pub fn select_child(&mut self, node: usize) -> Action {
        let open = self.unexplored(node);
        if open.is_empty() {
            let n = &self.nodes[node];
            let parent = n.n.max(1);
            return Action::from_index(argmax((0..NUM_ACTIONS).map(|a| {
                let c = &self.nodes[n.children[a].expect("all expanded")];
                uct(c.v.expect("explored"), c.n.max(1), parent, self.config.k)
            })));
        }
        let keys: Vec<f64> = if self.config.one_step_ahead {
            open.iter().map(|&a| self.first_visit_key(node, a)).collect()
        } else {
            open.iter().map(|&a| self.prior(node, a).unwrap_or(f64::NEG_INFINITY)).collect()
        };
        let best = keys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let tied: Vec<usize> = open.iter().zip(&keys).filter(|&(_, &k)| k == best).map(|(&a, _)| a).collect();
        let pick = match tied.len() {
            1 => tied[0],
            n if self.config.one_step_ahead => tied[rng::below(&mut self.tie_rng, n)],
            n => tied[rng::below(&mut self.ablation_rng, n)],
        };
        Action::from_index(pick)
    }

    fn prior(&self, node: usize, a: usize) -> Option<f64> {
        self.nodes[node].children[a].and_then(|c| self.nodes[c].prior)
    }

    /// Carried value if the child has one, else the predicted edge reward.
    fn first_visit_key(&self, node: usize, a: usize) -> f64 {
        self.prior(node, a).unwrap_or(self.nodes[node].rewards[a])
    }

    /// One trajectory from the root; returns its discounted return.
    pub fn rollout(&mut self) -> Result<f64> {
        let mut path = vec![0];
        let mut edges = Vec::with_capacity(self.config.depth);
        let mut cur = 0;
        for _ in 0..self.config.depth {
            let action = self.select_child(cur);
            let a = action.index();
            let reward = self.nodes[cur].rewards[a];
            let next = match self.nodes[cur].children[a] {
                None => {
                    let (state, rewards) = self.query_step(cur, action)?;
                    self.nodes.push(SearchNode::new(state, rewards));
                    let id = self.nodes.len() - 1;
                    self.nodes[cur].children[a] = Some(id);
                    id
                }
                Some(c) if self.nodes[c].stale => {
                    let (state, rewards) = self.query_step(cur, action)?;
                    let child = &mut self.nodes[c];
                    child.state = state;
                    child.rewards = rewards;
                    child.stale = false;
                    c
                }
                Some(c) => c,
            };
            edges.push((action, reward));
            path.push(next);
            cur = next;
        }

        let gamma = self.config.gamma;
        let mut ret = 0.0;
        for d in (0..edges.len()).rev() {
            ret = edges[d].1 + gamma * ret;
            self.nodes[path[d + 1]].back_up(ret);
        }
        let root = &mut self.nodes[0];
        let new_max = root.v.is_none_or(|v| ret > v);
        root.back_up(ret);
        for &i in &path {
            self.nodes[i].n += 1;
        }
        if let Some(log) = self.log.as_mut() {
            for (d, &(action, edge_reward)) in edges.iter().enumerate() {
                log.push(TrajectoryEdge { trajectory: self.trajectories, depth: d + 1, action, edge_reward, ret, new_max });
            }
        }
        self.trajectories += 1;
        Ok(ret)
    }

    /// Root action with the highest value. Before any trajectory completes,
    /// falls back to carried values and then predicted rewards.
    /// Exactly tied values are broken uniformly from the decision stream, so
    /// a search that finds nothing does not repeat one action forever.
    pub fn best_action(&mut self) -> Action {
        let root = &self.nodes[0];
        let values: Vec<Option<f64>> =
            root.children.iter().map(|c| c.and_then(|c| self.nodes[c].v)).collect();
        if values.iter().all(Option::is_none) {
            return Action::from_index(argmax((0..NUM_ACTIONS).map(|a| self.first_visit_key(0, a))));
        }
        let best = values.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
        let tied: Vec<usize> = (0..NUM_ACTIONS).filter(|&a| values[a] == Some(best)).collect();
        let pick = if tied.len() == 1 { tied[0] } else { tied[rng::below(&mut self.tie_rng, tied.len())] };
        Action::from_index(pick)
    }

    /// Runs the configured number of trajectories and picks an action.
    pub fn plan(&mut self) -> Result<Action> {
        for _ in 0..self.config.trajectories {
            self.rollout()?;
        }
        Ok(self.best_action())
    }

    /// Promotes the child under `taken` to root, corrected to the observed
    /// state. The rest of the old tree is dropped; every kept node keeps `v`
    /// and `n`, and everything below the new root is marked stale.
    pub fn advance_root(&mut self, taken: Action, obs: &Observation) -> Result<()> {
        let a = taken.index();
        let child = match self.nodes[0].children[a] {
            Some(c) => c,
            None => {
                let (state, rewards) = self.query_step(0, taken)?;
                self.nodes.push(SearchNode::new(state, rewards));
                self.nodes.len() - 1
            }
        };
        let mut old = std::mem::take(&mut self.nodes);
        let mut order = vec![child];
        let mut remap = vec![usize::MAX; old.len()];
        remap[child] = 0;
        let mut i = 0;
        while i < order.len() {
            for c in old[order[i]].children.into_iter().flatten() {
                remap[c] = order.len();
                order.push(c);
            }
            i += 1;
        }
        let mut nodes: Vec<_> = order
            .iter()
            .map(|&o| {
                let placeholder = SearchNode::new(old[o].state.clone(), [0.0; NUM_ACTIONS]);
                let mut n = std::mem::replace(&mut old[o], placeholder);
                n.children = n.children.map(|c| c.map(|c| remap[c]));
                n.stale = true;
                n.prior = n.v.take().or(n.prior);
                n
            })
            .collect();
        let state = self.model.observe(obs);
        nodes[0].rewards = self.query_rewards(&state)?;
        nodes[0].state = state;
        nodes[0].stale = false;
        self.nodes = nodes;
        Ok(())
    }
}

impl<S> SearchNode<S> {
    fn back_up(&mut self, ret: f64) {
        if self.v.is_none_or(|v| ret > v) {
            self.v = Some(ret);
        }
    }
}

/// Index of the first maximum.
fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 || i == 0 {
            best = (i, v);
        }
    }
    best.0
}
