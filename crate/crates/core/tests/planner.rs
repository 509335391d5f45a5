use std::cell::Cell;
use std::collections::{HashMap, HashSet, VecDeque};

use blockplan::gridworld::{generate_task, render, Action, WorldState, NUM_ACTIONS};
use blockplan::model::initial_stack;
use blockplan::planner::{uct, write_trajectory_log, Observation, OracleModel, Planner, PlannerConfig, WorldModel};
use blockplan::Result;
use proptest::prelude::*;

/// State is the action path from the root; rewards come from a closure of
/// that path. Counts every query.
struct Script<F: Fn(&[usize]) -> [f64; NUM_ACTIONS]> {
    rewards: F,
    calls: Cell<u64>,
}

impl<F: Fn(&[usize]) -> [f64; NUM_ACTIONS]> Script<F> {
    fn new(rewards: F) -> Self {
        Script { rewards, calls: Cell::new(0) }
    }
}

impl<F: Fn(&[usize]) -> [f64; NUM_ACTIONS]> WorldModel for Script<F> {
    type State = Vec<usize>;

    fn observe(&self, _: &Observation) -> Vec<usize> {
        Vec::new()
    }

    fn rewards(&self, state: &Vec<usize>) -> Result<[f64; NUM_ACTIONS]> {
        self.calls.set(self.calls.get() + 1);
        Ok((self.rewards)(state))
    }

    fn step(&self, state: &Vec<usize>, action: Action) -> Result<(Vec<usize>, [f64; NUM_ACTIONS])> {
        self.calls.set(self.calls.get() + 1);
        let mut next = state.clone();
        next.push(action.index());
        let r = (self.rewards)(&next);
        Ok((next, r))
    }
}

fn with_obs<T>(task_seed: u64, f: impl FnOnce(&Observation) -> T) -> T {
    let world = WorldState::reset(&generate_task(task_seed));
    let stack = initial_stack(render(&world));
    f(&Observation { world: &world, stack: &stack })
}

fn planner<M: WorldModel>(model: M, config: PlannerConfig) -> Planner<M> {
    let mut p = Planner::new(model, config, 7);
    with_obs(0, |obs| p.reset(obs)).unwrap();
    p
}

fn cfg(depth: usize, trajectories: usize) -> PlannerConfig {
    PlannerConfig { depth, trajectories, ..PlannerConfig::default() }
}

const FLAT: [f64; NUM_ACTIONS] = [-0.04; NUM_ACTIONS];

#[test]
fn uct_matches_hand_values() {
    assert_eq!(uct(2.0, 1, 1, 8.0), 2.0);
    // 0.5 + 8 * sqrt(2.0794415 / 2) = 0.5 + 8 * 1.0196670
    assert!((uct(0.5, 2, 8, 8.0) - 8.6574).abs() < 1e-3);
    let bonus = |k| uct(0.3, 3, 17, k) - 0.3;
    assert!((bonus(16.0) - 2.0 * bonus(8.0)).abs() < 1e-12);
}

#[test]
fn placement_reward_wins_among_unexplored() {
    let mut rewards = FLAT;
    rewards[Action::PlaceBlock.index()] = 0.96;
    let mut p = planner(Script::new(move |_| rewards), cfg(3, 1));
    assert_eq!(p.select_child(0), Action::PlaceBlock);
}

#[test]
fn ablated_selection_is_uniform() {
    let mut rewards = FLAT;
    rewards[Action::PlaceBlock.index()] = 0.96;
    let config = PlannerConfig { one_step_ahead: false, ..cfg(3, 1) };
    let mut p = planner(Script::new(move |_| rewards), config);
    let mut counts = [0usize; NUM_ACTIONS];
    let n = 10_000;
    for _ in 0..n {
        counts[p.select_child(0).index()] += 1;
    }
    for c in counts {
        assert!((c as f64 / n as f64 - 1.0 / 6.0).abs() < 0.02, "{counts:?}");
    }
}

#[test]
fn equal_ucts_go_to_the_lowest_index() {
    let mut p = planner(Script::new(|_| FLAT), cfg(1, 6));
    for _ in 0..6 {
        p.rollout().unwrap();
    }
    for a in Action::ALL {
        let c = p.node(p.child(0, a).unwrap());
        assert_eq!((c.v, c.n), (Some(-0.04), 1));
    }
    assert_eq!(p.select_child(0), Action::Forward);
}

#[test]
fn rollout_return_is_the_discounted_edge_sum() {
    // Edge d pays rewards[d] whatever the action.
    let by_depth = |path: &[usize]| if path.len() == 2 { [0.96; NUM_ACTIONS] } else { FLAT };
    let mut p = planner(Script::new(by_depth), cfg(3, 1));
    let ret = p.rollout().unwrap();
    let expect = -0.04 + 0.95 * -0.04 + 0.95 * 0.95 * 0.96;
    assert!((ret - 0.7884).abs() < 1e-12 && (ret - expect).abs() < 1e-12, "{ret}");
    assert_eq!(p.root().v, Some(ret));
}

#[test]
fn fully_explored_paths_cost_no_model_calls() {
    let mut p = planner(Script::new(|_| FLAT), cfg(1, 1));
    for _ in 0..6 {
        p.rollout().unwrap();
    }
    let calls = p.model_calls();
    assert_eq!(calls, 7);
    for _ in 0..20 {
        p.rollout().unwrap();
    }
    assert_eq!(p.model_calls(), calls);
    assert_eq!(p.model().calls.get(), calls);
}

#[test]
fn max_backup_raises_only_on_better_returns() {
    // The second root action leads to a bonus two edges down.
    let rewards = |path: &[usize]| match path {
        [1] => [0.96; NUM_ACTIONS],
        _ => FLAT,
    };
    let mut p = planner(Script::new(rewards), cfg(2, 1));
    let first = p.rollout().unwrap();
    let root_before = p.root().v.unwrap();
    assert_eq!(first, root_before);
    let mut raised = false;
    for _ in 0..12 {
        let before: Vec<Option<f64>> = (0..p.len()).map(|i| p.node(i).v).collect();
        let ret = p.rollout().unwrap();
        for (i, b) in before.iter().enumerate() {
            let now = p.node(i).v;
            assert!(now >= *b, "v dropped at node {i}");
        }
        if ret > root_before {
            raised = true;
            assert_eq!(p.root().v, Some(ret));
            let c = p.child(0, Action::TurnLeft).unwrap();
            assert_eq!(p.node(c).v, Some(ret));
        }
    }
    assert!(raised);
}

#[test]
fn single_trajectory_decides_its_first_action() {
    let mut p = planner(Script::new(|_| FLAT), cfg(4, 1));
    p.enable_log();
    let a = p.plan().unwrap();
    let log = p.take_log();
    assert_eq!(log.len(), 4);
    assert_eq!(log[0].action, a);
}

#[test]
fn decision_takes_the_highest_value() {
    // Only two root actions have non-flat futures; action 4 is better.
    let rewards = |path: &[usize]| match path {
        [] => [-0.04, -5.0, -5.0, 1.0, 0.2, -5.0],
        _ => [0.0; NUM_ACTIONS],
    };
    let mut p = planner(Script::new(rewards), cfg(1, 6));
    assert_eq!(p.plan().unwrap(), Action::StrafeRight);
    let v = |a: Action| p.node(p.child(0, a).unwrap()).v.unwrap();
    assert_eq!(v(Action::StrafeRight), 1.0);
    assert_eq!(v(Action::StrafeLeft), 0.2);
}

#[test]
fn decision_budget_is_bounded() {
    let config = PlannerConfig::default();
    let limit = (config.trajectories * config.depth) as u64 + 1;
    let task = generate_task(11);
    let mut world = WorldState::reset(&task);
    let mut stack = initial_stack(render(&world));
    let mut p = Planner::new(OracleModel, config, 3);
    p.reset(&Observation { world: &world, stack: &stack }).unwrap();
    let mut before = 0;
    for _ in 0..5 {
        let a = p.plan().unwrap();
        let used = p.model_calls() - before;
        assert!(used <= limit, "{used} calls");
        world = world.apply(a).unwrap().state;
        if world.terminal {
            break;
        }
        stack = initial_stack(render(&world));
        before = p.model_calls();
        p.advance_root(a, &Observation { world: &world, stack: &stack }).unwrap();
        assert_eq!(p.model_calls(), before + 1, "advance refreshes the root once");
    }
}

/// Actions to cover any colored tile from `start`, by breadth-first search
/// over poses, or `None` past `limit`.
fn steps_to_cover(start: &WorldState, limit: usize) -> Option<usize> {
    let mut seen = HashSet::new();
    let mut queue = VecDeque::from([(*start, 0)]);
    while let Some((s, d)) = queue.pop_front() {
        if d >= limit {
            continue;
        }
        for a in Action::ALL {
            let t = s.apply(a).unwrap();
            if t.state.covered != s.covered {
                return Some(d + 1);
            }
            if !t.state.terminal && seen.insert((t.state.pose, t.state.blocks)) {
                queue.push_back((t.state, d + 1));
            }
        }
    }
    None
}

/// Best discounted return over every action sequence of `depth` steps.
fn exhaustive_best(s: &WorldState, depth: usize, memo: &mut HashMap<(WorldState, usize), f64>) -> f64 {
    if depth == 0 || s.terminal {
        return 0.0;
    }
    if let Some(&v) = memo.get(&(*s, depth)) {
        return v;
    }
    let best = Action::ALL
        .iter()
        .map(|&a| {
            let t = s.apply(a).unwrap();
            t.reward + 0.95 * exhaustive_best(&t.state, depth - 1, memo)
        })
        .fold(f64::NEG_INFINITY, f64::max);
    memo.insert((*s, depth), best);
    best
}

fn first_decision_value(world: &WorldState, config: PlannerConfig, seed: u64) -> f64 {
    let stack = initial_stack(render(world));
    let mut p = Planner::new(OracleModel, config, seed);
    p.reset(&Observation { world, stack: &stack }).unwrap();
    let a = p.plan().unwrap();
    p.node(p.child(0, a).unwrap()).v.unwrap()
}

#[test]
fn perfect_model_finds_reachable_tiles() {
    // The default budget covers short distances; farther tiles need a larger one.
    let wide = PlannerConfig { trajectories: 2000, ..PlannerConfig::default() };
    let (mut near, mut far) = (0, 0);
    for seed in 0..60 {
        let world = WorldState::reset(&generate_task(seed));
        let Some(d) = steps_to_cover(&world, 9) else { continue };
        let best = exhaustive_best(&world, 10, &mut HashMap::new());
        assert!(best > 0.0, "task {seed}: oracle best {best}");
        let config = if d <= 4 {
            near += 1;
            PlannerConfig::default()
        } else {
            far += 1;
            wide
        };
        let v = first_decision_value(&world, config, seed);
        assert!(v > 0.0, "task {seed} at distance {d}: chosen value {v}");
        assert!(v <= best + 1e-9, "task {seed}: {v} beats the exhaustive {best}");
    }
    assert!(near >= 30 && far >= 5, "{near} near, {far} far");
}

#[test]
fn advance_keeps_the_taken_subtree() {
    let task = generate_task(5);
    let mut world = WorldState::reset(&task);
    let stack = initial_stack(render(&world));
    let mut p = Planner::new(OracleModel, PlannerConfig::default(), 1);
    p.reset(&Observation { world: &world, stack: &stack }).unwrap();
    let a = p.plan().unwrap();
    let child = p.child(0, a).unwrap();
    let (v, n) = (p.node(child).v, p.node(child).n);
    let mut subtree = 0;
    let mut todo = vec![child];
    while let Some(i) = todo.pop() {
        subtree += 1;
        todo.extend(p.node(i).children.iter().flatten());
    }
    let predicted = p.node(child).state;
    world = world.apply(a).unwrap().state;
    p.advance_root(a, &Observation { world: &world, stack: &stack }).unwrap();

    assert_eq!(p.len(), subtree);
    let root = p.root();
    assert_eq!((root.prior, root.n), (v, n));
    assert_eq!(root.v, None);
    assert!(!root.stale);
    assert_eq!(root.state, world);
    assert_eq!(predicted, world, "the simulator predicts exactly");
    assert!((1..p.len()).all(|i| p.node(i).stale && p.node(i).v.is_none()));
}

#[test]
fn previous_best_path_is_explored_first() {
    let task = generate_task(21);
    let mut world = WorldState::reset(&task);
    let stack = initial_stack(render(&world));
    let mut p = Planner::new(OracleModel, PlannerConfig::default(), 2);
    p.reset(&Observation { world: &world, stack: &stack }).unwrap();
    let a = p.plan().unwrap();

    // Follow the highest values below the taken child.
    let mut best_path = Vec::new();
    let mut cur = p.child(0, a).unwrap();
    loop {
        let node = p.node(cur);
        let scored: Vec<(f64, usize, usize)> = node
            .children
            .iter()
            .enumerate()
            .filter_map(|(b, c)| c.and_then(|c| p.node(c).v.map(|v| (v, b, c))))
            .collect();
        let top = scored.iter().map(|x| x.0).fold(f64::NEG_INFINITY, f64::max);
        // Never-visited siblings rank by predicted reward; the walk ends
        // where one of them outranks the retained value, or at a tie.
        let fresh = (0..NUM_ACTIONS)
            .filter(|&b| node.children[b].is_none_or(|c| p.node(c).v.is_none()))
            .map(|b| node.rewards[b])
            .fold(f64::NEG_INFINITY, f64::max);
        if fresh >= top {
            break;
        }
        let mut best = scored.iter().filter(|x| x.0 == top);
        let (Some(&(_, b, c)), None) = (best.next(), best.next()) else { break };
        best_path.push(Action::from_index(b));
        cur = c;
    }
    assert!(!best_path.is_empty());

    world = world.apply(a).unwrap().state;
    p.advance_root(a, &Observation { world: &world, stack: &stack }).unwrap();
    p.enable_log();
    p.rollout().unwrap();
    let first: Vec<Action> = p.take_log().iter().map(|e| e.action).collect();
    assert_eq!(&first[..best_path.len()], &best_path[..]);
}

#[test]
fn zero_k_exploits_and_huge_k_equalizes() {
    let rewards = |path: &[usize]| match path {
        [] => [-0.04, 0.5, -0.04, -0.04, -0.04, -0.04],
        _ => FLAT,
    };
    let mut greedy = planner(Script::new(rewards), PlannerConfig { k: 0.0, ..cfg(2, 40) });
    greedy.plan().unwrap();
    let n = |p: &Planner<_>, a: Action| p.node(p.child(0, a).unwrap()).n;
    assert_eq!(n(&greedy, Action::TurnLeft), 40 - 5);

    let mut wide = planner(Script::new(rewards), PlannerConfig { k: 1e9, ..cfg(2, 61) });
    wide.plan().unwrap();
    let counts: Vec<u64> = Action::ALL.iter().map(|&a| n(&wide, a)).collect();
    let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
    assert!(hi - lo <= 1, "{counts:?}");
}

#[test]
fn planning_is_deterministic() {
    let run = |one_step_ahead| {
        let task = generate_task(9);
        let mut world = WorldState::reset(&task);
        let stack = initial_stack(render(&world));
        let config = PlannerConfig { one_step_ahead, trajectories: 30, ..PlannerConfig::default() };
        let mut p = Planner::new(OracleModel, config, 4);
        p.enable_log();
        p.reset(&Observation { world: &world, stack: &stack }).unwrap();
        let mut actions = Vec::new();
        for _ in 0..6 {
            let a = p.plan().unwrap();
            actions.push(a);
            world = world.apply(a).unwrap().state;
            if world.terminal {
                break;
            }
            p.advance_root(a, &Observation { world: &world, stack: &stack }).unwrap();
        }
        (actions, p.take_log())
    };
    for mode in [true, false] {
        assert_eq!(run(mode), run(mode));
    }
}

#[test]
fn root_value_matches_the_trajectory_log() {
    let task = generate_task(13);
    let mut world = WorldState::reset(&task);
    let stack = initial_stack(render(&world));
    let mut p = Planner::new(OracleModel, cfg(10, 40), 8);
    p.reset(&Observation { world: &world, stack: &stack }).unwrap();
    for _ in 0..4 {
        p.enable_log();
        let a = p.plan().unwrap();
        let log = p.take_log();
        let best = log.iter().map(|e| e.ret).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(p.root().v, Some(best));
        // Each trajectory's return is its discounted edge sum.
        for t in log.chunks(10) {
            let ret = t.iter().rev().fold(0.0, |acc, e| e.edge_reward + 0.95 * acc);
            assert_eq!(ret, t[0].ret);
        }
        let maxima: Vec<f64> = log.iter().filter(|e| e.new_max && e.depth == 1).map(|e| e.ret).collect();
        assert!(maxima.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(maxima.last(), Some(&best));
        world = world.apply(a).unwrap().state;
        p.advance_root(a, &Observation { world: &world, stack: &stack }).unwrap();
    }
}

#[test]
fn trajectory_log_csv_layout() {
    let mut p = planner(Script::new(|_| FLAT), cfg(2, 1));
    p.enable_log();
    p.plan().unwrap();
    let mut out = Vec::new();
    write_trajectory_log(&p.take_log(), &mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("trajectory,depth,action,edge_reward,return,new_max"));
    assert_eq!(lines.count(), 2);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn tree_invariants_hold(seed in 0u64..1000, depth in 1usize..6, trajectories in 1usize..40, k in 0.0f64..10.0) {
        // Pseudo-random rewards fixed per path.
        let rewards = move |path: &[usize]| {
            let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
            for &a in path {
                h = (h ^ a as u64).wrapping_mul(0x1000_0000_01b3);
            }
            std::array::from_fn(|a| (((h >> (a * 7)) & 0x7f) as f64 / 64.0) - 1.0)
        };
        let mut p = planner(Script::new(rewards), PlannerConfig { depth, trajectories, k, ..PlannerConfig::default() });
        p.enable_log();
        p.plan().unwrap();
        let best = p.take_log().iter().map(|e| e.ret).fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(p.root().v, Some(best));
        prop_assert!(p.model_calls() <= (depth * trajectories) as u64 + 1);
        for i in 0..p.len() {
            let node = p.node(i);
            let below: u64 = node.children.iter().flatten().map(|&c| p.node(c).n).sum();
            prop_assert!(node.n >= below);
        }
    }
}
