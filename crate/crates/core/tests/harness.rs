mod common;

use std::fs;
use std::path::Path;
use std::sync::Arc;

use blockplan::dqn::QNet;
use blockplan::gridworld::{COLOR_PROBABILITY, FIELD};
use blockplan::harness::experiment::write_replay;
use blockplan::harness::report::{milestone_table, moving_average, parse_eval_csv};
use blockplan::harness::*;
use blockplan::model::{ModelNet, ReplayBuffer};
use blockplan::planner::PlannerConfig;
use common::{truncated_binomial_mean, Accounting, SplitMix};
use proptest::prelude::*;

#[test]
fn test_set_is_fixed_and_has_the_expected_colored_count() {
    let tasks = build_test_set(7, 100);
    assert_eq!(tasks, build_test_set(7, 100));
    assert_ne!(tasks, build_test_set(8, 100));
    assert!(tasks.iter().all(|t| t.colored_count() >= 1));
    let expected = truncated_binomial_mean((FIELD * FIELD) as u32, COLOR_PROBABILITY);
    assert!((expected - 2.6).abs() < 0.5, "{expected}");
    let mean = tasks.iter().map(|t| t.colored_count() as f64).sum::<f64>() / 100.0;
    assert!((mean - expected).abs() < 0.5, "{mean} vs {expected}");
}

#[test]
fn random_agent_floor_matches_independent_rollouts() {
    let tasks = build_test_set(7, 100);
    let report = evaluate(&Policy::Random, "random", 0, &tasks, 3, 4).unwrap();
    // Independent estimate: uniform actions through the accounting oracle,
    // several passes over the same tasks.
    let mut mix = SplitMix(99);
    let mut total = 0.0;
    let passes = 20;
    for _ in 0..passes {
        for t in &tasks {
            let mut acc = Accounting::new(t);
            while !acc.done() {
                total += acc.step(mix.action());
            }
        }
    }
    let oracle = total / (passes * tasks.len()) as f64;
    assert!((report.avg_reward - oracle).abs() < 0.25, "{} vs {oracle}", report.avg_reward);
    assert!(report.success_rate <= 0.05, "{}", report.success_rate);
    assert!((-2.5..-0.5).contains(&report.avg_reward), "{}", report.avg_reward);
}

#[test]
fn report_aggregates_are_consistent() {
    let tasks = build_test_set(11, 40);
    let r = evaluate(&Policy::Expert(0.3), "expert", 5, &tasks, 1, 3).unwrap();
    assert_eq!(r.returns.len(), 40);
    assert!((r.avg_reward - r.returns.iter().sum::<f64>() / 40.0).abs() < 1e-12);
    assert_eq!(r.success_rate, r.successes() as f64 / 40.0);
    assert!(r.actions >= 40 && r.actions <= 40 * 30);
    assert!(r.returns.iter().all(|&x| (-1.2 - 1.04 * 30.0..=25.0 * 0.96).contains(&x)));
}

#[test]
fn dqn_reports_are_deterministic_and_worker_independent() {
    let tasks = build_test_set(5, 12);
    let policy = Policy::Dqn(Arc::new(QNet::new(3)), 0.05);
    let a = evaluate(&policy, "dqn", 0, &tasks, 4, 1).unwrap();
    let b = evaluate(&policy, "dqn", 0, &tasks, 4, 5).unwrap();
    assert_eq!(a, b);
    let c = evaluate(&policy, "dqn", 0, &tasks, 5, 5).unwrap();
    assert_ne!(a.returns, c.returns);
}

#[test]
fn learned_model_reports_do_not_depend_on_batching() {
    let tasks = build_test_set(6, 3);
    let config = PlannerConfig { depth: 2, trajectories: 3, ..PlannerConfig::default() };
    let policy = Policy::Mcts(Arc::new(ModelNet::new(9)), config);
    let a = evaluate(&policy, "mcts", 0, &tasks, 2, 1).unwrap();
    let b = evaluate(&policy, "mcts", 0, &tasks, 2, 3).unwrap();
    assert_eq!(a, b);
}

#[test]
fn oracle_planner_solves_easy_tasks() {
    let tasks = build_test_set(7, 6);
    let r = evaluate(&Policy::Oracle(PlannerConfig::default()), "oracle", 0, &tasks, 1, 3).unwrap();
    assert!(r.success_rate >= 0.5, "{r:?}");
}

#[test]
fn moving_average_examples() {
    assert_eq!(moving_average(&[0.0, 1.0, 2.0], 1), vec![0.5, 1.0, 1.5]);
    let s = [0.3, -1.0, 4.0, 2.5];
    assert_eq!(moving_average(&s, 0), s.to_vec());
    assert_eq!(moving_average(&[2.0; 7], 3), vec![2.0; 7]);
}

proptest! {
    #[test]
    fn smoothing_stays_within_recorded_values(
        series in prop::collection::vec(-3.0f64..3.0, 1..40),
        half in 0usize..10,
        c in -2.0f64..2.0,
    ) {
        let out = moving_average(&series, half);
        prop_assert_eq!(out.len(), series.len());
        let lo = series.iter().cloned().fold(f64::MAX, f64::min);
        let hi = series.iter().cloned().fold(f64::MIN, f64::max);
        prop_assert!(out.iter().all(|&v| v >= lo - 1e-12 && v <= hi + 1e-12));
        let flat = moving_average(&vec![c; series.len()], half);
        prop_assert!(flat.iter().all(|&v| (v - c).abs() < 1e-12));
    }
}

#[test]
fn config_files_round_trip_and_reject_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.cfg");
    fs::write(&path, "# tiny\ntrain_steps = 40\nplanner_k = 4\nseed_policy = mixed\nmilestones = 10,40\neval_interval = 10\n").unwrap();
    let c = ExperimentConfig::from_file(&path).unwrap();
    assert_eq!((c.train_steps, c.planner.k, c.seed_policy), (40, 4.0, CollectPolicy::Mixed));
    assert_eq!(ExperimentConfig::parse(&c.render()).unwrap().render(), c.render());
    for seed in ["test_seed", "agent_seed", "data_seed"] {
        assert!(c.render().lines().any(|l| l.starts_with(seed)), "{seed} not recorded");
    }
    fs::write(&path, "planner_depht = 3\n").unwrap();
    assert!(ExperimentConfig::from_file(&path).is_err());
    assert!(ExperimentConfig::parse("eval_interval = 0\n").is_err());
}

#[test]
fn replay_files_rebuild_the_same_frames() {
    let dir = tempfile::tempdir().unwrap();
    let mut buf = ReplayBuffer::new(5000);
    Collector::new(4).fill(&mut buf, CollectPolicy::Mixed, 300).unwrap();
    let path = dir.path().join("replay.txt");
    write_replay(&path, &buf).unwrap();
    let back = blockplan::harness::experiment::read_replay(&path, 5000).unwrap();
    assert_eq!(back.len(), buf.len());
    for (a, b) in buf.episodes().zip(back.episodes()) {
        assert_eq!(a, b);
    }
}

fn tiny(out: &Path) -> ExperimentConfig {
    let text = format!(
        "out_dir = {}\n\
         test_tasks = 2\ntrain_steps = 4\neval_interval = 2\ncurve_interval = 1\nmilestones = 2,4\nhalf_window = 1\n\
         seed_transitions = 200\nseed_policy = mixed\nact_interval = 3\n\
         planner_depth = 2\nplanner_trajectories = 2\n\
         dqn_batch = 8\ndqn_target_sync = 2\ndqn_seed_transitions = 100\nworkers = 2\n",
        out.display()
    );
    ExperimentConfig::parse(&text).unwrap()
}

const OUTPUTS: [&str; 9] = [
    "eval.csv",
    "returns.csv",
    "model_curve.csv",
    "dqn_curve.csv",
    "smoothed.csv",
    "table.md",
    "reward.svg",
    "success.svg",
    "reward_raw.svg",
];

#[test]
fn interrupted_runs_resume_to_identical_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let whole = tiny(&dir.path().join("whole"));
    assert_eq!(run_experiment(&whole, RunControl::default()).unwrap(), Outcome::Finished);

    let split = ExperimentConfig { out_dir: dir.path().join("split"), ..whole.clone() };
    let stop = |resume| RunControl { resume, stop_after_checkpoints: Some(1) };
    assert_eq!(run_experiment(&split, stop(false)).unwrap(), Outcome::Stopped);
    // Model step 4, then the first DQN checkpoint, then the end.
    assert_eq!(run_experiment(&split, stop(true)).unwrap(), Outcome::Stopped);
    assert_eq!(run_experiment(&split, stop(true)).unwrap(), Outcome::Stopped);
    assert_eq!(run_experiment(&split, RunControl { resume: true, stop_after_checkpoints: None }).unwrap(), Outcome::Finished);

    for name in OUTPUTS {
        let a = fs::read(whole.out_dir.join(name)).unwrap();
        let b = fs::read(split.out_dir.join(name)).unwrap();
        assert!(a == b, "{name} differs after resume");
    }
    let eval = fs::read_to_string(whole.out_dir.join("eval.csv")).unwrap();
    let points = parse_eval_csv(&eval).unwrap();
    // Steps 0, 2, 4 for each of the three agents.
    assert_eq!(points.len(), 9);
    for agent in ["mcts", "mcts-no1ahead", "dqn"] {
        let steps: Vec<u64> = points.iter().filter(|p| p.agent == agent).map(|p| p.step).collect();
        assert_eq!(steps, vec![0, 2, 4], "{agent}");
    }
    assert!(points.iter().all(|p| (p.success_rate * 2.0).fract() == 0.0));
    assert_eq!(fs::read_to_string(whole.out_dir.join("table.md")).unwrap(), milestone_table(&points, &[2, 4]));
    let curve = fs::read_to_string(whole.out_dir.join("model_curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 5);
    let resumed_config = ExperimentConfig { train_steps: 6, ..split.clone() };
    assert!(run_experiment(&resumed_config, RunControl { resume: true, stop_after_checkpoints: None }).is_err());
}
