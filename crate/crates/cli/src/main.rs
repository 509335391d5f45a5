//! Command-line entry point: task sets, training runs, evaluation and plots.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use blockplan::dqn::QNet;
use blockplan::gridworld::{read_task_file, write_task_file};
use blockplan::harness::experiment::{ABLATED, DQN, MCTS};
use blockplan::harness::report::{self, EVAL_HEADER, RETURNS_HEADER};
use blockplan::harness::{build_test_set, evaluate, run_experiment, ExperimentConfig, Outcome, Policy, RunControl};
use blockplan::model::ModelNet;
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "blockplan", version, about = "Model-based planning in a block-placing gridworld")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a task file of seed-generated tasks.
    GenTasks {
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the transition model, evaluating both planners along the way.
    TrainModel(RunArgs),
    /// Train the DQN baseline.
    TrainDqn(RunArgs),
    /// Model, planners and DQN in one run.
    Experiment(RunArgs),
    /// Evaluate one agent on a task file.
    Eval {
        #[arg(long, value_enum)]
        agent: AgentKind,
        /// Model weights for the planners, Q-network weights for dqn.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        tasks: PathBuf,
        /// Directory for eval.csv and returns.csv.
        #[arg(long)]
        out: PathBuf,
        /// Planner and DQN settings; defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        step: u64,
    },
    /// Smoothed curves, charts and the milestone table from an eval.csv.
    Plot {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        half_window: usize,
        #[arg(long, value_delimiter = ',', default_values_t = [20_000u64, 50_000, 100_000])]
        milestones: Vec<u64>,
    },
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Continue from the run's last checkpoint.
    #[arg(long)]
    resume: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum AgentKind {
    Mcts,
    #[value(name = "mcts-no1ahead")]
    MctsNo1Ahead,
    Dqn,
    Random,
    Oracle,
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => Ok(ExperimentConfig::from_file(p)?),
        None => Ok(ExperimentConfig::default()),
    }
}

fn run(args: &RunArgs, mcts: bool, dqn: bool) -> Result<()> {
    let mut config = load_config(args.config.as_deref())?;
    config.run_mcts &= mcts;
    config.run_ablation &= mcts;
    config.run_dqn &= dqn;
    let outcome = run_experiment(&config, RunControl { resume: args.resume, stop_after_checkpoints: None })?;
    if outcome == Outcome::Finished {
        println!("{}", fs::read_to_string(config.out_dir.join("table.md"))?);
        println!("outputs in {}", config.out_dir.display());
    }
    Ok(())
}

fn weights(path: Option<&PathBuf>) -> Result<&PathBuf> {
    path.context("--weights is required for this agent")
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::GenTasks { seed, count, out } => {
            write_task_file(&out, &build_test_set(seed, count))?;
        }
        Command::TrainModel(args) => run(&args, true, false)?,
        Command::TrainDqn(args) => run(&args, false, true)?,
        Command::Experiment(args) => run(&args, true, true)?,
        Command::Eval { agent, weights: w, tasks, out, config, step } => {
            let config = load_config(config.as_deref())?;
            let tasks = read_task_file(&tasks)?;
            if tasks.is_empty() {
                bail!("task file is empty");
            }
            let planner = config.planner;
            let (policy, name) = match agent {
                AgentKind::Mcts => (Policy::Mcts(Arc::new(ModelNet::load(weights(w.as_ref())?)?), planner), MCTS),
                AgentKind::MctsNo1Ahead => {
                    let net = Arc::new(ModelNet::load(weights(w.as_ref())?)?);
                    (Policy::Mcts(net, blockplan::planner::PlannerConfig { one_step_ahead: false, ..planner }), ABLATED)
                }
                AgentKind::Dqn => (Policy::Dqn(Arc::new(QNet::load(weights(w.as_ref())?)?), config.dqn.eval_epsilon), DQN),
                AgentKind::Random => (Policy::Random, "random"),
                AgentKind::Oracle => (Policy::Oracle(planner), "oracle"),
            };
            let r = evaluate(&policy, name, step, &tasks, config.agent_seed, config.workers)?;
            fs::create_dir_all(&out)?;
            fs::write(out.join("eval.csv"), format!("{EVAL_HEADER}\n{}\n", report::eval_row(&r)))?;
            let rows = report::returns_rows(&r).join("\n");
            fs::write(out.join("returns.csv"), format!("{RETURNS_HEADER}\n{rows}\n"))?;
            println!("{name}: avg reward {:.3}, success rate {:.2}", r.avg_reward, r.success_rate);
        }
        Command::Plot { input, out, half_window, milestones } => {
            let text = fs::read_to_string(&input).with_context(|| input.display().to_string())?;
            let points = report::parse_eval_csv(&text)?;
            fs::create_dir_all(&out)?;
            report::write_plots(&out, &points, half_window)?;
            fs::write(out.join("table.md"), report::milestone_table(&points, &milestones))?;
        }
    }
    Ok(())
}
