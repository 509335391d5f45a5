//! Resumable experiment runs.
//!
//! A run trains the transition model (evaluating the planner with and
//! without one-step-ahead rewards every `eval_interval` steps) and then the
//! DQN baseline for the same number of updates. A checkpoint is written after
//! every evaluation; resuming from it reproduces the uninterrupted outputs
//! byte for byte.
//!
//! Output directory:
//!
//! ```text
//! config.txt        resolved configuration
//! eval.csv          step,agent,avg_reward,success_rate
//! returns.csv       step,agent,task,return,success
//! model_curve.csv   step,frame_mse,reward_mse
//! dqn_curve.csv     step,td_loss,epsilon
//! smoothed.csv      moving averages of eval.csv
//! table.md          milestone table
//! *.svg             curves
//! timing.log        wall-clock per evaluation (not reproducible)
//! model.bpw         final transition-model weights
//! dqn.bpw           final Q-network weights
//! checkpoint/       resume state
//! ```

use std::collections::HashMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use super::config::ExperimentConfig;
use super::eval::{build_test_set, evaluate, Collector, EvalReport, Policy};
use super::report::{self, DQN_CURVE_HEADER, EVAL_HEADER, MODEL_CURVE_HEADER, RETURNS_HEADER};
use crate::agent::to_episode;
use crate::dqn::{DqnLearner, DqnTrainer, LearnerCursor, QNet};
use crate::error::{Error, Result};
use crate::gridworld::{generate_task, Action, TaskSpec};
use crate::model::{Episode, ModelNet, ModelTrainer, ReplayBuffer};
use crate::planner::PlannerConfig;
use crate::rng::{self, Purpose, RngState};
use blockplan_tensor::RmsProp;

pub const MCTS: &str = "mcts";
pub const ABLATED: &str = "mcts-no1ahead";
pub const DQN: &str = "dqn";

/// Whether a run finished or stopped early on request.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Finished,
    Stopped,
}

/// Run options that do not affect results.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunControl {
    /// Continue from `out_dir/checkpoint` when present.
    pub resume: bool,
    /// Stop right after writing this many checkpoints in this invocation.
    pub stop_after_checkpoints: Option<usize>,
}

#[derive(Debug, Clone, Default)]
struct Rows {
    eval: Vec<String>,
    returns: Vec<String>,
    model_curve: Vec<String>,
    dqn_curve: Vec<String>,
}

/// Running mean over curve rows; sums are saved bit-exactly.
#[derive(Debug, Clone, Copy, Default)]
struct Accum {
    a: f64,
    b: f64,
    n: u64,
}

impl Accum {
    fn encode(&self) -> String {
        format!("{:016x}:{:016x}:{}", self.a.to_bits(), self.b.to_bits(), self.n)
    }

    fn decode(s: &str) -> Option<Accum> {
        let mut p = s.split(':');
        let a = f64::from_bits(u64::from_str_radix(p.next()?, 16).ok()?);
        let b = f64::from_bits(u64::from_str_radix(p.next()?, 16).ok()?);
        Some(Accum { a, b, n: p.next()?.parse().ok()? })
    }
}

struct ModelPhase {
    trainer: ModelTrainer,
    replay: ReplayBuffer,
    collector: Collector,
    sample_rng: rng::Rng,
    accum: Accum,
}

struct DqnPhase {
    learner: DqnLearner,
    accum: Accum,
}

struct Run<'a> {
    config: &'a ExperimentConfig,
    control: RunControl,
    tasks: Vec<TaskSpec>,
    rows: Rows,
    checkpoints: usize,
    timing: Vec<String>,
}

pub fn run_experiment(config: &ExperimentConfig, control: RunControl) -> Result<Outcome> {
    config.validate()?;
    let out = &config.out_dir;
    fs::create_dir_all(out).map_err(Error::file(out))?;
    let mut run = Run {
        config,
        control,
        tasks: build_test_set(config.test_seed, config.test_tasks),
        rows: Rows::default(),
        checkpoints: 0,
        timing: Vec::new(),
    };
    let saved = if control.resume { load_progress(&ckpt_dir(out))? } else { None };
    if let Some(p) = &saved {
        if p.get("config").map(String::as_str) != Some(&config.render().replace('\n', ";")) {
            return Err(Error::Config("checkpoint was written with a different configuration".into()));
        }
        run.rows = load_rows(&ckpt_dir(out))?;
    }
    write_text(&out.join("config.txt"), &config.render())?;

    let model_done = saved.as_ref().is_some_and(|p| p.get("phase").map(String::as_str) == Some("dqn"));
    if (config.run_mcts || config.run_ablation) && !model_done {
        let phase = match &saved {
            Some(p) if p.contains_key("model_step") => restore_model_phase(config, p)?,
            _ => fresh_model_phase(config)?,
        };
        if run.model_phase(phase)? == Outcome::Stopped {
            return Ok(Outcome::Stopped);
        }
    }
    if config.run_dqn {
        let phase = match &saved {
            Some(p) if p.contains_key("dqn_cursor") => restore_dqn_phase(config, p)?,
            _ => fresh_dqn_phase(config)?,
        };
        if run.dqn_phase(phase)? == Outcome::Stopped {
            return Ok(Outcome::Stopped);
        }
    }
    run.finish()?;
    Ok(Outcome::Finished)
}

fn fresh_model_phase(config: &ExperimentConfig) -> Result<ModelPhase> {
    let mut replay = ReplayBuffer::new(config.replay_capacity);
    let mut collector = Collector::new(config.data_seed);
    collector.fill(&mut replay, config.seed_policy, config.seed_transitions)?;
    Ok(ModelPhase {
        trainer: ModelTrainer::new(ModelNet::new(config.agent_seed), config.model_optim),
        replay,
        collector,
        sample_rng: rng::stream(config.agent_seed, Purpose::Sample),
        accum: Accum::default(),
    })
}

fn fresh_dqn_phase(config: &ExperimentConfig) -> Result<DqnPhase> {
    let total = config.train_steps * config.dqn.train_every;
    let mut learner = DqnLearner::new(QNet::new(config.agent_seed), config.dqn, total, config.agent_seed)?;
    if config.dqn_seed_transitions > 0 {
        // Same stream as the model's seed data, so both agents start from
        // the same transitions.
        Collector::new(config.data_seed).fill(&mut learner.replay, config.seed_policy, config.dqn_seed_transitions)?;
    }
    Ok(DqnPhase { learner, accum: Accum::default() })
}

impl Run<'_> {
    fn planner(&self, one_step_ahead: bool) -> PlannerConfig {
        PlannerConfig { one_step_ahead, ..self.config.planner }
    }

    fn record(&mut self, policy: &Policy, agent: &str, step: u64) -> Result<()> {
        let start = Instant::now();
        let r = evaluate(policy, agent, step, &self.tasks, self.config.agent_seed, self.config.workers)?;
        let secs = start.elapsed().as_secs_f64();
        let per_action = secs * self.config.workers.min(self.tasks.len()) as f64 / r.actions.max(1) as f64;
        self.timing.push(format!("{agent} step {step}: {secs:.1}s, {per_action:.3}s per action per worker"));
        self.push_report(&r);
        Ok(())
    }

    fn push_report(&mut self, r: &EvalReport) {
        self.rows.eval.push(report::eval_row(r));
        self.rows.returns.extend(report::returns_rows(r));
    }

    fn evaluate_model(&mut self, net: &ModelNet, step: u64) -> Result<()> {
        let net = Arc::new(net.clone());
        if self.config.run_mcts {
            self.record(&Policy::Mcts(net.clone(), self.planner(true)), MCTS, step)?;
        }
        if self.config.run_ablation {
            self.record(&Policy::Mcts(net, self.planner(false)), ABLATED, step)?;
        }
        Ok(())
    }

    fn model_phase(&mut self, mut m: ModelPhase) -> Result<Outcome> {
        let c = self.config;
        if m.trainer.steps == 0 {
            self.evaluate_model(&m.trainer.net, 0)?;
        }
        while m.trainer.steps < c.train_steps {
            let pairs = m.replay.sample_pairs(32, c.noop_probability, &mut m.sample_rng);
            let losses = m.trainer.train_step(&pairs)?;
            let step = m.trainer.steps;
            m.accum.a += losses.frame;
            m.accum.b += losses.reward;
            m.accum.n += 1;
            if step.is_multiple_of(c.curve_interval) {
                let n = m.accum.n as f64;
                self.rows.model_curve.push(format!("{step},{:.6},{:.6}", m.accum.a / n, m.accum.b / n));
                m.accum = Accum::default();
            }
            if c.act_interval > 0 && step.is_multiple_of(c.act_interval) {
                let net = Arc::new(m.trainer.net.clone());
                let (task, result) = m.collector.episode(c.act_policy, Some((&net, c.planner)))?;
                m.replay.push(to_episode(&task, &result)?);
            }
            if step.is_multiple_of(c.eval_interval) || step == c.train_steps {
                self.evaluate_model(&m.trainer.net, step)?;
                if self.checkpoint(|dir, p| save_model_phase(&m, dir, p))? {
                    return Ok(Outcome::Stopped);
                }
            }
        }
        m.trainer.net.save(&c.out_dir.join("model.bpw"))?;
        Ok(Outcome::Finished)
    }

    fn dqn_phase(&mut self, mut d: DqnPhase) -> Result<Outcome> {
        let c = self.config;
        let eval_epsilon = c.dqn.eval_epsilon;
        if d.learner.trainer.updates == 0 && d.learner.env_steps == 0 {
            self.record(&Policy::Dqn(Arc::new(d.learner.trainer.net.clone()), eval_epsilon), DQN, 0)?;
        }
        while d.learner.trainer.updates < c.train_steps {
            let Some(rec) = d.learner.step()? else { continue };
            let step = d.learner.trainer.updates;
            d.accum.a += rec.td_loss;
            d.accum.b = rec.epsilon;
            d.accum.n += 1;
            if step.is_multiple_of(c.curve_interval) {
                self.rows.dqn_curve.push(format!("{step},{:.6},{:.4}", d.accum.a / d.accum.n as f64, d.accum.b));
                d.accum = Accum::default();
            }
            if step.is_multiple_of(c.eval_interval) || step == c.train_steps {
                self.record(&Policy::Dqn(Arc::new(d.learner.trainer.net.clone()), eval_epsilon), DQN, step)?;
                if self.checkpoint(|dir, p| save_dqn_phase(&d, dir, p))? {
                    return Ok(Outcome::Stopped);
                }
            }
        }
        d.learner.trainer.net.save(&c.out_dir.join("dqn.bpw"))?;
        Ok(Outcome::Finished)
    }

    /// Writes outputs and a checkpoint; true when the run should stop.
    fn checkpoint(&mut self, save: impl FnOnce(&Path, &mut Vec<(String, String)>) -> Result<()>) -> Result<bool> {
        let out = &self.config.out_dir;
        self.write_outputs()?;
        let tmp = out.join("checkpoint.tmp");
        if tmp.exists() {
            fs::remove_dir_all(&tmp).map_err(Error::file(&tmp))?;
        }
        fs::create_dir_all(&tmp).map_err(Error::file(&tmp))?;
        let mut progress = vec![("config".to_string(), self.config.render().replace('\n', ";"))];
        save(&tmp, &mut progress)?;
        for (name, header, rows) in self.tables() {
            write_table(&tmp.join(name), header, rows)?;
        }
        let text: String = progress.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
        write_text(&tmp.join("progress.txt"), &text)?;
        let dir = ckpt_dir(out);
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(Error::file(&dir))?;
        }
        fs::rename(&tmp, &dir).map_err(Error::file(&dir))?;
        self.checkpoints += 1;
        Ok(self.control.stop_after_checkpoints.is_some_and(|n| self.checkpoints >= n))
    }

    fn tables(&self) -> [(&'static str, &'static str, &[String]); 4] {
        [
            ("eval.csv", EVAL_HEADER, &self.rows.eval),
            ("returns.csv", RETURNS_HEADER, &self.rows.returns),
            ("model_curve.csv", MODEL_CURVE_HEADER, &self.rows.model_curve),
            ("dqn_curve.csv", DQN_CURVE_HEADER, &self.rows.dqn_curve),
        ]
    }

    fn write_outputs(&mut self) -> Result<()> {
        let out = &self.config.out_dir;
        for (name, header, rows) in self.tables() {
            write_table(&out.join(name), header, rows)?;
        }
        let mut log = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(out.join("timing.log"))
            .map_err(Error::file(&out.join("timing.log")))?;
        for line in self.timing.drain(..) {
            writeln!(log, "{line}")?;
        }
        Ok(())
    }

    fn finish(&mut self) -> Result<()> {
        self.write_outputs()?;
        let out = &self.config.out_dir;
        let mut text = format!("{EVAL_HEADER}\n");
        for r in &self.rows.eval {
            text.push_str(r);
            text.push('\n');
        }
        let points = report::parse_eval_csv(&text)?;
        write_text(&out.join("table.md"), &report::milestone_table(&points, &self.config.milestones))?;
        report::write_plots(out, &points, self.config.half_window)
    }
}

fn ckpt_dir(out: &Path) -> PathBuf {
    out.join("checkpoint")
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(Error::file(path))
}

fn write_table(path: &Path, header: &str, rows: &[String]) -> Result<()> {
    let mut text = String::with_capacity(rows.len() * 32 + header.len() + 1);
    text.push_str(header);
    text.push('\n');
    for r in rows {
        text.push_str(r);
        text.push('\n');
    }
    write_text(path, &text)
}

fn read_rows(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(Error::file(path))?;
    Ok(text.lines().skip(1).map(str::to_string).collect())
}

fn load_rows(dir: &Path) -> Result<Rows> {
    Ok(Rows {
        eval: read_rows(&dir.join("eval.csv"))?,
        returns: read_rows(&dir.join("returns.csv"))?,
        model_curve: read_rows(&dir.join("model_curve.csv"))?,
        dqn_curve: read_rows(&dir.join("dqn_curve.csv"))?,
    })
}

fn load_progress(dir: &Path) -> Result<Option<HashMap<String, String>>> {
    let path = dir.join("progress.txt");
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).map_err(Error::file(&path))?;
    Ok(Some(text.lines().filter_map(|l| l.split_once('=')).map(|(k, v)| (k.to_string(), v.to_string())).collect()))
}

fn field<'a>(p: &'a HashMap<String, String>, key: &str) -> Result<&'a str> {
    p.get(key).map(String::as_str).ok_or_else(|| Error::Format { path: "progress.txt".into(), msg: format!("missing {key}") })
}

fn parsed<T: std::str::FromStr>(p: &HashMap<String, String>, key: &str) -> Result<T> {
    field(p, key)?.parse().map_err(|_| Error::Format { path: "progress.txt".into(), msg: format!("bad {key}") })
}

fn rng_field(p: &HashMap<String, String>, key: &str) -> Result<rng::Rng> {
    RngState::decode(field(p, key)?)
        .map(|s| s.restore())
        .ok_or_else(|| Error::Format { path: "progress.txt".into(), msg: format!("bad {key}") })
}

fn accum_field(p: &HashMap<String, String>, key: &str) -> Result<Accum> {
    Accum::decode(field(p, key)?).ok_or_else(|| Error::Format { path: "progress.txt".into(), msg: format!("bad {key}") })
}

/// One episode per line: task seed, then action indices.
pub fn write_replay(path: &Path, replay: &ReplayBuffer) -> Result<()> {
    let mut text = String::new();
    for e in replay.episodes() {
        if generate_task(e.task.seed) != e.task {
            return Err(Error::Format { path: path.display().to_string(), msg: "episode task is not seed-generated".into() });
        }
        text.push_str(&e.task.seed.to_string());
        text.push(' ');
        text.extend(e.actions.iter().map(|a| char::from(b'0' + a.index() as u8)));
        text.push('\n');
    }
    write_text(path, &text)
}

pub fn read_replay(path: &Path, capacity: usize) -> Result<ReplayBuffer> {
    let text = fs::read_to_string(path).map_err(Error::file(path))?;
    let bad = |msg: &str| Error::Format { path: path.display().to_string(), msg: msg.to_string() };
    let mut replay = ReplayBuffer::new(capacity);
    for line in text.lines() {
        let (seed, actions) = line.split_once(' ').ok_or_else(|| bad("expected seed and actions"))?;
        let seed: u64 = seed.parse().map_err(|_| bad("bad seed"))?;
        let actions = actions
            .bytes()
            .map(|b| match b {
                b'0'..=b'5' => Ok(Action::from_index((b - b'0') as usize)),
                _ => Err(bad("bad action")),
            })
            .collect::<Result<Vec<_>>>()?;
        replay.push(Episode::replay(&generate_task(seed), &actions)?);
    }
    Ok(replay)
}

fn save_model_phase(m: &ModelPhase, dir: &Path, p: &mut Vec<(String, String)>) -> Result<()> {
    m.trainer.net.save(&dir.join("model.bpw"))?;
    m.trainer.optim.save(&dir.join("model.bpo"))?;
    write_replay(&dir.join("replay.txt"), &m.replay)?;
    p.push(("phase".into(), "model".into()));
    p.push(("model_step".into(), m.trainer.steps.to_string()));
    p.push(("collector_episodes".into(), m.collector.episodes().to_string()));
    p.push(("sample_rng".into(), RngState::capture(&m.sample_rng).encode()));
    p.push(("model_accum".into(), m.accum.encode()));
    Ok(())
}

fn restore_model_phase(config: &ExperimentConfig, p: &HashMap<String, String>) -> Result<ModelPhase> {
    let dir = ckpt_dir(&config.out_dir);
    let net = ModelNet::load(&dir.join("model.bpw"))?;
    let optim = RmsProp::load(&dir.join("model.bpo"), net.params())?;
    let trainer = ModelTrainer { net, optim, steps: parsed(p, "model_step")? };
    Ok(ModelPhase {
        trainer,
        replay: read_replay(&dir.join("replay.txt"), config.replay_capacity)?,
        collector: Collector::resume(config.data_seed, parsed(p, "collector_episodes")?),
        sample_rng: rng_field(p, "sample_rng")?,
        accum: accum_field(p, "model_accum")?,
    })
}

fn save_dqn_phase(d: &DqnPhase, dir: &Path, p: &mut Vec<(String, String)>) -> Result<()> {
    let t = &d.learner.trainer;
    t.net.save(&dir.join("dqn.bpw"))?;
    t.target.save(&dir.join("dqn_target.bpw"))?;
    t.optim.save(&dir.join("dqn.bpo"))?;
    write_replay(&dir.join("dqn_replay.txt"), &d.learner.replay)?;
    let c = d.learner.cursor();
    let actions: String = c.live_actions.iter().map(|a| char::from(b'0' + a.index() as u8)).collect();
    p.push(("phase".into(), "dqn".into()));
    p.push((
        "dqn_cursor".into(),
        format!(
            "{} {} {} {} {} {} {}",
            c.env_steps,
            c.updates,
            c.task_rng.encode(),
            c.explore_rng.encode(),
            c.sample_rng.encode(),
            c.live_task,
            if actions.is_empty() { "-".into() } else { actions }
        ),
    ));
    p.push(("dqn_accum".into(), d.accum.encode()));
    Ok(())
}

fn restore_dqn_phase(config: &ExperimentConfig, p: &HashMap<String, String>) -> Result<DqnPhase> {
    let dir = ckpt_dir(&config.out_dir);
    let bad = || Error::Format { path: "progress.txt".into(), msg: "bad dqn_cursor".into() };
    let parts: Vec<&str> = field(p, "dqn_cursor")?.split(' ').collect();
    let [env, updates, task, explore, sample, live, actions] = parts[..] else { return Err(bad()) };
    let state = |s: &str| RngState::decode(s).ok_or_else(bad);
    let cursor = LearnerCursor {
        env_steps: env.parse().map_err(|_| bad())?,
        updates: updates.parse().map_err(|_| bad())?,
        task_rng: state(task)?,
        explore_rng: state(explore)?,
        sample_rng: state(sample)?,
        live_task: live.parse().map_err(|_| bad())?,
        live_actions: if actions == "-" {
            Vec::new()
        } else {
            actions.bytes().map(|b| Action::from_index((b - b'0') as usize)).collect()
        },
    };
    let net = QNet::load(&dir.join("dqn.bpw"))?;
    let target = QNet::load(&dir.join("dqn_target.bpw"))?;
    let optim = RmsProp::load(&dir.join("dqn.bpo"), net.params())?;
    let trainer = DqnTrainer { net, target, optim, updates: cursor.updates, config: config.dqn };
    let replay = read_replay(&dir.join("dqn_replay.txt"), config.dqn.replay_capacity)?;
    let total = config.train_steps * config.dqn.train_every;
    Ok(DqnPhase { learner: DqnLearner::restore(trainer, replay, total, &cursor)?, accum: accum_field(p, "dqn_accum")? })
}
