//! Experiment harness: configuration, evaluation on fixed test sets,
//! resumable runs and reports.

pub mod config;
pub mod eval;
pub mod experiment;
pub mod report;

pub use config::{CollectPolicy, ExperimentConfig};
pub use eval::{build_test_set, evaluate, run_tasks, Collector, EvalReport, Policy};
pub use experiment::{run_experiment, Outcome, RunControl};
