//! Block-placing gridworld, learned transition model, tree-search planner,
//! DQN baseline and the experiment harness that compares them.

pub mod agent;
pub mod dqn;
pub mod error;
pub mod expert;
pub mod gridworld;
pub mod harness;
pub mod model;
pub mod planner;
pub mod rng;

pub use error::{Error, Result};
