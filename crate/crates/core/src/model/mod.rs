//! Learned transition model: network, replay data and training.

pub mod batch;
pub mod data;
pub mod net;
pub mod train;

pub use batch::{BatchClient, BatchQueue, Predictor};
pub use data::{make_training_pair, Episode, ReplayBuffer, TrainingPair, TransitionRecord, NOOP_PROBABILITY};
pub use net::{initial_stack, push_frame, stack_tensor, ModelNet, Stack, DECODER, ENCODER};
pub use train::{evaluate_losses, split_gradients, Losses, ModelTrainer, SplitGradients, BATCH};
