//! Split-gradient training step and held-out loss evaluation.

use blockplan_tensor::{Graph, RmsProp, RmsPropConfig, Tensor};

use super::data::TrainingPair;
use super::net::{stack_tensor, ModelNet};
use crate::error::{Error, Result};
use crate::gridworld::{FRAME_LEN, FRAME_SIZE, NUM_ACTIONS};

pub const BATCH: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Losses {
    pub frame: f64,
    /// Masked mean over supervised entries; 0 if none.
    pub reward: f64,
}

struct BatchTensors {
    stacks: Tensor<f32>,
    actions: Tensor<f32>,
    frames: Tensor<f32>,
    rewards: Tensor<f32>,
    mask: Tensor<f32>,
}

fn batch_tensors(pairs: &[TrainingPair]) -> BatchTensors {
    let b = pairs.len();
    let stacks = stack_tensor(pairs.iter().map(|p| &p.stack));
    let mut actions = Vec::with_capacity(b * NUM_ACTIONS);
    let mut frames = Vec::with_capacity(b * FRAME_LEN);
    let mut rewards = Vec::with_capacity(b * NUM_ACTIONS);
    let mut mask = Vec::with_capacity(b * NUM_ACTIONS);
    for p in pairs {
        actions.extend_from_slice(&p.action.encoding());
        frames.extend_from_slice(p.frame_target.data());
        rewards.extend_from_slice(&p.reward_target);
        mask.extend_from_slice(&p.reward_mask);
    }
    let t = |shape: &[usize], v| Tensor::new(shape, v).expect("batch layout");
    BatchTensors {
        stacks,
        actions: t(&[b, NUM_ACTIONS], actions),
        frames: t(&[b, 1, FRAME_SIZE, FRAME_SIZE], frames),
        rewards: t(&[b, NUM_ACTIONS], rewards),
        mask: t(&[b, NUM_ACTIONS], mask),
    }
}

fn provenance(pairs: &[TrainingPair]) -> String {
    pairs.iter().map(|p| p.provenance.as_str()).collect::<Vec<_>>().join(",")
}

/// Per-parameter gradients of each loss term taken separately.
pub struct SplitGradients {
    pub frame: Vec<Option<Tensor<f32>>>,
    pub reward: Vec<Option<Tensor<f32>>>,
    pub losses: Losses,
}

/// Backward passes from the frame loss and from the reward loss alone.
pub fn split_gradients(net: &ModelNet, pairs: &[TrainingPair]) -> Result<SplitGradients> {
    let bt = batch_tensors(pairs);
    let mut g = Graph::new();
    let vars = net.params().register(&mut g);
    let stacks = g.constant(bt.stacks);
    let actions = g.constant(bt.actions);
    let out = net.forward(&mut g, &vars, stacks, actions)?;
    let ft = g.constant(bt.frames);
    let rt = g.constant(bt.rewards);
    let mask = g.constant(bt.mask);
    let fl = g.mse(out.frame, ft, None)?;
    let rl = g.mse(out.rewards, rt, Some(mask))?;
    let fg = g.backward(fl)?;
    let rg = g.backward(rl)?;
    Ok(SplitGradients {
        frame: vars.iter().map(|&v| fg.get(v).cloned()).collect(),
        reward: vars.iter().map(|&v| rg.get(v).cloned()).collect(),
        losses: Losses { frame: g.value(fl).data()[0] as f64, reward: g.value(rl).data()[0] as f64 },
    })
}

/// Network plus optimizer state.
#[derive(Debug, Clone)]
pub struct ModelTrainer {
    pub net: ModelNet,
    pub optim: RmsProp,
    pub steps: u64,
}

impl ModelTrainer {
    pub fn new(net: ModelNet, config: RmsPropConfig) -> ModelTrainer {
        let optim = RmsProp::new(config, net.params());
        ModelTrainer { net, optim, steps: 0 }
    }

    /// One RMSProp step on `frame MSE + masked reward MSE`. The reward term
    /// reaches only the reward head because of the stop-gradient on the
    /// embedding.
    pub fn train_step(&mut self, pairs: &[TrainingPair]) -> Result<Losses> {
        let bt = batch_tensors(pairs);
        let mut g = Graph::new();
        let vars = self.net.params().register(&mut g);
        let stacks = g.constant(bt.stacks);
        let actions = g.constant(bt.actions);
        let out = self.net.forward(&mut g, &vars, stacks, actions)?;
        let ft = g.constant(bt.frames);
        let rt = g.constant(bt.rewards);
        let mask = g.constant(bt.mask);
        let fl = g.mse(out.frame, ft, None)?;
        let rl = g.mse(out.rewards, rt, Some(mask))?;
        let total = g.add(fl, rl)?;
        let losses = Losses { frame: g.value(fl).data()[0] as f64, reward: g.value(rl).data()[0] as f64 };
        if !losses.frame.is_finite() || !losses.reward.is_finite() {
            return Err(Error::NonFinite { what: "model loss", step: self.steps, provenance: provenance(pairs) });
        }
        let mut grads = g.backward(total)?;
        let grads: Vec<_> = vars.iter().map(|&v| grads.take(v)).collect();
        drop(g);
        let report = self.optim.step(self.net.params_mut(), &grads)?;
        if !report.skipped.is_empty() {
            return Err(Error::NonFinite {
                what: "model gradient",
                step: self.steps,
                provenance: format!("{:?} on {}", report.skipped, provenance(pairs)),
            });
        }
        self.steps += 1;
        Ok(losses)
    }
}

/// Frame MSE over every pixel and masked reward MSE over supervised entries,
/// using the inference path in chunks of [`BATCH`].
pub fn evaluate_losses(net: &ModelNet, pairs: &[TrainingPair]) -> Result<Losses> {
    let (mut frame_sum, mut reward_sum, mut reward_count) = (0.0f64, 0.0f64, 0usize);
    for chunk in pairs.chunks(BATCH) {
        let inputs: Vec<_> = chunk.iter().map(|p| (&p.stack, p.action)).collect();
        for ((frame, rewards), p) in net.predict_batch(&inputs)?.iter().zip(chunk) {
            frame_sum += frame.mse(&p.frame_target) * FRAME_LEN as f64;
            for k in 0..NUM_ACTIONS {
                if p.reward_mask[k] != 0.0 {
                    reward_sum += (rewards[k] as f64 - p.reward_target[k] as f64).powi(2);
                    reward_count += 1;
                }
            }
        }
    }
    Ok(Losses {
        frame: frame_sum / (pairs.len() * FRAME_LEN) as f64,
        reward: if reward_count == 0 { 0.0 } else { reward_sum / reward_count as f64 },
    })
}
