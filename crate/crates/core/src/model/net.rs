//! Frame-and-reward transition network.
//!
//! ```text
//! stack 4x64x64 -> conv 7/2/3 -> 32x32x32 -> conv 5/2/2 -> 64x16x16
//!   -> conv 5/2/2 -> 128x8x8 -> conv 3/2/1 -> 256x4x4 = 4096
//! [4096 | action 6] -> affine 4102->4096, ReLU = embedding
//! embedding -> 256x4x4 -> deconv 3/2/1/1 -> 128x8x8 -> deconv 5/2/2/1
//!   -> 64x16x16 -> deconv 5/2/2/1 -> 32x32x32 -> deconv 7/2/3/1 -> 1x64x64, sigmoid
//! stop_gradient(embedding) -> affine 2048, ReLU -> affine 6 = rewards
//! ```
//!
//! ReLU follows every conv and every deconv except the last.

use std::path::Path;
use std::sync::Arc;

use blockplan_tensor::init::{gaussian, he_std, lecun_std};
use blockplan_tensor::{
    affine_forward, conv2d_forward, deconv2d_forward, relu, sigmoid, ConvSpec, Graph, ParamSet, Tensor, Var,
    WEIGHTS_MAGIC,
};

use crate::error::{Error, Result};
use crate::gridworld::{Action, Frame, FRAME_LEN, FRAME_SIZE, NUM_ACTIONS};
use crate::rng::{self, Purpose};

pub const STACK: usize = 4;
pub const EMBED: usize = 4096;
pub const REWARD_HIDDEN: usize = 2048;

pub const ENCODER: [ConvSpec; 4] = [
    ConvSpec::new(4, 32, 7, 2, 3),
    ConvSpec::new(32, 64, 5, 2, 2),
    ConvSpec::new(64, 128, 5, 2, 2),
    ConvSpec::new(128, 256, 3, 2, 1),
];

pub const DECODER: [ConvSpec; 4] = [
    ConvSpec::new(256, 128, 3, 2, 1).with_output_padding(1),
    ConvSpec::new(128, 64, 5, 2, 2).with_output_padding(1),
    ConvSpec::new(64, 32, 5, 2, 2).with_output_padding(1),
    ConvSpec::new(32, 1, 7, 2, 3).with_output_padding(1),
];

/// Parameter slots, in `ParamSet` order.
mod slot {
    pub const ENC: usize = 0; // 4 layers x (w, b)
    pub const MERGE: usize = 8;
    pub const DEC: usize = 10; // 4 layers x (w, b)
    pub const REW1: usize = 18;
    pub const REW2: usize = 20;
    pub const COUNT: usize = 22;
}

/// Index range of the reward-head parameters.
pub const REWARD_HEAD: std::ops::Range<usize> = slot::REW1..slot::COUNT;

/// Four frames, oldest first.
pub type Stack = [Arc<Frame>; STACK];

#[derive(Debug, Clone, PartialEq)]
pub struct ModelNet {
    params: ParamSet,
}

/// Graph handles for one forward pass.
pub struct ModelOutputs {
    /// `[B, 1, 64, 64]`.
    pub frame: Var,
    /// `[B, 6]`.
    pub rewards: Var,
    pub embedding: Var,
}

impl ModelNet {
    /// Gaussian init from the `Init` stream of `seed`; biases zero.
    pub fn new(seed: u64) -> ModelNet {
        let mut rng = rng::stream(seed, Purpose::Init);
        let mut p = ParamSet::new();
        for (i, s) in ENCODER.iter().enumerate() {
            let fan_in = s.in_channels * s.kernel * s.kernel;
            p.push(format!("enc{}.w", i + 1), gaussian(&[s.out_channels, s.in_channels, s.kernel, s.kernel], he_std(fan_in), &mut rng));
            p.push(format!("enc{}.b", i + 1), Tensor::zeros(&[s.out_channels]));
        }
        p.push("merge.w", gaussian(&[EMBED, EMBED + NUM_ACTIONS], he_std(EMBED + NUM_ACTIONS), &mut rng));
        p.push("merge.b", Tensor::zeros(&[EMBED]));
        for (i, s) in DECODER.iter().enumerate() {
            // Each output pixel of a stride-s transposed conv sees about
            // in * k^2 / s^2 inputs.
            let fan_in = s.in_channels * s.kernel * s.kernel / (s.stride * s.stride);
            let std = if i + 1 == DECODER.len() { lecun_std(fan_in) } else { he_std(fan_in) };
            p.push(format!("dec{}.w", i + 1), gaussian(&[s.in_channels, s.out_channels, s.kernel, s.kernel], std, &mut rng));
            p.push(format!("dec{}.b", i + 1), Tensor::zeros(&[s.out_channels]));
        }
        p.push("rew1.w", gaussian(&[REWARD_HIDDEN, EMBED], he_std(EMBED), &mut rng));
        p.push("rew1.b", Tensor::zeros(&[REWARD_HIDDEN]));
        p.push("rew2.w", gaussian(&[NUM_ACTIONS, REWARD_HIDDEN], lecun_std(REWARD_HIDDEN), &mut rng));
        p.push("rew2.b", Tensor::zeros(&[NUM_ACTIONS]));
        debug_assert_eq!(p.len(), slot::COUNT);
        ModelNet { params: p }
    }

    /// Checks the encoder flattens to 4096 and the decoder returns to 64x64.
    pub fn audit_shapes() -> Result<()> {
        let mut size = FRAME_SIZE;
        for s in &ENCODER {
            size = s.output_size(size)?;
        }
        let features = ENCODER[3].out_channels * size * size;
        if features != EMBED {
            return Err(Error::Architecture(format!("encoder gives {features} features, not {EMBED}")));
        }
        for s in &DECODER {
            size = s.transposed_output_size(size)?;
        }
        if size != FRAME_SIZE || DECODER[3].out_channels != 1 {
            return Err(Error::Architecture(format!("decoder gives {size}x{size}")));
        }
        Ok(())
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Zeroes the last reward layer, so every reward prediction is 0.
    pub fn zero_reward_output(&mut self) {
        for i in slot::REW2..slot::COUNT {
            self.params.get_mut(i).data_mut().fill(0.0);
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(self.params.save(path, WEIGHTS_MAGIC)?)
    }

    pub fn load(path: &Path) -> Result<ModelNet> {
        let params = ParamSet::load(path, WEIGHTS_MAGIC)?;
        ModelNet::new(0).params.check_layout(&params)?;
        Ok(ModelNet { params })
    }

    /// Records a forward pass on `graph`. `vars` are the registered
    /// parameters; `stacks` is `[B, 4, 64, 64]` and `actions` `[B, 6]`.
    pub fn forward(&self, g: &mut Graph<f32>, vars: &[Var], stacks: Var, actions: Var) -> Result<ModelOutputs> {
        let batch = g.value(stacks).shape()[0];
        let mut h = stacks;
        for (i, s) in ENCODER.iter().enumerate() {
            h = g.conv2d(h, vars[slot::ENC + 2 * i], vars[slot::ENC + 2 * i + 1], *s)?;
            h = g.relu(h);
        }
        let flat = g.reshape(h, &[batch, EMBED])?;
        let merged = g.concat(flat, actions)?;
        let e = g.affine(merged, vars[slot::MERGE], vars[slot::MERGE + 1])?;
        let embedding = g.relu(e);
        let mut d = g.reshape(embedding, &[batch, 256, 4, 4])?;
        for (i, s) in DECODER.iter().enumerate() {
            d = g.deconv2d(d, vars[slot::DEC + 2 * i], vars[slot::DEC + 2 * i + 1], *s)?;
            d = if i + 1 == DECODER.len() { g.sigmoid(d) } else { g.relu(d) };
        }
        let cut = g.stop_gradient(embedding);
        let r = g.affine(cut, vars[slot::REW1], vars[slot::REW1 + 1])?;
        let r = g.relu(r);
        let rewards = g.affine(r, vars[slot::REW2], vars[slot::REW2 + 1])?;
        Ok(ModelOutputs { frame: d, rewards, embedding })
    }

    /// Tape-free batched inference. Every row is computed with the same
    /// arithmetic as a batch of one, so results do not depend on batching.
    pub fn predict_batch(&self, inputs: &[(&Stack, Action)]) -> Result<Vec<(Frame, [f32; NUM_ACTIONS])>> {
        if inputs.is_empty() {
            return Ok(Vec::new());
        }
        let batch = inputs.len();
        let p = |i: usize| self.params.get(i);
        let mut h = stack_tensor(inputs.iter().map(|(s, _)| *s));
        for (i, s) in ENCODER.iter().enumerate() {
            h = relu(&conv2d_forward(&h, s, p(slot::ENC + 2 * i), p(slot::ENC + 2 * i + 1))?);
        }
        let mut merged = Vec::with_capacity(batch * (EMBED + NUM_ACTIONS));
        for (row, (_, a)) in h.data().chunks(EMBED).zip(inputs) {
            merged.extend_from_slice(row);
            merged.extend_from_slice(&a.encoding());
        }
        let merged = Tensor::new(&[batch, EMBED + NUM_ACTIONS], merged)?;
        let embedding = relu(&affine_forward(&merged, p(slot::MERGE), p(slot::MERGE + 1))?);
        let mut d = embedding.clone().reshape(&[batch, 256, 4, 4])?;
        for (i, s) in DECODER.iter().enumerate() {
            d = deconv2d_forward(&d, s, p(slot::DEC + 2 * i), p(slot::DEC + 2 * i + 1))?;
            d = if i + 1 == DECODER.len() { sigmoid(&d) } else { relu(&d) };
        }
        let r = relu(&affine_forward(&embedding, p(slot::REW1), p(slot::REW1 + 1))?);
        let r = affine_forward(&r, p(slot::REW2), p(slot::REW2 + 1))?;
        Ok(d.data()
            .chunks(FRAME_LEN)
            .zip(r.data().chunks(NUM_ACTIONS))
            .map(|(f, r)| (Frame::new(f.to_vec()), r.try_into().expect("six rewards")))
            .collect())
    }

    pub fn predict(&self, stack: &Stack, action: Action) -> Result<(Frame, [f32; NUM_ACTIONS])> {
        Ok(self.predict_batch(&[(stack, action)])?.pop().expect("one prediction"))
    }
}

/// Packs stacks into `[B, 4, 64, 64]`.
pub fn stack_tensor<'a>(stacks: impl Iterator<Item = &'a Stack>) -> Tensor<f32> {
    let mut data = Vec::new();
    let mut batch = 0;
    for s in stacks {
        for f in s.iter() {
            data.extend_from_slice(f.data());
        }
        batch += 1;
    }
    Tensor::new(&[batch, STACK, FRAME_SIZE, FRAME_SIZE], data).expect("stack layout")
}

/// The reset frame repeated four times.
pub fn initial_stack(frame: Frame) -> Stack {
    let f = Arc::new(frame);
    [f.clone(), f.clone(), f.clone(), f]
}

/// Drops the oldest frame and appends `frame`.
pub fn push_frame(stack: &Stack, frame: Arc<Frame>) -> Stack {
    [stack[1].clone(), stack[2].clone(), stack[3].clone(), frame]
}
