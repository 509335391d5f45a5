//! Minimal reverse-mode tensor engine: the layers, loss and optimizer needed
//! by a convolutional frame predictor and a Q-network, plus
//! finite-difference verification.

pub mod conv;
pub mod element;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod init;
pub mod optim;
pub mod params;
pub mod tensor;

pub use conv::{conv2d_backward, conv2d_forward, deconv2d_backward, deconv2d_forward, ConvSpec};
pub use element::{matmul, Element, Trans};
pub use error::{Result, TensorError};
pub use gradcheck::{grad_check, GradCheck, GradCheckReport};
pub use graph::{affine_forward, relu, sigmoid, Gradients, Graph, Var};
pub use optim::{RmsProp, RmsPropConfig, StepReport};
pub use params::{ParamSet, OPTIM_MAGIC, WEIGHTS_MAGIC};
pub use tensor::Tensor;
