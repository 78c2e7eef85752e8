//! Adversarial auxiliary-network image classification.
//!
//! A residual feature extractor and a softmax classifier are trained jointly
//! with a reconstruction generator and a two-headed patch discriminator.
//! Only the extractor and classifier are needed at inference time.
//!
//! The crate is self-contained: [`tensor`], [`ops`] and [`graph`] form a small
//! reverse-mode differentiation engine on which [`networks`], [`losses`] and
//! [`training`] are built.

pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod graph;
pub mod losses;
pub mod networks;
pub mod ops;
pub mod params;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use graph::{run_graph, run_graph_backward, Activations, Backprop, ComputationGraph, GraphBuilder};
pub use ops::{backward_op, forward_op, ConvSpec, Mode, OpSpec};
pub use params::{GroupSet, OwnerGroup, ParamId, ParameterStore};
pub use tensor::{Scalar, Tensor};
