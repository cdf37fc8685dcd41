//! A small reverse-mode automatic differentiation engine.
//!
//! The engine is deliberately narrow: it supports the layer set needed by
//! per-pixel color mapping networks and small convolutional enhancers
//! (1×1 and 3×3 convolutions, pooling, instance normalization, pixel
//! shuffle, feature modulation, dropout) together with an Adam optimizer
//! and a little-endian checkpoint format.
//!
//! Tensors are four dimensional, laid out batch–channel–height–width.
//! A [`Graph`] records every executed operation; [`Graph::backward`] walks
//! the record in exact reverse order and accumulates gradients into every
//! node that requires them.
//!
//! ```
//! use hdrtv_tensor::{Graph, Tensor};
//!
//! let mut g = Graph::<f64>::new();
//! let x = g.param(Tensor::from_vec([1, 1, 1, 2], vec![1.0, 2.0]).unwrap());
//! let t = g.input(Tensor::zeros([1, 1, 1, 2]));
//! let loss = g.mse_loss(x, t).unwrap();
//! g.backward(loss).unwrap();
//! assert_eq!(g.grad(x).unwrap().data(), &[1.0, 2.0]);
//! ```

mod checkpoint;
mod error;
mod graph;
pub mod init;
mod kernels;
mod optim;
mod params;
mod scalar;
mod tensor;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use error::{Result, TensorError};
pub use graph::{Activation, Graph, NodeId};
pub use optim::{Adam, AdamConfig};
pub use params::{ParamId, ParamSet};
pub use scalar::Scalar;
pub use tensor::{Shape, Tensor};
