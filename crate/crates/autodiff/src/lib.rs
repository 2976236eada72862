//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! The engine records an eager tape of ops and replays it backwards to
//! accumulate gradients. It carries exactly the primitives the beamformer
//! networks need — linear maps, PReLU, layer normalization, softmax,
//! scaled dot-product attention, a GRU, and dilated 1-D convolution — plus
//! Adam, gradient clipping, and a flat binary checkpoint format. Complex
//! quantities never enter the graph; callers carry them as (real, imaginary)
//! planes and implement any complex-valued steps as [`CustomOp`]s.
//!
//! ```
//! use autodiff::{Graph, Tensor};
//!
//! let mut g = Graph::new();
//! let x = g.leaf(Tensor::from_vec(&[2, 2], vec![1.0, -2.0, 3.0, 0.5]).unwrap(), true);
//! let w = g.leaf(Tensor::from_vec(&[2, 2], vec![0.5, 0.0, 0.0, 0.5]).unwrap(), true);
//! let y = g.matmul(x, w, false).unwrap();
//! let loss = g.sum_all(y).unwrap();
//! g.backward(loss).unwrap();
//! assert_eq!(g.grad(w).unwrap().data(), &[4.0, 4.0, -1.5, -1.5]);
//! ```

mod check;
mod error;
mod graph;
mod kernels;
mod tensor;

pub mod checkpoint;
pub mod nn;
pub mod optim;

pub use check::{check_gradients, rel_err, GradCheckReport, FD_STEP};
pub use error::{Error, Result};
pub use graph::{CustomOp, Graph, GruNodes, NodeId, LAYER_NORM_EPS};
pub use tensor::Tensor;
