//! Reverse-mode automatic differentiation over small dense tensors, plus the
//! layers the neutralization models are built from.
//!
//! A [`Graph`] records every operation applied to its [`Var`] handles. Calling
//! [`Graph::backward`] on a scalar walks the record in reverse and returns the
//! gradient of every node, including the leaves bound to a [`ParamStore`].
//!
//! ```
//! use npov_autograd::{Graph, ParamStore, Tensor};
//!
//! let store = ParamStore::<f64>::new();
//! let mut g = Graph::new(&store);
//! let x = g.input(Tensor::row(&[1.0, 2.0, 3.0]), true);
//! let y = g.sum(x);
//! let grads = g.backward(y).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[1.0, 1.0, 1.0]);
//! ```

pub mod checkpoint;
pub mod encoder;
pub mod gradcheck;
mod graph;
pub mod nn;
pub mod optim;
mod params;
mod tensor;

pub use graph::{Gradients, Graph, Var};
pub use params::{ParamId, ParamStore, Parameter};
pub use tensor::{Real, Tensor};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op} expects rank {expected}, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("data of length {len} does not fill shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("index {index} out of range for {op} (size {size})")]
    Index {
        op: &'static str,
        index: usize,
        size: usize,
    },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("duplicate parameter name `{0}`")]
    DuplicateParam(String),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no masked positions could be drawn (mask probability {0})")]
    NoMaskedPositions(f64),
}

pub type Result<T> = std::result::Result<T, Error>;
