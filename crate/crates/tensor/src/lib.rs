//! A small reverse-mode automatic differentiation engine for NCHW image
//! tensors, generic over `f32` and `f64`.

pub mod error;
pub mod graph;
pub mod init;
pub mod nn;
pub mod ops;
pub mod param;
pub mod scalar;
pub mod tensor;

pub use error::{Result, TensorError};
pub use graph::{BufferUpdate, Gradients, Graph, GraphMode, NamedTensors, Var};
pub use init::Initializer;
pub use ops::attention::WindowSpec;
pub use ops::conv::ConvSpec;
pub use param::{Module, Param, ParamId};
pub use scalar::{DType, Scalar};
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Graph32 = Graph<f32>;
pub type Graph64 = Graph<f64>;
