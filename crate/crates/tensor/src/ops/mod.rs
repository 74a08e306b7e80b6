//! Differentiable operations, implemented as methods on [`Graph`](crate::Graph).

pub mod attention;
pub mod conv;
pub mod elementwise;
pub mod layout;
pub mod norm;
pub mod pool;
pub mod reduce;
