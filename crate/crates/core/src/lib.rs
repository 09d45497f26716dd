//! Conditional density estimation for tabular regression.
//!
//! A ResNet-style encoder turns a mixed numeric/categorical feature row into
//! a conditioning vector, a linear head maps it to the parameters of one or
//! more monotonic rational-quadratic splines, and the splines push a
//! standard normal onto the (standardized) target. Everything here is
//! `no_std` + `alloc`; file formats and the command line live in the
//! `tabflow` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod data;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod flow;
pub mod gradcheck;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod rng;
pub mod spline;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use graph::{Gradients, Graph, Mode, NodeId, ParamId, ParamStore};
pub use rng::Rng;
pub use spline::Spline;
pub use tensor::Tensor;
