//! Layer-wise convex learning of two-layer ReLU residual units
//! `y = B[(Ax)^+ + x]`, with vanilla regression and SGD baselines and an
//! experiment harness.

pub mod baselines;
pub mod error;
pub mod eval;
pub mod layer1;
pub mod layer2;
pub mod model;
pub mod numerics;
pub mod solver;

pub use error::{Error, Result};
