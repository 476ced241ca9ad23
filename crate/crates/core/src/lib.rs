//! Separable neural-network solver for the BGK kinetic equation.
//!
//! The crate combines:
//!
//! * a small differentiation tape ([`tape`]) with reverse-mode parameter
//!   gradients and forward-mode coordinate derivatives,
//! * per-axis sine networks combined by rank-R CP contraction into fields
//!   on rectilinear grids ([`net`], [`field`]),
//! * kinetic physics: Maxwellians, separable moment quadrature, and the
//!   BGK residual ([`physics`]),
//! * a training loop with Lion and relative-weighted losses ([`train`]),
//! * a first-order finite-volume reference solver ([`solver`]),
//! * the experiment definitions and error metrics ([`problems`],
//!   [`metrics`]),
//! * checkpoint/CSV persistence ([`io`]) and the integration-strategy
//!   benchmark ([`bench`]).
//!
//! All numerics are generic over the scalar type through [`scalar::Real`];
//! the aliases below fix the two supported precisions.

pub mod error;
pub mod scalar;
pub mod tensor;
pub mod tape;
pub mod net;
pub mod field;
pub mod physics;
pub mod problems;
pub mod solver;

pub use error::{Error, Result};
pub use scalar::Real;
pub use tape::{NodeId, Tape};
pub use tensor::Tensor;

/// Double precision (default for tests and oracles).
pub type Tensor64 = Tensor<f64>;
pub type Tape64 = Tape<f64>;

/// Single precision (training-mode option).
pub type Tensor32 = Tensor<f32>;
pub type Tape32 = Tape<f32>;
