//! Brownian motion and related diffusions on Euclidean space, spheres and
//! SO(n), stochastic integral experiments, and moment-based estimation of
//! Brownian distributions on SO(n).

// `!(x > 0.0)` and friends are used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod estimation;
pub mod integrals;
pub mod io;
pub mod liegroup;
pub mod linalg;
pub mod manifold;
pub mod process;
pub mod random;
pub mod series;

pub use error::{Error, Result};
pub use manifold::{FrameAtPoint, ManifoldSpec, Point, TangentVector};
pub use process::{Path, SimConfig};
pub use random::{ColourSpec, GaussianStream};
