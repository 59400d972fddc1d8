//! Non-rigid monocular state estimation.
//!
//! A camera hangs from a moving base on an elastic mount. Given only the
//! camera's scale-ambiguous trajectory, the estimator recovers the base
//! trajectory, the metric scale and the gravity direction by combining a
//! learned deformation-to-acceleration model with a cumulative B-spline
//! representation of the base motion.

pub mod error;
pub mod geometry;
mod linalg;
pub mod spline;
pub mod dynamics;
pub mod dfn;
pub mod estimator;
pub mod metrics;
pub mod experiment;
pub mod io;

pub use error::{Error, Result};
