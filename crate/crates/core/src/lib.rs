//! Leader-follower formation control of disturbed unicycle agents that
//! spread uniformly along a parametric curve `c(s) = G(s)ξ`.
//!
//! Modules, bottom-up:
//! - [`curve`]: basis families, fitting, stacked bases and pseudoinverses.
//! - [`topology`]: directed graphs, Laplacians and the diagonal Lyapunov construction.
//! - [`dynamics`]: unicycle kinematics and the virtual-point input map.
//! - [`control`]: the formation law, disturbance observer and Lyapunov monitor.
//! - [`simulation`]: scenario validation, integration, logging and sweeps.
//! - [`scenario`] and [`output`]: file formats.

pub mod control;
pub mod curve;
pub mod dynamics;
pub mod error;
pub mod output;
pub mod scenario;
pub mod simulation;
pub mod topology;

pub use error::{Error, Result, ValidationIssue};
