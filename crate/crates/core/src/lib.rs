//! Chance-constrained multi-robot motion planning with cooperative
//! localization: belief-space RRT/EST over a centralized Kalman-filtered team
//! state, conservative contour-based constraint checks, CL biasing heuristics,
//! a Monte-Carlo execution oracle and a benchmark harness.

pub mod bench;
pub mod biasing;
pub mod environment;
pub mod error;
pub mod gaussian;
pub mod nn;
pub mod oracle;
pub mod planner;
pub mod propagation;
pub mod team;
pub mod validation;
pub mod weights;

pub use environment::{builtin, load_environment, Environment};
pub use error::{Error, Result};
