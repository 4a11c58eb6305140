//! Manipulability-guided pixel-action learning for mobile manipulators:
//! arm kinematics, camera geometry, workspace maps and pixel priors, a
//! rendered quasi-static simulator, affordance masks, DDQN variants and
//! learning-curve metrics.

pub mod affordance;
pub mod camera;
pub mod error;
pub mod io;
pub mod kinematics;
pub mod manip_map;
pub mod metrics;
pub mod rl;
pub mod seeding;
pub mod simenv;

pub use error::{Error, Result};
