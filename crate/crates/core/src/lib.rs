//! Collision probability between ellipsoids with Gaussian position
//! uncertainty, and a chance-constrained planner in belief space that uses
//! it.
//!
//! [`geometry`] reduces the collision of two ellipsoids to a quadratic form
//! in the offset of their centers. The distribution of that form is
//! evaluated in [`quadform`] and bounded from above in [`riskbounds`];
//! [`query`] ties the two together for a single robot and obstacle. The
//! planner in [`planner`] propagates an EKF belief from [`belief`] over a
//! receding horizon and keeps every predicted step below a collision
//! threshold. [`sim`] runs it in closed loop against sampled truth.

// NaN must fail range checks, which `!(x > 0.0)` does and `x <= 0.0` does not.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod belief;
pub mod error;
pub mod geometry;
pub mod linalg;
pub mod oracle;
pub mod planner;
pub mod quadform;
pub mod query;
pub mod riskbounds;
pub mod scene;
pub mod sim;

pub use error::{Error, Result};
