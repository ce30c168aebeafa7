//! Human-aware replanning for a holonomic mobile robot.
//!
//! The crate couples an RRTX-style incremental planner with edge costs that
//! weigh path length by a danger index predicted from pedestrian motion
//! models, and replays recorded pedestrian tracks to evaluate the result.
//!
//! Module map:
//! - [`geometry`]: states, convex regions, collision queries.
//! - [`motion`]: linear stochastic model, GMM/GMR training and conditioning.
//! - [`danger`]: danger indices, future-position regions, edge costs.
//! - [`planner`]: the replanning graph.
//! - [`data_io`]: track ingestion, preprocessing, model persistence.
//! - [`sim`]: replay simulator, traces and metrics.

pub mod danger;
pub mod data_io;
pub mod geometry;
pub mod motion;
pub mod planner;
pub mod quadrature;
pub mod sim;
pub mod stats;
