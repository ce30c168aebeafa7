//! Pedestrian motion prediction: the linear stochastic model and mixture
//! models learned from demonstration paths.

pub mod gmm;
pub mod sm;
pub mod train;

use thiserror::Error;

pub use gmm::{
    combine_class_models, gmm_pdf, gmr_condition, gmr_interval_prob, gmr_pdf, GaussianComponent, GmmModel,
    GmrConditional, TrendClass,
};
pub use sm::{sm_lateral_covariance, sm_lateral_pdf, sm_rollout, LateralBelief, SmParams};
pub use train::{em_fit, fit_mixture, kmeans, Clusters, EmOptions, EmReport};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MotionError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("invalid mixture model: {0}")]
    InvalidModel(String),
    #[error("need at least {needed} points, got {got}")]
    NotEnoughData { needed: usize, got: usize },
}
