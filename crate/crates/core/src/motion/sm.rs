//! Linear stochastic pedestrian model: constant longitudinal speed, lateral
//! velocity driven by white Gaussian noise.
//!
//! Lateral state `x = [p_lt, v_lt]` evolves as `x(k+1) = A x(k) + G w(k)` with
//! `A = [[1, dt], [0, 1]]`, `G = [0, dt]^T` and `w ~ N(0, sigma2_lt)`, starting
//! from a known zero state. The lateral position is therefore zero-mean with a
//! variance that grows with the stage index, and since the longitudinal speed
//! is constant the stage maps one-to-one to a longitudinal distance.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::MotionError;
use crate::stats::{normal_pdf, Sym2};

/// Density returned at a zero-variance stage for `p_lt == 0`. Stages 0 and 1
/// carry no lateral uncertainty; the cap keeps downstream integrals finite.
pub const DEGENERATE_DENSITY_CAP: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmParams {
    /// Prediction step, seconds.
    pub dt: f64,
    /// Longitudinal walking speed, m/s.
    pub v_ln: f64,
    /// Variance of the lateral acceleration noise.
    pub sigma2_lt: f64,
}

impl Default for SmParams {
    fn default() -> Self {
        Self {
            dt: 0.1,
            v_ln: 1.2,
            sigma2_lt: 0.5,
        }
    }
}

impl SmParams {
    pub fn validate(&self) -> Result<(), MotionError> {
        if !(self.dt > 0.0 && self.v_ln > 0.0 && self.sigma2_lt >= 0.0) {
            return Err(MotionError::InvalidParams(format!(
                "sm params need dt > 0, v_ln > 0, sigma2_lt >= 0 (got {self:?})"
            )));
        }
        Ok(())
    }

    /// Longitudinal advance per stage.
    pub fn stage_length(&self) -> f64 {
        self.v_ln * self.dt
    }

    /// Nearest stage for a longitudinal distance.
    pub fn stage_for(&self, p_ln: f64) -> u64 {
        (p_ln / self.stage_length()).round().max(0.0) as u64
    }

    /// Closed form of the lateral position variance:
    /// `dt^4 * sigma2 * sum_{j=1}^{k-1} j^2`.
    pub fn lateral_variance(&self, k: u64) -> f64 {
        if k < 2 {
            return 0.0;
        }
        let m = (k - 1) as f64;
        let sum_sq = m * (m + 1.0) * (2.0 * m + 1.0) / 6.0;
        self.dt.powi(4) * self.sigma2_lt * sum_sq
    }

    /// Lateral variance as a function of longitudinal distance; nearest-stage lookup.
    pub fn lateral_variance_at(&self, p_ln: f64) -> f64 {
        self.lateral_variance(self.stage_for(p_ln))
    }
}

/// Lateral covariance at one stage. The lateral mean is always zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LateralBelief {
    pub stage: u64,
    pub mean: f64,
    pub var_p: f64,
    pub covariance: Sym2,
}

/// Runs the covariance recursion `S(k+1) = A S(k) A^T + Sigma_w` from `S(0) = 0`.
pub fn sm_lateral_covariance(params: &SmParams, k: u64) -> LateralBelief {
    let dt = params.dt;
    let q = dt * dt * params.sigma2_lt;
    let mut s = Sym2::ZERO;
    for _ in 0..k {
        // A S A^T with A = [[1, dt], [0, 1]]
        let xx = s.xx + 2.0 * dt * s.xy + dt * dt * s.yy;
        let xy = s.xy + dt * s.yy;
        let yy = s.yy + q;
        s = Sym2::new(xx, xy, yy);
    }
    LateralBelief {
        stage: k,
        mean: 0.0,
        var_p: s.xx,
        covariance: s,
    }
}

/// Lateral density at a given longitudinal distance. Zero behind the pedestrian.
pub fn sm_lateral_pdf(params: &SmParams, p_lt: f64, p_ln: f64) -> f64 {
    if p_ln < 0.0 {
        return 0.0;
    }
    let var = params.lateral_variance_at(p_ln);
    if var == 0.0 {
        return if p_lt == 0.0 { DEGENERATE_DENSITY_CAP } else { 0.0 };
    }
    normal_pdf(p_lt, 0.0, var)
}

/// Forward simulations of the model. Each path holds `round(horizon/dt) + 1`
/// samples `(p_ln, p_lt)` starting at the origin.
pub fn sm_rollout(
    params: &SmParams,
    horizon: f64,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<Vec<(f64, f64)>>, MotionError> {
    params.validate()?;
    if !(horizon > 0.0) {
        return Err(MotionError::InvalidParams(format!("horizon must be positive, got {horizon}")));
    }
    let steps = (horizon / params.dt).round() as usize;
    let noise = Normal::new(0.0, params.sigma2_lt.sqrt())
        .map_err(|e| MotionError::InvalidParams(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let step = params.stage_length();
    let paths = (0..n_paths)
        .map(|_| {
            let mut path = Vec::with_capacity(steps + 1);
            let (mut p, mut v) = (0.0f64, 0.0f64);
            path.push((0.0, 0.0));
            for k in 1..=steps {
                let w = noise.sample(&mut rng);
                p += params.dt * v;
                v += params.dt * w;
                path.push((step * k as f64, p));
            }
            path
        })
        .collect();
    Ok(paths)
}
