//! Danger indices of points and paths, future-position regions of
//! pedestrians, and the human-aware edge cost.
//!
//! The danger index (DI) of a robot position is the probability that the
//! predicted pedestrian position lies within an `epsilon` vicinity of it,
//! evaluated in the pedestrian's frame. A path danger index (PDI) aggregates
//! it along a segment, and the edge cost is `length * (1 + PDI)`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    from_human_frame, sample_count, segment_intersects_region, to_human_frame, Configuration, ConvexRegion,
    HumanPose, PathSegment, DEFAULT_SPACING,
};
use crate::motion::{gmr_interval_prob, GaussianComponent, GmmModel, SmParams};
use crate::quadrature::{gl16, gl8, integrate};
use crate::stats::normal_interval_prob;

/// Lateral half-width floor of a future-position region, so that the first
/// zero-variance stages still span a proper polygon.
pub const MIN_REGION_HALF_WIDTH: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DangerError {
    #[error("invalid danger parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DangerParams {
    /// Half-width of the vicinity, meters.
    pub epsilon: f64,
    /// Prediction window, seconds.
    pub horizon: f64,
    /// Lateral half-width of the future region in standard deviations.
    pub sigma_band: f64,
    /// Sample spacing for the summed path indices, meters.
    pub spacing: f64,
    /// Panel length of the mixture line integral, meters.
    pub line_step: f64,
    /// Skip segments that start after the prediction window of the observation.
    pub time_gating: bool,
}

impl Default for DangerParams {
    fn default() -> Self {
        Self {
            epsilon: 0.25,
            horizon: 5.0,
            sigma_band: 3.0,
            spacing: DEFAULT_SPACING,
            line_step: 0.05,
            time_gating: false,
        }
    }
}

impl DangerParams {
    pub fn validate(&self) -> Result<(), DangerError> {
        let ok = self.epsilon > 0.0
            && self.horizon > 0.0
            && self.sigma_band > 0.0
            && self.spacing > 0.0
            && self.line_step > 0.0
            && self.epsilon.is_finite()
            && self.horizon.is_finite();
        if !ok {
            return Err(DangerError::InvalidParams(format!(
                "epsilon, horizon, sigma_band, spacing and line_step must be positive (got {self:?})"
            )));
        }
        Ok(())
    }
}

/// Cost of one edge: geometric length, danger and `length * (1 + pdi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeCost {
    pub length: f64,
    pub pdi: f64,
    pub total: f64,
}

impl EdgeCost {
    pub fn new(length: f64, pdi: f64) -> Self {
        let pdi = pdi.max(0.0);
        Self {
            length,
            pdi,
            total: length * (1.0 + pdi),
        }
    }

    pub fn length_only(length: f64) -> Self {
        Self::new(length, 0.0)
    }
}

/// DI under the linear stochastic model: the lateral normal at the nearest
/// stage integrated over `[q_lt - eps, q_lt + eps]`. Zero behind the
/// pedestrian and beyond the prediction window.
pub fn di_sm(q_ln: f64, q_lt: f64, sm: &SmParams, params: &DangerParams) -> f64 {
    if q_ln < 0.0 || q_ln > params.horizon * sm.v_ln {
        return 0.0;
    }
    let sd = sm.lateral_variance_at(q_ln).sqrt();
    normal_interval_prob(q_lt - params.epsilon, q_lt + params.epsilon, 0.0, sd)
}

/// DI under Gaussian mixture regression.
pub fn di_gmr(q_ln: f64, q_lt: f64, model: &GmmModel, params: &DangerParams) -> f64 {
    gmr_interval_prob(model, q_ln, q_lt - params.epsilon, q_lt + params.epsilon)
}

/// DI under the joint mixture: its mass on the square of half-width `epsilon`
/// centred at the query.
pub fn di_gmm(q_ln: f64, q_lt: f64, model: &GmmModel, params: &DangerParams) -> f64 {
    let eps = params.epsilon;
    let p: f64 = model
        .components()
        .iter()
        .filter(|c| c.prior > 0.0)
        .map(|c| c.prior * component_box_mass(c, q_ln - eps, q_ln + eps, q_lt - eps, q_lt + eps))
        .sum();
    p.clamp(0.0, 1.0)
}

/// Mass of one bivariate normal on `[a, b] x [c, d]`: the longitudinal
/// marginal is integrated numerically, the lateral conditional exactly.
fn component_box_mass(comp: &GaussianComponent, a: f64, b: f64, c: f64, d: f64) -> f64 {
    let [mu_ln, mu_lt] = comp.mean;
    let s = comp.cov;
    let sd_ln = s.xx.sqrt();
    let lo = a.max(mu_ln - 12.0 * sd_ln);
    let hi = b.min(mu_ln + 12.0 * sd_ln);
    if hi <= lo {
        return 0.0;
    }
    if normal_interval_prob(lo, hi, mu_ln, sd_ln) < 1e-17 {
        return 0.0;
    }
    let gain = s.xy / s.xx;
    let sd_cond = (s.yy - s.xy * gain).max(0.0).sqrt();
    let panels = ((hi - lo) / (0.5 * sd_ln)).ceil().clamp(1.0, 64.0) as usize;
    let norm = 1.0 / (2.0 * std::f64::consts::PI * s.xx).sqrt();
    let mass = integrate(gl16(), lo, hi, panels, |x| {
        let z = x - mu_ln;
        let marginal = norm * (-0.5 * z * z / s.xx).exp();
        marginal * normal_interval_prob(c, d, mu_lt + gain * z, sd_cond)
    });
    mass.clamp(0.0, 1.0)
}

/// Point model used by [`pdi_sum`].
#[derive(Debug, Clone, Copy)]
pub enum PointModel<'a> {
    Sm(&'a SmParams),
    Gmr(&'a GmmModel),
}

/// Sum of point DIs over a uniform discretization of the segment.
pub fn pdi_sum(seg: &PathSegment, pose: &HumanPose, model: PointModel<'_>, params: &DangerParams) -> f64 {
    let n = sample_count(seg.length(), params.spacing);
    let (a, b) = (seg.start.config, seg.end.config);
    (0..n)
        .map(|i| {
            let q = match i {
                0 => a,
                _ if i == n - 1 => b,
                _ => a.lerp(b, i as f64 / (n - 1) as f64),
            };
            let (q_ln, q_lt) = to_human_frame(q, pose);
            match model {
                PointModel::Sm(sm) => di_sm(q_ln, q_lt, sm, params),
                PointModel::Gmr(m) => di_gmr(q_ln, q_lt, m, params),
            }
        })
        .sum()
}

/// Line integral of the mixture density along the segment, in the
/// pedestrian's frame. Components whose closed-form bound on the segment is
/// negligible are skipped; the rest use composite Gauss-Legendre panels of
/// length `line_step`.
pub fn pdi_line_integral_gmm(seg: &PathSegment, pose: &HumanPose, model: &GmmModel, params: &DangerParams) -> f64 {
    let len = seg.length();
    if len == 0.0 {
        return 0.0;
    }
    let (a_ln, a_lt) = to_human_frame(seg.start.config, pose);
    let (b_ln, b_lt) = to_human_frame(seg.end.config, pose);
    let dir = [(b_ln - a_ln) / len, (b_lt - a_lt) / len];
    let panels = (len / params.line_step).ceil().max(1.0) as usize;
    let mut total = 0.0;
    for comp in model.components() {
        if comp.prior <= 0.0 {
            continue;
        }
        let Some(inv) = comp.cov.inverse() else {
            continue;
        };
        let d0 = [a_ln - comp.mean[0], a_lt - comp.mean[1]];
        // Mahalanobis distance along the line: qa u^2 + 2 qb u + qc
        let qa = inv.quad(dir);
        let qb = inv.xx * d0[0] * dir[0] + inv.xy * (d0[0] * dir[1] + d0[1] * dir[0]) + inv.yy * d0[1] * dir[1];
        let qc = inv.quad(d0);
        let u_min = if qa > 0.0 { (-qb / qa).clamp(0.0, len) } else { 0.0 };
        let m_min = (qa * u_min * u_min + 2.0 * qb * u_min + qc).max(0.0);
        let peak = comp.prior / (2.0 * std::f64::consts::PI * comp.cov.det().sqrt());
        if peak * len * (-0.5 * m_min).exp() < 1e-18 {
            continue;
        }
        total += peak * integrate(gl8(), 0.0, len, panels, |u| (-0.5 * (qa * u * u + 2.0 * qb * u + qc)).exp());
    }
    total
}

/// Convex hull, in the world frame, of the `sigma_band` lateral envelope of
/// the linear model over the prediction window, sampled once per stage.
pub fn future_position_region(pose: &HumanPose, sm: &SmParams, params: &DangerParams) -> ConvexRegion {
    let stages = (params.horizon / sm.dt).round().max(1.0) as u64;
    let step = sm.stage_length();
    let mut local = Vec::with_capacity(2 * stages as usize + 2);
    for k in 0..=stages {
        let half = (params.sigma_band * sm.lateral_variance(k).sqrt()).max(MIN_REGION_HALF_WIDTH);
        let ln = step * k as f64;
        local.push(Configuration::new(ln, half));
        local.push(Configuration::new(ln, -half));
    }
    let hull = ConvexRegion::hull(&local).expect("envelope spans a positive area");
    let world = hull
        .vertices()
        .iter()
        .map(|v| from_human_frame(v.x, v.y, pose))
        .collect();
    ConvexRegion::new(world).expect("rigid motion keeps the hull convex")
}

/// Which prediction drives the edge cost.
#[derive(Debug, Clone)]
pub enum Predictor {
    /// Pure path length.
    LengthOnly,
    /// Summed DI of the linear stochastic model.
    Sm,
    /// Summed DI of Gaussian mixture regression.
    Gmr(Arc<GmmModel>),
    /// Line integral of the joint mixture density.
    Gmm(Arc<GmmModel>),
}

impl Predictor {
    pub fn name(&self) -> &'static str {
        match self {
            Predictor::LengthOnly => "length",
            Predictor::Sm => "sm",
            Predictor::Gmr(_) => "gmr",
            Predictor::Gmm(_) => "gmm",
        }
    }
}

/// An observed pedestrian with its precomputed future-position region.
#[derive(Debug, Clone)]
pub struct HumanContext {
    pub pose: HumanPose,
    pub observed_at: f64,
    pub region: ConvexRegion,
}

/// Predictor plus parameters; evaluates edge costs against observed humans.
#[derive(Debug, Clone)]
pub struct DangerModel {
    pub predictor: Predictor,
    pub sm: SmParams,
    pub params: DangerParams,
}

impl DangerModel {
    pub fn new(predictor: Predictor, sm: SmParams, params: DangerParams) -> Result<Self, DangerError> {
        params.validate()?;
        sm.validate().map_err(|e| DangerError::InvalidParams(e.to_string()))?;
        Ok(Self { predictor, sm, params })
    }

    pub fn length_only() -> Self {
        Self {
            predictor: Predictor::LengthOnly,
            sm: SmParams::default(),
            params: DangerParams::default(),
        }
    }

    pub fn is_length_only(&self) -> bool {
        matches!(self.predictor, Predictor::LengthOnly)
    }

    pub fn context(&self, pose: HumanPose, observed_at: f64) -> HumanContext {
        HumanContext {
            pose,
            observed_at,
            region: future_position_region(&pose, &self.sm, &self.params),
        }
    }

    pub fn contexts(&self, poses: &[HumanPose], observed_at: f64) -> Vec<HumanContext> {
        poses.iter().map(|p| self.context(*p, observed_at)).collect()
    }

    /// PDI of one human for a segment, zero when the segment misses its region.
    pub fn human_pdi(&self, seg: &PathSegment, human: &HumanContext) -> f64 {
        if self.is_length_only() {
            return 0.0;
        }
        if self.params.time_gating && seg.start.t > human.observed_at + self.params.horizon {
            return 0.0;
        }
        if !segment_intersects_region(seg, &human.region) {
            return 0.0;
        }
        match &self.predictor {
            Predictor::LengthOnly => 0.0,
            Predictor::Sm => pdi_sum(seg, &human.pose, PointModel::Sm(&self.sm), &self.params),
            Predictor::Gmr(m) => pdi_sum(seg, &human.pose, PointModel::Gmr(m), &self.params),
            Predictor::Gmm(m) => pdi_line_integral_gmm(seg, &human.pose, m, &self.params),
        }
    }

    /// `length * (1 + max_h PDI_h)`.
    pub fn edge_cost(&self, seg: &PathSegment, humans: &[HumanContext]) -> EdgeCost {
        let pdi = humans
            .iter()
            .map(|h| self.human_pdi(seg, h))
            .fold(0.0, f64::max);
        EdgeCost::new(seg.length(), pdi)
    }
}

/// Edge cost against poses observed at the segment's start time.
pub fn edge_cost(seg: &PathSegment, humans: &[HumanPose], model: &DangerModel) -> EdgeCost {
    let ctx = model.contexts(humans, seg.start.t);
    model.edge_cost(seg, &ctx)
}
