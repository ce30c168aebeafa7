//! Gaussian mixtures over human-frame positions `(p_ln, p_lt)` and Gaussian
//! mixture regression of the lateral coordinate on the longitudinal one.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::MotionError;
use crate::stats::{log_normal_pdf, normal_interval_prob, normal_pdf, Sym2};

const PRIOR_SUM_TOL: f64 = 1e-9;

/// Motion trend of a demonstration path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TrendClass {
    #[serde(rename = "S")]
    Straight,
    #[serde(rename = "R")]
    Right,
    #[serde(rename = "L")]
    Left,
}

impl TrendClass {
    pub const ALL: [TrendClass; 3] = [TrendClass::Straight, TrendClass::Right, TrendClass::Left];

    pub fn label(self) -> &'static str {
        match self {
            TrendClass::Straight => "S",
            TrendClass::Right => "R",
            TrendClass::Left => "L",
        }
    }
}

impl fmt::Display for TrendClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for TrendClass {
    type Err = MotionError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "S" => Ok(TrendClass::Straight),
            "R" => Ok(TrendClass::Right),
            "L" => Ok(TrendClass::Left),
            other => Err(MotionError::InvalidModel(format!("unknown class label {other:?}"))),
        }
    }
}

/// One bivariate normal component: prior, mean `(mu_ln, mu_lt)` and covariance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianComponent {
    #[serde(rename = "class_label", default, skip_serializing_if = "Option::is_none")]
    pub class: Option<TrendClass>,
    pub prior: f64,
    pub mean: [f64; 2],
    pub cov: Sym2,
}

impl GaussianComponent {
    pub fn new(prior: f64, mean: [f64; 2], cov: Sym2) -> Self {
        Self {
            class: None,
            prior,
            mean,
            cov,
        }
    }

    pub fn with_class(mut self, class: TrendClass) -> Self {
        self.class = Some(class);
        self
    }

    /// Bivariate normal density at `(p_ln, p_lt)`, prior not applied.
    pub fn density(&self, p_ln: f64, p_lt: f64) -> f64 {
        let det = self.cov.det();
        if det <= 0.0 {
            return 0.0;
        }
        let inv = Sym2::new(self.cov.yy / det, -self.cov.xy / det, self.cov.xx / det);
        let d = [p_ln - self.mean[0], p_lt - self.mean[1]];
        (-0.5 * inv.quad(d)).exp() / (2.0 * PI * det.sqrt())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<GaussianComponent>", into = "Vec<GaussianComponent>")]
pub struct GmmModel {
    components: Vec<GaussianComponent>,
    terms: Vec<GmrTerm>,
    group_weight: [f64; GROUPS],
    group_count: [usize; GROUPS],
}

/// Class groups: unlabelled plus one per trend.
const GROUPS: usize = 4;

/// Constants of one component's longitudinal conditioning.
#[derive(Debug, Clone, PartialEq)]
struct GmrTerm {
    group: usize,
    /// `ln prior - ln sqrt(2 pi var_ln)`, or `-inf` for a zero prior.
    log_scale: f64,
    mu_ln: f64,
    half_precision_ln: f64,
    mu_lt: f64,
    gain: f64,
    var: f64,
    sd: f64,
}

impl GmrTerm {
    fn new(c: &GaussianComponent) -> Self {
        let s_ln = c.cov.xx;
        let var = (c.cov.yy - c.cov.xy * c.cov.xy / s_ln).max(0.0);
        Self {
            group: c.class.map_or(0, |cl| 1 + cl as usize),
            log_scale: if c.prior > 0.0 {
                c.prior.ln() + log_normal_pdf(c.mean[0], c.mean[0], s_ln)
            } else {
                f64::NEG_INFINITY
            },
            mu_ln: c.mean[0],
            half_precision_ln: 0.5 / s_ln,
            mu_lt: c.mean[1],
            gain: c.cov.xy / s_ln,
            var,
            sd: var.sqrt(),
        }
    }

    fn log_weight(&self, p_ln: f64) -> f64 {
        let z = p_ln - self.mu_ln;
        self.log_scale - self.half_precision_ln * z * z
    }

    fn mean(&self, p_ln: f64) -> f64 {
        self.mu_lt + self.gain * (p_ln - self.mu_ln)
    }
}

impl GmmModel {
    /// Validates priors (each in [0,1], summing to one) and covariances
    /// (finite, symmetric positive definite).
    pub fn new(components: Vec<GaussianComponent>) -> Result<Self, MotionError> {
        if components.is_empty() {
            return Err(MotionError::InvalidModel("mixture has no components".into()));
        }
        let mut sum = 0.0;
        for (i, c) in components.iter().enumerate() {
            if !(0.0..=1.0).contains(&c.prior) {
                return Err(MotionError::InvalidModel(format!("component {i} prior {} outside [0,1]", c.prior)));
            }
            if !c.cov.is_finite() || !(c.cov.xx > 0.0 && c.cov.yy > 0.0 && c.cov.det() > 0.0) {
                return Err(MotionError::InvalidModel(format!("component {i} covariance is not positive definite")));
            }
            if !(c.mean[0].is_finite() && c.mean[1].is_finite()) {
                return Err(MotionError::InvalidModel(format!("component {i} mean is not finite")));
            }
            sum += c.prior;
        }
        if (sum - 1.0).abs() > PRIOR_SUM_TOL {
            return Err(MotionError::InvalidModel(format!("priors sum to {sum}, expected 1")));
        }
        let terms: Vec<GmrTerm> = components.iter().map(GmrTerm::new).collect();
        let mut group_weight = [0.0; GROUPS];
        let mut group_count = [0; GROUPS];
        for (c, t) in components.iter().zip(&terms) {
            group_weight[t.group] += c.prior;
            group_count[t.group] += 1;
        }
        Ok(Self {
            components,
            terms,
            group_weight,
            group_count,
        })
    }

    /// Per-group maxima of the log responsibilities at `p_ln`.
    fn group_tops(&self, p_ln: f64) -> [f64; GROUPS] {
        let mut top = [f64::NEG_INFINITY; GROUPS];
        for t in &self.terms {
            top[t.group] = top[t.group].max(t.log_weight(p_ln));
        }
        top
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    /// Count of components per class label; unlabelled components are skipped.
    pub fn class_sizes(&self) -> BTreeMap<TrendClass, usize> {
        let mut out = BTreeMap::new();
        for c in &self.components {
            if let Some(cl) = c.class {
                *out.entry(cl).or_insert(0) += 1;
            }
        }
        out
    }
}

impl TryFrom<Vec<GaussianComponent>> for GmmModel {
    type Error = MotionError;
    fn try_from(v: Vec<GaussianComponent>) -> Result<Self, Self::Error> {
        GmmModel::new(v)
    }
}

impl From<GmmModel> for Vec<GaussianComponent> {
    fn from(m: GmmModel) -> Self {
        m.components
    }
}

/// Mixture density `sum_k gamma_k N(xi; mu_k, Sigma_k)`.
pub fn gmm_pdf(model: &GmmModel, p_ln: f64, p_lt: f64) -> f64 {
    model
        .components
        .iter()
        .map(|c| c.prior * c.density(p_ln, p_lt))
        .sum()
}

/// Mixing coefficients below this are dropped when evaluating a conditional.
pub const NEGLIGIBLE_BETA: f64 = 1e-14;

/// Lateral distribution conditioned on a longitudinal query: one normal per
/// component, weighted by its mixing coefficient.
#[derive(Debug, Clone, PartialEq)]
pub struct GmrConditional {
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
    pub betas: Vec<f64>,
}

impl GmrConditional {
    /// `sum_k beta_k * mean_k`.
    pub fn mean(&self) -> f64 {
        self.betas.iter().zip(&self.means).map(|(b, m)| b * m).sum()
    }

    /// `sum_k beta_k^2 * var_k`, the aggregate spread used for plotting the
    /// regression band.
    pub fn variance(&self) -> f64 {
        self.betas
            .iter()
            .zip(&self.variances)
            .map(|(b, v)| b * b * v)
            .sum()
    }

    pub fn pdf(&self, p_lt: f64) -> f64 {
        self.betas
            .iter()
            .zip(self.means.iter().zip(&self.variances))
            .filter(|(b, _)| **b > NEGLIGIBLE_BETA)
            .map(|(b, (m, v))| b * normal_pdf(p_lt, *m, *v))
            .sum()
    }

    /// Mixture probability of `lo < p_lt < hi`.
    pub fn interval_prob(&self, lo: f64, hi: f64) -> f64 {
        let p: f64 = self
            .betas
            .iter()
            .zip(self.means.iter().zip(&self.variances))
            .filter(|(b, _)| **b > NEGLIGIBLE_BETA)
            .map(|(b, (m, v))| b * normal_interval_prob(lo, hi, *m, v.sqrt()))
            .sum();
        p.clamp(0.0, 1.0)
    }
}

/// Gaussian mixture regression at `p_ln`.
///
/// Components are grouped by class label. Within a group, mixing
/// coefficients are the normalized responsibilities of the longitudinal
/// marginals; each group is then weighted by its summed prior. For a model
/// without labels this is plain GMR. Responsibilities are formed in log
/// space, so far from the data the best-matching component takes all weight.
pub fn gmr_condition(model: &GmmModel, p_ln: f64) -> GmrConditional {
    let n = model.terms.len();
    let top = model.group_tops(p_ln);
    let mut scale = [0.0; GROUPS];
    for t in &model.terms {
        if top[t.group] > f64::NEG_INFINITY {
            scale[t.group] += (t.log_weight(p_ln) - top[t.group]).exp();
        }
    }
    let mut betas: Vec<f64> = model
        .terms
        .iter()
        .map(|t| {
            let g = t.group;
            if top[g] == f64::NEG_INFINITY {
                model.group_weight[g] / model.group_count[g] as f64
            } else {
                model.group_weight[g] * (t.log_weight(p_ln) - top[g]).exp() / scale[g]
            }
        })
        .collect();
    // the group weights already sum to one; renormalize away rounding
    let total: f64 = betas.iter().sum();
    if total > 0.0 {
        for b in &mut betas {
            *b /= total;
        }
    } else {
        betas.fill(1.0 / n as f64);
    }

    GmrConditional {
        means: model.terms.iter().map(|t| t.mean(p_ln)).collect(),
        variances: model.terms.iter().map(|t| t.var).collect(),
        betas,
    }
}

/// `P(lo < p_lt < hi | p_ln)`, equal to
/// `gmr_condition(model, p_ln).interval_prob(lo, hi)` without allocating.
pub fn gmr_interval_prob(model: &GmmModel, p_ln: f64, lo: f64, hi: f64) -> f64 {
    let top = model.group_tops(p_ln);
    let mut scale = [0.0; GROUPS];
    let mut mass = [0.0; GROUPS];
    for t in &model.terms {
        let g = t.group;
        let e = if top[g] == f64::NEG_INFINITY {
            1.0
        } else {
            (t.log_weight(p_ln) - top[g]).exp()
        };
        scale[g] += e;
        // the top term contributes 1 to the scale, so this bounds beta
        if model.group_weight[g] * e > NEGLIGIBLE_BETA {
            mass[g] += e * normal_interval_prob(lo, hi, t.mean(p_ln), t.sd);
        }
    }
    let mut p = 0.0;
    let mut total = 0.0;
    for g in 0..GROUPS {
        if model.group_count[g] == 0 {
            continue;
        }
        total += model.group_weight[g];
        if scale[g] > 0.0 {
            p += model.group_weight[g] * mass[g] / scale[g];
        }
    }
    if total > 0.0 {
        p /= total;
    }
    p.clamp(0.0, 1.0)
}

/// Conditional lateral density `f(p_lt | p_ln)`.
pub fn gmr_pdf(model: &GmmModel, p_lt: f64, p_ln: f64) -> f64 {
    gmr_condition(model, p_ln).pdf(p_lt)
}

/// Pools per-class mixtures into one, scaling each component prior by the
/// share of training paths in its class.
pub fn combine_class_models(
    models: &BTreeMap<TrendClass, GmmModel>,
    counts: &BTreeMap<TrendClass, usize>,
) -> Result<GmmModel, MotionError> {
    if models.is_empty() {
        return Err(MotionError::InvalidModel("no class models to combine".into()));
    }
    let mut total = 0usize;
    for class in models.keys() {
        match counts.get(class) {
            Some(&n) if n >= 1 => total += n,
            _ => {
                return Err(MotionError::InvalidModel(format!(
                    "class {class} has a model but no path count"
                )))
            }
        }
    }
    let mut pooled = Vec::new();
    for (class, model) in models {
        let share = counts[class] as f64 / total as f64;
        pooled.extend(model.components.iter().map(|c| GaussianComponent {
            class: Some(*class),
            prior: c.prior * share,
            ..*c
        }));
    }
    GmmModel::new(pooled)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(mean: [f64; 2], cov: Sym2) -> GmmModel {
        GmmModel::new(vec![GaussianComponent::new(1.0, mean, cov)]).unwrap()
    }

    #[test]
    fn pdf_at_mean_of_standard_bivariate() {
        let m = single([0.0, 0.0], Sym2::identity());
        assert!((gmm_pdf(&m, 0.0, 0.0) - 1.0 / (2.0 * PI)).abs() < 1e-15);
    }

    #[test]
    fn rejects_invalid_models() {
        assert!(GmmModel::new(vec![]).is_err());
        let c = GaussianComponent::new(0.6, [0.0, 0.0], Sym2::identity());
        assert!(GmmModel::new(vec![c]).is_err());
        let bad = GaussianComponent::new(1.0, [0.0, 0.0], Sym2::new(1.0, 1.0, 1.0));
        assert!(GmmModel::new(vec![bad]).is_err());
    }

    #[test]
    fn gmr_single_component_example() {
        let m = single([0.0, 0.0], Sym2::new(1.0, 0.5, 1.0));
        let c = gmr_condition(&m, 1.0);
        assert!((c.means[0] - 0.5).abs() < 1e-15);
        assert!((c.variances[0] - 0.75).abs() < 1e-15);
        assert_eq!(c.betas, vec![1.0]);
        assert!((c.mean() - 0.5).abs() < 1e-15);
        assert!((c.variance() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn mirror_components_share_weight_on_axis() {
        let cov = Sym2::new(1.0, 0.2, 0.5);
        let m = GmmModel::new(vec![
            GaussianComponent::new(0.5, [-2.0, 1.0], cov),
            GaussianComponent::new(0.5, [2.0, -1.0], Sym2::new(1.0, -0.2, 0.5)),
        ])
        .unwrap();
        let c = gmr_condition(&m, 0.0);
        assert!((c.betas[0] - 0.5).abs() < 1e-15 && (c.betas[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn far_query_picks_nearest_component() {
        let m = GmmModel::new(vec![
            GaussianComponent::new(0.5, [0.0, 0.0], Sym2::new(0.1, 0.0, 0.1)),
            GaussianComponent::new(0.5, [5.0, 1.0], Sym2::new(0.1, 0.0, 0.1)),
        ])
        .unwrap();
        let c = gmr_condition(&m, 100.0);
        assert_eq!(c.betas, vec![0.0, 1.0]);
        let c = gmr_condition(&m, -100.0);
        assert_eq!(c.betas, vec![1.0, 0.0]);
        assert!((c.pdf(0.0) - normal_pdf(0.0, 0.0, 0.1)).abs() < 1e-12);
    }

    #[test]
    fn combine_scales_priors_by_counts() {
        let k = |class| {
            GmmModel::new(vec![
                GaussianComponent::new(0.5, [0.0, 0.0], Sym2::identity()),
                GaussianComponent::new(0.5, [1.0, 0.0], Sym2::identity()),
            ])
            .map(|m| (class, m))
            .unwrap()
        };
        let models: BTreeMap<_, _> = TrendClass::ALL.into_iter().map(k).collect();
        let equal: BTreeMap<_, _> = TrendClass::ALL.into_iter().map(|c| (c, 7)).collect();
        let pooled = combine_class_models(&models, &equal).unwrap();
        assert_eq!(pooled.len(), 6);
        for c in pooled.components() {
            assert!((c.prior - 1.0 / 6.0).abs() < 1e-15);
        }

        let skew: BTreeMap<_, _> = [(TrendClass::Straight, 2), (TrendClass::Right, 1), (TrendClass::Left, 1)]
            .into_iter()
            .collect();
        let pooled = combine_class_models(&models, &skew).unwrap();
        for c in pooled.components() {
            let expected = if c.class == Some(TrendClass::Straight) { 0.25 } else { 0.125 };
            assert!((c.prior - expected).abs() < 1e-15);
        }

        let missing: BTreeMap<_, _> = [(TrendClass::Straight, 2)].into_iter().collect();
        assert!(combine_class_models(&models, &missing).is_err());
    }

    #[test]
    fn pooled_gmr_is_count_weighted_class_gmr() {
        let s = GmmModel::new(vec![
            GaussianComponent::new(0.3, [1.0, 0.0], Sym2::new(0.5, 0.0, 0.1)),
            GaussianComponent::new(0.7, [4.0, 0.1], Sym2::new(1.0, 0.05, 0.2)),
        ])
        .unwrap();
        let l = GmmModel::new(vec![
            GaussianComponent::new(0.4, [1.0, 0.3], Sym2::new(0.5, 0.1, 0.1)),
            GaussianComponent::new(0.6, [3.0, 2.0], Sym2::new(1.0, 0.4, 0.5)),
        ])
        .unwrap();
        let models: BTreeMap<_, _> = [(TrendClass::Straight, s.clone()), (TrendClass::Left, l.clone())].into();
        let counts: BTreeMap<_, _> = [(TrendClass::Straight, 3), (TrendClass::Left, 1)].into();
        let pooled = combine_class_models(&models, &counts).unwrap();
        for &(ln, lt) in &[(0.5, 0.0), (2.0, 0.4), (3.5, 1.2), (8.0, -0.3)] {
            let expected = 0.75 * gmr_pdf(&s, lt, ln) + 0.25 * gmr_pdf(&l, lt, ln);
            assert!((gmr_pdf(&pooled, lt, ln) - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn model_serializes_with_class_labels() {
        let m = GmmModel::new(vec![
            GaussianComponent::new(1.0, [0.5, -0.25], Sym2::new(1.0, 0.1, 2.0)).with_class(TrendClass::Left),
        ])
        .unwrap();
        let text = serde_json::to_string(&m).unwrap();
        assert!(text.contains("\"class_label\":\"L\""));
        let back: GmmModel = serde_json::from_str(&text).unwrap();
        assert_eq!(back, m);
    }
}
