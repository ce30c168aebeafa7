//! Scalar normal-distribution helpers and a small symmetric 2x2 matrix type.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use serde::{Deserialize, Serialize};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub fn normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    if var <= 0.0 {
        return if x == mean { f64::INFINITY } else { 0.0 };
    }
    let z = x - mean;
    (-0.5 * z * z / var).exp() / (2.0 * PI * var).sqrt()
}

pub fn log_normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let z = x - mean;
    -0.5 * (LN_2PI + var.ln() + z * z / var)
}

pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// P(a < X < b) for X ~ N(mean, sd^2), evaluated on whichever tail keeps
/// the subtraction free of cancellation. `sd == 0` gives the point-mass limit.
pub fn normal_interval_prob(a: f64, b: f64, mean: f64, sd: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    if sd <= 0.0 {
        return if a <= mean && mean <= b { 1.0 } else { 0.0 };
    }
    let za = (a - mean) / sd;
    let zb = (b - mean) / sd;
    let p = if za >= 0.0 {
        0.5 * (libm::erfc(za * FRAC_1_SQRT_2) - libm::erfc(zb * FRAC_1_SQRT_2))
    } else if zb <= 0.0 {
        0.5 * (libm::erfc(-zb * FRAC_1_SQRT_2) - libm::erfc(-za * FRAC_1_SQRT_2))
    } else {
        0.5 * (libm::erf(zb * FRAC_1_SQRT_2) - libm::erf(za * FRAC_1_SQRT_2))
    };
    p.clamp(0.0, 1.0)
}

/// log(sum(exp(v))) without overflow; `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Symmetric 2x2 matrix `[[xx, xy], [xy, yy]]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[[f64; 2]; 2]", into = "[[f64; 2]; 2]")]
pub struct Sym2 {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl Sym2 {
    pub const ZERO: Sym2 = Sym2 {
        xx: 0.0,
        xy: 0.0,
        yy: 0.0,
    };

    pub const fn new(xx: f64, xy: f64, yy: f64) -> Self {
        Self { xx, xy, yy }
    }

    pub fn identity() -> Self {
        Self::new(1.0, 0.0, 1.0)
    }

    pub fn det(&self) -> f64 {
        self.xx * self.yy - self.xy * self.xy
    }

    pub fn trace(&self) -> f64 {
        self.xx + self.yy
    }

    /// Eigenvalues in ascending order with the unit eigenvector of the larger one.
    pub fn eigen(&self) -> (f64, f64, [f64; 2]) {
        let half_tr = 0.5 * self.trace();
        let disc = (0.25 * (self.xx - self.yy).powi(2) + self.xy * self.xy).sqrt();
        let hi = half_tr + disc;
        let lo = half_tr - disc;
        let v = if self.xy.abs() > 1e-300 {
            let (x, y) = (hi - self.yy, self.xy);
            let n = x.hypot(y);
            [x / n, y / n]
        } else if self.xx >= self.yy {
            [1.0, 0.0]
        } else {
            [0.0, 1.0]
        };
        (lo, hi, v)
    }

    /// Same eigenvectors with every eigenvalue raised to at least `floor`.
    /// Returns the matrix and whether any eigenvalue was raised.
    pub fn with_eigen_floor(&self, floor: f64) -> (Sym2, bool) {
        let (lo, hi, v) = self.eigen();
        if lo >= floor {
            return (*self, false);
        }
        let lo = lo.max(floor);
        let hi = hi.max(floor);
        // hi * v v^T + lo * w w^T with w orthogonal to v
        let (c, s) = (v[0], v[1]);
        let m = Sym2::new(
            hi * c * c + lo * s * s,
            (hi - lo) * c * s,
            hi * s * s + lo * c * c,
        );
        (m, true)
    }

    pub fn inverse(&self) -> Option<Sym2> {
        let d = self.det();
        if d <= 0.0 || !d.is_finite() {
            return None;
        }
        Some(Sym2::new(self.yy / d, -self.xy / d, self.xx / d))
    }

    /// `v^T M v`.
    pub fn quad(&self, v: [f64; 2]) -> f64 {
        self.xx * v[0] * v[0] + 2.0 * self.xy * v[0] * v[1] + self.yy * v[1] * v[1]
    }

    pub fn is_finite(&self) -> bool {
        self.xx.is_finite() && self.xy.is_finite() && self.yy.is_finite()
    }
}

impl From<[[f64; 2]; 2]> for Sym2 {
    fn from(m: [[f64; 2]; 2]) -> Self {
        Sym2::new(m[0][0], 0.5 * (m[0][1] + m[1][0]), m[1][1])
    }
}

impl From<Sym2> for [[f64; 2]; 2] {
    fn from(m: Sym2) -> Self {
        [[m.xx, m.xy], [m.xy, m.yy]]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interval_probability_matches_table() {
        // 2*Phi(0.1) - 1
        let p = normal_interval_prob(-0.1, 0.1, 0.0, 1.0);
        assert!((p - 0.079_655_674_554_057_96).abs() < 1e-15);
        assert!(normal_interval_prob(9.9, 10.1, 0.0, 1.0) < 1e-20);
        assert!(normal_interval_prob(9.9, 10.1, 0.0, 1.0) > 0.0);
        assert_eq!(normal_interval_prob(-1.0, 1.0, 0.0, 0.0), 1.0);
        assert_eq!(normal_interval_prob(0.5, 1.0, 0.0, 0.0), 0.0);
    }

    #[test]
    fn cdf_symmetry() {
        for x in [-3.0, -0.5, 0.0, 1.7] {
            assert!((std_normal_cdf(x) + std_normal_cdf(-x) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn eigen_floor_keeps_large_directions() {
        let m = Sym2::new(4.0, 2.0, 1.0); // rank one
        let (lo, hi, _) = m.eigen();
        assert!(lo.abs() < 1e-12 && (hi - 5.0).abs() < 1e-12);
        let (f, raised) = m.with_eigen_floor(1e-6);
        assert!(raised);
        let (lo2, hi2, _) = f.eigen();
        assert!((lo2 - 1e-6).abs() < 1e-12 && (hi2 - 5.0).abs() < 1e-12);
        let (same, raised) = Sym2::identity().with_eigen_floor(1e-6);
        assert!(!raised);
        assert_eq!(same, Sym2::identity());
    }

    #[test]
    fn lse_handles_extremes() {
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        assert!((log_sum_exp(&[-1000.0, -1000.0]) - (-1000.0 + 2f64.ln())).abs() < 1e-12);
    }
}
