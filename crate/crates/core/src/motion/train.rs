//! k-means initialization and expectation-maximization for 2-D mixtures.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gmm::{GaussianComponent, GmmModel};
use super::MotionError;
use crate::stats::{log_sum_exp, Sym2};

pub type Point = [f64; 2];

const KMEANS_MAX_ITERS: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct Clusters {
    pub centroids: Vec<Point>,
    pub assignments: Vec<usize>,
    pub iterations: usize,
}

impl Clusters {
    /// Sum of squared distances from each point to its centroid.
    pub fn inertia(&self, data: &[Point]) -> f64 {
        data.iter()
            .zip(&self.assignments)
            .map(|(p, &a)| dist2(p, &self.centroids[a]))
            .sum()
    }
}

fn dist2(a: &Point, b: &Point) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

fn nearest(p: &Point, centroids: &[Point]) -> (usize, f64) {
    centroids
        .iter()
        .enumerate()
        .map(|(i, c)| (i, dist2(p, c)))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}

/// Lloyd's algorithm with k-means++ seeding, run to an assignment fixed point.
///
/// A cluster that loses all its points is re-seeded at the point farthest
/// from its nearest centroid, so exactly `k` clusters are always returned.
pub fn kmeans(data: &[Point], k: usize, seed: u64) -> Result<Clusters, MotionError> {
    if k == 0 {
        return Err(MotionError::InvalidParams("k must be at least 1".into()));
    }
    if data.len() < k {
        return Err(MotionError::NotEnoughData { needed: k, got: data.len() });
    }
    if data.iter().any(|p| !(p[0].is_finite() && p[1].is_finite())) {
        return Err(MotionError::InvalidParams("non-finite training point".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut centroids = Vec::with_capacity(k);
    let mut chosen = vec![false; data.len()];
    let first = rng.random_range(0..data.len());
    centroids.push(data[first]);
    chosen[first] = true;
    let mut d2: Vec<f64> = data.iter().map(|p| dist2(p, &data[first])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 && target < w {
                    pick = Some(i);
                    break;
                }
                target -= w;
            }
            pick.unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).unwrap())
        } else {
            // all remaining points coincide with centroids
            let free: Vec<usize> = (0..data.len()).filter(|&i| !chosen[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen[idx] = true;
        centroids.push(data[idx]);
        for (w, p) in d2.iter_mut().zip(data) {
            *w = w.min(dist2(p, &data[idx]));
        }
    }

    let mut assignments = vec![usize::MAX; data.len()];
    let mut iterations = 0;
    loop {
        iterations += 1;
        let mut changed = false;
        for (a, p) in assignments.iter_mut().zip(data) {
            let (best, _) = nearest(p, &centroids);
            if *a != best {
                *a = best;
                changed = true;
            }
        }

        let mut sums = vec![[0.0f64; 2]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in data.iter().zip(&assignments) {
            sums[a][0] += p[0];
            sums[a][1] += p[1];
            counts[a] += 1;
        }
        for j in 0..k {
            if counts[j] > 0 {
                centroids[j] = [sums[j][0] / counts[j] as f64, sums[j][1] / counts[j] as f64];
            }
        }
        for j in 0..k {
            if counts[j] == 0 {
                let (far, _) = data
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| counts[assignments[*i]] > 1)
                    .map(|(i, p)| (i, nearest(p, &centroids).1))
                    .fold((usize::MAX, -1.0), |b, c| if c.1 > b.1 { c } else { b });
                if far != usize::MAX {
                    counts[assignments[far]] -= 1;
                    centroids[j] = data[far];
                    assignments[far] = j;
                    counts[j] = 1;
                    changed = true;
                }
            }
        }

        if !changed || iterations >= KMEANS_MAX_ITERS {
            break;
        }
    }

    Ok(Clusters {
        centroids,
        assignments,
        iterations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmOptions {
    /// Stop once the mean per-point log-likelihood gains less than this.
    pub tol: f64,
    pub max_iters: usize,
    /// Minimum covariance eigenvalue, m^2.
    pub cov_floor: f64,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iters: 500,
            cov_floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EmReport {
    pub model: GmmModel,
    /// Total data log-likelihood before the first and after every update.
    pub log_likelihoods: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Set when some covariance needed the eigenvalue floor.
    pub floor_triggered: bool,
}

struct Params {
    priors: Vec<f64>,
    means: Vec<Point>,
    covs: Vec<Sym2>,
}

fn component_log_density(p: &Point, mean: &Point, cov: &Sym2) -> f64 {
    let det = cov.det();
    let inv = Sym2::new(cov.yy / det, -cov.xy / det, cov.xx / det);
    let d = [p[0] - mean[0], p[1] - mean[1]];
    -(2.0 * std::f64::consts::PI).ln() - 0.5 * det.ln() - 0.5 * inv.quad(d)
}

/// E-step: fills `resp` with responsibilities, returns the log-likelihood.
fn expectation(data: &[Point], params: &Params, resp: &mut [Vec<f64>]) -> f64 {
    let k = params.priors.len();
    let mut ll = 0.0;
    let mut logs = vec![0.0; k];
    for (p, r) in data.iter().zip(resp.iter_mut()) {
        for j in 0..k {
            logs[j] = if params.priors[j] > 0.0 {
                params.priors[j].ln() + component_log_density(p, &params.means[j], &params.covs[j])
            } else {
                f64::NEG_INFINITY
            };
        }
        let lse = log_sum_exp(&logs);
        ll += lse;
        for j in 0..k {
            r[j] = (logs[j] - lse).exp();
        }
    }
    ll
}

/// M-step. Returns whether the covariance floor fired.
fn maximization(data: &[Point], resp: &[Vec<f64>], params: &mut Params, floor: f64) -> bool {
    let n = data.len() as f64;
    let k = params.priors.len();
    let mut triggered = false;
    for j in 0..k {
        let nk: f64 = resp.iter().map(|r| r[j]).sum();
        if nk <= 0.0 {
            params.priors[j] = 0.0;
            continue;
        }
        let mut m = [0.0; 2];
        for (p, r) in data.iter().zip(resp) {
            m[0] += r[j] * p[0];
            m[1] += r[j] * p[1];
        }
        m = [m[0] / nk, m[1] / nk];
        let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
        for (p, r) in data.iter().zip(resp) {
            let dx = p[0] - m[0];
            let dy = p[1] - m[1];
            sxx += r[j] * dx * dx;
            sxy += r[j] * dx * dy;
            syy += r[j] * dy * dy;
        }
        let (cov, fired) = Sym2::new(sxx / nk, sxy / nk, syy / nk).with_eigen_floor(floor);
        triggered |= fired;
        params.priors[j] = nk / n;
        params.means[j] = m;
        params.covs[j] = cov;
    }
    let total: f64 = params.priors.iter().sum();
    for p in &mut params.priors {
        *p /= total;
    }
    triggered
}

/// Fits a `K`-component mixture by EM, initialized from hard clusters.
pub fn em_fit(data: &[Point], init: &Clusters, opts: &EmOptions) -> Result<EmReport, MotionError> {
    let k = init.centroids.len();
    if k == 0 {
        return Err(MotionError::InvalidParams("no initial clusters".into()));
    }
    if data.len() < k {
        return Err(MotionError::NotEnoughData { needed: k, got: data.len() });
    }
    if init.assignments.len() != data.len() {
        return Err(MotionError::InvalidParams("cluster assignments do not match data".into()));
    }

    // hard-assignment initialization
    let mut resp: Vec<Vec<f64>> = init
        .assignments
        .iter()
        .map(|&a| {
            let mut r = vec![0.0; k];
            r[a] = 1.0;
            r
        })
        .collect();
    let mut params = Params {
        priors: vec![0.0; k],
        means: init.centroids.clone(),
        covs: vec![Sym2::identity(); k],
    };
    let mut floor_triggered = maximization(data, &resp, &mut params, opts.cov_floor);

    let n = data.len() as f64;
    let mut lls = vec![expectation(data, &params, &mut resp)];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iters {
        iterations += 1;
        floor_triggered |= maximization(data, &resp, &mut params, opts.cov_floor);
        let ll = expectation(data, &params, &mut resp);
        let gain = (ll - lls[lls.len() - 1]) / n;
        lls.push(ll);
        if gain.abs() < opts.tol {
            converged = true;
            break;
        }
    }

    let components = (0..k)
        .map(|j| GaussianComponent::new(params.priors[j], params.means[j], params.covs[j]))
        .collect();
    Ok(EmReport {
        model: GmmModel::new(components)?,
        log_likelihoods: lls,
        iterations,
        converged,
        floor_triggered,
    })
}

/// Mean log-likelihood of `data` under a fitted model.
pub fn mean_log_likelihood(model: &GmmModel, data: &[Point]) -> f64 {
    let mut total = 0.0;
    let mut logs = Vec::with_capacity(model.len());
    for p in data {
        logs.clear();
        for c in model.components() {
            logs.push(c.prior.ln() + component_log_density(p, &c.mean, &c.cov));
        }
        total += log_sum_exp(&logs);
    }
    total / data.len() as f64
}

/// k-means followed by EM with the given options.
pub fn fit_mixture(data: &[Point], k: usize, seed: u64, opts: &EmOptions) -> Result<EmReport, MotionError> {
    let clusters = kmeans(data, k, seed)?;
    em_fit(data, &clusters, opts)
}
