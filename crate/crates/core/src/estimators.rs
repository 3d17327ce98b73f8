//! Stochastic gradients of the smoothed loss `-E q(z + sigma * eps)`.
//!
//! The conditional coordinate sampling estimate integrates each coordinate's
//! own noise analytically: with every other coordinate fixed at its noisy
//! value the metric is a step function of `z_j`, so its smoothed derivative
//! is a sum of jumps weighted by the noise density at each breaking point.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::metric::{MetricKind, QueryMetric};
use crate::rng::seeded;
use crate::smoothing::{conditional_density, sample_noise, NoiseSample, SmoothingSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EstimatorKind {
    Ccs,
    CcsSfa,
    Reinforce,
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EstimatorKind::Ccs => "ccs",
            EstimatorKind::CcsSfa => "ccs-sfa",
            EstimatorKind::Reinforce => "reinforce",
        })
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "ccs" => Ok(EstimatorKind::Ccs),
            "ccs-sfa" | "ccs+sfa" | "sfa" => Ok(EstimatorKind::CcsSfa),
            "reinforce" => Ok(EstimatorKind::Reinforce),
            _ => Err(Error::Config(format!("unknown estimator `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub kind: EstimatorKind,
    /// Guard added to `||z||` by the scale-free projection.
    pub nu: f64,
    /// Noise draws averaged per estimate.
    pub samples: usize,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            kind: EstimatorKind::CcsSfa,
            nu: 1e-2,
            samples: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientEstimate {
    /// Estimate of the gradient of the smoothed loss.
    pub grad: Vec<f64>,
    pub kind: EstimatorKind,
    pub seed: u64,
}

pub fn center_scores(scores: &[f64]) -> Vec<f64> {
    if scores.is_empty() {
        return Vec::new();
    }
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    scores.iter().map(|z| z - mean).collect()
}

/// `sigma^-1 * 2 l * n * phi_max`: no single draw of the coordinate
/// estimate can exceed this in absolute value.
pub fn ccs_bound(metric: &QueryMetric, sigma: f64) -> f64 {
    let n = metric.len() as f64;
    2.0 * metric.spec().bound() * n * crate::smoothing::INV_SQRT_2PI / sigma
}

/// One draw of the conditional coordinate sampling estimate.
pub fn ccs_gradient<R: Rng + ?Sized>(
    scores: &[f64],
    metric: &QueryMetric,
    smoothing: &SmoothingSpec,
    rng: &mut R,
) -> Result<Vec<f64>> {
    check_len("scores", scores.len(), metric.len())?;
    let eps = sample_noise(smoothing, metric.labels(), rng);
    ccs_with_noise(scores, metric, smoothing, &eps)
}

/// The coordinate estimate for a given noise vector.
pub fn ccs_with_noise(
    scores: &[f64],
    metric: &QueryMetric,
    smoothing: &SmoothingSpec,
    eps: &NoiseSample,
) -> Result<Vec<f64>> {
    ccs_core(scores, metric, smoothing, eps, false)
}

/// Same estimate, but visiting every breaking point of every coordinate
/// instead of stopping where jumps must vanish. Quadratic in the list length;
/// kept as a reference for benchmarks.
pub fn ccs_with_noise_exhaustive(
    scores: &[f64],
    metric: &QueryMetric,
    smoothing: &SmoothingSpec,
    eps: &NoiseSample,
) -> Result<Vec<f64>> {
    ccs_core(scores, metric, smoothing, eps, true)
}

fn ccs_core(
    scores: &[f64],
    metric: &QueryMetric,
    smoothing: &SmoothingSpec,
    eps: &NoiseSample,
    exhaustive: bool,
) -> Result<Vec<f64>> {
    check_len("scores", scores.len(), metric.len())?;
    check_len("noise", eps.0.len(), metric.len())?;
    let n = scores.len();
    let mut grad = vec![0.0; n];
    if n == 1 || metric.is_constant() {
        return Ok(grad);
    }
    let sigma = smoothing.sigma;
    let noisy = eps.perturb(scores, sigma);
    if metric.spec().kind == MetricKind::DcgRr {
        return Ok(ccs_selection(scores, metric, smoothing, &noisy));
    }
    let labels = metric.labels();
    let state = metric.ranked_state(&noisy)?;
    let breaks = state.sorted_scores();
    for (i, &doc) in state.order().iter().enumerate() {
        let horizon = if exhaustive {
            n - 1
        } else {
            match state.jump_horizon(i) {
                Some(h) => h,
                None => continue,
            }
        };
        let z = scores[doc];
        let mut acc = 0.0;
        for (t, &b) in breaks.iter().enumerate().take(horizon + 1) {
            if t == i {
                continue;
            }
            let jump = state.jump_at(i, t);
            if jump != 0.0 {
                acc += jump * conditional_density(smoothing, labels[doc], (b - z) / sigma);
            }
        }
        grad[doc] = -acc / sigma;
    }
    Ok(grad)
}

/// Coordinate estimate for the selection metric, whose only breaking point
/// per document is zero.
fn ccs_selection(scores: &[f64], metric: &QueryMetric, smoothing: &SmoothingSpec, noisy: &[f64]) -> Vec<f64> {
    let n = scores.len();
    let labels = metric.labels();
    let included: Vec<bool> = noisy.iter().map(|&y| y > 0.0).collect();
    let mut before = vec![0usize; n];
    let mut count = 0;
    for i in 0..n {
        before[i] = count;
        count += included[i] as usize;
    }
    // Change of the later documents' terms when one more (or one fewer)
    // document precedes them.
    let mut lose_one = vec![0.0; n + 1];
    let mut gain_one = vec![0.0; n + 1];
    for i in (0..n).rev() {
        let (mut l, mut g) = (0.0, 0.0);
        if included[i] {
            let c = before[i] as f64;
            if before[i] > 0 {
                l = labels[i] * (1.0 / c - 1.0 / (1.0 + c));
            }
            g = labels[i] * (1.0 / (2.0 + c) - 1.0 / (1.0 + c));
        }
        lose_one[i] = lose_one[i + 1] + l;
        gain_one[i] = gain_one[i + 1] + g;
    }
    (0..n)
        .map(|j| {
            let own = labels[j] / (1.0 + before[j] as f64);
            let jump = if included[j] {
                own - lose_one[j + 1]
            } else {
                own + gain_one[j + 1]
            };
            let density = conditional_density(smoothing, labels[j], -scores[j] / smoothing.sigma);
            -jump * density / smoothing.sigma
        })
        .collect()
}

/// Remove the component of `grad` along `z / (||z|| + nu)`.
pub fn sfa_project(grad: &[f64], scores: &[f64], nu: f64) -> Result<Vec<f64>> {
    check_len("scores", scores.len(), grad.len())?;
    if nu.is_nan() || nu < 0.0 {
        return Err(Error::Config(format!(
            "scale-free guard must be non-negative, got {nu}"
        )));
    }
    let norm = scores.iter().map(|z| z * z).sum::<f64>().sqrt();
    let denom = norm + nu;
    if denom == 0.0 {
        return Err(Error::Config(
            "scale-free projection of a zero score vector needs a positive guard".into(),
        ));
    }
    let dot: f64 = grad.iter().zip(scores).map(|(g, z)| g * z).sum();
    let coef = dot / (denom * denom);
    Ok(grad.iter().zip(scores).map(|(g, z)| g - coef * z).collect())
}

/// Score-function estimate `sigma^-1 (L(z + sigma eps) - L(z)) u`, where `u`
/// is the standardized noise.
pub fn reinforce_gradient<R: Rng + ?Sized>(
    scores: &[f64],
    metric: &QueryMetric,
    smoothing: &SmoothingSpec,
    rng: &mut R,
) -> Result<Vec<f64>> {
    check_len("scores", scores.len(), metric.len())?;
    let eps = sample_noise(smoothing, metric.labels(), rng);
    let base = metric.quality(scores)?;
    let noisy = metric.quality(&eps.perturb(scores, smoothing.sigma))?;
    // loss = -quality
    let scale = -(noisy - base) / smoothing.sigma;
    Ok(eps
        .0
        .iter()
        .zip(metric.labels())
        .map(|(e, &r)| scale * (e - smoothing.mean(r)))
        .collect())
}

/// Average `config.samples` draws of the configured estimator using a
/// generator seeded with `seed`.
pub fn estimate_gradient(
    scores: &[f64],
    metric: &QueryMetric,
    smoothing: &SmoothingSpec,
    config: &EstimatorConfig,
    seed: u64,
) -> Result<GradientEstimate> {
    if config.samples == 0 {
        return Err(Error::Config("samples per estimate must be positive".into()));
    }
    let mut rng = seeded(seed);
    let mut grad = vec![0.0; scores.len()];
    for _ in 0..config.samples {
        let draw = match config.kind {
            EstimatorKind::Ccs | EstimatorKind::CcsSfa => ccs_gradient(scores, metric, smoothing, &mut rng)?,
            EstimatorKind::Reinforce => reinforce_gradient(scores, metric, smoothing, &mut rng)?,
        };
        for (acc, d) in grad.iter_mut().zip(draw) {
            *acc += d;
        }
    }
    if config.samples > 1 {
        let inv = 1.0 / config.samples as f64;
        grad.iter_mut().for_each(|g| *g *= inv);
    }
    if config.kind == EstimatorKind::CcsSfa {
        grad = sfa_project(&grad, scores, config.nu)?;
    }
    Ok(GradientEstimate {
        grad,
        kind: config.kind,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::{dcg_rr_eval, MetricSpec};
    use crate::rng::seeded;

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    fn norm(a: &[f64]) -> f64 {
        dot(a, a).sqrt()
    }

    #[test]
    fn centering() {
        assert_eq!(center_scores(&[1.0, 2.0, 3.0]), vec![-1.0, 0.0, 1.0]);
        let c = vec![-0.5, 0.25, 0.25];
        assert_eq!(center_scores(&c), c);
    }

    #[test]
    fn single_document_has_zero_gradient() {
        let m = QueryMetric::new(MetricSpec::ndcg(3), vec![2.0]).unwrap();
        let s = SmoothingSpec::centered(1.0).unwrap();
        assert_eq!(ccs_gradient(&[0.3], &m, &s, &mut seeded(0)).unwrap(), vec![0.0]);
    }

    #[test]
    fn sfa_orthogonal_and_contracting() {
        let g = [0.3, -1.2, 0.7, 0.1];
        let z = [1.0, -0.5, 0.25, -0.75];
        let p = sfa_project(&g, &z, 0.0).unwrap();
        assert!(dot(&p, &z).abs() <= 1e-10 * norm(&g) * norm(&z));
        assert!(norm(&p) <= norm(&g));
        let p = sfa_project(&g, &z, 1e-2).unwrap();
        assert!(norm(&p) <= norm(&g));
    }

    #[test]
    fn sfa_zero_scores() {
        let g = [0.3, -1.2];
        assert_eq!(sfa_project(&g, &[0.0, 0.0], 1e-2).unwrap(), g.to_vec());
        assert!(sfa_project(&g, &[0.0, 0.0], 0.0).is_err());
    }

    #[test]
    fn sfa_guard_limit() {
        let g = [0.3, -1.2, 0.5];
        let z = [2.0, -1.0, -1.0];
        let mut last = f64::INFINITY;
        for nu in [1e-2, 1.0, 1e6] {
            let p = sfa_project(&g, &z, nu).unwrap();
            let gap = p.iter().zip(&g).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(gap < last);
            last = gap;
        }
        assert!(last < 1e-10);
    }

    #[test]
    fn reinforce_is_zero_for_constant_metric() {
        let m = QueryMetric::new(MetricSpec::ndcg(3), vec![2.0, 2.0, 2.0]).unwrap();
        let s = SmoothingSpec::centered(1.0).unwrap();
        let g = reinforce_gradient(&[0.1, 0.2, 0.3], &m, &s, &mut seeded(1)).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shared_noise_reseeding() {
        let m = QueryMetric::new(MetricSpec::ndcg(3), vec![3.0, 1.0, 0.0, 2.0]).unwrap();
        let s = SmoothingSpec::shifted(1.0, 1.0).unwrap();
        let z = [0.1, -0.2, 0.3, -0.2];
        let cfg = EstimatorConfig::default();
        let a = estimate_gradient(&z, &m, &s, &cfg, 11).unwrap();
        let b = estimate_gradient(&z, &m, &s, &cfg, 11).unwrap();
        let c = estimate_gradient(&z, &m, &s, &cfg, 12).unwrap();
        assert_eq!(a, b);
        assert!(a.grad.iter().zip(&c.grad).all(|(x, y)| x != y));
    }

    #[test]
    fn selection_jumps_match_brute_force() {
        let labels = vec![0.5, 0.9, 0.2, 0.7, 0.4];
        let m = QueryMetric::new(MetricSpec::dcg_rr(), labels.clone()).unwrap();
        let s = SmoothingSpec::centered(0.8).unwrap();
        let z = [0.3, -0.1, 0.6, -0.4, 0.05];
        let mut rng = seeded(5);
        for _ in 0..50 {
            let eps = sample_noise(&s, &labels, &mut rng);
            let g = ccs_with_noise(&z, &m, &s, &eps).unwrap();
            let y = eps.perturb(&z, s.sigma);
            for j in 0..z.len() {
                let mut above = y.clone();
                above[j] = 1.0;
                let mut below = y.clone();
                below[j] = -1.0;
                let jump = dcg_rr_eval(&above, &labels).unwrap() - dcg_rr_eval(&below, &labels).unwrap();
                let want = -jump * conditional_density(&s, labels[j], -z[j] / s.sigma) / s.sigma;
                assert!((g[j] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pruned_sum_matches_full_sum() {
        // every breaking point, without the horizon cut
        let mut rng = seeded(9);
        for spec in [MetricSpec::ndcg(3), MetricSpec::err(2), MetricSpec::mrr()] {
            for _ in 0..30 {
                let n = rng.random_range(2..12);
                let labels: Vec<f64> = (0..n)
                    .map(|_| match spec.kind {
                        MetricKind::Ndcg => rng.random_range(0..5) as f64,
                        MetricKind::Mrr => rng.random_range(0..2) as f64,
                        _ => rng.random_range(0..5) as f64 / 4.0,
                    })
                    .collect();
                let m = QueryMetric::new(spec, labels.clone()).unwrap();
                let s = SmoothingSpec::shifted(0.5, 0.7).unwrap();
                let z: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
                let eps = sample_noise(&s, &labels, &mut rng);
                let g = ccs_with_noise(&z, &m, &s, &eps).unwrap();
                let state = m.ranked_state(&eps.perturb(&z, s.sigma)).unwrap();
                for (i, &doc) in state.order().iter().enumerate() {
                    let full: f64 = (0..n)
                        .map(|t| {
                            state.jump_at(i, t)
                                * conditional_density(&s, labels[doc], (state.sorted_scores()[t] - z[doc]) / s.sigma)
                        })
                        .sum();
                    assert!((g[doc] + full / s.sigma).abs() < 1e-12, "{spec}");
                }
            }
        }
    }
}
