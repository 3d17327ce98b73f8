//! Gaussian score smoothing: the centered family and the relevance-shifted
//! family `N(-mu * r, I)` that resolves ties towards the worst permutation.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::metric::QueryMetric;

pub const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum NoiseFamily {
    Centered,
    RelevanceShifted { mu: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothingSpec {
    pub family: NoiseFamily,
    pub sigma: f64,
}

impl SmoothingSpec {
    pub fn centered(sigma: f64) -> Result<Self> {
        Self::new(NoiseFamily::Centered, sigma)
    }

    /// `mu = 0` collapses to the centered family.
    pub fn shifted(mu: f64, sigma: f64) -> Result<Self> {
        if mu == 0.0 {
            Self::centered(sigma)
        } else {
            Self::new(NoiseFamily::RelevanceShifted { mu }, sigma)
        }
    }

    pub fn new(family: NoiseFamily, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Config(format!("smoothing scale must be positive, got {sigma}")));
        }
        if let NoiseFamily::RelevanceShifted { mu } = family {
            if !(mu > 0.0 && mu.is_finite()) {
                return Err(Error::Config(format!("relevance shift must be positive, got {mu}")));
            }
        }
        Ok(Self { family, sigma })
    }

    pub fn mu(&self) -> f64 {
        match self.family {
            NoiseFamily::Centered => 0.0,
            NoiseFamily::RelevanceShifted { mu } => mu,
        }
    }

    pub fn with_sigma(self, sigma: f64) -> Result<Self> {
        Self::new(self.family, sigma)
    }

    /// Mean of the noise coordinate of a document with label `label`.
    pub fn mean(&self, label: f64) -> f64 {
        -self.mu() * label
    }
}

/// One noise vector, in units of `sigma`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSample(pub Vec<f64>);

impl NoiseSample {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// `z + sigma * eps`.
    pub fn perturb(&self, scores: &[f64], sigma: f64) -> Vec<f64> {
        scores.iter().zip(&self.0).map(|(z, e)| z + sigma * e).collect()
    }
}

pub fn sample_noise<R: Rng + ?Sized>(spec: &SmoothingSpec, labels: &[f64], rng: &mut R) -> NoiseSample {
    NoiseSample(
        labels
            .iter()
            .map(|&r| spec.mean(r) + rng.sample::<f64, _>(StandardNormal))
            .collect(),
    )
}

/// Density of one noise coordinate given all others; the coordinates are
/// independent so this is the marginal `N(-mu r_j, 1)` density.
pub fn conditional_density(spec: &SmoothingSpec, label: f64, t: f64) -> f64 {
    let x = t - spec.mean(label);
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub samples: usize,
}

impl McEstimate {
    pub fn from_moments(sum: f64, sum_sq: f64, samples: usize) -> Self {
        let m = samples as f64;
        let mean = sum / m;
        let var = if samples > 1 {
            ((sum_sq - m * mean * mean) / (m - 1.0)).max(0.0)
        } else {
            0.0
        };
        Self {
            mean,
            std_err: (var / m).sqrt(),
            samples,
        }
    }
}

/// Monte-Carlo estimate of the smoothed metric `E q(z + sigma * eps)`.
///
/// Test oracle only; the training loop never evaluates it.
pub fn mc_smoothed_loss<R: Rng + ?Sized>(
    scores: &[f64],
    metric: &QueryMetric,
    spec: &SmoothingSpec,
    samples: usize,
    rng: &mut R,
) -> Result<McEstimate> {
    check_len("scores", scores.len(), metric.len())?;
    if samples == 0 {
        return Err(Error::Empty("Monte-Carlo sample count"));
    }
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..samples {
        let eps = sample_noise(spec, metric.labels(), rng);
        let q = metric.quality(&eps.perturb(scores, spec.sigma))?;
        sum += q;
        sum_sq += q * q;
    }
    Ok(McEstimate::from_moments(sum, sum_sq, samples))
}
