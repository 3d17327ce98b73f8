//! Diagnostics: Monte Carlo gradient checks and the coordinate-estimate
//! timing benchmark.

use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimators::{ccs_with_noise, ccs_with_noise_exhaustive, reinforce_gradient, sfa_project};
use crate::metric::{MetricKind, MetricSpec, QueryMetric};
use crate::rng::{seeded, stream_seed};
use crate::smoothing::{sample_noise, SmoothingSpec};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradcheckConfig {
    pub samples: usize,
    /// Half-width of the central difference.
    pub step: f64,
    pub nu: f64,
    pub seed: u64,
    /// Allowed distance in combined standard errors.
    pub tolerance_se: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            samples: 200_000,
            step: 0.05,
            nu: 0.0,
            seed: 0,
            tolerance_se: 4.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoordinateCheck {
    pub index: usize,
    pub ccs: MeanSe,
    pub reinforce: MeanSe,
    pub finite_difference: MeanSe,
    pub ccs_pass: bool,
    pub reinforce_pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub metric: String,
    pub samples: usize,
    pub coordinates: Vec<CoordinateCheck>,
    /// Total variance of score-function draws over coordinate draws.
    pub variance_ratio_reinforce_ccs: Option<f64>,
    /// Total variance of projected over raw coordinate draws, paired.
    pub variance_ratio_sfa_plain: Option<f64>,
    pub pass: bool,
}

#[derive(Clone, Debug)]
struct Moments {
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
    n: usize,
}

impl Moments {
    fn new(dim: usize) -> Self {
        Self {
            sum: vec![0.0; dim],
            sum_sq: vec![0.0; dim],
            n: 0,
        }
    }

    fn add(&mut self, x: &[f64]) {
        for ((s, q), v) in self.sum.iter_mut().zip(&mut self.sum_sq).zip(x) {
            *s += v;
            *q += v * v;
        }
        self.n += 1;
    }

    fn variance(&self, j: usize) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        let n = self.n as f64;
        let mean = self.sum[j] / n;
        ((self.sum_sq[j] - n * mean * mean) / (n - 1.0)).max(0.0)
    }

    fn estimate(&self, j: usize) -> MeanSe {
        MeanSe {
            mean: self.sum[j] / self.n as f64,
            se: (self.variance(j) / self.n as f64).sqrt(),
        }
    }

    fn total_variance(&self) -> f64 {
        (0..self.sum.len()).map(|j| self.variance(j)).sum()
    }
}

fn agrees(a: MeanSe, b: MeanSe, tolerance_se: f64) -> bool {
    let se = (a.se * a.se + b.se * b.se).sqrt();
    (a.mean - b.mean).abs() <= tolerance_se * se + 1e-12
}

fn ratio(num: f64, den: f64) -> Option<f64> {
    (den > 0.0).then(|| num / den)
}

/// Compares the coordinate and score-function estimates of the smoothed-loss
/// gradient against central differences of the smoothed loss, all as Monte
/// Carlo means. The difference uses common random numbers: both sides of a
/// coordinate see the same noise, so draws that leave the ranking unchanged
/// contribute exactly zero and are skipped.
pub fn gradcheck(
    scores: &[f64],
    metric: &QueryMetric,
    smoothing: &SmoothingSpec,
    config: &GradcheckConfig,
) -> Result<GradcheckReport> {
    if config.samples < 2 {
        return Err(Error::Config("gradient check needs at least 2 samples".into()));
    }
    if config.step.is_nan() || config.step <= 0.0 {
        return Err(Error::Config(format!(
            "difference step must be positive, got {}",
            config.step
        )));
    }
    crate::error::check_len("scores", scores.len(), metric.len())?;
    crate::error::check_finite("scores", scores)?;
    let n = scores.len();
    let labels = metric.labels();
    let sigma = smoothing.sigma;
    let sfa_possible = config.nu > 0.0 || scores.iter().any(|&z| z != 0.0);

    let mut ccs = Moments::new(n);
    let mut sfa = Moments::new(n);
    let mut rng = seeded(stream_seed(config.seed, 0, 0));
    for _ in 0..config.samples {
        let eps = sample_noise(smoothing, labels, &mut rng);
        let g = ccs_with_noise(scores, metric, smoothing, &eps)?;
        if sfa_possible {
            sfa.add(&sfa_project(&g, scores, config.nu)?);
        }
        ccs.add(&g);
    }

    let mut reinforce = Moments::new(n);
    let mut rng = seeded(stream_seed(config.seed, 0, 1));
    for _ in 0..config.samples {
        reinforce.add(&reinforce_gradient(scores, metric, smoothing, &mut rng)?);
    }

    let mut fd = Moments::new(n);
    let mut rng = seeded(stream_seed(config.seed, 0, 2));
    let h = config.step;
    let selection = metric.spec().kind == MetricKind::DcgRr;
    let mut diff = vec![0.0; n];
    for _ in 0..config.samples {
        let eps = sample_noise(smoothing, labels, &mut rng);
        let mut noisy = eps.perturb(scores, sigma);
        for j in 0..n {
            let (lo, hi) = (noisy[j] - h, noisy[j] + h);
            let crosses = if selection {
                lo <= 0.0 && hi > 0.0
            } else {
                noisy.iter().enumerate().any(|(t, &y)| t != j && y >= lo && y <= hi)
            };
            diff[j] = if crosses {
                let keep = noisy[j];
                noisy[j] = hi;
                let up = metric.quality(&noisy)?;
                noisy[j] = lo;
                let down = metric.quality(&noisy)?;
                noisy[j] = keep;
                -(up - down) / (2.0 * h)
            } else {
                0.0
            };
        }
        fd.add(&diff);
    }

    let coordinates: Vec<CoordinateCheck> = (0..n)
        .map(|j| {
            let (c, r, f) = (ccs.estimate(j), reinforce.estimate(j), fd.estimate(j));
            CoordinateCheck {
                index: j,
                ccs: c,
                reinforce: r,
                finite_difference: f,
                ccs_pass: agrees(c, f, config.tolerance_se),
                reinforce_pass: agrees(r, f, config.tolerance_se),
            }
        })
        .collect();
    let pass = coordinates.iter().all(|c| c.ccs_pass && c.reinforce_pass);
    Ok(GradcheckReport {
        metric: metric.spec().to_string(),
        samples: config.samples,
        variance_ratio_reinforce_ccs: ratio(reinforce.total_variance(), ccs.total_variance()),
        variance_ratio_sfa_plain: if sfa_possible {
            ratio(sfa.total_variance(), ccs.total_variance())
        } else {
            None
        },
        coordinates,
        pass,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchConfig {
    pub sizes: Vec<usize>,
    pub top: usize,
    /// Largest list length for which the quadratic path is also timed.
    pub naive_max: usize,
    /// Minimum measured time per path and size.
    pub min_seconds: f64,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            sizes: (8..=14).map(|p| 1usize << p).collect(),
            top: 10,
            naive_max: 1 << 12,
            min_seconds: 0.2,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub n: usize,
    pub seconds_per_pass: f64,
    /// Seconds per pass divided by `n * (k + log2 n)`.
    pub normalized: f64,
    /// Normalized cost relative to the previous size.
    pub normalized_ratio: Option<f64>,
    pub naive_seconds_per_pass: Option<f64>,
    pub speedup: Option<f64>,
    /// Largest coordinate difference between the two paths.
    pub max_abs_diff: Option<f64>,
}

fn time_passes<F: FnMut() -> Result<Vec<f64>>>(min_seconds: f64, mut pass: F) -> Result<(f64, Vec<f64>)> {
    let start = Instant::now();
    let mut runs = 0usize;
    let mut last;
    loop {
        last = std::hint::black_box(pass()?);
        runs += 1;
        if start.elapsed().as_secs_f64() >= min_seconds {
            break;
        }
    }
    Ok((start.elapsed().as_secs_f64() / runs as f64, last))
}

/// Times one full coordinate-estimate pass (all documents) on random
/// NDCG@k instances of growing length.
pub fn bench_delta(config: &BenchConfig) -> Result<Vec<BenchRow>> {
    let smoothing = SmoothingSpec::centered(1.0)?;
    let mut rows: Vec<BenchRow> = Vec::with_capacity(config.sizes.len());
    for (i, &n) in config.sizes.iter().enumerate() {
        if n == 0 {
            return Err(Error::Config("benchmark sizes must be positive".into()));
        }
        let mut rng = seeded(stream_seed(config.seed, i as u64, 0));
        let labels: Vec<f64> = (0..n).map(|_| rng.random_range(0..5) as f64).collect();
        let scores: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let metric = QueryMetric::new(MetricSpec::ndcg(config.top), labels.clone())?;
        let eps = sample_noise(&smoothing, &labels, &mut rng);

        let (fast, g) = time_passes(config.min_seconds, || {
            ccs_with_noise(&scores, &metric, &smoothing, &eps)
        })?;
        let (naive, diff) = if n <= config.naive_max {
            let (t, slow) = time_passes(config.min_seconds, || {
                ccs_with_noise_exhaustive(&scores, &metric, &smoothing, &eps)
            })?;
            let d = g.iter().zip(&slow).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            (Some(t), Some(d))
        } else {
            (None, None)
        };
        let normalized = fast / (n as f64 * (config.top as f64 + (n as f64).log2()));
        let normalized_ratio = rows.last().map(|prev| normalized / prev.normalized);
        log::info!("n={n} pass={fast:.3e}s normalized={normalized:.3e}");
        rows.push(BenchRow {
            n,
            seconds_per_pass: fast,
            normalized,
            normalized_ratio,
            naive_seconds_per_pass: naive,
            speedup: naive.map(|t| t / fast),
            max_abs_diff: diff,
        });
    }
    Ok(rows)
}
