//! Gradient boosting of oblivious trees on smoothed ranking losses, with the
//! optional Langevin variant: multiplicative model shrinkage plus Gaussian
//! noise on the regression targets.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::RankingDataset;
use crate::error::{Error, Result};
use crate::estimators::{center_scores, estimate_gradient, EstimatorConfig};
use crate::metric::{MetricSpec, QueryMetric};
use crate::rng::{stream, stream_seed};
use crate::smoothing::SmoothingSpec;
use crate::tree::{
    compute_borders, fit_oblivious_tree, BinnedMatrix, Ensemble, FeatureBinarization, DEFAULT_MAX_BORDERS,
};

/// Query slot reserved for the Langevin noise stream of each iteration.
const NOISE_STREAM: u64 = u64::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoostMode {
    /// Plain stochastic gradient boosting: no shrinkage, no injected noise.
    Sgb,
    Sglb,
}

impl fmt::Display for BoostMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BoostMode::Sgb => "sgb",
            BoostMode::Sglb => "sglb",
        })
    }
}

impl FromStr for BoostMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sgb" => Ok(BoostMode::Sgb),
            "sglb" => Ok(BoostMode::Sglb),
            _ => Err(Error::Config(format!("unknown boosting mode `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub depth: usize,
    /// Smoothing scale.
    pub sigma: f64,
    /// Relevance shift of the smoothing noise; 0 gives centered noise.
    pub mu: f64,
    pub model_shrink_rate: f64,
    /// Inverse temperature of the injected noise; infinity disables it.
    pub diffusion_temperature: f64,
    pub estimator: EstimatorConfig,
    pub mode: BoostMode,
    pub seed: u64,
    pub metric: MetricSpec,
    pub max_borders: usize,
    /// Keep the prefix of the ensemble with the best validation (or, without
    /// validation data, training) metric instead of the final model.
    pub use_best_model: bool,
    /// Record wall-clock time per iteration. Off by default so that logs are
    /// reproducible byte for byte.
    pub log_timing: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 1000,
            learning_rate: 0.1,
            depth: 6,
            sigma: 1.0,
            mu: 1.0,
            model_shrink_rate: 1e-3,
            diffusion_temperature: 1e9,
            estimator: EstimatorConfig::default(),
            mode: BoostMode::Sglb,
            seed: 0,
            metric: MetricSpec::ndcg(5),
            max_borders: DEFAULT_MAX_BORDERS,
            use_best_model: false,
            log_timing: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma must be positive, got {}", self.sigma));
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return bad(format!("mu must be non-negative, got {}", self.mu));
        }
        if self.depth == 0 || self.depth > 16 {
            return bad(format!("depth must be in 1..=16, got {}", self.depth));
        }
        if self.max_borders == 0 || self.max_borders > u16::MAX as usize - 1 {
            return bad(format!("max borders must be in 1..65535, got {}", self.max_borders));
        }
        if self.estimator.nu.is_nan() || self.estimator.nu < 0.0 {
            return bad(format!("nu must be non-negative, got {}", self.estimator.nu));
        }
        if self.estimator.samples == 0 {
            return bad("estimator samples must be positive".into());
        }
        if self.mode == BoostMode::Sglb {
            if !(self.model_shrink_rate >= 0.0 && self.model_shrink_rate * self.learning_rate < 1.0) {
                return bad(format!(
                    "model shrink rate must satisfy 0 <= rate * learning_rate < 1, got {}",
                    self.model_shrink_rate
                ));
            }
            if self.diffusion_temperature.is_nan() || self.diffusion_temperature <= 0.0 {
                return bad(format!(
                    "diffusion temperature must be positive, got {}",
                    self.diffusion_temperature
                ));
            }
        }
        Ok(())
    }

    pub fn smoothing(&self) -> Result<SmoothingSpec> {
        SmoothingSpec::shifted(self.mu, self.sigma)
    }

    /// Per-iteration factor applied to the current model.
    pub fn shrink(&self) -> f64 {
        match self.mode {
            BoostMode::Sgb => 1.0,
            BoostMode::Sglb => 1.0 - self.model_shrink_rate * self.learning_rate,
        }
    }

    /// Standard deviation of the target noise, zero when disabled.
    pub fn target_noise_std(&self) -> f64 {
        match self.mode {
            BoostMode::Sgb => 0.0,
            BoostMode::Sglb if self.diffusion_temperature.is_infinite() => 0.0,
            BoostMode::Sglb => (2.0 / (self.diffusion_temperature * self.learning_rate)).sqrt(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IterationLog {
    /// Number of trees in the model when the row was recorded.
    pub iteration: usize,
    pub train_metric: f64,
    pub valid_metric: Option<f64>,
    pub wall_ms: f64,
}

pub fn write_log_csv<W: std::io::Write>(logs: &[IterationLog], mut out: W) -> Result<()> {
    writeln!(out, "iteration,train_metric,valid_metric,wall_ms")?;
    for row in logs {
        let valid = row.valid_metric.map(|v| v.to_string()).unwrap_or_default();
        writeln!(out, "{},{},{},{}", row.iteration, row.train_metric, valid, row.wall_ms)?;
    }
    Ok(())
}

/// Per-query metric objects over a dataset.
fn query_metrics(dataset: &RankingDataset, spec: &MetricSpec) -> Result<Vec<QueryMetric>> {
    let spec = spec.resolve_gain(dataset.max_label());
    (0..dataset.queries().len())
        .map(|q| QueryMetric::new(spec, dataset.query_labels(q).to_vec()))
        .collect()
}

fn mean_quality(dataset: &RankingDataset, metrics: &[QueryMetric], scores: &[f64]) -> Result<f64> {
    let values = metrics
        .iter()
        .zip(dataset.queries())
        .map(|(m, q)| m.quality(&scores[q.range()]))
        .collect::<Result<Vec<f64>>>()?;
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Metric value of every query under the given scores.
pub fn per_query_metric(dataset: &RankingDataset, scores: &[f64], spec: &MetricSpec) -> Result<Vec<f64>> {
    crate::error::check_len("scores", scores.len(), dataset.len())?;
    let metrics = query_metrics(dataset, spec)?;
    metrics
        .iter()
        .zip(dataset.queries())
        .map(|(m, q)| m.quality(&scores[q.range()]))
        .collect()
}

/// Mean over queries of each metric for the ensemble's scores.
pub fn evaluate(ensemble: &Ensemble, dataset: &RankingDataset, specs: &[MetricSpec]) -> Result<Vec<f64>> {
    let scores = ensemble.predict(dataset.features(), dataset.feature_count())?;
    specs
        .iter()
        .map(|spec| {
            let values = per_query_metric(dataset, &scores, spec)?;
            Ok(values.iter().sum::<f64>() / values.len() as f64)
        })
        .collect()
}

/// Training state: the ensemble so far and its scores on the training set.
pub struct Booster<'a> {
    config: TrainConfig,
    dataset: &'a RankingDataset,
    metrics: Vec<QueryMetric>,
    smoothing: SmoothingSpec,
    binarization: FeatureBinarization,
    binned: BinnedMatrix,
    ensemble: Ensemble,
    scores: Vec<f64>,
    iteration: usize,
}

impl<'a> Booster<'a> {
    pub fn new(dataset: &'a RankingDataset, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if dataset.is_empty() {
            return Err(Error::Empty("training dataset"));
        }
        let metrics = query_metrics(dataset, &config.metric)?;
        let binarization = compute_borders(dataset.features(), dataset.feature_count(), config.max_borders)?;
        let binned = binarization.apply(dataset.features(), dataset.feature_count())?;
        Ok(Self {
            smoothing: config.smoothing()?,
            ensemble: Ensemble::new(dataset.feature_count()),
            scores: vec![0.0; dataset.len()],
            iteration: 0,
            config,
            dataset,
            metrics,
            binarization,
            binned,
        })
    }

    /// Continues boosting from an existing model.
    pub fn from_ensemble(dataset: &'a RankingDataset, config: TrainConfig, ensemble: Ensemble) -> Result<Self> {
        let mut booster = Self::new(dataset, config)?;
        booster.scores = ensemble.predict(dataset.features(), dataset.feature_count())?;
        booster.ensemble = ensemble;
        Ok(booster)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn ensemble(&self) -> &Ensemble {
        &self.ensemble
    }

    pub fn into_ensemble(self) -> Ensemble {
        self.ensemble
    }

    pub fn binarization(&self) -> &FeatureBinarization {
        &self.binarization
    }

    /// Current training scores, equal to re-predicting with the ensemble.
    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn train_metric(&self) -> Result<f64> {
        mean_quality(self.dataset, &self.metrics, &self.scores)
    }

    /// Regression targets of the next iteration: the negated gradient
    /// estimate per query, plus Langevin noise when enabled.
    pub fn targets(&self) -> Result<Vec<f64>> {
        let cfg = &self.config;
        let iter = self.iteration as u64;
        let per_query = self
            .metrics
            .par_iter()
            .zip(self.dataset.queries().par_iter())
            .enumerate()
            .map(|(q, (metric, group))| {
                let raw = &self.scores[group.range()];
                let z = if metric.spec().is_translation_invariant() {
                    center_scores(raw)
                } else {
                    raw.to_vec()
                };
                let seed = stream_seed(cfg.seed, iter, q as u64);
                estimate_gradient(&z, metric, &self.smoothing, &cfg.estimator, seed).map(|e| e.grad)
            })
            .collect::<Result<Vec<Vec<f64>>>>()?;
        let mut targets: Vec<f64> = per_query.into_iter().flatten().map(|g| -g).collect();

        let std = cfg.target_noise_std();
        if std > 0.0 {
            let mut rng = stream(cfg.seed, iter, NOISE_STREAM);
            for t in &mut targets {
                let z: f64 = rng.sample(StandardNormal);
                *t += std * z;
            }
        }
        if let Some(index) = targets.iter().position(|t| !t.is_finite()) {
            return Err(Error::NonFinite {
                what: "regression target",
                index,
                value: targets[index],
            });
        }
        Ok(targets)
    }

    /// Fits one tree and folds it into the model and the training scores.
    pub fn step(&mut self) -> Result<()> {
        let targets = self.targets()?;
        let tree = fit_oblivious_tree(&self.binned, &self.binarization.borders, &targets, self.config.depth)?;
        let shrink = self.config.shrink();
        let lr = self.config.learning_rate;
        for (doc, f) in self.scores.iter_mut().enumerate() {
            *f = *f * shrink + lr * tree.leaf_values[tree.leaf_of_binned(&self.binned, doc)];
        }
        self.ensemble.push(tree, shrink, lr);
        self.iteration += 1;
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub ensemble: Ensemble,
    pub logs: Vec<IterationLog>,
    /// Number of trees kept in `ensemble`.
    pub kept_iterations: usize,
}

/// Runs `config.iterations` boosting steps, logging the mean metric before
/// the first tree and after each one.
pub fn train(dataset: &RankingDataset, config: &TrainConfig, valid: Option<&RankingDataset>) -> Result<TrainOutcome> {
    let mut booster = Booster::new(dataset, config.clone())?;
    let valid_metrics = match valid {
        Some(v) => {
            if v.feature_count() != dataset.feature_count() {
                return Err(Error::Model(format!(
                    "validation data has {} features, training data {}",
                    v.feature_count(),
                    dataset.feature_count()
                )));
            }
            Some((v, query_metrics(v, &config.metric)?))
        }
        None => None,
    };
    let mut valid_scores = valid.map(|v| vec![0.0; v.len()]);

    let started = Instant::now();
    let mut logs = Vec::with_capacity(config.iterations + 1);
    let mut record = |booster: &Booster, valid_scores: &Option<Vec<f64>>| -> Result<()> {
        let valid_metric = match (&valid_metrics, valid_scores) {
            (Some((v, m)), Some(s)) => Some(mean_quality(v, m, s)?),
            _ => None,
        };
        let row = IterationLog {
            iteration: booster.iteration(),
            train_metric: booster.train_metric()?,
            valid_metric,
            wall_ms: if config.log_timing {
                started.elapsed().as_secs_f64() * 1e3
            } else {
                0.0
            },
        };
        log::debug!(
            "iteration {} train {:.6} valid {:?}",
            row.iteration,
            row.train_metric,
            row.valid_metric
        );
        logs.push(row);
        Ok(())
    };
    record(&booster, &valid_scores)?;
    for _ in 0..config.iterations {
        booster.step()?;
        if let (Some(v), Some(scores)) = (valid, valid_scores.as_mut()) {
            let stage = booster.ensemble().stages().last().expect("a tree was just added");
            for (doc, f) in scores.iter_mut().enumerate() {
                *f = *f * stage.shrink + stage.step * stage.tree.predict_row(v.row(doc));
            }
        }
        record(&booster, &valid_scores)?;
    }

    let mut ensemble = booster.into_ensemble();
    let mut kept = ensemble.len();
    if config.use_best_model {
        let key = |row: &IterationLog| row.valid_metric.unwrap_or(row.train_metric);
        let mut best = 0;
        for (i, row) in logs.iter().enumerate() {
            if key(row) > key(&logs[best]) {
                best = i;
            }
        }
        kept = logs[best].iteration;
        ensemble.truncate(kept);
    }
    Ok(TrainOutcome {
        ensemble,
        logs,
        kept_iterations: kept,
    })
}
