//! Flat `key = value` run configuration.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use stochrank::booster::{BoostMode, TrainConfig};
use stochrank::estimators::EstimatorKind;
use stochrank::metric::MetricSpec;

/// Bad input from the user rather than a failure while running; the process
/// exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Clone, Debug, Default)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub train_path: Option<PathBuf>,
    pub valid_path: Option<PathBuf>,
    pub model_out: Option<PathBuf>,
    pub log_out: Option<PathBuf>,
    pub binarize_labels: bool,
    pub unsafe_ranges: bool,
}

fn parse<T: FromStr>(key: &str, value: &str) -> anyhow::Result<T>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| usage(format!("invalid value `{value}` for `{key}`: {e}")))
}

fn parse_bool(key: &str, value: &str) -> anyhow::Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(usage(format!("invalid boolean `{value}` for `{key}`"))),
    }
}

impl RunConfig {
    /// Sets one field by its config-file key; dashes and underscores are
    /// interchangeable.
    pub fn apply(&mut self, key: &str, value: &str) -> anyhow::Result<()> {
        let t = &mut self.train;
        match key.replace('-', "_").as_str() {
            "train" => self.train_path = Some(PathBuf::from(value)),
            "valid" => self.valid_path = Some(PathBuf::from(value)),
            "model_out" => self.model_out = Some(PathBuf::from(value)),
            "log_out" => self.log_out = Some(PathBuf::from(value)),
            "binarize_labels" => self.binarize_labels = parse_bool(key, value)?,
            "unsafe" => self.unsafe_ranges = parse_bool(key, value)?,
            "iterations" => t.iterations = parse(key, value)?,
            "learning_rate" => t.learning_rate = parse(key, value)?,
            "depth" => t.depth = parse(key, value)?,
            "sigma" => t.sigma = parse(key, value)?,
            "mu" => t.mu = parse(key, value)?,
            "model_shrink_rate" => t.model_shrink_rate = parse(key, value)?,
            "diffusion_temperature" => t.diffusion_temperature = parse(key, value)?,
            "nu" => t.estimator.nu = parse(key, value)?,
            "samples" => t.estimator.samples = parse(key, value)?,
            "estimator" => t.estimator.kind = parse::<EstimatorKind>(key, value)?,
            "mode" => t.mode = parse::<BoostMode>(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "metric" => t.metric = parse::<MetricSpec>(key, value)?,
            "max_borders" => t.max_borders = parse(key, value)?,
            "use_best_model" => t.use_best_model = parse_bool(key, value)?,
            "log_timing" => t.log_timing = parse_bool(key, value)?,
            _ => return Err(usage(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    pub fn apply_text(&mut self, text: &str, origin: &str) -> anyhow::Result<()> {
        for (key, value, line) in parse_flat(text, origin)? {
            self.apply(&key, &value)
                .map_err(|e| usage(format!("{origin}:{line}: {e}")))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> anyhow::Result<()> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| usage(format!("cannot read config file {}: {e}", path.display())))?;
        self.apply_text(&text, &path.display().to_string())
    }

    /// Checks hyperparameters against the usual tuning ranges.
    pub fn check_ranges(&self) -> anyhow::Result<()> {
        self.train.validate().map_err(|e| usage(e.to_string()))?;
        if self.unsafe_ranges {
            return Ok(());
        }
        let t = &self.train;
        let mut problems = Vec::new();
        let mut check = |ok: bool, what: String| {
            if !ok {
                problems.push(what);
            }
        };
        check(
            (1e-3..=1.0).contains(&t.learning_rate),
            format!("learning_rate {} outside [1e-3, 1]", t.learning_rate),
        );
        check(
            (1..=10).contains(&t.depth),
            format!("depth {} outside [1, 10]", t.depth),
        );
        check(
            t.mu == 0.0 || (1e-2..=10.0).contains(&t.mu),
            format!("mu {} outside {{0}} and [1e-2, 10]", t.mu),
        );
        check(
            (1e-3..=1e3).contains(&t.sigma),
            format!("sigma {} outside [1e-3, 1e3]", t.sigma),
        );
        check(t.estimator.nu <= 1.0, format!("nu {} above 1", t.estimator.nu));
        if t.mode == BoostMode::Sglb {
            check(
                t.model_shrink_rate == 0.0 || (1e-5..=1e-2).contains(&t.model_shrink_rate),
                format!(
                    "model_shrink_rate {} outside {{0}} and [1e-5, 1e-2]",
                    t.model_shrink_rate
                ),
            );
            check(
                t.diffusion_temperature.is_infinite() || (1e3..=1e11).contains(&t.diffusion_temperature),
                format!(
                    "diffusion_temperature {} outside [1e3, 1e11] and infinity",
                    t.diffusion_temperature
                ),
            );
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(usage(format!("{} (pass --unsafe to allow)", problems.join("; "))))
        }
    }
}

/// `(key, value, line)` triples of a flat config text. Blank lines and
/// `#` comments are skipped.
pub fn parse_flat(text: &str, origin: &str) -> anyhow::Result<Vec<(String, String, usize)>> {
    let mut seen = BTreeMap::new();
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| usage(format!("{origin}:{}: expected `key = value`", i + 1)))?;
        let key = key.trim().to_owned();
        if let Some(prev) = seen.insert(key.replace('-', "_"), i + 1) {
            return Err(usage(format!("{origin}:{}: `{key}` already set on line {prev}", i + 1)));
        }
        out.push((key, value.trim().to_owned(), i + 1));
    }
    Ok(out)
}
