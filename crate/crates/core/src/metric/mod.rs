//! Ranking quality functions and the cumulative statistics used for
//! constant-time re-evaluation after a single document moves.
//!
//! Every function in this module returns a *quality* value (larger is
//! better). The optimizer is the only place where the sign is flipped to
//! obtain a loss.

mod gmc;
mod ranked;

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{check_finite, check_len, Error, Result};

pub use gmc::GainDiscount;
pub use ranked::RankedState;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MetricKind {
    Dcg,
    Ndcg,
    Err,
    Mrr,
    /// Learning-to-select-with-order: documents keep their index order and
    /// a document is included iff its score is positive.
    DcgRr,
}

/// How documents with exactly equal scores are ordered.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TiePolicy {
    /// Less relevant documents first, then ascending index.
    #[default]
    Worst,
    /// Ascending index only, ignoring relevance.
    Fixed,
}

/// Mapping from a raw label to the gain used by the metric.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Gain {
    /// `(2^r - 1) / 16` for NDCG/DCG; for ERR, identity when every label of
    /// the query lies in `[0, 1]` and exponential otherwise.
    #[default]
    Auto,
    Identity,
    Exponential,
}

impl Gain {
    pub fn apply(self, label: f64) -> f64 {
        match self {
            Gain::Identity => label,
            Gain::Exponential | Gain::Auto => (label.exp2() - 1.0) / 16.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MetricSpec {
    pub kind: MetricKind,
    /// Truncation depth; `None` means the whole list.
    pub top: Option<usize>,
    pub ties: TiePolicy,
    pub gain: Gain,
}

impl MetricSpec {
    pub fn new(kind: MetricKind, top: Option<usize>) -> Self {
        Self {
            kind,
            top,
            ties: TiePolicy::Worst,
            gain: Gain::Auto,
        }
    }

    pub fn ndcg(k: usize) -> Self {
        Self::new(MetricKind::Ndcg, Some(k))
    }

    pub fn dcg(k: usize) -> Self {
        Self::new(MetricKind::Dcg, Some(k))
    }

    pub fn err(k: usize) -> Self {
        Self::new(MetricKind::Err, Some(k))
    }

    pub fn mrr() -> Self {
        Self::new(MetricKind::Mrr, None)
    }

    pub fn dcg_rr() -> Self {
        Self::new(MetricKind::DcgRr, None)
    }

    pub fn with_ties(mut self, ties: TiePolicy) -> Self {
        self.ties = ties;
        self
    }

    pub fn with_gain(mut self, gain: Gain) -> Self {
        self.gain = gain;
        self
    }

    /// Effective truncation for a list of `n` documents.
    pub fn cutoff(&self, n: usize) -> usize {
        match (self.kind, self.top) {
            (MetricKind::Mrr | MetricKind::DcgRr, _) => n,
            (_, Some(k)) => k.min(n),
            (_, None) => n,
        }
    }

    /// Whether the metric only depends on the relative order of scores.
    pub fn is_translation_invariant(&self) -> bool {
        self.kind != MetricKind::DcgRr
    }

    /// Upper bound on `|quality|`.
    pub fn bound(&self) -> f64 {
        match self.kind {
            MetricKind::Ndcg | MetricKind::Err | MetricKind::Mrr => 1.0,
            // 15/16 per position times the harmonic-log sum; a loose but
            // finite bound is all callers need.
            MetricKind::Dcg => f64::INFINITY,
            MetricKind::DcgRr => f64::INFINITY,
        }
    }

    /// Resolve [`Gain::Auto`] once for a whole dataset so that every query
    /// uses the same mapping.
    pub fn resolve_gain(mut self, max_label: f64) -> Self {
        if self.gain == Gain::Auto {
            self.gain = match self.kind {
                MetricKind::Err if max_label <= 1.0 => Gain::Identity,
                MetricKind::Mrr | MetricKind::DcgRr => Gain::Identity,
                _ => Gain::Exponential,
            };
        }
        self
    }

    pub(crate) fn validate_labels(&self, labels: &[f64]) -> Result<()> {
        check_finite("labels", labels)?;
        let bad = |index: usize| Error::InvalidLabel {
            label: labels[index],
            index,
            metric: self.to_string(),
        };
        let in_range = |lo: f64, hi: f64| labels.iter().position(|&r| r < lo || r > hi);
        let outside = match self.kind {
            MetricKind::Ndcg | MetricKind::Dcg => in_range(0.0, 4.0),
            MetricKind::Err => match self.effective_gain(labels) {
                Gain::Identity => in_range(0.0, 1.0),
                _ => in_range(0.0, 4.0),
            },
            MetricKind::Mrr => labels.iter().position(|&r| r != 0.0 && r != 1.0),
            MetricKind::DcgRr => None,
        };
        match outside {
            Some(index) => Err(bad(index)),
            None => Ok(()),
        }
    }

    pub(crate) fn effective_gain(&self, labels: &[f64]) -> Gain {
        match (self.kind, self.gain) {
            (MetricKind::Mrr | MetricKind::DcgRr, _) => Gain::Identity,
            (MetricKind::Err, Gain::Auto) => {
                if labels.iter().all(|&r| (0.0..=1.0).contains(&r)) {
                    Gain::Identity
                } else {
                    Gain::Exponential
                }
            }
            (_, Gain::Auto) => Gain::Exponential,
            (_, g) => g,
        }
    }
}

impl fmt::Display for MetricSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self.kind {
            MetricKind::Dcg => "DCG",
            MetricKind::Ndcg => "NDCG",
            MetricKind::Err => "ERR",
            MetricKind::Mrr => "MRR",
            MetricKind::DcgRr => "DCG-RR",
        };
        f.write_str(name)?;
        if let (Some(k), MetricKind::Dcg | MetricKind::Ndcg | MetricKind::Err) = (self.top, self.kind) {
            write!(f, "@{k}")?;
        }
        if self.ties == TiePolicy::Fixed {
            f.write_str(":fixed")?;
        }
        Ok(())
    }
}

impl FromStr for MetricSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown metric `{s}`"));
        let (body, ties) = match s.trim().rsplit_once(':') {
            Some((body, "fixed")) => (body, TiePolicy::Fixed),
            Some((body, "worst")) => (body, TiePolicy::Worst),
            Some(_) => return Err(bad()),
            None => (s.trim(), TiePolicy::Worst),
        };
        let (name, top) = match body.split_once('@') {
            Some((name, k)) => {
                let k: usize = k.parse().map_err(|_| bad())?;
                if k == 0 {
                    return Err(Error::Config(format!("metric `{s}`: truncation must be positive")));
                }
                (name, Some(k))
            }
            None => (body, None),
        };
        let kind = match name.to_ascii_uppercase().as_str() {
            "DCG" => MetricKind::Dcg,
            "NDCG" => MetricKind::Ndcg,
            "ERR" => MetricKind::Err,
            "MRR" => MetricKind::Mrr,
            "DCG-RR" | "DCGRR" | "DCG_RR" => MetricKind::DcgRr,
            _ => return Err(bad()),
        };
        Ok(MetricSpec::new(kind, top).with_ties(ties))
    }
}

fn descending(a: f64, b: f64) -> Ordering {
    b.partial_cmp(&a).unwrap_or(Ordering::Equal)
}

/// Sort positions by descending score; among equal scores the less
/// relevant document comes first, then the lower index.
pub fn worst_argsort(scores: &[f64], labels: &[f64]) -> Result<Vec<usize>> {
    check_len("labels", labels.len(), scores.len())?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        descending(scores[a], scores[b])
            .then_with(|| labels[a].partial_cmp(&labels[b]).unwrap_or(Ordering::Equal))
            .then(a.cmp(&b))
    });
    Ok(order)
}

/// Sort positions by descending score, ties by ascending index.
pub fn fixed_argsort(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| descending(scores[a], scores[b]).then(a.cmp(&b)));
    order
}

/// `sum_i r_i [z_i > 0] / (1 + #{j < i : z_j > 0})`.
pub fn dcg_rr_eval(scores: &[f64], labels: &[f64]) -> Result<f64> {
    check_len("labels", labels.len(), scores.len())?;
    let mut included = 0usize;
    let mut total = 0.0;
    for (&z, &r) in scores.iter().zip(labels) {
        if z > 0.0 {
            included += 1;
            total += r / included as f64;
        }
    }
    Ok(total)
}

/// Evaluate the metric on one query.
pub fn eval_metric(scores: &[f64], labels: &[f64], spec: &MetricSpec) -> Result<f64> {
    QueryMetric::new(*spec, labels.to_vec())?.quality(scores)
}

/// A metric bound to the labels of one query, with the position weights,
/// discounts and gains precomputed.
#[derive(Clone, Debug)]
pub struct QueryMetric {
    spec: MetricSpec,
    labels: Vec<f64>,
    params: Option<GainDiscount>,
}

impl QueryMetric {
    pub fn new(spec: MetricSpec, labels: Vec<f64>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Empty("query has no documents"));
        }
        spec.validate_labels(&labels)?;
        let params = match spec.kind {
            MetricKind::DcgRr => None,
            _ => Some(GainDiscount::new(&spec, &labels)?),
        };
        Ok(Self { spec, labels, params })
    }

    pub fn spec(&self) -> &MetricSpec {
        &self.spec
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `None` for metrics outside the generalized weight/discount family.
    pub fn params(&self) -> Option<&GainDiscount> {
        self.params.as_ref()
    }

    /// True when no score assignment can change the value.
    pub fn is_constant(&self) -> bool {
        match &self.params {
            Some(p) => p.is_constant(),
            None => self.labels.iter().all(|&r| r == 0.0),
        }
    }

    pub fn order(&self, scores: &[f64]) -> Result<Vec<usize>> {
        match self.spec.ties {
            TiePolicy::Worst => worst_argsort(scores, &self.labels),
            TiePolicy::Fixed => Ok(fixed_argsort(scores)),
        }
    }

    pub fn quality(&self, scores: &[f64]) -> Result<f64> {
        check_len("scores", scores.len(), self.labels.len())?;
        check_finite("scores", scores)?;
        match &self.params {
            None => dcg_rr_eval(scores, &self.labels),
            Some(p) => Ok(p.quality_of_order(&self.order(scores)?)),
        }
    }

    /// Build the cumulative statistics for noisy (tie-free) scores.
    pub fn ranked_state(&self, noisy: &[f64]) -> Result<RankedState> {
        check_len("scores", noisy.len(), self.labels.len())?;
        check_finite("scores", noisy)?;
        let params = self.params.as_ref().ok_or(Error::Unsupported {
            metric: self.spec.to_string(),
            operation: "cumulative statistics",
        })?;
        Ok(RankedState::build(noisy, &self.labels, params))
    }
}
