use super::{MetricKind, MetricSpec};
use crate::error::{Error, Result};

/// Parameters of the generalized metric
/// `offset + sum_i w_i g(r_{s_i}) prod_{j<i} d_{s_j}`.
///
/// Weights are indexed by position, gains and discounts by document.
#[derive(Clone, Debug, PartialEq)]
pub struct GainDiscount {
    pub weights: Vec<f64>,
    pub gains: Vec<f64>,
    pub discounts: Vec<f64>,
    /// Only non-zero for NDCG on a query without relevant documents, where
    /// every ranking is ideal.
    pub offset: f64,
}

impl GainDiscount {
    pub fn new(spec: &MetricSpec, labels: &[f64]) -> Result<Self> {
        let n = labels.len();
        if n == 0 {
            return Err(Error::Empty("query has no documents"));
        }
        spec.validate_labels(labels)?;
        let gain = spec.effective_gain(labels);
        let gains: Vec<f64> = labels.iter().map(|&r| gain.apply(r)).collect();
        let k = spec.cutoff(n);
        let log_discount = |i: usize| if i < k { 1.0 / ((i + 2) as f64).log2() } else { 0.0 };
        let reciprocal = |i: usize| if i < k { 1.0 / (i + 1) as f64 } else { 0.0 };

        let params = match spec.kind {
            MetricKind::Dcg => Self {
                weights: (0..n).map(log_discount).collect(),
                discounts: vec![1.0; n],
                gains,
                offset: 0.0,
            },
            MetricKind::Ndcg => {
                let mut ideal = gains.clone();
                ideal.sort_by(|a, b| b.total_cmp(a));
                let max_dcg: f64 = ideal.iter().enumerate().map(|(i, g)| g * log_discount(i)).sum();
                if max_dcg > 0.0 {
                    Self {
                        weights: (0..n).map(|i| log_discount(i) / max_dcg).collect(),
                        discounts: vec![1.0; n],
                        gains,
                        offset: 0.0,
                    }
                } else {
                    Self {
                        weights: vec![0.0; n],
                        discounts: vec![1.0; n],
                        gains,
                        offset: 1.0,
                    }
                }
            }
            MetricKind::Err | MetricKind::Mrr => Self {
                weights: (0..n).map(reciprocal).collect(),
                discounts: gains.iter().map(|g| 1.0 - g).collect(),
                gains,
                offset: 0.0,
            },
            MetricKind::DcgRr => {
                return Err(Error::Unsupported {
                    metric: spec.to_string(),
                    operation: "position weights",
                })
            }
        };
        Ok(params)
    }

    pub fn len(&self) -> usize {
        self.gains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gains.is_empty()
    }

    pub fn is_constant(&self) -> bool {
        self.weights.iter().all(|&w| w == 0.0) || self.gains.iter().all(|&g| g == 0.0)
    }

    /// Index of the last position with a non-zero weight, if any.
    pub fn last_weighted_position(&self) -> Option<usize> {
        self.weights.iter().rposition(|&w| w != 0.0)
    }

    pub fn quality_of_order(&self, order: &[usize]) -> f64 {
        let mut prefix = 1.0;
        let mut total = 0.0;
        for (&w, &doc) in self.weights.iter().zip(order) {
            total += w * self.gains[doc] * prefix;
            prefix *= self.discounts[doc];
        }
        self.offset + total
    }
}
