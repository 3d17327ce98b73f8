use std::cmp::Ordering;

use super::GainDiscount;
use crate::error::{Error, Result};

/// A sorted list of noisy scores together with cumulative statistics that
/// give the metric value after moving any single document in O(1).
///
/// Positions are 0-based. Every cumulative array has length `n + 1` and
/// entry `m` aggregates the first `m` positions, so entry 0 is always the
/// empty aggregate.
#[derive(Clone, Debug)]
pub struct RankedState {
    order: Vec<usize>,
    position: Vec<usize>,
    scores: Vec<f64>,
    weights: Vec<f64>,
    gains: Vec<f64>,
    discounts: Vec<f64>,
    offset: f64,
    /// `prefix[m] = prod_{l<m} d_l`.
    prefix: Vec<f64>,
    /// `sum_{l<m} w_{l+1} g_l prefix_l`: every document pushed one place down.
    s_up: Vec<f64>,
    /// `sum_{l<m} w_l g_l prefix_l`: the metric itself.
    s_mid: Vec<f64>,
    /// `sum_{l<m} w_{l-1} g_l prefix_l`: every document pulled one place up.
    s_low: Vec<f64>,
    // Zero discounts (ERR with r = 1, MRR) cannot be divided out of the
    // prefix product, so the product of non-zero discounts and the number of
    // zeros are tracked separately.
    nonzero_prefix: Vec<f64>,
    zero_count: Vec<u32>,
    s_low_one_zero: Vec<f64>,
    zero_positions: [Option<usize>; 2],
    last_weighted: Option<usize>,
}

impl RankedState {
    pub(super) fn build(noisy: &[f64], labels: &[f64], params: &GainDiscount) -> Self {
        let n = noisy.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            noisy[b]
                .partial_cmp(&noisy[a])
                .unwrap_or(Ordering::Equal)
                .then_with(|| labels[a].partial_cmp(&labels[b]).unwrap_or(Ordering::Equal))
                .then(a.cmp(&b))
        });
        let mut scores: Vec<f64> = order.iter().map(|&d| noisy[d]).collect();
        for m in 1..n {
            if scores[m] >= scores[m - 1] {
                let nudged = scores[m - 1].next_down();
                log::warn!(
                    "exact tie between noisy scores at positions {} and {}; nudging {} to {}",
                    m - 1,
                    m,
                    scores[m],
                    nudged
                );
                scores[m] = nudged;
            }
        }
        let mut position = vec![0; n];
        for (m, &d) in order.iter().enumerate() {
            position[d] = m;
        }
        let weights = params.weights.clone();
        let gains: Vec<f64> = order.iter().map(|&d| params.gains[d]).collect();
        let discounts: Vec<f64> = order.iter().map(|&d| params.discounts[d]).collect();

        let mut prefix = vec![1.0; n + 1];
        let mut nonzero_prefix = vec![1.0; n + 1];
        let mut zero_count = vec![0u32; n + 1];
        let mut s_up = vec![0.0; n + 1];
        let mut s_mid = vec![0.0; n + 1];
        let mut s_low = vec![0.0; n + 1];
        let mut s_low_one_zero = vec![0.0; n + 1];
        let mut zero_positions = [None, None];
        let weight = |m: isize| -> f64 {
            if m < 0 || m as usize >= n {
                0.0
            } else {
                weights[m as usize]
            }
        };
        for m in 0..n {
            let g = gains[m];
            let p = prefix[m];
            let mi = m as isize;
            s_up[m + 1] = s_up[m] + weight(mi + 1) * g * p;
            s_mid[m + 1] = s_mid[m] + weight(mi) * g * p;
            s_low[m + 1] = s_low[m] + weight(mi - 1) * g * p;
            s_low_one_zero[m + 1] = s_low_one_zero[m]
                + if zero_count[m] == 1 {
                    weight(mi - 1) * g * nonzero_prefix[m]
                } else {
                    0.0
                };
            let d = discounts[m];
            prefix[m + 1] = p * d;
            if d == 0.0 {
                nonzero_prefix[m + 1] = nonzero_prefix[m];
                zero_count[m + 1] = zero_count[m] + 1;
                match zero_positions {
                    [None, _] => zero_positions[0] = Some(m),
                    [Some(_), None] => zero_positions[1] = Some(m),
                    _ => {}
                }
            } else {
                nonzero_prefix[m + 1] = nonzero_prefix[m] * d;
                zero_count[m + 1] = zero_count[m];
            }
        }
        let last_weighted = params.last_weighted_position();
        Self {
            order,
            position,
            scores,
            weights,
            gains,
            discounts,
            offset: params.offset,
            prefix,
            s_up,
            s_mid,
            s_low,
            nonzero_prefix,
            zero_count,
            s_low_one_zero,
            zero_positions,
            last_weighted,
        }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Document at each position.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn position_of(&self, doc: usize) -> usize {
        self.position[doc]
    }

    /// Noisy scores in sorted (descending) order.
    pub fn sorted_scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn prefix_products(&self) -> &[f64] {
        &self.prefix
    }

    pub fn s_up(&self) -> &[f64] {
        &self.s_up
    }

    pub fn s_mid(&self) -> &[f64] {
        &self.s_mid
    }

    pub fn s_low(&self) -> &[f64] {
        &self.s_low
    }

    pub fn quality(&self) -> f64 {
        self.offset + self.s_mid[self.len()]
    }

    /// Metric value after the document at position `from` is moved to
    /// position `to`, every other document keeping its relative order.
    pub fn move_to(&self, from: usize, to: usize) -> f64 {
        let (i, t) = (from, to);
        let q = self.quality();
        if t == i {
            return q;
        }
        let g = self.gains[i];
        let d = self.discounts[i];
        let w = &self.weights;
        let delta = if t < i {
            // documents at t..i shift one place down and gain the factor d
            g * (w[t] * self.prefix[t] - w[i] * self.prefix[i]) + d * (self.s_up[i] - self.s_up[t])
                - (self.s_mid[i] - self.s_mid[t])
        } else if d != 0.0 {
            // documents at i+1..=t shift one place up and lose the factor d
            g * (w[t] * self.prefix[t + 1] / d - w[i] * self.prefix[i]) + (self.s_low[t + 1] - self.s_low[i + 1]) / d
                - (self.s_mid[t + 1] - self.s_mid[i + 1])
        } else if self.zero_count[i] > 0 {
            // an earlier zero discount already hides everything from i on
            0.0
        } else {
            let moved = if self.zero_count[t + 1] == 1 {
                self.nonzero_prefix[t + 1]
            } else {
                0.0
            };
            g * (w[t] * moved - w[i] * self.prefix[i]) + (self.s_low_one_zero[t + 1] - self.s_low_one_zero[i + 1])
                - (self.s_mid[t + 1] - self.s_mid[i + 1])
        };
        q + delta
    }

    /// Metric value after the document at `position` is rescored to
    /// `score`.
    pub fn delta_eval(&self, position: usize, score: f64) -> Result<f64> {
        let n = self.len();
        if position >= n {
            return Err(Error::LengthMismatch {
                what: "position",
                got: position,
                expected: n,
            });
        }
        if !score.is_finite() {
            return Err(Error::NonFinite {
                what: "probe score",
                index: position,
                value: score,
            });
        }
        let above = self.scores.partition_point(|&y| y > score);
        let mut m = above;
        while m < n && self.scores[m] == score {
            if m != position {
                return Err(Error::Tie(score));
            }
            m += 1;
        }
        let target = if self.scores[position] > score {
            above - 1
        } else {
            above
        };
        Ok(self.move_to(position, target))
    }

    /// Jump of the metric as the document at position `from` crosses the
    /// score held at position `at`, from just below to just above.
    ///
    /// The two sides differ by one adjacent swap, so only the pair's own
    /// contributions change.
    pub fn jump_at(&self, from: usize, at: usize) -> f64 {
        let (i, s) = (from, at);
        let (slot, above) = match s.cmp(&i) {
            Ordering::Equal => return 0.0,
            Ordering::Less => (s, self.prefix[s]),
            Ordering::Greater => (s - 1, self.prefix_without(i, s)),
        };
        if above == 0.0 {
            return 0.0;
        }
        let w = &self.weights;
        let w_next = w.get(slot + 1).copied().unwrap_or(0.0);
        let (gj, dj) = (self.gains[i], self.discounts[i]);
        let (gs, ds) = (self.gains[s], self.discounts[s]);
        above * (w[slot] * (gj - gs) + w_next * (gs * dj - gj * ds))
    }

    /// Product of the discounts at positions `< end`, skipping position
    /// `skip` (which must be below `end`).
    fn prefix_without(&self, skip: usize, end: usize) -> f64 {
        let d = self.discounts[skip];
        if d != 0.0 {
            self.prefix[end] / d
        } else if self.zero_count[skip] == 0 && self.zero_count[end] == 1 {
            self.nonzero_prefix[end]
        } else {
            0.0
        }
    }

    /// Jump of the metric as document `doc` crosses the noisy score at
    /// position `at`.
    pub fn jump(&self, doc: usize, at: usize) -> f64 {
        self.jump_at(self.position[doc], at)
    }

    /// Last crossing position that can produce a non-zero jump for the
    /// document at position `from`; `None` when every jump vanishes.
    ///
    /// Swapping neighbours at positions `a, a + 1` changes the metric only
    /// when one of them carries weight and the prefix product at `a` is not
    /// already zero.
    pub fn jump_horizon(&self, from: usize) -> Option<usize> {
        let last = self.last_weighted?;
        let blocking_zero = match self.zero_positions {
            [Some(a), _] if a != from => a,
            [Some(_), Some(b)] => b,
            _ => self.len(),
        };
        Some((last.min(blocking_zero) + 1).min(self.len() - 1))
    }
}
