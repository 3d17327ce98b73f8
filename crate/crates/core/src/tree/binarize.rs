use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

pub const DEFAULT_MAX_BORDERS: usize = 254;

/// Sorted split thresholds per feature. A value goes to the right branch of
/// border `b` iff it is strictly greater than `b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureBinarization {
    pub borders: Vec<Vec<f64>>,
}

impl FeatureBinarization {
    pub fn feature_count(&self) -> usize {
        self.borders.len()
    }

    /// Number of borders strictly below `value`.
    pub fn bin(&self, feature: usize, value: f64) -> u16 {
        self.borders[feature].partition_point(|&b| b < value) as u16
    }

    pub fn apply(&self, rows: &[f64], feature_count: usize) -> Result<BinnedMatrix> {
        check_len("feature count", feature_count, self.feature_count())?;
        if feature_count == 0 {
            return Ok(BinnedMatrix {
                rows: 0,
                bins: Vec::new(),
                border_counts: Vec::new(),
            });
        }
        if !rows.len().is_multiple_of(feature_count) {
            return Err(Error::LengthMismatch {
                what: "feature matrix",
                got: rows.len(),
                expected: rows.len() / feature_count * feature_count,
            });
        }
        let n = rows.len() / feature_count;
        let mut bins = vec![0u16; n * feature_count];
        for f in 0..feature_count {
            let column = &mut bins[f * n..(f + 1) * n];
            for (r, slot) in column.iter_mut().enumerate() {
                *slot = self.bin(f, rows[r * feature_count + f]);
            }
        }
        Ok(BinnedMatrix {
            rows: n,
            bins,
            border_counts: self.borders.iter().map(Vec::len).collect(),
        })
    }
}

/// Column-major bin indices.
#[derive(Clone, Debug)]
pub struct BinnedMatrix {
    rows: usize,
    bins: Vec<u16>,
    border_counts: Vec<usize>,
}

impl BinnedMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn feature_count(&self) -> usize {
        self.border_counts.len()
    }

    pub fn border_count(&self, feature: usize) -> usize {
        self.border_counts[feature]
    }

    pub fn column(&self, feature: usize) -> &[u16] {
        &self.bins[feature * self.rows..(feature + 1) * self.rows]
    }
}

fn midpoint(a: f64, b: f64) -> f64 {
    let m = a + (b - a) / 2.0;
    if m >= b {
        a
    } else {
        m
    }
}

/// Quantile borders per feature of a row-major matrix.
pub fn compute_borders(rows: &[f64], feature_count: usize, max_borders: usize) -> Result<FeatureBinarization> {
    if feature_count == 0 || rows.is_empty() {
        return Err(Error::Empty("feature matrix"));
    }
    if !rows.len().is_multiple_of(feature_count) {
        return Err(Error::LengthMismatch {
            what: "feature matrix",
            got: rows.len(),
            expected: rows.len() / feature_count * feature_count,
        });
    }
    crate::error::check_finite("features", rows)?;
    let n = rows.len() / feature_count;
    let borders = (0..feature_count)
        .map(|f| {
            let mut values: Vec<f64> = (0..n).map(|r| rows[r * feature_count + f]).collect();
            values.sort_by(f64::total_cmp);
            feature_borders(&values, max_borders)
        })
        .collect();
    Ok(FeatureBinarization { borders })
}

fn feature_borders(sorted: &[f64], max_borders: usize) -> Vec<f64> {
    let mut distinct = sorted.to_vec();
    distinct.dedup();
    if distinct.len() <= max_borders + 1 {
        return distinct.windows(2).map(|w| midpoint(w[0], w[1])).collect();
    }
    let n = sorted.len();
    let mut borders: Vec<f64> = Vec::with_capacity(max_borders);
    for b in 1..=max_borders {
        let mut idx = ((b * n) as f64 / (max_borders + 1) as f64).round() as usize;
        idx = idx.clamp(1, n - 1);
        // inside a run of equal values, move to the nearest run boundary
        if sorted[idx - 1] == sorted[idx] {
            let mut lo = idx;
            while lo > 1 && sorted[lo - 1] == sorted[idx] {
                lo -= 1;
            }
            let mut hi = idx;
            while hi < n - 1 && sorted[hi] == sorted[idx - 1] {
                hi += 1;
            }
            let lo_ok = sorted[lo - 1] < sorted[lo];
            let hi_ok = sorted[hi - 1] < sorted[hi];
            idx = match (lo_ok, hi_ok) {
                (true, true) if idx - lo <= hi - idx => lo,
                (true, true) => hi,
                (true, false) => lo,
                (false, true) => hi,
                (false, false) => continue,
            };
        }
        let border = midpoint(sorted[idx - 1], sorted[idx]);
        if borders.last().is_none_or(|&last| border > last) {
            borders.push(border);
        }
    }
    borders
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng;

    #[test]
    fn constant_feature_has_no_borders() {
        let b = compute_borders(&[2.0, 2.0, 2.0], 1, 254).unwrap();
        assert!(b.borders[0].is_empty());
    }

    #[test]
    fn one_hot_features() {
        let rows = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let b = compute_borders(&rows, 3, 254).unwrap();
        assert_eq!(b.borders, vec![vec![0.5]; 3]);
    }

    #[test]
    fn uniform_quantiles_are_balanced() {
        let mut rng = seeded(17);
        let rows: Vec<f64> = (0..1000).map(|_| rng.random::<f64>()).collect();
        let b = compute_borders(&rows, 1, 255).unwrap();
        let borders = &b.borders[0];
        assert_eq!(borders.len(), 255);
        assert!(borders.windows(2).all(|w| w[0] < w[1]));
        // oracle: bucket populations from the sorted data
        let mut counts = vec![0usize; 256];
        for &v in &rows {
            counts[b.bin(0, v) as usize] += 1;
        }
        let ideal = 1000.0 / 256.0;
        for c in counts {
            assert!((c as f64 - ideal).abs() <= 1.0 + 1e-9, "bucket of {c}");
        }
    }

    #[test]
    fn duplicates_never_produce_equal_borders() {
        let mut rows: Vec<f64> = (0..500).map(|i| (i % 7) as f64).collect();
        rows.extend((0..500).map(|i| i as f64 / 500.0));
        let b = compute_borders(&rows, 1, 16).unwrap();
        assert!(b.borders[0].len() <= 16);
        assert!(b.borders[0].windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn adjacent_floats_split_correctly() {
        let a = 1.0f64;
        let c = a.next_up();
        let b = compute_borders(&[a, c], 1, 4).unwrap();
        assert_eq!(b.bin(0, a), 0);
        assert_eq!(b.bin(0, c), 1);
    }
}
