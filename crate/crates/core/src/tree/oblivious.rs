use rayon::prelude::*;

use super::binarize::BinnedMatrix;
use crate::error::{check_len, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Split {
    pub feature: usize,
    /// Index into the feature's border list.
    pub border: usize,
    pub threshold: f64,
}

/// A symmetric tree: every node at a level shares the same split, so a leaf
/// is addressed by the bit pattern of the split outcomes.
#[derive(Clone, Debug, PartialEq)]
pub struct ObliviousTree {
    pub splits: Vec<Split>,
    pub leaf_values: Vec<f64>,
}

impl ObliviousTree {
    pub fn depth(&self) -> usize {
        self.splits.len()
    }

    /// Leaf of a raw feature row; bit `l` is set when split `l` goes right.
    pub fn leaf_of_row(&self, row: &[f64]) -> usize {
        self.splits.iter().enumerate().fold(0, |leaf, (l, s)| {
            leaf | (usize::from(row[s.feature] > s.threshold) << l)
        })
    }

    pub fn leaf_of_binned(&self, binned: &BinnedMatrix, row: usize) -> usize {
        self.splits.iter().enumerate().fold(0, |leaf, (l, s)| {
            leaf | (usize::from(binned.column(s.feature)[row] as usize > s.border) << l)
        })
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.leaf_values[self.leaf_of_row(row)]
    }
}

struct Candidate {
    score: f64,
    feature: usize,
    border: usize,
}

/// Fits a tree of at most `depth` levels to `targets` by greedy least
/// squares. Each level picks the split maximizing the sum over resulting
/// leaves of `sum^2 / count`; ties go to the lowest feature, then the lowest
/// border. Growth stops early when no unused split separates any leaf.
pub fn fit_oblivious_tree(
    binned: &BinnedMatrix,
    borders: &[Vec<f64>],
    targets: &[f64],
    depth: usize,
) -> Result<ObliviousTree> {
    let n = binned.rows();
    check_len("targets", targets.len(), n)?;
    crate::error::check_finite("targets", targets)?;
    let mut leaf_of = vec![0usize; n];
    let mut splits: Vec<Split> = Vec::with_capacity(depth);

    for level in 0..depth {
        let leaves = 1usize << level;
        let per_feature: Vec<Option<Candidate>> = (0..binned.feature_count())
            .into_par_iter()
            .map(|f| best_split_for_feature(binned, f, targets, &leaf_of, leaves, &splits))
            .collect();
        let mut best: Option<Candidate> = None;
        for c in per_feature.into_iter().flatten() {
            if best.as_ref().is_none_or(|b| c.score > b.score) {
                best = Some(c);
            }
        }
        let Some(best) = best else { break };
        let column = binned.column(best.feature);
        for (r, leaf) in leaf_of.iter_mut().enumerate() {
            if column[r] as usize > best.border {
                *leaf |= 1 << level;
            }
        }
        splits.push(Split {
            feature: best.feature,
            border: best.border,
            threshold: borders[best.feature][best.border],
        });
    }

    let leaves = 1usize << splits.len();
    let mut sums = vec![0.0; leaves];
    let mut counts = vec![0usize; leaves];
    for (&leaf, &t) in leaf_of.iter().zip(targets) {
        sums[leaf] += t;
        counts[leaf] += 1;
    }
    let leaf_values = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
        .collect();
    Ok(ObliviousTree { splits, leaf_values })
}

fn best_split_for_feature(
    binned: &BinnedMatrix,
    feature: usize,
    targets: &[f64],
    leaf_of: &[usize],
    leaves: usize,
    used: &[Split],
) -> Option<Candidate> {
    let nb = binned.border_count(feature);
    if nb == 0 {
        return None;
    }
    let bins = nb + 1;
    let mut sum = vec![0.0; leaves * bins];
    let mut cnt = vec![0usize; leaves * bins];
    for ((&b, &leaf), &t) in binned.column(feature).iter().zip(leaf_of).zip(targets) {
        let idx = leaf * bins + b as usize;
        sum[idx] += t;
        cnt[idx] += 1;
    }
    let leaf_sum: Vec<f64> = (0..leaves)
        .map(|l| sum[l * bins..(l + 1) * bins].iter().sum())
        .collect();
    let leaf_cnt: Vec<usize> = (0..leaves)
        .map(|l| cnt[l * bins..(l + 1) * bins].iter().sum())
        .collect();

    let mut left_sum = vec![0.0; leaves];
    let mut left_cnt = vec![0usize; leaves];
    let mut best: Option<Candidate> = None;
    for border in 0..nb {
        for l in 0..leaves {
            left_sum[l] += sum[l * bins + border];
            left_cnt[l] += cnt[l * bins + border];
        }
        if used.iter().any(|s| s.feature == feature && s.border == border) {
            continue;
        }
        let mut separates = false;
        let mut score = 0.0;
        for l in 0..leaves {
            let (ls, lc) = (left_sum[l], left_cnt[l]);
            let (rs, rc) = (leaf_sum[l] - ls, leaf_cnt[l] - lc);
            if lc > 0 {
                score += ls * ls / lc as f64;
            }
            if rc > 0 {
                score += rs * rs / rc as f64;
            }
            separates |= lc > 0 && rc > 0;
        }
        if !separates {
            continue;
        }
        if best.as_ref().is_none_or(|b| score > b.score) {
            best = Some(Candidate { score, feature, border });
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::binarize::compute_borders;

    fn fit(rows: &[f64], features: usize, targets: &[f64], depth: usize) -> ObliviousTree {
        let b = compute_borders(rows, features, 254).unwrap();
        let m = b.apply(rows, features).unwrap();
        fit_oblivious_tree(&m, &b.borders, targets, depth).unwrap()
    }

    #[test]
    fn recovers_a_step_function() {
        let rows: Vec<f64> = (0..10).map(f64::from).collect();
        let targets: Vec<f64> = rows.iter().map(|&x| if x > 4.0 { 2.0 } else { -1.0 }).collect();
        let t = fit(&rows, 1, &targets, 1);
        assert_eq!(t.splits[0].threshold, 4.5);
        assert_eq!(t.leaf_values, vec![-1.0, 2.0]);
    }

    #[test]
    fn ties_prefer_lowest_feature() {
        // identical columns: both features give the same gain
        let rows = [0.0, 0.0, 1.0, 1.0];
        let t = fit(&rows, 2, &[1.0, -1.0], 1);
        assert_eq!(t.splits[0].feature, 0);
    }

    #[test]
    fn stops_when_nothing_separates() {
        let rows = [0.0, 1.0];
        let t = fit(&rows, 1, &[1.0, 3.0], 4);
        assert_eq!(t.depth(), 1);
        assert_eq!(t.leaf_values, vec![1.0, 3.0]);
    }

    #[test]
    fn constant_features_give_a_stump() {
        let rows = [5.0, 5.0, 5.0];
        let t = fit(&rows, 1, &[1.0, 2.0, 6.0], 3);
        assert_eq!(t.depth(), 0);
        assert_eq!(t.leaf_values, vec![3.0]);
    }

    #[test]
    fn leaves_are_target_means_and_sum_is_preserved() {
        let rows: Vec<f64> = (0..40).map(|i| ((i * 7) % 13) as f64).collect();
        let targets: Vec<f64> = (0..20).map(|i| ((i * 5) % 11) as f64 - 5.0).collect();
        let t = fit(&rows, 2, &targets, 3);
        let total: f64 = (0..20).map(|r| t.predict_row(&rows[2 * r..2 * r + 2])).sum();
        let expected: f64 = targets.iter().sum();
        assert!((total - expected).abs() < 1e-9);
    }

    #[test]
    fn binned_and_raw_routing_agree() {
        let rows: Vec<f64> = (0..60).map(|i| ((i * 37) % 17) as f64 * 0.3).collect();
        let targets: Vec<f64> = (0..20).map(|i| (i as f64).sin()).collect();
        let b = compute_borders(&rows, 3, 254).unwrap();
        let m = b.apply(&rows, 3).unwrap();
        let t = fit_oblivious_tree(&m, &b.borders, &targets, 4).unwrap();
        for r in 0..20 {
            assert_eq!(t.leaf_of_binned(&m, r), t.leaf_of_row(&rows[3 * r..3 * r + 3]));
        }
    }
}
