//! Paired significance test for per-query metric values.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{check_finite, check_len, Error, Result};

/// Set when the differences have zero spread, so the t statistic is not a
/// finite number.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Degenerate {
    /// Every difference is zero.
    Zero,
    /// All differences equal a positive constant.
    Positive,
    /// All differences equal a negative constant.
    Negative,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PairedTTest {
    pub n: usize,
    pub mean_diff: f64,
    pub t: f64,
    /// `P(T >= t)` under the null: small values support `mean(a - b) > 0`.
    pub p_one_tailed: Option<f64>,
    pub degenerate: Option<Degenerate>,
}

pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<PairedTTest> {
    check_len("paired sample", b.len(), a.len())?;
    if a.len() < 2 {
        return Err(Error::Config(format!(
            "paired t-test needs at least 2 pairs, got {}",
            a.len()
        )));
    }
    check_finite("first sample", a)?;
    check_finite("second sample", b)?;
    let n = a.len();
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let spread = diffs.iter().any(|&d| d != diffs[0]);
    if !spread || var == 0.0 {
        let (t, p, flag) = if mean > 0.0 {
            (f64::INFINITY, Some(0.0), Degenerate::Positive)
        } else if mean < 0.0 {
            (f64::NEG_INFINITY, Some(1.0), Degenerate::Negative)
        } else {
            (f64::NAN, None, Degenerate::Zero)
        };
        return Ok(PairedTTest {
            n,
            mean_diff: mean,
            t,
            p_one_tailed: p,
            degenerate: Some(flag),
        });
    }
    let t = mean / (var / n as f64).sqrt();
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).map_err(|e| Error::Config(e.to_string()))?;
    Ok(PairedTTest {
        n,
        mean_diff: mean,
        t,
        p_one_tailed: Some(dist.sf(t)),
        degenerate: None,
    })
}
