//! Evaluation metrics: MAE, precision/recall at N and the half-life
//! ranking utility.

use std::collections::HashSet;

use crate::error::{Error, Result};

/// Mean absolute error between predictions and truths (fractional
/// predictions from the expected-rating read-out are fine).
pub fn mae(predicted: &[f64], truth: &[f64]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::Shape(format!(
            "{} predictions vs {} truths",
            predicted.len(),
            truth.len()
        )));
    }
    if predicted.is_empty() {
        return Err(Error::Shape("mae over zero pairs".into()));
    }
    let total: f64 = predicted
        .iter()
        .zip(truth)
        .map(|(p, t)| (p - t).abs())
        .sum();
    Ok(total / predicted.len() as f64)
}

/// Precision and recall of the top-N recommendations against a relevant
/// set. Recall is `None` (excluded from averages) when the relevant set is
/// empty; precision divides by min(N, list length).
pub fn precision_recall_at_n(
    recommended: &[u32],
    relevant: &HashSet<u32>,
    n: usize,
) -> Result<(f64, Option<f64>)> {
    if n < 1 {
        return Err(Error::InvalidArgument("N must be >= 1".into()));
    }
    let denom = n.min(recommended.len());
    let hits = recommended
        .iter()
        .take(n)
        .filter(|i| relevant.contains(i))
        .count();
    let precision = if denom == 0 {
        0.0
    } else {
        hits as f64 / denom as f64
    };
    let recall = if relevant.is_empty() {
        None
    } else {
        Some(hits as f64 / relevant.len() as f64)
    };
    Ok((precision, recall))
}

/// Half-life configuration for the ranking utility.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankingUtilityConfig {
    pub half_life: f64,
}

impl RankingUtilityConfig {
    pub fn new(half_life: f64) -> Result<Self> {
        if !(half_life > 1.0) {
            return Err(Error::InvalidArgument(format!(
                "half_life must be > 1, got {half_life}"
            )));
        }
        Ok(Self { half_life })
    }
}

/// Exponential position-discounted utility of per-user recommendation
/// lists, normalized against each user's ideal list and expressed as a
/// percentage. A found test item at 1-based position p is worth
/// 2^{-(p-1)/(half_life-1)}; test items missing from the list are worth 0;
/// users with empty test sets are excluded from both sums.
pub fn ranking_utility(
    per_user_recs: &[Vec<u32>],
    per_user_test_sets: &[HashSet<u32>],
    config: RankingUtilityConfig,
) -> Result<f64> {
    if per_user_recs.len() != per_user_test_sets.len() {
        return Err(Error::Shape(format!(
            "{} rec lists vs {} test sets",
            per_user_recs.len(),
            per_user_test_sets.len()
        )));
    }
    let decay = |p0: f64| 2.0f64.powf(-p0 / (config.half_life - 1.0));
    let mut achieved = 0.0;
    let mut ideal = 0.0;
    let mut counted = 0usize;
    for (recs, tests) in per_user_recs.iter().zip(per_user_test_sets) {
        if tests.is_empty() {
            continue;
        }
        counted += 1;
        for (pos0, item) in recs.iter().enumerate() {
            if tests.contains(item) {
                achieved += decay(pos0 as f64);
            }
        }
        for p0 in 0..tests.len() {
            ideal += decay(p0 as f64);
        }
    }
    if counted == 0 {
        return Err(Error::EmptyTestSet);
    }
    Ok(100.0 * achieved / ideal)
}

/// `name=value` lines for the metrics report.
pub fn metrics_report(pairs: &[(&str, f64)]) -> String {
    let mut out = String::new();
    for (name, value) in pairs {
        out.push_str(&format!("{name}={value}\n"));
    }
    out
}
