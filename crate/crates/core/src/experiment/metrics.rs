//! Accuracy metrics over Monte Carlo trials. Inputs in radians, outputs in
//! degrees.

use crate::crb::CrbResult;

/// Estimate-to-truth matching: both sorted ascending, paired in order.
///
/// For scalar angles this pairing minimizes the total squared error over all
/// permutations, so it coincides with the optimal assignment.
pub fn matched_errors(estimate: &[f64], truth: &[f64]) -> Vec<f64> {
    assert_eq!(estimate.len(), truth.len(), "estimate and truth differ in length");
    let mut e = estimate.to_vec();
    let mut t = truth.to_vec();
    e.sort_by(f64::total_cmp);
    t.sort_by(f64::total_cmp);
    e.iter().zip(&t).map(|(a, b)| a - b).collect()
}

/// `sqrt(mean_trials mean_l (θ̂_l − θ_l)²)`, degrees.
pub fn rmse(estimates: &[Vec<f64>], truth: &[f64]) -> f64 {
    if estimates.is_empty() {
        return f64::NAN;
    }
    let total: f64 = estimates
        .iter()
        .map(|e| {
            let errs = matched_errors(e, truth);
            errs.iter().map(|x| x * x).sum::<f64>() / errs.len() as f64
        })
        .sum();
    (total / estimates.len() as f64).sqrt().to_degrees()
}

/// Smallest pairwise gap between true DOAs (radians); `+∞` for one source.
pub fn min_separation(truth: &[f64]) -> f64 {
    let mut t = truth.to_vec();
    t.sort_by(f64::total_cmp);
    t.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
}

/// A trial resolves the sources when every matched error is strictly below
/// half the minimum separation of the true DOAs.
pub fn resolved(estimate: &[f64], truth: &[f64]) -> bool {
    let half = 0.5 * min_separation(truth);
    matched_errors(estimate, truth).iter().all(|e| e.abs() < half)
}

/// Percentage of resolved trials.
pub fn resolution_percentage(estimates: &[Vec<f64>], truth: &[f64]) -> f64 {
    if estimates.is_empty() {
        return f64::NAN;
    }
    let ok = estimates.iter().filter(|e| resolved(e, truth)).count();
    100.0 * ok as f64 / estimates.len() as f64
}

/// `sqrt(mean_l CRB_ll)`, degrees.
pub fn crb_summary(crb: &CrbResult) -> f64 {
    crb.summary_deg()
}
