//! Reconstruction quality metrics.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Expected bucket value for the default phantom under mean-0.5 masks:
/// 0.5 · 3 · (4/3)π·6³. Used to normalize bucket RMSE values.
pub const DEFAULT_PHANTOM_BUCKET_NORMALIZER: f64 = 1357.1680263507906;

/// Expected bucket value for an arbitrary campaign: pattern mean × total
/// projected mass.
pub fn expected_bucket(pattern_mean: f64, total_mass: f64) -> f64 {
    pattern_mean * total_mass
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub schema_version: u32,
    /// Normalized mean absolute deviation against ground truth.
    pub mad: Option<f64>,
    /// Normalized RMSE between estimated and measured bucket values.
    pub rmse_buckets: Option<f64>,
    pub max_value_used_for_normalization: Option<f64>,
}

impl MetricReport {
    pub fn new() -> Self {
        MetricReport {
            schema_version: 1,
            mad: None,
            rmse_buckets: None,
            max_value_used_for_normalization: None,
        }
    }
}

impl Default for MetricReport {
    fn default() -> Self {
        Self::new()
    }
}

/// Normalized mean absolute deviation: both images are scaled by the same
/// factor, chosen so the ground truth has maximum 1.0, and the mean absolute
/// difference is taken over all pixels.
pub fn mad(estimate: &Array2<f64>, truth: &Array2<f64>) -> Result<f64> {
    if estimate.dim() != truth.dim() {
        return Err(Error::Shape {
            expected: format!("{:?}", truth.dim()),
            got: format!("{:?}", estimate.dim()),
        });
    }
    let max = truth.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(max > 0.0) {
        return Err(Error::Normalization(
            "truth image has no positive maximum to scale by".into(),
        ));
    }
    let sum: f64 = estimate
        .iter()
        .zip(truth.iter())
        .map(|(e, t)| (e - t).abs())
        .sum();
    Ok(sum / (max * estimate.len() as f64))
}

/// √(mean (Bᵉ − B)²) / normalizer.
pub fn bucket_rmse(estimated: &[f64], measured: &[f64], normalizer: f64) -> Result<f64> {
    if estimated.len() != measured.len() {
        return Err(Error::Shape {
            expected: format!("{} bucket values", measured.len()),
            got: format!("{}", estimated.len()),
        });
    }
    if !(normalizer > 0.0) {
        return Err(Error::Normalization(format!(
            "bucket RMSE normalizer must be positive, got {normalizer}"
        )));
    }
    if estimated.is_empty() {
        return Err(Error::EmptyData("bucket RMSE needs ≥ 1 value".into()));
    }
    let mse: f64 = estimated
        .iter()
        .zip(measured)
        .map(|(e, m)| (e - m) * (e - m))
        .sum::<f64>()
        / estimated.len() as f64;
    Ok(mse.sqrt() / normalizer)
}
