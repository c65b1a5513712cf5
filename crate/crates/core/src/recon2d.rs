//! 2D ghost-image reconstruction from bucket values and known patterns.
//!
//! Four methods, in increasing sophistication:
//! - `xc`: the plain cross-correlation estimate, the pattern-weighted sum of
//!   mean-subtracted bucket values;
//! - `ixc`: Landweber refinement of the bucket-consistency objective with
//!   step γ = α/σ², σ² the spatially averaged pattern variance;
//! - `cg_xc`: conjugate-gradient iteration on the normal equations of the
//!   bucket system (CGLS form);
//! - `cs_ixc`: the IXC update interleaved with light sparsity priors.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::patterns::PatternStack;
use crate::sparsity::{apply_priors_2d, Prior};

/// A reconstructed 2D ghost projection.
#[derive(Debug, Clone)]
pub struct GhostImage {
    pub data: Array2<f64>,
    pub method: String,
    pub iterations: usize,
}

impl GhostImage {
    pub fn n(&self) -> usize {
        self.data.dim().0
    }
}

/// Iterative solver configuration.
#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Relaxation scale; 0.25 for well-constrained data, reduced (0.025) as
    /// the problem becomes under-constrained.
    pub alpha: f64,
    pub iterations: usize,
    pub priors: Vec<Prior>,
    /// Abort when the residual grows this many consecutive iterations;
    /// `None` lets a mildly divergent run continue (under-constrained data
    /// with full alpha drifts upward without blowing up).
    pub divergence_window: Option<usize>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            alpha: 0.25,
            iterations: 10,
            priors: Vec::new(),
            divergence_window: Some(5),
        }
    }
}

impl SolverConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.alpha > 0.0) {
            return Err(Error::Parameter(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        if self.iterations < 1 {
            return Err(Error::Parameter("iterations must be ≥ 1".into()));
        }
        for p in &self.priors {
            if let Prior::FourierSparsity { kappa_frac } = p {
                if !(*kappa_frac > 0.0 && *kappa_frac <= 1.0) {
                    return Err(Error::Parameter(format!(
                        "Fourier cutoff must lie in (0, Nyquist], got fraction {kappa_frac} \
                         of Nyquist {}",
                        n / 2
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Result of an iterative 2D solve: the image plus the bucket-residual RMS
/// recorded at the start of every iteration.
#[derive(Debug, Clone)]
pub struct Solve2d {
    pub image: GhostImage,
    pub residual_rms: Vec<f64>,
}

fn check_counts(values: &[f64], patterns: &PatternStack) -> Result<()> {
    if values.is_empty() {
        return Err(Error::EmptyData("no bucket records".into()));
    }
    if values.len() != patterns.len() {
        return Err(Error::Shape {
            expected: format!("{} bucket values", patterns.len()),
            got: format!("{}", values.len()),
        });
    }
    Ok(())
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Cross-correlation estimate: `(1/N) Σ_j (B_j − B̄) I_j(x)`.
pub fn xc(values: &[f64], patterns: &PatternStack) -> Result<GhostImage> {
    check_counts(values, patterns)?;
    let b_mean = mean(values);
    let inv_n = 1.0 / values.len() as f64;
    let coeffs: Vec<f64> = values.iter().map(|b| (b - b_mean) * inv_n).collect();
    Ok(GhostImage {
        data: patterns.accumulate(&coeffs),
        method: "xc".into(),
        iterations: 0,
    })
}

/// XC with the affine calibration that makes different mask classes directly
/// comparable: divide by the ensemble variance and restore the mean level
/// from the measured buckets (`B̄ / (pattern mean · n²)`).
pub fn xc_calibrated(values: &[f64], patterns: &PatternStack) -> Result<GhostImage> {
    let mut img = xc(values, patterns)?;
    let stats = patterns.stats();
    if !(stats.variance > 0.0) {
        return Err(Error::Parameter(
            "pattern ensemble has zero variance; calibration undefined".into(),
        ));
    }
    let n2 = (patterns.n() * patterns.n()) as f64;
    let dc = mean(values) / (stats.mean * n2);
    img.data.mapv_inplace(|v| v / stats.variance + dc);
    img.method = "xc-calibrated".into();
    Ok(img)
}

/// Returns `Err(Divergence)` when the tail of `trace` grew `window` times in
/// a row.
fn divergence_check(trace: &[f64], window: Option<usize>, what: &str) -> Result<()> {
    let Some(window) = window else {
        return Ok(());
    };
    if trace.len() > window {
        let tail = &trace[trace.len() - window - 1..];
        if tail.windows(2).all(|w| w[1] > w[0]) {
            return Err(Error::Divergence {
                iteration: trace.len() - 1,
                suggestion: format!("{what} residual grew {window} consecutive iterations; reduce the relaxation factor"),
            });
        }
    }
    Ok(())
}

fn landweber_loop(
    values: &[f64],
    patterns: &PatternStack,
    cfg: &SolverConfig,
    init: Option<&GhostImage>,
    priors: bool,
    method: &str,
) -> Result<Solve2d> {
    check_counts(values, patterns)?;
    let n = patterns.n();
    cfg.validate(n)?;
    let sigma2 = patterns.stats().variance;
    if !(sigma2 > 0.0) {
        return Err(Error::Parameter(
            "pattern ensemble has zero variance; γ = α/σ² undefined".into(),
        ));
    }
    let gamma = cfg.alpha / sigma2;
    let inv_n = 1.0 / values.len() as f64;
    let mut img = match init {
        Some(g) => g.data.clone(),
        None => Array2::zeros((n, n)),
    };
    let mut trace = Vec::with_capacity(cfg.iterations);
    for _ in 0..cfg.iterations {
        let estimated = patterns.dot_all(img.as_slice().expect("contiguous"));
        let residuals: Vec<f64> = values
            .iter()
            .zip(&estimated)
            .map(|(b, e)| b - e)
            .collect();
        let r_mean = mean(&residuals);
        // The update only sees the mean-subtracted residual, so that is the
        // quantity whose RMS the log tracks and the divergence check watches;
        // the uniform component is invisible to the correlation and would
        // false-trigger the detector.
        let rms = (residuals
            .iter()
            .map(|r| (r - r_mean) * (r - r_mean))
            .sum::<f64>()
            / residuals.len() as f64)
            .sqrt();
        trace.push(rms);
        divergence_check(&trace, cfg.divergence_window, "bucket")?;
        let coeffs: Vec<f64> = residuals
            .iter()
            .map(|r| gamma * (r - r_mean) * inv_n)
            .collect();
        img += &patterns.accumulate(&coeffs);
        if priors {
            apply_priors_2d(&mut img, &cfg.priors);
        }
    }
    Ok(Solve2d {
        image: GhostImage {
            data: img,
            method: method.into(),
            iterations: cfg.iterations,
        },
        residual_rms: trace,
    })
}

/// Iterative cross-correlation: `T ← T + γ·C[B − C*(T)]`. The paper seeds the
/// iteration with the XC estimate; pass `init = None` to start from zero.
pub fn ixc(
    values: &[f64],
    patterns: &PatternStack,
    cfg: &SolverConfig,
    init: Option<&GhostImage>,
) -> Result<Solve2d> {
    landweber_loop(values, patterns, cfg, init, false, "ixc")
}

/// IXC with sparsity priors applied once per iteration (image → gradient →
/// Fourier). Priors are enforced lightly; pair a small `alpha` with many
/// iterations.
pub fn cs_ixc(
    values: &[f64],
    patterns: &PatternStack,
    cfg: &SolverConfig,
    init: Option<&GhostImage>,
) -> Result<Solve2d> {
    if cfg.priors.is_empty() {
        return Err(Error::Parameter(
            "cs_ixc needs at least one sparsity prior".into(),
        ));
    }
    landweber_loop(values, patterns, cfg, init, true, "cs-ixc")
}

/// Conjugate gradients on the normal equations of the bucket system
/// (CGLS), starting from zero. The normal-equation residual is monotone
/// non-increasing; a zero-curvature direction aborts with a solver error.
pub fn cg_xc(values: &[f64], patterns: &PatternStack, iterations: usize) -> Result<Solve2d> {
    check_counts(values, patterns)?;
    if iterations < 1 {
        return Err(Error::Parameter("iterations must be ≥ 1".into()));
    }
    let n = patterns.n();
    let px = n * n;
    let mut x = vec![0.0f64; px];
    let mut r = values.to_vec();
    let mut s = patterns.accumulate(&r);
    let mut gamma: f64 = s.iter().map(|v| v * v).sum();
    let mut p = s.clone();
    let mut trace = Vec::with_capacity(iterations);
    let j = values.len() as f64;
    let scale0 = gamma.max(f64::MIN_POSITIVE);
    for k in 0..iterations {
        trace.push((r.iter().map(|v| v * v).sum::<f64>() / j).sqrt());
        if gamma <= 1e-28 * scale0 {
            // Consistent system already solved (e.g. all-zero buckets).
            break;
        }
        let q = patterns.dot_all(p.as_slice().expect("contiguous"));
        let curvature: f64 = q.iter().map(|v| v * v).sum();
        if curvature <= 0.0 {
            return Err(Error::Solver {
                iteration: k,
                message: "zero curvature direction in CG".into(),
            });
        }
        let step = gamma / curvature;
        for (xi, pi) in x.iter_mut().zip(p.iter()) {
            *xi += step * pi;
        }
        for (ri, qi) in r.iter_mut().zip(&q) {
            *ri -= step * qi;
        }
        s = patterns.accumulate(&r);
        let gamma_new: f64 = s.iter().map(|v| v * v).sum();
        let beta = gamma_new / gamma;
        for (pi, si) in p.iter_mut().zip(s.iter()) {
            *pi = si + beta * *pi;
        }
        gamma = gamma_new;
    }
    let iterations_run = trace.len();
    Ok(Solve2d {
        image: GhostImage {
            data: Array2::from_shape_vec((n, n), x).expect("length n²"),
            method: "cg-xc".into(),
            iterations: iterations_run,
        },
        residual_rms: trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::mad;
    use crate::patterns::PatternStack;
    use crate::projector::project;
    use crate::volume::{build_phantom, SpherePhantomSpec};

    fn phantom_projection() -> Array2<f64> {
        let vol = build_phantom(&SpherePhantomSpec::default()).unwrap();
        project(&vol, 0.0, 0.5).data
    }

    fn buckets_for(truth: &Array2<f64>, patterns: &PatternStack) -> Vec<f64> {
        patterns.dot_all(truth.as_slice().unwrap())
    }

    #[test]
    fn delta_basis_xc_gives_mean_subtracted_truth_over_n() {
        let n = 8;
        let patterns = PatternStack::deltas(n);
        let truth = Array2::from_shape_fn((n, n), |(i, j)| (i * n + j) as f64);
        let values = buckets_for(&truth, &patterns);
        let img = xc(&values, &patterns).unwrap();
        let t_mean = truth.sum() / (n * n) as f64;
        for (got, want) in img.data.iter().zip(truth.iter()) {
            let expect = (want - t_mean) / (n * n) as f64;
            assert!((got - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_buckets_produce_zero_image() {
        let patterns = PatternStack::iid_random(16, 40, 3, 0.5).unwrap();
        let values = vec![7.5; 40];
        let img = xc(&values, &patterns).unwrap();
        assert!(img.data.iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn xc_is_linear_in_the_bucket_vector() {
        let patterns = PatternStack::iid_random(16, 30, 4, 0.5).unwrap();
        let a: Vec<f64> = (0..30).map(|k| (k as f64).sin()).collect();
        let b: Vec<f64> = (0..30).map(|k| (k as f64 * 0.7).cos()).collect();
        let combo: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 2.0 * x - 3.0 * y).collect();
        let ia = xc(&a, &patterns).unwrap();
        let ib = xc(&b, &patterns).unwrap();
        let ic = xc(&combo, &patterns).unwrap();
        for ((c, x), y) in ic.data.iter().zip(ia.data.iter()).zip(ib.data.iter()) {
            assert!((c - (2.0 * x - 3.0 * y)).abs() < 1e-12);
        }
    }

    #[test]
    fn ixc_fixed_point_at_truth() {
        let truth = phantom_projection();
        let patterns = PatternStack::iid_random(64, 200, 5, 0.5).unwrap();
        let values = buckets_for(&truth, &patterns);
        let init = GhostImage {
            data: truth.clone(),
            method: "truth".into(),
            iterations: 0,
        };
        let cfg = SolverConfig {
            alpha: 0.25,
            iterations: 5,
            priors: vec![],
            ..Default::default()
        };
        let out = ixc(&values, &patterns, &cfg, Some(&init)).unwrap();
        assert!(out.residual_rms.iter().all(|&r| r < 1e-9));
        for (a, b) in out.image.data.iter().zip(truth.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn ixc_diverges_loudly_for_huge_alpha() {
        let truth = phantom_projection();
        let patterns = PatternStack::iid_random(64, 100, 6, 0.5).unwrap();
        let values = buckets_for(&truth, &patterns);
        let cfg = SolverConfig {
            alpha: 50.0,
            iterations: 30,
            priors: vec![],
            ..Default::default()
        };
        match ixc(&values, &patterns, &cfg, None) {
            Err(Error::Divergence { suggestion, .. }) => {
                assert!(suggestion.contains("relaxation"), "got: {suggestion}");
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn ixc_residual_monotone_for_small_alpha() {
        let truth = phantom_projection();
        let patterns = PatternStack::iid_random(64, 1000, 7, 0.5).unwrap();
        let values = buckets_for(&truth, &patterns);
        let start = xc(&values, &patterns).unwrap();
        let cfg = SolverConfig {
            alpha: 0.025,
            iterations: 10,
            priors: vec![],
            ..Default::default()
        };
        let out = ixc(&values, &patterns, &cfg, Some(&start)).unwrap();
        for w in out.residual_rms.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12), "residuals {:?}", out.residual_rms);
        }
    }

    #[test]
    fn cg_solves_full_rank_delta_system_exactly() {
        let n = 8;
        let patterns = PatternStack::deltas(n);
        let truth = Array2::from_shape_fn((n, n), |(i, j)| ((i * 31 + j * 7) % 5) as f64);
        let values = buckets_for(&truth, &patterns);
        let out = cg_xc(&values, &patterns, n * n).unwrap();
        for (a, b) in out.image.data.iter().zip(truth.iter()) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn cg_zero_buckets_give_zero_image() {
        let patterns = PatternStack::iid_random(16, 30, 8, 0.5).unwrap();
        let values = vec![0.0; 30];
        let out = cg_xc(&values, &patterns, 10).unwrap();
        assert!(out.image.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cg_normal_residual_non_increasing() {
        let truth = phantom_projection();
        let patterns = PatternStack::iid_random(64, 500, 9, 0.5).unwrap();
        let values = buckets_for(&truth, &patterns);
        let out = cg_xc(&values, &patterns, 10).unwrap();
        for w in out.residual_rms.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12));
        }
    }

    #[test]
    fn cs_requires_a_prior() {
        let patterns = PatternStack::iid_random(16, 30, 10, 0.5).unwrap();
        let values = vec![1.0; 30];
        let cfg = SolverConfig {
            alpha: 0.01,
            iterations: 2,
            priors: vec![],
            ..Default::default()
        };
        assert!(matches!(
            cs_ixc(&values, &patterns, &cfg, None),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn fourier_prior_at_nyquist_matches_plain_ixc() {
        let truth = phantom_projection();
        let patterns = PatternStack::iid_random(64, 300, 11, 0.5).unwrap();
        let values = buckets_for(&truth, &patterns);
        let plain_cfg = SolverConfig {
            alpha: 0.05,
            iterations: 5,
            priors: vec![],
            ..Default::default()
        };
        let cs_cfg = SolverConfig {
            priors: vec![Prior::FourierSparsity { kappa_frac: 1.0 }],
            ..plain_cfg.clone()
        };
        let a = ixc(&values, &patterns, &plain_cfg, None).unwrap();
        let b = cs_ixc(&values, &patterns, &cs_cfg, None).unwrap();
        for (x, y) in a.image.data.iter().zip(b.image.data.iter()) {
            assert!((x - y).abs() < 1e-8);
        }
    }

    #[test]
    fn image_prior_with_vanishing_lambda_keeps_the_fixed_point() {
        let truth = phantom_projection();
        let patterns = PatternStack::iid_random(64, 100, 12, 0.5).unwrap();
        let values = buckets_for(&truth, &patterns);
        let init = GhostImage {
            data: truth.clone(),
            method: "truth".into(),
            iterations: 0,
        };
        let cfg = SolverConfig {
            alpha: 0.1,
            iterations: 3,
            priors: vec![Prior::ImageSparsity { lambda_rel: 1e-15 }],
            ..Default::default()
        };
        let out = cs_ixc(&values, &patterns, &cfg, Some(&init)).unwrap();
        for (a, b) in out.image.data.iter().zip(truth.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn paper_mad_values_for_xc_and_ixc() {
        // One-seed sanity check against the reported values; the acceptance
        // suite repeats this over several seeds.
        let truth = phantom_projection();
        let patterns = PatternStack::iid_random(64, 1000, 42, 0.5).unwrap();
        let values = buckets_for(&truth, &patterns);
        let g_xc = xc(&values, &patterns).unwrap();
        let mad_xc = mad(&g_xc.data, &truth).unwrap();
        assert!((mad_xc - 0.118).abs() < 0.025, "XC MAD {mad_xc}");

        let cfg = SolverConfig {
            alpha: 0.025,
            iterations: 10,
            priors: vec![],
            ..Default::default()
        };
        let out = ixc(&values, &patterns, &cfg, Some(&g_xc)).unwrap();
        let mad_ixc = mad(&out.image.data, &truth).unwrap();
        assert!((mad_ixc - 0.101).abs() < 0.025, "IXC MAD {mad_ixc}");
        assert!(mad_ixc < mad_xc);
    }
}
