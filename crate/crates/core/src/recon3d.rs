//! Ghost tomography: the two-step route (per-angle 2D ghost images, then
//! FBP/SIRT with optional volume-domain priors) and the direct route that
//! back-projects per-bucket correlation residuals straight into the volume.

use ndarray::Array2;
use rayon::prelude::*;
use std::sync::Arc;

use crate::bucket::{BucketModel, Dataset};
use crate::error::{Error, Result};
use crate::metrics::bucket_rmse;
use crate::patterns::{PatternStack, PatternStats};
use crate::projector::{back_project, fbp, project, ProjectionImage};
use crate::recon2d::{cg_xc, cs_ixc, ixc, xc, SolverConfig};
use crate::sparsity::{apply_priors_3d, Prior};
use crate::volume::Volume;

/// Result of a tomographic reconstruction.
#[derive(Debug, Clone)]
pub struct TomogramResult {
    pub volume: Volume,
    /// Method chain, e.g. `"xc+fbp"` or `"direct-xc-sirt"`.
    pub method: String,
    pub iterations: usize,
    /// Normalized RMSE between buckets estimated from the final volume and
    /// the measured buckets.
    pub bucket_rmse: Option<f64>,
    /// One residual value per iteration, recorded before each update.
    pub residual_log: Vec<f64>,
}

/// 2D ghost-imaging method used per angle in the two-step route. Iterative
/// methods are seeded with the XC estimate, as in the reference workflow.
#[derive(Debug, Clone)]
pub enum GiMethod {
    Xc,
    Ixc(SolverConfig),
    CgXc(usize),
    CsIxc(SolverConfig),
}

impl GiMethod {
    fn tag(&self) -> &'static str {
        match self {
            GiMethod::Xc => "xc",
            GiMethod::Ixc(_) => "ixc",
            GiMethod::CgXc(_) => "cg-xc",
            GiMethod::CsIxc(_) => "cs-ixc",
        }
    }
}

/// Tomographic stage of the two-step route.
#[derive(Debug, Clone)]
pub enum TomoMethod {
    Fbp,
    FbpThenSirt { iterations: usize },
    /// SIRT with volume-domain sparsity priors applied each iteration,
    /// seeded from the FBP reconstruction.
    SirtCs { iterations: usize, priors: Vec<Prior> },
}

impl TomoMethod {
    fn tag(&self) -> String {
        match self {
            TomoMethod::Fbp => "fbp".into(),
            TomoMethod::FbpThenSirt { iterations } => format!("fbp+sirt{iterations}"),
            TomoMethod::SirtCs { iterations, .. } => format!("fbp+sirt-cs{iterations}"),
        }
    }
}

/// Reconstructs one 2D ghost image per angle.
pub fn ghost_projections(dataset: &Dataset, gi: &GiMethod) -> Result<Vec<ProjectionImage>> {
    dataset
        .angle_set
        .angles
        .par_iter()
        .zip(&dataset.per_angle)
        .map(|(&angle, (stack, values))| {
            let image = match gi {
                GiMethod::Xc => xc(values, stack)?,
                GiMethod::Ixc(cfg) => {
                    let start = xc(values, stack)?;
                    ixc(values, stack, cfg, Some(&start))?.image
                }
                GiMethod::CgXc(iterations) => cg_xc(values, stack, *iterations)?.image,
                GiMethod::CsIxc(cfg) => {
                    let start = xc(values, stack)?;
                    cs_ixc(values, stack, cfg, Some(&start))?.image
                }
            };
            Ok(ProjectionImage {
                data: image.data,
                angle,
            })
        })
        .collect()
}

/// The tomographic stage alone: projections in, volume out. Exposed so exact
/// (non-ghost) projections can be fed through the identical code path.
pub fn tomographic_step(
    projs: &[ProjectionImage],
    n: usize,
    recon_axis_offset: f64,
    tomo: &TomoMethod,
) -> Result<TomogramResult> {
    match tomo {
        TomoMethod::Fbp => {
            let volume = fbp(projs, n, recon_axis_offset)?;
            Ok(TomogramResult {
                volume,
                method: tomo.tag(),
                iterations: 0,
                bucket_rmse: None,
                residual_log: Vec::new(),
            })
        }
        TomoMethod::FbpThenSirt { iterations } => {
            let init = fbp(projs, n, recon_axis_offset)?;
            let opts = crate::projector::SirtOptions {
                iterations: *iterations,
                init: Some(init),
                ..Default::default()
            };
            let (volume, log) = crate::projector::sirt(projs, n, recon_axis_offset, &opts)?;
            Ok(TomogramResult {
                volume,
                method: tomo.tag(),
                iterations: *iterations,
                bucket_rmse: None,
                residual_log: log,
            })
        }
        TomoMethod::SirtCs { iterations, priors } => {
            let init = fbp(projs, n, recon_axis_offset)?;
            let (volume, log) =
                sirt_with_priors(projs, n, recon_axis_offset, *iterations, priors, init)?;
            Ok(TomogramResult {
                volume,
                method: tomo.tag(),
                iterations: *iterations,
                bucket_rmse: None,
                residual_log: log,
            })
        }
    }
}

fn sirt_with_priors(
    projs: &[ProjectionImage],
    n: usize,
    axis_offset: f64,
    iterations: usize,
    priors: &[Prior],
    init: Volume,
) -> Result<(Volume, Vec<f64>)> {
    let angles: Vec<f64> = projs.iter().map(|p| p.angle).collect();
    let mut vol = init;
    let mut log = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let current: Vec<ProjectionImage> = angles
            .par_iter()
            .map(|&a| project(&vol, a, axis_offset))
            .collect();
        let residuals: Vec<ProjectionImage> = projs
            .iter()
            .zip(&current)
            .map(|(meas, cur)| ProjectionImage {
                data: &meas.data - &cur.data,
                angle: meas.angle,
            })
            .collect();
        let sq: f64 = residuals
            .iter()
            .map(|r| r.data.iter().map(|v| v * v).sum::<f64>())
            .sum();
        log.push((sq / (projs.len() * n * n) as f64).sqrt());
        let update = back_project(&residuals, n, axis_offset)?;
        let scale = 1.0 / n as f64;
        for (v, u) in vol.as_slice_mut().iter_mut().zip(update.as_slice()) {
            *v += scale * u;
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        apply_priors_3d(vol.data_mut(), priors);
    }
    Ok((vol, log))
}

/// Two-step ghost tomography: per-angle 2D ghost images, then a tomographic
/// step. Records the final bucket RMSE against the measured values.
pub fn two_step(
    dataset: &Dataset,
    gi: &GiMethod,
    tomo: &TomoMethod,
    recon_axis_offset: f64,
    rmse_normalizer: Option<f64>,
) -> Result<TomogramResult> {
    if dataset.angle_set.len() < 2 {
        return Err(Error::Config(
            "two-step tomography needs at least 2 viewing angles".into(),
        ));
    }
    if dataset.model != BucketModel::Attenuation {
        return Err(Error::Config(
            "two-step reconstruction works on attenuation-model buckets".into(),
        ));
    }
    let n = dataset.per_angle[0].0.n();
    let ghosts = ghost_projections(dataset, gi)?;
    let mut result = tomographic_step(&ghosts, n, recon_axis_offset, tomo)?;
    result.method = format!("{}+{}", gi.tag(), tomo.tag());
    result.bucket_rmse = Some(dataset_rmse(
        dataset,
        &result.volume,
        recon_axis_offset,
        rmse_normalizer,
    ));
    Ok(result)
}

/// Normalized RMSE of buckets predicted from `vol` against the dataset.
pub fn dataset_rmse(
    dataset: &Dataset,
    vol: &Volume,
    recon_axis_offset: f64,
    normalizer: Option<f64>,
) -> f64 {
    let pairs: Vec<(Vec<f64>, &Vec<f64>)> = dataset
        .angle_set
        .angles
        .par_iter()
        .zip(&dataset.per_angle)
        .map(|(&angle, (stack, values))| {
            let proj = project(vol, angle, recon_axis_offset);
            let flat = proj.data.as_slice().expect("contiguous");
            let est = match dataset.model {
                BucketModel::Attenuation => stack.dot_all(flat),
                BucketModel::Transmission => {
                    let t: Vec<f64> = flat.iter().map(|&a| (-a).exp()).collect();
                    stack.dot_all(&t)
                }
            };
            (est, values)
        })
        .collect();
    let mut est_all = Vec::with_capacity(dataset.total_buckets());
    let mut meas_all = Vec::with_capacity(dataset.total_buckets());
    for (est, meas) in pairs {
        est_all.extend(est);
        meas_all.extend(meas.iter().copied());
    }
    let norm = normalizer.unwrap_or_else(|| {
        meas_all.iter().sum::<f64>() / meas_all.len().max(1) as f64
    });
    bucket_rmse(&est_all, &meas_all, norm).expect("lengths match by construction")
}

/// How bucket residuals are converted to attenuation residuals.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResidualMode {
    /// Weak-absorption: buckets are linear in projected attenuation.
    Weak,
    /// Full exponential model via log-domain correlation estimates.
    NonWeak,
}

/// Configuration of the direct bucket-to-volume solver.
#[derive(Debug, Clone)]
pub struct DirectConfig {
    pub iterations: usize,
    /// Landweber relaxation; `None` uses 1/J.
    pub beta: Option<f64>,
    /// Cross-correlation refinements per angle before each back-projection.
    /// More than one improves each update at O(N⁵) cost versus O(N⁴).
    pub inner_xc_iterations: usize,
    pub clamp_nonnegative: bool,
    /// Restrict updates to the inscribed cylinder. Rays are sampled over the
    /// grid side length, so corner voxels are only partially covered at
    /// oblique angles; letting updates accumulate there leaves a model
    /// inconsistency that stalls convergence.
    pub support_cylinder: bool,
    /// Rotation-axis position assumed by the reconstruction.
    pub recon_axis_offset: f64,
    /// Normalizer for the logged bucket RMSE; `None` uses the mean measured
    /// bucket (1357.17 for the default phantom under mean-0.5 masks).
    pub rmse_normalizer: Option<f64>,
    pub residual: ResidualMode,
    pub init: Option<Volume>,
}

impl Default for DirectConfig {
    fn default() -> Self {
        DirectConfig {
            iterations: 10,
            beta: None,
            inner_xc_iterations: 1,
            clamp_nonnegative: true,
            support_cylinder: true,
            recon_axis_offset: 0.0,
            rmse_normalizer: None,
            residual: ResidualMode::Weak,
            init: None,
        }
    }
}

/// Variance-normalized correlation estimate of an image from bucket-domain
/// values: `(1/(N σ²)) Σ_j (v_j − center) I_j(x)` with its spatial mean
/// replaced by the exact level implied by the value average,
/// `center / (m̄ n²)`.
///
/// Mean subtraction leaves the image's mean level riding on the per-pattern
/// total fluctuations — a noisy channel for i.i.d. ensembles and a missing
/// one for scanned masks (constant totals). Substituting the explicit level
/// makes the mean deterministic for both ensemble types.
pub(crate) fn correlation_estimate(
    stack: &PatternStack,
    values: &[f64],
    center: f64,
    stats: &PatternStats,
) -> Array2<f64> {
    let n = stack.n();
    let px = (n * n) as f64;
    let scale = 1.0 / (values.len() as f64 * stats.variance);
    let coeffs: Vec<f64> = values.iter().map(|v| (v - center) * scale).collect();
    let mut img = stack.accumulate(&coeffs);
    let spatial_mean = img.sum() / px;
    let dc = center / (stats.mean * px);
    img.mapv_inplace(|v| v - spatial_mean + dc);
    img
}

/// Combined ensemble statistics across per-angle stacks (pixelwise counts
/// pooled over the union of all patterns).
fn combined_stats(stacks: &[&PatternStack]) -> PatternStats {
    let n = stacks[0].n();
    let px = n * n;
    let mut pixel_sums = vec![0u64; px];
    let mut count = 0u64;
    for stack in stacks {
        count += stack.len() as u64;
        for j in 0..stack.len() {
            for (s, &b) in pixel_sums.iter_mut().zip(stack.row(j)) {
                *s += b as u64;
            }
        }
    }
    let mut mean_total = 0.0;
    let mut var_total = 0.0;
    for &s in &pixel_sums {
        let p = s as f64 / count as f64;
        mean_total += p;
        var_total += p * (1.0 - p);
    }
    PatternStats {
        mean: mean_total / px as f64,
        variance: var_total / px as f64,
    }
}

/// Per-angle attenuation-residual images for the current volume estimate
/// under the weak-absorption model.
fn weak_residual_images(
    dataset: &Dataset,
    vol: &Volume,
    cfg: &DirectConfig,
    stats: &PatternStats,
    global_mean_hint: f64,
) -> (Vec<ProjectionImage>, f64, f64) {
    let results: Vec<(ProjectionImage, f64, f64, usize)> = dataset
        .angle_set
        .angles
        .par_iter()
        .zip(&dataset.per_angle)
        .map(|(&angle, (stack, values))| {
            let proj = project(vol, angle, cfg.recon_axis_offset);
            let flat = proj.data.as_slice().expect("contiguous");
            let est = stack.dot_all(flat);
            let residuals: Vec<f64> = values.iter().zip(&est).map(|(b, e)| b - e).collect();
            let sq: f64 = residuals.iter().map(|r| r * r).sum();
            let center = if residuals.len() >= 2 {
                residuals.iter().sum::<f64>() / residuals.len() as f64
            } else {
                global_mean_hint
            };
            let centered_sq: f64 = residuals.iter().map(|r| (r - center) * (r - center)).sum();
            let mut delta = correlation_estimate(stack, &residuals, center, stats);
            for _ in 1..cfg.inner_xc_iterations {
                let d_flat = delta.as_slice().expect("contiguous");
                let extra = stack.dot_all(d_flat);
                let refined: Vec<f64> = residuals
                    .iter()
                    .zip(&extra)
                    .map(|(r, e)| r - e)
                    .collect();
                let c = if refined.len() >= 2 {
                    refined.iter().sum::<f64>() / refined.len() as f64
                } else {
                    0.0
                };
                delta += &correlation_estimate(stack, &refined, c, stats);
            }
            (
                ProjectionImage { data: delta, angle },
                sq,
                centered_sq,
                residuals.len(),
            )
        })
        .collect();
    let mut images = Vec::with_capacity(results.len());
    let mut sq_total = 0.0;
    let mut centered_total = 0.0;
    let mut count = 0usize;
    for (img, sq, csq, c) in results {
        images.push(img);
        sq_total += sq;
        centered_total += csq;
        count += c;
    }
    (
        images,
        (sq_total / count as f64).sqrt(),
        (centered_total / count as f64).sqrt(),
    )
}

/// Per-angle attenuation-residual images without the weak-absorption
/// approximation: the elementwise log-difference between correlation
/// estimates of the modelled and measured transmission.
pub fn direct_residual_nonweak(
    dataset: &Dataset,
    vol: &Volume,
    recon_axis_offset: f64,
) -> Result<Vec<Array2<f64>>> {
    if dataset.model != BucketModel::Transmission {
        return Err(Error::Config(
            "non-weak residuals need transmission-model buckets".into(),
        ));
    }
    let stacks: Vec<&PatternStack> = dataset.per_angle.iter().map(|(s, _)| s.as_ref()).collect();
    let stats = combined_stats(&stacks);
    let global_mean = dataset.global_mean();
    let images: Vec<Result<Array2<f64>>> = dataset
        .angle_set
        .angles
        .par_iter()
        .zip(&dataset.per_angle)
        .enumerate()
        .map(|(angle_index, (&angle, (stack, values)))| {
            let proj = project(vol, angle, recon_axis_offset);
            let t_img: Vec<f64> = proj
                .data
                .iter()
                .map(|&a| (-a).exp())
                .collect();
            let model: Vec<f64> = stack.dot_all(&t_img);
            let center_meas = if values.len() >= 2 {
                values.iter().sum::<f64>() / values.len() as f64
            } else {
                global_mean
            };
            let center_model = if model.len() >= 2 {
                model.iter().sum::<f64>() / model.len() as f64
            } else {
                center_meas
            };
            let t_data = correlation_estimate(stack, values, center_meas, &stats);
            let t_model = correlation_estimate(stack, &model, center_model, &stats);
            let n = stack.n();
            let mut out = Array2::zeros((n, n));
            for row in 0..n {
                for col in 0..n {
                    let d = t_data[[row, col]];
                    let m = t_model[[row, col]];
                    if d <= 0.0 || m <= 0.0 {
                        return Err(Error::Domain {
                            angle_index,
                            row,
                            col,
                            message: format!(
                                "non-positive correlation value (data {d:.3e}, model {m:.3e}); \
                                 too few buckets or absorption too strong for the log residual"
                            ),
                        });
                    }
                    out[[row, col]] = m.ln() - d.ln();
                }
            }
            Ok(out)
        })
        .collect();
    images.into_iter().collect()
}

/// Weak-model per-angle residual images, exposed for the equivalence check
/// between the direct update and back-projected per-angle correlations.
pub fn direct_residual_weak(
    dataset: &Dataset,
    vol: &Volume,
    recon_axis_offset: f64,
) -> Result<Vec<Array2<f64>>> {
    if dataset.model != BucketModel::Attenuation {
        return Err(Error::Config(
            "weak residuals need attenuation-model buckets".into(),
        ));
    }
    let stacks: Vec<&PatternStack> = dataset.per_angle.iter().map(|(s, _)| s.as_ref()).collect();
    let stats = combined_stats(&stacks);
    let cfg = DirectConfig {
        recon_axis_offset,
        ..Default::default()
    };
    let global_mean = global_residual_mean(dataset, vol, recon_axis_offset);
    let (images, _, _) = weak_residual_images(dataset, vol, &cfg, &stats, global_mean);
    Ok(images.into_iter().map(|p| p.data).collect())
}

fn global_residual_mean(dataset: &Dataset, vol: &Volume, recon_axis_offset: f64) -> f64 {
    let sums: Vec<(f64, usize)> = dataset
        .angle_set
        .angles
        .par_iter()
        .zip(&dataset.per_angle)
        .map(|(&angle, (stack, values))| {
            let proj = project(vol, angle, recon_axis_offset);
            let est = stack.dot_all(proj.data.as_slice().expect("contiguous"));
            let s: f64 = values.iter().zip(&est).map(|(b, e)| b - e).sum();
            (s, values.len())
        })
        .collect();
    let (total, count) = sums
        .iter()
        .fold((0.0, 0usize), |(s, c), (x, k)| (s + x, c + k));
    total / count.max(1) as f64
}

/// Direct bucket-to-volume reconstruction: each iteration back-projects the
/// per-angle correlation of bucket residuals and takes a relaxed SIRT step,
/// `μ ← μ + βJ/n · P*[residual images]`. Supports a single bucket per angle.
pub fn direct_xc_sirt(dataset: &Dataset, cfg: &DirectConfig) -> Result<TomogramResult> {
    if cfg.iterations < 1 {
        return Err(Error::Parameter("iterations must be ≥ 1".into()));
    }
    if cfg.inner_xc_iterations < 1 {
        return Err(Error::Parameter("inner_xc_iterations must be ≥ 1".into()));
    }
    match (cfg.residual, dataset.model) {
        (ResidualMode::Weak, BucketModel::Attenuation) => {}
        (ResidualMode::NonWeak, BucketModel::Transmission) => {}
        (mode, model) => {
            return Err(Error::Config(format!(
                "residual mode {mode:?} does not match bucket model {model:?}"
            )));
        }
    }
    let n = dataset.per_angle[0].0.n();
    let j_total = dataset.total_buckets();
    let beta = cfg.beta.unwrap_or(1.0 / j_total as f64);
    let relax = beta * j_total as f64;
    let stacks: Vec<&PatternStack> = dataset.per_angle.iter().map(|(s, _)| s.as_ref()).collect();
    let stats = combined_stats(&stacks);
    if !(stats.variance > 0.0) {
        return Err(Error::Parameter(
            "pattern ensemble has zero variance".into(),
        ));
    }
    let normalizer = cfg.rmse_normalizer.unwrap_or_else(|| dataset.global_mean());
    let mut vol = cfg.init.clone().unwrap_or_else(|| Volume::zeros(n));
    let mut log = Vec::with_capacity(cfg.iterations);
    // The divergence check watches the mean-subtracted residual (the part
    // the correlation update acts on); the user-facing log keeps the plain
    // normalized RMSE.
    let mut centered_trace = Vec::with_capacity(cfg.iterations);
    for _ in 0..cfg.iterations {
        let (images, raw_rms, centered_rms) = match cfg.residual {
            ResidualMode::Weak => {
                let gm = global_residual_mean(dataset, &vol, cfg.recon_axis_offset);
                weak_residual_images(dataset, &vol, cfg, &stats, gm)
            }
            ResidualMode::NonWeak => {
                let imgs = direct_residual_nonweak(dataset, &vol, cfg.recon_axis_offset)?;
                let rms = transmission_residual_rms(dataset, &vol, cfg.recon_axis_offset);
                (
                    imgs.into_iter()
                        .zip(&dataset.angle_set.angles)
                        .map(|(data, &angle)| ProjectionImage { data, angle })
                        .collect(),
                    rms,
                    rms,
                )
            }
        };
        log.push(raw_rms / normalizer);
        centered_trace.push(centered_rms);
        divergence_check(&centered_trace)?;
        let update = back_project(&images, n, cfg.recon_axis_offset)?;
        let scale = relax / n as f64;
        for (v, u) in vol.as_slice_mut().iter_mut().zip(update.as_slice()) {
            *v += scale * u;
            if cfg.clamp_nonnegative && *v < 0.0 {
                *v = 0.0;
            }
        }
        if cfg.support_cylinder {
            apply_cylinder_support(&mut vol);
        }
    }
    let final_rmse = dataset_rmse(dataset, &vol, cfg.recon_axis_offset, Some(normalizer));
    Ok(TomogramResult {
        volume: vol,
        method: match cfg.residual {
            ResidualMode::Weak => "direct-xc-sirt".into(),
            ResidualMode::NonWeak => "direct-xc-sirt-nonweak".into(),
        },
        iterations: cfg.iterations,
        bucket_rmse: Some(final_rmse),
        residual_log: log,
    })
}

fn transmission_residual_rms(dataset: &Dataset, vol: &Volume, offset: f64) -> f64 {
    let sums: Vec<(f64, usize)> = dataset
        .angle_set
        .angles
        .par_iter()
        .zip(&dataset.per_angle)
        .map(|(&angle, (stack, values))| {
            let proj = project(vol, angle, offset);
            let t: Vec<f64> = proj.data.iter().map(|&a| (-a).exp()).collect();
            let est = stack.dot_all(&t);
            let sq: f64 = values
                .iter()
                .zip(&est)
                .map(|(b, e)| (b - e) * (b - e))
                .sum();
            (sq, values.len())
        })
        .collect();
    let (sq, count) = sums
        .iter()
        .fold((0.0, 0usize), |(s, c), (x, k)| (s + x, c + k));
    (sq / count.max(1) as f64).sqrt()
}

/// Zeroes voxels outside the inscribed cylinder around the rotation axis.
pub(crate) fn apply_cylinder_support(vol: &mut Volume) {
    let n = vol.n();
    let c = (n as f64 - 1.0) / 2.0;
    let r2max = (n as f64 / 2.0).powi(2);
    let flat = vol.as_slice_mut();
    for r3 in 0..n {
        for r1 in 0..n {
            let rho2 = (r1 as f64 - c).powi(2) + (r3 as f64 - c).powi(2);
            if rho2 > r2max {
                for r2 in 0..n {
                    flat[r3 * n * n + r2 * n + r1] = 0.0;
                }
            }
        }
    }
}

fn divergence_check(log: &[f64]) -> Result<()> {
    let window = 5;
    if log.len() > window {
        let tail = &log[log.len() - window - 1..];
        if tail.windows(2).all(|w| w[1] > w[0]) {
            return Err(Error::Divergence {
                iteration: log.len() - 1,
                suggestion: "bucket residual grew 5 consecutive iterations; reduce beta".into(),
            });
        }
    }
    Ok(())
}

/// Convenience for tests and experiments: a dataset that shares one pattern
/// stack across every angle.
pub fn shared_stack_dataset(
    angle_set: crate::projector::AngleSet,
    stack: Arc<PatternStack>,
    per_angle_values: Vec<Vec<f64>>,
    model: BucketModel,
) -> Dataset {
    Dataset {
        angle_set,
        per_angle: per_angle_values
            .into_iter()
            .map(|v| (Arc::clone(&stack), v))
            .collect(),
        model,
    }
}
