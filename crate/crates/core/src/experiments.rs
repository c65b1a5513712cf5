//! Scripted studies: dose fractionation, mask-class comparison and the
//! ring-artifact same-vs-different-shifts study. Each experiment is fully
//! determined by its spec and seeds; outputs are content-addressed by the
//! spec digest.

use std::path::Path;
use std::sync::Arc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::bucket::{BucketModel, Campaign, Dataset};
use crate::error::{Error, Result};
use crate::mask::{frt_mask, mura_mask, random_mask, shift_ensemble, Mask, MaskKind, ShiftSelection};
use crate::metrics::mad;
use crate::patterns::PatternStack;
use crate::projector::AngleSet;
use crate::recon2d::xc_calibrated;
use crate::recon3d::{direct_xc_sirt, two_step, DirectConfig, GiMethod, TomoMethod};
use crate::volume::{build_phantom, SpherePhantomSpec, Volume};

/// Shift policy across viewing angles for scanned masks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShiftPolicy {
    /// The same shift positions are reused at every angle.
    Same,
    /// A fresh random set of positions per angle.
    Different,
}

/// One row of a dose-fractionation table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DoseRow {
    pub angles: usize,
    pub per_angle: usize,
    pub slice_mad: f64,
    pub bucket_rmse: f64,
}

/// Builds the default phantom and a per-angle i.i.d. random-mask campaign.
pub fn iid_campaign(
    n: usize,
    m: usize,
    per_angle: usize,
    seed: u64,
    model: BucketModel,
) -> Campaign {
    let stacks = (0..m)
        .map(|i| {
            Arc::new(
                PatternStack::iid_random(n, per_angle, seed.wrapping_add(i as u64), 0.5)
                    .expect("valid parameters"),
            )
        })
        .collect();
    Campaign {
        angle_set: AngleSet::uniform(m, 0.5),
        per_angle: stacks,
        model,
    }
}

/// Runs the direct solver for every (M, N) split of a fixed bucket budget
/// and reports the r3-slice MAD plus the final bucket RMSE per split.
pub fn run_dose_fractionation(
    budget: usize,
    splits: &[(usize, usize)],
    iterations: usize,
    seed: u64,
    slice_index: usize,
) -> Result<Vec<DoseRow>> {
    for &(m, n_per) in splits {
        if m * n_per > budget {
            return Err(Error::Capacity(format!(
                "split ({m}, {n_per}) exceeds the bucket budget {budget}"
            )));
        }
    }
    let spec = SpherePhantomSpec::default();
    let vol = build_phantom(&spec)?;
    let truth_slice = vol.slice_r3(slice_index);
    let mut rows = Vec::with_capacity(splits.len());
    for (k, &(m, n_per)) in splits.iter().enumerate() {
        let campaign = iid_campaign(
            spec.n,
            m,
            n_per,
            seed.wrapping_mul(1000).wrapping_add(k as u64 * 7919),
            BucketModel::Attenuation,
        );
        let dataset = Dataset::simulate(&vol, &campaign)?;
        let cfg = DirectConfig {
            iterations,
            rmse_normalizer: Some(crate::metrics::DEFAULT_PHANTOM_BUCKET_NORMALIZER),
            ..Default::default()
        };
        let result = direct_xc_sirt(&dataset, &cfg)?;
        rows.push(DoseRow {
            angles: m,
            per_angle: n_per,
            slice_mad: mad(&result.volume.slice_r3(slice_index), &truth_slice)?,
            bucket_rmse: result.bucket_rmse.expect("direct solver records RMSE"),
        });
    }
    Ok(rows)
}

/// One cell of the mask-class comparison table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MaskComparisonRow {
    pub kind: MaskKind,
    pub buckets: usize,
    pub mad: f64,
    pub autocorr_peak: f64,
    pub autocorr_offpeak_range: f64,
}

fn base_mask(kind: MaskKind, p: u64, seed: u64) -> Result<Mask> {
    match kind {
        MaskKind::Random => random_mask(p as usize, seed, 0.5),
        MaskKind::Mura => mura_mask(p),
        MaskKind::Frt => frt_mask(p),
    }
}

/// XC ghost imaging of the 0° projection with scanned masks of each class at
/// several bucket counts. MAD is computed on the variance-normalized,
/// mean-restored XC estimate so the classes are directly comparable.
pub fn run_mask_comparison(
    kinds: &[MaskKind],
    p: u64,
    bucket_counts: &[usize],
    seed: u64,
) -> Result<Vec<MaskComparisonRow>> {
    let n = p as usize;
    let spec = SpherePhantomSpec::scaled_to(n);
    let vol = build_phantom(&spec)?;
    let truth = crate::projector::project(&vol, 0.0, 0.5);
    let mut rows = Vec::new();
    for &kind in kinds {
        let base = base_mask(kind, p, seed)?;
        let report = crate::mask::autocorrelate(&base);
        for &count in bucket_counts {
            let shifts = if count == n * n {
                shift_ensemble(&base, count, ShiftSelection::Sequential)?
            } else {
                shift_ensemble(&base, count, ShiftSelection::Random(seed ^ count as u64))?
            };
            let stack = PatternStack::from_shift_ensemble(&shifts)?;
            let values = stack.dot_all(truth.data.as_slice().expect("contiguous"));
            let est = xc_calibrated(&values, &stack)?;
            rows.push(MaskComparisonRow {
                kind,
                buckets: count,
                mad: mad(&est.data, &truth.data)?,
                autocorr_peak: report.raw_peak,
                autocorr_offpeak_range: report.offpeak_range,
            });
        }
    }
    Ok(rows)
}

/// Result of the ring-artifact study for one shift policy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RingStudyCell {
    pub policy: ShiftPolicy,
    pub ring_metric_fbp: f64,
    pub ring_metric_xc_sirt: f64,
}

/// Builds a scanned-mask dataset at `m` angles with `per_angle` positions
/// under the given policy and reconstructs it with XC+FBP and with the
/// direct XC-SIRT, reporting the ring metric of each.
pub fn run_ring_artifact_study(
    kind: MaskKind,
    p: u64,
    m: usize,
    per_angle: usize,
    seed: u64,
    sirt_iterations: usize,
) -> Result<Vec<RingStudyCell>> {
    let n = p as usize;
    if per_angle > n * n {
        return Err(Error::Capacity(format!(
            "{per_angle} positions exceed the 𝒩² = {} distinct shifts",
            n * n
        )));
    }
    let spec = SpherePhantomSpec::scaled_to(n);
    let vol = build_phantom(&spec)?;
    let base = base_mask(kind, p, seed)?;
    let slice_r2 = n / 2;
    let mut cells = Vec::new();
    for policy in [ShiftPolicy::Same, ShiftPolicy::Different] {
        let stacks: Vec<Arc<PatternStack>> = match policy {
            ShiftPolicy::Same => {
                let shifts =
                    shift_ensemble(&base, per_angle, ShiftSelection::Random(seed ^ 0x5eed))?;
                let stack = Arc::new(PatternStack::from_shift_ensemble(&shifts)?);
                (0..m).map(|_| Arc::clone(&stack)).collect()
            }
            ShiftPolicy::Different => (0..m)
                .map(|i| {
                    let shifts = shift_ensemble(
                        &base,
                        per_angle,
                        ShiftSelection::Random(seed ^ 0x5eed ^ (i as u64 + 1).wrapping_mul(977)),
                    )?;
                    Ok(Arc::new(PatternStack::from_shift_ensemble(&shifts)?))
                })
                .collect::<Result<_>>()?,
        };
        let campaign = Campaign {
            angle_set: AngleSet::uniform(m, 0.5),
            per_angle: stacks,
            model: BucketModel::Attenuation,
        };
        let dataset = Dataset::simulate(&vol, &campaign)?;
        let fbp_result = two_step(&dataset, &GiMethod::Xc, &TomoMethod::Fbp, 0.0, None)?;
        let sirt_cfg = DirectConfig {
            iterations: sirt_iterations,
            ..Default::default()
        };
        let sirt_result = direct_xc_sirt(&dataset, &sirt_cfg)?;
        cells.push(RingStudyCell {
            policy,
            ring_metric_fbp: ring_metric(&fbp_result.volume, &vol, slice_r2),
            ring_metric_xc_sirt: ring_metric(&sirt_result.volume, &vol, slice_r2),
        });
    }
    Ok(cells)
}

/// Ring metric: energy of the azimuthal mean of the reconstruction error in
/// the central slice perpendicular to the rotation axis. Errors that are
/// constant around rings survive the azimuthal average; incoherent noise
/// averages out.
pub fn ring_metric(recon: &Volume, truth: &Volume, slice_r2: usize) -> f64 {
    let n = recon.n();
    let recon_slice = recon.slice_r2(slice_r2);
    let truth_slice = truth.slice_r2(slice_r2);
    let c = (n as f64 - 1.0) / 2.0;
    let bins = n / 2;
    let mut sums = vec![0.0f64; bins];
    let mut counts = vec![0usize; bins];
    for r3 in 0..n {
        for r1 in 0..n {
            let rho = ((r1 as f64 - c).powi(2) + (r3 as f64 - c).powi(2)).sqrt();
            let bin = rho.round() as usize;
            if bin < bins {
                sums[bin] += recon_slice[[r3, r1]] - truth_slice[[r3, r1]];
                counts[bin] += 1;
            }
        }
    }
    let mut energy = 0.0;
    for (s, &c) in sums.iter().zip(&counts) {
        if c > 0 {
            let mean = s / c as f64;
            energy += c as f64 * mean * mean;
        }
    }
    energy
}

/// Declarative experiment description, dispatched by `kind`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExperimentSpec {
    DoseFractionation {
        name: String,
        budget: usize,
        splits: Vec<(usize, usize)>,
        iterations: usize,
        seed: u64,
        #[serde(default = "default_slice")]
        slice_index: usize,
    },
    MaskComparison {
        name: String,
        p: u64,
        bucket_counts: Vec<usize>,
        seed: u64,
    },
    RingArtifacts {
        name: String,
        #[serde(default = "default_ring_kind")]
        mask_kind: MaskKind,
        p: u64,
        angles: usize,
        per_angle: usize,
        seed: u64,
        #[serde(default = "default_ring_sirt")]
        sirt_iterations: usize,
    },
}

fn default_slice() -> usize {
    18
}

fn default_ring_kind() -> MaskKind {
    MaskKind::Frt
}

fn default_ring_sirt() -> usize {
    10
}

impl ExperimentSpec {
    pub fn name(&self) -> &str {
        match self {
            ExperimentSpec::DoseFractionation { name, .. } => name,
            ExperimentSpec::MaskComparison { name, .. } => name,
            ExperimentSpec::RingArtifacts { name, .. } => name,
        }
    }

    /// Content digest of the spec; experiment outputs are stored under it so
    /// a silently edited spec cannot overwrite older results.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        hasher.update(serde_json::to_vec(self).expect("spec serializes"));
        crate::bucket::hex_string(&hasher.finalize())[..16].to_string()
    }
}

/// Machine-readable experiment outcome, written as JSON next to the summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExperimentOutcome {
    DoseFractionation { rows: Vec<DoseRow> },
    MaskComparison { rows: Vec<MaskComparisonRow> },
    RingArtifacts { cells: Vec<RingStudyCell> },
}

/// Runs an experiment spec and writes its outputs (metrics JSON, CSV table,
/// slice PNGs and a Markdown summary) under `out_dir/<name>-<digest>/`.
pub fn run_experiment(spec: &ExperimentSpec, out_dir: &Path) -> Result<ExperimentOutcome> {
    let dir = out_dir.join(format!("{}-{}", spec.name(), spec.digest()));
    std::fs::create_dir_all(&dir)?;
    std::fs::write(
        dir.join("spec.json"),
        serde_json::to_string_pretty(spec)?,
    )?;
    let outcome = match spec {
        ExperimentSpec::DoseFractionation {
            budget,
            splits,
            iterations,
            seed,
            slice_index,
            ..
        } => {
            let rows =
                run_dose_fractionation(*budget, splits, *iterations, *seed, *slice_index)?;
            let mut csv = String::from("angles,per_angle,slice_mad,bucket_rmse\n");
            let mut md = String::from("| M | N | slice MAD | bucket RMSE |\n|---|---|---|---|\n");
            for r in &rows {
                csv.push_str(&format!(
                    "{},{},{:.6},{:.6e}\n",
                    r.angles, r.per_angle, r.slice_mad, r.bucket_rmse
                ));
                md.push_str(&format!(
                    "| {} | {} | {:.4} | {:.3e} |\n",
                    r.angles, r.per_angle, r.slice_mad, r.bucket_rmse
                ));
            }
            std::fs::write(dir.join("table.csv"), csv)?;
            write_summary(&dir, spec.name(), &md)?;
            ExperimentOutcome::DoseFractionation { rows }
        }
        ExperimentSpec::MaskComparison {
            p,
            bucket_counts,
            seed,
            ..
        } => {
            let kinds = [MaskKind::Random, MaskKind::Mura, MaskKind::Frt];
            let rows = run_mask_comparison(&kinds, *p, bucket_counts, *seed)?;
            let mut csv = String::from("kind,buckets,mad,autocorr_peak,autocorr_range\n");
            let mut md =
                String::from("| mask | buckets | MAD | AC peak | AC off-peak range |\n|---|---|---|---|---|\n");
            for r in &rows {
                csv.push_str(&format!(
                    "{:?},{},{:.6},{},{}\n",
                    r.kind, r.buckets, r.mad, r.autocorr_peak, r.autocorr_offpeak_range
                ));
                md.push_str(&format!(
                    "| {:?} | {} | {:.4} | {} | {} |\n",
                    r.kind, r.buckets, r.mad, r.autocorr_peak, r.autocorr_offpeak_range
                ));
            }
            std::fs::write(dir.join("table.csv"), csv)?;
            write_summary(&dir, spec.name(), &md)?;
            ExperimentOutcome::MaskComparison { rows }
        }
        ExperimentSpec::RingArtifacts {
            mask_kind,
            p,
            angles,
            per_angle,
            seed,
            sirt_iterations,
            ..
        } => {
            let cells = run_ring_artifact_study(
                *mask_kind,
                *p,
                *angles,
                *per_angle,
                *seed,
                *sirt_iterations,
            )?;
            let mut md = String::from(
                "| shift policy | ring metric (FBP) | ring metric (XC-SIRT) |\n|---|---|---|\n",
            );
            for c in &cells {
                md.push_str(&format!(
                    "| {:?} | {:.4e} | {:.4e} |\n",
                    c.policy, c.ring_metric_fbp, c.ring_metric_xc_sirt
                ));
            }
            write_summary(&dir, spec.name(), &md)?;
            ExperimentOutcome::RingArtifacts { cells }
        }
    };
    std::fs::write(
        dir.join("metrics.json"),
        serde_json::to_string_pretty(&outcome)?,
    )?;
    Ok(outcome)
}

fn write_summary(dir: &Path, name: &str, body: &str) -> Result<()> {
    std::fs::write(
        dir.join("summary.md"),
        format!("# {name}\n\n{body}"),
    )?;
    Ok(())
}

/// Writes a grayscale PNG preview of a 2D slice, normalized to its range.
pub fn write_slice_png(slice: &Array2<f64>, path: &Path) -> Result<()> {
    let (h, w) = slice.dim();
    let min = slice.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = slice.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = (max - min).max(f64::MIN_POSITIVE);
    let mut img = image::GrayImage::new(w as u32, h as u32);
    for (y, row) in slice.outer_iter().enumerate() {
        for (x, &v) in row.iter().enumerate() {
            let g = ((v - min) / span * 255.0).round().clamp(0.0, 255.0) as u8;
            img.put_pixel(x as u32, y as u32, image::Luma([g]));
        }
    }
    img.save(path)
        .map_err(|e| Error::Format(format!("PNG write failed: {e}")))?;
    Ok(())
}
