//! Bucket measurements: single-valued detector readings of a projected
//! object under structured illumination.
//!
//! The attenuation model is the default throughout (the weak-absorption
//! approximation lets bucket values be expressed directly in projected
//! attenuation); the transmission model keeps the full exponential for the
//! non-weak reconstruction path. There is no photon or detector noise
//! anywhere; a noise field is reserved in the record schema but never
//! populated.

use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::patterns::{PatternProvenance, PatternStack};
use crate::projector::{project, AngleSet, ProjectionImage};
use crate::volume::Volume;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BucketModel {
    Attenuation,
    Transmission,
}

/// One bucket reading with its full provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketRecord {
    pub value: f64,
    pub angle_index: usize,
    /// Which per-angle ensemble produced the pattern.
    pub ensemble_id: u32,
    /// Pattern index within the ensemble (shift index for scanned masks).
    pub pattern_index: u32,
    /// Cyclic shift of the base mask, when the ensemble is a scanned mask.
    pub shift: Option<(u16, u16)>,
    pub model: BucketModel,
    /// Reserved for a future noise model; always `None` here.
    pub noise: Option<f64>,
}

/// A full measurement campaign: angles plus one pattern ensemble per angle
/// (which may all alias a single shared ensemble).
#[derive(Clone)]
pub struct Campaign {
    pub angle_set: AngleSet,
    pub per_angle: Vec<Arc<PatternStack>>,
    pub model: BucketModel,
}

impl Campaign {
    /// Total number of records J = Σ per-angle counts.
    pub fn total_buckets(&self) -> usize {
        self.per_angle.iter().map(|p| p.len()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        self.angle_set.validate()?;
        if self.per_angle.len() != self.angle_set.len() {
            return Err(Error::Config(format!(
                "campaign has {} ensembles for {} angles",
                self.per_angle.len(),
                self.angle_set.len()
            )));
        }
        Ok(())
    }
}

fn check_dims(pattern_n: usize, proj: &ProjectionImage) -> Result<()> {
    if proj.data.dim() != (pattern_n, pattern_n) {
        return Err(Error::Shape {
            expected: format!("{pattern_n}×{pattern_n} projection"),
            got: format!("{:?}", proj.data.dim()),
        });
    }
    Ok(())
}

/// Attenuation-model bucket: ⟨I, A⟩ = Σ_x I(x)·A(x).
pub fn bucket_attenuation(pattern: &Mask, proj: &ProjectionImage) -> Result<f64> {
    check_dims(pattern.n(), proj)?;
    Ok(crate::patterns::dot_u8(
        pattern.as_slice(),
        proj.data.as_slice().expect("contiguous"),
    ))
}

/// Transmission-model bucket: Σ_x I(x)·exp(−A(x)).
pub fn bucket_transmission(pattern: &Mask, proj: &ProjectionImage) -> Result<f64> {
    check_dims(pattern.n(), proj)?;
    let img = proj.data.as_slice().expect("contiguous");
    Ok(pattern
        .as_slice()
        .iter()
        .zip(img)
        .map(|(&b, &a)| b as f64 * (-a).exp())
        .sum())
}

fn transmission_image(proj: &ProjectionImage) -> Vec<f64> {
    proj.data.iter().map(|&a| (-a).exp()).collect()
}

/// Runs a campaign: projects the volume once per angle, then evaluates every
/// bucket for that angle. Records come out in angle-major order and are
/// bitwise reproducible for a fixed campaign.
pub fn run_campaign(vol: &Volume, campaign: &Campaign) -> Result<Vec<BucketRecord>> {
    campaign.validate()?;
    let n = vol.n();
    for stack in &campaign.per_angle {
        if stack.n() != n {
            return Err(Error::Shape {
                expected: format!("{n}×{n} patterns"),
                got: format!("{0}×{0}", stack.n()),
            });
        }
    }
    let per_angle: Vec<Vec<f64>> = campaign
        .angle_set
        .angles
        .par_iter()
        .zip(&campaign.per_angle)
        .map(|(&angle, stack)| {
            let proj = project(vol, angle, campaign.angle_set.axis_offset);
            match campaign.model {
                BucketModel::Attenuation => {
                    stack.dot_all(proj.data.as_slice().expect("contiguous"))
                }
                BucketModel::Transmission => stack.dot_all(&transmission_image(&proj)),
            }
        })
        .collect();

    let mut records = Vec::with_capacity(campaign.total_buckets());
    for (angle_index, (values, stack)) in per_angle.iter().zip(&campaign.per_angle).enumerate() {
        let shifts = match &stack.provenance {
            PatternProvenance::Shifts { shifts, .. } => Some(shifts),
            _ => None,
        };
        for (j, &value) in values.iter().enumerate() {
            records.push(BucketRecord {
                value,
                angle_index,
                ensemble_id: angle_index as u32,
                pattern_index: j as u32,
                shift: shifts.map(|s| (s[j].0 as u16, s[j].1 as u16)),
                model: campaign.model,
                noise: None,
            });
        }
    }
    Ok(records)
}

/// Bucket values grouped per angle, the working form for reconstruction.
pub struct Dataset {
    pub angle_set: AngleSet,
    pub per_angle: Vec<(Arc<PatternStack>, Vec<f64>)>,
    pub model: BucketModel,
}

impl Dataset {
    pub fn from_records(records: &[BucketRecord], campaign: &Campaign) -> Result<Self> {
        campaign.validate()?;
        let mut per_angle: Vec<(Arc<PatternStack>, Vec<f64>)> = campaign
            .per_angle
            .iter()
            .map(|s| (Arc::clone(s), Vec::with_capacity(s.len())))
            .collect();
        for r in records {
            let slot = per_angle.get_mut(r.angle_index).ok_or_else(|| {
                Error::Config(format!("record angle index {} out of range", r.angle_index))
            })?;
            slot.1.push(r.value);
        }
        for (i, (stack, values)) in per_angle.iter().enumerate() {
            if stack.len() != values.len() {
                return Err(Error::Config(format!(
                    "angle {i}: {} records for {} patterns",
                    values.len(),
                    stack.len()
                )));
            }
        }
        Ok(Dataset {
            angle_set: campaign.angle_set.clone(),
            per_angle,
            model: campaign.model,
        })
    }

    /// Convenience: run the campaign and group the values in one step.
    pub fn simulate(vol: &Volume, campaign: &Campaign) -> Result<Self> {
        let records = run_campaign(vol, campaign)?;
        Dataset::from_records(&records, campaign)
    }

    pub fn total_buckets(&self) -> usize {
        self.per_angle.iter().map(|(_, v)| v.len()).sum()
    }

    /// Mean bucket value over the whole campaign.
    pub fn global_mean(&self) -> f64 {
        let (sum, count) = self
            .per_angle
            .iter()
            .fold((0.0, 0usize), |(s, c), (_, v)| {
                (s + v.iter().sum::<f64>(), c + v.len())
            });
        sum / count.max(1) as f64
    }
}

#[derive(Serialize, Deserialize)]
struct BucketHeader {
    model: BucketModel,
    angles: Vec<f64>,
    axis_offset: f64,
    ensembles: Vec<PatternProvenance>,
    campaign_digest: String,
}

/// Writes records as CSV `(j, angle_index, shift_dy1, shift_dy2, value)` with
/// a JSON header sidecar carrying the model, seeds and campaign digest.
/// Records without a shift (i.i.d. pattern ensembles) write −1 for both shift
/// columns; the pattern index is recoverable from per-angle record order.
pub fn write_buckets<P: AsRef<Path>>(
    records: &[BucketRecord],
    campaign: &Campaign,
    path: P,
) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["j", "angle_index", "shift_dy1", "shift_dy2", "value"])?;
    for (j, r) in records.iter().enumerate() {
        let (d1, d2) = match r.shift {
            Some((a, b)) => (a as i64, b as i64),
            None => (-1, -1),
        };
        w.write_record([
            j.to_string(),
            r.angle_index.to_string(),
            d1.to_string(),
            d2.to_string(),
            format!("{:.17e}", r.value),
        ])?;
    }
    w.flush()?;
    let header = BucketHeader {
        model: campaign.model,
        angles: campaign.angle_set.angles.clone(),
        axis_offset: campaign.angle_set.axis_offset,
        ensembles: campaign
            .per_angle
            .iter()
            .map(|s| s.provenance.clone())
            .collect(),
        campaign_digest: campaign_digest(campaign),
    };
    std::fs::write(
        crate::volume::sidecar_path(path),
        serde_json::to_string_pretty(&header)?,
    )?;
    Ok(())
}

/// Reads a bucket CSV back into records (shift −1 maps to `None`).
pub fn read_buckets<P: AsRef<Path>>(path: P) -> Result<Vec<BucketRecord>> {
    let path = path.as_ref();
    let header: BucketHeader = serde_json::from_str(&std::fs::read_to_string(
        crate::volume::sidecar_path(path),
    )?)?;
    let mut rdr = csv::Reader::from_path(path)?;
    let mut records = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let get = |i: usize| -> Result<&str> {
            row.get(i)
                .ok_or_else(|| Error::Format("short CSV row".into()))
        };
        let angle_index: usize = get(1)?
            .parse()
            .map_err(|_| Error::Format("bad angle index".into()))?;
        let d1: i64 = get(2)?.parse().map_err(|_| Error::Format("bad shift".into()))?;
        let d2: i64 = get(3)?.parse().map_err(|_| Error::Format("bad shift".into()))?;
        let value: f64 = get(4)?.parse().map_err(|_| Error::Format("bad value".into()))?;
        records.push(BucketRecord {
            value,
            angle_index,
            ensemble_id: angle_index as u32,
            pattern_index: 0,
            shift: if d1 < 0 {
                None
            } else {
                Some((d1 as u16, d2 as u16))
            },
            model: header.model,
            noise: None,
        });
    }
    // Restore per-angle pattern indices from record order.
    let mut counters = std::collections::HashMap::new();
    for r in &mut records {
        let c = counters.entry(r.angle_index).or_insert(0u32);
        r.pattern_index = *c;
        *c += 1;
    }
    Ok(records)
}

/// Content digest of a campaign configuration (not its data).
pub fn campaign_digest(campaign: &Campaign) -> String {
    use sha2::{Digest, Sha256};
    let provenances: Vec<&PatternProvenance> =
        campaign.per_angle.iter().map(|s| &s.provenance).collect();
    let blob = serde_json::to_vec(&(
        &campaign.angle_set.angles,
        campaign.angle_set.axis_offset,
        &campaign.model,
        provenances,
    ))
    .expect("campaign serializes");
    let mut hasher = Sha256::new();
    hasher.update(&blob);
    hex_string(&hasher.finalize())
}

pub(crate) fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::{random_mask, shift_ensemble, ShiftSelection};
    use crate::volume::{build_phantom, SpherePhantomSpec};

    fn phantom_projection() -> ProjectionImage {
        let vol = build_phantom(&SpherePhantomSpec::default()).unwrap();
        project(&vol, 0.0, 0.5)
    }

    #[test]
    fn all_ones_bucket_equals_projected_mass() {
        let proj = phantom_projection();
        let ones = random_mask(64, 0, 1.0).unwrap();
        let b = bucket_attenuation(&ones, &proj).unwrap();
        let analytic = 3.0 * (4.0 / 3.0) * std::f64::consts::PI * 6.0f64.powi(3);
        assert!((b - analytic).abs() / analytic < 0.03, "bucket {b}");
    }

    #[test]
    fn zero_pattern_gives_zero_bucket() {
        let proj = phantom_projection();
        let zeros = random_mask(64, 0, 0.0).unwrap();
        assert_eq!(bucket_attenuation(&zeros, &proj).unwrap(), 0.0);
    }

    #[test]
    fn half_open_bucket_is_near_half_mass() {
        let proj = phantom_projection();
        let analytic = 0.5 * 3.0 * (4.0 / 3.0) * std::f64::consts::PI * 6.0f64.powi(3);
        let mut sum = 0.0;
        for seed in 0..20 {
            let m = random_mask(64, seed, 0.5).unwrap();
            sum += bucket_attenuation(&m, &proj).unwrap();
        }
        let mean = sum / 20.0;
        assert!(
            (mean - analytic).abs() / analytic < 0.05,
            "mean bucket {mean} vs expected {analytic}"
        );
    }

    #[test]
    fn transmission_of_zero_projection_is_pattern_total() {
        let m = random_mask(16, 3, 0.5).unwrap();
        let proj = ProjectionImage::zeros(16, 0.0);
        let b = bucket_transmission(&m, &proj).unwrap();
        assert_eq!(b, m.ones() as f64);
    }

    #[test]
    fn constant_attenuation_factors_exactly() {
        let m = random_mask(16, 4, 0.5).unwrap();
        let mut proj = ProjectionImage::zeros(16, 0.0);
        proj.data.fill(0.7);
        let b = bucket_transmission(&m, &proj).unwrap();
        let expect = (-0.7f64).exp() * m.ones() as f64;
        assert!((b - expect).abs() < 1e-9);
    }

    #[test]
    fn weak_absorption_first_order_bound() {
        let mut proj = phantom_projection();
        proj.data.mapv_inplace(|a| a * 1e-3);
        let m = random_mask(64, 5, 0.5).unwrap();
        let b_t = bucket_transmission(&m, &proj).unwrap();
        let b_a = bucket_attenuation(&m, &proj).unwrap();
        let total = m.ones() as f64;
        let err = (b_t - (total - b_a)).abs() / total;
        assert!(err < 1e-5, "Maclaurin error {err}");
    }

    #[test]
    fn transmission_bounded_by_pattern_total_with_equality_iff_clear() {
        let m = random_mask(64, 6, 0.5).unwrap();
        let proj = phantom_projection();
        let b = bucket_transmission(&m, &proj).unwrap();
        assert!(b < m.ones() as f64);
        let clear = ProjectionImage::zeros(64, 0.0);
        assert_eq!(bucket_transmission(&m, &clear).unwrap(), m.ones() as f64);
    }

    #[test]
    fn attenuation_buckets_superpose_over_volumes() {
        let spec_a = SpherePhantomSpec {
            centers: vec![[20.0, 20.0, 18.0]],
            ..SpherePhantomSpec::default()
        };
        let spec_b = SpherePhantomSpec {
            centers: vec![[40.0, 24.0, 18.0]],
            ..SpherePhantomSpec::default()
        };
        let m = random_mask(64, 7, 0.5).unwrap();
        let pa = project(&build_phantom(&spec_a).unwrap(), 0.4, 0.5);
        let pb = project(&build_phantom(&spec_b).unwrap(), 0.4, 0.5);
        let both = SpherePhantomSpec {
            centers: vec![[20.0, 20.0, 18.0], [40.0, 24.0, 18.0]],
            ..SpherePhantomSpec::default()
        };
        let pc = project(&build_phantom(&both).unwrap(), 0.4, 0.5);
        let ba = bucket_attenuation(&m, &pa).unwrap();
        let bb = bucket_attenuation(&m, &pb).unwrap();
        let bc = bucket_attenuation(&m, &pc).unwrap();
        assert!((bc - (ba + bb)).abs() < 1e-9);
    }

    #[test]
    fn single_bucket_campaign() {
        let vol = build_phantom(&SpherePhantomSpec::default()).unwrap();
        let ones = random_mask(64, 0, 1.0).unwrap();
        let ens = shift_ensemble(&ones, 1, ShiftSelection::Sequential).unwrap();
        let campaign = Campaign {
            angle_set: AngleSet::uniform(1, 0.5),
            per_angle: vec![Arc::new(PatternStack::from_shift_ensemble(&ens).unwrap())],
            model: BucketModel::Attenuation,
        };
        let records = run_campaign(&vol, &campaign).unwrap();
        assert_eq!(records.len(), 1);
        let proj = project(&vol, 0.0, 0.5);
        let expect = bucket_attenuation(&ones, &proj).unwrap();
        assert_eq!(records[0].value, expect);
    }

    #[test]
    fn records_are_angle_major_and_deterministic() {
        let vol = build_phantom(&SpherePhantomSpec::default()).unwrap();
        let stacks: Vec<Arc<PatternStack>> = (0..3)
            .map(|i| Arc::new(PatternStack::iid_random(64, 5, 100 + i, 0.5).unwrap()))
            .collect();
        let campaign = Campaign {
            angle_set: AngleSet::uniform(3, 0.5),
            per_angle: stacks,
            model: BucketModel::Attenuation,
        };
        let a = run_campaign(&vol, &campaign).unwrap();
        let b = run_campaign(&vol, &campaign).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 15);
        for (j, r) in a.iter().enumerate() {
            assert_eq!(r.angle_index, j / 5);
            assert_eq!(r.pattern_index as usize, j % 5);
        }
    }

    #[test]
    fn exhaustive_shift_buckets_equal_cyclic_cross_correlation() {
        // Oracle: brute-force cyclic cross-correlation of mask and image at
        // 𝒩 = 8.
        let n = 8;
        let base = random_mask(n, 9, 0.5).unwrap();
        let ens = shift_ensemble(&base, n * n, ShiftSelection::Sequential).unwrap();
        let stack = PatternStack::from_shift_ensemble(&ens).unwrap();
        let mut img = ProjectionImage::zeros(n, 0.0);
        for (k, v) in img.data.iter_mut().enumerate() {
            *v = (k % 7) as f64 + 0.25;
        }
        let flat = img.data.as_slice().unwrap();
        let buckets = stack.dot_all(flat);
        for (idx, &(d1, d2)) in ens.shifts.iter().enumerate() {
            let mut oracle = 0.0;
            for y1 in 0..n {
                for y2 in 0..n {
                    oracle += base.as_slice()[y1 * n + y2] as f64
                        * flat[((y1 + d1) % n) * n + (y2 + d2) % n];
                }
            }
            assert!(
                (buckets[idx] - oracle).abs() < 1e-9,
                "shift {:?}: {} vs {oracle}",
                (d1, d2),
                buckets[idx]
            );
        }
    }

    #[test]
    fn csv_roundtrip_preserves_values_and_shifts() {
        let vol = build_phantom(&SpherePhantomSpec::default()).unwrap();
        let base = random_mask(64, 11, 0.5).unwrap();
        let ens = shift_ensemble(&base, 6, ShiftSelection::Random(1)).unwrap();
        let campaign = Campaign {
            angle_set: AngleSet::uniform(2, 0.5),
            per_angle: vec![
                Arc::new(PatternStack::from_shift_ensemble(&ens).unwrap()),
                Arc::new(PatternStack::iid_random(64, 4, 12, 0.5).unwrap()),
            ],
            model: BucketModel::Attenuation,
        };
        let records = run_campaign(&vol, &campaign).unwrap();
        let dir = std::env::temp_dir().join("ghostct-bucket-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("buckets.csv");
        write_buckets(&records, &campaign, &path).unwrap();
        let back = read_buckets(&path).unwrap();
        assert_eq!(records.len(), back.len());
        for (a, b) in records.iter().zip(&back) {
            assert_eq!(a.value, b.value);
            assert_eq!(a.angle_index, b.angle_index);
            assert_eq!(a.shift, b.shift);
            assert_eq!(a.pattern_index, b.pattern_index);
        }
    }
}
