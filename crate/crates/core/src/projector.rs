//! Parallel-beam projection transform, its adjoint, FBP and SIRT.
//!
//! A projection at azimuthal angle φ rotates every horizontal slice (fixed
//! r2) of the volume about the r2-axis and sums along the beam axis. The
//! detector coordinate of a point (r1, r3) is `x1 = r1·cosφ − r3·sinφ`
//! (centered coordinates), so detector pixel `i` integrates along the ray
//! `(r1, r3) = c + u·(cosφ, −sinφ) + t·(sinφ, cosφ)` with `u = i − c − a`,
//! where `a` is the rotation-axis offset in pixels.
//!
//! Back-projection is the exact transpose of the sampling (scatter with the
//! same bilinear weights) divided by the number of angles M, so
//! `⟨P v, p⟩ = M · ⟨v, P* p⟩` holds to rounding error.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use ndarray::Array2;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{sidecar_path, Volume};

/// 2D projected-attenuation image at one azimuthal angle, indexed `[x2][x1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionImage {
    pub data: Array2<f64>,
    /// Azimuthal angle φ in radians.
    pub angle: f64,
}

impl ProjectionImage {
    pub fn n(&self) -> usize {
        self.data.dim().0
    }

    pub fn zeros(n: usize, angle: f64) -> Self {
        ProjectionImage {
            data: Array2::zeros((n, n)),
            angle,
        }
    }
}

/// Ordered set of azimuthal angles, equally spaced over π radians, plus the
/// rotation-axis offset used when simulating data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AngleSet {
    pub angles: Vec<f64>,
    /// Rotation-axis offset in pixels (the paper keeps a half-pixel offset in
    /// all simulated data).
    pub axis_offset: f64,
}

impl AngleSet {
    /// `m` angles `i·π/m`, i = 0..m.
    pub fn uniform(m: usize, axis_offset: f64) -> Self {
        AngleSet {
            angles: (0..m).map(|i| i as f64 * std::f64::consts::PI / m as f64).collect(),
            axis_offset,
        }
    }

    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self
            .angles
            .windows(2)
            .all(|w| w[0] < w[1])
            && self
                .angles
                .iter()
                .all(|&a| (0.0..std::f64::consts::PI).contains(&a));
        if ok {
            Ok(())
        } else {
            Err(Error::Parameter(
                "angles must be strictly increasing within [0, π)".into(),
            ))
        }
    }
}

/// Angle count satisfying the Nyquist angular-sampling rule, ⌈πn/2⌉.
pub fn nyquist_angle_count(n: usize) -> usize {
    (std::f64::consts::PI * n as f64 / 2.0).ceil() as usize
}

#[derive(Clone, Copy)]
struct Tap {
    loc: u32,
    w: f64,
}

const ZERO_TAP: Tap = Tap { loc: 0, w: 0.0 };

/// Precomputed bilinear sampling pattern for one angle: for each
/// (detector pixel i, depth sample k) the four source taps into an
/// `[r3][r1]` slice buffer.
struct SampleGrid {
    n: usize,
    taps: Vec<[Tap; 4]>,
}

impl SampleGrid {
    fn build(n: usize, angle: f64, axis_offset: f64) -> Self {
        let c = (n as f64 - 1.0) / 2.0;
        let (sin, cos) = angle.sin_cos();
        let mut taps = Vec::with_capacity(n * n);
        for i in 0..n {
            let u = i as f64 - c - axis_offset;
            for k in 0..n {
                let t = k as f64 - c;
                let s1 = c + u * cos + t * sin;
                let s3 = c - u * sin + t * cos;
                let i1 = s1.floor();
                let i3 = s3.floor();
                let f1 = s1 - i1;
                let f3 = s3 - i3;
                let mut cell = [ZERO_TAP; 4];
                let mut idx = 0;
                for (d3, w3) in [(0i64, 1.0 - f3), (1, f3)] {
                    for (d1, w1) in [(0i64, 1.0 - f1), (1, f1)] {
                        let x1 = i1 as i64 + d1;
                        let x3 = i3 as i64 + d3;
                        if x1 >= 0 && x1 < n as i64 && x3 >= 0 && x3 < n as i64 {
                            cell[idx] = Tap {
                                loc: (x3 as u32) * n as u32 + x1 as u32,
                                w: w3 * w1,
                            };
                        }
                        idx += 1;
                    }
                }
                taps.push(cell);
            }
        }
        SampleGrid { n, taps }
    }

    /// Projects one `[r3][r1]` slice buffer into one detector row.
    fn gather(&self, slice: &[f64], out_row: &mut [f64]) {
        let n = self.n;
        for (i, out) in out_row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for cell in &self.taps[i * n..(i + 1) * n] {
                acc += cell[0].w * slice[cell[0].loc as usize]
                    + cell[1].w * slice[cell[1].loc as usize]
                    + cell[2].w * slice[cell[2].loc as usize]
                    + cell[3].w * slice[cell[3].loc as usize];
            }
            *out = acc;
        }
    }

    /// Adjoint of [`SampleGrid::gather`]: spreads one detector row into the
    /// slice buffer with the same weights.
    fn scatter(&self, slice: &mut [f64], in_row: &[f64], scale: f64) {
        let n = self.n;
        for (i, &p) in in_row.iter().enumerate() {
            let v = p * scale;
            if v == 0.0 {
                continue;
            }
            for cell in &self.taps[i * n..(i + 1) * n] {
                slice[cell[0].loc as usize] += cell[0].w * v;
                slice[cell[1].loc as usize] += cell[1].w * v;
                slice[cell[2].loc as usize] += cell[2].w * v;
                slice[cell[3].loc as usize] += cell[3].w * v;
            }
        }
    }
}

fn copy_r2_slice(vol: &Volume, r2: usize, buf: &mut [f64]) {
    let n = vol.n();
    let flat = vol.as_slice();
    for r3 in 0..n {
        let src = &flat[r3 * n * n + r2 * n..r3 * n * n + r2 * n + n];
        buf[r3 * n..(r3 + 1) * n].copy_from_slice(src);
    }
}

fn add_r2_slice(vol: &mut Volume, r2: usize, buf: &[f64]) {
    let n = vol.n();
    let flat = vol.as_slice_mut();
    for r3 in 0..n {
        let dst = &mut flat[r3 * n * n + r2 * n..r3 * n * n + r2 * n + n];
        for (d, s) in dst.iter_mut().zip(&buf[r3 * n..(r3 + 1) * n]) {
            *d += *s;
        }
    }
}

/// Projects the volume at one angle. Linear in the volume; bilinear
/// interpolation, zero outside the grid.
pub fn project(vol: &Volume, angle: f64, axis_offset: f64) -> ProjectionImage {
    let n = vol.n();
    let grid = SampleGrid::build(n, angle, axis_offset);
    let mut out = ProjectionImage::zeros(n, angle);
    let rows = out.data.as_slice_mut().expect("contiguous");
    let mut slice_buf = vec![0.0; n * n];
    for r2 in 0..n {
        copy_r2_slice(vol, r2, &mut slice_buf);
        grid.gather(&slice_buf, &mut rows[r2 * n..(r2 + 1) * n]);
    }
    out
}

/// Projects the volume at every angle of the set, in parallel over angles.
pub fn project_set(vol: &Volume, angles: &AngleSet) -> Vec<ProjectionImage> {
    angles
        .angles
        .par_iter()
        .map(|&a| project(vol, a, angles.axis_offset))
        .collect()
}

/// Back-projection P*, the adjoint of [`project`] divided by the number of
/// angles M: `⟨P v, p⟩ = M · ⟨v, P* p⟩`.
pub fn back_project(projs: &[ProjectionImage], n: usize, axis_offset: f64) -> Result<Volume> {
    if projs.is_empty() {
        return Err(Error::EmptyData("back_project needs ≥ 1 projection".into()));
    }
    for p in projs {
        if p.data.dim() != (n, n) {
            return Err(Error::Shape {
                expected: format!("{n}×{n} projection"),
                got: format!("{:?}", p.data.dim()),
            });
        }
    }
    let m = projs.len() as f64;
    let grids: Vec<SampleGrid> = projs
        .par_iter()
        .map(|p| SampleGrid::build(n, p.angle, axis_offset))
        .collect();
    // Each r2-slice of the output is independent; compute them in parallel
    // and then write back in order, keeping the result schedule-independent.
    let slices: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|r2| {
            let mut buf = vec![0.0; n * n];
            for (p, grid) in projs.iter().zip(&grids) {
                let rows = p.data.as_slice().expect("contiguous");
                grid.scatter(&mut buf, &rows[r2 * n..(r2 + 1) * n], 1.0 / m);
            }
            buf
        })
        .collect();
    let mut vol = Volume::zeros(n);
    for (r2, buf) in slices.iter().enumerate() {
        add_r2_slice(&mut vol, r2, buf);
    }
    Ok(vol)
}

/// Ramp (Ram-Lak) filter applied per detector row in frequency space with
/// zero-padding to 2n. Returns the filtered projection.
fn ramp_filter(proj: &ProjectionImage) -> ProjectionImage {
    let n = proj.n();
    let l = 2 * n;
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(l);
    let inv = planner.plan_fft_inverse(l);
    let mut out = ProjectionImage::zeros(n, proj.angle);
    let src = proj.data.as_slice().expect("contiguous");
    let dst = out.data.as_slice_mut().expect("contiguous");
    let mut row = vec![Complex64::default(); l];
    for x2 in 0..n {
        for (i, c) in row.iter_mut().enumerate() {
            *c = if i < n {
                Complex64::new(src[x2 * n + i], 0.0)
            } else {
                Complex64::default()
            };
        }
        fwd.process(&mut row);
        for (k, c) in row.iter_mut().enumerate() {
            let f = k.min(l - k) as f64 / l as f64;
            *c *= f;
        }
        inv.process(&mut row);
        for i in 0..n {
            dst[x2 * n + i] = row[i].re / l as f64;
        }
    }
    out
}

/// Filtered back-projection. `axis_offset` is the rotation-axis position
/// assumed by the reconstruction (0 by default in callers; simulated data
/// carries its own offset, and the mismatch produces the known mild streaks).
pub fn fbp(projs: &[ProjectionImage], n: usize, axis_offset: f64) -> Result<Volume> {
    if projs.is_empty() {
        return Err(Error::EmptyData("fbp needs ≥ 1 projection".into()));
    }
    let filtered: Vec<ProjectionImage> = projs.par_iter().map(ramp_filter).collect();
    let mut vol = back_project(&filtered, n, axis_offset)?;
    let scale = std::f64::consts::PI;
    for v in vol.as_slice_mut() {
        *v *= scale;
    }
    Ok(vol)
}

/// Options for [`sirt`].
#[derive(Debug, Clone)]
pub struct SirtOptions {
    pub iterations: usize,
    /// Relaxation factor; the update is `relax/n · P*[residual]`.
    pub relax: f64,
    /// Clamp the volume to non-negative values after each update.
    pub clamp_nonnegative: bool,
    pub init: Option<Volume>,
}

impl Default for SirtOptions {
    fn default() -> Self {
        SirtOptions {
            iterations: 32,
            relax: 1.0,
            clamp_nonnegative: true,
            init: None,
        }
    }
}

/// Simultaneous iterative reconstruction from projections: additive updates
/// by the ray-length-normalized back-projected residual.
///
/// Returns the volume and the per-iteration RMS of the projection residual.
pub fn sirt(
    projs: &[ProjectionImage],
    n: usize,
    axis_offset: f64,
    opts: &SirtOptions,
) -> Result<(Volume, Vec<f64>)> {
    if projs.is_empty() {
        return Err(Error::EmptyData("sirt needs ≥ 1 projection".into()));
    }
    let angles: Vec<f64> = projs.iter().map(|p| p.angle).collect();
    let mut vol = match &opts.init {
        Some(v) => v.clone(),
        None => Volume::zeros(n),
    };
    let mut log = Vec::with_capacity(opts.iterations);
    for _ in 0..opts.iterations {
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
        let sq_sum: f64 = residuals
            .iter()
            .map(|r| r.data.iter().map(|v| v * v).sum::<f64>())
            .sum();
        log.push((sq_sum / (projs.len() * n * n) as f64).sqrt());
        let update = back_project(&residuals, n, axis_offset)?;
        let scale = opts.relax / n as f64;
        for (v, u) in vol.as_slice_mut().iter_mut().zip(update.as_slice()) {
            *v += scale * u;
            if opts.clamp_nonnegative && *v < 0.0 {
                *v = 0.0;
            }
        }
    }
    Ok((vol, log))
}

#[derive(Serialize, Deserialize)]
struct StackSidecar {
    n: usize,
    m: usize,
    angles: Vec<f64>,
    axis_offset: f64,
}

/// Writes a projection stack as raw little-endian f32, angle-major, with a
/// JSON sidecar `{n, M, angles, axis_offset}`.
pub fn write_projection_stack<P: AsRef<Path>>(
    projs: &[ProjectionImage],
    axis_offset: f64,
    path: P,
) -> Result<()> {
    let path = path.as_ref();
    let n = projs.first().map(|p| p.n()).unwrap_or(0);
    let mut buf = Vec::with_capacity(projs.len() * n * n * 4);
    for p in projs {
        for &v in p.data.as_slice().expect("contiguous") {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    std::fs::File::create(path)?.write_all(&buf)?;
    let sidecar = StackSidecar {
        n,
        m: projs.len(),
        angles: projs.iter().map(|p| p.angle).collect(),
        axis_offset,
    };
    std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&sidecar)?)?;
    Ok(())
}

/// Reads a projection stack written by [`write_projection_stack`].
/// Returns the projections and the recorded acquisition axis offset.
pub fn read_projection_stack<P: AsRef<Path>>(path: P) -> Result<(Vec<ProjectionImage>, f64)> {
    let path = path.as_ref();
    let sidecar: StackSidecar =
        serde_json::from_str(&std::fs::read_to_string(sidecar_path(path))?)?;
    let n = sidecar.n;
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() != sidecar.m * n * n * 4 {
        return Err(Error::Format(format!(
            "projection stack size {} does not match sidecar (m={}, n={})",
            bytes.len(),
            sidecar.m,
            n
        )));
    }
    let mut projs = Vec::with_capacity(sidecar.m);
    for (a, chunk) in sidecar.angles.iter().zip(bytes.chunks_exact(n * n * 4)) {
        let mut values = Vec::with_capacity(n * n);
        for b in chunk.chunks_exact(4) {
            values.push(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64);
        }
        projs.push(ProjectionImage {
            data: Array2::from_shape_vec((n, n), values).expect("shape checked"),
            angle: *a,
        });
    }
    Ok((projs, sidecar.axis_offset))
}


/// Shared FFT plans for repeated transforms of one length.
#[derive(Clone)]
pub(crate) struct FftPlans {
    pub fwd: Arc<dyn rustfft::Fft<f64>>,
    pub inv: Arc<dyn rustfft::Fft<f64>>,
}

impl FftPlans {
    pub fn new(len: usize) -> Self {
        let mut planner = FftPlanner::new();
        FftPlans {
            fwd: planner.plan_fft_forward(len),
            inv: planner.plan_fft_inverse(len),
        }
    }
}
