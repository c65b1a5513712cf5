//! Voxelized attenuation volumes and the three-sphere phantom.
//!
//! The object is a cube of `n³` voxels holding per-voxel attenuation values
//! (dimensionless; the physical voxel size is deliberately left unspecified).
//! Array layout is `[r3][r2][r1]` with `r1` fastest, matching the raw file
//! order `r3-major → r2 → r1`.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 3D scalar field of linear attenuation coefficients on a cubic voxel grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    data: Array3<f64>,
}

impl Volume {
    /// All-zero volume of side `n`.
    pub fn zeros(n: usize) -> Self {
        Volume {
            data: Array3::zeros((n, n, n)),
        }
    }

    /// Wraps an existing array. Fails if the array is not a cube or holds
    /// negative values.
    pub fn new(data: Array3<f64>) -> Result<Self> {
        let (a, b, c) = data.dim();
        if a != b || b != c {
            return Err(Error::Shape {
                expected: "cubic n×n×n volume".into(),
                got: format!("{a}×{b}×{c}"),
            });
        }
        if data.iter().any(|&v| v < 0.0) {
            return Err(Error::Config("volume contains negative values".into()));
        }
        Ok(Volume { data })
    }

    /// Side length in voxels.
    pub fn n(&self) -> usize {
        self.data.dim().0
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Array3<f64> {
        &mut self.data
    }

    pub fn as_slice(&self) -> &[f64] {
        self.data.as_slice().expect("volume is contiguous")
    }

    pub fn as_slice_mut(&mut self) -> &mut [f64] {
        self.data.as_slice_mut().expect("volume is contiguous")
    }

    /// Sum over all voxels.
    pub fn total(&self) -> f64 {
        self.data.sum()
    }

    /// Copy of the `(r1, r2)` plane at the given `r3` index.
    /// Returned as a 2D array indexed `[r2][r1]`.
    pub fn slice_r3(&self, r3: usize) -> Array2<f64> {
        self.data.index_axis(ndarray::Axis(0), r3).to_owned()
    }

    /// Copy of the `(r1, r3)` plane at the given `r2` index, indexed `[r3][r1]`.
    pub fn slice_r2(&self, r2: usize) -> Array2<f64> {
        self.data.index_axis(ndarray::Axis(1), r2).to_owned()
    }

    /// Writes raw little-endian f32 voxels (r3-major → r2 → r1) plus a JSON
    /// sidecar `<path>.json` describing the layout.
    pub fn write_raw<P: AsRef<Path>>(&self, path: P, description: &str) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for &v in self.as_slice() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        std::fs::File::create(path)?.write_all(&buf)?;
        let sidecar = VolumeSidecar {
            n: self.n(),
            voxel_order: "r3,r2,r1".into(),
            dtype: "float32-le".into(),
            description: description.into(),
        };
        let json = serde_json::to_string_pretty(&sidecar)?;
        std::fs::write(sidecar_path(path), json)?;
        Ok(())
    }

    /// Reads a raw volume written by [`Volume::write_raw`], using the sidecar
    /// for the side length.
    pub fn read_raw<P: AsRef<Path>>(path: P) -> Result<Self> {
        let path = path.as_ref();
        let sidecar: VolumeSidecar =
            serde_json::from_str(&std::fs::read_to_string(sidecar_path(path))?)?;
        let n = sidecar.n;
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        if bytes.len() != n * n * n * 4 {
            return Err(Error::Format(format!(
                "raw volume size {} does not match n={} from sidecar",
                bytes.len(),
                n
            )));
        }
        let mut values = Vec::with_capacity(n * n * n);
        for chunk in bytes.chunks_exact(4) {
            values.push(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]) as f64);
        }
        let data = Array3::from_shape_vec((n, n, n), values).expect("shape checked above");
        Ok(Volume { data })
    }
}

#[derive(Serialize, Deserialize)]
struct VolumeSidecar {
    n: usize,
    voxel_order: String,
    dtype: String,
    description: String,
}

pub(crate) fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    std::path::PathBuf::from(s)
}

/// Specification of the three-sphere phantom.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SpherePhantomSpec {
    /// Voxels per side.
    pub n: usize,
    /// Sphere diameter in voxels.
    pub sphere_diameter: f64,
    /// Attenuation per voxel inside a sphere.
    pub attenuation: f64,
    /// Sphere centers in voxel coordinates (r1, r2, r3).
    pub centers: Vec<[f64; 3]>,
}

impl Default for SpherePhantomSpec {
    fn default() -> Self {
        // Centers chosen so all three spheres are cut by the r3=18 slice used
        // for comparison images; the exact coordinates are a recorded choice.
        SpherePhantomSpec {
            n: 64,
            sphere_diameter: 12.0,
            attenuation: 1.0,
            centers: vec![[20.0, 20.0, 18.0], [40.0, 24.0, 18.0], [28.0, 42.0, 18.0]],
        }
    }
}

impl SpherePhantomSpec {
    /// Default phantom rescaled to a grid of side `n`. Centers scale with the
    /// grid; the spheres keep the reference 12-voxel diameter whenever it
    /// fits and shrink proportionally on smaller grids.
    pub fn scaled_to(n: usize) -> Self {
        let base = SpherePhantomSpec::default();
        let f = n as f64 / base.n as f64;
        SpherePhantomSpec {
            n,
            sphere_diameter: if n >= 48 {
                base.sphere_diameter
            } else {
                base.sphere_diameter * f
            },
            centers: base
                .centers
                .iter()
                .map(|c| [c[0] * f, c[1] * f, c[2] * f])
                .collect(),
            ..base
        }
    }

    /// Checks the non-overlap and in-bounds invariants.
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("phantom grid side must be ≥ 1".into()));
        }
        if self.sphere_diameter <= 0.0 {
            return Err(Error::Config("sphere diameter must be positive".into()));
        }
        if self.attenuation < 0.0 {
            return Err(Error::Config("attenuation must be non-negative".into()));
        }
        let r = self.sphere_diameter / 2.0;
        for (i, c) in self.centers.iter().enumerate() {
            for (axis, &x) in c.iter().enumerate() {
                if x - r < -0.5 || x + r > self.n as f64 - 0.5 {
                    return Err(Error::Config(format!(
                        "sphere {i} extends outside the grid on axis {axis} \
                         (center {x}, radius {r}, n {})",
                        self.n
                    )));
                }
            }
        }
        for i in 0..self.centers.len() {
            for j in (i + 1)..self.centers.len() {
                let d = dist(&self.centers[i], &self.centers[j]);
                if d <= self.sphere_diameter {
                    return Err(Error::Config(format!(
                        "spheres {i} and {j} overlap (center distance {d:.3} ≤ diameter {})",
                        self.sphere_diameter
                    )));
                }
            }
        }
        Ok(())
    }
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Builds the sphere phantom: a voxel takes the value `spec.attenuation` when
/// its center lies strictly inside any sphere, 0 elsewhere.
pub fn build_phantom(spec: &SpherePhantomSpec) -> Result<Volume> {
    spec.validate()?;
    let n = spec.n;
    let r2 = (spec.sphere_diameter / 2.0).powi(2);
    let mut vol = Volume::zeros(n);
    {
        let data = vol.data_mut();
        for c in &spec.centers {
            // Only scan the bounding box of each sphere.
            let lo = |x: f64| ((x - spec.sphere_diameter / 2.0).floor().max(0.0)) as usize;
            let hi = |x: f64| ((x + spec.sphere_diameter / 2.0).ceil().min(n as f64 - 1.0)) as usize;
            for r3 in lo(c[2])..=hi(c[2]) {
                for r2i in lo(c[1])..=hi(c[1]) {
                    for r1 in lo(c[0])..=hi(c[0]) {
                        let d2 = (r1 as f64 - c[0]).powi(2)
                            + (r2i as f64 - c[1]).powi(2)
                            + (r3 as f64 - c[2]).powi(2);
                        if d2 < r2 {
                            data[[r3, r2i, r1]] = spec.attenuation;
                        }
                    }
                }
            }
        }
    }
    Ok(vol)
}

/// Analytic volume of the spec's spheres, `count · (4/3)π(d/2)³`.
pub fn analytic_phantom_volume(spec: &SpherePhantomSpec) -> f64 {
    let r = spec.sphere_diameter / 2.0;
    spec.centers.len() as f64 * (4.0 / 3.0) * std::f64::consts::PI * r.powi(3) * spec.attenuation
}
