//! Sparsity priors shared by the 2D and tomographic solvers: image-space
//! soft-thresholding, gradient sparsity via explicit total-variation descent
//! steps, and Fourier-space low-pass projection.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::fftutil::{fourier_lowpass_2d, fourier_lowpass_3d};

/// A de-noising prior applied once per outer solver iteration. Strengths are
/// deliberately light; the solvers enforce them gradually over many
/// iterations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Prior {
    /// Soft-threshold at `lambda_rel × max|value|`.
    ImageSparsity { lambda_rel: f64 },
    /// `steps` explicit gradient-descent steps on smoothed isotropic TV,
    /// each of size `weight`.
    GradientSparsity { weight: f64, steps: usize },
    /// Keep radial frequencies up to `kappa_frac × Nyquist`, zero the rest.
    FourierSparsity { kappa_frac: f64 },
}

impl Prior {
    pub fn image_default() -> Prior {
        Prior::ImageSparsity { lambda_rel: 1e-3 }
    }

    pub fn gradient_default() -> Prior {
        Prior::GradientSparsity {
            weight: 1e-3,
            steps: 1,
        }
    }

    pub fn fourier_default() -> Prior {
        Prior::FourierSparsity { kappa_frac: 0.4 }
    }
}

/// st(v, λ) = sign(v)·max(|v| − λ, 0), elementwise.
pub fn soft_threshold(values: &mut [f64], lambda: f64) {
    for v in values.iter_mut() {
        let mag = v.abs() - lambda;
        *v = if mag > 0.0 { v.signum() * mag } else { 0.0 };
    }
}

fn max_abs(values: &[f64]) -> f64 {
    values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// One explicit descent step on smoothed isotropic TV of a 2D image:
/// `v += step · div(∇v / √(|∇v|² + ε²))` with Neumann boundaries.
pub fn tv_step_2d(img: &mut Array2<f64>, step: f64) {
    let (h, w) = img.dim();
    let eps2 = tv_epsilon(img.as_slice().expect("contiguous")).powi(2);
    let v = img.clone();
    let g = |i: usize, j: usize| -> (f64, f64) {
        let gx = if j + 1 < w { v[[i, j + 1]] - v[[i, j]] } else { 0.0 };
        let gy = if i + 1 < h { v[[i + 1, j]] - v[[i, j]] } else { 0.0 };
        let norm = (gx * gx + gy * gy + eps2).sqrt();
        (gx / norm, gy / norm)
    };
    for i in 0..h {
        for j in 0..w {
            let (px, py) = g(i, j);
            let qx = if j > 0 { g(i, j - 1).0 } else { 0.0 };
            let qy = if i > 0 { g(i - 1, j).1 } else { 0.0 };
            img[[i, j]] += step * ((px - qx) + (py - qy));
        }
    }
}

/// 3D counterpart of [`tv_step_2d`] for volume-domain gradient sparsity.
pub fn tv_step_3d(vol: &mut Array3<f64>, step: f64) {
    let (d, h, w) = vol.dim();
    let eps2 = tv_epsilon(vol.as_slice().expect("contiguous")).powi(2);
    let v = vol.clone();
    let g = |k: usize, i: usize, j: usize| -> (f64, f64, f64) {
        let gx = if j + 1 < w { v[[k, i, j + 1]] - v[[k, i, j]] } else { 0.0 };
        let gy = if i + 1 < h { v[[k, i + 1, j]] - v[[k, i, j]] } else { 0.0 };
        let gz = if k + 1 < d { v[[k + 1, i, j]] - v[[k, i, j]] } else { 0.0 };
        let norm = (gx * gx + gy * gy + gz * gz + eps2).sqrt();
        (gx / norm, gy / norm, gz / norm)
    };
    for k in 0..d {
        for i in 0..h {
            for j in 0..w {
                let (px, py, pz) = g(k, i, j);
                let qx = if j > 0 { g(k, i, j - 1).0 } else { 0.0 };
                let qy = if i > 0 { g(k, i - 1, j).1 } else { 0.0 };
                let qz = if k > 0 { g(k - 1, i, j).2 } else { 0.0 };
                vol[[k, i, j]] += step * ((px - qx) + (py - qy) + (pz - qz));
            }
        }
    }
}

fn tv_epsilon(values: &[f64]) -> f64 {
    1e-8 + 1e-4 * max_abs(values)
}

/// Applies the priors to a 2D image, in the fixed order image → gradient →
/// Fourier (each at most once per call).
pub fn apply_priors_2d(img: &mut Array2<f64>, priors: &[Prior]) {
    for prior in ordered(priors) {
        match *prior {
            Prior::ImageSparsity { lambda_rel } => {
                let lambda = lambda_rel * max_abs(img.as_slice().expect("contiguous"));
                soft_threshold(img.as_slice_mut().expect("contiguous"), lambda);
            }
            Prior::GradientSparsity { weight, steps } => {
                for _ in 0..steps {
                    tv_step_2d(img, weight);
                }
            }
            Prior::FourierSparsity { kappa_frac } => {
                let n = img.dim().0;
                *img = fourier_lowpass_2d(img, kappa_frac * n as f64 / 2.0);
            }
        }
    }
}

/// Volume-domain priors, same order as [`apply_priors_2d`].
pub fn apply_priors_3d(vol: &mut Array3<f64>, priors: &[Prior]) {
    for prior in ordered(priors) {
        match *prior {
            Prior::ImageSparsity { lambda_rel } => {
                let lambda = lambda_rel * max_abs(vol.as_slice().expect("contiguous"));
                soft_threshold(vol.as_slice_mut().expect("contiguous"), lambda);
            }
            Prior::GradientSparsity { weight, steps } => {
                for _ in 0..steps {
                    tv_step_3d(vol, weight);
                }
            }
            Prior::FourierSparsity { kappa_frac } => {
                let n = vol.dim().0;
                *vol = fourier_lowpass_3d(vol, kappa_frac * n as f64 / 2.0);
            }
        }
    }
}

fn ordered(priors: &[Prior]) -> Vec<&Prior> {
    let rank = |p: &Prior| match p {
        Prior::ImageSparsity { .. } => 0,
        Prior::GradientSparsity { .. } => 1,
        Prior::FourierSparsity { .. } => 2,
    };
    let mut sorted: Vec<&Prior> = priors.iter().collect();
    sorted.sort_by_key(|p| rank(p));
    sorted
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn soft_threshold_pointwise() {
        let mut v = vec![3.0, -2.0, 0.5, -0.5, 0.0];
        soft_threshold(&mut v, 1.0);
        assert_eq!(v, vec![2.0, -1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn tv_step_flattens_noise_but_keeps_flat_regions() {
        let mut flat = Array2::from_elem((8, 8), 2.0);
        tv_step_2d(&mut flat, 0.1);
        for &v in flat.iter() {
            assert!((v - 2.0).abs() < 1e-9);
        }
        let mut noisy = Array2::from_shape_fn((8, 8), |(i, j)| ((i + j) % 2) as f64);
        let before: f64 = tv_energy(&noisy);
        for _ in 0..20 {
            tv_step_2d(&mut noisy, 0.05);
        }
        assert!(tv_energy(&noisy) < before);
    }

    fn tv_energy(img: &Array2<f64>) -> f64 {
        let (h, w) = img.dim();
        let mut e = 0.0;
        for i in 0..h {
            for j in 0..w {
                let gx = if j + 1 < w { img[[i, j + 1]] - img[[i, j]] } else { 0.0 };
                let gy = if i + 1 < h { img[[i + 1, j]] - img[[i, j]] } else { 0.0 };
                e += (gx * gx + gy * gy).sqrt();
            }
        }
        e
    }

    #[test]
    fn priors_apply_in_fixed_order_regardless_of_listing() {
        let img = Array2::from_shape_fn((16, 16), |(i, j)| ((i * 31 + j * 17) % 7) as f64);
        let forward = {
            let mut x = img.clone();
            apply_priors_2d(
                &mut x,
                &[
                    Prior::image_default(),
                    Prior::gradient_default(),
                    Prior::fourier_default(),
                ],
            );
            x
        };
        let reversed = {
            let mut x = img.clone();
            apply_priors_2d(
                &mut x,
                &[
                    Prior::fourier_default(),
                    Prior::gradient_default(),
                    Prior::image_default(),
                ],
            );
            x
        };
        assert_eq!(forward, reversed);
    }
}
