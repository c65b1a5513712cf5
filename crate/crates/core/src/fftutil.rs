//! Small FFT helpers for the Fourier-domain sparsity priors.

use ndarray::{Array2, Array3};
use rustfft::num_complex::Complex64;

use crate::projector::FftPlans;

/// Radial low-pass in frequency space: zeroes every bin whose radial
/// frequency index exceeds `kappa` (in bins). Frequencies at or beyond the
/// per-axis Nyquist index n/2 are treated as one class, so `kappa = n/2`
/// keeps everything and the projection is the identity.
pub fn fourier_lowpass_2d(img: &Array2<f64>, kappa: f64) -> Array2<f64> {
    let (h, w) = img.dim();
    assert_eq!(h, w, "square images only");
    let n = h;
    let nyq = n as f64 / 2.0;
    let plans = FftPlans::new(n);
    let mut field: Vec<Complex64> = img.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft_2d(&mut field, n, &plans, true);
    for k1 in 0..n {
        let f1 = freq_index(k1, n);
        for k2 in 0..n {
            let f2 = freq_index(k2, n);
            let r = (f1 * f1 + f2 * f2).sqrt().min(nyq);
            if r > kappa {
                field[k1 * n + k2] = Complex64::default();
            }
        }
    }
    fft_2d(&mut field, n, &plans, false);
    let scale = 1.0 / (n * n) as f64;
    Array2::from_shape_vec((n, n), field.iter().map(|c| c.re * scale).collect())
        .expect("shape preserved")
}

/// 3D counterpart of [`fourier_lowpass_2d`] for volume-domain priors.
pub fn fourier_lowpass_3d(vol: &Array3<f64>, kappa: f64) -> Array3<f64> {
    let (a, b, c) = vol.dim();
    assert!(a == b && b == c, "cubic volumes only");
    let n = a;
    let nyq = n as f64 / 2.0;
    let plans = FftPlans::new(n);
    let mut field: Vec<Complex64> = vol.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft_3d(&mut field, n, &plans, true);
    for k1 in 0..n {
        let f1 = freq_index(k1, n);
        for k2 in 0..n {
            let f2 = freq_index(k2, n);
            for k3 in 0..n {
                let f3 = freq_index(k3, n);
                let r = (f1 * f1 + f2 * f2 + f3 * f3).sqrt().min(nyq);
                if r > kappa {
                    field[(k1 * n + k2) * n + k3] = Complex64::default();
                }
            }
        }
    }
    fft_3d(&mut field, n, &plans, false);
    let scale = 1.0 / (n * n * n) as f64;
    Array3::from_shape_vec((n, n, n), field.iter().map(|c| c.re * scale).collect())
        .expect("shape preserved")
}

fn freq_index(k: usize, n: usize) -> f64 {
    if k <= n / 2 {
        k as f64
    } else {
        k as f64 - n as f64
    }
}

fn fft_2d(field: &mut [Complex64], n: usize, plans: &FftPlans, forward: bool) {
    let plan = if forward { &plans.fwd } else { &plans.inv };
    // Rows.
    for row in field.chunks_mut(n) {
        plan.process(row);
    }
    // Columns via transpose.
    let mut col = vec![Complex64::default(); n];
    for j in 0..n {
        for i in 0..n {
            col[i] = field[i * n + j];
        }
        plan.process(&mut col);
        for i in 0..n {
            field[i * n + j] = col[i];
        }
    }
}

fn fft_3d(field: &mut [Complex64], n: usize, plans: &FftPlans, forward: bool) {
    let plan = if forward { &plans.fwd } else { &plans.inv };
    let n2 = n * n;
    // Axis 2 (contiguous rows).
    for row in field.chunks_mut(n) {
        plan.process(row);
    }
    let mut line = vec![Complex64::default(); n];
    // Axis 1.
    for i in 0..n {
        for k in 0..n {
            for j in 0..n {
                line[j] = field[i * n2 + j * n + k];
            }
            plan.process(&mut line);
            for j in 0..n {
                field[i * n2 + j * n + k] = line[j];
            }
        }
    }
    // Axis 0.
    for j in 0..n {
        for k in 0..n {
            for i in 0..n {
                line[i] = field[i * n2 + j * n + k];
            }
            plan.process(&mut line);
            for i in 0..n {
                field[i * n2 + j * n + k] = line[i];
            }
        }
    }
}
