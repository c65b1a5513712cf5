//! Dense stacks of binary illumination patterns.
//!
//! Reconstruction kernels spend nearly all their time in two loops over the
//! pattern stack: bucket-style inner products (the adjoint correlation C*)
//! and weighted pattern sums (the synthesis C). Patterns are stored as rows
//! of `u8` so a full tomography campaign (tens of thousands of patterns)
//! stays within a few hundred MB, and the kernels run on `u8 → f64`
//! multiply-accumulate loops that vectorize well.

use std::sync::OnceLock;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{Mask, ShiftEnsemble};

/// Where a pattern stack came from; recorded in campaign metadata.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub enum PatternProvenance {
    /// Independent Bernoulli(mean) realizations from one seed.
    IidRandom { n: usize, count: usize, seed: u64, mean: f64 },
    /// Cyclic shifts of a single base mask.
    Shifts {
        kind: crate::mask::MaskKind,
        seed_or_prime: u64,
        shifts: Vec<(usize, usize)>,
    },
    /// Explicit list of masks (e.g. loaded from files).
    Explicit { count: usize },
    /// Kronecker delta at every pixel (test basis).
    Deltas { n: usize },
}

/// Immutable stack of binary patterns sharing one grid size.
pub struct PatternStack {
    n: usize,
    rows: Vec<u8>,
    pub provenance: PatternProvenance,
    stats: OnceLock<PatternStats>,
}

#[derive(Debug, Clone, Copy)]
pub struct PatternStats {
    /// Mean pattern value over all pixels and patterns.
    pub mean: f64,
    /// Spatially averaged per-pixel variance across the stack.
    pub variance: f64,
}

impl PatternStack {
    pub fn iid_random(n: usize, count: usize, seed: u64, mean: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&mean) {
            return Err(Error::Parameter(format!(
                "pattern mean must lie in [0, 1], got {mean}"
            )));
        }
        if count == 0 {
            return Err(Error::EmptyData("pattern stack needs ≥ 1 pattern".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<u8> = (0..count * n * n)
            .map(|_| (rng.gen::<f64>() < mean) as u8)
            .collect();
        Ok(PatternStack {
            n,
            rows,
            provenance: PatternProvenance::IidRandom { n, count, seed, mean },
            stats: OnceLock::new(),
        })
    }

    pub fn from_shift_ensemble(ensemble: &ShiftEnsemble) -> Result<Self> {
        if ensemble.is_empty() {
            return Err(Error::EmptyData("shift ensemble has no shifts".into()));
        }
        let n = ensemble.base.n();
        let base = ensemble.base.as_slice();
        let mut rows = Vec::with_capacity(ensemble.len() * n * n);
        for &(d1, d2) in &ensemble.shifts {
            for y1 in 0..n {
                let src_row = (y1 + n - d1) % n;
                for y2 in 0..n {
                    rows.push(base[src_row * n + (y2 + n - d2) % n]);
                }
            }
        }
        Ok(PatternStack {
            n,
            rows,
            provenance: PatternProvenance::Shifts {
                kind: ensemble.base.kind,
                seed_or_prime: ensemble.base.seed_or_prime,
                shifts: ensemble.shifts.clone(),
            },
            stats: OnceLock::new(),
        })
    }

    pub fn from_masks(masks: &[Mask]) -> Result<Self> {
        let first = masks
            .first()
            .ok_or_else(|| Error::EmptyData("pattern stack needs ≥ 1 mask".into()))?;
        let n = first.n();
        let mut rows = Vec::with_capacity(masks.len() * n * n);
        for m in masks {
            if m.n() != n {
                return Err(Error::Shape {
                    expected: format!("{n}×{n} mask"),
                    got: format!("{0}×{0}", m.n()),
                });
            }
            rows.extend_from_slice(m.as_slice());
        }
        Ok(PatternStack {
            n,
            rows,
            provenance: PatternProvenance::Explicit { count: masks.len() },
            stats: OnceLock::new(),
        })
    }

    /// One Kronecker delta per pixel, in row-major pixel order (n² patterns).
    pub fn deltas(n: usize) -> Self {
        let mut rows = vec![0u8; n * n * n * n];
        for k in 0..n * n {
            rows[k * n * n + k] = 1;
        }
        PatternStack {
            n,
            rows,
            provenance: PatternProvenance::Deltas { n },
            stats: OnceLock::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len() / (self.n * self.n)
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn row(&self, j: usize) -> &[u8] {
        let px = self.n * self.n;
        &self.rows[j * px..(j + 1) * px]
    }

    /// ⟨I_j, img⟩ for one pattern.
    pub fn dot(&self, j: usize, img: &[f64]) -> f64 {
        dot_u8(self.row(j), img)
    }

    /// ⟨I_j, img⟩ for every pattern (the adjoint correlation C*), in parallel.
    pub fn dot_all(&self, img: &[f64]) -> Vec<f64> {
        let px = self.n * self.n;
        self.rows
            .par_chunks(px)
            .map(|row| dot_u8(row, img))
            .collect()
    }

    /// Σ_j coeffs[j] · I_j as an image (the synthesis side of C).
    ///
    /// Deterministic: partial sums are computed over fixed chunks and reduced
    /// in index order regardless of thread schedule.
    pub fn accumulate(&self, coeffs: &[f64]) -> Array2<f64> {
        assert_eq!(coeffs.len(), self.len());
        let px = self.n * self.n;
        let chunk = 256usize;
        let partials: Vec<Vec<f64>> = (0..coeffs.len().div_ceil(chunk))
            .into_par_iter()
            .map(|c| {
                let lo = c * chunk;
                let hi = (lo + chunk).min(coeffs.len());
                let mut acc = vec![0.0f64; px];
                for j in lo..hi {
                    axpy_u8(&mut acc, self.row(j), coeffs[j]);
                }
                acc
            })
            .collect();
        let mut total = vec![0.0f64; px];
        for part in partials {
            for (t, p) in total.iter_mut().zip(&part) {
                *t += p;
            }
        }
        Array2::from_shape_vec((self.n, self.n), total).expect("length n²")
    }

    /// Per-pattern totals Σ_x I_j(x).
    pub fn totals(&self) -> Vec<f64> {
        let px = self.n * self.n;
        self.rows
            .par_chunks(px)
            .map(|row| row.iter().map(|&b| b as u32).sum::<u32>() as f64)
            .collect()
    }

    /// Ensemble statistics (mean and spatially averaged per-pixel variance),
    /// computed once from the actual patterns.
    pub fn stats(&self) -> PatternStats {
        *self.stats.get_or_init(|| {
            let px = self.n * self.n;
            let count = self.len() as f64;
            let mut pixel_sums = vec![0u32; px];
            for row in self.rows.chunks(px) {
                for (s, &b) in pixel_sums.iter_mut().zip(row) {
                    *s += b as u32;
                }
            }
            let mut mean_total = 0.0;
            let mut var_total = 0.0;
            for &s in &pixel_sums {
                let p = s as f64 / count;
                mean_total += p;
                // Binary values: E[I²] = E[I], so per-pixel variance is p(1−p).
                var_total += p * (1.0 - p);
            }
            PatternStats {
                mean: mean_total / px as f64,
                variance: var_total / px as f64,
            }
        })
    }
}

#[inline]
pub(crate) fn dot_u8(mask: &[u8], img: &[f64]) -> f64 {
    debug_assert_eq!(mask.len(), img.len());
    let mut acc = 0.0f64;
    for (&b, &v) in mask.iter().zip(img) {
        acc += b as f64 * v;
    }
    acc
}

#[inline]
pub(crate) fn axpy_u8(acc: &mut [f64], mask: &[u8], c: f64) {
    debug_assert_eq!(mask.len(), acc.len());
    for (a, &b) in acc.iter_mut().zip(mask) {
        *a += b as f64 * c;
    }
}
