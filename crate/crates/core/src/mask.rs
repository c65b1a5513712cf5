//! Illumination masks: random binary, quadratic-residue MURA and
//! perfect-array coded apertures, cyclic-shift ensembles, and exact cyclic
//! autocorrelation analysis.
//!
//! All shifts and correlations are cyclic (the masks are treated as periodic
//! in both directions).

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::sidecar_path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskKind {
    Random,
    Mura,
    Frt,
}

/// Binary illumination mask on an n×n grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    data: Array2<u8>,
    pub kind: MaskKind,
    /// RNG seed for random masks, the prime p for coded masks.
    pub seed_or_prime: u64,
}

impl Mask {
    pub fn n(&self) -> usize {
        self.data.dim().0
    }

    pub fn data(&self) -> &Array2<u8> {
        &self.data
    }

    pub fn as_slice(&self) -> &[u8] {
        self.data.as_slice().expect("mask is contiguous")
    }

    /// Number of ones.
    pub fn ones(&self) -> usize {
        self.as_slice().iter().map(|&v| v as usize).sum()
    }

    /// Mean value (fraction of open pixels).
    pub fn mean(&self) -> f64 {
        self.ones() as f64 / (self.n() * self.n()) as f64
    }

    /// Cyclically shifted copy: output(y1, y2) = input(y1 − dy1, y2 − dy2).
    pub fn shifted(&self, dy1: usize, dy2: usize) -> Mask {
        let n = self.n();
        let mut out = Array2::zeros((n, n));
        for y1 in 0..n {
            for y2 in 0..n {
                out[[y1, y2]] = self.data[[(y1 + n - dy1) % n, (y2 + n - dy2) % n]];
            }
        }
        Mask {
            data: out,
            kind: self.kind,
            seed_or_prime: self.seed_or_prime,
        }
    }

    /// Writes the mask as binary PGM (P5, maxval 1) plus a JSON sidecar.
    pub fn write_pgm<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let path = path.as_ref();
        let n = self.n();
        let mut out = Vec::new();
        out.extend_from_slice(format!("P5\n{n} {n}\n1\n").as_bytes());
        out.extend_from_slice(self.as_slice());
        std::fs::File::create(path)?.write_all(&out)?;
        let sidecar = MaskSidecar {
            kind: self.kind,
            n,
            seed_or_prime: self.seed_or_prime,
        };
        std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&sidecar)?)?;
        Ok(())
    }

    /// Reads a mask written by [`Mask::write_pgm`]. Accepts maxval 1 or 255
    /// (any nonzero byte counts as open).
    pub fn read_pgm<P: AsRef<Path>>(path: P) -> Result<Mask> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let (w, h, data) = parse_pgm(&bytes)?;
        if w != h {
            return Err(Error::Format(format!("mask must be square, got {w}×{h}")));
        }
        let sidecar: MaskSidecar = match std::fs::read_to_string(sidecar_path(path)) {
            Ok(s) => serde_json::from_str(&s)?,
            Err(_) => MaskSidecar {
                kind: MaskKind::Random,
                n: w,
                seed_or_prime: 0,
            },
        };
        let data: Vec<u8> = data.iter().map(|&b| (b != 0) as u8).collect();
        Ok(Mask {
            data: Array2::from_shape_vec((h, w), data).expect("shape checked"),
            kind: sidecar.kind,
            seed_or_prime: sidecar.seed_or_prime,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct MaskSidecar {
    kind: MaskKind,
    n: usize,
    seed_or_prime: u64,
}

fn parse_pgm(bytes: &[u8]) -> Result<(usize, usize, &[u8])> {
    let mut pos = 0;
    let mut fields = Vec::new();
    // Header: magic, width, height, maxval; '#' starts a comment line.
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos] as char).is_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !(bytes[pos] as char).is_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated PGM header".into()));
        }
        fields.push(&bytes[start..pos]);
    }
    pos += 1; // single whitespace after maxval
    if fields[0] != b"P5" {
        return Err(Error::Format("expected binary PGM (P5)".into()));
    }
    let parse = |b: &[u8]| -> Result<usize> {
        std::str::from_utf8(b)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format("bad PGM header field".into()))
    };
    let w = parse(fields[1])?;
    let h = parse(fields[2])?;
    let maxval = parse(fields[3])?;
    if maxval > 255 {
        return Err(Error::Format("16-bit PGM not supported".into()));
    }
    if bytes.len() < pos + w * h {
        return Err(Error::Format("truncated PGM payload".into()));
    }
    Ok((w, h, &bytes[pos..pos + w * h]))
}

/// i.i.d. Bernoulli(mean) binary mask, deterministic per seed.
pub fn random_mask(n: usize, seed: u64, mean: f64) -> Result<Mask> {
    if n == 0 {
        return Err(Error::Parameter("mask side must be ≥ 1".into()));
    }
    if !(0.0..=1.0).contains(&mean) {
        return Err(Error::Parameter(format!(
            "mask mean must lie in [0, 1], got {mean}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<u8> = (0..n * n)
        .map(|_| (rng.gen::<f64>() < mean) as u8)
        .collect();
    Ok(Mask {
        data: Array2::from_shape_vec((n, n), data).expect("length n²"),
        kind: MaskKind::Random,
        seed_or_prime: seed,
    })
}

pub fn is_prime(p: u64) -> bool {
    if p < 2 {
        return false;
    }
    let mut d = 2;
    while d * d <= p {
        if p % d == 0 {
            return false;
        }
        d += 1;
    }
    true
}

fn require_odd_prime(p: u64) -> Result<()> {
    if !is_prime(p) || p == 2 {
        return Err(Error::Parameter(format!(
            "coded-aperture constructions need an odd prime, got {p}"
        )));
    }
    Ok(())
}

/// Legendre symbol table: `chi[k] = +1` if k is a nonzero quadratic residue
/// mod p, `−1` if a non-residue, `0` for k = 0.
pub fn quadratic_character(p: u64) -> Vec<i8> {
    let mut chi = vec![-1i8; p as usize];
    chi[0] = 0;
    for k in 1..p {
        chi[((k * k) % p) as usize] = 1;
    }
    chi
}

/// Modified uniformly redundant array built from quadratic residues mod p:
/// row 0 is closed, column 0 (except the corner) is open, and interior cell
/// (i, j) is open when the quadratic characters of i and j agree.
pub fn mura_mask(p: u64) -> Result<Mask> {
    require_odd_prime(p)?;
    let n = p as usize;
    let chi = quadratic_character(p);
    let mut data = Array2::zeros((n, n));
    for i in 1..n {
        data[[i, 0]] = 1;
        for j in 1..n {
            data[[i, j]] = (chi[i] == chi[j]) as u8;
        }
    }
    Ok(Mask {
        data,
        kind: MaskKind::Mura,
        seed_or_prime: p,
    })
}

/// Perfect binary array on a p×p grid with two-level cyclic autocorrelation
/// (off-origin range exactly 1). Cell (i, j) is open when the norm form
/// `i² − d·j²` (d a fixed quadratic non-residue) is a nonzero square mod p,
/// i.e. the quadratic character of i + j√d in GF(p²); the origin is open.
pub fn frt_mask(p: u64) -> Result<Mask> {
    require_odd_prime(p)?;
    let n = p as usize;
    let chi = quadratic_character(p);
    let d = (2..p)
        .find(|&k| chi[k as usize] == -1)
        .expect("every odd prime has a non-residue");
    let mut data = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            let norm = ((i * i) as u64 + (p - d) * ((j * j) as u64 % p)) % p;
            data[[i, j]] = if norm == 0 {
                1 // character of 0 replaced by +1; keeps the array binary
            } else {
                (chi[norm as usize] == 1) as u8
            };
        }
    }
    Ok(Mask {
        data,
        kind: MaskKind::Frt,
        seed_or_prime: p,
    })
}

/// How shift positions are chosen for a [`ShiftEnsemble`].
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShiftSelection {
    /// Row-major enumeration (0,0), (0,1), …
    Sequential,
    /// Distinct shifts drawn uniformly without replacement.
    Random(u64),
}

/// A base mask plus an ordered list of distinct cyclic shifts.
#[derive(Debug, Clone)]
pub struct ShiftEnsemble {
    pub base: Mask,
    pub shifts: Vec<(usize, usize)>,
}

impl ShiftEnsemble {
    pub fn len(&self) -> usize {
        self.shifts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shifts.is_empty()
    }
}

/// Builds a shift ensemble of `count` distinct positions of the base mask.
///
/// A scanned mask supports at most 𝒩² distinct positions; asking for more is
/// a capacity error (physical masks should carry at least (MN)max + 𝒩²
/// features to allow fresh positions at every viewing angle).
pub fn shift_ensemble(base: &Mask, count: usize, selection: ShiftSelection) -> Result<ShiftEnsemble> {
    let n = base.n();
    let capacity = n * n;
    if count > capacity {
        return Err(Error::Capacity(format!(
            "requested {count} shifts of a {n}×{n} mask, but only 𝒩² = {capacity} distinct \
             cyclic positions exist; a single scanned mask must provide at least \
             (MN)max + 𝒩² features to cover a full campaign"
        )));
    }
    let shifts = match selection {
        ShiftSelection::Sequential => (0..count).map(|k| (k / n, k % n)).collect(),
        ShiftSelection::Random(seed) => {
            let mut all: Vec<(usize, usize)> =
                (0..capacity).map(|k| (k / n, k % n)).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            all.shuffle(&mut rng);
            all.truncate(count);
            all
        }
    };
    Ok(ShiftEnsemble {
        base: base.clone(),
        shifts,
    })
}

/// Summary of a raw (not mean-subtracted) full cyclic autocorrelation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutocorrReport {
    pub raw_peak: f64,
    pub offpeak_min: f64,
    pub offpeak_max: f64,
    pub offpeak_range: f64,
    pub mean: f64,
    pub variance: f64,
}

/// Full cyclic autocorrelation of the mask, computed exactly in integers:
/// `R(s, t) = Σ m(y) · m(y + (s, t))` over the periodic grid.
pub fn autocorrelate(mask: &Mask) -> AutocorrReport {
    let full = cyclic_autocorrelation(mask);
    summarize_autocorr(&full)
}

/// The full lag table behind [`autocorrelate`]; exposed for experiment plots.
pub fn cyclic_autocorrelation(mask: &Mask) -> Array2<u64> {
    let n = mask.n();
    let m = mask.as_slice();
    // Row-correlation table: for each pair of rows (a, b = a+s) and each
    // column lag t, sum m[a, y]·m[b, y+t]. Work row-by-row to keep it O(n⁴)
    // with tiny constants; n ≤ 64 here.
    let mut out = Array2::zeros((n, n));
    for s in 0..n {
        for t in 0..n {
            let mut acc = 0u64;
            for y1 in 0..n {
                let row_a = &m[y1 * n..(y1 + 1) * n];
                let row_b = &m[((y1 + s) % n) * n..((y1 + s) % n + 1) * n];
                let mut row_acc = 0u32;
                for y2 in 0..n {
                    row_acc += (row_a[y2] & row_b[(y2 + t) % n]) as u32;
                }
                acc += row_acc as u64;
            }
            out[[s, t]] = acc;
        }
    }
    out
}

fn summarize_autocorr(full: &Array2<u64>) -> AutocorrReport {
    let peak = full[[0, 0]] as f64;
    let mut min = u64::MAX;
    let mut max = 0u64;
    let mut sum = 0f64;
    let mut sum_sq = 0f64;
    let mut count = 0usize;
    for (idx, &v) in full.indexed_iter() {
        if idx == (0, 0) {
            continue;
        }
        min = min.min(v);
        max = max.max(v);
        sum += v as f64;
        sum_sq += (v as f64) * (v as f64);
        count += 1;
    }
    let mean = sum / count as f64;
    AutocorrReport {
        raw_peak: peak,
        offpeak_min: min as f64,
        offpeak_max: max as f64,
        offpeak_range: (max - min) as f64,
        mean,
        variance: sum_sq / count as f64 - mean * mean,
    }
}
