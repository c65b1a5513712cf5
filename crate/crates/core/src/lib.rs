//! End-to-end simulation and reconstruction for X-ray ghost imaging and
//! ghost tomography.
//!
//! The pipeline runs phantom → projections → masked bucket measurements, and
//! reconstructs 2D ghost projections (XC, IXC, CG-XC, CS-IXC) and 3D
//! tomograms (two-step via FBP/SIRT with optional sparsity priors, or the
//! direct bucket-to-volume XC-SIRT). A mask foundry provides random binary
//! masks and coded apertures with near-perfect cyclic autocorrelation, and
//! the experiments module scripts the dose-fractionation, mask-comparison
//! and ring-artifact studies.

pub mod bucket;
pub mod error;
pub mod experiments;
pub mod fftutil;
pub mod mask;
pub mod metrics;
pub mod patterns;
pub mod projector;
pub mod recon2d;
pub mod recon3d;
pub mod sparsity;
pub mod volume;

pub use error::{Error, Result};
