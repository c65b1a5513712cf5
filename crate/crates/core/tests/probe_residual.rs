//! Temporary diagnostic probe for the direct solver's floor.

use ghostct_core::bucket::{BucketModel, Campaign, Dataset};
use ghostct_core::metrics::DEFAULT_PHANTOM_BUCKET_NORMALIZER;
use ghostct_core::patterns::PatternStack;
use ghostct_core::projector::{project, AngleSet};
use ghostct_core::recon3d::{direct_xc_sirt, DirectConfig};
use ghostct_core::volume::{build_phantom, SpherePhantomSpec};
use std::sync::Arc;

#[test]
#[ignore]
fn residual_structure() {
    let vol = build_phantom(&SpherePhantomSpec::default()).unwrap();
    let m = 90usize;
    let n_per = 1000usize;
    let stacks: Vec<Arc<PatternStack>> = (0..m)
        .map(|i| Arc::new(PatternStack::iid_random(64, n_per, 1234 + 31 * i as u64, 0.5).unwrap()))
        .collect();
    let campaign = Campaign {
        angle_set: AngleSet::uniform(m, 0.5),
        per_angle: stacks,
        model: BucketModel::Attenuation,
    };
    let dataset = Dataset::simulate(&vol, &campaign).unwrap();
    let cfg = DirectConfig {
        iterations: 10,
        beta: Some(1.2 / dataset.total_buckets() as f64),
        clamp_nonnegative: false,
        rmse_normalizer: Some(DEFAULT_PHANTOM_BUCKET_NORMALIZER),
        ..Default::default()
    };
    let out = direct_xc_sirt(&dataset, &cfg).unwrap();
    println!("final RMSE {:.4e}", out.bucket_rmse.unwrap());

    // Residual decomposition per angle.
    let mut dc_sq = 0.0;
    let mut fluct_sq = 0.0;
    let mut count = 0usize;
    for (k, (&angle, (stack, values))) in dataset
        .angle_set
        .angles
        .iter()
        .zip(&dataset.per_angle)
        .enumerate()
    {
        let proj = project(&out.volume, angle, 0.0);
        let est = stack.dot_all(proj.data.as_slice().unwrap());
        let r: Vec<f64> = values.iter().zip(&est).map(|(b, e)| b - e).collect();
        let mean = r.iter().sum::<f64>() / r.len() as f64;
        let var = r.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / r.len() as f64;
        dc_sq += mean * mean * r.len() as f64;
        fluct_sq += var * r.len() as f64;
        count += r.len();
        if k < 5 {
            println!("angle {k}: mean {mean:+.2}, std {:.2}", var.sqrt());
        }
    }
    println!(
        "residual split: per-angle-mean RMS {:.4e}, within-angle RMS {:.4e}",
        (dc_sq / count as f64).sqrt() / DEFAULT_PHANTOM_BUCKET_NORMALIZER,
        (fluct_sq / count as f64).sqrt() / DEFAULT_PHANTOM_BUCKET_NORMALIZER,
    );

    // Where does the volume error live? Compare low-pass/high-pass parts.
    let mut err = out.volume.clone();
    for (e, t) in err.as_slice_mut().iter_mut().zip(vol.as_slice()) {
        *e -= t;
    }
    let total_err: f64 = err.as_slice().iter().map(|v| v * v).sum();
    let low = ghostct_core::fftutil::fourier_lowpass_3d(err.data(), 8.0);
    let low_err: f64 = low.iter().map(|v| v * v).sum();
    println!(
        "volume error energy: total {total_err:.3e}, below k=8: {low_err:.3e} ({:.1}%)",
        100.0 * low_err / total_err
    );

    // And the projection-space error at angle 0: is the model sinogram right?
    let pa = project(&out.volume, 0.0, 0.0);
    let pt = project(&vol, 0.0, 0.5);
    let perr: f64 = (&pa.data - &pt.data).iter().map(|v| v * v).sum::<f64>().sqrt();
    println!("projection L2 error at angle 0: {perr:.3e} (truth norm {:.3e})",
        pt.data.iter().map(|v| v*v).sum::<f64>().sqrt());

    // Single-update mass gain from a pure 10% mass deficit.
    for support in [true, false] {
        let mut init = vol.clone();
        for v in init.as_slice_mut() {
            *v *= 0.9;
        }
        let deficit = vol.total() * 0.1;
        let cfg = DirectConfig {
            iterations: 1,
            beta: Some(1.2 / dataset.total_buckets() as f64),
            clamp_nonnegative: false,
            support_cylinder: support,
            recon_axis_offset: 0.5,
            init: Some(init),
            rmse_normalizer: Some(DEFAULT_PHANTOM_BUCKET_NORMALIZER),
            ..Default::default()
        };
        let step = direct_xc_sirt(&dataset, &cfg).unwrap();
        let gained = step.volume.total() - vol.total() * 0.9;
        println!(
            "support {support}: mass gained {gained:.2} of deficit {deficit:.2} (gain {:.3})",
            gained / deficit
        );
    }

    // Mass trajectory: run the solver iteration by iteration.
    let mut current: Option<ghostct_core::volume::Volume> = None;
    println!("truth mass {:.2}", vol.total());
    for it in 0..10 {
        let cfg = DirectConfig {
            iterations: 1,
            beta: Some(1.2 / dataset.total_buckets() as f64),
            clamp_nonnegative: false,
            rmse_normalizer: Some(DEFAULT_PHANTOM_BUCKET_NORMALIZER),
            init: current.take(),
            ..Default::default()
        };
        let step = direct_xc_sirt(&dataset, &cfg).unwrap();
        println!(
            "after it {}: mass {:.2} (deficit {:+.2}), rmse {:.3e}",
            it + 1,
            step.volume.total(),
            vol.total() - step.volume.total(),
            step.bucket_rmse.unwrap()
        );
        current = Some(step.volume);
    }
}
