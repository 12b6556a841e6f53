//! Fit perceptual surfaces from simulated pairwise judgments and score two
//! calibration methods with them.
//!
//! ```sh
//! cargo run --example perceptual_score
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spherecal::perceptual::{fit_surface, marginal_sensitivity, score_method, Estimate, JudgmentRecord, Parameter, SurfaceSet};
use spherecal::Result;

/// Probability that an observer prefers the ground truth, rising with the
/// error and faster for large ground-truth values.
fn observer(param: Parameter, gt: f64, err: f64) -> f64 {
    let ((vlo, vhi), (_, ehi)) = param.default_ranges();
    let v = (gt - vlo) / (vhi - vlo);
    let e = err.abs() / ehi;
    0.5 + 0.45 * (1.0 - (-(2.0 + 4.0 * v) * e * e).exp())
}

fn main() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut records = Vec::new();
    for param in [Parameter::Pitch, Parameter::Roll] {
        let ((vlo, vhi), (elo, ehi)) = param.default_ranges();
        for i in 0..6000 {
            let gt = rng.random_range(vlo..vhi);
            let err = rng.random_range(elo..ehi);
            let chose_gt = rng.random_bool(observer(param, gt, err));
            records.push(JudgmentRecord::single(param, gt, err, chose_gt, format!("img{}", i % 300)));
        }
    }

    let mut surfaces = SurfaceSet::new();
    for param in [Parameter::Pitch, Parameter::Roll] {
        let (vr, er) = param.default_ranges();
        let s = fit_surface(&records, param, vr, er, 5)?;
        println!("{param}: {} of 49 cells populated", s.unmasked_cells());
        surfaces.insert(s);
    }

    let (_, er) = Parameter::Roll.default_ranges();
    println!("\nroll sensitivity by |error| bin (median detection rate per image):");
    for bin in marginal_sensitivity(&records, Parameter::Roll, er, 6)? {
        if let Some(s) = bin.summary {
            println!(
                "  [{:+6.1}, {:+6.1}] deg: {:.3}",
                bin.error_lo.to_degrees(),
                bin.error_hi.to_degrees(),
                s.median
            );
        }
    }

    for (name, noise_deg) in [("precise method", 1.0), ("sloppy method", 8.0)] {
        let mut estimates = Vec::new();
        for param in [Parameter::Pitch, Parameter::Roll] {
            let ((vlo, vhi), _) = param.default_ranges();
            for _ in 0..500 {
                let gt = rng.random_range(vlo..vhi);
                let err = rng.random_range(-1.0..1.0) * f64::to_radians(noise_deg);
                estimates.push(Estimate { parameter: param, gt_value: gt, estimate: gt + err });
            }
        }
        println!("\n{name}:");
        for (param, score) in score_method(&surfaces, &estimates)? {
            println!(
                "  {param}: median {:.3} (q1 {:.3}, q3 {:.3}), {} degraded",
                score.summary.median, score.summary.q1, score.summary.q3, score.degraded
            );
        }
    }
    Ok(())
}
