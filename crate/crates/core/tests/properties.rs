use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::Vector3;
use proptest::prelude::*;

use spherecal::camera::{
    backproject, effective_hfov, focal_from_fov, horizon_endpoints, horizon_midpoint, pitch_from_midpoint, project,
    rotation_matrix, xi_from_fov_focal,
};
use spherecal::dataset::{crop_seed, sample_crop_spec, CropCamera, SamplingConfig};
use spherecal::{Intrinsics, Orientation, PixelPoint};

fn intrinsics() -> impl Strategy<Value = Intrinsics> {
    (20.0..3000.0f64, 0.0..=1.0f64, 16.0..2048.0f64, 16.0..2048.0f64)
        .prop_map(|(f, xi, w, h)| Intrinsics::new(f, xi, w, h).unwrap())
}

proptest! {
    #[test]
    fn backprojection_is_unit_and_inverts(intr in intrinsics(), fu in 0.0..1.0f64, fv in 0.0..1.0f64) {
        let px = PixelPoint::new(fu * intr.width(), fv * intr.height());
        let ray = backproject(px, &intr).vector();
        prop_assert!((ray.norm() - 1.0).abs() < 1e-12);
        let back = project(ray, &intr).unwrap();
        prop_assert!((back.u - px.u).abs() < 1e-8 && (back.v - px.v).abs() < 1e-8);
    }

    #[test]
    fn projection_ignores_ray_length(intr in intrinsics(), x in -3.0..3.0f64, y in -3.0..3.0f64, z in 0.05..3.0f64, s in 0.01..100.0f64) {
        let p = Vector3::new(x, y, z);
        let a = project(p, &intr).unwrap();
        let b = project(p * s, &intr).unwrap();
        prop_assert!((a.u - b.u).abs() < 1e-9 * (1.0 + a.u.abs()));
        prop_assert!((a.v - b.v).abs() < 1e-9 * (1.0 + a.v.abs()));
    }

    #[test]
    fn rotation_is_orthonormal(pitch in -FRAC_PI_2..FRAC_PI_2, roll in -PI..PI) {
        let r = rotation_matrix(Orientation::new(pitch, roll));
        prop_assert!((r * r.transpose() - nalgebra::Matrix3::identity()).norm() < 1e-12);
        prop_assert!((r.determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fov_conversions_invert(f in 50.0..5000.0f64, xi in 0.0..=1.0f64, u0 in 10.0..49.0f64) {
        let intr = Intrinsics::new(f, xi, 2.0 * u0, 100.0).unwrap();
        let h = effective_hfov(&intr);
        prop_assert!(h > 0.0 && h < PI);
        prop_assert!((focal_from_fov(h, xi, u0).unwrap() - f).abs() < 1e-9 * f.max(1.0));
        prop_assert!((xi_from_fov_focal(h, f, u0).unwrap() - xi).abs() < 1e-9);
    }

    #[test]
    fn hfov_decreases_with_focal(xi in 0.0..=1.0f64, f in 20.0..2000.0f64, k in 1.001..3.0f64) {
        let a = Intrinsics::new(f, xi, 300.0, 200.0).unwrap();
        let b = Intrinsics::new(f * k, xi, 300.0, 200.0).unwrap();
        prop_assert!(effective_hfov(&b) < effective_hfov(&a));
    }

    #[test]
    fn midpoint_inverts_and_ignores_roll(intr in intrinsics(), pitch in -1.4..1.4f64, roll in -1.0..1.0f64) {
        let m = horizon_midpoint(Orientation::new(pitch, roll), &intr).unwrap();
        prop_assert_eq!(m, horizon_midpoint(Orientation::new(pitch, 0.0), &intr).unwrap());
        prop_assert!((pitch_from_midpoint(m, &intr).unwrap() - pitch).abs() < 1e-9);
        prop_assert!(m.signum() == pitch.signum() || pitch == 0.0);
    }

    #[test]
    fn endpoints_flip_with_roll(xi in 0.0..=1.0f64, hfov in 0.5..2.4f64, pitch in -0.5..0.5f64, roll in -0.4..0.4f64) {
        let intr = Intrinsics::from_hfov(hfov, xi, 320.0, 240.0).unwrap();
        let (l, r) = horizon_endpoints(Orientation::new(pitch, roll), &intr).unwrap();
        let (ml, mr) = horizon_endpoints(Orientation::new(pitch, -roll), &intr).unwrap();
        prop_assert!((l - mr).abs() < 1e-7 && (r - ml).abs() < 1e-7);
    }

    #[test]
    fn sampled_crops_respect_config(seed in any::<u64>()) {
        let config = SamplingConfig::default();
        let spec = sample_crop_spec(seed, &config, "p").unwrap();
        prop_assert!((0.0..=1.0).contains(&spec.xi));
        prop_assert!(spec.hfov_rad >= config.hfov_range.0 && spec.hfov_rad <= config.hfov_range.1);
        prop_assert!(spec.roll_rad.abs() <= config.roll.limit_rad);
        prop_assert!((0.0..2.0 * PI).contains(&spec.yaw_rad));
        prop_assert_eq!(spec.render_size.1, config.render_height);
        prop_assert_eq!(&spec, &sample_crop_spec(seed, &config, "p").unwrap());
        let label = spec.label().unwrap();
        let intr = spec.intrinsics().unwrap();
        prop_assert!((effective_hfov(&intr) - label.hfov_rad).abs() < 1e-9);
    }

    #[test]
    fn crop_seeds_separate_streams(seed in any::<u64>(), a in 0u64..1000, b in 0u64..1000) {
        prop_assume!(a != b);
        prop_assert_eq!(crop_seed(seed, "x", a), crop_seed(seed, "x", a));
        prop_assert_ne!(crop_seed(seed, "x", a), crop_seed(seed, "x", b));
        prop_assert_ne!(crop_seed(seed, "x", a), crop_seed(seed, "y", a));
    }

    #[test]
    fn yaw_shifts_source_columns(hfov in 0.5..2.4f64, xi in 0.0..=1.0f64, pitch in -0.6..0.6f64, roll in -0.5..0.5f64,
                                 yaw in 0.0..6.0f64, x in 0.0..224.0f64, y in 0.0..224.0f64) {
        let intr = Intrinsics::from_hfov(hfov, xi, 224.0, 224.0).unwrap();
        let orient = Orientation::new(pitch, roll);
        let pano = (2048, 1024);
        let a = CropCamera::new(intr, orient, 0.0, pano).source_coord(x, y);
        let b = CropCamera::new(intr, orient, yaw, pano).source_coord(x, y);
        // The world direction is R_y(yaw)^T applied after the pitch/roll part.
        let shift = -yaw / (2.0 * PI) * 2048.0;
        let du = (b.0 - a.0 - shift).rem_euclid(2048.0);
        prop_assert!(du.min(2048.0 - du) < 1e-6);
        prop_assert!((a.1 - b.1).abs() < 1e-9);
    }
}
