use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sewbot::camera::{cloud_from_depth, DepthImage, PointCloud};
use sewbot::geometry::Pose;
use sewbot::sim::{default_standby, measure_stitch, Fabric, SimError, World, WorldConfig};
use sewbot::stitch::{
    entry_pose, estimate_normal, pierce_depth, plan_stitch, reorientation_sequence, sewing_frame,
    stitch_angle, NeedleSpec, StitchMode, StitchOptions,
};

const R: f64 = 4e-3;
const TILT: f64 = std::f64::consts::FRAC_PI_6;

fn bisect_chord_angle(d: f64, r: f64) -> f64 {
    let (mut lo, mut hi) = (0.0, std::f64::consts::PI);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if 2.0 * r * (0.5 * mid).sin() < d {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn options(mode: StitchMode) -> StitchOptions {
    StitchOptions {
        mode,
        standby: default_standby(),
        ..StitchOptions::default()
    }
}

fn flat_cloud(world: &mut World) -> PointCloud {
    let depth = world.capture_depth();
    cloud_from_depth(&depth, &world.config.intrinsics).unwrap()
}

/// Plans a stitch at the image centre of the default sheet, places the tip
/// exactly at the entry pose and pierces.
fn execute(mode: StitchMode, d: f64) -> Result<f64, SimError> {
    let mut world = World::new(WorldConfig::default(), 0).unwrap();
    let cloud = flat_cloud(&mut world);
    let target = Vector3::new(0.0, 0.0, 0.25);
    let next = Vector3::new(0.01, 0.0, 0.25);
    let plan = plan_stitch(&target, &next, &cloud, R, d, TILT, &options(mode)).unwrap();
    world.place_tip(&plan.entry());
    world.pierce_and_measure(&plan).map(|m| m.size)
}

#[test]
fn chord_angle_matches_bisection() {
    for i in 1..80 {
        let d = i as f64 * 0.1e-3;
        let theta = stitch_angle(d, R, StitchMode::Chord).unwrap();
        let oracle = bisect_chord_angle(d, R);
        assert!(
            (theta - oracle).abs() < 1e-9,
            "d = {d}: {theta} vs {oracle}"
        );
    }
    let theta = stitch_angle(3e-3, R, StitchMode::Chord).unwrap();
    assert!((theta - 0.768_793_5).abs() < 1e-7);
}

#[test]
fn mode_inverses() {
    for i in 1..=50 {
        let d = i as f64 * 0.1e-3;
        let arc = stitch_angle(d, R, StitchMode::Arc).unwrap();
        assert!((pierce_depth(arc, R) - d).abs() <= 2.0 * f64::EPSILON * d);
        let chord = stitch_angle(d, R, StitchMode::Chord).unwrap();
        assert!((2.0 * R * (0.5 * chord).sin() - d).abs() < 1e-9);
        assert!((NeedleSpec::new(R, chord).unwrap().chord() - d).abs() < 1e-9);
    }
}

#[test]
fn entry_pose_tilt_offset_and_reorientation() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..2000 {
        let target = Vector3::new(
            rng.random::<f64>(),
            rng.random::<f64>(),
            rng.random::<f64>(),
        );
        let normal = Vector3::new(
            rng.random::<f64>(),
            rng.random::<f64>(),
            rng.random::<f64>(),
        )
        .map(|c| c - 0.5)
        .normalize();
        let next = target
            + Vector3::new(
                rng.random::<f64>(),
                rng.random::<f64>(),
                rng.random::<f64>(),
            )
            .map(|c| c - 0.5);
        let Ok(frame) = sewing_frame(&target, &next, &normal) else {
            continue;
        };
        let tilt = rng.random::<f64>() * 1.2;
        let d = 1e-3 + rng.random::<f64>() * 4e-3;
        let entry = entry_pose(&frame, tilt, d);

        let tilt_seen = entry.axis(2).dot(&frame.z).clamp(-1.0, 1.0).acos();
        assert!((tilt_seen - tilt).abs() < 1e-9);
        let offset = entry.translation() - frame.origin;
        assert!((offset - frame.y * (0.5 * d)).norm() < 1e-9);

        let point = *entry.translation();
        let path = reorientation_sequence(&entry, &point, tilt, 5f64.to_radians()).unwrap();
        for w in &path {
            assert!((w.translation() - point).norm() < 1e-9);
        }
        if let Some(last) = path.last() {
            let turned = entry.inverse().compose(last).rotation_angle();
            assert!((turned - 2.0 * tilt).abs() < 1e-9);
        }
    }
}

#[test]
fn measured_size_matches_analytic_circle_plane_chord() {
    let fabric = Fabric::plane(
        Vector3::new(0.0, 0.0, 0.25),
        -Vector3::z(),
        Vector3::x(),
        Vector2::new(1.0, 1.0),
    );
    let n = -Vector3::z();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut checked = 0;
    while checked < 2000 {
        let axis = Vector3::new(
            rng.random::<f64>(),
            rng.random::<f64>(),
            rng.random::<f64>(),
        )
        .map(|c| c - 0.5);
        let tip = Pose::from_axis_angle(&axis, rng.random::<f64>() * 3.0).with_translation(
            Vector3::new(0.0, 0.0, 0.25 + (rng.random::<f64>() - 0.5) * 2e-3),
        );
        let theta = 0.2 + rng.random::<f64>() * 2.5;
        let tilt = rng.random::<f64>();
        let needle = NeedleSpec::new(R, theta).unwrap();

        let centre = tip.transform_point(&needle.arc_center_in_tip(tilt));
        let m = tip.axis(0);
        let s = n.dot(&(centre - Vector3::new(0.0, 0.0, 0.25)));
        let q = (n - m * m.dot(&n)).norm();
        if q < 1e-3 || (s / q).abs() > 0.999 * R {
            continue;
        }
        let oracle = 2.0 * (R * R - (s / q).powi(2)).sqrt();
        let got = measure_stitch(&fabric, &needle, tilt, tip.translation(), &tip, 0.0).unwrap();
        assert!(
            (got.raw_size - oracle).abs() < 1e-9,
            "{} vs {oracle}",
            got.raw_size
        );
        checked += 1;
    }
}

#[test]
fn chord_mode_three_millimetres() {
    let size = execute(StitchMode::Chord, 3e-3).unwrap();
    assert!((size - 3e-3).abs() < 1e-6, "measured {size}");
}

#[test]
fn arc_mode_three_millimetres_is_short() {
    let size = execute(StitchMode::Arc, 3e-3).unwrap();
    let oracle = 2.0 * R * (0.5 * 3e-3 / R).sin();
    assert!(
        (size - oracle).abs() < 1e-6,
        "measured {size}, oracle {oracle}"
    );
    assert!((size - 2.930e-3).abs() < 0.5e-6);
}

#[test]
fn measured_size_increases_with_rotation() {
    let mut last = 0.0;
    for i in 0..=40 {
        let d = 1e-3 + i as f64 * 0.1e-3;
        let size = execute(StitchMode::Chord, d).unwrap();
        assert!(size > last, "{size} after {last}");
        last = size;
    }
}

#[test]
fn stitch_off_the_fabric_is_missed() {
    let mut world = World::new(WorldConfig::default(), 0).unwrap();
    // a cloud of an unbounded sheet lets the planner aim past the real edge
    let k = world.config.intrinsics;
    let cloud = cloud_from_depth(&DepthImage::filled(k.width, k.height, 0.25), &k).unwrap();
    let target = Vector3::new(0.115, 0.0, 0.25);
    let next = target + Vector3::new(0.01, 0.0, 0.0);
    let opts = options(StitchMode::Chord);
    let plan = plan_stitch(&target, &next, &cloud, R, 3e-3, TILT, &opts).unwrap();
    world.place_tip(&plan.entry());
    let err = world.pierce_and_measure(&plan).unwrap_err();
    assert!(matches!(err, SimError::MissedStitch(_)), "{err}");
}

#[test]
fn mandrel_cloud_lies_on_the_cylinder() {
    let cfg = WorldConfig::mandrel();
    let Fabric::Cylinder { axis, radius, .. } = cfg.fabric else {
        panic!("mandrel is a cylinder");
    };
    let mut world = World::new(cfg, 0).unwrap();
    let cloud = flat_cloud(&mut world);
    assert!(cloud.valid_count() > 1000);
    let worst = cloud
        .valid_points()
        .map(|p| {
            let q = axis.inverse().transform_point(p);
            (q.xy().norm() - radius).abs()
        })
        .fold(0.0, f64::max);
    assert!(worst < 1e-6, "radius error {worst:e}");
}

#[test]
fn mandrel_top_line_normal_is_radial() {
    let mut world = World::new(WorldConfig::mandrel(), 0).unwrap();
    let cloud = flat_cloud(&mut world);
    let fabric = world.config.fabric;
    for x in [-0.02, 0.0, 0.015] {
        let top = Vector3::new(x, 0.0, 0.25);
        let n = estimate_normal(&cloud, &top, StitchOptions::default().normal_radius).unwrap();
        let angle = n.dot(&fabric.normal_at(&top)).clamp(-1.0, 1.0).acos();
        assert!(
            angle < 1f64.to_radians(),
            "x = {x}: {} deg",
            angle.to_degrees()
        );
    }
}

#[test]
fn plane_normal_tolerates_depth_noise() {
    for seed in 0..5 {
        let mut cfg = WorldConfig::default();
        cfg.noise.depth_sigma = 0.5e-3;
        let mut world = World::new(cfg, seed).unwrap();
        let cloud = flat_cloud(&mut world);
        for x in [-0.03, 0.0, 0.02] {
            let p = Vector3::new(x, 0.01, 0.25);
            let n = estimate_normal(&cloud, &p, StitchOptions::default().normal_radius).unwrap();
            let angle = n.dot(&-Vector3::z()).clamp(-1.0, 1.0).acos();
            assert!(
                angle < 2f64.to_radians(),
                "seed {seed}: {} deg",
                angle.to_degrees()
            );
        }
    }
}
