//! Acceptance suite: one line per criterion, nonzero exit if any fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{Matrix4, Vector2, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sewbot::camera::CameraIntrinsics;
use sewbot::experiments::{
    run_knot_tying, run_running_stitch, run_servo_convergence, ConvergenceSetup, ExperimentSpec,
    KnotSetup, StitchSetup,
};
use sewbot::geometry::{interpolate_pose, velocity_twist, Pose, Twist};
use sewbot::knot::{advance, default_keyframes, ForceReading, KnotConfig, KnotSensors, KnotState};
use sewbot::servo::interaction_row;
use sewbot::sim::{integrate, NoiseConfig, WorldConfig};

type Criterion = (u32, fn() -> Outcome, Duration);

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn noisy() -> NoiseConfig {
    NoiseConfig {
        pixel_sigma: 0.5,
        depth_sigma: 1e-3,
        dropout: 0.0,
    }
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::from_fn(|_, _| 2.0 * rng.random::<f64>() - 1.0);
        if v.norm() > 1e-3 && v.norm() <= 1.0 {
            return v.normalize();
        }
    }
}

fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
    let t = Vector3::from_fn(|_, _| 4.0 * rng.random::<f64>() - 2.0);
    Pose::from_axis_angle(
        &random_unit(rng),
        rng.random::<f64>() * std::f64::consts::PI,
    )
    .with_translation(t)
}

fn interaction_matrix() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let h = 1e-6;
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let (x, y) = (rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
        let z = 0.1 + 2.0 * rng.random::<f64>();
        let v = Vector6::from_fn(|_, _| rng.random::<f64>() - 0.5);
        let twist = Twist::from_vector(&v);
        let p = Vector3::new(x * z, y * z, z);
        let seen = |s: f64| {
            let q = integrate(&Pose::identity(), &twist, s)
                .inverse()
                .transform_point(&p);
            Vector2::new(q.x / q.z, q.y / q.z)
        };
        let fd = (seen(h) - seen(-h)) / (2.0 * h);
        let analytic = interaction_row(x, y, z).expect("positive depth") * v;
        worst = worst.max((analytic - fd).norm() / fd.norm().max(1e-12));
    }
    outcome(
        worst < 1e-4,
        format!("1000 features, worst relative error {worst:.2e} (limit 1e-4)"),
    )
}

fn servo_convergence() -> Outcome {
    let setup = ConvergenceSetup::default();
    let report = match run_servo_convergence(&WorldConfig::default(), &setup, 50, 1) {
        Ok(r) => r,
        Err(e) => return outcome(false, e.to_string()),
    };
    let ok = report
        .trials
        .iter()
        .filter(|t| t.converged && t.monotone && t.iterations < 200)
        .count();
    let worst = report
        .trials
        .iter()
        .map(|t| t.iterations)
        .max()
        .unwrap_or(0);
    outcome(
        ok == 50,
        format!("{ok}/50 seeds converged below ε with decreasing error, worst {worst} iterations (limit 200)"),
    )
}

fn stitch_geometry() -> Outcome {
    let setup = StitchSetup::default();
    let clean = ExperimentSpec::running_stitch(vec![2.0, 3.0, 4.0, 5.0], 1, 1);
    let report = match run_running_stitch(&clean, &WorldConfig::default(), &setup) {
        Ok(r) => r,
        Err(e) => return outcome(false, e.to_string()),
    };
    let worst_clean = report
        .rows
        .iter()
        .map(|r| {
            r.measured_mm
                .map_or(f64::INFINITY, |m| (m - r.size_mm).abs())
        })
        .fold(0.0, f64::max);

    let world = WorldConfig {
        noise: noisy(),
        ..WorldConfig::default()
    };
    let spec = ExperimentSpec::running_stitch(vec![2.0, 3.0, 4.0, 5.0], 10, 1);
    let report = match run_running_stitch(&spec, &world, &setup) {
        Ok(r) => r,
        Err(e) => return outcome(false, e.to_string()),
    };
    // a missed stitch counts as an error of its full commanded size
    let errors: Vec<String> = report
        .summaries
        .iter()
        .map(|s| format!("{:.0} mm {:.3}", s.size_mm, s.mean_abs_error_with_misses_mm))
        .collect();
    let noisy_ok = report
        .summaries
        .iter()
        .all(|s| s.mean_abs_error_with_misses_mm <= 0.6);
    let misses: usize = report.summaries.iter().map(|s| s.failures).sum();
    outcome(
        worst_clean <= 0.05 && noisy_ok,
        format!(
            "noise-free worst error {worst_clean:.5} mm (limit 0.05); noisy mean abs error {} mm over 6 stitches x 10 seeds, {misses} misses (limit 0.6)",
            errors.join(", ")
        ),
    )
}

fn one_millimetre_failure_mode() -> Outcome {
    let world = WorldConfig {
        jaw_press_bias: 1e-3,
        ..WorldConfig::default()
    };
    let spec = ExperimentSpec::running_stitch(vec![1.0], 5, 1);
    let report = match run_running_stitch(&spec, &world, &StitchSetup::default()) {
        Ok(r) => r,
        Err(e) => return outcome(false, e.to_string()),
    };
    let measured: Vec<f64> = report.rows.iter().filter_map(|r| r.measured_mm).collect();
    let all_measured = measured.len() == report.rows.len();
    let min = measured.iter().copied().fold(f64::INFINITY, f64::min);
    let mean_err = measured.iter().map(|m| (m - 1.0).abs()).sum::<f64>() / measured.len() as f64;
    // 1 µm allowance for the residual servo error on the noise-free chord
    outcome(
        all_measured && min >= 2.0 - 1e-3 && (mean_err - 1.2).abs() <= 0.3,
        format!(
            "{} stitches, min measured {min:.5} mm (limit 2), mean error {mean_err:.3} mm (target 1.2 ± 0.3)",
            measured.len()
        ),
    )
}

fn knot_cycle() -> Outcome {
    let setup = KnotSetup::default();
    let report = match run_knot_tying(&WorldConfig::mandrel(), &setup, 1) {
        Ok(r) => r,
        Err(e) => return outcome(false, e.to_string()),
    };
    let checks = report.checks(&setup.knot);
    let passed = checks.iter().all(|c| c.passed);
    let detail: Vec<String> = checks
        .iter()
        .map(|c| format!("{} [{}]", c.detail, if c.passed { "ok" } else { "failed" }))
        .collect();
    outcome(passed, detail.join("; "))
}

fn property_suites() -> Outcome {
    const N: usize = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut failures = Vec::new();
    let close = |a: &Matrix4<f64>, b: &Matrix4<f64>, tol: f64| (a - b).amax() <= tol;

    let mut bad = 0;
    for _ in 0..N {
        let (a, b, c) = (
            random_pose(&mut rng),
            random_pose(&mut rng),
            random_pose(&mut rng),
        );
        let id = Matrix4::identity();
        if !close(&a.compose(&a.inverse()).to_matrix4(), &id, 1e-9)
            || !close(&a.inverse().compose(&a).to_matrix4(), &id, 1e-9)
            || a.compose(&Pose::identity()) != a
            || !close(
                &a.compose(&b).compose(&c).to_matrix4(),
                &a.compose(&b.compose(&c)).to_matrix4(),
                1e-9,
            )
        {
            bad += 1;
        }
    }
    if bad > 0 {
        failures.push(format!("pose group axioms {bad}"));
    }

    let mut bad = 0;
    for _ in 0..N {
        let (a, b) = (random_pose(&mut rng), random_pose(&mut rng));
        let lhs = *velocity_twist(&a.compose(&b)).matrix();
        let rhs = velocity_twist(&a).matrix() * velocity_twist(&b).matrix();
        if (lhs - rhs).amax() > 1e-9 * rhs.amax().max(1.0) {
            bad += 1;
        }
    }
    if bad > 0 {
        failures.push(format!("velocity-twist homomorphism {bad}"));
    }

    let k = CameraIntrinsics::default();
    let mut bad = 0;
    for _ in 0..N {
        let z = 0.05 + 3.0 * rng.random::<f64>();
        let p = Vector3::new(
            (rng.random::<f64>() - 0.5) * z,
            (rng.random::<f64>() - 0.5) * z,
            z,
        );
        let there_and_back = k.backproject(&k.project(&p).expect("in front"), z);
        let pixel = Vector2::new(rng.random::<f64>() * 640.0, rng.random::<f64>() * 480.0);
        let back_and_forth = k.backproject(&pixel, z).and_then(|q| k.project(&q).ok());
        let ok = there_and_back.is_some_and(|q| (q - p).amax() < 1e-9)
            && back_and_forth.is_some_and(|m| (m - pixel).amax() < 1e-9);
        if !ok {
            bad += 1;
        }
    }
    if bad > 0 {
        failures.push(format!("projection round trips {bad}"));
    }

    let mut bad = 0;
    for _ in 0..N {
        let t0 = random_pose(&mut rng);
        let angle = rng.random::<f64>() * 3.1;
        let t1 = t0
            .compose(&Pose::from_axis_angle(&random_unit(&mut rng), angle))
            .with_translation(Vector3::from_fn(|_, _| rng.random::<f64>()));
        let t = rng.random::<f64>();
        let p = interpolate_pose(t, &t0, &t1).expect("t in [0, 1]");
        if (t0.inverse().compose(&p).rotation_angle() - t * angle).abs() >= 1e-9 {
            bad += 1;
        }
    }
    if bad > 0 {
        failures.push(format!("slerp angle linearity {bad}"));
    }

    let cfg = KnotConfig {
        phase_timeout: 1e9,
        ..KnotConfig::default()
    };
    let mut bad = 0;
    for _ in 0..N {
        let mut state = KnotState::new(0.25, default_keyframes());
        let mut exits = 0;
        let mut ok = true;
        for _ in 0..100 {
            let sensors = KnotSensors {
                force: ForceReading::new(Vector3::new(3.0 * rng.random::<f64>(), 0.0, 0.0)),
                stitch_complete: true,
                pose_reached: rng.random::<bool>(),
                dt: 0.1,
            };
            let Ok((next, _)) = advance(&state, &sensors, &cfg) else {
                break;
            };
            if next.phase != state.phase {
                ok &= next.phase == state.phase.next();
                if next.knots_completed > state.knots_completed {
                    exits += 1;
                }
            }
            ok &= next.knots_completed == exits;
            state = next;
        }
        if !ok {
            bad += 1;
        }
    }
    if bad > 0 {
        failures.push(format!("knot phase order {bad}"));
    }

    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            format!("5 suites x {N} random cases, no counterexamples")
        } else {
            format!("counterexamples: {}", failures.join(", "))
        },
    )
}

fn determinism() -> Outcome {
    let world = WorldConfig {
        noise: NoiseConfig {
            dropout: 0.01,
            ..noisy()
        },
        ..WorldConfig::default()
    };
    let spec = ExperimentSpec::running_stitch(vec![2.0, 3.0, 4.0, 5.0], 3, 7);
    let stitch = || {
        run_running_stitch(&spec, &world, &StitchSetup::default())
            .map(|r| r.to_csv())
            .map_err(|e| e.to_string())
    };
    let servo = || {
        run_servo_convergence(&world, &ConvergenceSetup::default(), 10, 7)
            .map(|r| r.to_csv())
            .map_err(|e| e.to_string())
    };
    let knot = || {
        run_knot_tying(&WorldConfig::mandrel(), &KnotSetup::default(), 7)
            .map(|r| r.force_csv())
            .map_err(|e| e.to_string())
    };
    let mut same = Vec::new();
    for (name, run) in [
        ("stitch", &stitch as &dyn Fn() -> Result<String, String>),
        ("servo", &servo),
        ("knot", &knot),
    ] {
        match (run(), run()) {
            (Ok(a), Ok(b)) => same.push((name, a == b, a.len())),
            (Err(e), _) | (_, Err(e)) => return outcome(false, format!("{name}: {e}")),
        }
    }
    let detail: Vec<String> = same
        .iter()
        .map(|(n, eq, len)| {
            format!(
                "{n} {len} bytes {}",
                if *eq { "identical" } else { "differ" }
            )
        })
        .collect();
    outcome(same.iter().all(|(_, eq, _)| *eq), detail.join(", "))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 7] = [
        (1, interaction_matrix, Duration::from_secs(5)),
        (2, servo_convergence, Duration::from_secs(30)),
        (3, stitch_geometry, Duration::from_secs(120)),
        (4, one_millimetre_failure_mode, Duration::from_secs(30)),
        (5, knot_cycle, Duration::from_secs(60)),
        (6, property_suites, Duration::from_secs(60)),
        (7, determinism, Duration::from_secs(120)),
    ];
    let mut all = true;
    for (n, run, limit) in criteria {
        let start = Instant::now();
        let o = run();
        let elapsed = start.elapsed();
        let in_time = elapsed <= limit;
        let passed = o.passed && in_time;
        all &= passed;
        println!(
            "{} criterion {n}: {} ({:.2} s, limit {} s)",
            if passed { "PASS" } else { "FAIL" },
            o.detail,
            elapsed.as_secs_f64(),
            limit.as_secs()
        );
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
