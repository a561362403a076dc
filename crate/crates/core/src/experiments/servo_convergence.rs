//! Closed-loop IBVS from randomized initial offsets around a reference tip pose.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, UnitSphere};
use rayon::prelude::*;
use serde::Serialize;

use super::{csv_f64, trial_seed, write_file, Check, ExperimentError};
use crate::geometry::Pose;
use crate::servo::ServoConfig;
use crate::sim::{ServoRecord, SimError, World, WorldConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceSetup {
    pub servo: ServoConfig,
    pub max_iterations: usize,
    /// Largest initial translation offset, metres.
    pub max_offset: f64,
    /// Largest initial rotation offset, radians.
    pub max_rotation: f64,
    /// Tip pose, camera frame, the servo is driven to.
    pub reference: Pose,
    /// Trailing iterations used for the steady-state pixel error.
    pub steady_window: usize,
}

impl Default for ConvergenceSetup {
    fn default() -> Self {
        let r = Rotation3::from_matrix_unchecked(Matrix3::from_diagonal(&Vector3::new(
            1.0, -1.0, -1.0,
        )));
        Self {
            servo: ServoConfig::default(),
            max_iterations: 200,
            max_offset: 0.02,
            max_rotation: 10f64.to_radians(),
            reference: Pose::new(r, Vector3::new(0.0, 0.0, 0.24)),
            steady_window: 50,
        }
    }
}

/// Initial tip pose for a trial: the reference displaced by a random offset
/// whose translation and rotation magnitudes are uniform up to the limits.
pub fn random_offset(setup: &ConvergenceSetup, seed: u64) -> Pose {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dir: [f64; 3] = UnitSphere.sample(&mut rng);
    let axis: [f64; 3] = UnitSphere.sample(&mut rng);
    let t = Vector3::from(dir) * (setup.max_offset * rng.random::<f64>());
    let angle = setup.max_rotation * rng.random::<f64>();
    let rot = Rotation3::from_axis_angle(&Unit::new_normalize(Vector3::from(axis)), angle);
    setup.reference.compose(&Pose::new(rot, t))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceTrial {
    pub trial: usize,
    pub seed: u64,
    pub converged: bool,
    pub iterations: usize,
    pub initial_error: f64,
    pub final_error: f64,
    /// Error norm decreased at every step after the first.
    pub monotone: bool,
    /// RMS pixel error over the trailing window.
    pub steady_pixel_rms: f64,
    pub failure: Option<String>,
    #[serde(skip)]
    pub records: Vec<ServoRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub seed: u64,
    pub noise_free: bool,
    pub max_iterations: usize,
    pub trials: Vec<ConvergenceTrial>,
}

pub fn run_convergence_trial(
    world_cfg: &WorldConfig,
    setup: &ConvergenceSetup,
    trial: usize,
    seed: u64,
) -> ConvergenceTrial {
    let result = (|| -> Result<Vec<ServoRecord>, SimError> {
        let mut world = World::new(world_cfg.clone(), seed)?;
        world.place_tip(&random_offset(setup, seed));
        Ok(world
            .servo_to(&setup.reference, &setup.servo, setup.max_iterations)?
            .records)
    })();
    match result {
        Ok(records) => {
            let norms: Vec<f64> = records.iter().map(|r| r.error_norm).collect();
            let converged = records
                .last()
                .is_some_and(|r| r.error_norm < setup.servo.epsilon);
            let monotone = norms.windows(2).skip(1).all(|w| w[1] < w[0]);
            let tail = &records[records.len().saturating_sub(setup.steady_window)..];
            let (mut sq, mut n) = (0.0, 0usize);
            for r in tail {
                for e in r.pixel_errors.iter().filter(|e| !e.is_nan()) {
                    sq += e * e;
                    n += 1;
                }
            }
            ConvergenceTrial {
                trial,
                seed,
                converged,
                iterations: records.len() - 1,
                initial_error: norms.first().copied().unwrap_or(f64::NAN),
                final_error: norms.last().copied().unwrap_or(f64::NAN),
                monotone,
                steady_pixel_rms: if n > 0 {
                    (sq / n as f64).sqrt()
                } else {
                    f64::NAN
                },
                failure: None,
                records,
            }
        }
        Err(e) => ConvergenceTrial {
            trial,
            seed,
            converged: false,
            iterations: 0,
            initial_error: f64::NAN,
            final_error: f64::NAN,
            monotone: false,
            steady_pixel_rms: f64::NAN,
            failure: Some(e.to_string()),
            records: Vec::new(),
        },
    }
}

pub fn run_servo_convergence(
    world_cfg: &WorldConfig,
    setup: &ConvergenceSetup,
    trials: usize,
    seed: u64,
) -> Result<ConvergenceReport, ExperimentError> {
    world_cfg.validate()?;
    setup
        .servo
        .validate()
        .map_err(|e| ExperimentError::InvalidSpec(e.to_string()))?;
    if trials == 0 {
        return Err(ExperimentError::InvalidSpec(
            "trials must be at least 1".into(),
        ));
    }
    let trials = (0..trials)
        .into_par_iter()
        .map(|t| run_convergence_trial(world_cfg, setup, t, trial_seed(seed, 0, t as u64)))
        .collect();
    Ok(ConvergenceReport {
        seed,
        noise_free: world_cfg.noise.is_zero(),
        max_iterations: setup.max_iterations,
        trials,
    })
}

impl ConvergenceReport {
    pub fn checks(&self) -> Vec<Check> {
        let n = self.trials.len();
        if self.noise_free {
            let ok = self
                .trials
                .iter()
                .filter(|t| t.converged && t.monotone && t.iterations < self.max_iterations)
                .count();
            let worst = self.trials.iter().map(|t| t.iterations).max().unwrap_or(0);
            vec![Check::new(
                "noise-free convergence",
                ok == n,
                format!("{ok}/{n} trials converged with strictly decreasing error; worst {worst} iterations"),
            )]
        } else {
            let worst = self
                .trials
                .iter()
                .map(|t| t.steady_pixel_rms)
                .fold(f64::NAN, f64::max);
            let ok = self
                .trials
                .iter()
                .all(|t| t.failure.is_none() && t.steady_pixel_rms < 1.0);
            vec![Check::new(
                "steady-state pixel error",
                ok,
                format!("worst RMS {worst:.3} px (limit 1 px)"),
            )]
        }
    }

    /// Per-iteration log, one row per servo step of every trial.
    pub fn to_csv(&self) -> String {
        let dots = self
            .trials
            .iter()
            .flat_map(|t| t.records.first())
            .map(|r| r.pixel_errors.len())
            .max()
            .unwrap_or(0);
        let mut s =
            String::from("trial,seed,iteration,error_norm,vx,vy,vz,wx,wy,wz,condition,valid,held");
        for i in 0..dots {
            let _ = write!(s, ",px_err_{i}");
        }
        s.push('\n');
        for t in &self.trials {
            for r in &t.records {
                let v = r.twist.to_vector();
                let _ = write!(
                    s,
                    "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                    t.trial,
                    t.seed,
                    r.iteration,
                    csv_f64(r.error_norm),
                    csv_f64(v[0]),
                    csv_f64(v[1]),
                    csv_f64(v[2]),
                    csv_f64(v[3]),
                    csv_f64(v[4]),
                    csv_f64(v[5]),
                    csv_f64(r.condition.unwrap_or(f64::NAN)),
                    r.valid,
                    r.held.as_deref().unwrap_or("").replace(',', ";"),
                );
                for e in &r.pixel_errors {
                    let _ = write!(s, ",{}", csv_f64(*e));
                }
                s.push('\n');
            }
        }
        s
    }

    pub fn summary_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:>5} {:>10} {:>10} {:>12} {:>12} {:>9} {:>10}",
            "trial", "converged", "iters", "initial", "final", "monotone", "px RMS"
        );
        for t in &self.trials {
            let _ = writeln!(
                s,
                "{:>5} {:>10} {:>10} {:>12.3e} {:>12.3e} {:>9} {:>10.3}",
                t.trial,
                t.converged,
                t.iterations,
                t.initial_error,
                t.final_error,
                t.monotone,
                t.steady_pixel_rms
            );
            if let Some(f) = &t.failure {
                let _ = writeln!(s, "      failure: {f}");
            }
        }
        s
    }

    pub fn write_outputs(&self, dir: &Path, checks: &[Check]) -> Result<(), ExperimentError> {
        write_file(dir, "servo_convergence.csv", &self.to_csv())?;
        let json = serde_json::json!({ "report": self, "checks": checks });
        write_file(
            dir,
            "servo_convergence_summary.json",
            &serde_json::to_string_pretty(&json)?,
        )?;
        Ok(())
    }
}
