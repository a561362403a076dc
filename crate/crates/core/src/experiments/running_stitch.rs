//! Running-stitch experiment: six targets along a line, one commanded size per
//! trial, each stitch planned from the captured point cloud, servoed and
//! executed in the simulated cell.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Vector2, Vector3};
use rayon::prelude::*;
use serde::Serialize;

use super::{csv_f64, trial_seed, write_file, Check, ExperimentError, ExperimentSpec};
use crate::camera::cloud_from_depth;
use crate::servo::ServoConfig;
use crate::sim::{default_standby, SimError, World, WorldConfig};
use crate::stitch::{locate_target, plan_stitch, StitchMode, StitchOptions, StitchPlan};

#[derive(Debug, Clone, PartialEq)]
pub struct StitchSetup {
    pub needle_radius: f64,
    pub tilt: f64,
    pub options: StitchOptions,
    pub servo: ServoConfig,
    /// Stop threshold for the final approach to the entry pose.
    pub entry_epsilon: f64,
    pub hover_iterations: usize,
    pub entry_iterations: usize,
    /// Gain of the low-gain dwell used when the entry approach does not reach
    /// `entry_epsilon` (noisy tracking).
    pub settle_gain: f64,
    pub settle_iterations: usize,
    /// Neighbourhood radius of the plane fit that places each target on the
    /// captured surface.
    pub target_radius: f64,
    /// First target on the sewing line, camera frame.
    pub line_start: Vector3<f64>,
    pub line_direction: Vector3<f64>,
    pub target_spacing: f64,
}

impl Default for StitchSetup {
    fn default() -> Self {
        Self {
            needle_radius: 4e-3,
            tilt: 30f64.to_radians(),
            options: StitchOptions {
                standby: default_standby(),
                ..StitchOptions::default()
            },
            servo: ServoConfig::default(),
            entry_epsilon: 1e-7,
            hover_iterations: 300,
            entry_iterations: 600,
            settle_gain: 0.05,
            settle_iterations: 200,
            target_radius: 10e-3,
            line_start: Vector3::new(-0.02, 0.0, 0.25),
            line_direction: Vector3::x(),
            target_spacing: 8e-3,
        }
    }
}

impl StitchSetup {
    pub fn with_mode(mut self, mode: StitchMode) -> Self {
        self.options.mode = mode;
        self
    }

    /// Nominal target points on the sewing line.
    pub fn nominal_targets(&self, count: usize) -> Vec<Vector3<f64>> {
        let dir = self.line_direction.normalize();
        (0..count)
            .map(|i| self.line_start + dir * (i as f64 * self.target_spacing))
            .collect()
    }
}

/// One executed (or failed) stitch.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StitchRow {
    pub size_mm: f64,
    pub trial: usize,
    pub seed: u64,
    pub target: usize,
    pub measured_mm: Option<f64>,
    pub error_mm: Option<f64>,
    pub servo_iterations: usize,
    pub servo_converged: bool,
    /// Simulated seconds from standby to the end of pull-out.
    pub sim_time_s: f64,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SizeSummary {
    pub size_mm: f64,
    pub stitches: usize,
    pub failures: usize,
    pub mean_measured_mm: f64,
    pub min_measured_mm: f64,
    pub mean_abs_error_mm: f64,
    /// Mean absolute error with every failed stitch counted as an error of the
    /// full commanded size.
    pub mean_abs_error_with_misses_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StitchReport {
    pub mode: StitchMode,
    pub seed: u64,
    pub trials: usize,
    pub targets: usize,
    pub jaw_press_bias_mm: f64,
    pub noise_free: bool,
    pub summaries: Vec<SizeSummary>,
    #[serde(skip)]
    pub rows: Vec<StitchRow>,
}

/// Servo approach and execution of one planned stitch from the current pose.
pub fn execute_stitch(
    world: &mut World,
    plan: &StitchPlan,
    setup: &StitchSetup,
) -> Result<(f64, usize, bool), SimError> {
    let mut iterations = 0;
    let approach = match &plan.phases[0] {
        crate::stitch::StitchPhase::Approach(w) => w.clone(),
        _ => unreachable!("plans start with an approach"),
    };
    let (hover, entry) = (approach[0], plan.entry());
    iterations += world
        .servo_to(&hover, &setup.servo, setup.hover_iterations)?
        .iterations();
    let fine = ServoConfig {
        epsilon: setup.entry_epsilon,
        ..setup.servo
    };
    let outcome = world.servo_to(&entry, &fine, setup.entry_iterations)?;
    iterations += outcome.iterations();
    let mut converged = outcome.converged;
    if !converged && setup.settle_iterations > 0 {
        let settle = ServoConfig {
            gain: setup.settle_gain,
            ..fine
        };
        let dwell = world.servo_to(&entry, &settle, setup.settle_iterations)?;
        iterations += dwell.iterations();
        converged = dwell.converged;
    }
    let m = world.pierce_and_measure(plan)?;
    Ok((m.size, iterations, converged))
}

/// Result of one stitch attempt within a trial.
#[derive(Debug, Clone, PartialEq)]
pub struct StitchOutcome {
    /// Measured size in metres, or why the stitch failed.
    pub measured: Result<f64, String>,
    pub servo_iterations: usize,
    pub servo_converged: bool,
    pub sim_time: f64,
}

impl StitchOutcome {
    fn failed(reason: String, sim_time: f64) -> Self {
        Self {
            measured: Err(reason),
            servo_iterations: 0,
            servo_converged: false,
            sim_time,
        }
    }
}

/// One trial: capture, locate the targets, then plan and execute each stitch.
pub fn run_stitch_trial(
    world_cfg: &WorldConfig,
    setup: &StitchSetup,
    size: f64,
    targets: usize,
    seed: u64,
) -> Result<Vec<StitchOutcome>, SimError> {
    let mut world = World::new(world_cfg.clone(), seed)?;
    let k = world.config.intrinsics;
    let depth = world.capture_depth();
    let cloud = cloud_from_depth(&depth, &k).map_err(|e| SimError::InvalidConfig(e.to_string()))?;
    let located: Vec<Result<Vector3<f64>, String>> = setup
        .nominal_targets(targets)
        .iter()
        .map(|q| {
            let pixel: Vector2<f64> = k.project(q).map_err(|e| e.to_string())?;
            locate_target(&cloud, &k, &pixel, setup.target_radius)
                .map(|(p, _)| p)
                .map_err(|e| e.to_string())
        })
        .collect();
    let step = setup.line_direction.normalize() * setup.target_spacing;
    let mut out = Vec::with_capacity(targets);
    for i in 0..targets {
        let t0 = world.time;
        let target = match &located[i] {
            Ok(p) => *p,
            Err(e) => {
                out.push(StitchOutcome::failed(
                    format!("target localisation: {e}"),
                    0.0,
                ));
                continue;
            }
        };
        let next = match located.get(i + 1) {
            Some(Ok(p)) => *p,
            _ => match i.checked_sub(1).map(|j| &located[j]) {
                Some(Ok(prev)) => target * 2.0 - prev,
                _ => target + step,
            },
        };
        let plan = match plan_stitch(
            &target,
            &next,
            &cloud,
            setup.needle_radius,
            size,
            setup.tilt,
            &setup.options,
        ) {
            Ok(p) => p,
            Err(e) => {
                out.push(StitchOutcome::failed(format!("planning: {e}"), 0.0));
                continue;
            }
        };
        match execute_stitch(&mut world, &plan, setup) {
            Ok((measured, servo_iterations, servo_converged)) => out.push(StitchOutcome {
                measured: Ok(measured),
                servo_iterations,
                servo_converged,
                sim_time: world.time - t0,
            }),
            Err(e) => {
                out.push(StitchOutcome::failed(e.to_string(), world.time - t0));
                let standby = world.ee_for_tip(&setup.options.standby);
                world.arms.right = standby;
            }
        }
    }
    Ok(out)
}

pub fn run_running_stitch(
    spec: &ExperimentSpec,
    world_cfg: &WorldConfig,
    setup: &StitchSetup,
) -> Result<StitchReport, ExperimentError> {
    spec.validate()?;
    world_cfg.validate()?;
    let jobs: Vec<(usize, usize)> = (0..spec.sizes_mm.len())
        .flat_map(|s| (0..spec.trials).map(move |t| (s, t)))
        .collect();
    let results: Vec<Vec<StitchRow>> = jobs
        .par_iter()
        .map(|&(s, t)| {
            let size_mm = spec.sizes_mm[s];
            let seed = trial_seed(spec.seed, s as u64, t as u64);
            match run_stitch_trial(world_cfg, setup, size_mm * 1e-3, spec.targets, seed) {
                Ok(stitches) => stitches
                    .into_iter()
                    .enumerate()
                    .map(|(target, o)| {
                        let measured_mm = o.measured.as_ref().ok().map(|m| m * 1e3);
                        StitchRow {
                            size_mm,
                            trial: t,
                            seed,
                            target,
                            measured_mm,
                            error_mm: measured_mm.map(|m| m - size_mm),
                            servo_iterations: o.servo_iterations,
                            servo_converged: o.servo_converged,
                            sim_time_s: o.sim_time,
                            failure: o.measured.err(),
                        }
                    })
                    .collect(),
                Err(e) => (0..spec.targets)
                    .map(|target| StitchRow {
                        size_mm,
                        trial: t,
                        seed,
                        target,
                        measured_mm: None,
                        error_mm: None,
                        servo_iterations: 0,
                        servo_converged: false,
                        sim_time_s: 0.0,
                        failure: Some(e.to_string()),
                    })
                    .collect(),
            }
        })
        .collect();
    let rows: Vec<StitchRow> = results.into_iter().flatten().collect();
    let summaries = spec
        .sizes_mm
        .iter()
        .map(|&size_mm| summarize(size_mm, rows.iter().filter(|r| r.size_mm == size_mm)))
        .collect();
    Ok(StitchReport {
        mode: setup.options.mode,
        seed: spec.seed,
        trials: spec.trials,
        targets: spec.targets,
        jaw_press_bias_mm: world_cfg.jaw_press_bias * 1e3,
        noise_free: world_cfg.noise.is_zero(),
        summaries,
        rows,
    })
}

fn summarize<'a>(size_mm: f64, rows: impl Iterator<Item = &'a StitchRow>) -> SizeSummary {
    let mut stitches = 0;
    let mut failures = 0;
    let (mut sum, mut sum_abs, mut min) = (0.0, 0.0, f64::INFINITY);
    for r in rows {
        stitches += 1;
        match r.measured_mm {
            Some(m) => {
                sum += m;
                sum_abs += (m - size_mm).abs();
                min = min.min(m);
            }
            None => failures += 1,
        }
    }
    let ok = (stitches - failures) as f64;
    SizeSummary {
        size_mm,
        stitches,
        failures,
        mean_measured_mm: if ok > 0.0 { sum / ok } else { f64::NAN },
        min_measured_mm: if ok > 0.0 { min } else { f64::NAN },
        mean_abs_error_mm: if ok > 0.0 { sum_abs / ok } else { f64::NAN },
        mean_abs_error_with_misses_mm: if stitches > 0 {
            (sum_abs + failures as f64 * size_mm) / stitches as f64
        } else {
            f64::NAN
        },
    }
}

impl StitchReport {
    pub fn summary(&self, size_mm: f64) -> Option<&SizeSummary> {
        self.summaries.iter().find(|s| s.size_mm == size_mm)
    }

    /// Checks implied by the run's configuration.
    pub fn checks(&self) -> Vec<Check> {
        let mut checks = Vec::new();
        let failures: usize = self.summaries.iter().map(|s| s.failures).sum();
        checks.push(Check::new(
            "all stitches executed",
            failures == 0,
            format!("{failures} failed stitches"),
        ));
        for s in &self.summaries {
            if self.jaw_press_bias_mm > 0.0 && s.size_mm < 2.0 {
                let min_ok = s.min_measured_mm >= 2.0 - 1e-3;
                let err_ok = (s.mean_abs_error_mm - 1.2).abs() <= 0.3;
                checks.push(Check::new(
                    format!("{:.1} mm with jaw-press bias", s.size_mm),
                    min_ok && err_ok,
                    format!(
                        "min measured {:.3} mm, mean error {:.3} mm",
                        s.min_measured_mm, s.mean_abs_error_mm
                    ),
                ));
            } else if self.jaw_press_bias_mm == 0.0
                && self.mode == StitchMode::Chord
                && s.size_mm >= 2.0
            {
                let limit = if self.noise_free { 0.05 } else { 0.6 };
                checks.push(Check::new(
                    format!("{:.1} mm mean abs error", s.size_mm),
                    s.mean_abs_error_with_misses_mm <= limit,
                    format!(
                        "{:.4} mm counting {} misses as full-size errors (limit {limit} mm)",
                        s.mean_abs_error_with_misses_mm, s.failures
                    ),
                ));
            }
        }
        checks
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("size_mm,trial,seed,target,measured_mm,error_mm,servo_iterations,servo_converged,sim_time_s,failure\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{}",
                r.size_mm,
                r.trial,
                r.seed,
                r.target,
                csv_f64(r.measured_mm.unwrap_or(f64::NAN)),
                csv_f64(r.error_mm.unwrap_or(f64::NAN)),
                r.servo_iterations,
                r.servo_converged,
                csv_f64(r.sim_time_s),
                r.failure.as_deref().unwrap_or("").replace(',', ";"),
            );
        }
        s
    }

    /// Human-readable table: one line per (size, trial) with the measured sizes
    /// of each target and the average absolute error.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = write!(s, "{:>5} {:>7}", "Trial", "d (mm)");
        for i in 0..self.targets {
            let _ = write!(s, " {:>6}", format!("#{}", i + 1));
        }
        let _ = writeln!(s, " {:>10}", "Avg. Error");
        let mut line = 0;
        for summary in &self.summaries {
            for trial in 0..self.trials {
                line += 1;
                let rows: Vec<&StitchRow> = self
                    .rows
                    .iter()
                    .filter(|r| r.size_mm == summary.size_mm && r.trial == trial)
                    .collect();
                let _ = write!(s, "{line:>5} {:>7.2}", summary.size_mm);
                let mut errs = Vec::new();
                for r in &rows {
                    match r.measured_mm {
                        Some(m) => {
                            errs.push((m - r.size_mm).abs());
                            let _ = write!(s, " {m:>6.2}");
                        }
                        None => {
                            let _ = write!(s, " {:>6}", "miss");
                        }
                    }
                }
                let avg = if errs.is_empty() {
                    f64::NAN
                } else {
                    errs.iter().sum::<f64>() / errs.len() as f64
                };
                let _ = writeln!(s, " {avg:>10.2}");
            }
        }
        let _ = writeln!(s);
        for summary in &self.summaries {
            let _ = writeln!(
                s,
                "d = {:.2} mm: mean measured {:.3} mm, mean abs error {:.3} mm over {} stitches ({} failed)",
                summary.size_mm, summary.mean_measured_mm, summary.mean_abs_error_mm, summary.stitches, summary.failures
            );
        }
        s
    }

    pub fn write_outputs(&self, dir: &Path, checks: &[Check]) -> Result<(), ExperimentError> {
        write_file(dir, "running_stitch.csv", &self.to_csv())?;
        write_file(dir, "running_stitch_table.txt", &self.table())?;
        let json = serde_json::json!({ "report": self, "checks": checks });
        write_file(
            dir,
            "running_stitch_summary.json",
            &serde_json::to_string_pretty(&json)?,
        )?;
        Ok(())
    }
}
