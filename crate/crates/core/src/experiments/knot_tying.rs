//! Successive stitch-and-knot cycles on the mandrel until the thread runs out.
//!
//! Each cycle executes one stitch with the visual-servoing pipeline, lays the
//! thread over the manipulator hooks and then drives the knot state machine
//! against the spring thread model.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Rotation3, Vector3};
use serde::Serialize;

use super::running_stitch::{execute_stitch, StitchSetup};
use super::{csv_f64, write_file, Check, ExperimentError};
use crate::camera::{cloud_from_depth, PointCloud};
use crate::geometry::{interpolate_pose, Pose, Twist};
use crate::knot::{
    advance, default_keyframes, follower_pose, Arm, KeyframeSet, KnotCommand, KnotConfig,
    KnotError, KnotPhase, KnotSensors, KnotState,
};
use crate::sim::{ArmCommand, DeviceEvent, StepCommand, ThreadModel, World, WorldConfig};
use crate::stitch::{locate_target, plan_stitch, StitchOptions};

/// Hook position relative to the thread anchor at the start of a knot, base frame.
pub const HOOK_OFFSET: [f64; 3] = [0.08, 0.0, 0.025];
/// Needle-midpoint position relative to the anchor at the start of a knot.
pub const NEEDLE_OFFSET: [f64; 3] = [0.16, 0.0, 0.0];

/// Thread-manipulator orientation: sensor x points down, so feeding thread
/// (lowering the hooks into the thread V) is +x.
pub fn manipulator_rotation() -> Rotation3<f64> {
    Rotation3::from_axis_angle(&Vector3::y_axis(), std::f64::consts::FRAC_PI_2)
}

/// Arm poses (left, right) in the base frame at the start of a knot whose
/// thread leaves the fabric at `anchor`.
pub fn home_poses(anchor: &Vector3<f64>, e_t_t: &Pose) -> (Pose, Pose) {
    let left = Pose::new(manipulator_rotation(), anchor + Vector3::from(HOOK_OFFSET));
    let tip = Pose::from_translation(anchor + Vector3::from(NEEDLE_OFFSET));
    (left, tip.compose(&e_t_t.inverse()))
}

/// The demonstrated relative poses `ˡTᵣ` for one knot, recorded at the home
/// configuration. Needle displacements are given in the base frame.
pub fn demonstration_keyframes(e_t_t: &Pose) -> KeyframeSet {
    let (left, right) = home_poses(&Vector3::zeros(), e_t_t);
    let l_inv = left.inverse();
    let rel =
        |d: [f64; 3]| l_inv.compose(&Pose::from_translation(Vector3::from(d)).compose(&right));
    let mut frames = Vec::new();
    for d in [[-0.01, 0.008, 0.004], [-0.02, 0.008, 0.008]] {
        frames.push((KnotPhase::CatchSegment, rel(d)));
    }
    for d in [
        [-0.03, 0.0, 0.012],
        [-0.03, -0.008, 0.008],
        [-0.02, -0.008, 0.004],
        [-0.01, 0.0, 0.0],
    ] {
        frames.push((KnotPhase::SwitchAndLoop, rel(d)));
    }
    // hooks tilt about their own y-axis to let the loop slide off
    let home = l_inv.compose(&right);
    for deg in [10.0f64, 25.0] {
        let tilt = Pose::new(
            Rotation3::from_axis_angle(&Vector3::y_axis(), deg.to_radians()),
            Vector3::zeros(),
        );
        frames.push((KnotPhase::ReleaseKnot, tilt.inverse().compose(&home)));
    }
    frames.push((KnotPhase::ReSecure, rel([0.0, 0.0, 0.0])));
    KeyframeSet { frames }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnotSetup {
    pub knot: KnotConfig,
    pub thread_length: f64,
    /// Thread spring constant, N/m.
    pub stiffness: f64,
    pub keyframes: KeyframeSet,
    /// Keyframe replay speed outside tension mode, m/s.
    pub leader_speed: f64,
    /// Keyframe replay speed while the thread is under tension control, m/s.
    pub tension_leader_speed: f64,
    pub leader_angular_speed: f64,
    /// Control rate while tension mode is active, Hz. The force loop runs
    /// faster than the camera so that stiff threads stay within the band.
    pub force_rate: f64,
    pub stitch: StitchSetup,
    pub stitch_size: f64,
    /// Hard limit on simulation steps per knot.
    pub max_steps_per_knot: usize,
}

impl Default for KnotSetup {
    fn default() -> Self {
        let stitch = StitchSetup {
            options: StitchOptions {
                normal_radius: 3e-3,
                ..StitchSetup::default().options
            },
            target_radius: 3e-3,
            line_start: Vector3::new(-0.052, 0.0, 0.25),
            target_spacing: 7.5e-3,
            ..StitchSetup::default()
        };
        Self {
            knot: KnotConfig::default(),
            thread_length: 0.25,
            stiffness: 200.0,
            keyframes: default_keyframes(),
            leader_speed: 0.01,
            tension_leader_speed: 1e-3,
            leader_angular_speed: 0.2,
            force_rate: 100.0,
            stitch,
            stitch_size: 3e-3,
            max_steps_per_knot: 200_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ForceSample {
    pub time: f64,
    pub knot: usize,
    pub phase: KnotPhase,
    pub force: [f64; 3],
    pub dominant: f64,
    pub tension_mode: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KnotCycle {
    pub knot: usize,
    /// Phases in the order they were entered.
    pub phases: Vec<KnotPhase>,
    /// Simulated seconds spent in each entered phase.
    pub durations: Vec<f64>,
    pub stitch_time: f64,
    pub stitch_size_mm: Option<f64>,
    pub peak_secure_pull: f64,
    pub peak_re_secure: f64,
    pub completed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KnotReport {
    pub knots_completed: usize,
    pub thread_remaining: f64,
    /// Why the run stopped, with phase context.
    pub termination: String,
    pub exhausted: bool,
    pub cycles: Vec<KnotCycle>,
    pub log: Vec<String>,
    #[serde(skip)]
    pub trace: Vec<ForceSample>,
}

struct Trajectory {
    arm: Arm,
    targets: VecDeque<Pose>,
    speed: f64,
}

fn move_toward(current: &Pose, target: &Pose, max_linear: f64, max_angular: f64) -> (Pose, bool) {
    let dist = (target.translation() - current.translation()).norm();
    let angle = current.rotation_vector_to(target).norm();
    let mut frac = 1.0f64;
    if dist > 0.0 {
        frac = frac.min(max_linear / dist);
    }
    if angle > 0.0 {
        frac = frac.min(max_angular / angle);
    }
    if frac >= 1.0 {
        return (*target, true);
    }
    (
        interpolate_pose(frac, current, target).expect("fraction lies in [0, 1)"),
        false,
    )
}

/// Runs stitch-and-knot cycles until the thread budget is exhausted or a cycle fails.
pub fn run_knot_tying(
    world_cfg: &WorldConfig,
    setup: &KnotSetup,
    seed: u64,
) -> Result<KnotReport, ExperimentError> {
    setup
        .knot
        .tension
        .validate()
        .map_err(|e| ExperimentError::InvalidSpec(e.to_string()))?;
    if !(setup.stiffness > 0.0) {
        return Err(ExperimentError::InvalidSpec(format!(
            "thread stiffness must be positive, got {}",
            setup.stiffness
        )));
    }
    if !(setup.force_rate > 0.0) {
        return Err(ExperimentError::InvalidSpec(format!(
            "force rate must be positive, got {}",
            setup.force_rate
        )));
    }
    let mut world = World::new(world_cfg.clone(), seed)?;
    let k = world.config.intrinsics;
    let depth = world.capture_depth();
    let cloud =
        cloud_from_depth(&depth, &k).map_err(|e| ExperimentError::InvalidSpec(e.to_string()))?;
    let targets = setup.stitch.nominal_targets(64);
    let dt = world.dt();

    let mut state = KnotState::new(setup.thread_length, setup.keyframes.clone());
    let mut report = KnotReport {
        knots_completed: 0,
        thread_remaining: state.thread_remaining,
        termination: String::new(),
        exhausted: false,
        cycles: Vec::new(),
        log: Vec::new(),
        trace: Vec::new(),
    };

    for knot in 0.. {
        // the thread budget is checked before committing to another stitch
        let idle = KnotSensors {
            force: world.thread_force(),
            stitch_complete: false,
            pose_reached: true,
            dt: 0.0,
        };
        if let Err(e) = advance(&state, &idle, &setup.knot) {
            report.exhausted = matches!(e, KnotError::ThreadExhausted { .. });
            report.termination = format!("{e} (phase {})", state.phase);
            break;
        }
        let Some(target_nominal) = targets.get(knot) else {
            report.termination = "no stitch targets left on the mandrel".into();
            break;
        };
        let t_stitch = world.time;
        let stitch = stitch_once(&mut world, &cloud, setup, target_nominal);
        let mut cycle = KnotCycle {
            knot,
            phases: vec![KnotPhase::SecurePull],
            durations: vec![0.0],
            stitch_time: world.time - t_stitch,
            stitch_size_mm: stitch.as_ref().ok().map(|(size, _)| size * 1e3),
            peak_secure_pull: 0.0,
            peak_re_secure: 0.0,
            completed: false,
        };
        let anchor = match stitch {
            Ok((_, anchor)) => anchor,
            Err(e) => {
                report.termination = format!("stitch {knot} failed: {e}");
                report.cycles.push(cycle);
                break;
            }
        };
        writeln_log(&mut report.log, world.time, knot, "stitch complete");

        let (left, right) = home_poses(&anchor, &world.config.e_t_t);
        world.step(&StepCommand {
            left: ArmCommand::MoveTo(left),
            right: ArmCommand::MoveTo(right),
            events: Vec::new(),
        });
        world.thread = Some(ThreadModel::new(anchor, 0.0, setup.stiffness));
        world.thread_on_hook = true;
        world.retension_thread();

        let mut tension_mode = false;
        let mut trajectory: Option<Trajectory> = None;
        let mut phase_start = world.time;
        let mut outcome = Ok(());
        for _ in 0..setup.max_steps_per_knot {
            let h = if tension_mode {
                1.0 / setup.force_rate
            } else {
                dt
            };
            let force = world.thread_force();
            let sensors = KnotSensors {
                force,
                stitch_complete: true,
                pose_reached: trajectory.is_none(),
                dt: h,
            };
            let (next, cmds) = match advance(&state, &sensors, &setup.knot) {
                Ok(r) => r,
                Err(e) => {
                    outcome = Err(e);
                    break;
                }
            };
            report.trace.push(ForceSample {
                time: world.time,
                knot,
                phase: state.phase,
                force: force.force.into(),
                dominant: force.dominant(),
                tension_mode,
            });
            match state.phase {
                KnotPhase::SecurePull => {
                    cycle.peak_secure_pull = cycle.peak_secure_pull.max(force.dominant())
                }
                KnotPhase::ReSecure => {
                    cycle.peak_re_secure = cycle.peak_re_secure.max(force.dominant())
                }
                _ => {}
            }
            if next.phase != state.phase {
                *cycle.durations.last_mut().expect("cycle has a phase") = world.time - phase_start;
                phase_start = world.time;
                if next.knots_completed == state.knots_completed {
                    cycle.phases.push(next.phase);
                    cycle.durations.push(0.0);
                }
                writeln_log(
                    &mut report.log,
                    world.time,
                    knot,
                    &format!("enter {}", next.phase),
                );
            }

            let mut step = StepCommand::default();
            let mut secured = false;
            for cmd in cmds {
                match cmd {
                    KnotCommand::Pull {
                        arm: Arm::Left,
                        speed,
                    } => {
                        let v = -setup.knot.tension.feed() * speed;
                        step.left = ArmCommand::Twist(Twist::new(v, Vector3::zeros()));
                    }
                    KnotCommand::Pull {
                        arm: Arm::Right,
                        speed,
                    } => {
                        let away =
                            (world.needle_midpoint() - world.arms.left.translation()).normalize();
                        let v = world.arms.right.rotation().transpose() * away * speed;
                        step.right = ArmCommand::Twist(Twist::new(v, Vector3::zeros()));
                    }
                    KnotCommand::LeaderTrajectory(rel) => {
                        let anchor_left = world.arms.left;
                        trajectory = Some(Trajectory {
                            arm: Arm::Right,
                            targets: rel.iter().map(|r| follower_pose(&anchor_left, r)).collect(),
                            speed: if tension_mode {
                                setup.tension_leader_speed
                            } else {
                                setup.leader_speed
                            },
                        });
                    }
                    KnotCommand::HookTrajectory(rel) => {
                        let right_now = world.arms.right;
                        trajectory = Some(Trajectory {
                            arm: Arm::Left,
                            targets: rel
                                .iter()
                                .map(|r| right_now.compose(&r.inverse()))
                                .collect(),
                            speed: setup.leader_speed,
                        });
                    }
                    KnotCommand::TensionMode(on) => {
                        tension_mode = on;
                        if let Some(t) = trajectory.as_mut() {
                            t.speed = if on {
                                setup.tension_leader_speed
                            } else {
                                setup.leader_speed
                            };
                        }
                    }
                    KnotCommand::FollowerVelocity(v) => {
                        step.left = ArmCommand::Twist(Twist::new(v, Vector3::zeros()))
                    }
                    KnotCommand::NeedleSwitch => step.events.push(DeviceEvent::NeedleSwitch),
                    KnotCommand::RewrapThread => {
                        world.thread_on_hook = true;
                        world.retension_thread();
                    }
                    KnotCommand::KnotSecured => secured = true,
                }
            }
            state = next;
            if secured {
                cycle.completed = true;
                break;
            }
            if let Some(traj) = trajectory.as_mut() {
                let current = match traj.arm {
                    Arm::Left => world.arms.left,
                    Arm::Right => world.arms.right,
                };
                let target = *traj.targets.front().expect("trajectories are non-empty");
                let (pose, reached) = move_toward(
                    &current,
                    &target,
                    traj.speed * h,
                    setup.leader_angular_speed * h,
                );
                match traj.arm {
                    Arm::Left => step.left = ArmCommand::MoveTo(pose),
                    Arm::Right => step.right = ArmCommand::MoveTo(pose),
                }
                if reached {
                    traj.targets.pop_front();
                }
                if traj.targets.is_empty() {
                    trajectory = None;
                }
            }
            if world.step_for(&step, h).workspace_violation {
                outcome = Err(KnotError::InvalidConfig(format!(
                    "workspace violation during {}",
                    state.phase
                )));
                break;
            }
        }
        if cycle.completed {
            report.knots_completed = state.knots_completed;
            report.thread_remaining = state.thread_remaining;
            world.thread_on_hook = false;
            let standby = world.ee_for_tip(&setup.stitch.options.standby);
            world.step(&StepCommand::right(ArmCommand::MoveTo(standby)));
            report.cycles.push(cycle);
            continue;
        }
        report.termination = match outcome {
            Err(e) => format!("{e} (knot {knot}, phase {})", state.phase),
            Ok(()) => format!("step limit reached in knot {knot}, phase {}", state.phase),
        };
        report.cycles.push(cycle);
        break;
    }
    Ok(report)
}

fn writeln_log(log: &mut Vec<String>, time: f64, knot: usize, msg: &str) {
    log.push(format!("t={time:.1}s knot={knot} {msg}"));
}

/// Plans and executes one stitch; returns the measured size and the exit
/// point (base frame) where the thread leaves the fabric.
fn stitch_once(
    world: &mut World,
    cloud: &PointCloud,
    setup: &KnotSetup,
    nominal: &Vector3<f64>,
) -> Result<(f64, Vector3<f64>), String> {
    let k = world.config.intrinsics;
    let s = &setup.stitch;
    let pixel = k.project(nominal).map_err(|e| e.to_string())?;
    let (target, _) =
        locate_target(cloud, &k, &pixel, s.target_radius).map_err(|e| e.to_string())?;
    let next = target + s.line_direction.normalize() * s.target_spacing;
    let plan = plan_stitch(
        &target,
        &next,
        cloud,
        s.needle_radius,
        setup.stitch_size,
        s.tilt,
        &s.options,
    )
    .map_err(|e| e.to_string())?;
    let (size, _, _) = execute_stitch(world, &plan, s).map_err(|e| e.to_string())?;
    let exit = world
        .last_stitch
        .as_ref()
        .map(|m| m.exit)
        .ok_or("no stitch measurement recorded")?;
    Ok((size, world.config.b_t_c.transform_point(&exit)))
}

impl KnotReport {
    /// Settling analysis of the force trace during each tension-mode interval:
    /// (first time within the band, whether it stayed there afterwards).
    pub fn tension_band_ok(&self, setpoint: f64, band: f64) -> Vec<(usize, Option<f64>, bool)> {
        let mut out = Vec::new();
        for cycle in &self.cycles {
            let samples: Vec<&ForceSample> = self
                .trace
                .iter()
                .filter(|s| s.knot == cycle.knot && s.tension_mode)
                .collect();
            if samples.is_empty() {
                continue;
            }
            let first = samples
                .iter()
                .position(|s| (s.dominant - setpoint).abs() < band);
            let held = first.is_some_and(|i| {
                samples[i..]
                    .iter()
                    .all(|s| (s.dominant - setpoint).abs() < band)
            });
            out.push((cycle.knot, first.map(|i| samples[i].time), held));
        }
        out
    }

    pub fn checks(&self, cfg: &KnotConfig) -> Vec<Check> {
        let mut checks = Vec::new();
        checks.push(Check::new(
            "knot count within 12-16",
            (12..=16).contains(&self.knots_completed) && self.exhausted,
            format!(
                "{} knots, stopped by: {}",
                self.knots_completed, self.termination
            ),
        ));
        let completed: Vec<&KnotCycle> = self.cycles.iter().filter(|c| c.completed).collect();
        let in_order =
            !completed.is_empty() && completed.iter().all(|c| c.phases == KnotPhase::CYCLE);
        checks.push(Check::new(
            "five phases in order per knot",
            in_order,
            format!("{} completed cycles inspected", completed.len()),
        ));
        let band = self.tension_band_ok(cfg.tension.setpoint, 0.05);
        let held = band.iter().filter(|(_, _, ok)| *ok).count();
        checks.push(Check::new(
            "tension held at setpoint ± 0.05 N",
            !band.is_empty() && held == band.len(),
            format!("{held}/{} tension intervals settled and held", band.len()),
        ));
        let secure = !completed.is_empty()
            && completed.iter().all(|c| {
                c.peak_secure_pull >= cfg.tension.secure_threshold
                    && c.peak_re_secure >= cfg.tension.secure_threshold
            });
        checks.push(Check::new(
            "secure phases reach threshold",
            secure,
            format!("threshold {} N", cfg.tension.secure_threshold),
        ));
        checks
    }

    pub fn force_csv(&self) -> String {
        let mut s = String::from("time_s,knot,phase,fx,fy,fz,f_dominant,tension_mode\n");
        for t in &self.trace {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                csv_f64(t.time),
                t.knot,
                t.phase,
                csv_f64(t.force[0]),
                csv_f64(t.force[1]),
                csv_f64(t.force[2]),
                csv_f64(t.dominant),
                t.tension_mode
            );
        }
        s
    }

    pub fn phase_csv(&self) -> String {
        let mut s = String::from("knot,phase,duration_s\n");
        for c in &self.cycles {
            let _ = writeln!(s, "{},stitch,{}", c.knot, csv_f64(c.stitch_time));
            for (p, d) in c.phases.iter().zip(&c.durations) {
                let _ = writeln!(s, "{},{},{}", c.knot, p, csv_f64(*d));
            }
        }
        s
    }

    pub fn summary_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "knots completed: {}", self.knots_completed);
        let _ = writeln!(s, "thread remaining: {:.1} mm", self.thread_remaining * 1e3);
        let _ = writeln!(s, "stopped: {}", self.termination);
        let _ = writeln!(
            s,
            "{:>4} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9}",
            "knot", "stitch", "secure", "catch", "switch", "release", "resecure", "d (mm)"
        );
        for c in &self.cycles {
            let _ = write!(s, "{:>4} {:>9.1}", c.knot, c.stitch_time);
            for i in 0..5 {
                match c.durations.get(i) {
                    Some(d) => {
                        let _ = write!(s, " {d:>9.1}");
                    }
                    None => {
                        let _ = write!(s, " {:>9}", "-");
                    }
                }
            }
            let _ = writeln!(
                s,
                " {:>9}",
                c.stitch_size_mm.map_or("-".into(), |d| format!("{d:.2}"))
            );
        }
        s
    }

    pub fn write_outputs(&self, dir: &Path, checks: &[Check]) -> Result<(), ExperimentError> {
        write_file(dir, "knot_force_trace.csv", &self.force_csv())?;
        write_file(dir, "knot_phases.csv", &self.phase_csv())?;
        write_file(dir, "knot_log.txt", &(self.log.join("\n") + "\n"))?;
        let json = serde_json::json!({ "report": self, "checks": checks });
        write_file(
            dir,
            "knot_summary.json",
            &serde_json::to_string_pretty(&json)?,
        )?;
        Ok(())
    }
}
