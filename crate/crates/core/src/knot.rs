//! Five-phase overhand-knot state machine with leader–follower coordination
//! and proportional thread-tension control.
//!
//! The machine is a pure reducer: `advance(state, sensors) -> (state, commands)`.
//! Arm motion, thread physics and timing live in the caller.

use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{GeometryError, Pose};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KnotError {
    #[error("thread exhausted: {remaining:.4} m left, {required:.4} m needed per knot")]
    ThreadExhausted { remaining: f64, required: f64 },
    #[error("force threshold {threshold} N not reached within {timeout} s during {phase}")]
    Stall {
        phase: KnotPhase,
        threshold: f64,
        timeout: f64,
    },
    #[error("malformed keyframe recording: {0}")]
    MalformedRecording(String),
    #[error("keyframe recording has no {0} keyframes")]
    MissingKeyframes(KnotPhase),
    #[error("invalid tension configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnotPhase {
    /// Thread manipulator pulls until the secure threshold is reached.
    SecurePull,
    /// Sewing device catches the segment between the hooks under tension control.
    CatchSegment,
    /// Needle switch and loop: the overhand knot is formed.
    SwitchAndLoop,
    /// Hooks tilt to release the knot.
    ReleaseKnot,
    /// Sewing device pulls the thread around the hook to secure the knot.
    ReSecure,
}

impl KnotPhase {
    pub const CYCLE: [KnotPhase; 5] = [
        KnotPhase::SecurePull,
        KnotPhase::CatchSegment,
        KnotPhase::SwitchAndLoop,
        KnotPhase::ReleaseKnot,
        KnotPhase::ReSecure,
    ];

    pub fn next(self) -> KnotPhase {
        match self {
            KnotPhase::SecurePull => KnotPhase::CatchSegment,
            KnotPhase::CatchSegment => KnotPhase::SwitchAndLoop,
            KnotPhase::SwitchAndLoop => KnotPhase::ReleaseKnot,
            KnotPhase::ReleaseKnot => KnotPhase::ReSecure,
            KnotPhase::ReSecure => KnotPhase::SecurePull,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            KnotPhase::SecurePull => "secure_pull",
            KnotPhase::CatchSegment => "catch_segment",
            KnotPhase::SwitchAndLoop => "switch_and_loop",
            KnotPhase::ReleaseKnot => "release_knot",
            KnotPhase::ReSecure => "re_secure",
        }
    }

    pub fn from_label(s: &str) -> Option<KnotPhase> {
        Self::CYCLE.into_iter().find(|p| p.label() == s)
    }

    pub fn is_force_guarded(self) -> bool {
        matches!(self, KnotPhase::SecurePull | KnotPhase::ReSecure)
    }
}

impl std::fmt::Display for KnotPhase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Three-axis force in the thread-manipulator sensor frame, newtons.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForceReading {
    pub force: Vector3<f64>,
    pub dominant_axis: usize,
}

impl ForceReading {
    pub fn new(force: Vector3<f64>) -> Self {
        let dominant_axis = force.iamax();
        Self {
            force,
            dominant_axis,
        }
    }

    pub fn zero() -> Self {
        Self::new(Vector3::zeros())
    }

    /// Magnitude of the component along the dominant axis.
    pub fn dominant(&self) -> f64 {
        self.force[self.dominant_axis].abs()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TensionConfig {
    /// Tension held in tension mode, N.
    pub setpoint: f64,
    /// Force that secures a knot, N.
    pub secure_threshold: f64,
    /// Proportional gain, m/(s·N).
    pub gain: f64,
    /// Follower speed clamp, m/s.
    pub max_speed: f64,
    /// Unit direction, in the follower end-effector frame, along which a positive
    /// command feeds thread out and lowers tension.
    pub feed_direction: [f64; 3],
}

impl Default for TensionConfig {
    fn default() -> Self {
        Self {
            setpoint: 0.7,
            secure_threshold: 2.0,
            gain: 0.05,
            max_speed: 0.02,
            feed_direction: [1.0, 0.0, 0.0],
        }
    }
}

impl TensionConfig {
    pub fn validate(&self) -> Result<(), KnotError> {
        if !(self.setpoint > 0.0 && self.setpoint < self.secure_threshold) {
            return Err(KnotError::InvalidConfig(format!(
                "need 0 < setpoint ({}) < secure threshold ({})",
                self.setpoint, self.secure_threshold
            )));
        }
        if !(self.gain > 0.0 && self.max_speed > 0.0) {
            return Err(KnotError::InvalidConfig(
                "gain and speed clamp must be positive".into(),
            ));
        }
        let n = Vector3::from(self.feed_direction).norm();
        if (n - 1.0).abs() > 1e-9 {
            return Err(KnotError::InvalidConfig(format!(
                "feed direction must be a unit vector (norm {n})"
            )));
        }
        Ok(())
    }

    pub fn feed(&self) -> Vector3<f64> {
        Vector3::from(self.feed_direction)
    }
}

/// Follower linear velocity in its own frame: `k_p·(f − setpoint)` along the
/// feed direction, with the speed clamped.
pub fn tension_command(reading: &ForceReading, cfg: &TensionConfig) -> Vector3<f64> {
    let speed =
        (cfg.gain * (reading.dominant() - cfg.setpoint)).clamp(-cfg.max_speed, cfg.max_speed);
    cfg.feed() * speed
}

/// Right end-effector pose from the left pose and a relative keyframe:
/// `ᵇTᵣ = ᵇTₗ·ˡTᵣ` (both arms share one base frame).
pub fn follower_pose(b_t_l: &Pose, l_t_r: &Pose) -> Pose {
    b_t_l.compose(l_t_r)
}

/// Demonstrated relative poses `ˡTᵣ`, grouped by the phase that replays them.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct KeyframeSet {
    pub frames: Vec<(KnotPhase, Pose)>,
}

impl KeyframeSet {
    pub fn for_phase(&self, phase: KnotPhase) -> Vec<Pose> {
        self.frames
            .iter()
            .filter(|(p, _)| *p == phase)
            .map(|(_, pose)| *pose)
            .collect()
    }

    pub fn require(&self, phase: KnotPhase) -> Result<Vec<Pose>, KnotError> {
        let v = self.for_phase(phase);
        if v.is_empty() {
            Err(KnotError::MissingKeyframes(phase))
        } else {
            Ok(v)
        }
    }

    /// Text recording: `<phase> <16 row-major values>` per line, `#` comments.
    pub fn to_recording(&self) -> String {
        let mut s =
            String::from("# phase r00 r01 r02 r03 r10 ... r33 (relative pose lTr, metres)\n");
        for (phase, pose) in &self.frames {
            let vals: Vec<String> = pose.to_row_major().iter().map(|v| v.to_string()).collect();
            let _ = writeln!(s, "{} {}", phase.label(), vals.join(" "));
        }
        s
    }
}

/// Parses a keyframe recording. Empty recordings are rejected.
pub fn load_keyframes(recording: &str) -> Result<KeyframeSet, KnotError> {
    let mut frames = Vec::new();
    for (lineno, line) in recording.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut tok = line.split_whitespace();
        let label = tok.next().unwrap_or_default();
        let phase = KnotPhase::from_label(label).ok_or_else(|| {
            KnotError::MalformedRecording(format!("line {}: unknown phase '{label}'", lineno + 1))
        })?;
        let vals: Vec<f64> = tok
            .map(|s| s.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| KnotError::MalformedRecording(format!("line {}: {e}", lineno + 1)))?;
        if vals.len() != 16 {
            return Err(KnotError::MalformedRecording(format!(
                "line {}: expected 16 values, got {}",
                lineno + 1,
                vals.len()
            )));
        }
        let pose = Pose::from_row_major(&vals)
            .map_err(|e| KnotError::MalformedRecording(format!("line {}: {e}", lineno + 1)))?;
        frames.push((phase, pose));
    }
    if frames.is_empty() {
        return Err(KnotError::MalformedRecording(
            "recording contains no keyframes".into(),
        ));
    }
    Ok(KeyframeSet { frames })
}

/// Recording shipped with the crate; drives one full knot in the default scene.
pub const DEFAULT_RECORDING: &str = include_str!("../data/default_keyframes.txt");

pub fn default_keyframes() -> KeyframeSet {
    load_keyframes(DEFAULT_RECORDING).expect("shipped keyframe recording parses")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KnotConfig {
    pub tension: TensionConfig,
    /// Thread used by one stitch plus knot, metres.
    pub consumption_per_knot: f64,
    /// Limit for each force-guarded phase, simulated seconds.
    pub phase_timeout: f64,
    /// Speed of the pulling arm in force-guarded phases, m/s.
    pub pull_speed: f64,
}

impl Default for KnotConfig {
    fn default() -> Self {
        Self {
            tension: TensionConfig::default(),
            consumption_per_knot: 0.017,
            phase_timeout: 10.0,
            pull_speed: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnotState {
    pub phase: KnotPhase,
    pub knots_completed: usize,
    pub thread_remaining: f64,
    pub keyframes: Arc<KeyframeSet>,
    /// Simulated time spent in the current phase, seconds.
    pub time_in_phase: f64,
}

impl KnotState {
    pub fn new(thread_length: f64, keyframes: KeyframeSet) -> Self {
        Self {
            phase: KnotPhase::SecurePull,
            knots_completed: 0,
            thread_remaining: thread_length.max(0.0),
            keyframes: Arc::new(keyframes),
            time_in_phase: 0.0,
        }
    }

    fn enter(&self, phase: KnotPhase) -> KnotState {
        KnotState {
            phase,
            time_in_phase: 0.0,
            ..self.clone()
        }
    }
}

/// Immutable sensor snapshot handed to [`advance`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KnotSensors {
    pub force: ForceReading,
    pub stitch_complete: bool,
    /// The active leader or hook trajectory has reached its final keyframe.
    pub pose_reached: bool,
    /// Time elapsed since the previous snapshot, seconds.
    pub dt: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arm {
    /// Thread manipulator, carries the force sensor.
    Left,
    /// Sewing device.
    Right,
}

#[derive(Debug, Clone, PartialEq)]
pub enum KnotCommand {
    /// Move `arm` along its pull direction at `speed` (m/s).
    Pull {
        arm: Arm,
        speed: f64,
    },
    /// Replay relative keyframes `ˡTᵣ` on the sewing device.
    LeaderTrajectory(Vec<Pose>),
    /// Drive the thread manipulator so that `ˡTᵣ` matches the keyframe (hook tilt).
    HookTrajectory(Vec<Pose>),
    TensionMode(bool),
    /// Follower linear velocity in its own frame, m/s.
    FollowerVelocity(Vector3<f64>),
    NeedleSwitch,
    /// Thread path goes back around the hooks before the securing pull.
    RewrapThread,
    KnotSecured,
}

/// One reducer step of the knot cycle.
pub fn advance(
    state: &KnotState,
    sensors: &KnotSensors,
    cfg: &KnotConfig,
) -> Result<(KnotState, Vec<KnotCommand>), KnotError> {
    let tension = &cfg.tension;
    let mut s = state.clone();
    match state.phase {
        KnotPhase::SecurePull => {
            if state.thread_remaining < cfg.consumption_per_knot {
                return Err(KnotError::ThreadExhausted {
                    remaining: state.thread_remaining,
                    required: cfg.consumption_per_knot,
                });
            }
            if !sensors.stitch_complete {
                return Ok((s, Vec::new()));
            }
            if sensors.force.dominant() >= tension.secure_threshold {
                let next = state.enter(KnotPhase::CatchSegment);
                let catch = next.keyframes.require(KnotPhase::CatchSegment)?;
                return Ok((
                    next,
                    vec![
                        KnotCommand::TensionMode(true),
                        KnotCommand::LeaderTrajectory(catch),
                    ],
                ));
            }
            s.time_in_phase += sensors.dt;
            if s.time_in_phase > cfg.phase_timeout {
                return Err(KnotError::Stall {
                    phase: KnotPhase::SecurePull,
                    threshold: tension.secure_threshold,
                    timeout: cfg.phase_timeout,
                });
            }
            Ok((
                s,
                vec![KnotCommand::Pull {
                    arm: Arm::Left,
                    speed: cfg.pull_speed,
                }],
            ))
        }
        KnotPhase::CatchSegment => {
            if sensors.pose_reached && state.time_in_phase > 0.0 {
                let next = state.enter(KnotPhase::SwitchAndLoop);
                let lp = next.keyframes.require(KnotPhase::SwitchAndLoop)?;
                return Ok((
                    next,
                    vec![
                        KnotCommand::FollowerVelocity(tension_command(&sensors.force, tension)),
                        KnotCommand::NeedleSwitch,
                        KnotCommand::LeaderTrajectory(lp),
                    ],
                ));
            }
            s.time_in_phase += sensors.dt;
            Ok((
                s,
                vec![KnotCommand::FollowerVelocity(tension_command(
                    &sensors.force,
                    tension,
                ))],
            ))
        }
        KnotPhase::SwitchAndLoop => {
            if sensors.pose_reached && state.time_in_phase > 0.0 {
                let next = state.enter(KnotPhase::ReleaseKnot);
                let tilt = next.keyframes.require(KnotPhase::ReleaseKnot)?;
                return Ok((
                    next,
                    vec![
                        KnotCommand::TensionMode(false),
                        KnotCommand::HookTrajectory(tilt),
                    ],
                ));
            }
            s.time_in_phase += sensors.dt;
            Ok((
                s,
                vec![KnotCommand::FollowerVelocity(tension_command(
                    &sensors.force,
                    tension,
                ))],
            ))
        }
        KnotPhase::ReleaseKnot => {
            if sensors.pose_reached && state.time_in_phase > 0.0 {
                let next = state.enter(KnotPhase::ReSecure);
                let wrap = next.keyframes.require(KnotPhase::ReSecure)?;
                return Ok((
                    next,
                    vec![
                        KnotCommand::RewrapThread,
                        KnotCommand::LeaderTrajectory(wrap),
                    ],
                ));
            }
            s.time_in_phase += sensors.dt;
            Ok((s, Vec::new()))
        }
        KnotPhase::ReSecure => {
            if !sensors.pose_reached {
                // still carrying the thread around the hook
                s.time_in_phase += sensors.dt;
                return stall_check(s, cfg, Vec::new());
            }
            if sensors.force.dominant() >= tension.secure_threshold {
                let mut next = state.enter(KnotPhase::SecurePull);
                next.knots_completed += 1;
                next.thread_remaining =
                    (state.thread_remaining - cfg.consumption_per_knot).max(0.0);
                return Ok((next, vec![KnotCommand::KnotSecured]));
            }
            s.time_in_phase += sensors.dt;
            stall_check(
                s,
                cfg,
                vec![KnotCommand::Pull {
                    arm: Arm::Right,
                    speed: cfg.pull_speed,
                }],
            )
        }
    }
}

fn stall_check(
    s: KnotState,
    cfg: &KnotConfig,
    cmds: Vec<KnotCommand>,
) -> Result<(KnotState, Vec<KnotCommand>), KnotError> {
    if s.time_in_phase > cfg.phase_timeout {
        return Err(KnotError::Stall {
            phase: s.phase,
            threshold: cfg.tension.secure_threshold,
            timeout: cfg.phase_timeout,
        });
    }
    Ok((s, cmds))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Rotation3, Vector3};

    fn reading(f: f64) -> ForceReading {
        ForceReading::new(Vector3::new(f, 0.0, 0.0))
    }

    fn sensors(force: f64, pose_reached: bool) -> KnotSensors {
        KnotSensors {
            force: reading(force),
            stitch_complete: true,
            pose_reached,
            dt: 0.1,
        }
    }

    #[test]
    fn tension_at_setpoint_is_zero() {
        let cfg = TensionConfig::default();
        assert_eq!(tension_command(&reading(0.7), &cfg), Vector3::zeros());
    }

    #[test]
    fn tension_above_setpoint_feeds_thread() {
        let cfg = TensionConfig::default();
        let v = tension_command(&reading(0.9), &cfg);
        assert!((v - Vector3::new(0.01, 0.0, 0.0)).norm() < 1e-15);
        let v = tension_command(&reading(0.5), &cfg);
        assert!((v + Vector3::new(0.01, 0.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn tension_is_clamped() {
        let cfg = TensionConfig::default();
        let v = tension_command(&reading(100.0), &cfg);
        assert!((v.norm() - cfg.max_speed).abs() < 1e-15);
    }

    #[test]
    fn follower_identity_cases() {
        let p = Pose::new(
            Rotation3::from_euler_angles(0.1, -0.4, 1.2),
            Vector3::new(0.3, -0.2, 0.1),
        );
        assert_eq!(follower_pose(&Pose::identity(), &p), p);
        assert_eq!(follower_pose(&p, &Pose::identity()), p);
    }

    fn run_cycle(state: KnotState, cfg: &KnotConfig) -> (KnotState, Vec<KnotPhase>) {
        let mut state = state;
        let mut visited = vec![state.phase];
        // pull until secured, then each keyframe phase needs one step in motion
        let (s, _) = advance(&state, &sensors(1.0, true), cfg).unwrap();
        state = s;
        let (s, cmds) = advance(&state, &sensors(2.5, true), cfg).unwrap();
        assert!(cmds.contains(&KnotCommand::TensionMode(true)));
        state = s;
        for _ in 0..3 {
            visited.push(state.phase);
            let (s, _) = advance(&state, &sensors(0.7, false), cfg).unwrap();
            let (s, _) = advance(&s, &sensors(0.7, true), cfg).unwrap();
            state = s;
        }
        visited.push(state.phase);
        let (s, _) = advance(&state, &sensors(0.3, true), cfg).unwrap();
        let (s, cmds) = advance(&s, &sensors(2.1, true), cfg).unwrap();
        assert_eq!(cmds, vec![KnotCommand::KnotSecured]);
        (s, visited)
    }

    #[test]
    fn full_cycle_completes_one_knot() {
        let cfg = KnotConfig::default();
        let state = KnotState::new(0.25, default_keyframes());
        let (after, visited) = run_cycle(state, &cfg);
        assert_eq!(visited, KnotPhase::CYCLE.to_vec());
        assert_eq!(after.phase, KnotPhase::SecurePull);
        assert_eq!(after.knots_completed, 1);
        assert!((after.thread_remaining - (0.25 - cfg.consumption_per_knot)).abs() < 1e-15);
    }

    #[test]
    fn thread_budget_gives_fourteen_knots() {
        let cfg = KnotConfig::default();
        let mut state = KnotState::new(0.25, default_keyframes());
        let idle = KnotSensors {
            stitch_complete: false,
            ..sensors(0.0, true)
        };
        loop {
            if let Err(e) = advance(&state, &idle, &cfg) {
                assert!(matches!(e, KnotError::ThreadExhausted { .. }));
                break;
            }
            state = run_cycle(state, &cfg).0;
        }
        assert_eq!(state.knots_completed, 14);
    }

    #[test]
    fn weak_pull_stalls_after_timeout() {
        let cfg = KnotConfig::default();
        let mut state = KnotState::new(0.25, default_keyframes());
        let mut steps = 0;
        let err = loop {
            match advance(&state, &sensors(1.0, true), &cfg) {
                Ok((s, _)) => state = s,
                Err(e) => break e,
            }
            steps += 1;
            assert!(steps < 1000);
        };
        assert!(matches!(
            err,
            KnotError::Stall {
                phase: KnotPhase::SecurePull,
                ..
            }
        ));
        assert!((steps as f64 * 0.1 - cfg.phase_timeout).abs() <= 0.1 + 1e-9);
    }

    #[test]
    fn waits_for_stitch() {
        let cfg = KnotConfig::default();
        let state = KnotState::new(0.25, default_keyframes());
        let idle = KnotSensors {
            stitch_complete: false,
            ..sensors(5.0, true)
        };
        let (s, cmds) = advance(&state, &idle, &cfg).unwrap();
        assert_eq!(s, state);
        assert!(cmds.is_empty());
    }

    #[test]
    fn empty_recording_is_rejected() {
        assert!(load_keyframes("").is_err());
        assert!(load_keyframes("# header only\n\n").is_err());
    }

    #[test]
    fn malformed_recording_is_rejected() {
        assert!(load_keyframes("catch_segment 1 0 0").is_err());
        assert!(load_keyframes("tie_bow 1 0 0 0 0 1 0 0 0 0 1 0 0 0 0 1").is_err());
    }

    #[test]
    fn recording_round_trip_is_exact() {
        let set = KeyframeSet {
            frames: vec![
                (
                    KnotPhase::CatchSegment,
                    Pose::new(
                        Rotation3::from_euler_angles(0.3, 0.2, 0.1),
                        Vector3::new(0.1 / 3.0, 1e-17, -7.25),
                    ),
                ),
                (KnotPhase::ReSecure, Pose::identity()),
            ],
        };
        let back = load_keyframes(&set.to_recording()).unwrap();
        assert_eq!(back, set);
    }

    #[test]
    fn missing_phase_is_reported() {
        let set = KeyframeSet {
            frames: vec![(KnotPhase::CatchSegment, Pose::identity())],
        };
        assert!(matches!(
            set.require(KnotPhase::ReleaseKnot),
            Err(KnotError::MissingKeyframes(KnotPhase::ReleaseKnot))
        ));
    }

    #[test]
    fn phase_labels_round_trip() {
        for p in KnotPhase::CYCLE {
            assert_eq!(KnotPhase::from_label(p.label()), Some(p));
        }
    }
}
