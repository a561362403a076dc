//! End-effector-space simulation of the sewing cell: two kinematic arms, a
//! fixed RGB-D camera, fabric geometry, a dot pattern on the needle driver and a
//! spring model of the thread.

pub mod fabric;
pub mod thread;

use nalgebra::{Matrix3, Rotation3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::camera::{CameraIntrinsics, DepthImage, Feature};
use crate::geometry::{velocity_twist, Pose, Twist};
use crate::knot::ForceReading;
use crate::servo::{
    control_law, desired_features, FeaturePoint, FeatureSet, ServoConfig, ServoError,
};
use crate::stitch::{NeedleSpec, StitchPlan};

pub use fabric::Fabric;
pub use thread::ThreadModel;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("observation lost: no pattern dot is valid")]
    ObservationLost,
    #[error("missed stitch: {0}")]
    MissedStitch(String),
    #[error("workspace violation during {0}")]
    WorkspaceViolation(&'static str),
    #[error("invalid world configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Servo(#[from] ServoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NoiseConfig {
    /// Pixel noise σ on tracked dots, px.
    pub pixel_sigma: f64,
    /// Depth noise σ, metres.
    pub depth_sigma: f64,
    /// Probability that a depth sample is missing.
    pub dropout: f64,
}

impl NoiseConfig {
    pub fn is_zero(&self) -> bool {
        self.pixel_sigma == 0.0 && self.depth_sigma == 0.0 && self.dropout == 0.0
    }
}

/// Axis-aligned box in the base frame that end-effector positions must stay in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Workspace {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Workspace {
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn clamp(&self, p: &Vector3<f64>) -> Vector3<f64> {
        Vector3::from_fn(|i, _| p[i].clamp(self.min[i], self.max[i]))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldConfig {
    pub intrinsics: CameraIntrinsics,
    /// Camera pose in the robot base frame (hand-eye calibration result).
    pub b_t_c: Pose,
    pub fabric: Fabric,
    /// Dot centres in the pattern frame.
    pub pattern: Vec<Vector3<f64>>,
    /// Pattern pose in the needle-tip frame.
    pub t_t_p: Pose,
    /// Needle-tip pose in the sewing-device end-effector frame.
    pub e_t_t: Pose,
    pub noise: NoiseConfig,
    pub dt: f64,
    pub workspace: Workspace,
    /// Added to every measured stitch size, metres.
    pub jaw_press_bias: f64,
}

/// Planar grid of `nx × ny` dots at `spacing`, centred on the pattern origin.
pub fn dot_grid(nx: usize, ny: usize, spacing: f64) -> Vec<Vector3<f64>> {
    let ox = 0.5 * (nx as f64 - 1.0) * spacing;
    let oy = 0.5 * (ny as f64 - 1.0) * spacing;
    (0..ny)
        .flat_map(|j| {
            (0..nx)
                .map(move |i| Vector3::new(i as f64 * spacing - ox, j as f64 * spacing - oy, 0.0))
        })
        .collect()
}

impl Default for WorldConfig {
    fn default() -> Self {
        let down = Rotation3::from_matrix_unchecked(Matrix3::from_diagonal(&Vector3::new(
            1.0, -1.0, -1.0,
        )));
        Self {
            intrinsics: CameraIntrinsics::default(),
            b_t_c: Pose::new(down, Vector3::new(0.35, 0.0, 0.5)),
            fabric: Fabric::plane(
                Vector3::new(0.0, 0.0, 0.25),
                -Vector3::z(),
                Vector3::x(),
                Vector2::new(0.1, 0.08),
            ),
            pattern: dot_grid(4, 3, 0.02),
            t_t_p: Pose::from_translation(Vector3::new(0.0, 0.0, 0.06)),
            e_t_t: Pose::from_translation(Vector3::new(0.0, 0.0, -0.1)),
            noise: NoiseConfig::default(),
            dt: 0.1,
            workspace: Workspace {
                min: Vector3::new(0.0, -0.4, 0.0),
                max: Vector3::new(0.7, 0.4, 0.6),
            },
            jaw_press_bias: 0.0,
        }
    }
}

impl WorldConfig {
    /// The default cell with the graft wrapped on a Ø22 mm mandrel whose top
    /// line lies along the camera x-axis at 0.25 m depth.
    pub fn mandrel() -> Self {
        let radius = 0.011;
        let axis = Pose::from_axis_angle(&Vector3::y(), std::f64::consts::FRAC_PI_2)
            .with_translation(Vector3::new(0.0, 0.0, 0.25 + radius));
        Self {
            fabric: Fabric::Cylinder {
                axis,
                radius,
                half_length: 0.06,
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.intrinsics
            .validate()
            .map_err(|e| SimError::InvalidConfig(e.to_string()))?;
        if !(self.dt > 0.0) {
            return Err(SimError::InvalidConfig(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if !(0.0..1.0).contains(&self.noise.dropout) {
            return Err(SimError::InvalidConfig(format!(
                "dropout must lie in [0, 1), got {}",
                self.noise.dropout
            )));
        }
        if self.noise.pixel_sigma < 0.0 || self.noise.depth_sigma < 0.0 {
            return Err(SimError::InvalidConfig(
                "noise σ must be non-negative".into(),
            ));
        }
        if self.pattern.len() < 4 {
            return Err(SimError::InvalidConfig(format!(
                "pattern needs at least 4 dots, got {}",
                self.pattern.len()
            )));
        }
        if let Fabric::Cylinder { radius, .. } = self.fabric {
            if !(radius > 0.0) {
                return Err(SimError::InvalidConfig(
                    "mandrel radius must be positive".into(),
                ));
            }
        }
        if (0..3).any(|i| self.workspace.min[i] > self.workspace.max[i]) {
            return Err(SimError::InvalidConfig("workspace min exceeds max".into()));
        }
        Ok(())
    }

    pub fn c_t_b(&self) -> Pose {
        self.b_t_c.inverse()
    }
}

/// Poses of both arms in the base frame plus the needle hand-over state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmState {
    /// Thread manipulator; carries the force sensor and the hooks at its origin.
    pub left: Pose,
    /// Sewing device.
    pub right: Pose,
    /// Which of the two sewing-device jaws holds the needle.
    pub jaws: [bool; 2],
}

impl ArmState {
    /// Needle-tip pose in the base frame.
    pub fn needle_tip(&self, e_t_t: &Pose) -> Pose {
        self.right.compose(e_t_t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum ArmCommand {
    #[default]
    Hold,
    /// Body-frame twist of the end-effector.
    Twist(Twist),
    /// Kinematic move to an end-effector pose in the base frame.
    MoveTo(Pose),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeviceEvent {
    NeedleSwitch,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepCommand {
    pub left: ArmCommand,
    pub right: ArmCommand,
    pub events: Vec<DeviceEvent>,
}

impl StepCommand {
    pub fn right(cmd: ArmCommand) -> Self {
        Self {
            right: cmd,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StepReport {
    pub workspace_violation: bool,
}

/// Integrates a constant body-frame twist over `dt`: the translation moves by
/// `R·v·dt` and the rotation is composed with `exp(ω·dt)`.
pub fn integrate(pose: &Pose, twist: &Twist, dt: f64) -> Pose {
    let r = Rotation3::from_matrix_unchecked(*pose.rotation());
    let t = pose.translation() + pose.rotation() * twist.linear * dt;
    let dr = Rotation3::new(twist.angular * dt);
    Pose::new(r * dr, t)
}

/// Pixel-space dot observation; `depth` is `None` when the dot is invalid.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub features: Vec<Feature>,
}

impl Observation {
    pub fn valid_count(&self) -> usize {
        self.features.iter().filter(|f| f.depth.is_some()).count()
    }

    /// Pairs the observation with desired normalized coordinates.
    pub fn feature_set(&self, desired: &[Vector2<f64>], k: &CameraIntrinsics) -> FeatureSet {
        FeatureSet::new(
            self.features
                .iter()
                .zip(desired)
                .map(|(f, d)| FeaturePoint {
                    id: f.id,
                    current: k.normalize(&f.pixel),
                    desired: *d,
                    depth: f.depth.unwrap_or(0.0),
                    valid: f.depth.is_some(),
                })
                .collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StitchMeasurement {
    pub entry: Vector3<f64>,
    pub exit: Vector3<f64>,
    /// Entry–exit distance on the fabric, metres.
    pub raw_size: f64,
    /// `raw_size` plus the configured jaw-press bias.
    pub size: f64,
}

/// Entry and exit of the needle circle on the fabric.
///
/// The needle circle is fixed by `final_tip` (tip pose after reorientation,
/// camera frame): it lies in the tip y–z plane, passes through the tip and has
/// its centre at [`NeedleSpec::arc_center_in_tip`]. The entry is the
/// circle–surface crossing nearest `pierce_tip`; the exit is the next crossing
/// along the direction in which the needle runs under the surface.
pub fn measure_stitch(
    fabric: &Fabric,
    needle: &NeedleSpec,
    tilt: f64,
    pierce_tip: &Vector3<f64>,
    final_tip: &Pose,
    bias: f64,
) -> Result<StitchMeasurement, SimError> {
    const SAMPLES: usize = 720;
    let r = needle.radius;
    if fabric.signed_distance(pierce_tip).abs() > 0.5 * r {
        return Err(SimError::MissedStitch(format!(
            "needle tip is {:.2} mm from the fabric at pierce start",
            fabric.signed_distance(pierce_tip) * 1e3
        )));
    }
    let centre = final_tip.transform_point(&needle.arc_center_in_tip(tilt));
    let e1 = (final_tip.translation() - centre) / r;
    let e2 = final_tip.axis(0).cross(&e1);
    let at = |phi: f64| centre + (e1 * phi.cos() + e2 * phi.sin()) * r;
    let f = |phi: f64| fabric.signed_distance(&at(phi));

    let step = std::f64::consts::TAU / SAMPLES as f64;
    let mut roots = Vec::new();
    for i in 0..SAMPLES {
        let (a, b) = (i as f64 * step, (i + 1) as f64 * step);
        let (fa, fb) = (f(a), f(b));
        if fa == 0.0 {
            roots.push(a);
        } else if fa * fb < 0.0 {
            let (mut lo, mut hi, mut flo) = (a, b, fa);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                let fm = f(mid);
                if fm == 0.0 || hi - lo < 1e-15 {
                    lo = mid;
                    hi = mid;
                    break;
                }
                if (fm < 0.0) == (flo < 0.0) {
                    lo = mid;
                    flo = fm;
                } else {
                    hi = mid;
                }
            }
            roots.push(0.5 * (lo + hi));
        }
    }
    if roots.len() < 2 {
        return Err(SimError::MissedStitch(
            "needle arc does not cross the fabric twice".into(),
        ));
    }
    let entry_phi = *roots
        .iter()
        .min_by(|a, b| {
            (at(**a) - pierce_tip)
                .norm()
                .total_cmp(&(at(**b) - pierce_tip).norm())
        })
        .expect("roots is non-empty");
    let probe = 1e-3;
    let dir = if f(entry_phi + probe) < 0.0 {
        1.0
    } else {
        -1.0
    };
    let exit_phi = roots
        .iter()
        .map(|&p| (p, (dir * (p - entry_phi)).rem_euclid(std::f64::consts::TAU)))
        .filter(|(_, gap)| *gap > 1e-9)
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(p, _)| p)
        .expect("at least two roots");
    let entry = at(entry_phi);
    let exit = at(exit_phi);
    for (name, p) in [("entry", &entry), ("exit", &exit)] {
        if !fabric.within_bounds(p) {
            return Err(SimError::MissedStitch(format!(
                "{name} point lies off the fabric"
            )));
        }
    }
    let raw_size = (exit - entry).norm();
    Ok(StitchMeasurement {
        entry,
        exit,
        raw_size,
        size: raw_size + bias,
    })
}

/// One row of a servo log.
#[derive(Debug, Clone, PartialEq)]
pub struct ServoRecord {
    pub iteration: usize,
    pub error_norm: f64,
    /// Per-dot pixel error magnitude; NaN for invalid dots.
    pub pixel_errors: Vec<f64>,
    pub twist: Twist,
    pub condition: Option<f64>,
    pub valid: usize,
    /// Set when the controller refused to act and the arm held position.
    pub held: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServoOutcome {
    pub records: Vec<ServoRecord>,
    pub converged: bool,
}

impl ServoOutcome {
    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    pub fn final_error(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.error_norm)
    }
}

/// The simulated cell. One writer advances it; observation draws from its own
/// seeded noise stream so identical seeds replay exactly.
#[derive(Debug, Clone)]
pub struct World {
    pub config: WorldConfig,
    pub arms: ArmState,
    pub thread: Option<ThreadModel>,
    /// Whether the thread currently runs over the manipulator hooks.
    pub thread_on_hook: bool,
    /// Simulated time, seconds.
    pub time: f64,
    /// Measurement of the most recent executed stitch.
    pub last_stitch: Option<StitchMeasurement>,
    rng: ChaCha8Rng,
}

impl World {
    pub fn new(config: WorldConfig, seed: u64) -> Result<Self, SimError> {
        config.validate()?;
        let standby = config
            .b_t_c
            .compose(&default_standby())
            .compose(&config.e_t_t.inverse());
        Ok(Self {
            arms: ArmState {
                left: Pose::identity(),
                right: standby,
                jaws: [true, false],
            },
            config,
            thread: None,
            thread_on_hook: false,
            time: 0.0,
            last_stitch: None,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn dt(&self) -> f64 {
        self.config.dt
    }

    /// Needle-tip pose in the camera frame.
    pub fn tip_in_camera(&self) -> Pose {
        self.config
            .c_t_b()
            .compose(&self.arms.needle_tip(&self.config.e_t_t))
    }

    /// Sewing-device end-effector pose in the base frame that puts the tip at `c_t_t`.
    pub fn ee_for_tip(&self, c_t_t: &Pose) -> Pose {
        self.config
            .b_t_c
            .compose(c_t_t)
            .compose(&self.config.e_t_t.inverse())
    }

    pub fn place_tip(&mut self, c_t_t: &Pose) {
        self.arms.right = self.ee_for_tip(c_t_t);
    }

    pub fn step(&mut self, cmd: &StepCommand) -> StepReport {
        self.step_for(cmd, self.config.dt)
    }

    /// One step of duration `dt` instead of the configured period, for loops
    /// that run faster than the camera (force control).
    pub fn step_for(&mut self, cmd: &StepCommand, dt: f64) -> StepReport {
        let mut report = StepReport::default();
        for (arm, c) in [
            (&mut self.arms.left, &cmd.left),
            (&mut self.arms.right, &cmd.right),
        ] {
            let next = match c {
                ArmCommand::Hold => continue,
                ArmCommand::Twist(t) => integrate(arm, t, dt),
                ArmCommand::MoveTo(p) => *p,
            };
            if self.config.workspace.contains(next.translation()) {
                *arm = next;
            } else {
                report.workspace_violation = true;
                *arm = next.with_translation(self.config.workspace.clamp(next.translation()));
            }
        }
        for ev in &cmd.events {
            match ev {
                DeviceEvent::NeedleSwitch => {
                    self.arms.jaws = [self.arms.jaws[1], self.arms.jaws[0]]
                }
            }
        }
        self.time += dt;
        report
    }

    /// Synthetic tracking of the pattern dots through `ᶜTₜ·ᵗTₚ`.
    pub fn observe(&mut self) -> Result<Observation, SimError> {
        let c_t_p = self.tip_in_camera().compose(&self.config.t_t_p);
        let noise = self.config.noise;
        let k = self.config.intrinsics;
        let pixel_noise = Normal::new(0.0, noise.pixel_sigma).expect("σ validated non-negative");
        let depth_noise = Normal::new(0.0, noise.depth_sigma).expect("σ validated non-negative");
        let mut features = Vec::with_capacity(self.config.pattern.len());
        for (id, dot) in self.config.pattern.iter().enumerate() {
            let xc = c_t_p.transform_point(dot);
            let Ok(pixel) = k.project(&xc) else {
                features.push(Feature {
                    id,
                    pixel: Vector2::new(f64::NAN, f64::NAN),
                    depth: None,
                });
                continue;
            };
            let pixel = pixel
                + Vector2::new(
                    pixel_noise.sample(&mut self.rng),
                    pixel_noise.sample(&mut self.rng),
                );
            let z = xc.z + depth_noise.sample(&mut self.rng);
            let dropped = noise.dropout > 0.0 && self.rng.random::<f64>() < noise.dropout;
            let depth = (!dropped && z > 0.0 && k.contains(&pixel)).then_some(z);
            features.push(Feature { id, pixel, depth });
        }
        let obs = Observation { features };
        if obs.valid_count() == 0 {
            return Err(SimError::ObservationLost);
        }
        Ok(obs)
    }

    /// Renders the fabric into a depth image with the configured depth noise
    /// and dropout. Missing samples are 0.
    pub fn capture_depth(&mut self) -> DepthImage {
        let k = self.config.intrinsics;
        let noise = self.config.noise;
        let depth_noise = Normal::new(0.0, noise.depth_sigma).expect("σ validated non-negative");
        let mut img = DepthImage::filled(k.width, k.height, 0.0);
        for v in 0..k.height {
            for u in 0..k.width {
                let ray = k.ray(&Vector2::new(u as f64, v as f64));
                if let Some(t) = self.config.fabric.ray_intersect(&Vector3::zeros(), &ray) {
                    let z = t * ray.z + depth_noise.sample(&mut self.rng);
                    let dropped = noise.dropout > 0.0 && self.rng.random::<f64>() < noise.dropout;
                    if !dropped && z > 0.0 {
                        img.set(u, v, z);
                    }
                }
            }
        }
        img
    }

    /// Thread attachment point (needle midpoint) in the base frame.
    pub fn needle_midpoint(&self) -> Vector3<f64> {
        *self.arms.needle_tip(&self.config.e_t_t).translation()
    }

    pub fn thread_path_length(&self) -> Option<f64> {
        let thread = self.thread.as_ref()?;
        let hook = *self.arms.left.translation();
        let via: &[Vector3<f64>] = if self.thread_on_hook {
            std::slice::from_ref(&hook)
        } else {
            &[]
        };
        Some(thread.path_length(via, &self.needle_midpoint()))
    }

    /// Resets the thread's free length to the current path (just taut).
    pub fn retension_thread(&mut self) {
        if let Some(len) = self.thread_path_length() {
            if let Some(t) = self.thread.as_mut() {
                t.make_taut(len);
            }
        }
    }

    /// Force the thread exerts on the manipulator hooks, in the sensor
    /// (left end-effector) frame.
    pub fn thread_force(&self) -> ForceReading {
        let (Some(thread), Some(len)) = (self.thread.as_ref(), self.thread_path_length()) else {
            return ForceReading::zero();
        };
        if !self.thread_on_hook {
            return ForceReading::zero();
        }
        let tension = thread.tension(len);
        let hook = *self.arms.left.translation();
        let unit = |p: Vector3<f64>| {
            let d = p - hook;
            let n = d.norm();
            if n > 0.0 {
                d / n
            } else {
                Vector3::zeros()
            }
        };
        let f_base = (unit(thread.anchor) + unit(self.needle_midpoint())) * tension;
        ForceReading::new(self.arms.left.rotation().transpose() * f_base)
    }

    /// Closed-loop IBVS of the needle tip toward `target` (camera frame).
    pub fn servo_to(
        &mut self,
        target: &Pose,
        cfg: &ServoConfig,
        max_iterations: usize,
    ) -> Result<ServoOutcome, SimError> {
        let k = self.config.intrinsics;
        let desired = desired_features(target, &self.config.t_t_p, &self.config.pattern, &k)?;
        let mut records = Vec::new();
        for iteration in 0..=max_iterations {
            let obs = self.observe()?;
            let fs = obs.feature_set(&desired, &k);
            let pixel_errors = fs
                .points
                .iter()
                .map(|p| {
                    if p.valid {
                        let d = p.current - p.desired;
                        Vector2::new(d.x * k.fx, d.y * k.fy).norm()
                    } else {
                        f64::NAN
                    }
                })
                .collect();
            let c_v_e = velocity_twist(&self.config.c_t_b().compose(&self.arms.right));
            let (twist, error_norm, condition, held, converged) =
                match control_law(&fs, &c_v_e, cfg) {
                    Ok(cmd) => (
                        cmd.twist,
                        cmd.error_norm,
                        cmd.condition,
                        None,
                        cmd.converged,
                    ),
                    Err(
                        e @ (ServoError::InsufficientFeatures { .. }
                        | ServoError::IllConditioned { .. }),
                    ) => (Twist::zero(), f64::NAN, None, Some(e.to_string()), false),
                    Err(e) => return Err(e.into()),
                };
            records.push(ServoRecord {
                iteration,
                error_norm,
                pixel_errors,
                twist,
                condition,
                valid: obs.valid_count(),
                held,
            });
            if converged {
                return Ok(ServoOutcome {
                    records,
                    converged: true,
                });
            }
            if iteration == max_iterations {
                break;
            }
            if self
                .step(&StepCommand::right(ArmCommand::Twist(twist)))
                .workspace_violation
            {
                return Err(SimError::WorkspaceViolation("servoing"));
            }
        }
        Ok(ServoOutcome {
            records,
            converged: false,
        })
    }

    /// Executes Pierce → Reorient → Switch → Retrieve → PullOut from the
    /// current tip pose and measures the stitch left in the fabric.
    ///
    /// Reorientation is replayed relative to the achieved entry pose, so servo
    /// error carries into the stitch.
    pub fn pierce_and_measure(&mut self, plan: &StitchPlan) -> Result<StitchMeasurement, SimError> {
        let start = self.tip_in_camera();
        let entry_inv = plan.entry().inverse();
        let mut final_tip = start;
        for w in plan.reorient_waypoints() {
            final_tip = start.compose(&entry_inv.compose(w));
            let ee = self.ee_for_tip(&final_tip);
            if self
                .step(&StepCommand::right(ArmCommand::MoveTo(ee)))
                .workspace_violation
            {
                return Err(SimError::WorkspaceViolation("reorientation"));
            }
        }
        self.step(&StepCommand {
            events: vec![DeviceEvent::NeedleSwitch],
            ..StepCommand::default()
        });
        let m = measure_stitch(
            &self.config.fabric,
            &plan.needle,
            plan.tilt,
            start.translation(),
            &final_tip,
            self.config.jaw_press_bias,
        )?;
        self.last_stitch = Some(m.clone());
        self.step(&StepCommand {
            events: vec![DeviceEvent::NeedleSwitch],
            ..StepCommand::default()
        });
        for w in plan.pullout_waypoints() {
            let ee = self.ee_for_tip(w);
            if self
                .step(&StepCommand::right(ArmCommand::MoveTo(ee)))
                .workspace_violation
            {
                return Err(SimError::WorkspaceViolation("pull-out"));
            }
        }
        Ok(m)
    }
}

/// Tip pose, camera frame, where the sewing device waits between stitches.
pub fn default_standby() -> Pose {
    let r =
        Rotation3::from_matrix_unchecked(Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0)));
    Pose::new(r, Vector3::new(0.0, 0.0, 0.2))
}
