//! Stitch planning: surface normals, sewing frames, the tilted entry pose,
//! pierce angle from stitch size, reorientation about the entry point and the
//! pull-out trajectory.

use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::{Matrix3, Rotation3, SymmetricEigen, Unit, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{CameraIntrinsics, PointCloud};
use crate::geometry::{interpolate_pose, GeometryError, Pose};

pub const MIN_NEIGHBOURS: usize = 8;
/// Largest stitch the semicircular needle device can place.
pub const MAX_STITCH_SIZE: f64 = 5e-3;
/// Below this size the jaws deform the fabric; plans still succeed but warn.
pub const JAW_DEFORMATION_SIZE: f64 = 2e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("only {found} valid neighbours within the search radius, {required} required")]
    DegenerateNeighbourhood { found: usize, required: usize },
    #[error("sewing direction is degenerate (targets coincide or are parallel to the normal)")]
    DegenerateDirection,
    #[error("stitch size {size} m exceeds the supported maximum {max} m")]
    StitchTooLarge { size: f64, max: f64 },
    #[error("stitch size {size} m is below the supported minimum {min} m")]
    StitchTooSmall { size: f64, min: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("pixel ({0}, {1}) has no valid depth nearby")]
    NoDepthAtPixel(f64, f64),
    #[error("malformed plan log: {0}")]
    MalformedLog(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// How a stitch size maps to the jaw rotation angle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StitchMode {
    /// Pierced arc length equals the stitch size: `d = θR`.
    Arc,
    /// Entry-to-exit chord equals the stitch size: `d = 2R·sin(θ/2)`.
    #[default]
    Chord,
}

impl StitchMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            StitchMode::Arc => "arc",
            StitchMode::Chord => "chord",
        }
    }
}

impl std::str::FromStr for StitchMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "arc" => Ok(StitchMode::Arc),
            "chord" => Ok(StitchMode::Chord),
            other => Err(format!(
                "unknown stitch mode '{other}' (expected arc or chord)"
            )),
        }
    }
}

/// Semicircular double-pointed needle of radius `radius`, driven through `theta` radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeedleSpec {
    pub radius: f64,
    pub theta: f64,
}

impl NeedleSpec {
    /// Angular extent of the needle itself.
    pub const ARC_EXTENT: f64 = PI;

    pub fn new(radius: f64, theta: f64) -> Result<Self, PlanError> {
        if !(radius > 0.0) {
            return Err(PlanError::InvalidParameter(format!(
                "needle radius must be positive, got {radius}"
            )));
        }
        if !(theta > 0.0 && theta <= Self::ARC_EXTENT) {
            return Err(PlanError::InvalidParameter(format!(
                "jaw rotation must lie in (0, π], got {theta}"
            )));
        }
        Ok(Self { radius, theta })
    }

    /// Centre of the needle circle in the tip frame once the device has been
    /// reoriented to its exit tilt.
    ///
    /// The circle lies in the tip y–z plane and passes through the tip. The jaw
    /// seats the needle so that, with the sewing frame's tangent plane as
    /// reference, the pierced arc of angle θ closes on that plane after the
    /// planned `2·tilt` reorientation.
    pub fn arc_center_in_tip(&self, tilt: f64) -> Vector3<f64> {
        let half = 0.5 * self.theta;
        let in_sewing = Vector3::new(0.0, -self.radius * half.sin(), self.radius * half.cos());
        Rotation3::from_axis_angle(&Vector3::x_axis(), tilt) * in_sewing
    }

    /// Entry-to-exit distance on a plane for this needle, `2R·sin(θ/2)`.
    pub fn chord(&self) -> f64 {
        2.0 * self.radius * (0.5 * self.theta).sin()
    }
}

/// Pierced arc length `l = θR`.
pub fn pierce_depth(theta: f64, radius: f64) -> f64 {
    theta * radius
}

/// Jaw rotation needed for a stitch of size `d`.
pub fn stitch_angle(d: f64, radius: f64, mode: StitchMode) -> Result<f64, PlanError> {
    if !(d > 0.0) {
        return Err(PlanError::InvalidParameter(format!(
            "stitch size must be positive, got {d}"
        )));
    }
    if !(radius > 0.0) {
        return Err(PlanError::InvalidParameter(format!(
            "needle radius must be positive, got {radius}"
        )));
    }
    match mode {
        StitchMode::Arc => {
            let max = PI * radius;
            if d > max {
                return Err(PlanError::StitchTooLarge { size: d, max });
            }
            Ok(d / radius)
        }
        StitchMode::Chord => {
            let max = 2.0 * radius;
            if d >= max {
                return Err(PlanError::StitchTooLarge { size: d, max });
            }
            Ok(2.0 * (d / max).asin())
        }
    }
}

/// Local least-squares plane around `center`: returns (centroid, unit normal
/// facing the camera origin, neighbour count).
pub fn fit_local_plane(
    cloud: &PointCloud,
    center: &Vector3<f64>,
    radius: f64,
) -> Result<(Vector3<f64>, Vector3<f64>, usize), PlanError> {
    let r2 = radius * radius;
    let neighbours: Vec<&Vector3<f64>> = cloud
        .valid_points()
        .filter(|p| (*p - center).norm_squared() <= r2)
        .collect();
    if neighbours.len() < MIN_NEIGHBOURS {
        return Err(PlanError::DegenerateNeighbourhood {
            found: neighbours.len(),
            required: MIN_NEIGHBOURS,
        });
    }
    let n = neighbours.len() as f64;
    let centroid = neighbours.iter().fold(Vector3::zeros(), |acc, p| acc + *p) / n;
    let mut cov = Matrix3::zeros();
    for p in &neighbours {
        let d = *p - centroid;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov / n);
    let (imin, _) = eig.eigenvalues.argmin();
    let sorted = {
        let mut e: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        e.sort_by(f64::total_cmp);
        e
    };
    if sorted[1] <= 0.0 || sorted[0] >= sorted[1] {
        // collinear or isotropic neighbourhood: no unique plane
        return Err(PlanError::DegenerateNeighbourhood {
            found: neighbours.len(),
            required: MIN_NEIGHBOURS,
        });
    }
    let mut normal: Vector3<f64> = eig.eigenvectors.column(imin).into_owned().normalize();
    if normal.dot(&centroid) > 0.0 {
        normal = -normal;
    }
    Ok((centroid, normal, neighbours.len()))
}

/// Unit surface normal at `target` from a plane fit over the neighbours
/// within `radius`, oriented toward the camera.
pub fn estimate_normal(
    cloud: &PointCloud,
    target: &Vector3<f64>,
    radius: f64,
) -> Result<Vector3<f64>, PlanError> {
    fit_local_plane(cloud, target, radius).map(|(_, n, _)| n)
}

/// Turns a selected pixel into a surface point and normal: the pixel ray is
/// intersected with the plane fitted around the pixel's own depth reading.
pub fn locate_target(
    cloud: &PointCloud,
    k: &CameraIntrinsics,
    pixel: &Vector2<f64>,
    radius: f64,
) -> Result<(Vector3<f64>, Vector3<f64>), PlanError> {
    if cloud.len() != k.width * k.height {
        return Err(PlanError::InvalidParameter(
            "locate_target needs an organized cloud matching the camera".into(),
        ));
    }
    let (u0, v0) = (pixel.x.round() as i64, pixel.y.round() as i64);
    let mut seed = None;
    'search: for ring in 0..8i64 {
        for dv in -ring..=ring {
            for du in -ring..=ring {
                if du.abs().max(dv.abs()) != ring {
                    continue;
                }
                let (u, v) = (u0 + du, v0 + dv);
                if u < 0 || v < 0 || u >= k.width as i64 || v >= k.height as i64 {
                    continue;
                }
                let idx = v as usize * k.width + u as usize;
                if cloud.is_valid(idx) {
                    seed = Some(cloud.points()[idx]);
                    break 'search;
                }
            }
        }
    }
    let seed = seed.ok_or(PlanError::NoDepthAtPixel(pixel.x, pixel.y))?;
    let (centroid, normal, _) = fit_local_plane(cloud, &seed, radius)?;
    let ray = k.ray(pixel);
    let denom = normal.dot(&ray);
    if denom.abs() < 1e-9 {
        return Err(PlanError::DegenerateDirection);
    }
    let point = ray * (normal.dot(&centroid) / denom);
    Ok((point, normal))
}

/// Local sewing frame: z along the surface normal, x toward the next target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SewingFrame {
    pub origin: Vector3<f64>,
    pub x: Vector3<f64>,
    pub y: Vector3<f64>,
    pub z: Vector3<f64>,
}

impl SewingFrame {
    pub fn pose(&self) -> Pose {
        let r = Matrix3::from_columns(&[self.x, self.y, self.z]);
        Pose::new(Rotation3::from_matrix_unchecked(r), self.origin)
    }
}

pub fn sewing_frame(
    target: &Vector3<f64>,
    next_target: &Vector3<f64>,
    normal: &Vector3<f64>,
) -> Result<SewingFrame, PlanError> {
    let z = normal
        .try_normalize(1e-12)
        .ok_or(PlanError::DegenerateDirection)?;
    let dir = next_target - target;
    let in_plane = dir - z * z.dot(&dir);
    if dir.norm() < 1e-12
        || in_plane.norm() < 1e-9 * dir.norm().max(1e-12)
        || in_plane.norm() < 1e-12
    {
        return Err(PlanError::DegenerateDirection);
    }
    let x = in_plane.normalize();
    let y = z.cross(&x);
    Ok(SewingFrame {
        origin: *target,
        x,
        y,
        z,
    })
}

/// The `ᵗTₜ*` offset: rotation by `tilt` about local x and `d/2` along local y.
pub fn entry_offset(tilt: f64, d: f64) -> Pose {
    let r = Rotation3::from_axis_angle(&Vector3::x_axis(), tilt);
    Pose::new(r, Vector3::new(0.0, 0.5 * d, 0.0))
}

/// Desired needle-tip pose at the entry point: the sewing-frame pose composed
/// with [`entry_offset`].
pub fn entry_pose(frame: &SewingFrame, tilt: f64, d: f64) -> Pose {
    frame.pose().compose(&entry_offset(tilt, d))
}

/// Rotates the device by `−2·tilt` about the entry pose's local x-axis through
/// `entry_point`, in steps of at most `step`; the last step takes the remainder.
pub fn reorientation_sequence(
    entry: &Pose,
    entry_point: &Vector3<f64>,
    tilt: f64,
    step: f64,
) -> Result<Vec<Pose>, PlanError> {
    if !(step > 0.0) {
        return Err(PlanError::InvalidParameter(format!(
            "reorientation step must be positive, got {step}"
        )));
    }
    if !(tilt >= 0.0) {
        return Err(PlanError::InvalidParameter(format!(
            "tilt must be non-negative, got {tilt}"
        )));
    }
    let total = 2.0 * tilt;
    if total == 0.0 {
        return Ok(Vec::new());
    }
    let count = ((total / step) - 1e-9).ceil().max(1.0) as usize;
    let axis = Unit::new_normalize(entry.axis(0));
    Ok((1..=count)
        .map(|k| {
            let angle = if k == count { total } else { k as f64 * step };
            let rot = Rotation3::from_axis_angle(&axis, -angle);
            let about_point = Pose::from_translation(*entry_point)
                .compose(&Pose::new(rot, Vector3::zeros()))
                .compose(&Pose::from_translation(-entry_point));
            about_point.compose(entry)
        })
        .collect())
}

/// Interpolated waypoints from `current` to `standby` at `t = k/n`, `k = 1..=n`.
pub fn pullout_trajectory(
    current: &Pose,
    standby: &Pose,
    steps: usize,
) -> Result<Vec<Pose>, PlanError> {
    if steps == 0 {
        return Err(PlanError::InvalidParameter(
            "pull-out needs at least one step".into(),
        ));
    }
    (1..=steps)
        .map(|k| {
            interpolate_pose(k as f64 / steps as f64, current, standby).map_err(PlanError::from)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum StitchPhase {
    Approach(Vec<Pose>),
    Pierce { theta: f64 },
    Reorient(Vec<Pose>),
    Switch,
    Retrieve,
    PullOut(Vec<Pose>),
}

impl StitchPhase {
    pub fn label(&self) -> &'static str {
        match self {
            StitchPhase::Approach(_) => "approach",
            StitchPhase::Pierce { .. } => "pierce",
            StitchPhase::Reorient(_) => "reorient",
            StitchPhase::Switch => "switch",
            StitchPhase::Retrieve => "retrieve",
            StitchPhase::PullOut(_) => "pullout",
        }
    }
}

/// Planner settings that are not per-stitch inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StitchOptions {
    pub mode: StitchMode,
    pub normal_radius: f64,
    pub reorient_step: f64,
    pub pullout_steps: usize,
    /// Clearance of the hover waypoint above the entry point, along tip z.
    pub hover_distance: f64,
    pub min_size: f64,
    pub max_size: f64,
    pub standby: Pose,
}

impl Default for StitchOptions {
    fn default() -> Self {
        Self {
            mode: StitchMode::Chord,
            normal_radius: 5e-3,
            reorient_step: 5f64.to_radians(),
            pullout_steps: 10,
            hover_distance: 10e-3,
            min_size: 1e-3,
            max_size: MAX_STITCH_SIZE,
            standby: Pose::identity(),
        }
    }
}

/// A fully planned stitch. Poses are needle-tip poses in the camera frame.
#[derive(Debug, Clone, PartialEq)]
pub struct StitchPlan {
    pub phases: Vec<StitchPhase>,
    pub stitch_size: f64,
    pub tilt: f64,
    pub needle: NeedleSpec,
    pub mode: StitchMode,
    pub frame: Pose,
    pub warnings: Vec<String>,
}

impl StitchPlan {
    pub fn entry(&self) -> Pose {
        match &self.phases[0] {
            StitchPhase::Approach(w) => *w.last().expect("approach has waypoints"),
            _ => unreachable!("plans start with an approach"),
        }
    }

    pub fn entry_point(&self) -> Vector3<f64> {
        *self.entry().translation()
    }

    /// Tip pose after reorientation (the entry pose when tilt is zero).
    pub fn exit_pose(&self) -> Pose {
        self.reorient_waypoints()
            .last()
            .copied()
            .unwrap_or_else(|| self.entry())
    }

    pub fn reorient_waypoints(&self) -> &[Pose] {
        self.phases
            .iter()
            .find_map(|p| match p {
                StitchPhase::Reorient(w) => Some(w.as_slice()),
                _ => None,
            })
            .unwrap_or(&[])
    }

    pub fn pullout_waypoints(&self) -> &[Pose] {
        self.phases
            .iter()
            .find_map(|p| match p {
                StitchPhase::PullOut(w) => Some(w.as_slice()),
                _ => None,
            })
            .unwrap_or(&[])
    }

    /// Structured text log: one record per line, poses as row-major 4×4.
    pub fn to_log(&self) -> String {
        let mut s = String::from("stitch_plan v1\n");
        let _ = writeln!(s, "param stitch_size {}", self.stitch_size);
        let _ = writeln!(s, "param tilt {}", self.tilt);
        let _ = writeln!(s, "param radius {}", self.needle.radius);
        let _ = writeln!(s, "param theta {}", self.needle.theta);
        let _ = writeln!(s, "param mode {}", self.mode.as_str());
        let _ = writeln!(s, "frame 0 {}", pose_fields(&self.frame));
        for w in &self.warnings {
            let _ = writeln!(s, "warning {}", w.replace('\n', " "));
        }
        for phase in &self.phases {
            match phase {
                StitchPhase::Approach(w) | StitchPhase::Reorient(w) | StitchPhase::PullOut(w) => {
                    for (i, p) in w.iter().enumerate() {
                        let _ = writeln!(s, "{} {} {}", phase.label(), i, pose_fields(p));
                    }
                }
                StitchPhase::Pierce { theta } => {
                    let _ = writeln!(s, "pierce {theta}");
                }
                StitchPhase::Switch | StitchPhase::Retrieve => {
                    let _ = writeln!(s, "{}", phase.label());
                }
            }
        }
        s
    }

    pub fn from_log(text: &str) -> Result<Self, PlanError> {
        let bad = |m: String| PlanError::MalformedLog(m);
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        if lines.next().map(str::trim) != Some("stitch_plan v1") {
            return Err(bad("missing 'stitch_plan v1' header".into()));
        }
        let (mut size, mut tilt, mut radius, mut theta, mut mode, mut frame) =
            (None, None, None, None, None, None);
        let mut warnings = Vec::new();
        let mut phases: Vec<StitchPhase> = Vec::new();
        for line in lines {
            let mut tok = line.split_whitespace();
            let head = tok.next().unwrap_or_default();
            let rest: Vec<&str> = tok.collect();
            let num = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("'{s}': {e}")));
            match head {
                "param" => {
                    let key = *rest.first().ok_or_else(|| bad("empty param".into()))?;
                    let val = *rest
                        .get(1)
                        .ok_or_else(|| bad(format!("param {key} has no value")))?;
                    match key {
                        "stitch_size" => size = Some(num(val)?),
                        "tilt" => tilt = Some(num(val)?),
                        "radius" => radius = Some(num(val)?),
                        "theta" => theta = Some(num(val)?),
                        "mode" => mode = Some(val.parse::<StitchMode>().map_err(bad)?),
                        other => return Err(bad(format!("unknown param '{other}'"))),
                    }
                }
                "warning" => warnings.push(rest.join(" ")),
                "frame" | "approach" | "reorient" | "pullout" => {
                    if rest.len() != 17 {
                        return Err(bad(format!("{head} record needs an index and 16 values")));
                    }
                    let vals: Vec<f64> =
                        rest[1..].iter().map(|s| num(s)).collect::<Result<_, _>>()?;
                    let pose = Pose::from_row_major(&vals)?;
                    let push = |phases: &mut Vec<StitchPhase>,
                                make: fn(Vec<Pose>) -> StitchPhase| {
                        let same = phases.last().is_some_and(|p| p.label() == head);
                        if same {
                            if let Some(
                                StitchPhase::Approach(w)
                                | StitchPhase::Reorient(w)
                                | StitchPhase::PullOut(w),
                            ) = phases.last_mut()
                            {
                                w.push(pose);
                            }
                        } else {
                            phases.push(make(vec![pose]));
                        }
                    };
                    match head {
                        "frame" => frame = Some(pose),
                        "approach" => push(&mut phases, StitchPhase::Approach),
                        "reorient" => push(&mut phases, StitchPhase::Reorient),
                        _ => push(&mut phases, StitchPhase::PullOut),
                    }
                }
                "pierce" => phases.push(StitchPhase::Pierce {
                    theta: num(rest
                        .first()
                        .ok_or_else(|| bad("pierce without angle".into()))?)?,
                }),
                "switch" => phases.push(StitchPhase::Switch),
                "retrieve" => phases.push(StitchPhase::Retrieve),
                other => return Err(bad(format!("unknown record '{other}'"))),
            }
        }
        let missing = |what: &str| bad(format!("missing {what}"));
        let plan = StitchPlan {
            phases,
            stitch_size: size.ok_or_else(|| missing("stitch_size"))?,
            tilt: tilt.ok_or_else(|| missing("tilt"))?,
            needle: NeedleSpec::new(
                radius.ok_or_else(|| missing("radius"))?,
                theta.ok_or_else(|| missing("theta"))?,
            )?,
            mode: mode.ok_or_else(|| missing("mode"))?,
            frame: frame.ok_or_else(|| missing("frame"))?,
            warnings,
        };
        if !matches!(plan.phases.first(), Some(StitchPhase::Approach(_))) {
            return Err(bad("plan must start with an approach".into()));
        }
        Ok(plan)
    }
}

fn pose_fields(p: &Pose) -> String {
    p.to_row_major()
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Plans the six-phase stitch at `target`, sewing toward `next_target`.
pub fn plan_stitch(
    target: &Vector3<f64>,
    next_target: &Vector3<f64>,
    cloud: &PointCloud,
    needle_radius: f64,
    d: f64,
    tilt: f64,
    opts: &StitchOptions,
) -> Result<StitchPlan, PlanError> {
    if !(d > 0.0) {
        return Err(PlanError::InvalidParameter(format!(
            "stitch size must be positive, got {d}"
        )));
    }
    if d > opts.max_size {
        return Err(PlanError::StitchTooLarge {
            size: d,
            max: opts.max_size,
        });
    }
    if d < opts.min_size - 1e-12 {
        return Err(PlanError::StitchTooSmall {
            size: d,
            min: opts.min_size,
        });
    }
    if !(0.0..PI / 2.0).contains(&tilt) {
        return Err(PlanError::InvalidParameter(format!(
            "tilt must lie in [0, π/2), got {tilt}"
        )));
    }
    let theta = stitch_angle(d, needle_radius, opts.mode)?;
    let needle = NeedleSpec::new(needle_radius, theta)?;

    let normal = estimate_normal(cloud, target, opts.normal_radius)?;
    let frame = sewing_frame(target, next_target, &normal)?;
    let entry = entry_pose(&frame, tilt, d);
    let hover = entry.compose(&Pose::from_translation(Vector3::new(
        0.0,
        0.0,
        opts.hover_distance,
    )));
    let reorient = reorientation_sequence(&entry, entry.translation(), tilt, opts.reorient_step)?;
    let exit = reorient.last().copied().unwrap_or(entry);
    let pullout = pullout_trajectory(&exit, &opts.standby, opts.pullout_steps)?;

    let mut warnings = Vec::new();
    if d < JAW_DEFORMATION_SIZE {
        warnings.push(format!(
            "stitch size {:.2} mm is below {:.1} mm; jaw pressure on the fabric typically enlarges such stitches",
            d * 1e3,
            JAW_DEFORMATION_SIZE * 1e3
        ));
    }
    Ok(StitchPlan {
        phases: vec![
            StitchPhase::Approach(vec![hover, entry]),
            StitchPhase::Pierce { theta },
            StitchPhase::Reorient(reorient),
            StitchPhase::Switch,
            StitchPhase::Retrieve,
            StitchPhase::PullOut(pullout),
        ],
        stitch_size: d,
        tilt,
        needle,
        mode: opts.mode,
        frame: frame.pose(),
        warnings,
    })
}
