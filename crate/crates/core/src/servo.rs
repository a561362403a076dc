//! Image-based visual servoing: per-point interaction matrices, the stacked
//! feature Jacobian and the pseudo-inverse control law.

use nalgebra::{DMatrix, DVector, SMatrix, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{CameraError, CameraIntrinsics};
use crate::geometry::{Pose, Twist, VelocityTwistMatrix};

/// Singular values below this fraction of the largest are treated as zero.
pub const PINV_RELATIVE_CUTOFF: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ServoError {
    #[error("feature depth must be positive, got {0}")]
    InvalidDepth(f64),
    #[error("{valid} valid features, at least {required} required")]
    InsufficientFeatures { valid: usize, required: usize },
    #[error("feature Jacobian is ill-conditioned (cond = {condition:.3e}, limit {limit:.1e})")]
    IllConditioned { condition: f64, limit: f64 },
    #[error("pattern dot {id} is behind the camera")]
    DotBehindCamera { id: usize },
    #[error("invalid servo configuration: {0}")]
    InvalidConfig(String),
}

/// Where the camera sits relative to the controlled end-effector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CameraMount {
    /// Fixed camera observing a pattern carried by the end-effector.
    #[default]
    EyeToHand,
    /// Camera carried by the end-effector observing a static target.
    EyeInHand,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServoConfig {
    /// Proportional gain λ, 1/s.
    pub gain: f64,
    /// Stop threshold on the stacked normalized feature error.
    pub epsilon: f64,
    /// Per-component clamp on the linear velocity, m/s.
    pub max_linear: f64,
    /// Per-component clamp on the angular velocity, rad/s.
    pub max_angular: f64,
    pub min_features: usize,
    pub condition_limit: f64,
    pub mount: CameraMount,
}

impl Default for ServoConfig {
    fn default() -> Self {
        Self {
            gain: 0.5,
            epsilon: 5e-5,
            max_linear: 0.05,
            max_angular: 0.5,
            min_features: 4,
            condition_limit: 1e4,
            mount: CameraMount::EyeToHand,
        }
    }
}

impl ServoConfig {
    pub fn validate(&self) -> Result<(), ServoError> {
        if !(self.gain > 0.0) {
            return Err(ServoError::InvalidConfig(format!(
                "gain must be positive, got {}",
                self.gain
            )));
        }
        if !(self.epsilon > 0.0) {
            return Err(ServoError::InvalidConfig(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if self.min_features < 4 {
            return Err(ServoError::InvalidConfig(format!(
                "min_features must be at least 4, got {}",
                self.min_features
            )));
        }
        if !(self.max_linear > 0.0 && self.max_angular > 0.0 && self.condition_limit > 1.0) {
            return Err(ServoError::InvalidConfig(
                "velocity clamps and condition limit must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// One tracked dot: current and desired normalized coordinates plus depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeaturePoint {
    pub id: usize,
    pub current: Vector2<f64>,
    pub desired: Vector2<f64>,
    pub depth: f64,
    pub valid: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureSet {
    pub points: Vec<FeaturePoint>,
}

impl FeatureSet {
    pub fn new(points: Vec<FeaturePoint>) -> Self {
        Self { points }
    }

    /// Valid entries sorted by id. Entries with non-positive depth count as invalid.
    pub fn valid_sorted(&self) -> Vec<&FeaturePoint> {
        let mut v: Vec<&FeaturePoint> = self
            .points
            .iter()
            .filter(|p| p.valid && p.depth.is_finite() && p.depth > 0.0)
            .collect();
        v.sort_by_key(|p| p.id);
        v
    }

    fn checked_valid(&self, min_features: usize) -> Result<Vec<&FeaturePoint>, ServoError> {
        let v = self.valid_sorted();
        if v.len() < min_features.max(1) {
            return Err(ServoError::InsufficientFeatures {
                valid: v.len(),
                required: min_features.max(1),
            });
        }
        Ok(v)
    }
}

/// 2×6 interaction matrix of a normalized image point at depth `z`.
pub fn interaction_row(x: f64, y: f64, z: f64) -> Result<SMatrix<f64, 2, 6>, ServoError> {
    if !(z > 0.0 && z.is_finite()) {
        return Err(ServoError::InvalidDepth(z));
    }
    let inv_z = 1.0 / z;
    Ok(SMatrix::<f64, 2, 6>::from_row_slice(&[
        -inv_z,
        0.0,
        x * inv_z,
        x * y,
        -(1.0 + x * x),
        y,
        0.0,
        -inv_z,
        y * inv_z,
        1.0 + y * y,
        -x * y,
        -x,
    ]))
}

/// Stacks the interaction matrices of the valid features in id order.
pub fn stack_interaction(fs: &FeatureSet, min_features: usize) -> Result<DMatrix<f64>, ServoError> {
    let valid = fs.checked_valid(min_features)?;
    let mut l = DMatrix::zeros(2 * valid.len(), 6);
    for (i, p) in valid.iter().enumerate() {
        let row = interaction_row(p.current.x, p.current.y, p.depth)?;
        l.fixed_view_mut::<2, 6>(2 * i, 0).copy_from(&row);
    }
    Ok(l)
}

/// Stacked feature error `x − x*` over the valid features in id order.
pub fn feature_error(fs: &FeatureSet, min_features: usize) -> Result<DVector<f64>, ServoError> {
    let valid = fs.checked_valid(min_features)?;
    let mut e = DVector::zeros(2 * valid.len());
    for (i, p) in valid.iter().enumerate() {
        e[2 * i] = p.current.x - p.desired.x;
        e[2 * i + 1] = p.current.y - p.desired.y;
    }
    Ok(e)
}

/// Moore–Penrose pseudo-inverse with relative singular-value truncation, plus
/// the 2-norm condition number of the input.
pub fn pseudo_inverse(m: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let svd = m.clone().svd(true, true);
    let s_max = svd.singular_values.max();
    let s_min = svd.singular_values.min();
    let cutoff = PINV_RELATIVE_CUTOFF * s_max;
    let u = svd.u.as_ref().expect("svd computed with U");
    let v_t = svd.v_t.as_ref().expect("svd computed with Vᵀ");
    let mut pinv = DMatrix::zeros(m.ncols(), m.nrows());
    for (k, s) in svd.singular_values.iter().enumerate() {
        if *s > cutoff {
            pinv += v_t.row(k).transpose() * u.column(k).transpose() / *s;
        }
    }
    let condition = if s_min > 0.0 {
        s_max / s_min
    } else {
        f64::INFINITY
    };
    (pinv, condition)
}

/// Result of one control-law evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ServoCommand {
    /// End-effector twist, expressed in the end-effector frame.
    pub twist: Twist,
    pub error: DVector<f64>,
    pub error_norm: f64,
    /// Condition number of `L·ᶜVₑ`; `None` when the error was already below ε.
    pub condition: Option<f64>,
    pub converged: bool,
}

/// Computes the end-effector twist that drives the features to their targets.
///
/// `c_v_e` maps end-effector twists into the camera frame. For an eye-in-hand
/// camera the law is `vₑ = −λ·(L·ᶜVₑ)⁺·(x − x*)`. For a fixed camera watching a
/// pattern on the end-effector the features move opposite to a camera motion,
/// so the sign flips.
pub fn control_law(
    fs: &FeatureSet,
    c_v_e: &VelocityTwistMatrix,
    cfg: &ServoConfig,
) -> Result<ServoCommand, ServoError> {
    let error = feature_error(fs, cfg.min_features)?;
    let error_norm = error.norm();
    if error_norm < cfg.epsilon {
        return Ok(ServoCommand {
            twist: Twist::zero(),
            error,
            error_norm,
            condition: None,
            converged: true,
        });
    }
    let l = stack_interaction(fs, cfg.min_features)?;
    let jacobian = l * DMatrix::from_column_slice(6, 6, c_v_e.matrix().as_slice());
    let (pinv, condition) = pseudo_inverse(&jacobian);
    if !(condition <= cfg.condition_limit) {
        return Err(ServoError::IllConditioned {
            condition,
            limit: cfg.condition_limit,
        });
    }
    let sign = match cfg.mount {
        CameraMount::EyeInHand => -1.0,
        CameraMount::EyeToHand => 1.0,
    };
    let v = pinv * &error * (sign * cfg.gain);
    let clamp = |x: f64, lim: f64| x.clamp(-lim, lim);
    let twist = Twist::new(
        Vector3::new(
            clamp(v[0], cfg.max_linear),
            clamp(v[1], cfg.max_linear),
            clamp(v[2], cfg.max_linear),
        ),
        Vector3::new(
            clamp(v[3], cfg.max_angular),
            clamp(v[4], cfg.max_angular),
            clamp(v[5], cfg.max_angular),
        ),
    );
    Ok(ServoCommand {
        twist,
        error,
        error_norm,
        condition: Some(condition),
        converged: false,
    })
}

/// Desired normalized coordinates of every pattern dot when the needle tip sits
/// at `c_t_desired`: each dot goes through `ᶜTₜ·ᵗTₚ` and is then normalized.
pub fn desired_features(
    c_t_desired: &Pose,
    t_t_p: &Pose,
    pattern: &[Vector3<f64>],
    k: &CameraIntrinsics,
) -> Result<Vec<Vector2<f64>>, ServoError> {
    let c_t_p = c_t_desired.compose(t_t_p);
    pattern
        .iter()
        .enumerate()
        .map(|(id, dot)| {
            let xc = c_t_p.transform_point(dot);
            match k.project(&xc) {
                Ok(pixel) => Ok(k.normalize(&pixel)),
                Err(CameraError::BehindCamera(_)) => Err(ServoError::DotBehindCamera { id }),
                Err(_) => unreachable!("project only fails for points behind the camera"),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::velocity_twist;
    use nalgebra::Rotation3;

    fn point(id: usize, current: (f64, f64), desired: (f64, f64), depth: f64) -> FeaturePoint {
        FeaturePoint {
            id,
            current: Vector2::new(current.0, current.1),
            desired: Vector2::new(desired.0, desired.1),
            depth,
            valid: true,
        }
    }

    fn square_set(offset: f64) -> FeatureSet {
        let corners = [
            (-0.1, -0.1),
            (0.1, -0.1),
            (0.1, 0.1),
            (-0.1, 0.1),
            (0.0, 0.05),
            (0.05, -0.02),
        ];
        FeatureSet::new(
            corners
                .iter()
                .enumerate()
                .map(|(i, &(x, y))| {
                    point(
                        i,
                        (x + offset, y - 0.5 * offset),
                        (x, y),
                        0.3 + 0.01 * i as f64,
                    )
                })
                .collect(),
        )
    }

    #[test]
    fn interaction_row_examples() {
        let l = interaction_row(0.0, 0.0, 1.0).unwrap();
        assert_eq!(
            l,
            SMatrix::<f64, 2, 6>::from_row_slice(&[
                -1., 0., 0., 0., -1., 0., 0., -1., 0., 1., 0., 0.
            ])
        );
        let l = interaction_row(1.0, 1.0, 2.0).unwrap();
        assert_eq!(
            l,
            SMatrix::<f64, 2, 6>::from_row_slice(&[
                -0.5, 0., 0.5, 1., -2., 1., 0., -0.5, 0.5, 2., -1., -1.
            ])
        );
        assert_eq!(
            interaction_row(0.0, 0.0, 0.0),
            Err(ServoError::InvalidDepth(0.0))
        );
        assert!(interaction_row(0.0, 0.0, -1.0).is_err());
    }

    #[test]
    fn stacking_skips_invalid_and_orders_by_id() {
        let mut fs = FeatureSet::new(
            (0..8)
                .rev()
                .map(|i| point(i, (0.01 * i as f64, 0.0), (0.0, 0.0), 0.5))
                .collect(),
        );
        fs.points[0].valid = false;
        fs.points[3].valid = false;
        let l = stack_interaction(&fs, 4).unwrap();
        assert_eq!(l.shape(), (12, 6));
        // first row belongs to id 0: x = 0
        assert_eq!(l[(0, 3)], 0.0);
        let single = FeatureSet::new(vec![point(0, (0.1, 0.0), (0.0, 0.0), 1.0)]);
        assert_eq!(stack_interaction(&single, 1).unwrap().shape(), (2, 6));
        assert_eq!(
            stack_interaction(&single, 4),
            Err(ServoError::InsufficientFeatures {
                valid: 1,
                required: 4
            })
        );
    }

    #[test]
    fn feature_error_examples() {
        let single = FeatureSet::new(vec![point(0, (0.1, 0.0), (0.0, 0.0), 1.0)]);
        assert_eq!(feature_error(&single, 1).unwrap().as_slice(), &[0.1, 0.0]);
        assert_eq!(feature_error(&square_set(0.0), 4).unwrap().norm(), 0.0);
    }

    #[test]
    fn zero_error_gives_zero_twist() {
        let cmd = control_law(
            &square_set(0.0),
            &VelocityTwistMatrix::identity(),
            &ServoConfig::default(),
        )
        .unwrap();
        assert!(cmd.twist.is_zero());
        assert!(cmd.converged);
    }

    #[test]
    fn doubling_gain_doubles_twist() {
        let fs = square_set(0.002);
        let cve = velocity_twist(&Pose::new(
            Rotation3::from_euler_angles(0.1, 0.2, -0.3),
            Vector3::new(0.0, 0.02, 0.15),
        ));
        let cfg = ServoConfig {
            max_linear: 10.0,
            max_angular: 10.0,
            ..ServoConfig::default()
        };
        let a = control_law(&fs, &cve, &cfg).unwrap().twist;
        let b = control_law(
            &fs,
            &cve,
            &ServoConfig {
                gain: 2.0 * cfg.gain,
                ..cfg
            },
        )
        .unwrap()
        .twist;
        assert!((a.to_vector() * 2.0 - b.to_vector()).norm() < 1e-12 * b.to_vector().norm());
    }

    #[test]
    fn mounts_differ_only_in_sign() {
        let fs = square_set(0.003);
        let cve = VelocityTwistMatrix::identity();
        let cfg = ServoConfig {
            max_linear: 10.0,
            max_angular: 10.0,
            ..ServoConfig::default()
        };
        let a = control_law(&fs, &cve, &cfg).unwrap().twist;
        let b = control_law(
            &fs,
            &cve,
            &ServoConfig {
                mount: CameraMount::EyeInHand,
                ..cfg
            },
        )
        .unwrap()
        .twist;
        assert_eq!(a.to_vector(), -b.to_vector());
    }

    #[test]
    fn clamps_apply_per_component() {
        let fs = square_set(0.2);
        let cfg = ServoConfig {
            gain: 50.0,
            condition_limit: 1e9,
            ..ServoConfig::default()
        };
        let t = control_law(&fs, &VelocityTwistMatrix::identity(), &cfg)
            .unwrap()
            .twist;
        assert!(t.linear.iter().all(|v| v.abs() <= cfg.max_linear));
        assert!(t.angular.iter().all(|v| v.abs() <= cfg.max_angular));
        assert!(t.linear.iter().any(|v| v.abs() == cfg.max_linear));
    }

    #[test]
    fn ill_conditioned_jacobian_is_reported() {
        // all dots on the optical axis: rank-deficient
        let fs = FeatureSet::new(
            (0..4)
                .map(|i| point(i, (1e-3, 0.0), (0.0, 0.0), 0.3))
                .collect(),
        );
        let err = control_law(
            &fs,
            &VelocityTwistMatrix::identity(),
            &ServoConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, ServoError::IllConditioned { .. }));
    }

    #[test]
    fn config_validation() {
        assert!(ServoConfig::default().validate().is_ok());
        assert!(ServoConfig {
            gain: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(ServoConfig {
            min_features: 3,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn desired_features_identity_pattern() {
        let k = CameraIntrinsics::default();
        let tip = Pose::from_translation(Vector3::new(0.02, -0.01, 0.25));
        let f = desired_features(&tip, &Pose::identity(), &[Vector3::zeros()], &k).unwrap();
        assert!((f[0] - Vector2::new(0.02 / 0.25, -0.01 / 0.25)).norm() < 1e-15);
        let behind = Pose::from_translation(Vector3::new(0.0, 0.0, -0.1));
        assert_eq!(
            desired_features(&behind, &Pose::identity(), &[Vector3::zeros()], &k),
            Err(ServoError::DotBehindCamera { id: 0 })
        );
    }
}
