//! Rigid transforms on SE(3), spatial-velocity twists and pose interpolation.
//!
//! Rotations are stored as 3×3 matrices. Quaternions only appear inside
//! [`interpolate_pose`], where slerp needs them.

use std::fmt;
use std::ops::Mul;

use nalgebra::{Matrix3, Matrix4, Matrix6, Rotation3, Unit, UnitQuaternion, Vector3, Vector6};
use thiserror::Error;

/// Maximum deviation of `RᵀR` from identity accepted when importing a matrix.
pub const RIGID_IMPORT_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("interpolation parameter {0} is outside [0, 1]")]
    ParameterOutOfRange(f64),
    #[error("matrix is not a rigid transform: {0}")]
    NotRigid(&'static str),
}

/// Skew-symmetric cross-product matrix: `skew(a) * b == a.cross(&b)`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// A rigid transform `T = [R | t]` mapping points from a source frame into a
/// target frame. `a.compose(&b)` is the matrix product `A·B`.
#[derive(Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl fmt::Debug for Pose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Pose")
            .field("rotation", &self.rotation.as_slice())
            .field(
                "translation",
                &[self.translation.x, self.translation.y, self.translation.z],
            )
            .finish()
    }
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a pose from a rotation and a translation in metres.
    pub fn new(rotation: Rotation3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: rotation.into_inner(),
            translation,
        }
    }

    /// Builds a pose from a raw matrix, re-projecting it onto SO(3).
    ///
    /// Fails when the matrix is further than [`RIGID_IMPORT_TOL`] from a rotation.
    pub fn from_parts(
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
    ) -> Result<Self, GeometryError> {
        if !rotation
            .iter()
            .chain(translation.iter())
            .all(|v| v.is_finite())
        {
            return Err(GeometryError::NotRigid("non-finite entry"));
        }
        if (rotation.transpose() * rotation - Matrix3::identity()).norm() > RIGID_IMPORT_TOL {
            return Err(GeometryError::NotRigid("rotation block is not orthonormal"));
        }
        if rotation.determinant() < 0.0 {
            return Err(GeometryError::NotRigid("rotation block is a reflection"));
        }
        Ok(Self {
            rotation,
            translation,
        }
        .orthonormalized())
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    /// Pure rotation of `angle` radians about `axis` (need not be unit length).
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let rotation = Rotation3::from_axis_angle(&Unit::new_normalize(*axis), angle);
        Self::new(rotation, Vector3::zeros())
    }

    /// Pure rotation about the local x-axis.
    pub fn rot_x(angle: f64) -> Self {
        Self::from_axis_angle(&Vector3::x(), angle)
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn with_translation(&self, translation: Vector3<f64>) -> Self {
        Self {
            rotation: self.rotation,
            translation,
        }
    }

    /// Column `i` of the rotation: the i-th axis of the source frame in target coordinates.
    pub fn axis(&self, i: usize) -> Vector3<f64> {
        self.rotation.column(i).into_owned()
    }

    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    pub fn to_matrix4(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn from_matrix4(m: &Matrix4<f64>) -> Result<Self, GeometryError> {
        let bottom = m.fixed_view::<1, 4>(3, 0);
        if (bottom[0], bottom[1], bottom[2], bottom[3]) != (0.0, 0.0, 0.0, 1.0) {
            return Err(GeometryError::NotRigid("bottom row must be [0 0 0 1]"));
        }
        Self::from_parts(
            m.fixed_view::<3, 3>(0, 0).into_owned(),
            m.fixed_view::<3, 1>(0, 3).into_owned(),
        )
    }

    /// Row-major 4×4 entries, the layout used by every text log.
    pub fn to_row_major(&self) -> [f64; 16] {
        let m = self.to_matrix4();
        let mut out = [0.0; 16];
        for r in 0..4 {
            for c in 0..4 {
                out[r * 4 + c] = m[(r, c)];
            }
        }
        out
    }

    /// Inverse of [`Pose::to_row_major`]. The rotation is kept bit-exact when it
    /// already satisfies the rigidity check, so save/load cycles are lossless.
    pub fn from_row_major(v: &[f64]) -> Result<Self, GeometryError> {
        if v.len() != 16 && v.len() != 12 {
            return Err(GeometryError::NotRigid(
                "expected 12 or 16 row-major entries",
            ));
        }
        let mut m = Matrix4::identity();
        for r in 0..(v.len() / 4) {
            for c in 0..4 {
                m[(r, c)] = v[r * 4 + c];
            }
        }
        let rotation = m.fixed_view::<3, 3>(0, 0).into_owned();
        let translation = m.fixed_view::<3, 1>(0, 3).into_owned();
        if v.len() == 16 {
            let bottom = &v[12..16];
            if bottom != [0.0, 0.0, 0.0, 1.0] {
                return Err(GeometryError::NotRigid("bottom row must be [0 0 0 1]"));
            }
        }
        if !v.iter().all(|x| x.is_finite()) {
            return Err(GeometryError::NotRigid("non-finite entry"));
        }
        if (rotation.transpose() * rotation - Matrix3::identity()).norm() > RIGID_IMPORT_TOL
            || rotation.determinant() < 0.0
        {
            return Err(GeometryError::NotRigid(
                "rotation block is not a proper rotation",
            ));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(self.rotation))
    }

    /// Projects the rotation back onto SO(3), removing accumulated drift.
    pub fn orthonormalized(&self) -> Pose {
        let q = UnitQuaternion::from_matrix_eps(&self.rotation, 1e-15, 64, self.quaternion());
        Pose {
            rotation: q.to_rotation_matrix().into_inner(),
            translation: self.translation,
        }
    }

    /// Rotation angle of this pose's rotation, in `[0, π]`.
    pub fn rotation_angle(&self) -> f64 {
        rotation_angle(&self.rotation)
    }

    /// Scaled rotation axis (axis·angle) of the relative rotation `selfᵀ·other`,
    /// expressed in this pose's frame.
    pub fn rotation_vector_to(&self, other: &Pose) -> Vector3<f64> {
        let rel = self.rotation.transpose() * other.rotation;
        Rotation3::from_matrix_unchecked(rel).scaled_axis()
    }

    pub fn is_finite(&self) -> bool {
        self.rotation
            .iter()
            .chain(self.translation.iter())
            .all(|v| v.is_finite())
    }
}

impl Mul for Pose {
    type Output = Pose;
    fn mul(self, rhs: Pose) -> Pose {
        self.compose(&rhs)
    }
}

impl Mul<&Pose> for &Pose {
    type Output = Pose;
    fn mul(self, rhs: &Pose) -> Pose {
        self.compose(rhs)
    }
}

/// Angle of a rotation matrix, in `[0, π]`, robust near both ends of the range.
pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    let skew_part = Vector3::new(
        r[(2, 1)] - r[(1, 2)],
        r[(0, 2)] - r[(2, 0)],
        r[(1, 0)] - r[(0, 1)],
    );
    let sin2 = skew_part.norm();
    let cos2 = r.trace() - 1.0;
    sin2.atan2(cos2)
}

/// Spatial velocity `(v, ω)`: linear part in m/s, angular part in rad/s.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Twist {
    pub linear: Vector3<f64>,
    pub angular: Vector3<f64>,
}

impl Twist {
    pub fn new(linear: Vector3<f64>, angular: Vector3<f64>) -> Self {
        Self { linear, angular }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self {
            linear: v.fixed_rows::<3>(0).into_owned(),
            angular: v.fixed_rows::<3>(3).into_owned(),
        }
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        let mut v = Vector6::zeros();
        v.fixed_rows_mut::<3>(0).copy_from(&self.linear);
        v.fixed_rows_mut::<3>(3).copy_from(&self.angular);
        v
    }

    pub fn is_finite(&self) -> bool {
        self.linear
            .iter()
            .chain(self.angular.iter())
            .all(|v| v.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.linear == Vector3::zeros() && self.angular == Vector3::zeros()
    }

    pub fn scaled(&self, s: f64) -> Twist {
        Twist {
            linear: self.linear * s,
            angular: self.angular * s,
        }
    }
}

/// 6×6 velocity-twist matrix `[[R, [t]×R], [0, R]]` built from a pose `ᵏTⱼ`.
/// It maps a twist expressed in frame `j` to the same twist expressed in frame `k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VelocityTwistMatrix(Matrix6<f64>);

impl VelocityTwistMatrix {
    pub fn identity() -> Self {
        Self(Matrix6::identity())
    }

    pub fn from_pose(pose: &Pose) -> Self {
        let r = pose.rotation();
        let mut m = Matrix6::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(r);
        m.fixed_view_mut::<3, 3>(0, 3)
            .copy_from(&(skew(pose.translation()) * r));
        m.fixed_view_mut::<3, 3>(3, 3).copy_from(r);
        Self(m)
    }

    pub fn matrix(&self) -> &Matrix6<f64> {
        &self.0
    }

    pub fn apply(&self, twist: &Twist) -> Twist {
        Twist::from_vector(&(self.0 * twist.to_vector()))
    }
}

impl Mul for VelocityTwistMatrix {
    type Output = VelocityTwistMatrix;
    fn mul(self, rhs: VelocityTwistMatrix) -> VelocityTwistMatrix {
        VelocityTwistMatrix(self.0 * rhs.0)
    }
}

/// Velocity-twist matrix of a pose; see [`VelocityTwistMatrix::from_pose`].
pub fn velocity_twist(pose: &Pose) -> VelocityTwistMatrix {
    VelocityTwistMatrix::from_pose(pose)
}

/// Interpolates between two poses: linear in translation, constant-speed
/// great-circle (slerp) in rotation along the shorter arc.
///
/// At an exact half-turn both arcs have equal length; the tie is broken by
/// choosing the relative rotation axis whose first non-zero component is positive.
pub fn interpolate_pose(t: f64, start: &Pose, end: &Pose) -> Result<Pose, GeometryError> {
    if !(0.0..=1.0).contains(&t) {
        return Err(GeometryError::ParameterOutOfRange(t));
    }
    if t == 0.0 {
        return Ok(*start);
    }
    if t == 1.0 {
        return Ok(*end);
    }
    let translation = start.translation * (1.0 - t) + end.translation * t;

    let q0 = start.quaternion();
    let rel = q0.inverse() * end.quaternion();
    let mut w = rel.w;
    let mut v = rel.imag();
    if w < 0.0 || (w == 0.0 && first_nonzero_negative(&v)) {
        w = -w;
        v = -v;
    }
    let sin_half = v.norm();
    if sin_half < 1e-15 {
        return Ok(Pose {
            rotation: start.rotation,
            translation,
        });
    }
    let angle = 2.0 * sin_half.atan2(w);
    let step = UnitQuaternion::from_axis_angle(&Unit::new_unchecked(v / sin_half), t * angle);
    let rotation = (q0 * step).to_rotation_matrix().into_inner();
    Ok(Pose {
        rotation,
        translation,
    })
}

fn first_nonzero_negative(v: &Vector3<f64>) -> bool {
    v.iter().find(|c| c.abs() > 1e-12).is_some_and(|c| *c < 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    fn sample_pose() -> Pose {
        Pose::new(
            Rotation3::from_euler_angles(0.3, -0.7, 1.1),
            Vector3::new(0.1, -0.25, 0.4),
        )
    }

    #[test]
    fn skew_of_known_vector() {
        let s = skew(&Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(
            s,
            Matrix3::new(0.0, -3.0, 2.0, 3.0, 0.0, -1.0, -2.0, 1.0, 0.0)
        );
        assert_eq!(skew(&Vector3::zeros()), Matrix3::zeros());
    }

    #[test]
    fn velocity_twist_of_identity_and_pure_rotation() {
        assert_eq!(
            velocity_twist(&Pose::identity()).matrix(),
            &Matrix6::identity()
        );
        let p = Pose::from_axis_angle(&Vector3::new(1.0, 1.0, 0.0), 0.4);
        let v = velocity_twist(&p);
        let m = v.matrix();
        assert_eq!(m.fixed_view::<3, 3>(0, 3).into_owned(), Matrix3::zeros());
        assert_eq!(m.fixed_view::<3, 3>(3, 0).into_owned(), Matrix3::zeros());
        assert_eq!(m.fixed_view::<3, 3>(0, 0).into_owned(), *p.rotation());
        assert_eq!(m.fixed_view::<3, 3>(3, 3).into_owned(), *p.rotation());
    }

    #[test]
    fn compose_with_identity_and_inverse() {
        let p = sample_pose();
        assert_eq!(p.compose(&Pose::identity()), p);
        let e = p.inverse().compose(&p);
        assert!((e.to_matrix4() - Matrix4::identity()).norm() < 1e-12);
    }

    #[test]
    fn interpolate_endpoints_are_exact() {
        let a = sample_pose();
        let b = Pose::from_translation(Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(interpolate_pose(0.0, &a, &b).unwrap(), a);
        assert_eq!(interpolate_pose(1.0, &a, &b).unwrap(), b);
    }

    #[test]
    fn interpolate_midpoint_quarter_turn() {
        let end = Pose::new(
            Rotation3::from_axis_angle(&Vector3::z_axis(), FRAC_PI_2),
            Vector3::new(0.2, 0.0, -0.4),
        );
        let mid = interpolate_pose(0.5, &Pose::identity(), &end).unwrap();
        let expected = Rotation3::from_axis_angle(&Vector3::z_axis(), FRAC_PI_4).into_inner();
        assert!((mid.rotation() - expected).norm() < 1e-12);
        assert!((mid.translation() - Vector3::new(0.1, 0.0, -0.2)).norm() < 1e-15);
    }

    #[test]
    fn interpolate_rejects_out_of_range() {
        let a = Pose::identity();
        assert_eq!(
            interpolate_pose(-0.01, &a, &a),
            Err(GeometryError::ParameterOutOfRange(-0.01))
        );
        assert!(interpolate_pose(1.5, &a, &a).is_err());
    }

    #[test]
    fn half_turn_tie_break_is_deterministic() {
        let end = Pose::from_axis_angle(&Vector3::z(), PI);
        let a = interpolate_pose(0.5, &Pose::identity(), &end).unwrap();
        let b = interpolate_pose(0.5, &Pose::identity(), &end).unwrap();
        assert_eq!(a, b);
        assert!((a.rotation_angle() - FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn row_major_round_trip_is_bit_exact() {
        let p = sample_pose();
        let q = Pose::from_row_major(&p.to_row_major()).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn from_row_major_rejects_reflections() {
        let mut m = Pose::identity().to_row_major();
        m[0] = -1.0;
        assert!(Pose::from_row_major(&m).is_err());
    }

    #[test]
    fn rotation_angle_near_pi() {
        let p = Pose::from_axis_angle(&Vector3::new(0.3, -1.0, 0.2), PI - 1e-9);
        assert!((p.rotation_angle() - (PI - 1e-9)).abs() < 1e-7);
    }
}
