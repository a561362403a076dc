use nalgebra::{Vector2, Vector3};

use crate::geometry::Pose;

/// Fabric surface expressed in the camera frame. Signed distances are positive
/// on the camera side of the surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Fabric {
    /// Rectangular sheet. `normal` points toward the camera, `u` is the first
    /// in-plane axis; `half_extents` are measured along `u` and `normal × u`.
    Plane {
        point: Vector3<f64>,
        normal: Vector3<f64>,
        u: Vector3<f64>,
        half_extents: Vector2<f64>,
    },
    /// Graft wrapped on a mandrel whose axis is the local z-axis of `axis`.
    Cylinder {
        axis: Pose,
        radius: f64,
        half_length: f64,
    },
}

impl Fabric {
    pub fn plane(
        point: Vector3<f64>,
        normal: Vector3<f64>,
        u: Vector3<f64>,
        half_extents: Vector2<f64>,
    ) -> Fabric {
        let normal = normal.normalize();
        let u = (u - normal * normal.dot(&u)).normalize();
        Fabric::Plane {
            point,
            normal,
            u,
            half_extents,
        }
    }

    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        match self {
            Fabric::Plane { point, normal, .. } => (p - point).dot(normal),
            Fabric::Cylinder { axis, radius, .. } => {
                let q = axis.inverse().transform_point(p);
                q.xy().norm() - radius
            }
        }
    }

    /// Outward unit normal at the surface point closest to `p`.
    pub fn normal_at(&self, p: &Vector3<f64>) -> Vector3<f64> {
        match self {
            Fabric::Plane { normal, .. } => *normal,
            Fabric::Cylinder { axis, .. } => {
                let q = axis.inverse().transform_point(p);
                axis.transform_vector(&Vector3::new(q.x, q.y, 0.0).normalize())
            }
        }
    }

    /// Whether `p` (assumed near the surface) lies within the fabric's extent.
    pub fn within_bounds(&self, p: &Vector3<f64>) -> bool {
        match self {
            Fabric::Plane {
                point,
                normal,
                u,
                half_extents,
            } => {
                let r = p - point;
                let v = normal.cross(u);
                r.dot(u).abs() <= half_extents.x && r.dot(&v).abs() <= half_extents.y
            }
            Fabric::Cylinder {
                axis, half_length, ..
            } => axis.inverse().transform_point(p).z.abs() <= *half_length,
        }
    }

    /// Nearest positive ray parameter at which `origin + t·dir` meets the fabric
    /// from the outside, within bounds.
    pub fn ray_intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        let t = match self {
            Fabric::Plane { point, normal, .. } => {
                let denom = dir.dot(normal);
                if denom.abs() < 1e-15 {
                    return None;
                }
                (point - origin).dot(normal) / denom
            }
            Fabric::Cylinder { axis, radius, .. } => {
                let inv = axis.inverse();
                let o = inv.transform_point(origin);
                let d = inv.transform_vector(dir);
                let a = d.x * d.x + d.y * d.y;
                if a < 1e-15 {
                    return None;
                }
                let b = 2.0 * (o.x * d.x + o.y * d.y);
                let c = o.x * o.x + o.y * o.y - radius * radius;
                let disc = b * b - 4.0 * a * c;
                if disc < 0.0 {
                    return None;
                }
                (-b - disc.sqrt()) / (2.0 * a)
            }
        };
        if t <= 0.0 {
            return None;
        }
        let hit = origin + dir * t;
        self.within_bounds(&hit).then_some(t)
    }

    /// Surface point directly along the outward normal from `p` (projection).
    pub fn project(&self, p: &Vector3<f64>) -> Vector3<f64> {
        p - self.normal_at(p) * self.signed_distance(p)
    }
}
