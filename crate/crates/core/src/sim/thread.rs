use nalgebra::Vector3;

/// Linear-spring thread: tension grows with stretch beyond the free length and
/// vanishes when slack.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThreadModel {
    /// Where the thread leaves the fabric (last stitch).
    pub anchor: Vector3<f64>,
    pub free_length: f64,
    /// N/m.
    pub stiffness: f64,
}

impl ThreadModel {
    pub fn new(anchor: Vector3<f64>, free_length: f64, stiffness: f64) -> Self {
        Self {
            anchor,
            free_length,
            stiffness,
        }
    }

    /// Tension for a thread path of the given length.
    pub fn tension(&self, path_length: f64) -> f64 {
        self.stiffness * (path_length - self.free_length).max(0.0)
    }

    /// Length of the polyline anchor → `via`… → `attachment`.
    pub fn path_length(&self, via: &[Vector3<f64>], attachment: &Vector3<f64>) -> f64 {
        let mut len = 0.0;
        let mut prev = self.anchor;
        for p in via.iter().chain(std::iter::once(attachment)) {
            len += (p - prev).norm();
            prev = *p;
        }
        len
    }

    /// Resets the free length to the current path: the thread is just taut.
    pub fn make_taut(&mut self, path_length: f64) {
        self.free_length = path_length;
    }
}
