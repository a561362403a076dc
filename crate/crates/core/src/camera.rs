//! Pinhole camera with depth: pixel ↔ normalized coordinates, projection,
//! back-projection and organized point clouds.

use std::io::{self, Write};

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CameraError {
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("point is behind the camera (Z = {0})")]
    BehindCamera(f64),
    #[error("depth image is {got_w}×{got_h}, camera expects {want_w}×{want_h}")]
    DimensionMismatch {
        got_w: usize,
        got_h: usize,
        want_w: usize,
        want_h: usize,
    },
    #[error("malformed depth image: {0}")]
    Malformed(String),
}

/// Pinhole intrinsics in pixel units. Colour and depth share one model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cu: f64,
    pub cv: f64,
    pub width: usize,
    pub height: usize,
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        Self {
            fx: 600.0,
            fy: 600.0,
            cu: 320.0,
            cv: 240.0,
            width: 640,
            height: 480,
        }
    }
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cu: f64,
        cv: f64,
        width: usize,
        height: usize,
    ) -> Result<Self, CameraError> {
        let k = Self {
            fx,
            fy,
            cu,
            cv,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(CameraError::InvalidIntrinsics(format!(
                "focal lengths must be positive, got ({}, {})",
                self.fx, self.fy
            )));
        }
        if !(self.cu > 0.0
            && self.cu < self.width as f64
            && self.cv > 0.0
            && self.cv < self.height as f64)
        {
            return Err(CameraError::InvalidIntrinsics(format!(
                "principal point ({}, {}) outside the {}×{} image",
                self.cu, self.cv, self.width, self.height
            )));
        }
        Ok(())
    }

    /// Pixel coordinates to normalized image coordinates.
    pub fn normalize(&self, pixel: &Vector2<f64>) -> Vector2<f64> {
        Vector2::new((pixel.x - self.cu) / self.fx, (pixel.y - self.cv) / self.fy)
    }

    /// Normalized image coordinates back to pixels.
    pub fn denormalize(&self, xy: &Vector2<f64>) -> Vector2<f64> {
        Vector2::new(xy.x * self.fx + self.cu, xy.y * self.fy + self.cv)
    }

    /// Projects a camera-frame point to pixel coordinates.
    pub fn project(&self, p: &Vector3<f64>) -> Result<Vector2<f64>, CameraError> {
        if !(p.z > 0.0) {
            return Err(CameraError::BehindCamera(p.z));
        }
        Ok(Vector2::new(
            self.fx * p.x / p.z + self.cu,
            self.fy * p.y / p.z + self.cv,
        ))
    }

    /// Back-projects a pixel with depth `z` (metres). Returns `None` for
    /// non-positive or non-finite depth.
    pub fn backproject(&self, pixel: &Vector2<f64>, z: f64) -> Option<Vector3<f64>> {
        if !(z.is_finite() && z > 0.0) {
            return None;
        }
        let xy = self.normalize(pixel);
        Some(Vector3::new(xy.x * z, xy.y * z, z))
    }

    /// Unit ray direction through a pixel, in the camera frame.
    pub fn ray(&self, pixel: &Vector2<f64>) -> Vector3<f64> {
        let xy = self.normalize(pixel);
        Vector3::new(xy.x, xy.y, 1.0).normalize()
    }

    pub fn contains(&self, pixel: &Vector2<f64>) -> bool {
        pixel.x >= 0.0
            && pixel.y >= 0.0
            && pixel.x <= (self.width - 1) as f64
            && pixel.y <= (self.height - 1) as f64
    }
}

/// A tracked pattern dot: pixel position and the depth read at that pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Feature {
    pub id: usize,
    pub pixel: Vector2<f64>,
    pub depth: Option<f64>,
}

/// Row-major depth image in metres. Zero or NaN marks a missing reading.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl DepthImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self, CameraError> {
        if data.len() != width * height {
            return Err(CameraError::Malformed(format!(
                "{} samples for a {}×{} image",
                data.len(),
                width,
                height
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, depth: f64) -> Self {
        Self {
            width,
            height,
            data: vec![depth; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.data[v * self.width + u]
    }

    pub fn set(&mut self, u: usize, v: usize, z: f64) {
        self.data[v * self.width + u] = z;
    }

    /// Parses a comma- or whitespace-separated grid, one image row per line.
    pub fn from_csv(text: &str) -> Result<Self, CameraError> {
        let mut width = None;
        let mut data = Vec::new();
        let mut height = 0;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let row: Result<Vec<f64>, _> = line
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .map(|s| s.parse::<f64>())
                .collect();
            let row =
                row.map_err(|e| CameraError::Malformed(format!("line {}: {e}", lineno + 1)))?;
            match width {
                None => width = Some(row.len()),
                Some(w) if w != row.len() => {
                    return Err(CameraError::Malformed(format!(
                        "line {} has {} columns, expected {w}",
                        lineno + 1,
                        row.len()
                    )))
                }
                _ => {}
            }
            data.extend(row);
            height += 1;
        }
        let width = width.ok_or_else(|| CameraError::Malformed("empty depth grid".into()))?;
        Self::new(width, height, data)
    }

    /// Parses raw little-endian `f32` samples, row-major.
    pub fn from_le_f32(bytes: &[u8], width: usize, height: usize) -> Result<Self, CameraError> {
        if bytes.len() != width * height * 4 {
            return Err(CameraError::Malformed(format!(
                "{} bytes for a {}×{} f32 image",
                bytes.len(),
                width,
                height
            )));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        Self::new(width, height, data)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        for row in self.data.chunks(self.width) {
            let line: Vec<String> = row.iter().map(|z| z.to_string()).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }
}

/// Organized point cloud in the camera frame with an explicit validity mask.
/// Invalid entries hold zero coordinates and must not be read as geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Vector3<f64>>,
    valid: Vec<bool>,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>, valid: Vec<bool>) -> Self {
        assert_eq!(points.len(), valid.len(), "point and mask lengths differ");
        Self { points, valid }
    }

    pub fn from_points(points: Vec<Vector3<f64>>) -> Self {
        let valid = points
            .iter()
            .map(|p| p.iter().all(|c| c.is_finite()) && p.z > 0.0)
            .collect();
        Self { points, valid }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn mask(&self) -> &[bool] {
        &self.valid
    }

    pub fn is_valid(&self, i: usize) -> bool {
        self.valid[i]
    }

    pub fn valid_points(&self) -> impl Iterator<Item = &Vector3<f64>> {
        self.points
            .iter()
            .zip(&self.valid)
            .filter(|(_, v)| **v)
            .map(|(p, _)| p)
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// ASCII PLY with the valid points only.
    pub fn write_ply<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "ply")?;
        writeln!(out, "format ascii 1.0")?;
        writeln!(out, "element vertex {}", self.valid_count())?;
        writeln!(out, "property double x")?;
        writeln!(out, "property double y")?;
        writeln!(out, "property double z")?;
        writeln!(out, "end_header")?;
        for p in self.valid_points() {
            writeln!(out, "{} {} {}", p.x, p.y, p.z)?;
        }
        Ok(())
    }

    /// CSV with every point: `x,y,z,valid`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "x,y,z,valid")?;
        for (p, v) in self.points.iter().zip(&self.valid) {
            writeln!(out, "{},{},{},{}", p.x, p.y, p.z, u8::from(*v))?;
        }
        Ok(())
    }
}

/// Back-projects every pixel of a depth image. Zero, negative and NaN depths
/// become invalid points.
pub fn cloud_from_depth(
    image: &DepthImage,
    k: &CameraIntrinsics,
) -> Result<PointCloud, CameraError> {
    if image.width != k.width || image.height != k.height {
        return Err(CameraError::DimensionMismatch {
            got_w: image.width,
            got_h: image.height,
            want_w: k.width,
            want_h: k.height,
        });
    }
    let mut points = Vec::with_capacity(image.data.len());
    let mut valid = Vec::with_capacity(image.data.len());
    for v in 0..image.height {
        for u in 0..image.width {
            match k.backproject(&Vector2::new(u as f64, v as f64), image.get(u, v)) {
                Some(p) => {
                    points.push(p);
                    valid.push(true);
                }
                None => {
                    points.push(Vector3::zeros());
                    valid.push(false);
                }
            }
        }
    }
    Ok(PointCloud { points, valid })
}
