//! Pinhole camera model, 3D points, poses, and depth-map <-> point-cloud
//! conversion.
//!
//! Grid cell `(row, col)` of a [`DepthMap`] samples the continuous pixel
//! `(col + 0.5, row + 0.5)`, so round trips through the camera model carry
//! no half-pixel bias. Invalid depths are an explicit mask rather than a
//! sentinel value.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("non-positive depth {0}")]
    NonPositiveDepth(f64),
    #[error("depth map has no valid cells")]
    EmptyDepthMap,
    #[error("rotation matrix is not orthonormal with det +1 (defect {0:.3e})")]
    InvalidRotation(f64),
    #[error("invalid intrinsics: fx and fy must be positive (fx={fx}, fy={fy})")]
    InvalidIntrinsics { fx: f64, fy: f64 },
    #[error("invalid depth map dimensions {width}x{height} for {len} values")]
    DimensionMismatch {
        width: usize,
        height: usize,
        len: usize,
    },
}

/// Pinhole parameters mapping pixels to rays and back.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self, GeometryError> {
        if fx <= 0.0 || fy <= 0.0 {
            return Err(GeometryError::InvalidIntrinsics { fx, fy });
        }
        Ok(Self { fx, fy, cx, cy })
    }
}

/// Continuous pixel coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pixel {
    pub u: f64,
    pub v: f64,
}

impl Pixel {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }
}

/// 3D point in camera coordinates, meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn from_vector(v: Vector3<f64>) -> Self {
        Self::new(v.x, v.y, v.z)
    }
}

/// Rigid transform: rotation applied first, then translation.
///
/// Construction checks orthonormality and det +1 so every downstream
/// consumer can rely on the invariants.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

pub const ROTATION_TOL: f64 = 1e-9;

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        let defect = (rotation.transpose() * rotation - Matrix3::identity()).norm();
        let det_defect = (rotation.determinant() - 1.0).abs();
        let worst = defect.max(det_defect);
        // tolerance is loose enough for accumulated f64 round-off in SVD outputs
        if worst > 1e-6 {
            return Err(GeometryError::InvalidRotation(worst));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// R p + t.
    pub fn transform(&self, p: Point3) -> Point3 {
        Point3::from_vector(self.rotation * p.to_vector() + self.translation)
    }

    /// Rotation angle in radians, from the trace.
    pub fn rotation_angle(&self) -> f64 {
        let c = ((self.rotation.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        c.acos()
    }
}

/// Dense per-pixel metric depth with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
    valid: Vec<bool>,
}

impl DepthMap {
    /// Non-positive or non-finite input depths are marked invalid.
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self, GeometryError> {
        if width == 0 || height == 0 || values.len() != width * height {
            return Err(GeometryError::DimensionMismatch {
                width,
                height,
                len: values.len(),
            });
        }
        let valid = values.iter().map(|&d| d.is_finite() && d > 0.0).collect();
        Ok(Self {
            width,
            height,
            values,
            valid,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        let i = row * self.width + col;
        if self.valid[i] {
            Some(self.values[i])
        } else {
            None
        }
    }

    pub fn is_valid(&self, row: usize, col: usize) -> bool {
        self.valid[row * self.width + col]
    }

    pub fn raw_value(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, depth: f64) {
        let i = row * self.width + col;
        self.values[i] = depth;
        self.valid[i] = depth.is_finite() && depth > 0.0;
    }

    pub fn invalidate(&mut self, row: usize, col: usize) {
        self.valid[row * self.width + col] = false;
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Continuous pixel sampled by grid cell (row, col).
    pub fn pixel_center(row: usize, col: usize) -> Pixel {
        Pixel::new(col as f64 + 0.5, row as f64 + 0.5)
    }

    /// Row-major iterator over valid cells as (row, col, depth).
    pub fn iter_valid(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.height).flat_map(move |r| {
            (0..self.width).filter_map(move |c| self.get(r, c).map(|d| (r, c, d)))
        })
    }
}

/// u = fx x/z + cx, v = fy y/z + cy.
pub fn project(intr: &CameraIntrinsics, p: Point3) -> Result<Pixel, GeometryError> {
    if p.z <= 0.0 {
        return Err(GeometryError::NonPositiveDepth(p.z));
    }
    Ok(Pixel::new(
        intr.fx * p.x / p.z + intr.cx,
        intr.fy * p.y / p.z + intr.cy,
    ))
}

/// Inverse pinhole map at depth d.
pub fn back_project(intr: &CameraIntrinsics, px: Pixel, d: f64) -> Result<Point3, GeometryError> {
    if d <= 0.0 {
        return Err(GeometryError::NonPositiveDepth(d));
    }
    Ok(Point3::new(
        d * (px.u - intr.cx) / intr.fx,
        d * (px.v - intr.cy) / intr.fy,
        d,
    ))
}

/// One point per valid cell, row-major, back-projected at pixel centers.
pub fn depth_map_to_cloud(
    intr: &CameraIntrinsics,
    dm: &DepthMap,
) -> Result<Vec<Point3>, GeometryError> {
    let cloud: Vec<Point3> = dm
        .iter_valid()
        .map(|(r, c, d)| {
            back_project(intr, DepthMap::pixel_center(r, c), d).expect("valid cells have d > 0")
        })
        .collect();
    if cloud.is_empty() {
        return Err(GeometryError::EmptyDepthMap);
    }
    Ok(cloud)
}
