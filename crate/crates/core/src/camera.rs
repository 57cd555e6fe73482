//! Virtual pinhole camera: patch pose, z-buffered depth projection,
//! boundary masks, per-patch normalization and back-projection.
//!
//! Camera axes: +x along the patch tangent `u`, +y against the generatrix
//! `v`, +z from the camera origin toward the surface (against the normal).
//! A point at the patch center therefore sits at depth `standoff`.
//! Images are indexed `[[row, col]] = [[v, u]]`.

use nalgebra::{Matrix3, Point3, Vector3};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cloud::PointCloud;
use crate::patch::{Patch, PatchFrame};

/// Points closer to the image plane than this are discarded.
pub const MIN_DEPTH: f64 = 1e-6;
/// Depth spans below this are normalized to a constant 0.5.
pub const DEGENERATE_RANGE: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum CameraError {
    #[error("no point projected inside the image")]
    EmptyProjection,
    #[error("image has no valid pixels")]
    NoValidPixels,
    #[error("invalid intrinsics: {0}")]
    Intrinsics(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub height: usize,
    pub width: usize,
    /// Stand-off distance from the patch center along the normal, metres.
    pub standoff: f64,
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        Self { fx: 400.0, fy: 400.0, cx: 128.0, cy: 128.0, height: 256, width: 256, standoff: 0.8 }
    }
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<(), CameraError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(CameraError::Intrinsics("focal lengths must be positive".into()));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64 && self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(CameraError::Intrinsics("principal point outside the image".into()));
        }
        if !(self.standoff > 0.0 && self.standoff.is_finite()) {
            return Err(CameraError::Intrinsics("stand-off distance must be positive".into()));
        }
        Ok(())
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Nearest pixel `(u, v)` of a camera-frame point, if it lands in the image.
    pub fn pixel_of(&self, pc: &Point3<f64>) -> Option<(usize, usize)> {
        if !(pc.z > MIN_DEPTH) {
            return None;
        }
        let u = (self.fx * pc.x / pc.z + self.cx).round();
        let v = (self.fy * pc.y / pc.z + self.cy).round();
        if u >= 0.0 && u < self.width as f64 && v >= 0.0 && v < self.height as f64 {
            Some((u as usize, v as usize))
        } else {
            None
        }
    }

    /// Camera-frame point on the ray through pixel center `(u, v)` at depth `z`.
    pub fn unproject(&self, u: f64, v: f64, z: f64) -> Point3<f64> {
        Point3::new((u - self.cx) * z / self.fx, (v - self.cy) * z / self.fy, z)
    }
}

/// World-to-camera transform `x_c = R (x - o)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    pub origin: Point3<f64>,
    pub rotation: Matrix3<f64>,
}

impl CameraPose {
    pub fn to_camera(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation * (p - self.origin))
    }

    pub fn to_world(&self, pc: &Point3<f64>) -> Point3<f64> {
        self.origin + self.rotation.transpose() * pc.coords
    }
}

pub fn camera_pose(frame: &PatchFrame, standoff: f64) -> CameraPose {
    let origin = frame.center + frame.normal * standoff;
    let rotation =
        Matrix3::from_rows(&[frame.tangent.transpose(), (-frame.generatrix).transpose(), (-frame.normal).transpose()]);
    CameraPose { origin, rotation }
}

/// Record needed to undo normalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthRange {
    pub z_min: f64,
    pub z_max: f64,
}

impl DepthRange {
    pub fn normalize(&self, z: f64) -> f64 {
        let span = self.z_max - self.z_min;
        if span < DEGENERATE_RANGE {
            0.5
        } else {
            (z - self.z_min) / span
        }
    }

    pub fn denormalize(&self, value: f64) -> f64 {
        self.z_min + value * (self.z_max - self.z_min)
    }
}

/// Depth map of one patch. Invalid pixels hold 0.
///
/// `range` is `None` while `values` are metric camera depths and is set by
/// [`normalize_depth`], after which `values` lie in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub values: Array2<f64>,
    pub valid: Array2<bool>,
    pub range: Option<DepthRange>,
    pub frame: PatchFrame,
    pub intrinsics: CameraIntrinsics,
}

impl DepthImage {
    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Metric depth of pixel `(row, col)` if valid.
    pub fn metric_depth(&self, row: usize, col: usize) -> Option<f64> {
        if !self.valid[[row, col]] {
            return None;
        }
        let value = self.values[[row, col]];
        Some(match self.range {
            Some(r) => r.denormalize(value),
            None => value,
        })
    }
}

/// Z-buffered pinhole projection of camera-frame points.
pub fn project(
    points: &[Point3<f64>],
    intrinsics: &CameraIntrinsics,
    frame: &PatchFrame,
) -> Result<DepthImage, CameraError> {
    let shape = intrinsics.shape();
    let mut values = Array2::<f64>::zeros(shape);
    let mut valid = Array2::from_elem(shape, false);
    for pc in points {
        let Some((u, v)) = intrinsics.pixel_of(pc) else { continue };
        let slot = [v, u];
        if !valid[slot] || pc.z < values[slot] {
            values[slot] = pc.z;
            valid[slot] = true;
        }
    }
    if !valid.iter().any(|&b| b) {
        return Err(CameraError::EmptyProjection);
    }
    Ok(DepthImage { values, valid, range: None, frame: *frame, intrinsics: *intrinsics })
}

/// Transforms the patch members into the camera frame and projects them.
pub fn render_patch(
    cloud: &PointCloud,
    patch: &Patch,
    intrinsics: &CameraIntrinsics,
) -> Result<DepthImage, CameraError> {
    let pose = camera_pose(&patch.frame, intrinsics.standoff);
    let cam: Vec<Point3<f64>> = patch.points(cloud).map(|p| pose.to_camera(p)).collect();
    project(&cam, intrinsics, &patch.frame)
}

/// Inclusive pixel bounds `(u_min, v_min, u_max, v_max)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelRect {
    pub u_min: usize,
    pub v_min: usize,
    pub u_max: usize,
    pub v_max: usize,
}

impl PixelRect {
    pub fn contains(&self, u: usize, v: usize) -> bool {
        (self.u_min..=self.u_max).contains(&u) && (self.v_min..=self.v_max).contains(&v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryMask {
    pub rect: PixelRect,
    pub grid: Array2<bool>,
}

impl BoundaryMask {
    pub fn from_rect(rect: PixelRect, shape: (usize, usize)) -> Self {
        let grid = Array2::from_shape_fn(shape, |(v, u)| rect.contains(u, v));
        Self { rect, grid }
    }

    pub fn full(shape: (usize, usize)) -> Self {
        let rect = PixelRect { u_min: 0, v_min: 0, u_max: shape.1 - 1, v_max: shape.0 - 1 };
        Self::from_rect(rect, shape)
    }

    pub fn area(&self) -> usize {
        (self.rect.u_max - self.rect.u_min + 1) * (self.rect.v_max - self.rect.v_min + 1)
    }
}

/// Tight axis-aligned bounding box of a validity grid.
pub fn bounding_mask(valid: &Array2<bool>) -> Result<BoundaryMask, CameraError> {
    let mut rect: Option<PixelRect> = None;
    for ((v, u), _) in valid.indexed_iter().filter(|(_, &b)| b) {
        rect = Some(match rect {
            None => PixelRect { u_min: u, v_min: v, u_max: u, v_max: v },
            Some(r) => {
                PixelRect { u_min: r.u_min.min(u), v_min: r.v_min.min(v), u_max: r.u_max.max(u), v_max: r.v_max.max(v) }
            }
        });
    }
    let rect = rect.ok_or(CameraError::NoValidPixels)?;
    Ok(BoundaryMask::from_rect(rect, valid.dim()))
}

pub fn boundary_mask(img: &DepthImage) -> Result<BoundaryMask, CameraError> {
    bounding_mask(&img.valid)
}

/// Maps valid depths of a metric image onto `[0, 1]` and records the range.
pub fn normalize_depth(img: &DepthImage) -> Result<DepthImage, CameraError> {
    let mut z_min = f64::INFINITY;
    let mut z_max = f64::NEG_INFINITY;
    for (z, _) in img.values.iter().zip(img.valid.iter()).filter(|(_, &ok)| ok) {
        z_min = z_min.min(*z);
        z_max = z_max.max(*z);
    }
    if z_min > z_max {
        return Err(CameraError::NoValidPixels);
    }
    let range = DepthRange { z_min, z_max };
    let values =
        Array2::from_shape_fn(
            img.values.dim(),
            |idx| {
                if img.valid[idx] {
                    range.normalize(img.values[idx])
                } else {
                    0.0
                }
            },
        );
    Ok(DepthImage { values, range: Some(range), ..img.clone() })
}

/// World points of all valid pixels, in row-major pixel order.
pub fn back_project(img: &DepthImage) -> PointCloud {
    let pose = camera_pose(&img.frame, img.intrinsics.standoff);
    let points = img
        .valid
        .indexed_iter()
        .filter(|(_, &ok)| ok)
        .map(|((v, u), _)| {
            let z = img.metric_depth(v, u).expect("valid pixel");
            pose.to_world(&img.intrinsics.unproject(u as f64, v as f64, z))
        })
        .collect();
    PointCloud::new(points).expect("back-projected points are finite")
}

/// Unit direction (world frame) of the ray through pixel center `(u, v)`,
/// scaled so that its camera-frame z component is 1.
pub fn pixel_ray(pose: &CameraPose, intrinsics: &CameraIntrinsics, u: f64, v: f64) -> Vector3<f64> {
    pose.rotation.transpose() * intrinsics.unproject(u, v, 1.0).coords
}
