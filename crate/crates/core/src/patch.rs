//! Surface patches: normal estimation on the downsampled cloud, local
//! frames, and oriented-box cropping of the full-resolution cloud.

use std::collections::HashMap;

use nalgebra::{Matrix3, Point3, SymmetricEigen, Vector3};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cloud::PointCloud;

/// Minimum neighbourhood size (query point included) for a rank-2 covariance.
pub const MIN_NEIGHBOURS: usize = 3;

/// Below this length the projected up hint is treated as parallel to the normal.
const DEGENERATE_UP: f64 = 1e-3;

#[derive(Debug, Error, PartialEq)]
pub enum PatchError {
    #[error("cannot estimate normals on an empty cloud")]
    EmptyCloud,
    #[error("requested {requested} patches but only {available} candidates exist")]
    TooFewCandidates { requested: usize, available: usize },
    #[error("crop parameter {name} must be positive, got {value}")]
    InvalidCrop { name: &'static str, value: f64 },
}

/// Orthonormal right-handed patch frame: `tangent = generatrix × normal`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchFrame {
    pub center: Point3<f64>,
    pub normal: Vector3<f64>,
    pub tangent: Vector3<f64>,
    pub generatrix: Vector3<f64>,
}

impl PatchFrame {
    /// Largest deviation of the (u, v, n) Gram matrix from identity.
    pub fn orthonormality_error(&self) -> f64 {
        let axes = [self.tangent, self.generatrix, self.normal];
        let mut worst: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((axes[i].dot(&axes[j]) - target).abs());
            }
        }
        worst
    }

    /// Coordinates of `p` along (u, v, n) relative to the center.
    pub fn local(&self, p: &Point3<f64>) -> Vector3<f64> {
        let d = p - self.center;
        Vector3::new(d.dot(&self.tangent), d.dot(&self.generatrix), d.dot(&self.normal))
    }
}

/// Oriented box dimensions; `ball_radius` is the normal-estimation query radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropParams {
    pub side: f64,
    pub half_thickness: f64,
    pub ball_radius: f64,
}

impl Default for CropParams {
    fn default() -> Self {
        Self { side: 0.8, half_thickness: 0.25, ball_radius: 0.4 }
    }
}

impl CropParams {
    pub fn validate(&self) -> Result<(), PatchError> {
        for (name, value) in
            [("side", self.side), ("half_thickness", self.half_thickness), ("ball_radius", self.ball_radius)]
        {
            if !(value > 0.0 && value.is_finite()) {
                return Err(PatchError::InvalidCrop { name, value });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub frame: PatchFrame,
    pub params: CropParams,
    /// Indices into the cropped cloud, ascending.
    pub indices: Vec<usize>,
}

impl Patch {
    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn points<'a>(&'a self, cloud: &'a PointCloud) -> impl Iterator<Item = &'a Point3<f64>> + 'a {
        self.indices.iter().map(move |&i| &cloud.points()[i])
    }
}

/// A point with its estimated unit normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedPoint {
    pub center: Point3<f64>,
    pub normal: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalEstimate {
    pub normals: Vec<OrientedPoint>,
    /// Points skipped for having fewer than [`MIN_NEIGHBOURS`] in their ball.
    pub dropped: usize,
}

/// Uniform hash grid for fixed-radius ball queries.
pub struct BallIndex<'a> {
    points: &'a [Point3<f64>],
    cell: f64,
    cells: HashMap<[i64; 3], Vec<usize>>,
}

impl<'a> BallIndex<'a> {
    pub fn new(points: &'a [Point3<f64>], cell: f64) -> Self {
        let mut cells: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::key(p, cell)).or_default().push(i);
        }
        Self { points, cell, cells }
    }

    fn key(p: &Point3<f64>, cell: f64) -> [i64; 3] {
        [(p.x / cell).floor() as i64, (p.y / cell).floor() as i64, (p.z / cell).floor() as i64]
    }

    /// Indices of points within `radius` (inclusive) of `q`, ascending.
    pub fn within(&self, q: &Point3<f64>, radius: f64) -> Vec<usize> {
        let r2 = radius * radius;
        let reach = (radius / self.cell).ceil() as i64;
        let [kx, ky, kz] = Self::key(q, self.cell);
        let mut out = Vec::new();
        for dx in -reach..=reach {
            for dy in -reach..=reach {
                for dz in -reach..=reach {
                    if let Some(members) = self.cells.get(&[kx + dx, ky + dy, kz + dz]) {
                        out.extend(members.iter().copied().filter(|&i| (self.points[i] - q).norm_squared() <= r2));
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }

    pub fn count_within(&self, q: &Point3<f64>, radius: f64) -> usize {
        self.within(q, radius).len()
    }
}

/// Unit eigenvector of the smallest covariance eigenvalue of `pts`.
pub fn pca_normal<'a>(pts: impl Iterator<Item = &'a Point3<f64>> + Clone) -> Vector3<f64> {
    let n = pts.clone().count() as f64;
    let mean = pts.clone().fold(Vector3::zeros(), |acc, p| acc + p.coords) / n;
    let cov = pts.fold(Matrix3::zeros(), |acc, p| {
        let d = p.coords - mean;
        acc + d * d.transpose()
    }) / n;
    let eig = SymmetricEigen::new(cov);
    let (imin, _) =
        eig.eigenvalues.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).expect("3x3 matrix has eigenvalues");
    eig.eigenvectors.column(imin).normalize()
}

/// PCA normals for every downsampled point with enough neighbours.
pub fn estimate_normals(down: &PointCloud, ball_radius: f64) -> Result<NormalEstimate, PatchError> {
    if down.is_empty() {
        return Err(PatchError::EmptyCloud);
    }
    let index = BallIndex::new(down.points(), ball_radius);
    let estimates: Vec<Option<OrientedPoint>> = down
        .points()
        .par_iter()
        .map(|c| {
            let neighbours = index.within(c, ball_radius);
            if neighbours.len() < MIN_NEIGHBOURS {
                return None;
            }
            let normal = pca_normal(neighbours.iter().map(|&i| &down.points()[i]));
            Some(OrientedPoint { center: *c, normal })
        })
        .collect();
    let dropped = estimates.iter().filter(|e| e.is_none()).count();
    Ok(NormalEstimate { normals: estimates.into_iter().flatten().collect(), dropped })
}

/// Picks the normal sign whose side of the surface holds fewer points within
/// a ball of radius `standoff`, so the camera lands in free space. Ties keep
/// the PCA sign.
pub fn orient_normal(candidate: &OrientedPoint, cloud: &PointCloud, standoff: f64) -> Vector3<f64> {
    let front = candidate.center + candidate.normal * standoff;
    let back = candidate.center - candidate.normal * standoff;
    let r2 = standoff * standoff;
    let (mut n_front, mut n_back) = (0usize, 0usize);
    for p in cloud.points() {
        n_front += ((p - front).norm_squared() <= r2) as usize;
        n_back += ((p - back).norm_squared() <= r2) as usize;
    }
    if n_front <= n_back {
        candidate.normal
    } else {
        -candidate.normal
    }
}

/// Same rule as [`orient_normal`], answered from a prebuilt index.
pub fn orient_normal_indexed(candidate: &OrientedPoint, index: &BallIndex<'_>, standoff: f64) -> Vector3<f64> {
    let n_front = index.count_within(&(candidate.center + candidate.normal * standoff), standoff);
    let n_back = index.count_within(&(candidate.center - candidate.normal * standoff), standoff);
    if n_front <= n_back {
        candidate.normal
    } else {
        -candidate.normal
    }
}

/// Builds the (u, v, n) frame, taking the generatrix from `up_hint`
/// projected onto the tangent plane.
pub fn build_frame(center: Point3<f64>, normal: Vector3<f64>, up_hint: Vector3<f64>) -> PatchFrame {
    let n = normal.normalize();
    let project = |h: Vector3<f64>| h - n * h.dot(&n);
    let mut v = project(up_hint);
    if v.norm() < DEGENERATE_UP {
        v = project(Vector3::x());
    }
    if v.norm() < DEGENERATE_UP {
        v = project(Vector3::y());
    }
    debug_assert!(v.norm() >= DEGENERATE_UP, "no usable generatrix for normal {n:?}");
    let v = v.normalize();
    let u = v.cross(&n);
    PatchFrame { center, normal: n, tangent: u, generatrix: v }
}

/// True when `p` lies in the closed oriented box of `frame`.
pub fn in_crop_box(frame: &PatchFrame, params: &CropParams, p: &Point3<f64>) -> bool {
    let half = params.side / 2.0;
    let d = p - frame.center;
    d.dot(&frame.tangent).abs() <= half
        && d.dot(&frame.generatrix).abs() <= half
        && d.dot(&frame.normal).abs() <= params.half_thickness
}

pub fn crop_patch(cloud: &PointCloud, frame: &PatchFrame, params: &CropParams) -> Patch {
    let indices =
        cloud.points().iter().enumerate().filter(|(_, p)| in_crop_box(frame, params, p)).map(|(i, _)| i).collect();
    Patch { frame: *frame, params: *params, indices }
}

/// Uniform random `k`-subset, in candidate order, deterministic per seed.
pub fn sample_patches<T: Clone>(candidates: &[T], k: usize, seed: u64) -> Result<Vec<T>, PatchError> {
    if k > candidates.len() {
        return Err(PatchError::TooFewCandidates { requested: k, available: candidates.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, candidates.len(), k).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| candidates[i].clone()).collect())
}
