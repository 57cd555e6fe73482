//! Synthetic running-bond masonry with exact ground truth.
//!
//! A surface is described in coordinates `(s, h, z)`: `s` runs along the
//! courses, `z` is up and `h` is the outward offset from the base surface.
//! For a plane wall `(s, h, z) = (x, y, z)` and the wall faces `+y`. For a
//! cylinder of radius `R` the axis is the line `x = 0, y = −R`, `s` is arc
//! length and `h = r − R`, so the section bulges toward `+y`.
//!
//! Each brick is a box from the mortar floor `h = −recess` up to its face
//! at `h = jitter`; jitter is drawn per brick and clamped to `±recess/2`.
//! The surface is a two-sided sheet: seen from behind, bricks show the back
//! of their face and the mortar floor exists only between bricks.

use nalgebra::{Point3, Vector3};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, Normal, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{boundary_mask, camera_pose, pixel_ray, CameraError, CameraIntrinsics, DepthImage, DepthRange};
use crate::cloud::{CloudError, PointCloud};
use crate::patch::PatchFrame;
use crate::restore::{MaskOperator, RestorationProblem, RestoreError};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid masonry parameter {name} = {value}")]
    Spec { name: &'static str, value: f64 },
    #[error("invalid sampling parameter {name} = {value}")]
    Sampling { name: &'static str, value: f64 },
    #[error("no points survived sampling")]
    NoPoints,
    #[error("no observed pixels after degradation")]
    NoObservations,
    #[error("image is not normalized")]
    NotNormalized,
    #[error(transparent)]
    Cloud(#[from] CloudError),
    #[error(transparent)]
    Camera(#[from] CameraError),
    #[error(transparent)]
    Restore(#[from] RestoreError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SurfaceShape {
    Plane,
    Cylinder { radius: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MasonrySpec {
    pub brick_w: f64,
    pub brick_h: f64,
    pub mortar_gap: f64,
    pub mortar_recess: f64,
    /// Standard deviation of the per-brick face offset.
    pub brick_depth_jitter: f64,
    /// Horizontal shift of odd courses as a fraction of the brick pitch.
    pub bond_offset: f64,
    pub surface: SurfaceShape,
    /// Size along `s` and `z`.
    pub extent: [f64; 2],
}

impl Default for MasonrySpec {
    fn default() -> Self {
        Self {
            brick_w: 0.215,
            brick_h: 0.065,
            mortar_gap: 0.01,
            mortar_recess: 0.008,
            brick_depth_jitter: 0.002,
            bond_offset: 0.5,
            surface: SurfaceShape::Plane,
            extent: [3.0, 2.0],
        }
    }
}

impl MasonrySpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let positive = [
            ("brick_w", self.brick_w),
            ("brick_h", self.brick_h),
            ("mortar_gap", self.mortar_gap),
            ("mortar_recess", self.mortar_recess),
            ("extent[0]", self.extent[0]),
            ("extent[1]", self.extent[1]),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(SynthError::Spec { name, value });
            }
        }
        if !(self.brick_depth_jitter >= 0.0 && self.brick_depth_jitter.is_finite()) {
            return Err(SynthError::Spec { name: "brick_depth_jitter", value: self.brick_depth_jitter });
        }
        if !(0.0..1.0).contains(&self.bond_offset) {
            return Err(SynthError::Spec { name: "bond_offset", value: self.bond_offset });
        }
        if let SurfaceShape::Cylinder { radius } = self.surface {
            if !(radius > 0.0 && radius.is_finite()) || self.extent[0] >= std::f64::consts::PI * radius {
                return Err(SynthError::Spec { name: "radius", value: radius });
            }
        }
        Ok(())
    }

    /// The recess must fit inside the crop slab of half-thickness
    /// `half_thickness`.
    pub fn check_crop(&self, half_thickness: f64) -> Result<(), SynthError> {
        if self.mortar_recess >= half_thickness {
            return Err(SynthError::Spec { name: "mortar_recess", value: self.mortar_recess });
        }
        Ok(())
    }

    fn pitch(&self) -> (f64, f64) {
        (self.brick_w + self.mortar_gap, self.brick_h + self.mortar_gap)
    }
}

/// Lattice cell of a surface location.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Cell {
    Brick { row: i64, col: i64 },
    Mortar,
}

/// A masonry surface with its per-brick offsets fixed by a seed.
#[derive(Debug, Clone, PartialEq)]
pub struct MasonrySurface {
    pub spec: MasonrySpec,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy)]
struct Ray {
    o: Point3<f64>,
    d: Vector3<f64>,
}

impl Ray {
    fn at(&self, t: f64) -> Point3<f64> {
        self.o + self.d * t
    }
}

/// First surface hit of a ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub point: Point3<f64>,
    pub cell: Cell,
}

const EDGE_EPS: f64 = 1e-12;

impl MasonrySurface {
    pub fn new(spec: MasonrySpec, seed: u64) -> Self {
        Self { spec, seed }
    }

    pub fn cell(&self, s: f64, z: f64) -> Cell {
        let (px, pz) = self.spec.pitch();
        let row = (z / pz).floor() as i64;
        let shift = if row.rem_euclid(2) == 1 { self.spec.bond_offset * px } else { 0.0 };
        let col = ((s - shift) / px).floor() as i64;
        let ls = s - shift - col as f64 * px;
        let lz = z - row as f64 * pz;
        if ls < self.spec.brick_w && lz < self.spec.brick_h {
            Cell::Brick { row, col }
        } else {
            Cell::Mortar
        }
    }

    /// `[s0, s1] × [z0, z1]` footprint of a brick.
    pub fn brick_bounds(&self, row: i64, col: i64) -> ([f64; 2], [f64; 2]) {
        let (px, pz) = self.spec.pitch();
        let shift = if row.rem_euclid(2) == 1 { self.spec.bond_offset * px } else { 0.0 };
        let s0 = col as f64 * px + shift;
        let z0 = row as f64 * pz;
        ([s0, s0 + self.spec.brick_w], [z0, z0 + self.spec.brick_h])
    }

    /// Face offset of a brick, deterministic in `(seed, row, col)`.
    pub fn brick_offset(&self, row: i64, col: i64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(((row as i32 as u32 as u64) << 32) | col as i32 as u32 as u64);
        let z: f64 = rng.sample(StandardNormal);
        let lim = 0.5 * self.spec.mortar_recess;
        (z * self.spec.brick_depth_jitter).clamp(-lim, lim)
    }

    pub fn offset(&self, s: f64, z: f64) -> f64 {
        match self.cell(s, z) {
            Cell::Brick { row, col } => self.brick_offset(row, col),
            Cell::Mortar => -self.spec.mortar_recess,
        }
    }

    pub fn in_extent(&self, s: f64, z: f64) -> bool {
        s.abs() <= 0.5 * self.spec.extent[0] && z.abs() <= 0.5 * self.spec.extent[1]
    }

    pub fn embed(&self, s: f64, h: f64, z: f64) -> Point3<f64> {
        match self.spec.surface {
            SurfaceShape::Plane => Point3::new(s, h, z),
            SurfaceShape::Cylinder { radius } => {
                let th = s / radius;
                let r = radius + h;
                Point3::new(r * th.sin(), r * th.cos() - radius, z)
            }
        }
    }

    pub fn coords(&self, p: &Point3<f64>) -> (f64, f64, f64) {
        match self.spec.surface {
            SurfaceShape::Plane => (p.x, p.y, p.z),
            SurfaceShape::Cylinder { radius } => {
                let (x, y) = (p.x, p.y + radius);
                (radius * x.atan2(y), x.hypot(y) - radius, p.z)
            }
        }
    }

    /// Outward unit normal of the base surface at `s`.
    pub fn base_normal(&self, s: f64) -> Vector3<f64> {
        match self.spec.surface {
            SurfaceShape::Plane => Vector3::y(),
            SurfaceShape::Cylinder { radius } => {
                let th = s / radius;
                Vector3::new(th.sin(), th.cos(), 0.0)
            }
        }
    }

    /// Point on the masonry surface (brick face or mortar floor).
    pub fn surface_point(&self, s: f64, z: f64) -> Point3<f64> {
        self.embed(s, self.offset(s, z), z)
    }

    /// Distance along the surface normal between `p` and the surface.
    pub fn residual(&self, p: &Point3<f64>) -> f64 {
        let (s, h, z) = self.coords(p);
        (h - self.offset(s, z)).abs()
    }

    // Smallest positive t where the ray meets the level surface h = level.
    fn hit_level(&self, ray: &Ray, level: f64) -> Option<f64> {
        match self.spec.surface {
            SurfaceShape::Plane => {
                if ray.d.y.abs() < EDGE_EPS {
                    return None;
                }
                Some((level - ray.o.y) / ray.d.y).filter(|&t| t > 0.0)
            }
            SurfaceShape::Cylinder { radius } => {
                let rho = radius + level;
                let (ox, oy) = (ray.o.x, ray.o.y + radius);
                let a = ray.d.x * ray.d.x + ray.d.y * ray.d.y;
                if a < EDGE_EPS {
                    return None;
                }
                let b = 2.0 * (ox * ray.d.x + oy * ray.d.y);
                let c = ox * ox + oy * oy - rho * rho;
                let disc = b * b - 4.0 * a * c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                [(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)].into_iter().find(|&t| t > 0.0)
            }
        }
    }

    // Positive t where the ray meets the side surface s = const.
    fn hit_side(&self, ray: &Ray, s: f64) -> Option<f64> {
        let (n, q) = match self.spec.surface {
            SurfaceShape::Plane => (Vector3::x(), Point3::new(s, 0.0, 0.0)),
            SurfaceShape::Cylinder { radius } => {
                let th = s / radius;
                (Vector3::new(th.cos(), -th.sin(), 0.0), Point3::new(0.0, -radius, 0.0))
            }
        };
        let den = n.dot(&ray.d);
        if den.abs() < EDGE_EPS {
            return None;
        }
        Some(n.dot(&(q - ray.o)) / den).filter(|&t| t > 0.0)
    }

    fn hit_course(&self, ray: &Ray, z: f64) -> Option<f64> {
        if ray.d.z.abs() < EDGE_EPS {
            return None;
        }
        Some((z - ray.o.z) / ray.d.z).filter(|&t| t > 0.0)
    }

    fn hit_brick(&self, ray: &Ray, row: i64, col: i64) -> Option<f64> {
        let ([s0, s1], [z0, z1]) = self.brick_bounds(row, col);
        let (h0, h1) = (-self.spec.mortar_recess, self.brick_offset(row, col));
        let tol = 1e-9;
        let inside = |t: f64, skip: usize| {
            let (s, h, z) = self.coords(&ray.at(t));
            (skip == 0 || (s0 - tol..=s1 + tol).contains(&s))
                && (skip == 1 || (h0 - tol..=h1 + tol).contains(&h))
                && (skip == 2 || (z0 - tol..=z1 + tol).contains(&z))
        };
        let candidates = [
            self.hit_level(ray, h1).filter(|&t| inside(t, 1)),
            self.hit_side(ray, s0).filter(|&t| inside(t, 0)),
            self.hit_side(ray, s1).filter(|&t| inside(t, 0)),
            self.hit_course(ray, z0).filter(|&t| inside(t, 2)),
            self.hit_course(ray, z1).filter(|&t| inside(t, 2)),
        ];
        candidates.into_iter().flatten().min_by(f64::total_cmp)
    }

    /// Nearest intersection with a brick box or the mortar floor between
    /// bricks, from either side. Hits outside the surface extent count as
    /// misses.
    pub fn intersect(&self, origin: Point3<f64>, dir: Vector3<f64>) -> Option<Hit> {
        let ray = Ray { o: origin, d: dir };
        let floor = -self.spec.mortar_recess;
        let t_floor = self.hit_level(&ray, floor)?;
        let t_top = self.hit_level(&ray, 0.5 * self.spec.mortar_recess).unwrap_or(0.0);

        let (px, pz) = self.spec.pitch();
        let (sa, _, za) = self.coords(&ray.at(t_top));
        let (sb, _, zb) = self.coords(&ray.at(t_floor));
        let (r0, r1) = ((za.min(zb) / pz).floor() as i64 - 1, (za.max(zb) / pz).floor() as i64 + 1);
        let (c0, c1) = ((sa.min(sb) / px).floor() as i64 - 2, (sa.max(sb) / px).floor() as i64 + 1);

        let floor_point = ray.at(t_floor);
        let (fs, _, fz) = self.coords(&floor_point);
        let mut best = (self.cell(fs, fz) == Cell::Mortar).then_some((t_floor, Cell::Mortar));
        for row in r0..=r1 {
            for col in c0..=c1 {
                if let Some(t) = self.hit_brick(&ray, row, col) {
                    if best.is_none_or(|(bt, _)| t < bt) {
                        best = Some((t, Cell::Brick { row, col }));
                    }
                }
            }
        }
        let (t, cell) = best?;
        let point = ray.at(t);
        let (s, _, z) = self.coords(&point);
        self.in_extent(s, z).then_some(Hit { t, point, cell })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingParams {
    /// Expected points per square metre of surface.
    pub density: f64,
    /// Isotropic Gaussian noise std in metres.
    pub noise: f64,
    /// Fraction of points removed.
    pub dropout: f64,
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self { density: 1.0e5, noise: 0.0, dropout: 0.0 }
    }
}

/// Samples a point cloud on the masonry surface.
pub fn synth_wall(
    spec: &MasonrySpec,
    params: SamplingParams,
    seed: u64,
) -> Result<(PointCloud, MasonrySurface), SynthError> {
    spec.validate()?;
    if !(params.density > 0.0 && params.density.is_finite()) {
        return Err(SynthError::Sampling { name: "density", value: params.density });
    }
    if !(params.noise >= 0.0 && params.noise.is_finite()) {
        return Err(SynthError::Sampling { name: "noise", value: params.noise });
    }
    if !(0.0..1.0).contains(&params.dropout) {
        return Err(SynthError::Sampling { name: "dropout", value: params.dropout });
    }
    let surface = MasonrySurface::new(*spec, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let area = spec.extent[0] * spec.extent[1];
    let poisson = Poisson::new(params.density * area)
        .map_err(|_| SynthError::Sampling { name: "density", value: params.density })?;
    let keep = Bernoulli::new(1.0 - params.dropout).expect("dropout checked");
    let noise = Normal::new(0.0, params.noise).expect("noise checked");
    let [ex, ez] = spec.extent;

    let count = poisson.sample(&mut rng) as usize;
    let mut points = Vec::with_capacity(count);
    for _ in 0..count {
        let s = (rng.random::<f64>() - 0.5) * ex;
        let z = (rng.random::<f64>() - 0.5) * ez;
        let mut p = surface.surface_point(s, z);
        if params.noise > 0.0 {
            p += Vector3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng));
        }
        if keep.sample(&mut rng) {
            points.push(p);
        }
    }
    if points.is_empty() {
        return Err(SynthError::NoPoints);
    }
    Ok((PointCloud::new(points)?, surface))
}

/// Per-brick instance of a ground-truth image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrickInstance {
    /// Label value in [`GroundTruth::labels`], starting at 1.
    pub id: u32,
    pub row: i64,
    pub col: i64,
    pub pixels: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// Metric camera depth, 0 where `valid` is false.
    pub depth: Array2<f64>,
    pub valid: Array2<bool>,
    /// 0 for mortar or missing pixels, otherwise a brick id.
    pub labels: Array2<u32>,
    pub instances: Vec<BrickInstance>,
}

impl GroundTruth {
    pub fn brick_count(&self) -> usize {
        self.instances.len()
    }

    pub fn instance_mask(&self, id: u32) -> Array2<bool> {
        self.labels.mapv(|l| l == id)
    }

    pub fn instance_masks(&self) -> Vec<Array2<bool>> {
        self.instances.iter().map(|b| self.instance_mask(b.id)).collect()
    }

    /// Depth normalized by `range`, 0 where invalid.
    pub fn normalized(&self, range: &DepthRange) -> Array2<f64> {
        ndarray::Zip::from(&self.depth)
            .and(&self.valid)
            .map_collect(|&z, &ok| if ok { range.normalize(z) } else { 0.0 })
    }
}

/// Dense depth and brick labels seen by the patch camera, by exact ray
/// casting through every pixel centre.
pub fn synth_ground_truth(
    surface: &MasonrySurface,
    frame: &PatchFrame,
    intr: &CameraIntrinsics,
) -> Result<GroundTruth, SynthError> {
    intr.validate()?;
    let pose = camera_pose(frame, intr.standoff);
    let shape = intr.shape();
    let mut depth = Array2::zeros(shape);
    let mut valid = Array2::from_elem(shape, false);
    let mut labels = Array2::zeros(shape);
    let mut instances: Vec<BrickInstance> = Vec::new();
    let mut ids = std::collections::HashMap::new();

    for ((v, u), z) in depth.indexed_iter_mut() {
        let dir = pixel_ray(&pose, intr, u as f64, v as f64);
        let Some(hit) = surface.intersect(pose.origin, dir) else { continue };
        *z = hit.t;
        valid[[v, u]] = true;
        if let Cell::Brick { row, col } = hit.cell {
            let id = *ids.entry((row, col)).or_insert_with(|| {
                instances.push(BrickInstance { id: instances.len() as u32 + 1, row, col, pixels: 0 });
                instances.len() as u32
            });
            instances[id as usize - 1].pixels += 1;
            labels[[v, u]] = id;
        }
    }
    Ok(GroundTruth { depth, valid, labels, instances })
}

/// Simulated sparse, noisy observation of a normalized depth image.
///
/// Each valid pixel is kept with probability `keep_fraction`; kept values
/// get Gaussian noise of std `sigma_add` and are clamped to `[0, 1]`. The
/// boundary mask is taken from the full validity grid of `img`.
pub fn degrade(
    img: &DepthImage,
    keep_fraction: f64,
    sigma_add: f64,
    seed: u64,
) -> Result<RestorationProblem, SynthError> {
    if img.range.is_none() {
        return Err(SynthError::NotNormalized);
    }
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(SynthError::Sampling { name: "keep_fraction", value: keep_fraction });
    }
    if !(sigma_add >= 0.0 && sigma_add.is_finite()) {
        return Err(SynthError::Sampling { name: "sigma_add", value: sigma_add });
    }
    let mask = boundary_mask(img)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    let keep = Bernoulli::new(keep_fraction).expect("keep_fraction checked");
    let shape = img.values.dim();
    let mut omega = Array2::from_elem(shape, false);
    let mut y = Array2::zeros(shape);
    for ((idx, &ok), &value) in img.valid.indexed_iter().zip(img.values.iter()) {
        if ok && keep.sample(&mut rng) {
            let n: f64 = rng.sample(StandardNormal);
            omega[idx] = true;
            y[idx] = (value + sigma_add * n).clamp(0.0, 1.0);
        }
    }
    if !omega.iter().any(|&o| o) {
        return Err(SynthError::NoObservations);
    }
    Ok(RestorationProblem::new(y, MaskOperator::new(omega), mask, sigma_add)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patch::build_frame;

    fn flat() -> MasonrySpec {
        MasonrySpec { mortar_recess: 1e-9, brick_depth_jitter: 0.0, ..Default::default() }
    }

    #[test]
    fn lattice_running_bond() {
        let s = MasonrySurface::new(MasonrySpec::default(), 0);
        assert_eq!(s.cell(0.1, 0.03), Cell::Brick { row: 0, col: 0 });
        assert_eq!(s.cell(0.22, 0.03), Cell::Mortar);
        assert_eq!(s.cell(0.1, 0.07), Cell::Mortar);
        // odd course shifted by half a pitch
        assert_eq!(s.cell(0.1, 0.1), Cell::Brick { row: 1, col: -1 });
        assert_eq!(s.cell(0.2, 0.1), Cell::Brick { row: 1, col: 0 });
        assert_eq!(s.cell(-0.1, -0.03), Cell::Brick { row: -1, col: -1 });
    }

    #[test]
    fn jitter_is_bounded_and_seeded() {
        let spec = MasonrySpec { brick_depth_jitter: 1.0, ..Default::default() };
        let a = MasonrySurface::new(spec, 5);
        for r in -3..3 {
            for c in -3..3 {
                assert!(a.brick_offset(r, c).abs() <= 0.004);
                assert_eq!(a.brick_offset(r, c), a.brick_offset(r, c));
            }
        }
        let b = MasonrySurface::new(MasonrySpec::default(), 5);
        let c = MasonrySurface::new(MasonrySpec::default(), 6);
        assert_ne!(b.brick_offset(0, 0), c.brick_offset(0, 0));
    }

    #[test]
    fn noiseless_points_on_surface() {
        for surface in [SurfaceShape::Plane, SurfaceShape::Cylinder { radius: 2.0 }] {
            let spec = MasonrySpec { surface, extent: [1.0, 1.0], ..Default::default() };
            let (cloud, surf) = synth_wall(&spec, SamplingParams { density: 2e3, ..Default::default() }, 1).unwrap();
            assert!(cloud.points().iter().all(|p| surf.residual(p) < 1e-12));
        }
    }

    #[test]
    fn plane_ground_truth_is_constant_depth() {
        let surf = MasonrySurface::new(flat(), 0);
        let frame = build_frame(Point3::new(0.05, 0.0, 0.1), Vector3::y(), Vector3::z());
        let intr = CameraIntrinsics::default();
        let gt = synth_ground_truth(&surf, &frame, &intr).unwrap();
        assert!(gt.valid.iter().all(|&v| v));
        assert!(gt.depth.iter().all(|&z| (z - 0.8).abs() < 1e-6));
    }

    #[test]
    fn mortar_is_deeper_by_recess() {
        let spec = MasonrySpec { brick_depth_jitter: 0.0, ..Default::default() };
        let surf = MasonrySurface::new(spec, 0);
        let frame = build_frame(Point3::new(0.1075, 0.0, 0.0325), Vector3::y(), Vector3::z());
        let gt = synth_ground_truth(&surf, &frame, &CameraIntrinsics::default()).unwrap();
        assert!(gt.labels[[128, 128]] > 0);
        assert!((gt.depth[[128, 128]] - 0.8).abs() < 1e-12);
        // column through the vertical joint at s = 0.215..0.225: u = 128 + 0.1125 * 500
        let (v, u) = (128, 128 + 55);
        assert_eq!(gt.labels[[v, u]], 0);
        assert!((gt.depth[[v, u]] - 0.808).abs() < 1e-9, "{}", gt.depth[[v, u]]);
    }

    #[test]
    fn back_view_sees_mortar_first() {
        let spec = MasonrySpec { brick_depth_jitter: 0.0, ..Default::default() };
        let surf = MasonrySurface::new(spec, 0);
        let frame = build_frame(Point3::new(0.1075, 0.0, 0.0325), -Vector3::y(), Vector3::z());
        let gt = synth_ground_truth(&surf, &frame, &CameraIntrinsics::default()).unwrap();
        assert!(gt.labels[[128, 128]] > 0);
        assert!((gt.depth[[128, 128]] - 0.8).abs() < 1e-12);
        // seen from behind the joint is nearer by the recess
        let (v, u) = (128, 128 - 55);
        assert_eq!(gt.labels[[v, u]], 0);
        assert!((gt.depth[[v, u]] - 0.792).abs() < 1e-9, "{}", gt.depth[[v, u]]);
    }

    #[test]
    fn instances_partition_bricks() {
        let surf = MasonrySurface::new(MasonrySpec::default(), 3);
        let frame = build_frame(Point3::new(0.3, 0.0, 0.2), Vector3::y(), Vector3::z());
        let gt = synth_ground_truth(&surf, &frame, &CameraIntrinsics::default()).unwrap();
        assert!(gt.brick_count() > 10);
        let total: usize = gt.instances.iter().map(|b| b.pixels).sum();
        assert_eq!(total, gt.labels.iter().filter(|&&l| l > 0).count());
        for b in &gt.instances {
            let ([s0, s1], [z0, z1]) = surf.brick_bounds(b.row, b.col);
            assert!(s1 - s0 > 0.2 && z1 - z0 > 0.06);
        }
    }

    #[test]
    fn validation() {
        assert!(MasonrySpec::default().validate().is_ok());
        assert!(MasonrySpec::default().check_crop(0.25).is_ok());
        assert!(MasonrySpec { mortar_recess: 0.3, ..Default::default() }.check_crop(0.25).is_err());
        assert!(MasonrySpec { brick_w: 0.0, ..Default::default() }.validate().is_err());
        let arch = MasonrySpec { surface: SurfaceShape::Cylinder { radius: 0.5 }, ..Default::default() };
        assert!(arch.validate().is_err());
        let p = SamplingParams { dropout: 1.0, ..Default::default() };
        assert!(synth_wall(&MasonrySpec::default(), p, 0).is_err());
    }
}
