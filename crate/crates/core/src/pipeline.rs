//! Cloud-to-depth-image patch extraction shared by the command line and the
//! end-to-end tests.

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{normalize_depth, render_patch, CameraError, CameraIntrinsics, DepthImage};
use crate::cloud::{voxel_downsample, CloudError, PointCloud, VoxelGridParams};
use crate::patch::{
    build_frame, crop_patch, estimate_normals, orient_normal_indexed, sample_patches, BallIndex, CropParams, Patch,
    PatchError, PatchFrame,
};

#[derive(Debug, Error)]
pub enum ExtractError {
    #[error(transparent)]
    Cloud(#[from] CloudError),
    #[error(transparent)]
    Patch(#[from] PatchError),
    #[error(transparent)]
    Camera(#[from] CameraError),
    #[error("no patch centre has enough neighbours for a normal")]
    NoCandidates,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtractParams {
    pub voxel: VoxelGridParams,
    pub crop: CropParams,
    pub intrinsics: CameraIntrinsics,
    pub up_hint: [f64; 3],
    /// Number of patches to sample; capped at the number of candidates.
    pub count: usize,
    pub seed: u64,
}

impl Default for ExtractParams {
    fn default() -> Self {
        Self {
            voxel: VoxelGridParams::default(),
            crop: CropParams::default(),
            intrinsics: CameraIntrinsics::default(),
            up_hint: [0.0, 0.0, 1.0],
            count: 20,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidates {
    pub frames: Vec<PatchFrame>,
    /// Downsampled points without enough neighbours for a normal.
    pub dropped: usize,
}

/// One oriented frame per downsampled point with a usable normal.
pub fn patch_candidates(cloud: &PointCloud, params: &ExtractParams) -> Result<Candidates, ExtractError> {
    params.crop.validate()?;
    let down = voxel_downsample(cloud, params.voxel)?;
    let est = estimate_normals(&down, params.crop.ball_radius)?;
    let standoff = params.intrinsics.standoff;
    let index = BallIndex::new(cloud.points(), standoff);
    let up = Vector3::from(params.up_hint);
    let frames =
        est.normals.par_iter().map(|c| build_frame(c.center, orient_normal_indexed(c, &index, standoff), up)).collect();
    Ok(Candidates { frames, dropped: est.dropped })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractedPatch {
    /// Position in the sampled sequence; stable across stages.
    pub id: usize,
    pub patch: Patch,
    /// Normalized depth image.
    pub image: DepthImage,
}

/// Patch index paired with its extraction outcome.
pub type PatchOutcome = (usize, Result<ExtractedPatch, ExtractError>);

/// Samples patch frames, crops and renders each. Per-patch failures (an
/// empty crop or projection) are returned alongside the successes.
pub fn extract_patches(cloud: &PointCloud, params: &ExtractParams) -> Result<Vec<PatchOutcome>, ExtractError> {
    params.intrinsics.validate()?;
    let cands = patch_candidates(cloud, params)?;
    if cands.frames.is_empty() {
        return Err(ExtractError::NoCandidates);
    }
    let k = params.count.min(cands.frames.len());
    let frames = sample_patches(&cands.frames, k, params.seed)?;
    Ok(frames.into_par_iter().enumerate().map(|(id, frame)| (id, render_one(cloud, id, frame, params))).collect())
}

fn render_one(
    cloud: &PointCloud,
    id: usize,
    frame: PatchFrame,
    params: &ExtractParams,
) -> Result<ExtractedPatch, ExtractError> {
    let patch = crop_patch(cloud, &frame, &params.crop);
    let metric = render_patch(cloud, &patch, &params.intrinsics)?;
    let image = normalize_depth(&metric)?;
    Ok(ExtractedPatch { id, patch, image })
}
