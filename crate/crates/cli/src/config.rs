//! Run configuration. Every key has a default; a TOML file may override any
//! subset and command-line flags override the file.

use depthnull::camera::CameraIntrinsics;
use depthnull::cloud::VoxelGridParams;
use depthnull::diffusion::ScheduleConfig;
use depthnull::eval::Aggregation;
use depthnull::patch::CropParams;
use depthnull::pipeline::ExtractParams;
use depthnull::restore::{Mode, NoiseRule, DEFAULT_SIGMA_Y};
use depthnull::synth::{MasonrySpec, SamplingParams, SurfaceShape};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub patch: PatchSection,
    pub camera: CameraSection,
    pub diffusion: DiffusionSection,
    pub restore: RestoreSection,
    pub denoiser: DenoiserSection,
    pub synth: SynthSection,
    pub eval: EvalSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PatchSection {
    pub s: f64,
    pub t: f64,
    pub voxel_size: f64,
    pub ball_radius: f64,
    pub count: usize,
    pub up_hint: [f64; 3],
}

impl Default for PatchSection {
    fn default() -> Self {
        let c = CropParams::default();
        Self {
            s: c.side,
            t: c.half_thickness,
            voxel_size: VoxelGridParams::default().voxel_size,
            ball_radius: c.ball_radius,
            count: 20,
            up_hint: [0.0, 0.0, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraSection {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    #[serde(rename = "H")]
    pub height: usize,
    #[serde(rename = "W")]
    pub width: usize,
    pub d: f64,
}

impl Default for CameraSection {
    fn default() -> Self {
        let c = CameraIntrinsics::default();
        Self { fx: c.fx, fy: c.fy, cx: c.cx, cy: c.cy, height: c.height, width: c.width, d: c.standoff }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiffusionSection {
    #[serde(rename = "T")]
    pub train_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    #[serde(rename = "K")]
    pub sampling_steps: usize,
    pub eta: f64,
    pub seed: u64,
}

impl Default for DiffusionSection {
    fn default() -> Self {
        let s = ScheduleConfig::default();
        Self {
            train_steps: s.train_steps,
            beta_start: s.beta_start,
            beta_end: s.beta_end,
            sampling_steps: s.sampling_steps,
            eta: s.eta,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RestoreSection {
    pub sigma_y: f64,
    pub mode: Mode,
    pub noise_rule: NoiseRule,
    /// Fraction of valid pixels kept when the pipeline degrades patches.
    pub keep_fraction: f64,
}

impl Default for RestoreSection {
    fn default() -> Self {
        Self { sigma_y: DEFAULT_SIGMA_Y, mode: Mode::Masked, noise_rule: NoiseRule::Absorb, keep_fraction: 0.6 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum DenoiserKind {
    Zero,
    /// Analytic prior fitted to each patch's observed values.
    Gaussian,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiserSection {
    pub kind: DenoiserKind,
    pub endpoint: String,
    pub timeout_secs: f64,
}

impl Default for DenoiserSection {
    fn default() -> Self {
        Self { kind: DenoiserKind::Gaussian, endpoint: String::new(), timeout_secs: 120.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub brick_w: f64,
    pub brick_h: f64,
    pub mortar_gap: f64,
    pub mortar_recess: f64,
    pub brick_depth_jitter: f64,
    pub bond_offset: f64,
    /// "plane" or "cylinder".
    pub surface: String,
    pub radius: f64,
    pub extent: [f64; 2],
    pub density: f64,
    pub noise: f64,
    pub dropout: f64,
}

impl Default for SynthSection {
    fn default() -> Self {
        let m = MasonrySpec::default();
        Self {
            brick_w: m.brick_w,
            brick_h: m.brick_h,
            mortar_gap: m.mortar_gap,
            mortar_recess: m.mortar_recess,
            brick_depth_jitter: m.brick_depth_jitter,
            bond_offset: m.bond_offset,
            surface: "plane".into(),
            radius: 3.0,
            extent: m.extent,
            density: SamplingParams::default().density,
            noise: 0.0,
            dropout: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub aggregation: Aggregation,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.crop().validate()?;
        self.intrinsics().validate()?;
        depthnull::diffusion::build_schedule(self.schedule())?;
        let spec = self.masonry()?;
        spec.validate()?;
        spec.check_crop(self.patch.t)?;
        anyhow::ensure!(self.patch.voxel_size > 0.0, "patch.voxel_size must be positive");
        anyhow::ensure!(self.patch.count > 0, "patch.count must be positive");
        anyhow::ensure!(
            self.restore.sigma_y >= 0.0 && self.restore.sigma_y.is_finite(),
            "restore.sigma_y must be >= 0"
        );
        anyhow::ensure!(
            self.restore.keep_fraction > 0.0 && self.restore.keep_fraction <= 1.0,
            "restore.keep_fraction must lie in (0, 1]"
        );
        anyhow::ensure!(self.denoiser.timeout_secs > 0.0, "denoiser.timeout_secs must be positive");
        if self.denoiser.kind == DenoiserKind::Remote {
            self.endpoint()?;
        }
        Ok(())
    }

    pub fn crop(&self) -> CropParams {
        CropParams { side: self.patch.s, half_thickness: self.patch.t, ball_radius: self.patch.ball_radius }
    }

    pub fn intrinsics(&self) -> CameraIntrinsics {
        let c = &self.camera;
        CameraIntrinsics { fx: c.fx, fy: c.fy, cx: c.cx, cy: c.cy, height: c.height, width: c.width, standoff: c.d }
    }

    pub fn schedule(&self) -> ScheduleConfig {
        let d = &self.diffusion;
        ScheduleConfig {
            train_steps: d.train_steps,
            beta_start: d.beta_start,
            beta_end: d.beta_end,
            sampling_steps: d.sampling_steps,
            eta: d.eta,
        }
    }

    pub fn extract(&self, seed: u64) -> ExtractParams {
        ExtractParams {
            voxel: VoxelGridParams { voxel_size: self.patch.voxel_size },
            crop: self.crop(),
            intrinsics: self.intrinsics(),
            up_hint: self.patch.up_hint,
            count: self.patch.count,
            seed,
        }
    }

    pub fn masonry(&self) -> anyhow::Result<MasonrySpec> {
        let s = &self.synth;
        let surface = match s.surface.as_str() {
            "plane" => SurfaceShape::Plane,
            "cylinder" => SurfaceShape::Cylinder { radius: s.radius },
            other => anyhow::bail!("synth.surface must be \"plane\" or \"cylinder\", got {other:?}"),
        };
        Ok(MasonrySpec {
            brick_w: s.brick_w,
            brick_h: s.brick_h,
            mortar_gap: s.mortar_gap,
            mortar_recess: s.mortar_recess,
            brick_depth_jitter: s.brick_depth_jitter,
            bond_offset: s.bond_offset,
            surface,
            extent: s.extent,
        })
    }

    pub fn sampling(&self) -> SamplingParams {
        SamplingParams { density: self.synth.density, noise: self.synth.noise, dropout: self.synth.dropout }
    }

    pub fn endpoint(&self) -> anyhow::Result<depthnull::wire::Endpoint> {
        anyhow::ensure!(!self.denoiser.endpoint.is_empty(), "denoiser.endpoint is required for a remote denoiser");
        Ok(self.denoiser.endpoint.parse()?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical TOML rendering.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }
}
