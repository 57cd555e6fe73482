//! On-disk layout shared by the stages.
//!
//! A patch directory holds `patches.jsonl` plus, per patch,
//! `<id>.depth.pfm` (normalized depth, 0 where unobserved),
//! `<id>.valid.pgm` (observation mask) and `<id>.mask.pgm` (boundary mask).
//! Ground truth lives in `<gt>/<id>/{depth.pfm, valid.pgm, labels.png}` and
//! restored output in `<id>.restored.pfm`, `<id>.mask.pgm`,
//! `<id>.report.json` and `restored.jsonl`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use depthnull::camera::{bounding_mask, CameraIntrinsics, DepthImage, DepthRange};
use depthnull::imageio;
use depthnull::patch::PatchFrame;
use depthnull::restore::{MaskOperator, RestorationProblem};
use ndarray::Array2;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub const PATCH_INDEX: &str = "patches.jsonl";
pub const RESTORED_INDEX: &str = "restored.jsonl";
pub const GT_DEPTH: &str = "depth.pfm";
pub const GT_VALID: &str = "valid.pgm";
pub const GT_LABELS: &str = "labels.png";

pub fn patch_id(index: usize) -> String {
    format!("patch_{index:05}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradeRecord {
    pub keep_fraction: f64,
    pub sigma_add: f64,
    pub seed: u64,
    pub observed: usize,
}

/// One line of `patches.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchRecord {
    pub id: String,
    pub index: usize,
    pub frame: PatchFrame,
    pub s: f64,
    pub t: f64,
    /// Cloud points inside the crop box.
    pub members: usize,
    /// Patch sampling seed.
    pub seed: u64,
    pub range: DepthRange,
    pub intrinsics: CameraIntrinsics,
    pub valid_pixels: usize,
    pub degrade: Option<DegradeRecord>,
}

/// One line of `restored.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestoredRecord {
    pub id: String,
    pub ok: bool,
    pub error: Option<String>,
    pub residual: Option<f64>,
    pub elapsed_secs: Option<f64>,
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut out = Vec::new();
    for row in rows {
        serde_json::to_writer(&mut out, row)?;
        out.push(b'\n');
    }
    fs::File::create(path).and_then(|mut f| f.write_all(&out)).with_context(|| format!("writing {}", path.display()))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{}:{}", path.display(), i + 1)))
        .collect()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn to_f32(grid: &Array2<f64>) -> Array2<f32> {
    grid.mapv(|v| v as f32)
}

pub fn read_grid(path: &Path) -> Result<Array2<f64>> {
    let g = imageio::read_pfm(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(g.mapv(f64::from))
}

pub fn write_grid(path: &Path, grid: &Array2<f64>) -> Result<()> {
    imageio::write_pfm(path, &to_f32(grid)).with_context(|| format!("writing {}", path.display()))
}

pub fn read_mask(path: &Path) -> Result<Array2<bool>> {
    imageio::read_mask(path).with_context(|| format!("reading {}", path.display()))
}

pub fn write_mask(path: &Path, mask: &Array2<bool>) -> Result<()> {
    imageio::write_mask(path, mask).with_context(|| format!("writing {}", path.display()))
}

pub struct PatchDir {
    pub root: PathBuf,
}

impl PatchDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn file(&self, id: &str, suffix: &str) -> PathBuf {
        self.root.join(format!("{id}.{suffix}"))
    }

    pub fn records(&self) -> Result<Vec<PatchRecord>> {
        let path = self.root.join(PATCH_INDEX);
        if !path.is_file() {
            bail!("{} not found; run `project` first", path.display());
        }
        read_jsonl(&path)
    }

    /// Writes the observation of one patch. `observed` is the observation
    /// mask, `mask` the boundary mask.
    pub fn write_patch(&self, id: &str, y: &Array2<f64>, observed: &Array2<bool>, mask: &Array2<bool>) -> Result<()> {
        write_grid(&self.file(id, "depth.pfm"), y)?;
        write_mask(&self.file(id, "valid.pgm"), observed)?;
        write_mask(&self.file(id, "mask.pgm"), mask)
    }

    /// Restoration problem and image metadata of a stored patch.
    pub fn load(&self, rec: &PatchRecord, sigma_y: f64) -> Result<(RestorationProblem, DepthImage)> {
        let values = read_grid(&self.file(&rec.id, "depth.pfm"))?;
        let omega = read_mask(&self.file(&rec.id, "valid.pgm"))?;
        let grid = read_mask(&self.file(&rec.id, "mask.pgm"))?;
        let expect = rec.intrinsics.shape();
        for (what, dim) in [("depth", values.dim()), ("valid", omega.dim()), ("mask", grid.dim())] {
            if dim != expect {
                bail!("{}: {what} image is {dim:?}, manifest says {expect:?}", rec.id);
            }
        }
        let mask = bounding_mask(&grid).with_context(|| format!("{}: boundary mask", rec.id))?;
        if mask.grid != grid {
            bail!("{}: boundary mask is not a rectangle", rec.id);
        }
        let y_tilde = ndarray::Zip::from(&values).and(&omega).map_collect(|&v, &o| if o { v } else { 0.0 });
        let problem = RestorationProblem::new(y_tilde, MaskOperator::new(omega.clone()), mask, sigma_y)
            .with_context(|| rec.id.clone())?;
        let image =
            DepthImage { values, valid: omega, range: Some(rec.range), frame: rec.frame, intrinsics: rec.intrinsics };
        Ok((problem, image))
    }
}

/// Ground truth of one patch in normalized depth.
pub struct GtPatch {
    pub depth: Array2<f64>,
    pub valid: Array2<bool>,
}

pub struct GtDir {
    pub root: PathBuf,
}

impl GtDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn dir(&self, id: &str) -> PathBuf {
        self.root.join(id)
    }

    pub fn write(&self, id: &str, depth: &Array2<f64>, valid: &Array2<bool>, labels: &Array2<u32>) -> Result<()> {
        let dir = self.dir(id);
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        write_grid(&dir.join(GT_DEPTH), depth)?;
        write_mask(&dir.join(GT_VALID), valid)?;
        imageio::write_label_png(&dir.join(GT_LABELS), labels).with_context(|| format!("writing labels for {id}"))
    }

    pub fn read(&self, id: &str) -> Result<GtPatch> {
        let dir = self.dir(id);
        Ok(GtPatch { depth: read_grid(&dir.join(GT_DEPTH))?, valid: read_mask(&dir.join(GT_VALID))? })
    }

    /// Patch ids with a ground-truth depth file, sorted.
    pub fn ids(&self) -> Result<Vec<String>> {
        subdirs_with(&self.root, GT_DEPTH)
    }
}

/// Sorted names of subdirectories of `root` that contain `file`.
pub fn subdirs_with(root: &Path, file: &str) -> Result<Vec<String>> {
    let mut ids = Vec::new();
    for entry in fs::read_dir(root).with_context(|| format!("reading {}", root.display()))? {
        let entry = entry?;
        if entry.path().join(file).is_file() {
            ids.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    ids.sort();
    Ok(ids)
}

/// Ids of restored patches: from `restored.jsonl` when present, otherwise
/// from the `*.restored.pfm` files in `dir`.
pub fn restored_ids(dir: &Path) -> Result<Vec<RestoredRecord>> {
    let index = dir.join(RESTORED_INDEX);
    if index.is_file() {
        return read_jsonl(&index);
    }
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let name = entry?.file_name().to_string_lossy().into_owned();
        if let Some(id) = name.strip_suffix(".restored.pfm") {
            out.push(RestoredRecord { id: id.to_owned(), ok: true, error: None, residual: None, elapsed_secs: None });
        }
    }
    out.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(out)
}
