//! Restoration and segmentation metrics.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array2, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imageio::{self, ImageIoError};
use crate::restore::RestorationProblem;

/// Bricks at or below this IoU are left out of overlays. Metrics never use it.
pub const DISPLAY_IOU_THRESHOLD: f64 = 0.3;

/// Name of the instance index inside a mask directory.
pub const MASK_INDEX: &str = "index.txt";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("dimension mismatch: {0:?} vs {1:?}")]
    Dim((usize, usize), (usize, usize)),
    #[error("instance {0} has no pixels")]
    EmptyInstance(u32),
    #[error("no annotated bricks in any patch")]
    NoBricks,
    #[error("no ground-truth instances to prompt from")]
    NoInstances,
    #[error("no pixel lies outside the annotated instances")]
    NoBackground,
    #[error("evaluation region is empty")]
    EmptyRegion,
    #[error("malformed mask index line {line}: {msg}")]
    Index { line: usize, msg: String },
    #[error(transparent)]
    Image(#[from] ImageIoError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceMask {
    pub id: u32,
    pub grid: Array2<bool>,
}

impl InstanceMask {
    pub fn new(id: u32, grid: Array2<bool>) -> Result<Self, EvalError> {
        if !grid.iter().any(|&g| g) {
            return Err(EvalError::EmptyInstance(id));
        }
        Ok(Self { id, grid })
    }

    pub fn area(&self) -> usize {
        self.grid.iter().filter(|&&g| g).count()
    }
}

pub fn iou(gt: &InstanceMask, pred: &InstanceMask) -> Result<f64, EvalError> {
    if gt.grid.dim() != pred.grid.dim() {
        return Err(EvalError::Dim(gt.grid.dim(), pred.grid.dim()));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    Zip::from(&gt.grid).and(&pred.grid).for_each(|&a, &b| {
        inter += (a && b) as usize;
        union += (a || b) as usize;
    });
    Ok(if union == 0 { 0.0 } else { inter as f64 / union as f64 })
}

/// IoU of every ground-truth brick against the prediction with the same id;
/// a brick without a prediction scores 0.
pub fn patch_ious(gt: &[InstanceMask], pred: &[InstanceMask]) -> Result<Vec<f64>, EvalError> {
    let by_id: BTreeMap<u32, &InstanceMask> = pred.iter().map(|p| (p.id, p)).collect();
    gt.iter()
        .map(|g| match by_id.get(&g.id) {
            Some(p) => iou(g, p),
            None => {
                if let Some(p) = pred.first() {
                    if p.grid.dim() != g.grid.dim() {
                        return Err(EvalError::Dim(g.grid.dim(), p.grid.dim()));
                    }
                }
                Ok(0.0)
            }
        })
        .collect()
}

/// How per-brick IoUs are combined across patches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Mean within each patch, then unweighted mean over patches.
    #[default]
    PerPatch,
    /// Mean over all bricks of all patches.
    GlobalPool,
}

/// Patches without bricks are skipped.
pub fn miou(per_patch: &[Vec<f64>], aggregation: Aggregation) -> Result<f64, EvalError> {
    let nonempty: Vec<&Vec<f64>> = per_patch.iter().filter(|p| !p.is_empty()).collect();
    if nonempty.is_empty() {
        return Err(EvalError::NoBricks);
    }
    Ok(match aggregation {
        Aggregation::PerPatch => {
            nonempty.iter().map(|p| p.iter().sum::<f64>() / p.len() as f64).sum::<f64>() / nonempty.len() as f64
        }
        Aggregation::GlobalPool => {
            let n: usize = nonempty.iter().map(|p| p.len()).sum();
            nonempty.iter().flat_map(|p| p.iter()).sum::<f64>() / n as f64
        }
    })
}

/// Indices of bricks shown in overlays.
pub fn displayed(ious: &[f64]) -> Vec<usize> {
    ious.iter().enumerate().filter(|(_, &v)| v > DISPLAY_IOU_THRESHOLD).map(|(i, _)| i).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pixel {
    pub row: usize,
    pub col: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    Pos,
    PosNeg,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSet {
    /// One per instance, in input order.
    pub positives: Vec<Pixel>,
    pub negatives: Vec<Pixel>,
}

/// Pixel centroid rounded half away from zero.
pub fn centroid(mask: &InstanceMask) -> Pixel {
    let (mut r, mut c, mut n) = (0.0, 0.0, 0usize);
    for ((row, col), &m) in mask.grid.indexed_iter() {
        if m {
            r += row as f64;
            c += col as f64;
            n += 1;
        }
    }
    let n = n.max(1) as f64;
    Pixel { row: (r / n).round() as usize, col: (c / n).round() as usize }
}

pub fn gen_prompts(gt: &[InstanceMask], mode: PromptMode, seed: u64) -> Result<PromptSet, EvalError> {
    let first = gt.first().ok_or(EvalError::NoInstances)?;
    let dim = first.grid.dim();
    if let Some(bad) = gt.iter().find(|g| g.grid.dim() != dim) {
        return Err(EvalError::Dim(dim, bad.grid.dim()));
    }
    let positives = gt.iter().map(centroid).collect();
    let negatives = match mode {
        PromptMode::Pos => Vec::new(),
        PromptMode::PosNeg => {
            let mut union = Array2::from_elem(dim, false);
            for g in gt {
                Zip::from(&mut union).and(&g.grid).for_each(|u, &m| *u |= m);
            }
            let outside: Vec<Pixel> =
                union.indexed_iter().filter(|(_, &u)| !u).map(|((row, col), _)| Pixel { row, col }).collect();
            if outside.is_empty() {
                return Err(EvalError::NoBackground);
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            vec![outside[rng.random_range(0..outside.len())]]
        }
    };
    Ok(PromptSet { positives, negatives })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthMetrics {
    pub mse: f64,
    /// `+inf` when the MSE is zero.
    pub psnr: f64,
    pub pixels: usize,
}

/// Errors over `region`, in normalized depth units with peak 1.
pub fn depth_metrics(
    restored: &Array2<f64>,
    gt: &Array2<f64>,
    region: &Array2<bool>,
) -> Result<DepthMetrics, EvalError> {
    if restored.dim() != gt.dim() {
        return Err(EvalError::Dim(restored.dim(), gt.dim()));
    }
    if region.dim() != gt.dim() {
        return Err(EvalError::Dim(region.dim(), gt.dim()));
    }
    let (mut sum, mut n) = (0.0, 0usize);
    Zip::from(restored).and(gt).and(region).for_each(|&a, &b, &r| {
        if r {
            sum += (a - b) * (a - b);
            n += 1;
        }
    });
    if n == 0 {
        return Err(EvalError::EmptyRegion);
    }
    let mse = sum / n as f64;
    Ok(DepthMetrics { mse, psnr: psnr(mse), pixels: n })
}

pub fn psnr(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

/// `max |y0 − ỹ|` over observed pixels.
pub fn consistency_residual(y0: &Array2<f64>, problem: &RestorationProblem) -> f64 {
    let mut worst = 0.0f64;
    Zip::from(y0).and(&problem.y_tilde).and(&problem.operator.omega).for_each(|&a, &b, &o| {
        if o {
            worst = worst.max((a - b).abs());
        }
    });
    worst
}

/// One instance per distinct nonzero label.
pub fn instances_from_labels(labels: &Array2<u32>) -> Vec<InstanceMask> {
    let mut ids: Vec<u32> = labels.iter().copied().filter(|&l| l != 0).collect();
    ids.sort_unstable();
    ids.dedup();
    ids.into_iter().map(|id| InstanceMask { id, grid: labels.mapv(|l| l == id) }).collect()
}

/// Reads instance masks from a directory holding either an index file with
/// lines `<id> <file.pgm>` or a single `labels.png` label map.
pub fn read_mask_dir(dir: &Path) -> Result<Vec<InstanceMask>, EvalError> {
    let index = dir.join(MASK_INDEX);
    if !index.exists() {
        let labels = imageio::read_label_png(&dir.join("labels.png"))?;
        return Ok(instances_from_labels(&labels));
    }
    let text = std::fs::read_to_string(&index)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |msg: &str| EvalError::Index { line: i + 1, msg: msg.to_owned() };
        let mut parts = line.split_whitespace();
        let id: u32 = parts.next().and_then(|t| t.parse().ok()).ok_or_else(|| bad("expected an integer id"))?;
        let file = parts.next().ok_or_else(|| bad("expected a file name"))?;
        if parts.next().is_some() {
            return Err(bad("trailing fields"));
        }
        let grid = imageio::read_mask(&dir.join(file))?;
        out.push(InstanceMask::new(id, grid)?);
    }
    Ok(out)
}

/// Writes masks as PGM files plus an index, readable by [`read_mask_dir`].
pub fn write_mask_dir(dir: &Path, masks: &[InstanceMask]) -> Result<(), EvalError> {
    std::fs::create_dir_all(dir)?;
    let mut index = String::new();
    for m in masks {
        let name = format!("brick_{:05}.pgm", m.id);
        imageio::write_mask(&dir.join(&name), &m.grid)?;
        index.push_str(&format!("{} {}\n", m.id, name));
    }
    std::fs::write(dir.join(MASK_INDEX), index)?;
    Ok(())
}
