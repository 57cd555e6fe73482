//! Stage implementations. Each returns a summary value for the run manifest
//! and classifies failures as input or runtime errors.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anyhow::{anyhow, Context};
use depthnull::cloud::{parse_ply, write_ply, PlyFormat};
use depthnull::diffusion::{
    build_schedule, gaussian_denoiser, zero_denoiser, Denoiser, DiffusionSchedule, GaussianPrior,
};
use depthnull::eval::{
    consistency_residual, depth_metrics, instances_from_labels, miou, patch_ious, psnr, read_mask_dir,
};
use depthnull::imageio;
use depthnull::pipeline::extract_patches;
use depthnull::restore::{denormalize, restore, RestorationProblem, RestorationResult, SampleOptions};
use depthnull::synth::{degrade, synth_ground_truth, synth_wall, MasonrySpec, MasonrySurface};
use depthnull::wire::RemoteDenoiser;
use ndarray::Zip;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{DenoiserKind, RunConfig};
use crate::store::{
    patch_id, restored_ids, subdirs_with, write_json, write_jsonl, DegradeRecord, GtDir, PatchDir, PatchRecord,
    RestoredRecord, GT_LABELS, PATCH_INDEX, RESTORED_INDEX,
};

/// Variance floor of the per-patch fitted prior.
pub const PRIOR_MIN_VAR: f64 = 1e-4;

#[derive(Debug)]
pub enum Failure {
    /// Bad configuration, arguments or input files.
    Input(anyhow::Error),
    /// A stage failed while running.
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Input(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }

    pub fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Input(e) | Failure::Runtime(e) => e,
        }
    }

    pub fn context(self, what: &'static str) -> Self {
        match self {
            Failure::Input(e) => Failure::Input(e.context(what)),
            Failure::Runtime(e) => Failure::Runtime(e.context(what)),
        }
    }
}

pub type Outcome<T> = Result<T, Failure>;

pub trait Classify<T> {
    fn input(self) -> Outcome<T>;
    fn runtime(self) -> Outcome<T>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn input(self) -> Outcome<T> {
        self.map_err(|e| Failure::Input(e.into()))
    }

    fn runtime(self) -> Outcome<T> {
        self.map_err(|e| Failure::Runtime(e.into()))
    }
}

/// Effective configuration plus execution settings.
#[derive(Debug, Clone)]
pub struct Run {
    pub config: RunConfig,
    pub workers: Option<usize>,
}

impl Run {
    pub fn new(config: RunConfig, workers: Option<usize>) -> Outcome<Self> {
        config.validate().input()?;
        if workers == Some(0) {
            return Err(Failure::Input(anyhow!("--workers must be at least 1")));
        }
        Ok(Self { config, workers })
    }

    pub fn seed(&self) -> u64 {
        self.config.diffusion.seed
    }

    /// Seed of the degradation of patch `index`.
    pub fn degrade_seed(&self, index: usize) -> u64 {
        self.seed().wrapping_add(index as u64)
    }

    fn pool(&self) -> Outcome<rayon::ThreadPool> {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(n) = self.workers {
            b = b.num_threads(n);
        }
        b.build().runtime()
    }

    fn schedule(&self) -> Outcome<DiffusionSchedule> {
        build_schedule(self.config.schedule()).input()
    }
}

fn create_dir(dir: &Path) -> Outcome<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display())).input()
}

/// Contents of `surface.json`, enough to rebuild the ground-truth surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceRecord {
    pub spec: MasonrySpec,
    pub seed: u64,
    pub density: f64,
    pub noise: f64,
    pub dropout: f64,
    pub points: usize,
}

pub fn synth(run: &Run, out: &Path) -> Outcome<SurfaceRecord> {
    create_dir(out)?;
    let spec = run.config.masonry().input()?;
    let sampling = run.config.sampling();
    let (cloud, surface) = synth_wall(&spec, sampling, run.seed()).input()?;
    let ply = out.join("cloud.ply");
    fs::write(&ply, write_ply(&cloud, PlyFormat::BinaryLittleEndian))
        .with_context(|| format!("writing {}", ply.display()))
        .runtime()?;
    let rec = SurfaceRecord {
        spec: surface.spec,
        seed: surface.seed,
        density: sampling.density,
        noise: sampling.noise,
        dropout: sampling.dropout,
        points: cloud.len(),
    };
    write_json(&out.join("surface.json"), &rec).runtime()?;
    println!("synth: {} points -> {}", cloud.len(), ply.display());
    Ok(rec)
}

#[derive(Debug, Clone, Default)]
pub struct ProjectArgs {
    pub cloud: PathBuf,
    pub out: PathBuf,
    /// `surface.json` of a synthetic cloud; enables ground truth.
    pub surface: Option<PathBuf>,
    /// Ground-truth directory, `<out>/gt` when absent.
    pub gt: Option<PathBuf>,
    /// Keep fraction of a simulated degradation.
    pub degrade: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProjectSummary {
    pub written: usize,
    pub failed: Vec<String>,
    pub gt: Option<PathBuf>,
}

pub fn project(run: &Run, args: &ProjectArgs) -> Outcome<ProjectSummary> {
    let cfg = &run.config;
    let bytes = fs::read(&args.cloud).with_context(|| format!("reading {}", args.cloud.display())).input()?;
    let cloud = parse_ply(&bytes).with_context(|| args.cloud.display().to_string()).input()?;
    if cloud.is_empty() {
        return Err(Failure::Input(anyhow!("{}: point cloud is empty", args.cloud.display())));
    }
    let surface = match &args.surface {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).input()?;
            let rec: SurfaceRecord = serde_json::from_str(&text).with_context(|| path.display().to_string()).input()?;
            Some(MasonrySurface::new(rec.spec, rec.seed))
        }
        None => None,
    };
    if let Some(keep) = args.degrade {
        if !(keep > 0.0 && keep <= 1.0) {
            return Err(Failure::Input(anyhow!("keep fraction must lie in (0, 1], got {keep}")));
        }
    }
    create_dir(&args.out)?;
    let gt_root = surface.as_ref().map(|_| args.gt.clone().unwrap_or_else(|| args.out.join("gt")));
    let store = PatchDir::new(&args.out);
    let params = cfg.extract(run.seed());
    let pool = run.pool()?;

    let results: Vec<(usize, anyhow::Result<PatchRecord>)> = pool
        .install(|| {
            let extracted = extract_patches(&cloud, &params)?;
            Ok::<_, anyhow::Error>(
                extracted
                    .into_par_iter()
                    .map(|(index, res)| {
                        let out = res.map_err(anyhow::Error::from).and_then(|p| {
                            let id = patch_id(index);
                            let range = p.image.range.expect("extracted images are normalized");
                            let (y, observed, degrade_rec) = match args.degrade {
                                Some(keep) => {
                                    let seed = run.degrade_seed(index);
                                    let sigma = cfg.restore.sigma_y;
                                    let prob = degrade(&p.image, keep, sigma, seed)?;
                                    let rec = DegradeRecord {
                                        keep_fraction: keep,
                                        sigma_add: sigma,
                                        seed,
                                        observed: prob.operator.observed_count(),
                                    };
                                    (prob.y_tilde, prob.operator.omega, Some(rec))
                                }
                                None => (p.image.values.clone(), p.image.valid.clone(), None),
                            };
                            let mask = depthnull::camera::boundary_mask(&p.image)?;
                            store.write_patch(&id, &y, &observed, &mask.grid)?;
                            if let (Some(surface), Some(root)) = (&surface, &gt_root) {
                                let gt = synth_ground_truth(surface, &p.patch.frame, &p.image.intrinsics)?;
                                GtDir::new(root).write(&id, &gt.normalized(&range), &gt.valid, &gt.labels)?;
                            }
                            Ok(PatchRecord {
                                id,
                                index,
                                frame: p.patch.frame,
                                s: p.patch.params.side,
                                t: p.patch.params.half_thickness,
                                members: p.patch.indices.len(),
                                seed: params.seed,
                                range,
                                intrinsics: p.image.intrinsics,
                                valid_pixels: p.image.valid_count(),
                                degrade: degrade_rec,
                            })
                        });
                        (index, out)
                    })
                    .collect(),
            )
        })
        .input()?;

    let mut records = Vec::new();
    let mut failed = Vec::new();
    for (index, res) in results {
        match res {
            Ok(rec) => records.push(rec),
            Err(e) => {
                eprintln!("{}: {e:#}", patch_id(index));
                failed.push(patch_id(index));
            }
        }
    }
    write_jsonl(&args.out.join(PATCH_INDEX), &records).runtime()?;
    println!("project: {} patches -> {}", records.len(), args.out.display());
    if !failed.is_empty() {
        return Err(Failure::Runtime(anyhow!(
            "{} of {} patches failed: {}",
            failed.len(),
            failed.len() + records.len(),
            failed.join(", ")
        )));
    }
    Ok(ProjectSummary { written: records.len(), failed, gt: gt_root })
}

#[derive(Debug, Clone, Default)]
pub struct RestoreArgs {
    pub input: PathBuf,
    pub out: PathBuf,
}

#[derive(Debug, Clone, Serialize)]
pub struct RestoreSummary {
    pub restored: usize,
    pub failed: Vec<String>,
    pub max_residual: f64,
}

fn make_denoiser(
    run: &Run,
    sched: &DiffusionSchedule,
    problem: &RestorationProblem,
) -> anyhow::Result<Box<dyn Denoiser>> {
    let cfg = &run.config;
    Ok(match cfg.denoiser.kind {
        DenoiserKind::Zero => Box::new(zero_denoiser()),
        DenoiserKind::Gaussian => {
            let observed =
                Zip::from(&problem.y_tilde).and(&problem.operator.omega).fold(Vec::new(), |mut acc, &y, &o| {
                    if o {
                        acc.push(y);
                    }
                    acc
                });
            let prior = GaussianPrior::fitted(problem.dim(), observed, PRIOR_MIN_VAR)?;
            Box::new(gaussian_denoiser(prior, sched))
        }
        DenoiserKind::Remote => Box::new(RemoteDenoiser::connect(
            cfg.endpoint()?,
            cfg.schedule(),
            Duration::from_secs_f64(cfg.denoiser.timeout_secs),
        )?),
    })
}

fn restore_one(
    run: &Run,
    sched: &DiffusionSchedule,
    store: &PatchDir,
    rec: &PatchRecord,
    out: &Path,
) -> anyhow::Result<RestoredRecord> {
    let cfg = &run.config;
    let (problem, image) = store.load(rec, cfg.restore.sigma_y)?;
    let mut denoiser = make_denoiser(run, sched, &problem)?;
    let opts = SampleOptions {
        mode: cfg.restore.mode,
        noise_rule: cfg.restore.noise_rule,
        seed: run.seed(),
        stream: rec.index as u64,
    };
    let result = restore(&problem, &mut denoiser, sched, opts)?;
    let clamped_pixels = result.y0.iter().filter(|v| !(0.0..=1.0).contains(*v)).count();
    let clamped = RestorationResult { y0: result.y0.mapv(|v| v.clamp(0.0, 1.0)), ..result.clone() };
    let dir = PatchDir::new(out);
    crate::store::write_grid(&dir.file(&rec.id, "restored.pfm"), &clamped.y0)?;
    crate::store::write_mask(&dir.file(&rec.id, "mask.pgm"), &clamped.mask.grid)?;
    let metric = denormalize(&clamped, &image)?;
    crate::store::write_grid(&dir.file(&rec.id, "metric.pfm"), &metric.values)?;
    let residual = consistency_residual(&clamped.y0, &problem);
    let report = json!({
        "id": rec.id,
        "seed": opts.seed,
        "stream": opts.stream,
        "mode": opts.mode,
        "noise_rule": opts.noise_rule,
        "denoiser": cfg.denoiser.kind,
        "sigma_y": cfg.restore.sigma_y,
        "elapsed_secs": result.elapsed_secs,
        "consistency_residual": residual,
        "clamped_pixels": clamped_pixels,
        "range": rec.range,
        "trace": result.trace,
    });
    write_json(&dir.file(&rec.id, "report.json"), &report)?;
    Ok(RestoredRecord {
        id: rec.id.clone(),
        ok: true,
        error: None,
        residual: Some(residual),
        elapsed_secs: Some(result.elapsed_secs),
    })
}

pub fn restore_cmd(run: &Run, args: &RestoreArgs) -> Outcome<RestoreSummary> {
    let store = PatchDir::new(&args.input);
    let records = store.records().input()?;
    let sched = run.schedule()?;
    create_dir(&args.out)?;
    let pool = run.pool()?;
    let rows: Vec<RestoredRecord> = pool.install(|| {
        records
            .par_iter()
            .map(|rec| {
                restore_one(run, &sched, &store, rec, &args.out).unwrap_or_else(|e| {
                    eprintln!("{}: {e:#}", rec.id);
                    RestoredRecord {
                        id: rec.id.clone(),
                        ok: false,
                        error: Some(format!("{e:#}")),
                        residual: None,
                        elapsed_secs: None,
                    }
                })
            })
            .collect()
    });
    write_jsonl(&args.out.join(RESTORED_INDEX), &rows).runtime()?;
    let failed: Vec<String> = rows.iter().filter(|r| !r.ok).map(|r| r.id.clone()).collect();
    let max_residual = rows.iter().filter_map(|r| r.residual).fold(0.0, f64::max);
    println!("restore: {} of {} patches -> {}", rows.len() - failed.len(), rows.len(), args.out.display());
    if !failed.is_empty() {
        return Err(Failure::Runtime(anyhow!(
            "{} of {} patches failed: {}",
            failed.len(),
            rows.len(),
            failed.join(", ")
        )));
    }
    Ok(RestoreSummary { restored: rows.len(), failed, max_residual })
}

/// Report row, (restored MSE, input MSE, consistency residual) and per-brick IoUs of one patch.
type EvalRow = (Value, Option<(f64, Option<f64>, f64)>, Option<Vec<f64>>);

#[derive(Debug, Clone, Default)]
pub struct EvalArgs {
    pub restored: PathBuf,
    pub gt: PathBuf,
    /// Predicted instance masks, one subdirectory per patch.
    pub masks: Option<PathBuf>,
    /// Patch directory of the restored observations; adds consistency
    /// residuals and the error of the observation itself.
    pub observed: Option<PathBuf>,
    /// Report path, `<restored>/eval.json` when absent.
    pub out: Option<PathBuf>,
}

/// JSON number, or a string for non-finite values.
pub fn jnum(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else if x.is_nan() {
        json!("nan")
    } else if x > 0.0 {
        json!("inf")
    } else {
        json!("-inf")
    }
}

fn orphans(label: &str, a: &[String], b: &[String]) -> Option<String> {
    let missing: Vec<&str> = a.iter().filter(|id| !b.contains(id)).map(String::as_str).collect();
    (!missing.is_empty()).then(|| format!("{label}: {}", missing.join(", ")))
}

pub fn eval(run: &Run, args: &EvalArgs) -> Outcome<Value> {
    let restored = restored_ids(&args.restored).input()?;
    let gt = GtDir::new(&args.gt);
    let gt_ids = gt.ids().input()?;
    let ids: Vec<String> = restored.iter().map(|r| r.id.clone()).collect();
    let mut problems: Vec<String> = [
        orphans("restored without ground truth", &ids, &gt_ids),
        orphans("ground truth without restored output", &gt_ids, &ids),
    ]
    .into_iter()
    .flatten()
    .collect();
    if let Some(masks) = &args.masks {
        let mut mask_ids = subdirs_with(masks, GT_LABELS).input()?;
        mask_ids.extend(subdirs_with(masks, depthnull::eval::MASK_INDEX).input()?);
        problems.extend(orphans("patches without predicted masks", &ids, &mask_ids));
    }
    let observed = match &args.observed {
        Some(dir) => {
            let store = PatchDir::new(dir);
            let recs = store.records().input()?;
            let obs_ids: Vec<String> = recs.iter().map(|r| r.id.clone()).collect();
            problems.extend(orphans("restored without observation", &ids, &obs_ids));
            Some((store, recs))
        }
        None => None,
    };
    if !problems.is_empty() {
        return Err(Failure::Input(anyhow!("patch id mismatch; {}", problems.join("; "))));
    }
    if restored.is_empty() {
        return Err(Failure::Input(anyhow!("{} holds no restored patches", args.restored.display())));
    }

    let out_dir = PatchDir::new(&args.restored);
    let per_patch: Vec<anyhow::Result<EvalRow>> = restored
        .par_iter()
        .map(|r| {
            if !r.ok {
                return Ok((json!({ "id": r.id, "ok": false, "error": r.error }), None, None));
            }
            let y = crate::store::read_grid(&out_dir.file(&r.id, "restored.pfm"))?;
            let m = crate::store::read_mask(&out_dir.file(&r.id, "mask.pgm"))?;
            let g = gt.read(&r.id)?;
            let region = Zip::from(&m).and(&g.valid).map_collect(|&a, &b| a && b);
            let dm = depth_metrics(&y, &g.depth, &region).with_context(|| r.id.clone())?;
            let mut row = json!({
                "id": r.id,
                "ok": true,
                "mse": dm.mse,
                "psnr": jnum(dm.psnr),
                "pixels": dm.pixels,
            });
            let mut input_mse = None;
            if let Some((store, recs)) = &observed {
                let rec = recs.iter().find(|x| x.id == r.id).expect("orphans checked");
                let (problem, _) = store.load(rec, run.config.restore.sigma_y)?;
                let residual = consistency_residual(&y, &problem);
                let im = depth_metrics(&problem.y_tilde, &g.depth, &region)?;
                row["consistency_residual"] = json!(residual);
                row["input_mse"] = json!(im.mse);
                row["input_psnr"] = jnum(im.psnr);
                input_mse = Some((im.mse, residual));
            }
            let ious = match &args.masks {
                Some(masks) => {
                    let labels = imageio::read_label_png(&gt.dir(&r.id).join(GT_LABELS))?;
                    let gt_inst = instances_from_labels(&labels);
                    let pred = read_mask_dir(&masks.join(&r.id))?;
                    let ious = patch_ious(&gt_inst, &pred)?;
                    row["ious"] = json!(ious);
                    if !ious.is_empty() {
                        row["miou"] = json!(ious.iter().sum::<f64>() / ious.len() as f64);
                    }
                    Some(ious)
                }
                None => None,
            };
            Ok((row, Some((dm.mse, input_mse.map(|(m, _)| m), input_mse.map_or(0.0, |(_, r)| r))), ious))
        })
        .collect();

    let mut rows = Vec::new();
    let mut mses = Vec::new();
    let mut improved = 0usize;
    let mut compared = 0usize;
    let mut max_residual: Option<f64> = None;
    let mut all_ious = Vec::new();
    for res in per_patch {
        let (row, stats, ious) = res.input()?;
        if let Some((mse, input_mse, residual)) = stats {
            mses.push(mse);
            if let Some(im) = input_mse {
                compared += 1;
                improved += usize::from(mse < im);
                max_residual = Some(max_residual.unwrap_or(0.0).max(residual));
            }
        }
        if let Some(i) = ious {
            all_ious.push(i);
        }
        rows.push(row);
    }
    let mean_mse = mses.iter().sum::<f64>() / mses.len().max(1) as f64;
    let mut summary = json!({
        "patches": rows.len(),
        "evaluated": mses.len(),
        "mean_mse": if mses.is_empty() { Value::Null } else { json!(mean_mse) },
        "psnr_of_mean_mse": if mses.is_empty() { Value::Null } else { jnum(psnr(mean_mse)) },
    });
    if compared > 0 {
        summary["improved_over_input"] = json!(improved);
        summary["compared"] = json!(compared);
        summary["max_consistency_residual"] = json!(max_residual);
    }
    if args.masks.is_some() {
        let agg = run.config.eval.aggregation;
        summary["aggregation"] = json!(agg);
        summary["miou"] = match miou(&all_ious, agg) {
            Ok(v) => json!(v),
            Err(_) => Value::Null,
        };
    }
    let report = json!({ "summary": summary, "patches": rows });
    let path = args.out.clone().unwrap_or_else(|| args.restored.join("eval.json"));
    write_json(&path, &report).runtime()?;
    println!("eval: {}", serde_json::to_string(&report["summary"]).expect("json"));
    Ok(report)
}

#[derive(Debug, Clone, Default)]
pub struct PipelineArgs {
    pub out: PathBuf,
}

pub fn pipeline(run: &Run, args: &PipelineArgs) -> Outcome<Value> {
    let started = Instant::now();
    create_dir(&args.out)?;
    let cfg_text = run.config.to_toml();
    fs::write(args.out.join("config.toml"), &cfg_text).context("writing config.toml").runtime()?;
    let synth_dir = args.out.join("synth");
    let patch_dir = args.out.join("patches");
    let gt_dir = args.out.join("gt");
    let restored_dir = args.out.join("restored");

    let surface = synth(run, &synth_dir).map_err(|f| f.context("synth stage"))?;
    let proj = project(
        run,
        &ProjectArgs {
            cloud: synth_dir.join("cloud.ply"),
            out: patch_dir.clone(),
            surface: Some(synth_dir.join("surface.json")),
            gt: Some(gt_dir.clone()),
            degrade: Some(run.config.restore.keep_fraction),
        },
    )
    .map_err(|f| f.context("project stage"))?;
    let rest = restore_cmd(run, &RestoreArgs { input: patch_dir.clone(), out: restored_dir.clone() })
        .map_err(|f| f.context("restore stage"))?;
    let report = eval(
        run,
        &EvalArgs {
            restored: restored_dir.clone(),
            gt: gt_dir.clone(),
            masks: None,
            observed: Some(patch_dir.clone()),
            out: Some(args.out.join("eval.json")),
        },
    )
    .map_err(|f| f.context("eval stage"))?;

    let seed = run.seed();
    let manifest = json!({
        "config": run.config,
        "config_hash": run.config.hash(),
        "seeds": {
            "run": seed,
            "synth": surface.seed,
            "patch_sampling": seed,
            "degrade": (0..proj.written).map(|i| run.degrade_seed(i)).collect::<Vec<_>>(),
            "restore": { "seed": seed, "stream": "patch index" },
        },
        "versions": {
            "depthnull": env!("CARGO_PKG_VERSION"),
            "stages": { "synth": 1, "project": 1, "restore": 1, "eval": 1 },
        },
        "outputs": {
            "cloud": synth_dir.join("cloud.ply"),
            "patches": patch_dir,
            "gt": gt_dir,
            "restored": restored_dir,
            "eval": args.out.join("eval.json"),
        },
        "patches": proj.written,
        "max_consistency_residual": rest.max_residual,
        "metrics": report["summary"],
        "elapsed_secs": started.elapsed().as_secs_f64(),
    });
    write_json(&args.out.join("run.json"), &manifest).runtime()?;
    Ok(manifest)
}

/// Fails with an input error unless `dir` exists.
pub fn require_dir(dir: &Path) -> Outcome<()> {
    if dir.is_dir() {
        Ok(())
    } else {
        Err(Failure::Input(anyhow!("{} is not a directory", dir.display())))
    }
}
