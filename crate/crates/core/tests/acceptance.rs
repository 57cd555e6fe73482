//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::time::{Duration, Instant};

use depthnull::camera::{
    back_project, camera_pose, normalize_depth, render_patch, BoundaryMask, CameraIntrinsics, PixelRect,
};
use depthnull::cloud::PointCloud;
use depthnull::diffusion::{
    build_schedule, gaussian_denoiser, zero_denoiser, Denoiser, DenoiserError, GaussianPrior, ScheduleConfig,
};
use depthnull::eval::{centroid, gen_prompts, iou, miou, Aggregation, InstanceMask, Pixel, PromptMode};
use depthnull::patch::{build_frame, crop_patch, CropParams};
use depthnull::pipeline::{extract_patches, ExtractParams};
use depthnull::restore::{
    restore, restore_observed, sigma_scale, MaskOperator, Mode, RestorationProblem, RestoreError, SampleOptions,
};
use depthnull::synth::{degrade, synth_ground_truth, synth_wall, MasonrySpec, SamplingParams};
use depthnull::wire::{
    decode_frame, encode_frame, encode_request, read_frame, EpsFrame, FrameKind, RemoteDenoiser, StubConfig, StubMode,
    StubServer,
};
use nalgebra::{Matrix3, Point3, Vector3};
use ndarray::{Array2, Zip};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("crop matches brute force", crop_oracle),
        ("projection round trip", projection_round_trip),
        ("schedule exactness", schedule_exactness),
        ("noise-free consistency", noise_free_consistency),
        ("masked-zero invariant", masked_zero_invariant),
        ("gaussian posterior oracle", gaussian_posterior_oracle),
        ("sigma_scale reduction", sigma_scale_reduction),
        ("synthetic end-to-end", synthetic_end_to_end),
        ("metric oracles", metric_oracles),
        ("protocol goldens", protocol_goldens),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {}: {name} ({detail}; {secs:.1} s)", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {}: {name} ({detail}; {secs:.1} s)", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    let n = Normal::new(0.0, 1.0).unwrap();
    loop {
        let v = Vector3::new(n.sample(rng), n.sample(rng), n.sample(rng));
        if v.norm() > 1e-3 {
            return v.normalize();
        }
    }
}

fn crop_oracle() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut members = 0usize;
    let mut points = 0usize;
    for trial in 0..50 {
        let n = rng.random_range(1_000..=100_000);
        let cloud = PointCloud::new(
            (0..n)
                .map(|_| {
                    Point3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
                })
                .collect(),
        )
        .unwrap();
        let center = Point3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
        let frame = build_frame(center, random_unit(&mut rng), random_unit(&mut rng));
        let params = CropParams {
            side: rng.random_range(0.2..1.2),
            half_thickness: rng.random_range(0.05..0.5),
            ..Default::default()
        };
        // Local coordinates through the rotation whose rows are the frame axes.
        let r =
            Matrix3::from_rows(&[frame.tangent.transpose(), frame.generatrix.transpose(), frame.normal.transpose()]);
        let expected: Vec<usize> = cloud
            .points()
            .iter()
            .enumerate()
            .filter(|(_, p)| {
                let l = r * (*p - center);
                l.x.abs() <= params.side / 2.0 && l.y.abs() <= params.side / 2.0 && l.z.abs() <= params.half_thickness
            })
            .map(|(i, _)| i)
            .collect();
        let got = crop_patch(&cloud, &frame, &params).indices;
        ensure!(got == expected, "trial {trial}: {} members, brute force {}", got.len(), expected.len());
        members += got.len();
        points += n;
    }
    let secs = started.elapsed().as_secs_f64();
    ensure!(secs < 30.0, "took {secs:.1} s");
    Ok(format!("50 clouds, {points} points, {members} members identical"))
}

fn projection_round_trip() -> Outcome {
    let intr = CameraIntrinsics::default();
    let crop = CropParams::default();
    ensure!(
        (crop.side, crop.half_thickness, intr.standoff, intr.fx, intr.fy, intr.height, intr.width, intr.cx, intr.cy)
            == (0.8, 0.25, 0.8, 400.0, 400.0, 256, 256, 128.0, 128.0),
        "defaults differ from the published camera table"
    );
    let bound = intr.standoff / intr.fx * 0.5;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut worst_plane, mut worst_depth, mut pixels) = (0.0f64, 0.0f64, 0usize);
    for _ in 0..5 {
        let plane_n = random_unit(&mut rng);
        let origin = Point3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
        let basis = build_frame(origin, plane_n, random_unit(&mut rng));
        let pts: Vec<Point3<f64>> = (0..300_000)
            .map(|_| {
                origin + basis.tangent * rng.random_range(-0.6..0.6) + basis.generatrix * rng.random_range(-0.6..0.6)
            })
            .collect();
        let cloud = PointCloud::new(pts).unwrap();
        // View the plane up to 20° off its normal.
        let tilt = rng.random_range(0.0..20f64.to_radians());
        let view = (plane_n * tilt.cos() + basis.tangent * tilt.sin()).normalize();
        let frame = build_frame(origin, view, Vector3::z());
        let patch = crop_patch(&cloud, &frame, &crop);
        let image = normalize_depth(&render_patch(&cloud, &patch, &intr).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        let back = back_project(&image);
        for p in back.points() {
            worst_plane = worst_plane.max((p - origin).dot(&plane_n).abs());
        }
        let pose = camera_pose(&frame, intr.standoff);
        let valid: Vec<(usize, usize)> = image.valid.indexed_iter().filter(|(_, &ok)| ok).map(|(idx, _)| idx).collect();
        ensure!(valid.len() == back.len(), "{} valid pixels but {} points", valid.len(), back.len());
        for (&(v, u), p) in valid.iter().zip(back.points()) {
            let pc = pose.to_camera(p);
            ensure!(intr.pixel_of(&pc) == Some((u, v)), "pixel ({v}, {u}) re-projects to {:?}", intr.pixel_of(&pc));
            worst_depth = worst_depth.max((pc.z - image.metric_depth(v, u).unwrap()).abs());
        }
        pixels += valid.len();
    }
    ensure!(worst_plane <= 0.001, "point {worst_plane:.2e} m off the plane");
    ensure!(worst_depth <= 1e-6, "re-projected depth off by {worst_depth:.2e}");
    Ok(format!(
        "{pixels} pixels, plane distance {worst_plane:.2e} m (bound {bound:.0e}), depth error {worst_depth:.1e}"
    ))
}

fn rational_to_f64(r: &BigRational) -> f64 {
    let scale = BigInt::from(10u8).pow(40);
    ((r.numer() * &scale) / r.denom()).to_f64().unwrap() / 1e40
}

fn schedule_exactness() -> Outcome {
    let s = build_schedule(ScheduleConfig::default()).map_err(|e| e.to_string())?;
    let cfg = s.config();
    ensure!(
        (cfg.train_steps, cfg.beta_start, cfg.beta_end) == (1000, 1e-4, 0.02),
        "default schedule differs from the published values"
    );
    let t_max = 1000i64;
    let start = BigRational::new(1.into(), 10_000.into());
    let end = BigRational::new(2.into(), 100.into());
    let mut prod = BigRational::one();
    let mut worst = 0f64;
    for t in 1..=t_max {
        let beta = &start + (&end - &start) * BigRational::new((t - 1).into(), (t_max - 1).into());
        prod *= BigRational::one() - beta;
        worst = worst.max((s.alpha_bar(t as usize) - rational_to_f64(&prod)).abs());
    }
    ensure!(s.alpha_bar(0) == 1.0, "alpha_bar(0) = {}", s.alpha_bar(0));
    ensure!(worst <= 1e-12, "max deviation {worst:.2e}");
    Ok(format!("max |Δᾱ| = {worst:.1e} over T=1000"))
}

fn random_problem(rng: &mut ChaCha8Rng, sigma_y: f64, full_mask: bool) -> RestorationProblem {
    let shape = (rng.random_range(8..=40), rng.random_range(8..=40));
    let rect = if full_mask {
        PixelRect { u_min: 0, v_min: 0, u_max: shape.1 - 1, v_max: shape.0 - 1 }
    } else {
        let (v0, u0) = (rng.random_range(0..shape.0 / 2), rng.random_range(0..shape.1 / 2));
        PixelRect {
            u_min: u0,
            v_min: v0,
            u_max: rng.random_range(u0 + 1..shape.1),
            v_max: rng.random_range(v0 + 1..shape.0),
        }
    };
    let mask = BoundaryMask::from_rect(rect, shape);
    let keep = rng.random_range(0.05..0.95);
    let mut omega = Array2::from_shape_fn(shape, |idx| mask.grid[idx] && rng.random_bool(keep));
    omega[[rect.v_min, rect.u_min]] = true;
    let y = Array2::from_shape_fn(shape, |idx| if omega[idx] { rng.random::<f64>() } else { 0.0 });
    RestorationProblem::new(y, MaskOperator::new(omega), mask, sigma_y).unwrap()
}

/// Returns arbitrary large finite noise estimates, or NaN from a chosen step on.
struct FaultyDenoiser {
    rng: ChaCha8Rng,
    scale: f64,
    nan_at_call: Option<usize>,
    calls: usize,
}

impl Denoiser for FaultyDenoiser {
    fn predict_eps(&mut self, y_t: &Array2<f64>, _t: usize) -> Result<Array2<f64>, DenoiserError> {
        self.calls += 1;
        if self.nan_at_call == Some(self.calls) {
            return Ok(Array2::from_elem(y_t.dim(), f64::NAN));
        }
        let n = Normal::new(0.0, self.scale).unwrap();
        Ok(Array2::from_shape_fn(y_t.dim(), |_| n.sample(&mut self.rng)))
    }
}

fn observed_residual(y: &Array2<f64>, p: &RestorationProblem) -> f64 {
    Zip::from(y)
        .and(&p.y_tilde)
        .and(&p.operator.omega)
        .fold(0.0f64, |acc, &a, &b, &o| if o { acc.max((a - b).abs()) } else { acc })
}

fn noise_free_consistency() -> Outcome {
    let started = Instant::now();
    let sched = build_schedule(ScheduleConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    let mut runs = 0;
    for i in 0..100u64 {
        let p = random_problem(&mut rng, 0.0, false);
        let mode = if i % 2 == 0 { Mode::Masked } else { Mode::Vanilla };
        let opts = SampleOptions { mode, seed: i, stream: i, ..Default::default() };
        let prior = GaussianPrior::constant(p.dim(), 0.5, rng.random_range(0.01..1.0)).unwrap();
        let mut denoisers: Vec<Box<dyn Denoiser>> = vec![
            Box::new(zero_denoiser()),
            Box::new(gaussian_denoiser(prior, &sched)),
            Box::new(FaultyDenoiser { rng: ChaCha8Rng::seed_from_u64(i), scale: 1e3, nan_at_call: None, calls: 0 }),
        ];
        for d in denoisers.iter_mut() {
            let mut step_worst = 0.0f64;
            let res = restore_observed(&p, d, &sched, opts, |v| {
                step_worst = step_worst.max(observed_residual(v.y0_hat, &p)).max(v.trace.residual);
            })
            .map_err(|e| format!("problem {i}: {e}"))?;
            worst = worst.max(step_worst).max(observed_residual(&res.y0, &p));
            runs += 1;
        }
        // A non-finite estimate is reported at the step it happened.
        let call = rng.random_range(1..=sched.sampling_steps());
        let mut bad =
            FaultyDenoiser { rng: ChaCha8Rng::seed_from_u64(i), scale: 1.0, nan_at_call: Some(call), calls: 0 };
        match restore(&p, &mut bad, &sched, opts) {
            Err(RestoreError::NonFinite { k, .. }) | Err(RestoreError::Denoiser { k, .. })
                if k == sched.sampling_steps() + 1 - call => {}
            other => return Err(format!("problem {i}: NaN at call {call} gave {other:?}")),
        }
    }
    let secs = started.elapsed().as_secs_f64();
    ensure!(worst <= 1e-6, "max residual {worst:.2e}");
    ensure!(secs < 120.0, "took {secs:.1} s");
    Ok(format!("{runs} runs, max residual {worst:.1e}"))
}

fn masked_zero_invariant() -> Outcome {
    let sched = build_schedule(ScheduleConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut steps = 0usize;
    for i in 0..20u64 {
        let sigma_y = if i % 2 == 0 { 0.0 } else { 0.16 };
        let opts = SampleOptions { seed: i, stream: 7, ..Default::default() };

        let p = random_problem(&mut rng, sigma_y, false);
        let prior = GaussianPrior::constant(p.dim(), 0.4, 0.2).unwrap();
        let mut outside_nonzero = 0usize;
        let res = restore_observed(&p, &mut gaussian_denoiser(prior, &sched), &sched, opts, |v| {
            steps += 1;
            outside_nonzero +=
                Zip::from(v.y0_hat).and(&p.mask.grid).fold(0, |n, &y, &m| n + usize::from(!m && y != 0.0));
        })
        .map_err(|e| e.to_string())?;
        outside_nonzero += Zip::from(&res.y0).and(&p.mask.grid).fold(0, |n, &y, &m| n + usize::from(!m && y != 0.0));
        ensure!(outside_nonzero == 0, "problem {i}: {outside_nonzero} non-zero pixels outside the mask");

        let full = random_problem(&mut rng, sigma_y, true);
        let prior = GaussianPrior::constant(full.dim(), 0.4, 0.2).unwrap();
        let masked =
            restore(&full, &mut gaussian_denoiser(prior.clone(), &sched), &sched, opts).map_err(|e| e.to_string())?;
        let vanilla = restore(
            &full,
            &mut gaussian_denoiser(prior, &sched),
            &sched,
            SampleOptions { mode: Mode::Vanilla, ..opts },
        )
        .map_err(|e| e.to_string())?;
        let same = masked.y0.iter().zip(vanilla.y0.iter()).all(|(a, b)| a.to_bits() == b.to_bits());
        ensure!(same && masked.trace == vanilla.trace, "problem {i}: vanilla differs from masked under a full mask");
    }
    Ok(format!("20 masked runs ({steps} steps) zero outside M; 20 full-mask pairs bit-identical"))
}

fn gaussian_posterior_oracle() -> Outcome {
    let started = Instant::now();
    let (h, w) = (64, 64);
    let sigma_y = 0.16;
    let runs = 256;
    let sched = build_schedule(ScheduleConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mean = Array2::from_shape_fn((h, w), |(r, c)| 0.2 + 0.6 * (r + c) as f64 / (h + w - 2) as f64);
    let var = Array2::from_elem((h, w), 0.04);
    let prior = GaussianPrior::new(mean.clone(), var.clone()).map_err(|e| e.to_string())?;
    let omega = Array2::from_shape_fn((h, w), |_| rng.random_bool(0.5));
    let normal = Normal::new(0.0, 1.0).unwrap();
    let y_tilde = Zip::from(&mean).and(&var).and(&omega).map_collect(|&m, &v, &o| {
        if o {
            m + v.sqrt() * normal.sample(&mut rng) + sigma_y * normal.sample(&mut rng)
        } else {
            0.0
        }
    });
    let problem =
        RestorationProblem::new(y_tilde.clone(), MaskOperator::new(omega.clone()), BoundaryMask::full((h, w)), sigma_y)
            .map_err(|e| e.to_string())?;
    let oracle = Zip::from(&mean).and(&var).and(&y_tilde).and(&omega).map_collect(|&m, &v, &y, &o| {
        if o {
            m + v / (v + sigma_y * sigma_y) * (y - m)
        } else {
            m
        }
    });

    let results: Vec<Array2<f64>> = {
        use rayon::prelude::*;
        (0..runs as u64)
            .into_par_iter()
            .map(|i| {
                let opts = SampleOptions { seed: 1000 + i, stream: 0, ..Default::default() };
                restore(&problem, &mut gaussian_denoiser(prior.clone(), &sched), &sched, opts).map(|r| r.y0)
            })
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?
    };
    let mut sum = Array2::<f64>::zeros((h, w));
    let mut sq = Array2::<f64>::zeros((h, w));
    for y in &results {
        sum += y;
        sq += &y.mapv(|v| v * v);
    }
    let n = runs as f64;
    let mut pass = 0usize;
    for ((idx, &s), &q) in sum.indexed_iter().zip(sq.iter()) {
        let m = s / n;
        let se = ((q / n - m * m).max(0.0) * n / (n - 1.0) / n).sqrt();
        if (m - oracle[idx]).abs() <= 3.0 * se {
            pass += 1;
        }
    }
    let frac = pass as f64 / (h * w) as f64;
    let secs = started.elapsed().as_secs_f64();
    ensure!(frac >= 0.95, "{:.1}% of pixels within 3 SE", 100.0 * frac);
    ensure!(secs < 600.0, "took {secs:.0} s");
    Ok(format!("{:.1}% of pixels within 3 SE over {runs} runs", 100.0 * frac))
}

fn sigma_scale_reduction() -> Outcome {
    let sched = build_schedule(ScheduleConfig::default()).unwrap();
    for k in 1..=sched.sampling_steps() {
        let ab = sched.ddim_coefficients(k).alpha_bar_prev;
        let got = sigma_scale(ab, 0.0);
        ensure!(got == (1.0, (1.0 - ab).sqrt()), "k={k}: {got:?}");
    }
    // The sampler uses the same values at every step.
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let p = random_problem(&mut rng, 0.0, false);
    let res = restore(&p, &mut zero_denoiser(), &sched, SampleOptions::default()).map_err(|e| e.to_string())?;
    for s in &res.trace {
        let ab = sched.ddim_coefficients(s.k).alpha_bar_prev;
        ensure!(s.lambda == 1.0 && s.lambda_applied == 1.0 && s.gamma == (1.0 - ab).sqrt(), "trace step {}", s.k);
    }

    let (l, g) = sigma_scale(0.5, 0.16);
    ensure!(l == 1.0 && (g * g - 0.4872).abs() <= 1e-12, "(0.5, 0.16) gave ({l}, {g})");
    let (l, g) = sigma_scale(0.999, 0.16);
    ensure!((l - 0.197_741_249_115_103_96).abs() <= 1e-12 && g * g <= 1e-12, "(0.999, 0.16) gave ({l}, {g})");
    Ok(format!("{} steps exact at σ_y=0; hand cases within 1e-12", sched.sampling_steps()))
}

fn synthetic_end_to_end() -> Outcome {
    let sched = build_schedule(ScheduleConfig::default()).unwrap();
    let (cloud, surface) =
        synth_wall(&MasonrySpec::default(), SamplingParams::default(), 0).map_err(|e| e.to_string())?;
    let params = ExtractParams { count: 20, seed: 0, ..Default::default() };
    let patches = extract_patches(&cloud, &params).map_err(|e| e.to_string())?;
    ensure!(patches.len() == 20, "{} patches extracted", patches.len());

    use rayon::prelude::*;
    let scores: Vec<(f64, f64)> = patches
        .into_par_iter()
        .map(|(i, res)| -> Result<(f64, f64), String> {
            let p = res.map_err(|e| format!("patch {i}: {e}"))?;
            let range = p.image.range.expect("normalized");
            let problem = degrade(&p.image, 0.6, 0.16, i as u64).map_err(|e| e.to_string())?;
            let observed =
                problem.y_tilde.iter().zip(problem.operator.omega.iter()).filter(|(_, &o)| o).map(|(&v, _)| v);
            let prior = GaussianPrior::fitted(problem.dim(), observed, 1e-4).map_err(|e| e.to_string())?;
            let opts = SampleOptions { seed: 0, stream: i as u64, ..Default::default() };
            let res =
                restore(&problem, &mut gaussian_denoiser(prior, &sched), &sched, opts).map_err(|e| e.to_string())?;
            let gt = synth_ground_truth(&surface, &p.patch.frame, &p.image.intrinsics).map_err(|e| e.to_string())?;
            let gt_depth = gt.normalized(&range);
            let region = Zip::from(&problem.mask.grid).and(&gt.valid).map_collect(|&a, &b| a && b);
            let mse = |y: &Array2<f64>| {
                let (mut s, mut n) = (0.0, 0usize);
                Zip::from(y).and(&gt_depth).and(&region).for_each(|&a, &b, &r| {
                    if r {
                        s += (a.clamp(0.0, 1.0) - b).powi(2);
                        n += 1;
                    }
                });
                s / n as f64
            };
            Ok((mse(&res.y0), mse(&problem.y_tilde)))
        })
        .collect::<Result<_, _>>()?;
    let improved = scores.iter().filter(|(r, i)| r < i).count();
    let mean_r = scores.iter().map(|s| s.0).sum::<f64>() / scores.len() as f64;
    let mean_i = scores.iter().map(|s| s.1).sum::<f64>() / scores.len() as f64;
    ensure!(improved >= 18, "{improved}/20 patches improved");
    Ok(format!("{improved}/20 patches improved; mean MSE {mean_r:.4} vs input {mean_i:.4}"))
}

fn block(shape: (usize, usize), rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> Array2<bool> {
    Array2::from_shape_fn(shape, |(r, c)| rows.contains(&r) && cols.contains(&c))
}

fn metric_oracles() -> Outcome {
    let a = InstanceMask::new(1, block((4, 4), 0..2, 0..2)).unwrap();
    let b = InstanceMask::new(1, block((4, 4), 1..3, 1..3)).unwrap();
    let v = iou(&a, &b).map_err(|e| e.to_string())?;
    ensure!(v == 1.0 / 7.0, "overlapping blocks IoU {v}");
    ensure!(iou(&a, &a).unwrap() == 1.0, "identical masks");
    let c = InstanceMask::new(1, block((4, 4), 2..4, 2..4)).unwrap();
    ensure!(iou(&a, &c).unwrap() == 0.0, "disjoint masks");

    let one = miou(&[vec![0.5, 1.0]], Aggregation::PerPatch).unwrap();
    ensure!(one == 0.75, "one patch mIoU {one}");
    let two = miou(&[vec![1.0], vec![0.0]], Aggregation::PerPatch).unwrap();
    ensure!(two == 0.5, "two patch mIoU {two}");
    // Bricks are averaged within a patch first, then patches are averaged.
    let uneven = [vec![1.0, 1.0, 1.0], vec![0.0], vec![]];
    let per_patch = miou(&uneven, Aggregation::default()).unwrap();
    let pooled = miou(&uneven, Aggregation::GlobalPool).unwrap();
    ensure!(per_patch == 0.5 && pooled == 0.75, "aggregation gave {per_patch} / {pooled}");
    ensure!(miou(&[vec![], vec![]], Aggregation::PerPatch).is_err(), "all-empty patches must fail");

    let m = InstanceMask::new(3, block((10, 10), 4..6, 4..6)).unwrap();
    ensure!(centroid(&m) == Pixel { row: 5, col: 5 }, "centroid {:?}", centroid(&m));
    let l = InstanceMask::new(4, block((10, 10), 0..3, 6..10)).unwrap();
    let prompts = gen_prompts(&[m, l], PromptMode::Pos, 0).unwrap();
    ensure!(
        prompts.positives == vec![Pixel { row: 5, col: 5 }, Pixel { row: 1, col: 8 }],
        "prompts {:?}",
        prompts.positives
    );
    let full = InstanceMask::new(1, Array2::from_elem((3, 3), true)).unwrap();
    ensure!(gen_prompts(&[full], PromptMode::PosNeg, 0).is_err(), "full-image GT must have no negative prompt");
    Ok("IoU 1/7, mIoU 0.75 and 0.5, centroid (5, 5), per-patch aggregation".into())
}

fn protocol_goldens() -> Outcome {
    // 1×1 request with value 0.5 at t=10.
    const REQUEST: [u8; 27] = [
        0x45, 0x50, 0x53, 0x31, 0x01, 0x00, 0x01, 0x0A, 0x00, 0x00, 0x00, 0x01, 0x00, 0x00, 0x00, 0x01, 0x00, 0x00,
        0x00, 0x01, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x3F,
    ];
    // Schedule handshake for T=1000, β 1e-4 → 0.02.
    const HANDSHAKE: [u8; 35] = [
        0x45, 0x50, 0x53, 0x31, 0x01, 0x00, 0x00, 0xE8, 0x03, 0x00, 0x00, 0x01, 0x00, 0x00, 0x00, 0x03, 0x00, 0x00,
        0x00, 0x01, 0x00, 0x00, 0x00, 0x00, 0x00, 0x7A, 0x44, 0x17, 0xB7, 0xD1, 0x38, 0x0A, 0xD7, 0xA3, 0x3C,
    ];
    ensure!(encode_request(&Array2::from_elem((1, 1), 0.5), 10).unwrap() == REQUEST, "request bytes");
    let req = decode_frame(&REQUEST).map_err(|e| e.to_string())?;
    ensure!(
        req == EpsFrame { kind: FrameKind::Request, t: 10, h: 1, w: 1, c: 1, payload: vec![0.5] },
        "decoded request {req:?}"
    );
    let hs = decode_frame(&HANDSHAKE).map_err(|e| e.to_string())?;
    ensure!(hs == EpsFrame::handshake(&ScheduleConfig::default()), "decoded handshake {hs:?}");
    let stream: Vec<u8> = [&HANDSHAKE[..], &REQUEST].concat();
    let mut cur = std::io::Cursor::new(stream);
    let frames = [read_frame(&mut cur), read_frame(&mut cur)];
    ensure!(
        matches!(&frames, [Ok(a), Ok(b)] if *a == hs && *b == req && encode_frame(a) == HANDSHAKE && encode_frame(b) == REQUEST),
        "recorded stream"
    );

    let server = StubServer::spawn(StubConfig::new(StubMode::Zero)).map_err(|e| e.to_string())?;
    let sched = build_schedule(ScheduleConfig::default()).unwrap();
    let mut remote = RemoteDenoiser::connect(server.endpoint(), ScheduleConfig::default(), Duration::from_secs(30))
        .map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let p = random_problem(&mut rng, 0.16, false);
    let opts = SampleOptions { seed: 3, stream: 2, ..Default::default() };
    let mut remote_steps = Vec::new();
    let a = restore_observed(&p, &mut remote, &sched, opts, |v| remote_steps.push(v.y_prev.clone()))
        .map_err(|e| e.to_string())?;
    let mut local_steps = Vec::new();
    let b = restore_observed(&p, &mut zero_denoiser(), &sched, opts, |v| local_steps.push(v.y_prev.clone()))
        .map_err(|e| e.to_string())?;
    let bits = |xs: &[Array2<f64>]| xs.iter().flat_map(|x| x.iter().map(|v| v.to_bits())).collect::<Vec<u64>>();
    ensure!(bits(&remote_steps) == bits(&local_steps) && bits(&[a.y0]) == bits(&[b.y0]), "remote trajectory differs");
    Ok(format!("goldens decode; {} remote steps bit-identical", remote_steps.len()))
}
