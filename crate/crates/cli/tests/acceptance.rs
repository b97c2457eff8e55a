//! Acceptance suite. Runs every criterion in order, prints one PASS/FAIL line per
//! criterion and exits nonzero if any fails.
//!
//! Runs without the libtest harness so that the timing criterion is not disturbed by
//! other tests running in parallel.

use std::collections::HashMap;
use std::f64::consts::FRAC_PI_2;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use liff::detector::find_extrema;
use liff::focalstack::slope_range;
use liff::oracle::{brute_force_extrema, build_6d_space};
use liff::synth::{add_noise, evaluate, render_lf, run_trials, Disk, EvalReport, Method, TrialSummary};
use liff::synth::{DEFAULT_TOL_PX, DEFAULT_TOL_SCALE};
use liff::{
    build_focal_stack, build_scale_slope_space, compute_descriptor, detect, normalize_rootsift, sift_detect,
    ConsolidationParams, DetectorParams, Image, Keypoint, LfDims, LightField, SyntheticScene,
};
use liff_cli::args::DetectorKind;
use liff_cli::commands::{bench, render, OutputFormat};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TRIALS: usize = 25;
const MASTER_SEED: u64 = 42;
const AGREEMENT: f64 = 0.25;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// Monte-Carlo results shared between criteria 2 and 3.
#[derive(Default)]
struct TrialCache {
    runs: HashMap<(&'static str, u64), Vec<EvalReport>>,
}

impl TrialCache {
    fn get(&mut self, scene: &SyntheticScene, clean: &LightField, method: Method, variance: f64) -> &[EvalReport] {
        self.runs.entry((method.name(), variance.to_bits())).or_insert_with(|| {
            run_trials(scene, clean, method, &DetectorParams::default(), variance, TRIALS, MASTER_SEED)
                .expect("trial run")
        })
    }
}

fn mean_tp_count(reports: &[EvalReport]) -> f64 {
    reports.iter().map(|r| r.tp_count as f64).sum::<f64>() / reports.len() as f64
}

fn random_lf(seed: u64) -> LightField {
    let dims = LfDims::new(5, 5, 48, 48);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if seed % 2 == 0 {
        // Gaussian blobs at the detectable scales, each with its own slope, plus
        // independent per-view noise.
        let blobs: Vec<[f64; 5]> = (0..30)
            .map(|_| {
                [
                    rng.random_range(12.0..36.0),
                    rng.random_range(12.0..36.0),
                    rng.random_range(1.0..2.0),
                    rng.random_range(-0.3..0.3),
                    rng.random_range(-0.3..0.3),
                ]
            })
            .collect();
        return LightField::from_fn(dims, |s, t, u, v| {
            let (so, to) = (dims.s_offset(s), dims.t_offset(t));
            let signal: f64 = blobs
                .iter()
                .map(|&[cu, cv, sigma, weight, slope]| {
                    let (x, y) = (u as f64 - cu + slope * so, v as f64 - cv + slope * to);
                    weight * (-(x * x + y * y) / (2.0 * sigma * sigma)).exp()
                })
                .sum();
            (0.5 + signal + 0.02 * (rng.random::<f64>() - 0.5)).clamp(0.0, 1.0)
        })
        .unwrap();
    }
    // Small disks inside the region the oracle computes exactly.
    let disks = (0..12)
        .map(|_| Disk {
            intensity: Some(rng.random_range(0.1..0.9)),
            ..Disk::new(
                rng.random_range(14.0..34.0),
                rng.random_range(14.0..34.0),
                rng.random_range(1.0..2.5),
                rng.random_range(-0.4..0.4),
            )
        })
        .collect();
    let scene = SyntheticScene {
        dims,
        background: 0.5,
        contrast: 0.1,
        disks,
        occluders: Vec::new(),
    };
    add_noise(&render_lf(&scene).unwrap(), 1e-3, seed).unwrap()
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    // Two scales per octave give four DoG levels. A small base scale keeps the
    // oracle's unpadded interior non-empty at 48x48.
    let params = DetectorParams {
        first_octave: 0,
        num_octaves: 1,
        levels_per_octave: 2,
        base_sigma: 0.8,
        slopes: Some(vec![-1.0, 0.0, 1.0]),
        ..Default::default()
    };
    let gate = 0.8 * params.peak_threshold;
    let (mut max_diff, mut total, mut mismatched) = (0.0f64, 0usize, 0usize);
    let count = 12;
    for seed in 0..count {
        let lf = random_lf(seed);
        let oracle = build_6d_space(&lf, &params).unwrap();
        let stack = build_focal_stack(&lf, &oracle.slopes).unwrap();
        let space = build_scale_slope_space(&stack, &params).unwrap();
        let m = oracle.margin;
        let n = lf.dims().nu;
        for (si, levels) in oracle.dogs.iter().enumerate() {
            for (li, exact) in levels.iter().enumerate() {
                let fast = space.dog(si, 0, li);
                for u in m..n - m {
                    for v in m..n - m {
                        max_diff = max_diff.max((fast.get(u, v) - exact.get(u, v)).abs());
                    }
                }
            }
        }
        // Candidates one pixel inside the exact region so every neighbour is exact.
        let (lo, hi) = (m + 1, n - m - 1);
        let mut expected = brute_force_extrema(&oracle.dogs, gate, lo, hi);
        let mut found: Vec<_> = find_extrema(&space, params.peak_threshold)
            .unwrap()
            .into_iter()
            .filter(|e| (lo..hi).contains(&e.u) && (lo..hi).contains(&e.v))
            .map(|e| (e.slope, e.level, e.u, e.v))
            .collect();
        expected.sort_unstable();
        found.sort_unstable();
        total += expected.len();
        if expected != found {
            mismatched += 1;
        }
    }
    let elapsed = start.elapsed();
    outcome(
        max_diff <= 1e-6 && mismatched == 0 && elapsed < Duration::from_secs(120),
        format!(
            "{count} light fields, max |D diff| {max_diff:.2e}, {total} interior extrema, {mismatched} mismatched sets, {:.1} s",
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_2(cache: &mut TrialCache, scene: &SyntheticScene, clean: &LightField) -> Outcome {
    let start = Instant::now();
    let n = scene.disks.len() as f64;
    let step = 2.0 / (DetectorParams::default().slopes_for(scene.dims).len() - 1) as f64;

    let low = TrialSummary::from_reports(cache.get(scene, clean, Method::Liff, 1e-3));
    let low_tp = mean_tp_count(cache.get(scene, clean, Method::Liff, 1e-3));
    let high_reports = cache.get(scene, clean, Method::Liff, 1e-1);
    let high = TrialSummary::from_reports(high_reports);
    let high_tp = mean_tp_count(high_reports);
    let sift_reports = cache.get(scene, clean, Method::Sift, 1e-1);
    let sift = TrialSummary::from_reports(sift_reports);
    let sift_tp = mean_tp_count(sift_reports);
    let rs_reports = cache.get(scene, clean, Method::RepeatedSift { agreement: AGREEMENT }, 1e-1);
    let rs = TrialSummary::from_reports(rs_reports);
    let rs_tp = mean_tp_count(rs_reports);
    let elapsed = start.elapsed();

    let rmse = high.mean_slope_rmse.unwrap_or(f64::INFINITY);
    let checks = [
        low_tp == n,
        low.mean_fp_count == 0.0,
        high_tp == n,
        rmse <= step,
        sift_tp < n,
        sift.mean_fp_count > 0.0,
        rs.mean_fp_count == 0.0,
        rs_tp < n,
        elapsed < Duration::from_secs(15 * 60),
    ];
    outcome(
        checks.iter().all(|&c| c),
        format!(
            "LiFF 1e-3 TP {low_tp:.2}/{n} FP {:.2} (max {}); LiFF 1e-1 TP {high_tp:.2}/{n} slope RMSE {rmse:.3} (step {step}); \
             SIFT 1e-1 TP {sift_tp:.2} FP {:.2}; repeated SIFT 1e-1 TP {rs_tp:.2} FP {:.2}; {:.0} s",
            low.mean_fp_count,
            low.max_fp_count,
            sift.mean_fp_count,
            rs.mean_fp_count,
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_3(cache: &mut TrialCache, scene: &SyntheticScene, clean: &LightField) -> Outcome {
    let variances = [1e-5, 1e-4, 1e-3, 1e-2, 1e-1];
    let mut largest = |method: Method| -> (Option<f64>, Vec<f64>) {
        let rates: Vec<f64> = variances
            .iter()
            .map(|&v| TrialSummary::from_reports(cache.get(scene, clean, method, v)).mean_tp_rate)
            .collect();
        let best = variances.iter().zip(&rates).filter(|(_, &r)| r >= 0.95).map(|(&v, _)| v).last();
        (best, rates)
    };
    let (liff, liff_rates) = largest(Method::Liff);
    let (sift, sift_rates) = largest(Method::Sift);
    let pass = match (liff, sift) {
        (Some(l), Some(s)) => l >= 10.0 * s * (1.0 - 1e-9),
        // SIFT never reaches the bar inside the sweep.
        (Some(_), None) => true,
        _ => false,
    };
    let fmt = |r: &[f64]| r.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" ");
    outcome(
        pass,
        format!(
            "largest variance with mean TP >= 0.95: LiFF {liff:?}, SIFT {sift:?}; TP over 1e-5..1e-1 LiFF [{}] SIFT [{}]",
            fmt(&liff_rates),
            fmt(&sift_rates)
        ),
    )
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let disks = (0..12)
        .map(|k| {
            Disk::new(
                20.0 + 30.0 * (k % 4) as f64 + rng.random_range(-3.0..3.0),
                25.0 + 38.0 * (k / 4) as f64 + rng.random_range(-3.0..3.0),
                rng.random_range(3.0..6.0),
                rng.random_range(-0.7..0.7),
            )
        })
        .collect();
    let scene = SyntheticScene {
        dims: LfDims::new(11, 11, 128, 128),
        background: 0.45,
        contrast: 0.1,
        disks,
        occluders: Vec::new(),
    };
    let lf = add_noise(&render_lf(&scene).unwrap(), 1e-3, 4).unwrap();
    let params = DetectorParams {
        slopes: Some(slope_range(-1.0, 1.0, 11)),
        ..Default::default()
    };
    let cp = ConsolidationParams {
        agreement: AGREEMENT,
        ..Default::default()
    };
    let report = bench(&lf, &[DetectorKind::Liff, DetectorKind::RepeatedSift], &params, &cp, 3).unwrap();
    let measured = report.measured_dog_ratio.unwrap();
    outcome(
        (5.5..=22.0).contains(&measured),
        format!(
            "11x11 views, 11 slopes: DoG time ratio repeated SIFT / LiFF {measured:.2}, predicted {:.2}, band [5.5, 22]",
            report.predicted_ratio
        ),
    )
}

fn criterion_5() -> Outcome {
    let params = DetectorParams::default();
    let mut passed = 0;
    let mut notes = Vec::new();
    for seed in 0..10u64 {
        let scene = SyntheticScene::occlusion_scene(seed);
        let step = 2.0 / (params.slopes_for(scene.dims).len() - 1) as f64;
        let visibility = scene.visibility(0);
        let lf = render_lf(&scene).unwrap();
        let liff = detect(&lf, &params).unwrap();
        let r = evaluate(&liff, &scene, DEFAULT_TOL_PX, DEFAULT_TOL_SCALE);
        let slope_err = r
            .assignments
            .first()
            .and_then(|a| liff[a.feature].slope)
            .map(|l| (l - scene.disks[0].slope).abs());
        let sift = sift_detect(&lf.center_view().unwrap(), &params).unwrap();
        let sift_tp = evaluate(&sift, &scene, DEFAULT_TOL_PX, DEFAULT_TOL_SCALE).tp_count;
        let ok = visibility >= 0.6 && slope_err.is_some_and(|e| e <= step) && sift_tp == 0;
        if ok {
            passed += 1;
        } else {
            notes.push(format!(
                "seed {seed}: visibility {visibility:.2}, slope error {slope_err:?}, SIFT TP {sift_tp}"
            ));
        }
    }
    let mut detail = format!("{passed}/10 layouts: target found by LiFF within one slope step and missed by SIFT");
    if !notes.is_empty() {
        detail.push_str(&format!("; {}", notes.join("; ")));
    }
    outcome(passed == 10, detail)
}

fn smooth_image(rng: &mut ChaCha8Rng, n: usize) -> Image {
    let blobs: Vec<(f64, f64, f64, f64, f64)> = (0..12)
        .map(|_| {
            (
                rng.random_range(0.0..n as f64),
                rng.random_range(0.0..n as f64),
                rng.random_range(4.0..40.0),
                rng.random_range(4.0..40.0),
                rng.random_range(-0.3..0.3),
            )
        })
        .collect();
    Image::from_fn(n, n, |u, v| {
        0.5 + blobs
            .iter()
            .map(|&(cu, cv, a, b, w)| w * (-((u as f64 - cu).powi(2) / a + (v as f64 - cv).powi(2) / b)).exp())
            .sum::<f64>()
    })
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut norm_err, mut bc_err) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        // Sparse vectors like real descriptors, with some exact zeros.
        let mut draw = || -> Vec<f64> {
            (0..liff::DESCRIPTOR_LEN)
                .map(|_| if rng.random_bool(0.3) { 0.0 } else { rng.random_range(0.0..1.0) })
                .collect()
        };
        let (p, q) = (draw(), draw());
        let (a, b) = (normalize_rootsift(&p), normalize_rootsift(&q));
        norm_err = norm_err.max((a.iter().map(|x| x * x).sum::<f64>().sqrt() - 1.0).abs());
        let (lp, lq): (f64, f64) = (p.iter().sum(), q.iter().sum());
        let bc: f64 = p.iter().zip(&q).map(|(x, y)| (x / lp * y / lq).sqrt()).sum();
        let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        bc_err = bc_err.max((dot - bc).abs());
    }

    let n = 64;
    let mut worst_rms = 0.0f64;
    for _ in 0..5 {
        let img = smooth_image(&mut rng, n);
        // new(u, v) = old(v, n-1-u); the old point (a, b) moves to (n-1-b, a).
        let rot = Image::from_fn(n, n, |u, v| img.get(v, n - 1 - u));
        for _ in 0..4 {
            let (a, b) = (rng.random_range(20.0..44.0), rng.random_range(20.0..44.0));
            let sigma = rng.random_range(1.0..2.5);
            let theta = rng.random_range(0.0..std::f64::consts::TAU);
            let d0 = normalize_rootsift(&compute_descriptor(
                &img,
                &Keypoint {
                    u: a,
                    v: b,
                    sigma,
                    orientation: theta,
                },
            ));
            let d1 = normalize_rootsift(&compute_descriptor(
                &rot,
                &Keypoint {
                    u: (n - 1) as f64 - b,
                    v: a,
                    sigma,
                    orientation: theta + FRAC_PI_2,
                },
            ));
            let rms = (d0.iter().zip(&d1).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / d0.len() as f64).sqrt();
            worst_rms = worst_rms.max(rms);
        }
    }
    outcome(
        norm_err <= 1e-9 && bc_err <= 1e-9 && worst_rms <= 1e-3,
        format!(
            "max |norm - 1| {norm_err:.1e}, max |dot - BC| {bc_err:.1e} over 1000 pairs; worst 90 degree rotation RMS {worst_rms:.1e}"
        ),
    )
}

fn run_detect(input: &Path, output: &Path, detector: &str, threads: usize) -> bool {
    Command::new(env!("CARGO_BIN_EXE_liff"))
        .arg("detect")
        .arg(input)
        .arg(output)
        .args(["--detector", detector])
        .env("LIFF_THREADS", threads.to_string())
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn criterion_7() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let disks = (0..6)
        .map(|k| {
            Disk::new(
                22.0 + 26.0 * (k % 3) as f64,
                30.0 + 36.0 * (k / 3) as f64,
                rng.random_range(2.5..5.0),
                rng.random_range(-0.7..0.7),
            )
        })
        .collect();
    let scene = SyntheticScene {
        dims: LfDims::new(9, 9, 96, 96),
        background: 0.45,
        contrast: 0.1,
        disks,
        occluders: Vec::new(),
    };
    let input = dir.path().join("lf");
    render(&scene, 1e-3, 7, &input, OutputFormat::Grid).unwrap();
    let mut failures = Vec::new();
    let mut counts = Vec::new();
    for detector in ["liff", "sift", "repeated-sift"] {
        let mut files = Vec::new();
        for threads in [1, 8] {
            for run in 0..2 {
                let out = dir.path().join(format!("{detector}-{threads}-{run}.csv"));
                if !run_detect(&input, &out, detector, threads) {
                    failures.push(format!("{detector} with {threads} threads exited with an error"));
                }
                files.push(std::fs::read(&out).unwrap_or_default());
            }
        }
        if files.iter().any(|f| f != &files[0]) {
            failures.push(format!("{detector} outputs differ"));
        }
        counts.push(format!("{detector} {} rows", files[0].iter().filter(|&&b| b == b'\n').count().saturating_sub(1)));
    }
    let mut detail = format!("two runs each at LIFF_THREADS 1 and 8: {}", counts.join(", "));
    if !failures.is_empty() {
        detail.push_str(&format!("; {}", failures.join("; ")));
    }
    outcome(failures.is_empty(), detail)
}

fn main() {
    // Numeric arguments pick criteria (`cargo test --test acceptance -- 2 5`). Any
    // other name filter that does not match this suite skips it, as libtest would.
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let picked: Vec<usize> = args.iter().filter_map(|a| a.parse().ok()).collect();
    if args.iter().any(|a| a.parse::<usize>().is_err() && !"acceptance".contains(a.as_str())) {
        return;
    }
    let wanted = |i: usize| picked.is_empty() || picked.contains(&i);
    let scene = SyntheticScene::benchmark_scene();
    let clean = render_lf(&scene).unwrap();
    let mut cache = TrialCache::default();
    let mut results = Vec::new();
    let mut report = |i: usize, r: Outcome| {
        println!("criterion {i}: {} ({})", if r.pass { "PASS" } else { "FAIL" }, r.detail);
        results.push(r.pass);
    };
    if wanted(1) {
        report(1, criterion_1());
    }
    if wanted(2) {
        report(2, criterion_2(&mut cache, &scene, &clean));
    }
    if wanted(3) {
        report(3, criterion_3(&mut cache, &scene, &clean));
    }
    if wanted(4) {
        report(4, criterion_4());
    }
    if wanted(5) {
        report(5, criterion_5());
    }
    if wanted(6) {
        report(6, criterion_6());
    }
    if wanted(7) {
        report(7, criterion_7());
    }
    let passed = results.iter().filter(|&&p| p).count();
    println!("{passed} of {} criteria passed", results.len());
    if passed < results.len() {
        std::process::exit(1);
    }
}
