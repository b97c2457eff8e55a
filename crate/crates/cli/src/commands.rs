use std::io::Write;
use std::path::Path;
use std::time::Duration;

use liff::baseline::{repeated_sift_with, sift_detect_with_timings};
use liff::detector::{detect_with_timings, StageTimings};
use liff::lfcore::{load_lightfield, save_packed, save_view_grid, to_grayscale, LightFieldFormat};
use liff::synth::{add_noise, render_lf, run_trial, trial_seed, EvalReport, TrialSummary};
use liff::{match_features, work_ratio, ConsolidationParams, DetectorParams, Feature, LightField, SyntheticScene};
use rayon::prelude::*;

use crate::args::DetectorKind;
use crate::error::{CliError, CliResult};
use crate::features::{read_features, write_features};

/// Load a light field (view grid directory, PNG or packed file) as grayscale.
pub fn load_input(path: &Path) -> CliResult<LightField> {
    let lf = load_lightfield(path, LightFieldFormat::detect(path))?;
    if lf.is_grayscale() {
        Ok(lf)
    } else {
        Ok(to_grayscale(&lf)?)
    }
}

/// Run one detector. SIFT uses the central view.
pub fn run_detector(
    lf: &LightField,
    kind: DetectorKind,
    params: &DetectorParams,
    cp: &ConsolidationParams,
) -> CliResult<(Vec<Feature>, StageTimings)> {
    Ok(match kind {
        DetectorKind::Liff => detect_with_timings(lf, params)?,
        DetectorKind::Sift => sift_detect_with_timings(&lf.center_view()?, params)?,
        DetectorKind::RepeatedSift => repeated_sift_with(lf, params, cp)?,
    })
}

pub struct DetectOutcome {
    pub count: usize,
    pub timings: StageTimings,
}

pub fn detect(
    input: &Path,
    kind: DetectorKind,
    params: &DetectorParams,
    cp: &ConsolidationParams,
    out: &Path,
) -> CliResult<DetectOutcome> {
    let lf = load_input(input)?;
    let (features, timings) = run_detector(&lf, kind, params, cp)?;
    write_features(&features, out)?;
    Ok(DetectOutcome {
        count: features.len(),
        timings,
    })
}

/// Mutual nearest-neighbour matches between two feature files, written as
/// `a,b,distance,second_distance`. Returns the number of matches.
pub fn match_files<W: Write>(a: &Path, b: &Path, ratio: f64, mut out: W) -> CliResult<usize> {
    if !(ratio > 0.0) || !ratio.is_finite() {
        return Err(CliError::param(format!("ratio must be positive, got {ratio}")));
    }
    let fa = read_features(a)?;
    let fb = read_features(b)?;
    if let (Some(x), Some(y)) = (fa.first(), fb.first()) {
        if x.descriptor.len() != y.descriptor.len() {
            return Err(CliError::input(format!(
                "descriptor length mismatch: {} has {}, {} has {}",
                a.display(),
                x.descriptor.len(),
                b.display(),
                y.descriptor.len()
            )));
        }
    }
    let matches = match_features(&fa, &fb, ratio);
    writeln!(out, "a,b,distance,second_distance")?;
    for m in &matches {
        writeln!(out, "{},{},{:.8e},{:.8e}", m.a, m.b, m.distance, m.second_distance)?;
    }
    out.flush()?;
    Ok(matches.len())
}

/// Read a scene description. Unknown or malformed fields are parameter errors.
pub fn load_scene(path: &Path) -> CliResult<SyntheticScene> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    let scene: SyntheticScene =
        serde_json::from_str(&text).map_err(|e| CliError::param(format!("invalid scene {}: {e}", path.display())))?;
    scene.validate()?;
    Ok(scene)
}

pub struct SynthEvalOptions {
    pub variances: Vec<f64>,
    pub thresholds: Vec<f64>,
    pub detectors: Vec<DetectorKind>,
    pub trials: usize,
    pub seed: u64,
    pub agreement: f64,
}

pub const SYNTH_EVAL_HEADER: &str = "detector,variance,peak_threshold,trial,tp_rate,tp_count,fp_count,slope_rmse";

fn opt(x: Option<f64>) -> String {
    x.map_or("nan".to_string(), |x| format!("{x:.8e}"))
}

/// Sweep noise variance and peak threshold for each detector. Writes one row per
/// trial and a `mean` row per grid point; trial `i` always uses the same noise.
pub fn synth_eval<W: Write>(
    scene: &SyntheticScene,
    base: &DetectorParams,
    opts: &SynthEvalOptions,
    mut out: W,
) -> CliResult<Vec<(DetectorKind, f64, f64, TrialSummary)>> {
    if opts.trials == 0 {
        return Err(CliError::param("trials must be at least 1"));
    }
    if opts.variances.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(CliError::param("variances must be finite and non-negative"));
    }
    ConsolidationParams {
        agreement: opts.agreement,
        ..Default::default()
    }
    .validate()?;
    let clean = render_lf(scene)?;
    writeln!(out, "{SYNTH_EVAL_HEADER}")?;
    let mut summaries = Vec::new();
    for &kind in &opts.detectors {
        let method = kind.method(opts.agreement);
        for &threshold in &opts.thresholds {
            let params = DetectorParams {
                peak_threshold: threshold,
                ..base.clone()
            };
            params.validate()?;
            for &variance in &opts.variances {
                let reports: Vec<EvalReport> = (0..opts.trials)
                    .into_par_iter()
                    .map(|i| run_trial(scene, &clean, method, &params, variance, trial_seed(opts.seed, i as u64)))
                    .collect::<liff::Result<_>>()?;
                for (i, r) in reports.iter().enumerate() {
                    writeln!(
                        out,
                        "{},{variance:e},{threshold:e},{i},{:.8e},{},{},{}",
                        kind.name(),
                        r.tp_rate,
                        r.tp_count,
                        r.fp_count,
                        opt(r.slope_rmse)
                    )?;
                }
                let s = TrialSummary::from_reports(&reports);
                let mean_tp = reports.iter().map(|r| r.tp_count as f64).sum::<f64>() / reports.len() as f64;
                writeln!(
                    out,
                    "{},{variance:e},{threshold:e},mean,{:.8e},{:.8e},{:.8e},{}",
                    kind.name(),
                    s.mean_tp_rate,
                    mean_tp,
                    s.mean_fp_count,
                    opt(s.mean_slope_rmse)
                )?;
                summaries.push((kind, variance, threshold, s));
            }
        }
    }
    out.flush()?;
    Ok(summaries)
}

#[derive(Clone, Debug)]
pub struct BenchRow {
    pub detector: DetectorKind,
    pub repeat: usize,
    pub timings: StageTimings,
    pub features: usize,
}

#[derive(Clone, Debug)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    /// `N_s N_t / M` for the benchmarked light field.
    pub predicted_ratio: f64,
    /// Median repeated-SIFT DoG time over median LiFF DoG time, when both ran.
    pub measured_dog_ratio: Option<f64>,
}

pub const BENCH_HEADER: &str = "detector,repeat,focal_stack_s,dog_s,extrema_s,descriptors_s,total_s,features";

fn median(mut xs: Vec<Duration>) -> Duration {
    xs.sort();
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2
    }
}

impl BenchReport {
    pub fn median_dog(&self, kind: DetectorKind) -> Option<Duration> {
        let xs: Vec<Duration> = self
            .rows
            .iter()
            .filter(|r| r.detector == kind)
            .map(|r| r.timings.dog)
            .collect();
        (!xs.is_empty()).then(|| median(xs))
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> CliResult<()> {
        writeln!(out, "{BENCH_HEADER}")?;
        for r in &self.rows {
            let t = r.timings;
            writeln!(
                out,
                "{},{},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{}",
                r.detector.name(),
                r.repeat,
                t.focal_stack.as_secs_f64(),
                t.dog.as_secs_f64(),
                t.extrema.as_secs_f64(),
                t.descriptors.as_secs_f64(),
                t.total().as_secs_f64(),
                r.features
            )?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Time each detector `repeats` times on one worker thread, so that stage times
/// measure work rather than parallel speedup.
pub fn bench(
    lf: &LightField,
    detectors: &[DetectorKind],
    params: &DetectorParams,
    cp: &ConsolidationParams,
    repeats: usize,
) -> CliResult<BenchReport> {
    if repeats == 0 {
        return Err(CliError::param("repeats must be at least 1"));
    }
    if detectors.is_empty() {
        return Err(CliError::param("no detectors to benchmark"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| CliError::param(e.to_string()))?;
    let mut rows = Vec::new();
    for repeat in 0..repeats {
        for &detector in detectors {
            let (features, timings) = pool.install(|| run_detector(lf, detector, params, cp))?;
            rows.push(BenchRow {
                detector,
                repeat,
                timings,
                features: features.len(),
            });
        }
    }
    let m = params.slopes_for(lf.dims()).len();
    let mut report = BenchReport {
        rows,
        predicted_ratio: work_ratio(lf.dims(), m),
        measured_dog_ratio: None,
    };
    if let (Some(rs), Some(l)) = (
        report.median_dog(DetectorKind::RepeatedSift),
        report.median_dog(DetectorKind::Liff),
    ) {
        report.measured_dog_ratio = Some(rs.as_secs_f64() / l.as_secs_f64().max(1e-12));
    }
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputFormat {
    Grid,
    Packed,
}

/// Render a scene, optionally add noise, and save it.
pub fn render(scene: &SyntheticScene, variance: f64, seed: u64, out: &Path, format: OutputFormat) -> CliResult<()> {
    if !(variance >= 0.0) || !variance.is_finite() {
        return Err(CliError::param("variance must be finite and non-negative"));
    }
    let lf = add_noise(&render_lf(scene)?, variance, seed)?;
    match format {
        OutputFormat::Grid => save_view_grid(&lf, out)?,
        OutputFormat::Packed => save_packed(&lf, out)?,
    }
    Ok(())
}
