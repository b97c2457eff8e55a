//! Synthetic disk light fields with ground truth, noise injection and scoring.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::{repeated_sift, sift_detect};
use crate::detector::{detect, DetectorParams, Feature};
use crate::error::{Error, Result};
use crate::lfcore::{Image, LfDims, LightField};

/// Subsamples per pixel side for anti-aliased rendering.
pub const SUPERSAMPLING: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Disk {
    /// Center in central-view pixels.
    pub u: f64,
    pub v: f64,
    pub radius: f64,
    pub slope: f64,
    /// Absolute intensity; defaults to `background + contrast`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intensity: Option<f64>,
}

impl Disk {
    pub fn new(u: f64, v: f64, radius: f64, slope: f64) -> Self {
        Self {
            u,
            v,
            radius,
            slope,
            intensity: None,
        }
    }

    /// Scale at which a disk of this radius gives its strongest DoG response.
    pub fn expected_sigma(&self) -> f64 {
        self.radius / std::f64::consts::SQRT_2
    }

    /// Center of the disk as seen from a view with offsets `(s', t')`.
    pub fn center_in_view(&self, s_off: f64, t_off: f64) -> (f64, f64) {
        (self.u - self.slope * s_off, self.v - self.slope * t_off)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticScene {
    pub dims: LfDims,
    pub background: f64,
    pub contrast: f64,
    /// Ground-truth disks.
    pub disks: Vec<Disk>,
    /// Extra disks that are rendered but not scored.
    #[serde(default)]
    pub occluders: Vec<Disk>,
}

impl SyntheticScene {
    pub fn validate(&self) -> Result<()> {
        let d = self.dims;
        if d.ns == 0 || d.nt == 0 || d.nu == 0 || d.nv == 0 {
            return Err(Error::InvalidParameter("scene dimensions must be positive".into()));
        }
        d.center()?;
        if !(self.contrast > 0.0 && self.contrast <= 1.0) {
            return Err(Error::InvalidParameter("contrast must lie in (0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.background) {
            return Err(Error::InvalidParameter("background must lie in [0, 1]".into()));
        }
        for (i, disk) in self.disks.iter().chain(&self.occluders).enumerate() {
            let finite = [disk.u, disk.v, disk.radius, disk.slope].iter().all(|x| x.is_finite());
            if !finite || !(disk.radius > 0.0) {
                return Err(Error::InvalidParameter(format!("disk {i} needs finite values and a positive radius")));
            }
            let value = self.intensity_of(disk);
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::InvalidParameter(format!("disk {i} intensity {value} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn intensity_of(&self, disk: &Disk) -> f64 {
        disk.intensity.unwrap_or(self.background + self.contrast)
    }

    fn all_disks(&self) -> impl Iterator<Item = &Disk> {
        self.disks.iter().chain(&self.occluders)
    }

    /// Disks ordered far to near (ascending slope); later entries are painted on top.
    fn paint_order(&self) -> Vec<&Disk> {
        let mut order: Vec<&Disk> = self.all_disks().collect();
        order.sort_by(|a, b| a.slope.total_cmp(&b.slope));
        order
    }

    /// The scene used for the noise experiments: 26 disks of radius 4 to 5.5 px over a
    /// `9x9x256x256` light field, slopes spread over `[-0.7, 0.7]`, contrast 0.1.
    ///
    /// Disks sit on a jittered `6x5` grid with four cells left empty. The layout is
    /// generated from a fixed seed and never changes.
    pub fn benchmark_scene() -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(0x4c69_4646);
        let (cols, rows) = (6usize, 5usize);
        let size = 256.0;
        let (cw, ch) = (size / cols as f64, size / rows as f64);
        let skip = [3usize, 10, 17, 26];
        let mut cells: Vec<usize> = (0..cols * rows).filter(|c| !skip.contains(c)).collect();
        cells.sort_unstable();
        let n = cells.len();
        let mut disks = Vec::with_capacity(n);
        for (k, c) in cells.into_iter().enumerate() {
            let (i, j) = (c % cols, c / cols);
            // Radii cycle through the range so every part of it is represented.
            let radius = 4.0 + 1.5 * ((k * 7) % n) as f64 / (n - 1) as f64;
            let slope = -0.7 + 1.4 * ((k * 11) % n) as f64 / (n - 1) as f64;
            let jitter = 0.2;
            let u = (i as f64 + 0.5 + rng.random_range(-jitter..jitter)) * cw;
            let v = (j as f64 + 0.5 + rng.random_range(-jitter..jitter)) * ch;
            disks.push(Disk::new(u, v, radius, slope));
        }
        Self {
            dims: LfDims::new(9, 9, 256, 256),
            background: 0.45,
            contrast: 0.1,
            disks,
            occluders: Vec::new(),
        }
    }

    /// A small scene with one target disk hidden behind a nearer, larger disk in the
    /// central view but visible in most other views. `seed` varies the placement.
    ///
    /// The target is `disks[0]`; the occluder is `occluders[0]`.
    pub fn occlusion_scene(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let target_radius = 2.0 + rng.random_range(0.0..0.5);
        let occluder_radius = 2.0 * target_radius;
        let cu = rng.random_range(40.0..56.0);
        let cv = rng.random_range(40.0..56.0);
        // Offset small enough that the target stays fully covered in the central view.
        let slack = occluder_radius - target_radius - 0.5;
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        let r = rng.random_range(0.0..slack);
        let target = Disk::new(cu + r * angle.cos(), cv + r * angle.sin(), target_radius, -0.75);
        let background = 0.45;
        let contrast = 0.1;
        let occluder = Disk {
            intensity: Some(background - contrast),
            ..Disk::new(cu, cv, occluder_radius, 1.0)
        };
        Self {
            dims: LfDims::new(9, 9, 96, 96),
            background,
            contrast,
            disks: vec![target],
            occluders: vec![occluder],
        }
    }

    /// Fraction of views in which at least half of ground-truth disk `index` is unoccluded.
    pub fn visibility(&self, index: usize) -> f64 {
        let target = &self.disks[index];
        let d = self.dims;
        let nearer: Vec<&Disk> = self
            .all_disks()
            .enumerate()
            .filter(|&(i, o)| i != index && o.slope > target.slope)
            .map(|(_, o)| o)
            .collect();
        let samples = 32;
        let mut visible_views = 0;
        for s in 0..d.ns {
            for t in 0..d.nt {
                let (so, to) = (d.s_offset(s), d.t_offset(t));
                let (tu, tv) = target.center_in_view(so, to);
                let (mut inside, mut clear) = (0, 0);
                for i in 0..samples {
                    for j in 0..samples {
                        let x = tu + target.radius * (2.0 * (i as f64 + 0.5) / samples as f64 - 1.0);
                        let y = tv + target.radius * (2.0 * (j as f64 + 0.5) / samples as f64 - 1.0);
                        if (x - tu).powi(2) + (y - tv).powi(2) > target.radius * target.radius {
                            continue;
                        }
                        inside += 1;
                        let hidden = nearer.iter().any(|o| {
                            let (ou, ov) = o.center_in_view(so, to);
                            (x - ou).powi(2) + (y - ov).powi(2) <= o.radius * o.radius
                        });
                        if !hidden {
                            clear += 1;
                        }
                    }
                }
                if 2 * clear >= inside {
                    visible_views += 1;
                }
            }
        }
        visible_views as f64 / d.num_views() as f64
    }
}

fn disk_visible_somewhere(disk: &Disk, dims: LfDims) -> bool {
    let (nu, nv) = (dims.nu as f64, dims.nv as f64);
    (0..dims.ns).any(|s| {
        (0..dims.nt).any(|t| {
            let (cu, cv) = disk.center_in_view(dims.s_offset(s), dims.t_offset(t));
            // Closest point of the pixel area [-0.5, n-0.5] to the center.
            let du = cu - cu.clamp(-0.5, nu - 0.5);
            let dv = cv - cv.clamp(-0.5, nv - 0.5);
            du * du + dv * dv < disk.radius * disk.radius
        })
    })
}

/// Render one view by painting supersampled disks far to near, then box-averaging.
fn render_view(scene: &SyntheticScene, order: &[&Disk], s_off: f64, t_off: f64) -> Image {
    let d = scene.dims;
    let ss = SUPERSAMPLING;
    let (su, sv) = (d.nu * ss, d.nv * ss);
    let mut fine = vec![scene.background; su * sv];
    // Subsample (i, j) sits at pixel coordinate (i + 0.5) / ss - 0.5.
    let coord = |i: usize| (i as f64 + 0.5) / ss as f64 - 0.5;
    let index_range = |lo: f64, hi: f64, n: usize| {
        let a = ((lo + 0.5) * ss as f64 - 0.5).ceil().max(0.0) as usize;
        let b = ((hi + 0.5) * ss as f64 - 0.5).floor();
        if b < 0.0 {
            return a..a;
        }
        a..((b as usize) + 1).min(n)
    };
    for disk in order {
        let (cu, cv) = disk.center_in_view(s_off, t_off);
        let r = disk.radius;
        let value = scene.intensity_of(disk);
        for i in index_range(cu - r, cu + r, su) {
            let x = coord(i) - cu;
            for j in index_range(cv - r, cv + r, sv) {
                let y = coord(j) - cv;
                if x * x + y * y <= r * r {
                    fine[i * sv + j] = value;
                }
            }
        }
    }
    let norm = 1.0 / (ss * ss) as f64;
    Image::from_fn(d.nu, d.nv, |u, v| {
        let mut acc = 0.0;
        for i in u * ss..(u + 1) * ss {
            for j in v * ss..(v + 1) * ss {
                acc += fine[i * sv + j];
            }
        }
        acc * norm
    })
}

/// Render a grayscale light field of the scene.
pub fn render_lf(scene: &SyntheticScene) -> Result<LightField> {
    scene.validate()?;
    for (index, disk) in scene.all_disks().enumerate() {
        if !disk_visible_somewhere(disk, scene.dims) {
            return Err(Error::OutOfFrame { index });
        }
    }
    let d = scene.dims;
    let order = scene.paint_order();
    let views: Vec<Image> = (0..d.num_views())
        .into_par_iter()
        .map(|k| render_view(scene, &order, d.s_offset(k / d.nt), d.t_offset(k % d.nt)))
        .collect();
    LightField::from_views(d.ns, d.nt, views)
}

/// Add i.i.d. zero-mean Gaussian noise of the given variance, clipped to `[0, 1]`.
pub fn add_noise(lf: &LightField, variance: f64, seed: u64) -> Result<LightField> {
    if !(variance >= 0.0) || !variance.is_finite() {
        return Err(Error::InvalidParameter("noise variance must be non-negative".into()));
    }
    if variance == 0.0 {
        return Ok(lf.clone());
    }
    let normal = Normal::new(0.0, variance.sqrt()).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = lf
        .data()
        .iter()
        .map(|&x| (x + normal.sample(&mut rng)).clamp(0.0, 1.0))
        .collect();
    LightField::new(lf.dims(), lf.channels(), data)
}

/// Seed for trial `trial` of a run seeded with `master`: the first output of the
/// `trial`-th stream of a generator keyed by `master`.
pub fn trial_seed(master: u64, trial: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(trial);
    rng.random()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    /// Index into the evaluated feature list.
    pub feature: usize,
    pub disk: usize,
    pub distance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tp_rate: f64,
    pub tp_count: usize,
    pub num_truth: usize,
    pub fp_count: usize,
    /// Root mean square slope error over true positives that carry a slope.
    pub slope_rmse: Option<f64>,
    pub assignments: Vec<Assignment>,
}

/// Score detections against the scene's ground-truth disks.
///
/// Features that differ only in orientation are one detection. Detection-disk pairs
/// within `tol_px` of the disk center and within a factor `tol_scale` of its expected
/// scale are assigned greedily by increasing distance, one-to-one. Unassigned
/// detections are false positives. The result does not depend on feature order.
pub fn evaluate(features: &[Feature], scene: &SyntheticScene, tol_px: f64, tol_scale: f64) -> EvalReport {
    let key = |f: &Feature| {
        (
            f.u.to_bits(),
            f.v.to_bits(),
            f.sigma.to_bits(),
            f.slope.map(f64::to_bits),
        )
    };
    let mut order: Vec<usize> = (0..features.len()).collect();
    order.sort_by(|&a, &b| {
        let (fa, fb) = (&features[a], &features[b]);
        fa.u.total_cmp(&fb.u)
            .then(fa.v.total_cmp(&fb.v))
            .then(fa.sigma.total_cmp(&fb.sigma))
            .then(fa.slope.unwrap_or(0.0).total_cmp(&fb.slope.unwrap_or(0.0)))
    });
    let mut detections: Vec<usize> = Vec::new();
    for i in order {
        if detections.last().is_none_or(|&j| key(&features[j]) != key(&features[i])) {
            detections.push(i);
        }
    }

    let mut pairs = Vec::new();
    for (di, &fi) in detections.iter().enumerate() {
        let f = &features[fi];
        for (k, disk) in scene.disks.iter().enumerate() {
            let dist = ((f.u - disk.u).powi(2) + (f.v - disk.v).powi(2)).sqrt();
            let ratio = f.sigma / disk.expected_sigma();
            if dist <= tol_px && ratio.max(1.0 / ratio) <= tol_scale {
                pairs.push((dist, di, k));
            }
        }
    }
    // Detections are in canonical order, so ties break independently of input order.
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_det = vec![false; detections.len()];
    let mut used_disk = vec![false; scene.disks.len()];
    let mut assignments = Vec::new();
    for (dist, di, k) in pairs {
        if used_det[di] || used_disk[k] {
            continue;
        }
        used_det[di] = true;
        used_disk[k] = true;
        assignments.push(Assignment {
            feature: detections[di],
            disk: k,
            distance: dist,
        });
    }
    assignments.sort_by_key(|a| a.disk);
    let tp = assignments.len();
    let errors: Vec<f64> = assignments
        .iter()
        .filter_map(|a| features[a.feature].slope.map(|l| l - scene.disks[a.disk].slope))
        .collect();
    let slope_rmse = (!errors.is_empty()).then(|| (errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt());
    let n = scene.disks.len();
    EvalReport {
        tp_rate: if n == 0 { 0.0 } else { tp as f64 / n as f64 },
        tp_count: tp,
        num_truth: n,
        fp_count: detections.len() - tp,
        slope_rmse,
        assignments,
    }
}

/// Default scoring tolerances: center distance in pixels and scale ratio.
pub const DEFAULT_TOL_PX: f64 = 3.0;
pub const DEFAULT_TOL_SCALE: f64 = 1.5;

/// Detector under evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Liff,
    Sift,
    RepeatedSift { agreement: f64 },
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Liff => "liff",
            Method::Sift => "sift",
            Method::RepeatedSift { .. } => "repeated-sift",
        }
    }

    pub fn run(&self, lf: &LightField, params: &DetectorParams) -> Result<Vec<Feature>> {
        match *self {
            Method::Liff => detect(lf, params),
            Method::Sift => sift_detect(&lf.center_view()?, params),
            Method::RepeatedSift { agreement } => repeated_sift(lf, params, agreement),
        }
    }
}

/// Render, add noise with `seed`, detect and score once.
pub fn run_trial(
    scene: &SyntheticScene,
    clean: &LightField,
    method: Method,
    params: &DetectorParams,
    variance: f64,
    seed: u64,
) -> Result<EvalReport> {
    let noisy = add_noise(clean, variance, seed)?;
    let features = method.run(&noisy, params)?;
    Ok(evaluate(&features, scene, DEFAULT_TOL_PX, DEFAULT_TOL_SCALE))
}

/// Mean of per-trial reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub trials: usize,
    pub mean_tp_rate: f64,
    pub min_tp_count: usize,
    pub mean_fp_count: f64,
    pub max_fp_count: usize,
    /// Mean over trials that have a slope error.
    pub mean_slope_rmse: Option<f64>,
}

impl TrialSummary {
    pub fn from_reports(reports: &[EvalReport]) -> Self {
        let n = reports.len().max(1) as f64;
        let rmses: Vec<f64> = reports.iter().filter_map(|r| r.slope_rmse).collect();
        Self {
            trials: reports.len(),
            mean_tp_rate: reports.iter().map(|r| r.tp_rate).sum::<f64>() / n,
            min_tp_count: reports.iter().map(|r| r.tp_count).min().unwrap_or(0),
            mean_fp_count: reports.iter().map(|r| r.fp_count as f64).sum::<f64>() / n,
            max_fp_count: reports.iter().map(|r| r.fp_count).max().unwrap_or(0),
            mean_slope_rmse: (!rmses.is_empty()).then(|| rmses.iter().sum::<f64>() / rmses.len() as f64),
        }
    }
}

/// Run `trials` seeded trials of one method at one noise level. Trial `i` uses
/// `trial_seed(master_seed, i)`.
pub fn run_trials(
    scene: &SyntheticScene,
    clean: &LightField,
    method: Method,
    params: &DetectorParams,
    variance: f64,
    trials: usize,
    master_seed: u64,
) -> Result<Vec<EvalReport>> {
    (0..trials)
        .map(|i| run_trial(scene, clean, method, params, variance, trial_seed(master_seed, i as u64)))
        .collect()
}
