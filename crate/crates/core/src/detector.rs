//! Joint scale-slope extremum detection.
//!
//! A feature is a sample of `D(u,v,σ,λ)` that is strictly larger (or strictly smaller)
//! than its 80 neighbours in the `3x3x3x3` block spanning position, DoG level and
//! slope index. Candidates are refined with a 4D quadratic fit, thresholded on the
//! refined response, screened for edge responses, then given one or more dominant
//! orientations and a descriptor taken from the focal stack slice nearest their slope.

use std::time::{Duration, Instant};

use nalgebra::{Matrix4, Vector4};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::descriptor::{compute_descriptor, normalize_rootsift};
use crate::error::{Error, Result};
use crate::focalstack::{build_focal_stack, default_slopes};
use crate::lfcore::{Image, LfDims, LightField};
use crate::scalespace::{build_scale_slope_space, check_scale_params, ScaleSlopeSpace};

/// Gate applied to raw samples before refinement, as a fraction of the peak threshold.
pub const PRE_REFINEMENT_GATE: f64 = 0.8;
pub const MAX_REFINEMENT_STEPS: usize = 5;
/// The quadratic fit moves to a neighbouring sample when an offset exceeds this.
/// Slightly above one half so that a peak midway between two samples does not make
/// the fit oscillate between them.
pub const RECENTER_THRESHOLD: f64 = 0.6;

pub const ORIENTATION_BINS: usize = 36;
/// Orientation window sigma as a multiple of the keypoint scale.
pub const ORIENTATION_WINDOW: f64 = 1.5;
/// Secondary orientation peaks at least this fraction of the maximum are kept.
pub const ORIENTATION_PEAK_RATIO: f64 = 0.8;
const ORIENTATION_SMOOTHING_PASSES: usize = 6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorParams {
    /// Minimum refined `|D|`, in intensity units of the `[0, 1]` input.
    pub peak_threshold: f64,
    /// Maximum principal curvature ratio `r`; candidates with `tr²/det ≥ (r+1)²/r` are dropped.
    pub edge_threshold: f64,
    pub num_octaves: usize,
    pub levels_per_octave: usize,
    /// `-1` starts from a 2x upsampled image.
    pub first_octave: i32,
    /// Blur of the first Gaussian level of each octave, in octave pixels.
    pub base_sigma: f64,
    /// Focal stack slopes; `None` uses `N_s` slopes over `[-1, 1]`.
    pub slopes: Option<Vec<f64>>,
}

impl Default for DetectorParams {
    fn default() -> Self {
        Self {
            peak_threshold: 0.0066,
            edge_threshold: 10.0,
            num_octaves: 4,
            levels_per_octave: 3,
            first_octave: -1,
            base_sigma: 1.6,
            slopes: None,
        }
    }
}

impl DetectorParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.peak_threshold >= 0.0) {
            return Err(Error::InvalidParameter("peak_threshold must be non-negative".into()));
        }
        if !(self.edge_threshold >= 1.0) {
            return Err(Error::InvalidParameter("edge_threshold must be at least 1".into()));
        }
        check_scale_params(self)
    }

    /// Slopes used for a light field with dimensions `dims`.
    pub fn slopes_for(&self, dims: LfDims) -> Vec<f64> {
        self.slopes.clone().unwrap_or_else(|| default_slopes(dims.ns))
    }
}

/// Keypoint in the pixel frame of a particular image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Keypoint {
    pub u: f64,
    pub v: f64,
    pub sigma: f64,
    pub orientation: f64,
}

/// A detected feature in central-view pixel coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct Feature {
    pub u: f64,
    pub v: f64,
    /// Scale in central-view pixels.
    pub sigma: f64,
    /// Slope at which the feature is in focus; `None` for plain 2D detections.
    pub slope: Option<f64>,
    /// Dominant gradient orientation in radians, `[0, 2π)`, measured from `+u` toward `+v`.
    pub orientation: f64,
    /// Refined `|D|`.
    pub response: f64,
    pub descriptor: Vec<f64>,
}

/// Integer location of a scale-slope extremum.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RawExtremum {
    pub octave: usize,
    pub level: usize,
    pub slope: usize,
    pub u: usize,
    pub v: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum SearchMode {
    /// 80-neighbour search over position, level and slope; boundary slopes excluded.
    Joint,
    /// Independent 26-neighbour search in every slice.
    PerSlice,
}

impl SearchMode {
    pub(crate) fn for_slopes(m: usize) -> Self {
        if m >= 3 {
            SearchMode::Joint
        } else {
            SearchMode::PerSlice
        }
    }
}

/// Joint 4D extremum search.
pub fn find_extrema(space: &ScaleSlopeSpace, peak_threshold: f64) -> Result<Vec<RawExtremum>> {
    if space.num_slopes() < 3 {
        return Err(Error::NeedThreeSlopes(space.num_slopes()));
    }
    Ok(find_extrema_in(space, peak_threshold, SearchMode::Joint))
}

pub(crate) fn find_extrema_in(space: &ScaleSlopeSpace, peak_threshold: f64, mode: SearchMode) -> Vec<RawExtremum> {
    let geom = space.geometry();
    let levels = geom.levels_per_octave;
    let m = space.num_slopes();
    let slope_range = match mode {
        SearchMode::Joint => 1..m.saturating_sub(1),
        SearchMode::PerSlice => 0..m,
    };
    let mut jobs = Vec::new();
    for octave in 0..geom.octaves.len() {
        for level in 1..=levels {
            for slope in slope_range.clone() {
                jobs.push((octave, level, slope));
            }
        }
    }
    let gate = PRE_REFINEMENT_GATE * peak_threshold;
    jobs.par_iter()
        .map(|&(octave, level, slope)| scan_block(space, octave, level, slope, gate, mode))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}

fn scan_block(
    space: &ScaleSlopeSpace,
    octave: usize,
    level: usize,
    slope: usize,
    gate: f64,
    mode: SearchMode,
) -> Vec<RawExtremum> {
    let slopes = match mode {
        SearchMode::Joint => slope - 1..=slope + 1,
        SearchMode::PerSlice => slope..=slope,
    };
    let mut neighbours: Vec<&Image> = Vec::with_capacity(9);
    for m in slopes {
        for l in level - 1..=level + 1 {
            neighbours.push(space.dog(m, octave, l));
        }
    }
    let center = space.dog(slope, octave, level);
    let (nu, nv) = (center.nu(), center.nv());
    let mut out = Vec::new();
    if nu < 3 || nv < 3 {
        return out;
    }
    for u in 1..nu - 1 {
        for v in 1..nv - 1 {
            let x = center.get(u, v);
            if !(x.abs() > gate) {
                continue;
            }
            if is_strict_extremum(&neighbours, center, u, v, x) {
                out.push(RawExtremum {
                    octave,
                    level,
                    slope,
                    u,
                    v,
                });
            }
        }
    }
    out
}

#[inline]
fn is_strict_extremum(neighbours: &[&Image], center: &Image, u: usize, v: usize, x: f64) -> bool {
    let maximum = x > 0.0;
    for img in neighbours {
        let same = std::ptr::eq(*img, center);
        for uu in u - 1..=u + 1 {
            for vv in v - 1..=v + 1 {
                if same && uu == u && vv == v {
                    continue;
                }
                let y = img.get(uu, vv);
                if (maximum && y >= x) || (!maximum && y <= x) {
                    return false;
                }
            }
        }
    }
    true
}

/// Why a raw extremum did not survive refinement.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Rejection {
    /// Singular Hessian or non-finite offset.
    Degenerate,
    /// Offset of a sample or more after the maximum number of steps.
    Unstable,
    /// Re-centering walked off the searchable volume.
    OutOfBounds,
    /// Refined `|D|` not above the peak threshold.
    BelowThreshold,
}

/// A refined extremum.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Refined {
    /// Integer sample the quadratic fit converged around.
    pub at: RawExtremum,
    /// Sub-sample offset along `(u, v, level, slope index)`.
    pub offset: [f64; 4],
    /// Interpolated signed DoG value.
    pub value: f64,
    /// Position in input pixels.
    pub u: f64,
    pub v: f64,
    /// Scale in input pixels.
    pub sigma: f64,
    /// Interpolated slope.
    pub slope: f64,
}

/// Sub-sample refinement of a joint extremum (4D fit over position, level and slope).
pub fn refine_feature(space: &ScaleSlopeSpace, raw: RawExtremum, peak_threshold: f64) -> Result<Refined, Rejection> {
    refine_in(space, raw, peak_threshold, SearchMode::for_slopes(space.num_slopes()))
}

pub(crate) fn refine_in(
    space: &ScaleSlopeSpace,
    raw: RawExtremum,
    peak_threshold: f64,
    mode: SearchMode,
) -> Result<Refined, Rejection> {
    let geom = space.geometry();
    let levels = geom.levels_per_octave;
    let (nu, nv) = geom.octaves[raw.octave].dims();
    let m = space.num_slopes();
    let joint = mode == SearchMode::Joint;
    let mut at = raw;
    for attempt in 0..MAX_REFINEMENT_STEPS {
        let f = |du: isize, dv: isize, dl: isize, dm: isize| {
            let img = space.dog(
                (at.slope as isize + dm) as usize,
                at.octave,
                (at.level as isize + dl) as usize,
            );
            img.get((at.u as isize + du) as usize, (at.v as isize + dv) as usize)
        };
        let dims = if joint { 4 } else { 3 };
        let unit = |i: usize, s: isize| {
            let mut e = [0isize; 4];
            e[i] = s;
            e
        };
        let at_offset = |e: [isize; 4]| f(e[0], e[1], e[2], e[3]);
        let f0 = f(0, 0, 0, 0);
        let mut g = Vector4::zeros();
        let mut h = Matrix4::identity();
        for i in 0..dims {
            let (p, n) = (at_offset(unit(i, 1)), at_offset(unit(i, -1)));
            g[i] = 0.5 * (p - n);
            h[(i, i)] = p + n - 2.0 * f0;
            for j in i + 1..dims {
                let mut pp = [0isize; 4];
                pp[i] = 1;
                pp[j] = 1;
                let mut pn = pp;
                pn[j] = -1;
                let mut np = pp;
                np[i] = -1;
                let mut nn = pn;
                nn[i] = -1;
                let x = 0.25 * (at_offset(pp) - at_offset(pn) - at_offset(np) + at_offset(nn));
                h[(i, j)] = x;
                h[(j, i)] = x;
            }
        }
        let Some(x) = h.lu().solve(&(-g)) else {
            return Err(Rejection::Degenerate);
        };
        if x.iter().any(|c| !c.is_finite()) {
            return Err(Rejection::Degenerate);
        }
        // Adjacent fits can disagree and send the fit back and forth between two
        // samples. On the last attempt keep the fit if the peak is within one sample.
        let converged = x.iter().all(|c| c.abs() <= RECENTER_THRESHOLD);
        let settled = attempt + 1 == MAX_REFINEMENT_STEPS && x.iter().all(|c| c.abs() < 1.0);
        if converged || settled {
            let value = f0 + 0.5 * g.dot(&x);
            if !(value.abs() > peak_threshold) {
                return Err(Rejection::BelowThreshold);
            }
            let octave = &geom.octaves[at.octave];
            let step = octave.step();
            let slopes = space.slopes();
            let slope = if joint {
                let i = at.slope;
                if x[3] >= 0.0 {
                    slopes[i] + x[3] * (slopes[i + 1] - slopes[i])
                } else {
                    slopes[i] + x[3] * (slopes[i] - slopes[i - 1])
                }
            } else {
                slopes[at.slope]
            };
            return Ok(Refined {
                at,
                offset: [x[0], x[1], x[2], if joint { x[3] } else { 0.0 }],
                value,
                u: (at.u as f64 + x[0]) * step,
                v: (at.v as f64 + x[1]) * step,
                sigma: geom.sigma_at(at.octave, at.level as f64 + x[2]),
                slope,
            });
        }
        let step_of = |c: f64| {
            if c > RECENTER_THRESHOLD {
                1
            } else if c < -RECENTER_THRESHOLD {
                -1
            } else {
                0
            }
        };
        let nu_ = at.u as isize + step_of(x[0]);
        let nv_ = at.v as isize + step_of(x[1]);
        let nl = at.level as isize + step_of(x[2]);
        let nm = if joint { at.slope as isize + step_of(x[3]) } else { at.slope as isize };
        let slope_ok = if joint {
            nm >= 1 && nm <= m as isize - 2
        } else {
            true
        };
        if nu_ < 1
            || nu_ > nu as isize - 2
            || nv_ < 1
            || nv_ > nv as isize - 2
            || nl < 1
            || nl > levels as isize
            || !slope_ok
        {
            return Err(Rejection::OutOfBounds);
        }
        at = RawExtremum {
            octave: at.octave,
            level: nl as usize,
            slope: nm as usize,
            u: nu_ as usize,
            v: nv_ as usize,
        };
    }
    Err(Rejection::Unstable)
}

/// Edge test on a 2x2 spatial Hessian: true when the response looks like an edge.
#[inline]
pub fn is_edge_like(dxx: f64, dyy: f64, dxy: f64, edge_threshold: f64) -> bool {
    let tr = dxx + dyy;
    let det = dxx * dyy - dxy * dxy;
    let r = edge_threshold;
    det <= 0.0 || tr * tr * r >= (r + 1.0) * (r + 1.0) * det
}

/// True when the refined extremum should be discarded as an edge response. The
/// Hessian is taken at the extremum's own DoG level and slope slice.
pub fn reject_edges(space: &ScaleSlopeSpace, refined: &Refined, edge_threshold: f64) -> bool {
    let at = refined.at;
    let d = space.dog(at.slope, at.octave, at.level);
    let (u, v) = (at.u, at.v);
    let c = d.get(u, v);
    let dxx = d.get(u + 1, v) + d.get(u - 1, v) - 2.0 * c;
    let dyy = d.get(u, v + 1) + d.get(u, v - 1) - 2.0 * c;
    let dxy = 0.25 * (d.get(u + 1, v + 1) - d.get(u + 1, v - 1) - d.get(u - 1, v + 1) + d.get(u - 1, v - 1));
    is_edge_like(dxx, dyy, dxy, edge_threshold)
}

/// Central-difference gradient `(magnitude, angle in [0, 2π))`, `None` on the border.
#[inline]
pub(crate) fn gradient(img: &Image, u: isize, v: isize) -> Option<(f64, f64)> {
    if u < 1 || v < 1 || u as usize + 1 >= img.nu() || v as usize + 1 >= img.nv() {
        return None;
    }
    let (u, v) = (u as usize, v as usize);
    let gu = 0.5 * (img.get(u + 1, v) - img.get(u - 1, v));
    let gv = 0.5 * (img.get(u, v + 1) - img.get(u, v - 1));
    let mag = (gu * gu + gv * gv).sqrt();
    let ang = gv.atan2(gu).rem_euclid(std::f64::consts::TAU);
    Some((mag, ang))
}

/// Dominant gradient orientations around `(u, v)` at scale `sigma`, all in the pixel
/// frame of `img`.
pub fn assign_orientation(img: &Image, u: f64, v: f64, sigma: f64) -> Vec<f64> {
    use std::f64::consts::TAU;
    let window = ORIENTATION_WINDOW * sigma;
    let radius = (3.0 * window).round().max(1.0) as isize;
    let (ui, vi) = (u.round() as isize, v.round() as isize);
    let mut hist = [0.0f64; ORIENTATION_BINS];
    for du in -radius..=radius {
        for dv in -radius..=radius {
            let (pu, pv) = (ui + du, vi + dv);
            let (dx, dy) = (pu as f64 - u, pv as f64 - v);
            let r2 = dx * dx + dy * dy;
            if r2 > (radius * radius) as f64 + 0.5 {
                continue;
            }
            let Some((mag, ang)) = gradient(img, pu, pv) else {
                continue;
            };
            if mag == 0.0 {
                continue;
            }
            let w = (-r2 / (2.0 * window * window)).exp() * mag;
            let fbin = ang * ORIENTATION_BINS as f64 / TAU;
            let b0 = fbin.floor();
            let frac = fbin - b0;
            let b0 = (b0 as usize) % ORIENTATION_BINS;
            hist[b0] += w * (1.0 - frac);
            hist[(b0 + 1) % ORIENTATION_BINS] += w * frac;
        }
    }
    for _ in 0..ORIENTATION_SMOOTHING_PASSES {
        let prev = hist;
        for k in 0..ORIENTATION_BINS {
            let l = prev[(k + ORIENTATION_BINS - 1) % ORIENTATION_BINS];
            let r = prev[(k + 1) % ORIENTATION_BINS];
            hist[k] = (l + prev[k] + r) / 3.0;
        }
    }
    let max = hist.iter().copied().fold(0.0, f64::max);
    if !(max > 0.0) {
        return vec![0.0];
    }
    let mut out = Vec::new();
    for k in 0..ORIENTATION_BINS {
        let l = hist[(k + ORIENTATION_BINS - 1) % ORIENTATION_BINS];
        let r = hist[(k + 1) % ORIENTATION_BINS];
        let c = hist[k];
        if c > l && c > r && c >= ORIENTATION_PEAK_RATIO * max {
            let interp = 0.5 * (l - r) / (l - 2.0 * c + r);
            let theta = ((k as f64 + interp) * TAU / ORIENTATION_BINS as f64).rem_euclid(TAU);
            out.push(theta);
        }
    }
    if out.is_empty() {
        // Flat-topped histogram: fall back to the first maximal bin.
        let k = hist.iter().position(|&h| h == max).unwrap_or(0);
        out.push(k as f64 * TAU / ORIENTATION_BINS as f64);
    }
    out
}

/// A refined, edge-screened and oriented keypoint awaiting its descriptor.
#[derive(Clone, Debug)]
pub(crate) struct Candidate {
    pub octave: usize,
    /// Stack slice the orientation and descriptor are taken from.
    pub slice: usize,
    pub gaussian_level: usize,
    /// Keypoint in octave pixels.
    pub local: Keypoint,
    /// Feature with an empty descriptor.
    pub feature: Feature,
}

pub(crate) fn locate(space: &ScaleSlopeSpace, params: &DetectorParams, mode: SearchMode) -> Vec<Refined> {
    let raw = find_extrema_in(space, params.peak_threshold, mode);
    raw.par_iter()
        .filter_map(|&r| {
            let refined = refine_in(space, r, params.peak_threshold, mode).ok()?;
            (!reject_edges(space, &refined, params.edge_threshold)).then_some(refined)
        })
        .collect()
}

fn nearest_slice(slopes: &[f64], slope: f64) -> usize {
    let mut best = 0;
    for (i, s) in slopes.iter().enumerate() {
        if (s - slope).abs() < (slopes[best] - slope).abs() {
            best = i;
        }
    }
    best
}

pub(crate) fn orient(space: &ScaleSlopeSpace, refined: &[Refined], mode: SearchMode) -> Vec<Candidate> {
    let geom = space.geometry();
    let levels = geom.levels_per_octave;
    refined
        .par_iter()
        .map(|r| {
            let at = r.at;
            let slice = match mode {
                SearchMode::Joint => nearest_slice(space.slopes(), r.slope),
                SearchMode::PerSlice => at.slope,
            };
            let level_f = at.level as f64 + r.offset[2];
            let gaussian_level = (level_f.round().max(0.0) as usize).min(levels + 2);
            let sigma_local = geom.base_sigma * 2f64.powf(level_f / levels as f64);
            let (lu, lv) = (at.u as f64 + r.offset[0], at.v as f64 + r.offset[1]);
            let img = space.gaussian(slice, at.octave, gaussian_level);
            assign_orientation(img, lu, lv, sigma_local)
                .into_iter()
                .map(|theta| Candidate {
                    octave: at.octave,
                    slice,
                    gaussian_level,
                    local: Keypoint {
                        u: lu,
                        v: lv,
                        sigma: sigma_local,
                        orientation: theta,
                    },
                    feature: Feature {
                        u: r.u,
                        v: r.v,
                        sigma: r.sigma,
                        slope: Some(r.slope),
                        orientation: theta,
                        response: r.value.abs(),
                        descriptor: Vec::new(),
                    },
                })
                .collect::<Vec<_>>()
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}

pub(crate) fn describe(space: &ScaleSlopeSpace, c: &Candidate) -> Feature {
    let img = space.gaussian(c.slice, c.octave, c.gaussian_level);
    let raw = compute_descriptor(img, &c.local);
    Feature {
        descriptor: normalize_rootsift(&raw),
        ..c.feature.clone()
    }
}

/// Deterministic output order: response descending, then position, scale, slope, orientation.
pub fn sort_features(features: &mut [Feature]) {
    features.sort_by(|a, b| {
        b.response
            .total_cmp(&a.response)
            .then(a.u.total_cmp(&b.u))
            .then(a.v.total_cmp(&b.v))
            .then(a.sigma.total_cmp(&b.sigma))
            .then(a.slope.unwrap_or(f64::NAN).total_cmp(&b.slope.unwrap_or(f64::NAN)))
            .then(a.orientation.total_cmp(&b.orientation))
    });
}

/// Wall-clock time spent in each detection stage.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StageTimings {
    pub focal_stack: Duration,
    pub dog: Duration,
    pub extrema: Duration,
    pub descriptors: Duration,
}

impl StageTimings {
    pub fn total(&self) -> Duration {
        self.focal_stack + self.dog + self.extrema + self.descriptors
    }
}

impl std::ops::AddAssign for StageTimings {
    fn add_assign(&mut self, o: Self) {
        self.focal_stack += o.focal_stack;
        self.dog += o.dog;
        self.extrema += o.extrema;
        self.descriptors += o.descriptors;
    }
}

/// Extrema, refinement, orientation and description over a prepared scale-slope space.
pub(crate) fn detect_in_space(
    space: &ScaleSlopeSpace,
    params: &DetectorParams,
    mode: SearchMode,
    timings: &mut StageTimings,
) -> Vec<Feature> {
    let t = Instant::now();
    let refined = locate(space, params, mode);
    timings.extrema += t.elapsed();
    let t = Instant::now();
    let candidates = orient(space, &refined, mode);
    let mut features: Vec<Feature> = candidates.par_iter().map(|c| describe(space, c)).collect();
    timings.descriptors += t.elapsed();
    sort_features(&mut features);
    features
}

/// Detect light field features.
///
/// With three or more slopes the search is joint over scale and slope and boundary
/// slopes cannot host features. With one or two slopes each slice is searched on its
/// own, which for a single slope is plain SIFT on that slice.
pub fn detect(lf: &LightField, params: &DetectorParams) -> Result<Vec<Feature>> {
    detect_with_timings(lf, params).map(|(f, _)| f)
}

pub fn detect_with_timings(lf: &LightField, params: &DetectorParams) -> Result<(Vec<Feature>, StageTimings)> {
    params.validate()?;
    if !lf.is_grayscale() {
        return Err(Error::InvalidParameter("detection needs a grayscale light field".into()));
    }
    let mut timings = StageTimings::default();
    let slopes = params.slopes_for(lf.dims());
    let t = Instant::now();
    let stack = build_focal_stack(lf, &slopes)?;
    timings.focal_stack = t.elapsed();
    let t = Instant::now();
    let space = build_scale_slope_space(&stack, params)?;
    timings.dog = t.elapsed();
    let mode = SearchMode::for_slopes(space.num_slopes());
    let features = detect_in_space(&space, params, mode, &mut timings);
    Ok((features, timings))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::focalstack::FocalStack;
    use crate::scalespace::build_dog_pyramid;
    use std::f64::consts::{FRAC_PI_2, TAU};

    fn angle_diff(a: f64, b: f64) -> f64 {
        let d = (a - b).rem_euclid(TAU);
        d.min(TAU - d)
    }

    fn disk_image(n: usize, cu: f64, cv: f64, r: f64, bg: f64, fg: f64) -> Image {
        Image::from_fn(n, n, |u, v| {
            let mut cover = 0.0;
            for i in 0..4 {
                for j in 0..4 {
                    let x = u as f64 - 0.5 + (i as f64 + 0.5) / 4.0 - cu;
                    let y = v as f64 - 0.5 + (j as f64 + 0.5) / 4.0 - cv;
                    if x * x + y * y <= r * r {
                        cover += 1.0 / 16.0;
                    }
                }
            }
            bg + (fg - bg) * cover
        })
    }

    fn space_from_slices(slices: Vec<Image>, slopes: Vec<f64>, params: &DetectorParams) -> ScaleSlopeSpace {
        let dims = LfDims::new(1, 1, slices[0].nu(), slices[0].nv());
        let stack = FocalStack::from_slices(slices, slopes, dims).unwrap();
        build_scale_slope_space(&stack, params).unwrap()
    }

    #[test]
    fn default_params_match_published_settings() {
        let p = DetectorParams::default();
        assert_eq!(p.peak_threshold, 0.0066);
        assert_eq!(p.edge_threshold, 10.0);
        assert_eq!((p.num_octaves, p.levels_per_octave, p.first_octave), (4, 3, -1));
        assert_eq!(p.slopes_for(LfDims::new(11, 11, 8, 8)).len(), 11);
    }

    #[test]
    fn params_validation() {
        let bad = DetectorParams {
            peak_threshold: -1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = DetectorParams {
            edge_threshold: 0.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn joint_search_needs_three_slopes() {
        let params = DetectorParams::default();
        let space = space_from_slices(vec![Image::filled(32, 32, 0.5); 2], vec![0.0, 1.0], &params);
        assert!(matches!(find_extrema(&space, 0.0066), Err(Error::NeedThreeSlopes(2))));
    }

    #[test]
    fn constant_space_has_no_extrema() {
        let params = DetectorParams::default();
        let space = space_from_slices(vec![Image::filled(32, 32, 0.5); 3], vec![-1.0, 0.0, 1.0], &params);
        assert!(find_extrema(&space, 0.0066).unwrap().is_empty());
        assert!(find_extrema(&space, 0.0).unwrap().is_empty());
    }

    #[test]
    fn edge_test_contract() {
        // Equal eigenvalues: tr²/det = 4, below (r+1)²/r for every r > 1. At r = 1 the
        // bound is 4 itself and the inclusive comparison rejects.
        assert!(!is_edge_like(-2.0, -2.0, 0.0, 1.01));
        assert!(!is_edge_like(-2.0, -2.0, 0.0, 10.0));
        assert!(is_edge_like(-2.0, -2.0, 0.0, 1.0));
        // Rank one.
        assert!(is_edge_like(-3.0, 0.0, 0.0, 10.0));
        // Eigenvalue ratio exactly r is rejected.
        assert!(is_edge_like(10.0, 1.0, 0.0, 10.0));
        assert!(!is_edge_like(9.9, 1.0, 0.0, 10.0));
        // Saddle.
        assert!(is_edge_like(1.0, -1.0, 0.0, 10.0));
    }

    #[test]
    fn step_edge_is_rejected() {
        let params = DetectorParams {
            first_octave: 0,
            ..Default::default()
        };
        let img = Image::from_fn(48, 48, |u, _| if u < 24 { 0.3 } else { 0.7 });
        let space = space_from_slices(vec![img], vec![0.0], &params);
        let d = space.dog(0, 0, 1);
        let r = Refined {
            at: RawExtremum {
                octave: 0,
                level: 1,
                slope: 0,
                u: 24,
                v: 24,
            },
            offset: [0.0; 4],
            value: d.get(24, 24),
            u: 24.0,
            v: 24.0,
            sigma: 2.0,
            slope: 0.0,
        };
        assert!(reject_edges(&space, &r, 10.0));
    }

    #[test]
    fn symmetric_peak_has_zero_offset() {
        let params = DetectorParams {
            first_octave: 0,
            num_octaves: 1,
            ..Default::default()
        };
        // Disk centered exactly on a sample, identical in three slices except for a
        // symmetric contrast profile across slope.
        let slices: Vec<Image> = [0.08, 0.1, 0.08]
            .iter()
            .map(|&c| disk_image(48, 24.0, 24.0, 3.0, 0.4, 0.4 + c))
            .collect();
        let space = space_from_slices(slices, vec![-1.0, 0.0, 1.0], &params);
        let ext = find_extrema(&space, 0.0066).unwrap();
        let e = ext.iter().find(|e| e.u == 24 && e.v == 24).expect("extremum at the disk center");
        let r = refine_feature(&space, *e, 0.0066).unwrap();
        assert!(r.offset[0].abs() < 1e-12 && r.offset[1].abs() < 1e-12);
        assert!(r.offset[3].abs() < 1e-12);
        assert!(r.slope.abs() < 1e-12);
    }

    #[test]
    fn refined_response_below_threshold_is_rejected() {
        let params = DetectorParams {
            first_octave: 0,
            num_octaves: 1,
            ..Default::default()
        };
        let slices: Vec<Image> = [0.08, 0.1, 0.08]
            .iter()
            .map(|&c| disk_image(48, 24.0, 24.0, 3.0, 0.4, 0.4 + c))
            .collect();
        let space = space_from_slices(slices, vec![-1.0, 0.0, 1.0], &params);
        let e = *find_extrema(&space, 0.0)
            .unwrap()
            .iter()
            .find(|e| e.u == 24 && e.v == 24)
            .unwrap();
        let r = refine_feature(&space, e, 0.0).unwrap();
        let just_above = r.value.abs() * 1.0001;
        assert_eq!(refine_feature(&space, e, just_above), Err(Rejection::BelowThreshold));
        assert!(refine_feature(&space, e, r.value.abs() * 0.9999).is_ok());
    }

    #[test]
    fn single_disk_gives_single_extremum_at_expected_scale() {
        let params = DetectorParams {
            first_octave: 0,
            ..Default::default()
        };
        let r = 5.0;
        let slices: Vec<Image> = [0.06, 0.1, 0.06]
            .iter()
            .map(|&c| disk_image(64, 32.0, 32.0, r, 0.4, 0.4 + c))
            .collect();
        let space = space_from_slices(slices, vec![-1.0, 0.0, 1.0], &params);
        let located = locate(&space, &params, SearchMode::Joint);
        assert_eq!(located.len(), 1, "{located:?}");
        let f = &located[0];
        assert!((f.u - 32.0).abs() < 0.5 && (f.v - 32.0).abs() < 0.5);
        assert_eq!(f.at.slope, 1);
        let expected = r / 2f64.sqrt();
        assert!(f.sigma / expected < 1.25 && expected / f.sigma < 1.25, "sigma {}", f.sigma);
    }

    #[test]
    fn ramp_orientation_points_along_u() {
        let img = Image::from_fn(40, 40, |u, _| 0.01 * u as f64);
        let th = assign_orientation(&img, 20.0, 20.0, 2.0);
        assert_eq!(th.len(), 1);
        assert!(angle_diff(th[0], 0.0) < 1e-9, "{th:?}");
        let img = Image::from_fn(40, 40, |_, v| 0.01 * v as f64);
        let th = assign_orientation(&img, 20.0, 20.0, 2.0);
        assert!(angle_diff(th[0], FRAC_PI_2) < 1e-9, "{th:?}");
    }

    #[test]
    fn orthogonal_ramps_give_two_orientations() {
        // Gradient +u on one side of the diagonal, +v on the other, equal weight.
        let img = Image::from_fn(41, 41, |u, v| 0.01 * (u.max(v) as f64));
        let mut th = assign_orientation(&img, 20.0, 20.0, 2.0);
        th.sort_by(f64::total_cmp);
        assert_eq!(th.len(), 2, "{th:?}");
        let bin = TAU / ORIENTATION_BINS as f64;
        assert!(angle_diff(th[0], 0.0) < bin);
        assert!(angle_diff(th[1], FRAC_PI_2) < bin);
    }

    #[test]
    fn zero_gradient_orientation_is_zero() {
        assert_eq!(assign_orientation(&Image::filled(20, 20, 0.3), 10.0, 10.0, 2.0), vec![0.0]);
    }

    #[test]
    fn orientation_rotates_with_image() {
        let n = 48;
        let img = Image::from_fn(n, n, |u, v| {
            let (x, y) = (u as f64 - 20.0, v as f64 - 26.0);
            0.5 + 0.3 * (-(x * x) / 30.0 - (y * y) / 8.0).exp() * (1.0 + 0.02 * x) + 0.002 * x
        });
        // Rotate content by +90° in the (u, v) plane: new(u, v) = old(v, n-1-u).
        let rot = Image::from_fn(n, n, |u, v| img.get(v, n - 1 - u));
        let a = assign_orientation(&img, 20.0, 26.0, 3.0);
        let b = assign_orientation(&rot, (n - 1) as f64 - 26.0, 20.0, 3.0);
        assert_eq!(a.len(), b.len());
        let bin = TAU / ORIENTATION_BINS as f64;
        for (x, y) in a.iter().zip(&b) {
            let _ = (x, y);
        }
        for x in &a {
            assert!(b.iter().any(|y| angle_diff(*y, x + FRAC_PI_2) < bin), "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn constant_lf_detects_nothing() {
        let lf = LightField::from_fn(LfDims::new(5, 5, 32, 32), |_, _, _, _| 0.5).unwrap();
        assert!(detect(&lf, &DetectorParams::default()).unwrap().is_empty());
    }

    #[test]
    fn detect_rejects_color() {
        let lf = LightField::new(LfDims::new(1, 1, 16, 16), 3, vec![0.5; 16 * 16 * 3]).unwrap();
        assert!(detect(&lf, &DetectorParams::default()).is_err());
    }

    #[test]
    fn single_slope_detect_matches_image_pyramid_extrema() {
        let img = disk_image(48, 20.0, 27.0, 4.0, 0.4, 0.55);
        let lf = LightField::from_views(1, 1, vec![img.clone()]).unwrap();
        let params = DetectorParams {
            slopes: Some(vec![0.0]),
            ..Default::default()
        };
        let feats = detect(&lf, &params).unwrap();
        let pyr = build_dog_pyramid(&img, &params).unwrap();
        let space = ScaleSlopeSpace::new(vec![pyr], vec![0.0]).unwrap();
        let direct = detect_in_space(&space, &params, SearchMode::PerSlice, &mut StageTimings::default());
        assert!(!feats.is_empty());
        assert_eq!(feats, direct);
    }
}
