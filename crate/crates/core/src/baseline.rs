//! 2D SIFT on a single view, and SIFT repeated over every view with cross-view
//! consolidation.
//!
//! Repeated SIFT keeps a central-view feature when enough other views contain a
//! detection of similar scale, orientation and descriptor whose position lies on a
//! common plane `u = c1 - λ s'`, `v = c2 - λ t'` through the matched positions.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::descriptor::descriptor_distance;
use crate::detector::{
    describe, detect_in_space, locate, orient, Candidate, DetectorParams, Feature, SearchMode, StageTimings,
};
use crate::error::{Error, Result};
use crate::lfcore::{Image, LfDims, LightField};
use crate::scalespace::{build_dog_pyramid, ScaleSlopeSpace};

fn image_space(img: &Image, params: &DetectorParams) -> Result<ScaleSlopeSpace> {
    let pyramid = build_dog_pyramid(img, params)?;
    ScaleSlopeSpace::new(vec![pyramid], vec![0.0])
}

/// Single-image SIFT. `params.slopes` is ignored; returned features have no slope.
pub fn sift_detect(img: &Image, params: &DetectorParams) -> Result<Vec<Feature>> {
    sift_detect_with_timings(img, params).map(|(f, _)| f)
}

pub fn sift_detect_with_timings(img: &Image, params: &DetectorParams) -> Result<(Vec<Feature>, StageTimings)> {
    params.validate()?;
    let mut timings = StageTimings::default();
    let t = Instant::now();
    let space = image_space(img, params)?;
    timings.dog = t.elapsed();
    let mut features = detect_in_space(&space, params, SearchMode::PerSlice, &mut timings);
    for f in &mut features {
        f.slope = None;
    }
    Ok((features, timings))
}

/// Acceptance thresholds for cross-view consolidation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConsolidationParams {
    /// Minimum fraction of all views (central view included) in which the feature is found.
    pub agreement: f64,
    pub max_scale_ratio: f64,
    pub max_orientation_diff_deg: f64,
    pub max_descriptor_distance: f64,
    /// Maximum distance in pixels of a matched position from the fitted plane.
    pub max_plane_residual: f64,
    /// Slope hypotheses beyond this magnitude are not considered.
    pub max_abs_slope: f64,
}

impl Default for ConsolidationParams {
    fn default() -> Self {
        Self {
            agreement: 0.25,
            max_scale_ratio: 1.25,
            max_orientation_diff_deg: 20.0,
            max_descriptor_distance: 0.35,
            max_plane_residual: 1.0,
            max_abs_slope: 2.0,
        }
    }
}

impl ConsolidationParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.agreement > 0.0 && self.agreement <= 1.0) {
            return Err(Error::InvalidParameter("agreement must lie in (0, 1]".into()));
        }
        let positive = [
            self.max_scale_ratio,
            self.max_orientation_diff_deg,
            self.max_descriptor_distance,
            self.max_plane_residual,
            self.max_abs_slope,
        ];
        if positive.iter().any(|x| !(*x > 0.0) || !x.is_finite()) || self.max_scale_ratio < 1.0 {
            return Err(Error::InvalidParameter("consolidation thresholds must be positive".into()));
        }
        Ok(())
    }
}

/// Predicted ratio of DoG work between repeated SIFT and the focal stack detector:
/// `N_s N_t` pyramids against `M`. The number of scales is common to both and cancels.
pub fn work_ratio(dims: LfDims, num_slopes: usize) -> f64 {
    (dims.ns * dims.nt) as f64 / num_slopes as f64
}

/// Positions in one non-central view matching each central feature.
struct ViewMatches {
    s_off: f64,
    t_off: f64,
    per_feature: Vec<Vec<(f64, f64)>>,
}

fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(std::f64::consts::TAU);
    d.min(std::f64::consts::TAU - d)
}

/// Distance from `p` to the segment `a`-`b`.
fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    ((p.0 - a.0 - t * dx).powi(2) + (p.1 - a.1 - t * dy).powi(2)).sqrt()
}

/// Spatial hash of candidate positions.
struct Grid {
    cell: f64,
    nu: usize,
    nv: usize,
    cells: Vec<Vec<usize>>,
}

impl Grid {
    fn new(points: impl Iterator<Item = (f64, f64)>, extent: (usize, usize), cell: f64) -> Self {
        let nu = (extent.0 as f64 / cell).ceil() as usize + 1;
        let nv = (extent.1 as f64 / cell).ceil() as usize + 1;
        let mut cells = vec![Vec::new(); nu * nv];
        for (i, (u, v)) in points.enumerate() {
            let cu = ((u / cell).floor().max(0.0) as usize).min(nu - 1);
            let cv = ((v / cell).floor().max(0.0) as usize).min(nv - 1);
            cells[cu * nv + cv].push(i);
        }
        Self { cell, nu, nv, cells }
    }

    fn query(&self, lo: (f64, f64), hi: (f64, f64), mut f: impl FnMut(usize)) {
        let clamp = |x: f64, n: usize| ((x / self.cell).floor().max(0.0) as usize).min(n - 1);
        for cu in clamp(lo.0, self.nu)..=clamp(hi.0, self.nu) {
            for cv in clamp(lo.1, self.nv)..=clamp(hi.1, self.nv) {
                self.cells[cu * self.nv + cv].iter().for_each(|&i| f(i));
            }
        }
    }
}

fn match_view(
    space: &ScaleSlopeSpace,
    candidates: &[Candidate],
    central: &[Feature],
    offsets: (f64, f64),
    extent: (usize, usize),
    cp: &ConsolidationParams,
) -> Vec<Vec<(f64, f64)>> {
    let grid = Grid::new(candidates.iter().map(|c| (c.feature.u, c.feature.v)), extent, 16.0);
    let mut descriptors: Vec<Option<Vec<f64>>> = vec![None; candidates.len()];
    let max_angle = cp.max_orientation_diff_deg.to_radians();
    let gate = 2.0 * cp.max_plane_residual;
    central
        .iter()
        .map(|f| {
            let a = (f.u - cp.max_abs_slope * offsets.0, f.v - cp.max_abs_slope * offsets.1);
            let b = (f.u + cp.max_abs_slope * offsets.0, f.v + cp.max_abs_slope * offsets.1);
            let lo = (a.0.min(b.0) - gate, a.1.min(b.1) - gate);
            let hi = (a.0.max(b.0) + gate, a.1.max(b.1) + gate);
            let mut found = Vec::new();
            let mut hits = Vec::new();
            grid.query(lo, hi, |i| hits.push(i));
            hits.sort_unstable();
            for i in hits {
                let c = &candidates[i].feature;
                if segment_distance((c.u, c.v), a, b) > gate {
                    continue;
                }
                if (c.sigma / f.sigma).max(f.sigma / c.sigma) > cp.max_scale_ratio {
                    continue;
                }
                if angle_diff(c.orientation, f.orientation) > max_angle {
                    continue;
                }
                let d = descriptors[i].get_or_insert_with(|| describe(space, &candidates[i]).descriptor);
                if descriptor_distance(d, &f.descriptor) <= cp.max_descriptor_distance {
                    found.push((c.u, c.v));
                }
            }
            found
        })
        .collect()
}

/// Least-squares plane through `(s', t', u, v)` samples. Returns `(c1, c2, λ)`; with a
/// single sample the slope is unconstrained and the minimum-norm value 0 is used.
fn fit_plane(points: &[(f64, f64, f64, f64)]) -> (f64, f64, f64) {
    let n = points.len() as f64;
    let mean = points.iter().fold((0.0, 0.0, 0.0, 0.0), |acc, p| {
        (acc.0 + p.0 / n, acc.1 + p.1 / n, acc.2 + p.2 / n, acc.3 + p.3 / n)
    });
    let mut num = 0.0;
    let mut den = 0.0;
    for p in points {
        let (ds, dt, du, dv) = (p.0 - mean.0, p.1 - mean.1, p.2 - mean.2, p.3 - mean.3);
        num += ds * du + dt * dv;
        den += ds * ds + dt * dt;
    }
    let slope = if den > 0.0 { -num / den } else { 0.0 };
    (mean.2 + slope * mean.0, mean.3 + slope * mean.1, slope)
}

#[inline]
fn residual(model: (f64, f64, f64), s: f64, t: f64, u: f64, v: f64) -> f64 {
    let (c1, c2, l) = model;
    ((u - c1 + l * s).powi(2) + (v - c2 + l * t).powi(2)).sqrt()
}

/// Select, per view, the position closest to the plane if within tolerance.
fn select(model: (f64, f64, f64), views: &[ViewMatches], group: &[usize], tol: f64) -> Vec<Option<(f64, f64)>> {
    views
        .iter()
        .map(|w| {
            let mut best: Option<((f64, f64), f64)> = None;
            for &(u, v) in group.iter().flat_map(|&i| &w.per_feature[i]) {
                let r = residual(model, w.s_off, w.t_off, u, v);
                if r <= tol && best.is_none_or(|b| r < b.1) {
                    best = Some(((u, v), r));
                }
            }
            best.map(|b| b.0)
        })
        .collect()
}

/// Returns the fitted slope and the number of non-central views that agree with it.
/// `group` holds the central features sharing one keypoint location (orientation
/// siblings); their matches are pooled.
fn consolidate(f: &Feature, group: &[usize], views: &[ViewMatches], cp: &ConsolidationParams) -> (f64, usize) {
    let tol = cp.max_plane_residual;
    let mut hypotheses = Vec::new();
    for w in views {
        let n2 = w.s_off * w.s_off + w.t_off * w.t_off;
        for &(u, v) in group.iter().flat_map(|&i| &w.per_feature[i]) {
            let l = -((u - f.u) * w.s_off + (v - f.v) * w.t_off) / n2;
            if l.abs() <= cp.max_abs_slope {
                hypotheses.push(l);
            }
        }
    }
    if hypotheses.is_empty() {
        return (0.0, 0);
    }
    hypotheses.sort_by(f64::total_cmp);
    hypotheses.dedup();
    let mut best = (0usize, 0.0f64);
    for &l in &hypotheses {
        let votes = select((f.u, f.v, l), views, group, tol).iter().flatten().count();
        if votes > best.0 || (votes == best.0 && l.abs() < best.1.abs()) {
            best = (votes, l);
        }
    }
    let mut model = (f.u, f.v, best.1);
    let mut chosen = select(model, views, group, tol);
    for _ in 0..10 {
        let mut points = vec![(0.0, 0.0, f.u, f.v)];
        for (w, c) in views.iter().zip(&chosen) {
            if let Some((u, v)) = *c {
                points.push((w.s_off, w.t_off, u, v));
            }
        }
        model = fit_plane(&points);
        let next = select(model, views, group, tol);
        if next == chosen {
            break;
        }
        chosen = next;
    }
    // Count only positions consistent with the final model.
    let matched = select(model, views, group, tol)
        .iter()
        .zip(&chosen)
        .filter(|(a, b)| a.is_some() && b.is_some())
        .count();
    (model.2, matched)
}

/// SIFT on every view with consolidation against the central view.
pub fn repeated_sift(lf: &LightField, params: &DetectorParams, agreement: f64) -> Result<Vec<Feature>> {
    let cp = ConsolidationParams {
        agreement,
        ..Default::default()
    };
    repeated_sift_with(lf, params, &cp).map(|(f, _)| f)
}

/// Repeated SIFT with explicit thresholds. Stage timings are summed over views, so
/// they measure total work rather than wall-clock time when views run in parallel.
pub fn repeated_sift_with(
    lf: &LightField,
    params: &DetectorParams,
    cp: &ConsolidationParams,
) -> Result<(Vec<Feature>, StageTimings)> {
    params.validate()?;
    cp.validate()?;
    if !lf.is_grayscale() {
        return Err(Error::InvalidParameter("detection needs a grayscale light field".into()));
    }
    let dims = lf.dims();
    let (cs, ct) = dims.center()?;
    let (central, mut timings) = sift_detect_with_timings(&lf.view(cs, ct), params)?;

    let others: Vec<(usize, usize)> = (0..dims.ns)
        .flat_map(|s| (0..dims.nt).map(move |t| (s, t)))
        .filter(|&v| v != (cs, ct))
        .collect();
    let per_view = others
        .par_iter()
        .map(|&(s, t)| -> Result<(ViewMatches, StageTimings)> {
            let mut tm = StageTimings::default();
            let clock = Instant::now();
            let space = image_space(&lf.view(s, t), params)?;
            tm.dog = clock.elapsed();
            let clock = Instant::now();
            let located = locate(&space, params, SearchMode::PerSlice);
            tm.extrema = clock.elapsed();
            let clock = Instant::now();
            let candidates = orient(&space, &located, SearchMode::PerSlice);
            let offsets = (dims.s_offset(s), dims.t_offset(t));
            let per_feature = match_view(&space, &candidates, &central, offsets, (dims.nu, dims.nv), cp);
            tm.descriptors = clock.elapsed();
            Ok((
                ViewMatches {
                    s_off: offsets.0,
                    t_off: offsets.1,
                    per_feature,
                },
                tm,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut views = Vec::with_capacity(per_view.len());
    for (w, tm) in per_view {
        timings += tm;
        views.push(w);
    }

    let total = dims.num_views() as f64;
    let mut out = Vec::new();
    let mut i = 0;
    while i < central.len() {
        // Features come sorted, so orientation siblings are adjacent.
        let f = &central[i];
        let end = i + central[i..]
            .iter()
            .take_while(|g| (g.u, g.v, g.sigma) == (f.u, f.v, f.sigma))
            .count();
        let group: Vec<usize> = (i..end).collect();
        let (slope, matched) = consolidate(f, &group, &views, cp);
        if (1 + matched) as f64 / total >= cp.agreement - 1e-12 {
            out.extend(central[i..end].iter().map(|g| Feature {
                slope: Some(slope),
                ..g.clone()
            }));
        }
        i = end;
    }
    Ok((out, timings))
}
