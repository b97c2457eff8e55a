//! Gradient-histogram descriptors and ratio-test matching.
//!
//! The descriptor is a `4x4` grid of 8-bin orientation histograms over a patch rotated
//! to the keypoint orientation. Each spatial bin is `3σ` wide. Gradient magnitudes
//! are weighted by a Gaussian of half the window width and split trilinearly between
//! neighbouring spatial and orientation bins. The raw vector is turned into a RootSIFT
//! vector by L1 normalization followed by an elementwise square root.

use std::f64::consts::TAU;

use crate::detector::{gradient, Feature, Keypoint};
use crate::lfcore::Image;
use crate::DESCRIPTOR_LEN;

pub const SPATIAL_BINS: usize = 4;
pub const DESCRIPTOR_ORIENTATION_BINS: usize = 8;
/// Width of one spatial bin as a multiple of the keypoint scale.
pub const BIN_WIDTH: f64 = 3.0;

/// Index of spatial bin `(bx, by)` and orientation bin `bo` in the descriptor vector.
#[inline]
pub fn descriptor_index(bx: usize, by: usize, bo: usize) -> usize {
    (by * SPATIAL_BINS + bx) * DESCRIPTOR_ORIENTATION_BINS + bo
}

/// Raw (unnormalized) descriptor of `kp` in the pixel frame of `img`.
///
/// Pixels whose gradient cannot be formed (image border) contribute nothing.
pub fn compute_descriptor(img: &Image, kp: &Keypoint) -> Vec<f64> {
    let mut d = vec![0.0; DESCRIPTOR_LEN];
    let bw = BIN_WIDTH * kp.sigma;
    let half = SPATIAL_BINS as f64 / 2.0;
    let radius = (bw * std::f64::consts::SQRT_2 * (SPATIAL_BINS as f64 + 1.0) * 0.5).ceil() as isize;
    let (c, s) = (kp.orientation.cos(), kp.orientation.sin());
    let (ui, vi) = (kp.u.round() as isize, kp.v.round() as isize);
    for du in -radius..=radius {
        for dv in -radius..=radius {
            let (pu, pv) = (ui + du, vi + dv);
            let (dx, dy) = (pu as f64 - kp.u, pv as f64 - kp.v);
            let rx = (c * dx + s * dy) / bw;
            let ry = (-s * dx + c * dy) / bw;
            let bx = rx + half - 0.5;
            let by = ry + half - 0.5;
            if bx <= -1.0 || by <= -1.0 || bx >= SPATIAL_BINS as f64 || by >= SPATIAL_BINS as f64 {
                continue;
            }
            let Some((mag, ang)) = gradient(img, pu, pv) else {
                continue;
            };
            if mag == 0.0 {
                continue;
            }
            let w = mag * (-(rx * rx + ry * ry) / (2.0 * half * half)).exp();
            let bo = (ang - kp.orientation).rem_euclid(TAU) * DESCRIPTOR_ORIENTATION_BINS as f64 / TAU;
            let (x0, y0, o0) = (bx.floor(), by.floor(), bo.floor());
            let (fx, fy, fo) = (bx - x0, by - y0, bo - o0);
            let (x0, y0, o0) = (x0 as isize, y0 as isize, o0 as usize);
            for (xi, wx) in [(x0, 1.0 - fx), (x0 + 1, fx)] {
                if xi < 0 || xi >= SPATIAL_BINS as isize {
                    continue;
                }
                for (yi, wy) in [(y0, 1.0 - fy), (y0 + 1, fy)] {
                    if yi < 0 || yi >= SPATIAL_BINS as isize {
                        continue;
                    }
                    for (oi, wo) in [(o0, 1.0 - fo), (o0 + 1, fo)] {
                        let oi = oi % DESCRIPTOR_ORIENTATION_BINS;
                        d[descriptor_index(xi as usize, yi as usize, oi)] += w * wx * wy * wo;
                    }
                }
            }
        }
    }
    d
}

/// L1 normalization followed by an elementwise square root. A zero vector stays zero.
pub fn normalize_rootsift(raw: &[f64]) -> Vec<f64> {
    let l1: f64 = raw.iter().map(|x| x.abs()).sum();
    if !(l1 > 0.0) {
        return vec![0.0; raw.len()];
    }
    raw.iter().map(|x| (x.abs() / l1).sqrt()).collect()
}

#[inline]
pub fn descriptor_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Match {
    /// Index into the first feature set.
    pub a: usize,
    /// Index into the second feature set.
    pub b: usize,
    pub distance: f64,
    /// Distance from `a` to its second-nearest neighbour in the second set.
    pub second_distance: f64,
}

/// Nearest and second-nearest neighbour of `q` in `set`, ties broken by lower index.
fn two_nearest(q: &[f64], set: &[&[f64]]) -> Option<(usize, f64, f64)> {
    let mut best = (usize::MAX, f64::INFINITY);
    let mut second = f64::INFINITY;
    for (i, d) in set.iter().enumerate() {
        let dist = descriptor_distance(q, d);
        if dist < best.1 {
            second = best.1;
            best = (i, dist);
        } else if dist < second {
            second = dist;
        }
    }
    (best.0 != usize::MAX).then_some((best.0, best.1, second))
}

/// Mutual nearest-neighbour matching with a distance ratio test.
///
/// A pair is kept when `d1 / d2 < ratio` and each descriptor is the other's nearest
/// neighbour. A ratio of 1 or more disables the ratio test, leaving mutual
/// nearest-neighbour matching. With fewer than two descriptors in `b` the ratio is
/// undefined and no match is returned.
pub fn match_descriptors(a: &[&[f64]], b: &[&[f64]], ratio: f64) -> Vec<Match> {
    if b.len() < 2 || a.is_empty() {
        return Vec::new();
    }
    let back: Vec<usize> = b
        .iter()
        .map(|d| two_nearest(d, a).map(|x| x.0).unwrap_or(usize::MAX))
        .collect();
    let mut out = Vec::new();
    for (i, q) in a.iter().enumerate() {
        let Some((j, d1, d2)) = two_nearest(q, b) else {
            continue;
        };
        if back[j] != i {
            continue;
        }
        let pass = ratio >= 1.0 || d1 < ratio * d2;
        if pass {
            out.push(Match {
                a: i,
                b: j,
                distance: d1,
                second_distance: d2,
            });
        }
    }
    out
}

pub fn match_features(a: &[Feature], b: &[Feature], ratio: f64) -> Vec<Match> {
    let da: Vec<&[f64]> = a.iter().map(|f| f.descriptor.as_slice()).collect();
    let db: Vec<&[f64]> = b.iter().map(|f| f.descriptor.as_slice()).collect();
    match_descriptors(&da, &db, ratio)
}
