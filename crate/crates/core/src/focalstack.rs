//! Shift-and-sum refocusing.
//!
//! Slice `F(u,v,λ)` averages every view after shifting it so that scene points with
//! slope `λ` line up with the central view. Source coordinates are rounded to the
//! nearest sample (half away from zero). Each output pixel is divided by the number of
//! views whose shifted sample fell inside the image, so borders do not darken.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lfcore::{Image, LfDims, LightField};

#[derive(Clone, Debug, PartialEq)]
pub struct FocalStack {
    slices: Vec<Image>,
    slopes: Vec<f64>,
    source_dims: LfDims,
}

impl FocalStack {
    pub fn slices(&self) -> &[Image] {
        &self.slices
    }

    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    pub fn source_dims(&self) -> LfDims {
        self.source_dims
    }

    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    /// Build a stack from precomputed slices, e.g. a single 2D image treated as a
    /// one-slice stack.
    pub fn from_slices(slices: Vec<Image>, slopes: Vec<f64>, source_dims: LfDims) -> Result<Self> {
        if slices.is_empty() {
            return Err(Error::EmptyStack);
        }
        if slices.len() != slopes.len() {
            return Err(Error::InvalidParameter(format!(
                "{} slices but {} slopes",
                slices.len(),
                slopes.len()
            )));
        }
        check_slopes(&slopes)?;
        Ok(Self {
            slices,
            slopes,
            source_dims,
        })
    }
}

/// `count` evenly spaced slopes covering `[min, max]`; a single slope sits at the midpoint.
pub fn slope_range(min: f64, max: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![0.5 * (min + max)],
        _ => (0..count)
            .map(|i| min + (max - min) * i as f64 / (count - 1) as f64)
            .collect(),
    }
}

/// Default slope list: `count` slopes over `[-1, 1]`, one per view along `s`.
pub fn default_slopes(count: usize) -> Vec<f64> {
    slope_range(-1.0, 1.0, count)
}

fn check_slopes(slopes: &[f64]) -> Result<()> {
    if slopes.is_empty() {
        return Err(Error::EmptyStack);
    }
    if slopes.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidParameter("slopes must be finite".into()));
    }
    if slopes.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter("slopes must be strictly increasing".into()));
    }
    Ok(())
}

/// Source index for output coordinate `x` in a view with centered offset `offset`.
#[inline]
fn source_index(x: usize, slope: f64, offset: f64, n: usize) -> Option<usize> {
    let src = (x as f64 - slope * offset).round();
    if src >= 0.0 && src < n as f64 {
        Some(src as usize)
    } else {
        None
    }
}

/// Refocus a grayscale light field at slope `slope`.
pub fn refocus_slice(lf: &LightField, slope: f64) -> Result<Image> {
    if !lf.is_grayscale() {
        return Err(Error::InvalidParameter("refocusing needs a grayscale light field".into()));
    }
    if !slope.is_finite() {
        return Err(Error::InvalidParameter("slope must be finite".into()));
    }
    let d = lf.dims();
    let mut sum = vec![0.0f64; d.nu * d.nv];
    let mut count = vec![0u32; d.nu * d.nv];
    let mut v_src: Vec<Option<usize>> = vec![None; d.nv];
    for s in 0..d.ns {
        let so = d.s_offset(s);
        for t in 0..d.nt {
            let to = d.t_offset(t);
            let view = lf.view_slice(s, t);
            for (v, src) in v_src.iter_mut().enumerate() {
                *src = source_index(v, slope, to, d.nv);
            }
            for u in 0..d.nu {
                let Some(su) = source_index(u, slope, so, d.nu) else {
                    continue;
                };
                let src_row = &view[su * d.nv..(su + 1) * d.nv];
                let out = &mut sum[u * d.nv..(u + 1) * d.nv];
                let cnt = &mut count[u * d.nv..(u + 1) * d.nv];
                for v in 0..d.nv {
                    if let Some(sv) = v_src[v] {
                        out[v] += src_row[sv];
                        cnt[v] += 1;
                    }
                }
            }
        }
    }
    for (i, (x, &c)) in sum.iter_mut().zip(&count).enumerate() {
        if c == 0 {
            return Err(Error::SlopeOutOfRange {
                slope,
                u: i / d.nv,
                v: i % d.nv,
            });
        }
        *x /= c as f64;
    }
    Image::from_vec(d.nu, d.nv, sum)
}

/// One refocused slice per slope. Slices are computed independently and in parallel;
/// the result does not depend on scheduling.
pub fn build_focal_stack(lf: &LightField, slopes: &[f64]) -> Result<FocalStack> {
    check_slopes(slopes)?;
    let slices = slopes
        .par_iter()
        .map(|&l| refocus_slice(lf, l))
        .collect::<Result<Vec<_>>>()?;
    Ok(FocalStack {
        slices,
        slopes: slopes.to_vec(),
        source_dims: lf.dims(),
    })
}
