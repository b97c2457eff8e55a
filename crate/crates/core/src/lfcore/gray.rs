use super::{Image, LfDims, LightField};
use crate::error::{Error, Result};

/// ITU-R BT.601 luma weights for R, G, B.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];
/// Exponent applied after luminance conversion.
pub const GAMMA: f64 = 0.5;
pub const EQUALIZATION_BINS: usize = 256;

/// Luminance of an RGB triple followed by gamma correction.
#[inline]
pub fn luminance_gamma(rgb: [f64; 3]) -> f64 {
    let y = LUMA_WEIGHTS[0] * rgb[0] + LUMA_WEIGHTS[1] * rgb[1] + LUMA_WEIGHTS[2] * rgb[2];
    y.clamp(0.0, 1.0).powf(GAMMA)
}

/// Histogram equalization over [`EQUALIZATION_BINS`] bins.
///
/// Each sample maps to the fraction of samples falling in its bin or below, so the
/// output lies in `(0, 1]` and a single-valued image maps to a single value.
pub fn equalize_histogram(img: &Image) -> Image {
    let n = img.data().len();
    if n == 0 {
        return img.clone();
    }
    let bin_of = |x: f64| ((x * EQUALIZATION_BINS as f64) as usize).min(EQUALIZATION_BINS - 1);
    let mut hist = [0usize; EQUALIZATION_BINS];
    for &x in img.data() {
        hist[bin_of(x)] += 1;
    }
    let mut cdf = [0.0f64; EQUALIZATION_BINS];
    let mut acc = 0usize;
    for (c, h) in cdf.iter_mut().zip(hist) {
        acc += h;
        *c = acc as f64 / n as f64;
    }
    img.map(|x| cdf[bin_of(x)])
}

/// Color to grayscale: luminance, gamma 0.5, then per-view histogram equalization.
pub fn to_grayscale(lf: &LightField) -> Result<LightField> {
    if lf.channels() != 3 {
        return Err(Error::InvalidParameter(format!(
            "grayscale conversion expects 3 channels, got {}",
            lf.channels()
        )));
    }
    let dims: LfDims = lf.dims();
    let mut data = Vec::with_capacity(dims.num_samples());
    for s in 0..dims.ns {
        for t in 0..dims.nt {
            let luma = Image::from_fn(dims.nu, dims.nv, |u, v| {
                luminance_gamma([lf.get(s, t, u, v, 0), lf.get(s, t, u, v, 1), lf.get(s, t, u, v, 2)])
            });
            data.extend(equalize_histogram(&luma).into_vec());
        }
    }
    Ok(LightField::from_parts_unchecked(dims, 1, data))
}
