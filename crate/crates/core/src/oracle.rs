//! Slow reference implementation of the scale-slope response, for tests.
//!
//! The response at slope `λ` and DoG level `i` is computed by convolving the light
//! field with a combined 4D kernel `H = H_σ * H_λ`. `H_λ` has one unit tap per view
//! at `(round(λ s'), round(λ t'))`, normalized by the view count. `H_σ` is the
//! difference of two sampled 2D Gaussians. No focal stack is formed, nothing is
//! downsampled, and samples outside the image are zero. Output is restricted to the
//! central view.
//!
//! On pixels far enough from the border that no tap leaves the image, this equals the
//! first octave of the fast path (focal stack followed by per-slice pyramids) up to
//! floating-point reassociation.

use crate::detector::DetectorParams;
use crate::error::{Error, Result};
use crate::lfcore::{Image, LfDims, LightField};
use crate::scalespace::{gaussian_kernel, INPUT_SIGMA};

pub const MAX_PIXELS_PER_SIDE: usize = 64;
pub const MAX_DOG_LEVELS: usize = 6;
pub const MAX_SLOPES: usize = 5;

/// Sparse 4D slope-selective kernel: one tap per view.
#[derive(Clone, Debug, PartialEq)]
pub struct PlanarKernel {
    pub slope: f64,
    /// `(s, t, du, dv, weight)`.
    pub taps: Vec<(usize, usize, isize, isize, f64)>,
}

impl PlanarKernel {
    pub fn sum(&self) -> f64 {
        self.taps.iter().map(|t| t.4).sum()
    }

    /// Largest spatial tap displacement.
    pub fn max_shift(&self) -> usize {
        self.taps
            .iter()
            .map(|t| t.2.unsigned_abs().max(t.3.unsigned_abs()))
            .max()
            .unwrap_or(0)
    }
}

/// Slope-selective kernel for `slope` over the view grid of `dims`.
///
/// Fails when a tap would land outside the spatial extent of the image.
pub fn frequency_planar_filter(slope: f64, dims: LfDims) -> Result<PlanarKernel> {
    if !slope.is_finite() || dims.num_views() == 0 {
        return Err(Error::InvalidParameter("planar filter needs a finite slope and views".into()));
    }
    let w = 1.0 / dims.num_views() as f64;
    let mut taps = Vec::with_capacity(dims.num_views());
    for s in 0..dims.ns {
        for t in 0..dims.nt {
            let du = (slope * dims.s_offset(s)).round() as isize;
            let dv = (slope * dims.t_offset(t)).round() as isize;
            if du.unsigned_abs() >= dims.nu || dv.unsigned_abs() >= dims.nv {
                return Err(Error::InvalidParameter(format!(
                    "slope {slope} shifts view ({s}, {t}) beyond the image"
                )));
            }
            taps.push((s, t, du, dv, w));
        }
    }
    Ok(PlanarKernel { slope, taps })
}

/// Dense square 2D kernel of odd size, centered.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel2d {
    pub radius: usize,
    pub taps: Vec<f64>,
}

impl Kernel2d {
    fn width(&self) -> usize {
        2 * self.radius + 1
    }

    #[inline]
    pub fn at(&self, a: isize, b: isize) -> f64 {
        let r = self.radius as isize;
        self.taps[((a + r) as usize) * self.width() + (b + r) as usize]
    }

    fn gaussian(sigma: f64, radius: usize) -> Self {
        let width = 2 * radius + 1;
        let mut taps = vec![0.0; width * width];
        if sigma <= 0.0 {
            taps[radius * width + radius] = 1.0;
        } else {
            let g = gaussian_kernel(sigma);
            let r = g.len() / 2;
            for (i, gi) in g.iter().enumerate() {
                for (j, gj) in g.iter().enumerate() {
                    taps[(i + radius - r) * width + (j + radius - r)] = gi * gj;
                }
            }
        }
        Self { radius, taps }
    }

    /// `G(b) - G(a)` for blurs `a < b`; zero blur is the identity.
    pub fn difference_of_gaussians(a: f64, b: f64) -> Self {
        let radius = |s: f64| if s > 0.0 { gaussian_kernel(s).len() / 2 } else { 0 };
        let r = radius(a).max(radius(b));
        let (ga, gb) = (Self::gaussian(a, r), Self::gaussian(b, r));
        Self {
            radius: r,
            taps: gb.taps.iter().zip(&ga.taps).map(|(x, y)| x - y).collect(),
        }
    }
}

/// Scale-only filters `H_σ` for every DoG level of the unsampled first octave.
///
/// Level `i` blurs with `sqrt(σ_i² - σ_in²)` where `σ_i = σ0 k^i` and `σ_in` is the blur
/// assumed present in the input.
pub fn scale_filters(params: &DetectorParams) -> Vec<Kernel2d> {
    let levels = params.levels_per_octave;
    let k = 2f64.powf(1.0 / levels as f64);
    let extra: Vec<f64> = (0..levels + 3)
        .map(|i| {
            let s = params.base_sigma * k.powi(i as i32);
            let e = s * s - INPUT_SIGMA * INPUT_SIGMA;
            if e > 1e-12 {
                e.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    extra
        .windows(2)
        .map(|w| Kernel2d::difference_of_gaussians(w[0], w[1]))
        .collect()
}

/// Direct scale-slope responses at the central view, indexed `[slope][level]`.
#[derive(Clone, Debug)]
pub struct OracleSpace {
    pub slopes: Vec<f64>,
    pub dogs: Vec<Vec<Image>>,
    /// Pixels at least this far from every border are unaffected by zero padding.
    pub margin: usize,
}

fn check_caps(lf: &LightField, params: &DetectorParams, slopes: &[f64]) -> Result<()> {
    let d = lf.dims();
    if d.nu > MAX_PIXELS_PER_SIDE || d.nv > MAX_PIXELS_PER_SIDE {
        return Err(Error::OracleTooLarge(format!(
            "{}x{} pixels exceeds {MAX_PIXELS_PER_SIDE}x{MAX_PIXELS_PER_SIDE}",
            d.nu, d.nv
        )));
    }
    if params.levels_per_octave + 2 > MAX_DOG_LEVELS {
        return Err(Error::OracleTooLarge(format!(
            "{} DoG levels exceeds {MAX_DOG_LEVELS}",
            params.levels_per_octave + 2
        )));
    }
    if slopes.len() > MAX_SLOPES {
        return Err(Error::OracleTooLarge(format!("{} slopes exceeds {MAX_SLOPES}", slopes.len())));
    }
    if params.first_octave != 0 {
        return Err(Error::InvalidParameter("the oracle works on the unsampled octave (first_octave = 0)".into()));
    }
    if !lf.is_grayscale() {
        return Err(Error::InvalidParameter("the oracle needs a grayscale light field".into()));
    }
    Ok(())
}

fn prepare(lf: &LightField, params: &DetectorParams) -> Result<(Vec<PlanarKernel>, Vec<Kernel2d>, usize)> {
    params.validate()?;
    let slopes = params.slopes_for(lf.dims());
    check_caps(lf, params, &slopes)?;
    let planar = slopes
        .iter()
        .map(|&l| frequency_planar_filter(l, lf.dims()))
        .collect::<Result<Vec<_>>>()?;
    let scale = scale_filters(params);
    let margin = scale.iter().map(|k| k.radius).max().unwrap_or(0)
        + planar.iter().map(|k| k.max_shift()).max().unwrap_or(0);
    Ok((planar, scale, margin))
}

#[inline]
fn sample(lf: &LightField, s: usize, t: usize, u: isize, v: isize) -> f64 {
    let d = lf.dims();
    if u < 0 || v < 0 || u as usize >= d.nu || v as usize >= d.nv {
        0.0
    } else {
        lf.get(s, t, u as usize, v as usize, 0)
    }
}

/// `D(u, v, σ_i, λ)` by direct convolution with the combined kernel `H_σ * H_λ`.
pub fn build_6d_space(lf: &LightField, params: &DetectorParams) -> Result<OracleSpace> {
    let (planar, scale, margin) = prepare(lf, params)?;
    let d = lf.dims();
    let dogs = planar
        .iter()
        .map(|hl| {
            scale
                .iter()
                .map(|hs| {
                    let r = hs.radius as isize;
                    Image::from_fn(d.nu, d.nv, |u, v| {
                        let mut acc = 0.0;
                        for &(s, t, du, dv, w) in &hl.taps {
                            for a in -r..=r {
                                for b in -r..=r {
                                    let x = sample(lf, s, t, u as isize - du - a, v as isize - dv - b);
                                    acc += w * hs.at(a, b) * x;
                                }
                            }
                        }
                        acc
                    })
                })
                .collect()
        })
        .collect();
    Ok(OracleSpace {
        slopes: planar.iter().map(|k| k.slope).collect(),
        dogs,
        margin,
    })
}

fn convolve_zero(img: &Image, k: &Kernel2d) -> Image {
    let r = k.radius as isize;
    Image::from_fn(img.nu(), img.nv(), |u, v| {
        let mut acc = 0.0;
        for a in -r..=r {
            for b in -r..=r {
                if let Some(x) = img.get_checked(u as isize - a, v as isize - b) {
                    acc += k.at(a, b) * x;
                }
            }
        }
        acc
    })
}

fn shift_sum(lf: &LightField, hl: &PlanarKernel, view: impl Fn(usize, usize) -> Image) -> Image {
    let d = lf.dims();
    let mut out = Image::zeros(d.nu, d.nv);
    for &(s, t, du, dv, w) in &hl.taps {
        let img = view(s, t);
        for u in 0..d.nu {
            for v in 0..d.nv {
                if let Some(x) = img.get_checked(u as isize - du, v as isize - dv) {
                    let y = out.get(u, v) + w * x;
                    out.set(u, v, y);
                }
            }
        }
    }
    out
}

/// `H_σ * (H_λ * L)`: slope filter first, then the scale filter.
pub fn slope_then_scale(lf: &LightField, params: &DetectorParams) -> Result<OracleSpace> {
    let (planar, scale, margin) = prepare(lf, params)?;
    let dogs = planar
        .iter()
        .map(|hl| {
            let refocused = shift_sum(lf, hl, |s, t| lf.view(s, t));
            scale.iter().map(|hs| convolve_zero(&refocused, hs)).collect()
        })
        .collect();
    Ok(OracleSpace {
        slopes: planar.iter().map(|k| k.slope).collect(),
        dogs,
        margin,
    })
}

/// `H_λ * (H_σ * L)`: scale filter on every view first, then the slope filter.
pub fn scale_then_slope(lf: &LightField, params: &DetectorParams) -> Result<OracleSpace> {
    let (planar, scale, margin) = prepare(lf, params)?;
    let d = lf.dims();
    // filtered[level][view]
    let filtered: Vec<Vec<Image>> = scale
        .iter()
        .map(|hs| {
            (0..d.num_views())
                .map(|k| convolve_zero(&lf.view(k / d.nt, k % d.nt), hs))
                .collect()
        })
        .collect();
    let dogs = planar
        .iter()
        .map(|hl| {
            filtered
                .iter()
                .map(|views| shift_sum(lf, hl, |s, t| views[s * d.nt + t].clone()))
                .collect()
        })
        .collect();
    Ok(OracleSpace {
        slopes: planar.iter().map(|k| k.slope).collect(),
        dogs,
        margin,
    })
}

/// Integer extremum `(slope, level, u, v)` found by exhaustive scan.
pub type OracleExtremum = (usize, usize, usize, usize);

/// Every sample that is strictly above or strictly below all 80 neighbours across
/// position, level and slope, with `|D| > gate`. Only levels `1..len-1`, slopes
/// `1..M-1` and positions inside `[lo, hi)` on both axes are candidates.
pub fn brute_force_extrema(dogs: &[Vec<Image>], gate: f64, lo: usize, hi: usize) -> Vec<OracleExtremum> {
    let m = dogs.len();
    let mut out = Vec::new();
    if m < 3 {
        return out;
    }
    let levels = dogs[0].len();
    for si in 1..m - 1 {
        for li in 1..levels.saturating_sub(1) {
            for u in lo.max(1)..hi.min(dogs[si][li].nu() - 1) {
                for v in lo.max(1)..hi.min(dogs[si][li].nv() - 1) {
                    let x = dogs[si][li].get(u, v);
                    if !(x.abs() > gate) {
                        continue;
                    }
                    let (mut above, mut below) = (true, true);
                    for ds in 0..3 {
                        for dl in 0..3 {
                            for du in 0..3 {
                                for dv in 0..3 {
                                    if (ds, dl, du, dv) == (1, 1, 1, 1) {
                                        continue;
                                    }
                                    let y = dogs[si + ds - 1][li + dl - 1].get(u + du - 1, v + dv - 1);
                                    above &= x > y;
                                    below &= x < y;
                                }
                            }
                        }
                    }
                    if above || below {
                        out.push((si, li, u, v));
                    }
                }
            }
        }
    }
    out
}
