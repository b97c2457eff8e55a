//! Gaussian and difference-of-Gaussians pyramids, one per focal stack slice.
//!
//! Octaves follow the usual SIFT layout: `levels_per_octave + 3` Gaussian levels with
//! blur `σ0 · k^i`, `k = 2^(1/levels_per_octave)`, and `levels_per_octave + 2` DoG levels
//! formed from adjacent Gaussian levels. Every Gaussian level is computed from its
//! octave seed with a single blur (no chained blurs), so each DoG level of the first
//! octave is exactly `(G(σ_{i+1}') - G(σ_i')) * seed` for the sampled kernels below.

use rayon::prelude::*;

use crate::detector::DetectorParams;
use crate::error::{Error, Result};
use crate::focalstack::FocalStack;
use crate::lfcore::Image;

/// Blur assumed to be present in input images, in input pixels.
pub const INPUT_SIGMA: f64 = 0.5;
/// Octaves whose images would be smaller than this in either dimension are dropped.
pub const MIN_OCTAVE_DIM: usize = 8;
/// Inputs smaller than this in either dimension are rejected.
pub const MIN_INPUT_DIM: usize = 16;

/// Half-width of the truncated Gaussian kernel for `sigma`.
#[inline]
pub fn kernel_radius(sigma: f64) -> usize {
    (4.0 * sigma).ceil() as usize
}

/// Sampled Gaussian of length `2 * ceil(4σ) + 1`, normalized to unit sum.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = kernel_radius(sigma) as isize;
    let mut k: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|x| *x /= sum);
    k
}

/// Convolve every `u`-row along `v` with `kernel`, replicating edge samples.
fn convolve_along_v(img: &Image, kernel: &[f64]) -> Image {
    let (nu, nv) = (img.nu(), img.nv());
    let r = kernel.len() / 2;
    let mut out = vec![0.0; nu * nv];
    let mut padded = vec![0.0; nv + 2 * r];
    for u in 0..nu {
        let row = &img.data()[u * nv..(u + 1) * nv];
        padded[..r].fill(row[0]);
        padded[r..r + nv].copy_from_slice(row);
        padded[r + nv..].fill(row[nv - 1]);
        let dst = &mut out[u * nv..(u + 1) * nv];
        for (k, &w) in kernel.iter().enumerate() {
            let src = &padded[k..k + nv];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += w * s;
            }
        }
    }
    Image::from_vec(nu, nv, out).expect("dimensions preserved")
}

/// Separable Gaussian blur with edge replication.
pub fn gaussian_blur(img: &Image, sigma: f64) -> Result<Image> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidParameter(format!("blur sigma must be positive, got {sigma}")));
    }
    Ok(blur(img, sigma))
}

pub(crate) fn blur(img: &Image, sigma: f64) -> Image {
    let kernel = gaussian_kernel(sigma);
    let along_v = convolve_along_v(img, &kernel);
    convolve_along_v(&along_v.transpose(), &kernel).transpose()
}

/// Bilinear 2x upsampling: output sample `2i` copies input `i`, `2i+1` averages `i` and `i+1`.
pub fn upsample2(img: &Image) -> Image {
    let (nu, nv) = (img.nu(), img.nv());
    let at = |u: usize, v: usize| img.get(u.min(nu - 1), v.min(nv - 1));
    Image::from_fn(2 * nu, 2 * nv, |u2, v2| {
        let (u, fu) = (u2 / 2, u2 % 2);
        let (v, fv) = (v2 / 2, v2 % 2);
        match (fu, fv) {
            (0, 0) => at(u, v),
            (1, 0) => 0.5 * (at(u, v) + at(u + 1, v)),
            (0, 1) => 0.5 * (at(u, v) + at(u, v + 1)),
            _ => 0.25 * (at(u, v) + at(u + 1, v) + at(u, v + 1) + at(u + 1, v + 1)),
        }
    })
}

/// Keep every second sample in each direction.
pub fn downsample2(img: &Image) -> Image {
    Image::from_fn(img.nu() / 2, img.nv() / 2, |u, v| img.get(2 * u, 2 * v))
}

#[derive(Clone, Debug)]
pub struct Octave {
    /// Octave number; `-1` is the 2x upsampled octave. Pixel size is `2^index` input pixels.
    pub index: i32,
    pub gaussians: Vec<Image>,
    pub dogs: Vec<Image>,
    /// Blur of each Gaussian level in octave pixels.
    pub sigmas: Vec<f64>,
}

impl Octave {
    /// Size of one octave pixel in input pixels.
    pub fn step(&self) -> f64 {
        2f64.powi(self.index)
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.dogs[0].nu(), self.dogs[0].nv())
    }
}

#[derive(Clone, Debug)]
pub struct DoGPyramid {
    pub octaves: Vec<Octave>,
    pub levels_per_octave: usize,
    pub base_sigma: f64,
}

impl DoGPyramid {
    /// Scale in input pixels of fractional DoG level `level` in octave `octave`.
    pub fn sigma_at(&self, octave: usize, level: f64) -> f64 {
        let o = &self.octaves[octave];
        self.base_sigma * 2f64.powf(level / self.levels_per_octave as f64) * o.step()
    }

    pub fn same_geometry(&self, other: &DoGPyramid) -> bool {
        self.levels_per_octave == other.levels_per_octave
            && self.octaves.len() == other.octaves.len()
            && self
                .octaves
                .iter()
                .zip(&other.octaves)
                .all(|(a, b)| a.index == b.index && a.dims() == b.dims() && a.dogs.len() == b.dogs.len())
    }
}

pub(crate) fn check_scale_params(params: &DetectorParams) -> Result<()> {
    if params.levels_per_octave == 0 {
        return Err(Error::InvalidParameter("levels_per_octave must be at least 1".into()));
    }
    if params.num_octaves == 0 {
        return Err(Error::InvalidParameter("num_octaves must be at least 1".into()));
    }
    if params.first_octave < -1 {
        return Err(Error::InvalidParameter("first_octave must be -1 or larger".into()));
    }
    if !(params.base_sigma > 0.0) || !params.base_sigma.is_finite() {
        return Err(Error::InvalidParameter("base_sigma must be positive".into()));
    }
    Ok(())
}

/// Build the Gaussian and DoG pyramid of one image.
///
/// The octave count is truncated when images would shrink below [`MIN_OCTAVE_DIM`];
/// the actual count is `octaves.len()`.
pub fn build_dog_pyramid(img: &Image, params: &DetectorParams) -> Result<DoGPyramid> {
    check_scale_params(params)?;
    if img.nu() < MIN_INPUT_DIM || img.nv() < MIN_INPUT_DIM {
        return Err(Error::InvalidParameter(format!(
            "image {}x{} is smaller than {MIN_INPUT_DIM}x{MIN_INPUT_DIM}",
            img.nu(),
            img.nv()
        )));
    }
    let levels = params.levels_per_octave;
    let k = 2f64.powf(1.0 / levels as f64);
    let sigmas: Vec<f64> = (0..levels + 3)
        .map(|i| params.base_sigma * k.powi(i as i32))
        .collect();

    let mut seed = if params.first_octave < 0 {
        upsample2(img)
    } else {
        let mut s = img.clone();
        for _ in 0..params.first_octave {
            s = downsample2(&s);
        }
        s
    };
    let mut seed_sigma = INPUT_SIGMA * 2f64.powi(-params.first_octave);

    let mut octaves = Vec::with_capacity(params.num_octaves);
    for o in 0..params.num_octaves {
        if seed.nu() < MIN_OCTAVE_DIM || seed.nv() < MIN_OCTAVE_DIM {
            break;
        }
        let gaussians: Vec<Image> = sigmas
            .iter()
            .map(|&s| {
                let extra = s * s - seed_sigma * seed_sigma;
                if extra > 1e-12 {
                    blur(&seed, extra.sqrt())
                } else {
                    seed.clone()
                }
            })
            .collect();
        let dogs: Vec<Image> = gaussians.windows(2).map(|w| w[1].sub(&w[0])).collect();
        let next_seed = downsample2(&gaussians[levels]);
        octaves.push(Octave {
            index: params.first_octave + o as i32,
            gaussians,
            dogs,
            sigmas: sigmas.clone(),
        });
        seed = next_seed;
        seed_sigma = params.base_sigma;
    }
    if octaves.is_empty() {
        return Err(Error::InvalidParameter("image too small for any octave".into()));
    }
    Ok(DoGPyramid {
        octaves,
        levels_per_octave: levels,
        base_sigma: params.base_sigma,
    })
}

/// The 4D search volume `D(u,v,σ,λ)`: one DoG pyramid per focal stack slope.
#[derive(Clone, Debug)]
pub struct ScaleSlopeSpace {
    per_slope: Vec<DoGPyramid>,
    slopes: Vec<f64>,
}

impl ScaleSlopeSpace {
    pub fn new(per_slope: Vec<DoGPyramid>, slopes: Vec<f64>) -> Result<Self> {
        if per_slope.is_empty() {
            return Err(Error::EmptyStack);
        }
        if per_slope.len() != slopes.len() {
            return Err(Error::InvalidParameter("pyramid and slope counts differ".into()));
        }
        if per_slope.iter().any(|p| !p.same_geometry(&per_slope[0])) {
            return Err(Error::InvalidParameter("pyramids differ in geometry".into()));
        }
        Ok(Self { per_slope, slopes })
    }

    pub fn per_slope(&self) -> &[DoGPyramid] {
        &self.per_slope
    }

    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    pub fn num_slopes(&self) -> usize {
        self.slopes.len()
    }

    /// Pyramid geometry shared by all slopes.
    pub fn geometry(&self) -> &DoGPyramid {
        &self.per_slope[0]
    }

    #[inline]
    pub fn dog(&self, slope: usize, octave: usize, level: usize) -> &Image {
        &self.per_slope[slope].octaves[octave].dogs[level]
    }

    #[inline]
    pub fn gaussian(&self, slope: usize, octave: usize, level: usize) -> &Image {
        &self.per_slope[slope].octaves[octave].gaussians[level]
    }
}

/// One DoG pyramid per stack slice, computed in parallel.
pub fn build_scale_slope_space(stack: &FocalStack, params: &DetectorParams) -> Result<ScaleSlopeSpace> {
    if stack.is_empty() {
        return Err(Error::EmptyStack);
    }
    let per_slope = stack
        .slices()
        .par_iter()
        .map(|s| build_dog_pyramid(s, params))
        .collect::<Result<Vec<_>>>()?;
    ScaleSlopeSpace::new(per_slope, stack.slopes().to_vec())
}
