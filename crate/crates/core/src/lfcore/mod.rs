//! Light field and image containers, file formats and grayscale conversion.

mod gray;
mod io;

pub use gray::{equalize_histogram, luminance_gamma, to_grayscale, EQUALIZATION_BINS, GAMMA, LUMA_WEIGHTS};
pub use io::{load_image, load_lightfield, load_packed, load_view_grid, save_packed, save_view_grid, LightFieldFormat, PACKED_MAGIC, PACKED_VERSION};

use crate::error::{Error, Result};

/// Single-channel 2D sample grid indexed `(u, v)`, stored with `v` varying fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    nu: usize,
    nv: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn zeros(nu: usize, nv: usize) -> Self {
        Self::filled(nu, nv, 0.0)
    }

    pub fn filled(nu: usize, nv: usize, value: f64) -> Self {
        Self {
            nu,
            nv,
            data: vec![value; nu * nv],
        }
    }

    pub fn from_vec(nu: usize, nv: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != nu * nv {
            return Err(Error::InvalidParameter(format!(
                "image buffer has {} samples, expected {}x{}",
                data.len(),
                nu,
                nv
            )));
        }
        Ok(Self { nu, nv, data })
    }

    pub fn from_fn(nu: usize, nv: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(nu * nv);
        for u in 0..nu {
            for v in 0..nv {
                data.push(f(u, v));
            }
        }
        Self { nu, nv, data }
    }

    #[inline]
    pub fn nu(&self) -> usize {
        self.nu
    }

    #[inline]
    pub fn nv(&self) -> usize {
        self.nv
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.data[u * self.nv + v]
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, value: f64) {
        self.data[u * self.nv + v] = value;
    }

    /// Sample with signed coordinates, `None` outside the grid.
    #[inline]
    pub fn get_checked(&self, u: isize, v: isize) -> Option<f64> {
        if u < 0 || v < 0 || u as usize >= self.nu || v as usize >= self.nv {
            None
        } else {
            Some(self.data[u as usize * self.nv + v as usize])
        }
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn transpose(&self) -> Image {
        let mut out = vec![0.0; self.data.len()];
        for u in 0..self.nu {
            let row = &self.data[u * self.nv..(u + 1) * self.nv];
            for (v, &x) in row.iter().enumerate() {
                out[v * self.nu + u] = x;
            }
        }
        Image {
            nu: self.nv,
            nv: self.nu,
            data: out,
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            nu: self.nu,
            nv: self.nv,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Elementwise `self - other`.
    pub fn sub(&self, other: &Image) -> Image {
        debug_assert_eq!((self.nu, self.nv), (other.nu, other.nv));
        Image {
            nu: self.nu,
            nv: self.nv,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &Image) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Light field dimensions: `ns x nt` views of `nu x nv` pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LfDims {
    pub ns: usize,
    pub nt: usize,
    pub nu: usize,
    pub nv: usize,
}

impl LfDims {
    pub fn new(ns: usize, nt: usize, nu: usize, nv: usize) -> Self {
        Self { ns, nt, nu, nv }
    }

    pub fn num_views(&self) -> usize {
        self.ns * self.nt
    }

    pub fn num_samples(&self) -> usize {
        self.ns * self.nt * self.nu * self.nv
    }

    /// Offset of view index `s` from the central view, in view steps.
    #[inline]
    pub fn s_offset(&self, s: usize) -> f64 {
        s as f64 - (self.ns as f64 - 1.0) / 2.0
    }

    #[inline]
    pub fn t_offset(&self, t: usize) -> f64 {
        t as f64 - (self.nt as f64 - 1.0) / 2.0
    }

    /// Index of the central view, if the view grid has odd extent in both directions.
    pub fn center(&self) -> Result<(usize, usize)> {
        if self.ns % 2 == 0 || self.nt % 2 == 0 {
            return Err(Error::EvenViewCount {
                ns: self.ns,
                nt: self.nt,
            });
        }
        Ok(((self.ns - 1) / 2, (self.nt - 1) / 2))
    }
}

/// 4D light field `L(s,t,u,v)` with one (grayscale) or three (color) channels.
///
/// Samples are stored in `(s, t, u, v, channel)` order with `s` slowest, the same
/// order used by the packed file format.
#[derive(Clone, Debug, PartialEq)]
pub struct LightField {
    dims: LfDims,
    channels: usize,
    data: Vec<f64>,
}

impl LightField {
    pub fn new(dims: LfDims, channels: usize, data: Vec<f64>) -> Result<Self> {
        if dims.ns == 0 || dims.nt == 0 || dims.nu == 0 || dims.nv == 0 {
            return Err(Error::InvalidLightField(format!("zero dimension in {:?}", dims)));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidLightField(format!(
                "unsupported channel count {channels}"
            )));
        }
        if data.len() != dims.num_samples() * channels {
            return Err(Error::InvalidLightField(format!(
                "sample buffer has {} values, expected {}",
                data.len(),
                dims.num_samples() * channels
            )));
        }
        if let Some(x) = data.iter().find(|x| !x.is_finite() || **x < 0.0 || **x > 1.0) {
            return Err(Error::InvalidLightField(format!(
                "sample {x} outside [0, 1]"
            )));
        }
        Ok(Self {
            dims,
            channels,
            data,
        })
    }

    /// Grayscale light field from a row-major (`s` slowest) list of views.
    pub fn from_views(ns: usize, nt: usize, views: Vec<Image>) -> Result<Self> {
        if views.len() != ns * nt || views.is_empty() {
            return Err(Error::InvalidLightField(format!(
                "expected {} views, got {}",
                ns * nt,
                views.len()
            )));
        }
        let (nu, nv) = (views[0].nu(), views[0].nv());
        if views.iter().any(|v| v.nu() != nu || v.nv() != nv) {
            return Err(Error::InvalidLightField(
                "views differ in size".to_string(),
            ));
        }
        let mut data = Vec::with_capacity(ns * nt * nu * nv);
        for view in views {
            data.extend(view.into_vec());
        }
        Self::new(LfDims::new(ns, nt, nu, nv), 1, data)
    }

    /// Grayscale light field from a sample function `f(s, t, u, v)`.
    pub fn from_fn(dims: LfDims, mut f: impl FnMut(usize, usize, usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(dims.num_samples());
        for s in 0..dims.ns {
            for t in 0..dims.nt {
                for u in 0..dims.nu {
                    for v in 0..dims.nv {
                        data.push(f(s, t, u, v));
                    }
                }
            }
        }
        Self::new(dims, 1, data)
    }

    pub fn dims(&self) -> LfDims {
        self.dims
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn is_grayscale(&self) -> bool {
        self.channels == 1
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    fn view_start(&self, s: usize, t: usize) -> usize {
        (s * self.dims.nt + t) * self.dims.nu * self.dims.nv * self.channels
    }

    /// Raw samples of one grayscale view, `u`-major.
    pub fn view_slice(&self, s: usize, t: usize) -> &[f64] {
        debug_assert_eq!(self.channels, 1);
        let start = self.view_start(s, t);
        &self.data[start..start + self.dims.nu * self.dims.nv]
    }

    #[inline]
    pub fn get(&self, s: usize, t: usize, u: usize, v: usize, channel: usize) -> f64 {
        let idx = self.view_start(s, t) + (u * self.dims.nv + v) * self.channels + channel;
        self.data[idx]
    }

    /// One channel of view `(s, t)`.
    pub fn view_channel(&self, s: usize, t: usize, channel: usize) -> Image {
        let start = self.view_start(s, t);
        let n = self.dims.nu * self.dims.nv;
        let data = (0..n)
            .map(|i| self.data[start + i * self.channels + channel])
            .collect();
        Image {
            nu: self.dims.nu,
            nv: self.dims.nv,
            data,
        }
    }

    /// View `(s, t)` of a grayscale light field.
    pub fn view(&self, s: usize, t: usize) -> Image {
        self.view_channel(s, t, 0)
    }

    /// All views in row-major order (`s` slowest).
    pub fn views(&self) -> Vec<Image> {
        let mut out = Vec::with_capacity(self.dims.num_views());
        for s in 0..self.dims.ns {
            for t in 0..self.dims.nt {
                out.push(self.view(s, t));
            }
        }
        out
    }

    /// The view at `s = (N_s-1)/2, t = (N_t-1)/2`.
    pub fn center_view(&self) -> Result<Image> {
        let (s, t) = self.dims.center()?;
        Ok(self.view(s, t))
    }

    /// The `k x k` block of views centered on the central view.
    pub fn extract_center_views(&self, k: usize) -> Result<LightField> {
        if k % 2 == 0 || k == 0 {
            return Err(Error::InvalidParameter(format!(
                "center view block size {k} must be odd"
            )));
        }
        if k > self.dims.ns.min(self.dims.nt) {
            return Err(Error::InvalidParameter(format!(
                "center view block {k} exceeds view grid {}x{}",
                self.dims.ns, self.dims.nt
            )));
        }
        let (cs, ct) = self.dims.center()?;
        let half = (k - 1) / 2;
        let per_view = self.dims.nu * self.dims.nv * self.channels;
        let mut data = Vec::with_capacity(k * k * per_view);
        for s in cs - half..=cs + half {
            for t in ct - half..=ct + half {
                let start = self.view_start(s, t);
                data.extend_from_slice(&self.data[start..start + per_view]);
            }
        }
        Ok(LightField {
            dims: LfDims::new(k, k, self.dims.nu, self.dims.nv),
            channels: self.channels,
            data,
        })
    }

    /// Multiply every sample by `c`, clamping to `[0, 1]`.
    pub fn scaled(&self, c: f64) -> LightField {
        LightField {
            dims: self.dims,
            channels: self.channels,
            data: self.data.iter().map(|x| (x * c).clamp(0.0, 1.0)).collect(),
        }
    }

    pub(crate) fn from_parts_unchecked(dims: LfDims, channels: usize, data: Vec<f64>) -> Self {
        Self {
            dims,
            channels,
            data,
        }
    }
}
