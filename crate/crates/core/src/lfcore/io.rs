//! Light field file formats.
//!
//! * view grid: a directory holding `meta.json` (`{ns, nt, nu, nv, channels}`) and one
//!   PNG per view named `view_<s>_<t>.png`, 8 or 16 bit. PNG `x` is `u`, PNG `y` is `v`.
//! * image: a single PNG, read as a light field with one view.
//! * packed: little-endian `"LIFF"`, `u32` version (1), `u32` ns, nt, nu, nv, channels,
//!   then `f64` samples in `(s, t, u, v, channel)` order with `s` slowest.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use image::{DynamicImage, ImageBuffer, Luma, Rgb};
use serde::{Deserialize, Serialize};

use super::{LfDims, LightField};
use crate::error::{Error, Result};

pub const PACKED_MAGIC: &[u8; 4] = b"LIFF";
pub const PACKED_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LightFieldFormat {
    ViewGrid,
    Image,
    Packed,
}

impl LightFieldFormat {
    /// Directories are view grids, `.png` files are single images, anything else is
    /// packed.
    pub fn detect(path: &Path) -> Self {
        if path.is_dir() {
            LightFieldFormat::ViewGrid
        } else if path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("png"))
        {
            LightFieldFormat::Image
        } else {
            LightFieldFormat::Packed
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    ns: usize,
    nt: usize,
    nu: usize,
    nv: usize,
    channels: usize,
}

pub fn load_lightfield(path: &Path, format: LightFieldFormat) -> Result<LightField> {
    match format {
        LightFieldFormat::ViewGrid => load_view_grid(path),
        LightFieldFormat::Image => load_image(path),
        LightFieldFormat::Packed => load_packed(path),
    }
}

/// A single PNG as a 1x1 light field. Color images keep three channels.
pub fn load_image(path: &Path) -> Result<LightField> {
    let img = image::open(path).map_err(|e| Error::InvalidLightField(format!("{}: {e}", path.display())))?;
    let channels = if img.color().has_color() { 3 } else { 1 };
    let dims = LfDims::new(1, 1, img.width() as usize, img.height() as usize);
    if dims.num_samples() == 0 {
        return Err(Error::InvalidLightField(format!("{}: empty image", path.display())));
    }
    let mut data = Vec::with_capacity(dims.num_samples() * channels);
    append_view(&img, channels, &mut data);
    LightField::new(dims, channels, data)
}

fn view_name(s: usize, t: usize) -> String {
    format!("view_{s}_{t}.png")
}

pub fn load_view_grid(dir: &Path) -> Result<LightField> {
    let meta_path = dir.join("meta.json");
    let meta_text = std::fs::read_to_string(&meta_path)
        .map_err(|e| Error::InvalidLightField(format!("{}: {e}", meta_path.display())))?;
    let meta: Meta = serde_json::from_str(&meta_text)
        .map_err(|e| Error::InvalidLightField(format!("{}: {e}", meta_path.display())))?;
    if meta.channels != 1 && meta.channels != 3 {
        return Err(Error::InvalidLightField(format!(
            "unsupported channel count {}",
            meta.channels
        )));
    }
    let dims = LfDims::new(meta.ns, meta.nt, meta.nu, meta.nv);
    if dims.num_samples() == 0 {
        return Err(Error::InvalidLightField("zero dimension in meta.json".into()));
    }
    let mut data = Vec::with_capacity(dims.num_samples() * meta.channels);
    for s in 0..meta.ns {
        for t in 0..meta.nt {
            let path = dir.join(view_name(s, t));
            if !path.exists() {
                return Err(Error::InvalidLightField(format!(
                    "missing view {} (non-rectangular view grid?)",
                    path.display()
                )));
            }
            let img = image::open(&path)?;
            if img.width() as usize != meta.nu || img.height() as usize != meta.nv {
                return Err(Error::InconsistentDims {
                    path,
                    expected_u: meta.nu,
                    expected_v: meta.nv,
                    found_u: img.width() as usize,
                    found_v: img.height() as usize,
                });
            }
            append_view(&img, meta.channels, &mut data);
        }
    }
    LightField::new(dims, meta.channels, data)
}

fn append_view(img: &DynamicImage, channels: usize, out: &mut Vec<f64>) {
    let (w, h) = (img.width(), img.height());
    let sixteen = matches!(
        img,
        DynamicImage::ImageLuma16(_)
            | DynamicImage::ImageLumaA16(_)
            | DynamicImage::ImageRgb16(_)
            | DynamicImage::ImageRgba16(_)
    );
    if channels == 1 {
        if sixteen {
            let g = img.to_luma16();
            for u in 0..w {
                for v in 0..h {
                    out.push(g.get_pixel(u, v).0[0] as f64 / u16::MAX as f64);
                }
            }
        } else {
            let g = img.to_luma8();
            for u in 0..w {
                for v in 0..h {
                    out.push(g.get_pixel(u, v).0[0] as f64 / u8::MAX as f64);
                }
            }
        }
    } else if sixteen {
        let c = img.to_rgb16();
        for u in 0..w {
            for v in 0..h {
                out.extend(c.get_pixel(u, v).0.map(|x| x as f64 / u16::MAX as f64));
            }
        }
    } else {
        let c = img.to_rgb8();
        for u in 0..w {
            for v in 0..h {
                out.extend(c.get_pixel(u, v).0.map(|x| x as f64 / u8::MAX as f64));
            }
        }
    }
}

/// Write a view grid with 16-bit PNGs.
pub fn save_view_grid(lf: &LightField, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let d = lf.dims();
    let meta = Meta {
        ns: d.ns,
        nt: d.nt,
        nu: d.nu,
        nv: d.nv,
        channels: lf.channels(),
    };
    std::fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;
    let q = |x: f64| (x.clamp(0.0, 1.0) * u16::MAX as f64).round() as u16;
    for s in 0..d.ns {
        for t in 0..d.nt {
            let path = dir.join(view_name(s, t));
            if lf.channels() == 1 {
                let buf = ImageBuffer::<Luma<u16>, _>::from_fn(d.nu as u32, d.nv as u32, |x, y| {
                    Luma([q(lf.get(s, t, x as usize, y as usize, 0))])
                });
                buf.save(&path)?;
            } else {
                let buf = ImageBuffer::<Rgb<u16>, _>::from_fn(d.nu as u32, d.nv as u32, |x, y| {
                    Rgb([0, 1, 2].map(|c| q(lf.get(s, t, x as usize, y as usize, c))))
                });
                buf.save(&path)?;
            }
        }
    }
    Ok(())
}

pub fn load_packed(path: &Path) -> Result<LightField> {
    let file = File::open(path).map_err(|e| Error::InvalidLightField(format!("{}: {e}", path.display())))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::InvalidLightField("truncated header".into()))?;
    if &magic != PACKED_MAGIC {
        return Err(Error::InvalidLightField("bad magic, expected LIFF".into()));
    }
    let mut header = [0u32; 6];
    for h in header.iter_mut() {
        *h = r
            .read_u32::<LittleEndian>()
            .map_err(|_| Error::InvalidLightField("truncated header".into()))?;
    }
    let [version, ns, nt, nu, nv, channels] = header.map(|x| x as usize);
    if version != PACKED_VERSION as usize {
        return Err(Error::InvalidLightField(format!("unsupported version {version}")));
    }
    let dims = LfDims::new(ns, nt, nu, nv);
    let n = dims
        .num_samples()
        .checked_mul(channels)
        .ok_or_else(|| Error::InvalidLightField("header dimensions overflow".into()))?;
    let mut data = vec![0.0f64; n];
    r.read_f64_into::<LittleEndian>(&mut data)
        .map_err(|_| Error::InvalidLightField("truncated sample data".into()))?;
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::InvalidLightField("trailing bytes after sample data".into()));
    }
    LightField::new(dims, channels, data)
}

pub fn save_packed(lf: &LightField, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(PACKED_MAGIC)?;
    let d = lf.dims();
    for x in [PACKED_VERSION as usize, d.ns, d.nt, d.nu, d.nv, lf.channels()] {
        w.write_u32::<LittleEndian>(x as u32)?;
    }
    for &x in lf.data() {
        w.write_f64::<LittleEndian>(x)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lfcore::Image;
    use proptest::prelude::*;

    fn small_lf() -> LightField {
        LightField::from_fn(LfDims::new(3, 3, 12, 10), |s, t, u, v| {
            ((s * 7 + t * 5 + u * 3 + v) % 17) as f64 / 16.0
        })
        .unwrap()
    }

    #[test]
    fn view_grid_roundtrip_dims() {
        let dir = tempfile::tempdir().unwrap();
        let lf = small_lf();
        save_view_grid(&lf, dir.path()).unwrap();
        let back = load_view_grid(dir.path()).unwrap();
        assert_eq!(back.dims(), LfDims::new(3, 3, 12, 10));
        // 16-bit quantization.
        let err = lf.data().iter().zip(back.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err <= 0.5 / 65535.0 + 1e-12);
    }

    #[test]
    fn view_grid_inconsistent_view_size() {
        let dir = tempfile::tempdir().unwrap();
        save_view_grid(&small_lf(), dir.path()).unwrap();
        let odd = ImageBuffer::<Luma<u8>, _>::from_pixel(11, 10, Luma([3u8]));
        odd.save(dir.path().join("view_1_2.png")).unwrap();
        let err = load_view_grid(dir.path()).unwrap_err();
        assert!(matches!(err, Error::InconsistentDims { found_u: 11, .. }), "{err}");
    }

    #[test]
    fn single_png_is_one_view() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.png");
        ImageBuffer::<Luma<u8>, _>::from_fn(9, 7, |x, y| Luma([(x * 20 + y) as u8]))
            .save(&path)
            .unwrap();
        assert_eq!(LightFieldFormat::detect(&path), LightFieldFormat::Image);
        let lf = load_lightfield(&path, LightFieldFormat::Image).unwrap();
        assert_eq!(lf.dims(), LfDims::new(1, 1, 9, 7));
        assert_eq!(lf.get(0, 0, 2, 3, 0), 43.0 / 255.0);
    }

    #[test]
    fn view_grid_missing_meta() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_view_grid(dir.path()).unwrap_err();
        assert!(err.to_string().starts_with("invalid light field"));
    }

    #[test]
    fn view_grid_missing_view() {
        let dir = tempfile::tempdir().unwrap();
        save_view_grid(&small_lf(), dir.path()).unwrap();
        std::fs::remove_file(dir.path().join("view_2_0.png")).unwrap();
        assert!(matches!(load_view_grid(dir.path()), Err(Error::InvalidLightField(_))));
    }

    #[test]
    fn eight_bit_views_map_to_unit_range() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("meta.json"),
            r#"{"ns":1,"nt":1,"nu":2,"nv":1,"channels":1}"#,
        )
        .unwrap();
        let img = ImageBuffer::<Luma<u8>, _>::from_fn(2, 1, |x, _| Luma([if x == 0 { 0 } else { 255 }]));
        img.save(dir.path().join("view_0_0.png")).unwrap();
        let lf = load_view_grid(dir.path()).unwrap();
        assert_eq!(lf.data(), &[0.0, 1.0]);
    }

    #[test]
    fn packed_header_dims() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lf.liff");
        let lf = LightField::from_views(11, 11, vec![Image::filled(5, 4, 0.25); 121]).unwrap();
        save_packed(&lf, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"LIFF");
        assert_eq!(bytes.len(), 4 + 24 + 121 * 20 * 8);
        assert_eq!(load_packed(&path).unwrap().dims(), LfDims::new(11, 11, 5, 4));
    }

    #[test]
    fn packed_rejects_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lf.liff");
        save_packed(&small_lf(), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load_packed(&path), Err(Error::InvalidLightField(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn packed_roundtrip_is_bit_exact(
            ns in 1usize..4, nt in 1usize..4, nu in 1usize..6, nv in 1usize..6,
            color in any::<bool>(), seed in any::<u64>(),
        ) {
            let channels = if color { 3 } else { 1 };
            let n = ns * nt * nu * nv * channels;
            let mut x = seed | 1;
            let data: Vec<f64> = (0..n).map(|_| {
                x ^= x << 13; x ^= x >> 7; x ^= x << 17;
                (x >> 11) as f64 / (1u64 << 53) as f64
            }).collect();
            let lf = LightField::new(LfDims::new(ns, nt, nu, nv), channels, data).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("p.liff");
            save_packed(&lf, &path).unwrap();
            let back = load_packed(&path).unwrap();
            prop_assert_eq!(back.dims(), lf.dims());
            prop_assert!(back.data().iter().zip(lf.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }
}
