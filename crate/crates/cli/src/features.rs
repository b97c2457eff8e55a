//! Feature files.
//!
//! CSV: header `u,v,sigma,lambda,theta,response,d0,...,d127`, one row per feature,
//! every number printed with 9 significant digits (`{:.8e}`) so that reading and
//! writing again reproduces the file byte for byte. A feature without a slope has
//! `lambda = nan`.
//!
//! Binary: little-endian `"LFFT"`, `u32` version (1), `u32` feature count, `u32`
//! descriptor length, then per feature `f64` u, v, sigma, lambda (NaN when absent),
//! theta, response and the descriptor.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use liff::Feature;

use crate::error::{CliError, CliResult};

pub const BINARY_MAGIC: &[u8; 4] = b"LFFT";
pub const BINARY_VERSION: u32 = 1;
const FIXED_COLUMNS: [&str; 6] = ["u", "v", "sigma", "lambda", "theta", "response"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureFormat {
    Csv,
    Binary,
}

impl FeatureFormat {
    /// `.bin` files are binary, everything else is CSV.
    pub fn from_path(path: &Path) -> Self {
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("bin")) {
            FeatureFormat::Binary
        } else {
            FeatureFormat::Csv
        }
    }
}

fn num(x: f64) -> String {
    if x.is_nan() {
        "nan".to_string()
    } else {
        format!("{x:.8e}")
    }
}

pub fn write_csv<W: Write>(features: &[Feature], mut w: W) -> CliResult<()> {
    let len = features.first().map_or(liff::DESCRIPTOR_LEN, |f| f.descriptor.len());
    let mut header: Vec<String> = FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend((0..len).map(|i| format!("d{i}")));
    writeln!(w, "{}", header.join(","))?;
    for f in features {
        if f.descriptor.len() != len {
            return Err(CliError::param("features have descriptors of different lengths"));
        }
        let mut row = vec![
            num(f.u),
            num(f.v),
            num(f.sigma),
            num(f.slope.unwrap_or(f64::NAN)),
            num(f.orientation),
            num(f.response),
        ];
        row.extend(f.descriptor.iter().map(|&d| num(d)));
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: BufRead>(r: R) -> CliResult<Vec<Feature>> {
    let mut lines = r.lines();
    let header = match lines.next() {
        Some(h) => h?,
        None => return Err(CliError::input("feature file is empty (no header)")),
    };
    let cols: Vec<&str> = header.trim_end().split(',').collect();
    if cols.len() < FIXED_COLUMNS.len() || cols[..FIXED_COLUMNS.len()] != FIXED_COLUMNS {
        return Err(CliError::input(format!("unexpected feature header: {header}")));
    }
    let len = cols.len() - FIXED_COLUMNS.len();
    for (i, c) in cols[FIXED_COLUMNS.len()..].iter().enumerate() {
        if *c != format!("d{i}") {
            return Err(CliError::input(format!("unexpected descriptor column {c}")));
        }
    }
    let mut out = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let vals = line
            .split(',')
            .map(|x| x.parse::<f64>())
            .collect::<Result<Vec<f64>, _>>()
            .map_err(|e| CliError::input(format!("line {}: {e}", lineno + 2)))?;
        if vals.len() != cols.len() {
            return Err(CliError::input(format!(
                "line {}: expected {} values, found {}",
                lineno + 2,
                cols.len(),
                vals.len()
            )));
        }
        out.push(Feature {
            u: vals[0],
            v: vals[1],
            sigma: vals[2],
            slope: (!vals[3].is_nan()).then_some(vals[3]),
            orientation: vals[4],
            response: vals[5],
            descriptor: vals[6..6 + len].to_vec(),
        });
    }
    Ok(out)
}

pub fn write_binary<W: Write>(features: &[Feature], mut w: W) -> CliResult<()> {
    let len = features.first().map_or(liff::DESCRIPTOR_LEN, |f| f.descriptor.len());
    w.write_all(BINARY_MAGIC)?;
    w.write_u32::<LittleEndian>(BINARY_VERSION)?;
    w.write_u32::<LittleEndian>(features.len() as u32)?;
    w.write_u32::<LittleEndian>(len as u32)?;
    for f in features {
        if f.descriptor.len() != len {
            return Err(CliError::param("features have descriptors of different lengths"));
        }
        for x in [f.u, f.v, f.sigma, f.slope.unwrap_or(f64::NAN), f.orientation, f.response] {
            w.write_f64::<LittleEndian>(x)?;
        }
        for &d in &f.descriptor {
            w.write_f64::<LittleEndian>(d)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_binary<R: Read>(mut r: R) -> CliResult<Vec<Feature>> {
    let truncated = |_| CliError::input("truncated feature file");
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != BINARY_MAGIC {
        return Err(CliError::input("bad magic, expected LFFT"));
    }
    let version = r.read_u32::<LittleEndian>().map_err(truncated)?;
    if version != BINARY_VERSION {
        return Err(CliError::input(format!("unsupported feature file version {version}")));
    }
    let count = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
    let len = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let mut head = [0.0; 6];
        r.read_f64_into::<LittleEndian>(&mut head).map_err(truncated)?;
        let mut descriptor = vec![0.0; len];
        r.read_f64_into::<LittleEndian>(&mut descriptor).map_err(truncated)?;
        out.push(Feature {
            u: head[0],
            v: head[1],
            sigma: head[2],
            slope: (!head[3].is_nan()).then_some(head[3]),
            orientation: head[4],
            response: head[5],
            descriptor,
        });
    }
    if r.read(&mut [0u8; 1])? != 0 {
        return Err(CliError::input("trailing bytes after feature data"));
    }
    Ok(out)
}

pub fn write_features(features: &[Feature], path: &Path) -> CliResult<()> {
    let file = File::create(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    let w = BufWriter::new(file);
    match FeatureFormat::from_path(path) {
        FeatureFormat::Csv => write_csv(features, w),
        FeatureFormat::Binary => write_binary(features, w),
    }
}

pub fn read_features(path: &Path) -> CliResult<Vec<Feature>> {
    let file = File::open(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    let r = BufReader::new(file);
    match FeatureFormat::from_path(path) {
        FeatureFormat::Csv => read_csv(r),
        FeatureFormat::Binary => read_binary(r),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<Feature> {
        vec![
            Feature {
                u: 12.345678912345,
                v: -0.5,
                sigma: 1.6,
                slope: Some(-0.25),
                orientation: 3.0,
                response: -0.0123,
                descriptor: (0..128).map(|i| i as f64 / 1000.0).collect(),
            },
            Feature {
                u: 1e-12,
                v: 7.0,
                sigma: 2.0,
                slope: None,
                orientation: 0.0,
                response: 0.5,
                descriptor: vec![0.0; 128],
            },
        ]
    }

    #[test]
    fn csv_header_and_missing_slope() {
        let mut buf = Vec::new();
        write_csv(&sample(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        let header = lines.next().unwrap();
        assert!(header.starts_with("u,v,sigma,lambda,theta,response,d0,d1,"));
        assert!(header.ends_with(",d127"));
        assert!(lines.next().unwrap().starts_with("1.23456789e1,-5.00000000e-1,"));
        assert_eq!(lines.next().unwrap().split(',').nth(3), Some("nan"));
    }

    #[test]
    fn csv_rewrite_is_byte_identical() {
        let mut first = Vec::new();
        write_csv(&sample(), &mut first).unwrap();
        let back = read_csv(first.as_slice()).unwrap();
        assert_eq!(back[1].slope, None);
        let mut second = Vec::new();
        write_csv(&back, &mut second).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn binary_roundtrip_is_exact() {
        let mut buf = Vec::new();
        write_binary(&sample(), &mut buf).unwrap();
        let back = read_binary(buf.as_slice()).unwrap();
        assert_eq!(back, sample());
    }

    #[test]
    fn empty_feature_list() {
        let mut buf = Vec::new();
        write_csv(&[], &mut buf).unwrap();
        assert!(read_csv(buf.as_slice()).unwrap().is_empty());
        let mut buf = Vec::new();
        write_binary(&[], &mut buf).unwrap();
        assert!(read_binary(buf.as_slice()).unwrap().is_empty());
    }

    #[test]
    fn malformed_inputs_are_input_errors() {
        assert!(matches!(read_csv("".as_bytes()), Err(CliError::Input(_))));
        assert!(matches!(read_csv("a,b\n".as_bytes()), Err(CliError::Input(_))));
        let bad_row = "u,v,sigma,lambda,theta,response,d0\n1,2,3\n";
        assert!(matches!(read_csv(bad_row.as_bytes()), Err(CliError::Input(_))));
        assert!(matches!(read_binary(&b"LFFT\x01"[..]), Err(CliError::Input(_))));
    }
}
