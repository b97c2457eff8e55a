use clap::{Args, ValueEnum};
use liff::focalstack::slope_range;
use liff::synth::Method;
use liff::{ConsolidationParams, DetectorParams};

use crate::error::{CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DetectorKind {
    Liff,
    Sift,
    RepeatedSift,
}

impl DetectorKind {
    pub fn name(self) -> &'static str {
        match self {
            DetectorKind::Liff => "liff",
            DetectorKind::Sift => "sift",
            DetectorKind::RepeatedSift => "repeated-sift",
        }
    }

    pub fn method(self, agreement: f64) -> Method {
        match self {
            DetectorKind::Liff => Method::Liff,
            DetectorKind::Sift => Method::Sift,
            DetectorKind::RepeatedSift => Method::RepeatedSift { agreement },
        }
    }
}

/// A slope list given on the command line as `min:max:count`.
#[derive(Clone, Debug, PartialEq)]
pub struct SlopeList(pub Vec<f64>);

/// Parse `min:max:count` into an evenly spaced slope list.
pub fn parse_slopes(spec: &str) -> Result<SlopeList, String> {
    let parts: Vec<&str> = spec.split(':').collect();
    let [min, max, count] = parts[..] else {
        return Err(format!("expected min:max:count, got {spec:?}"));
    };
    let min: f64 = min.trim().parse().map_err(|e| format!("slope min {min:?}: {e}"))?;
    let max: f64 = max.trim().parse().map_err(|e| format!("slope max {max:?}: {e}"))?;
    let count: usize = count.trim().parse().map_err(|e| format!("slope count {count:?}: {e}"))?;
    if !(min.is_finite() && max.is_finite()) {
        return Err("slope bounds must be finite".into());
    }
    if count == 0 {
        return Err("slope count must be at least 1".into());
    }
    if count > 1 && min >= max {
        return Err(format!("slope min {min} must be below max {max}"));
    }
    Ok(SlopeList(slope_range(min, max, count)))
}

#[derive(Args, Clone, Debug)]
pub struct DetectorArgs {
    /// Minimum refined |D| of a feature.
    #[arg(long, default_value_t = 0.0066)]
    pub peak_threshold: f64,
    /// Maximum principal curvature ratio.
    #[arg(long, default_value_t = 10.0)]
    pub edge_threshold: f64,
    #[arg(long, default_value_t = 4)]
    pub octaves: usize,
    #[arg(long, default_value_t = 3)]
    pub levels: usize,
    /// -1 doubles the input resolution first.
    #[arg(long, default_value_t = -1, allow_hyphen_values = true)]
    pub first_octave: i32,
    #[arg(long, default_value_t = 1.6)]
    pub base_sigma: f64,
    /// Focal stack slopes as min:max:count (default: one per view along s over [-1, 1]).
    #[arg(long, value_parser = parse_slopes, allow_hyphen_values = true)]
    pub slopes: Option<SlopeList>,
    /// Repeated SIFT: fraction of views that must agree.
    #[arg(long, default_value_t = 0.25)]
    pub agreement: f64,
}

impl Default for DetectorArgs {
    fn default() -> Self {
        let p = DetectorParams::default();
        Self {
            peak_threshold: p.peak_threshold,
            edge_threshold: p.edge_threshold,
            octaves: p.num_octaves,
            levels: p.levels_per_octave,
            first_octave: p.first_octave,
            base_sigma: p.base_sigma,
            slopes: None,
            agreement: ConsolidationParams::default().agreement,
        }
    }
}

impl DetectorArgs {
    pub fn params(&self) -> CliResult<DetectorParams> {
        let p = DetectorParams {
            peak_threshold: self.peak_threshold,
            edge_threshold: self.edge_threshold,
            num_octaves: self.octaves,
            levels_per_octave: self.levels,
            first_octave: self.first_octave,
            base_sigma: self.base_sigma,
            slopes: self.slopes.as_ref().map(|s| s.0.clone()),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn consolidation(&self) -> CliResult<ConsolidationParams> {
        let c = ConsolidationParams {
            agreement: self.agreement,
            ..Default::default()
        };
        c.validate()?;
        Ok(c)
    }
}

/// Worker count from the `LIFF_THREADS` value, `None` when unset.
pub fn threads_from_env(value: Option<&str>) -> CliResult<Option<usize>> {
    match value {
        None => Ok(None),
        Some(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::param(format!("LIFF_THREADS must be a positive integer, got {v:?}"))),
        },
    }
}
