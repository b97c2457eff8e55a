//! Light field features (LiFF).
//!
//! Blob detection and description over 4D light fields `L(s,t,u,v)`. Features are
//! local extrema of a joint scale-slope space `D(u,v,σ,λ)` built by refocusing the
//! light field into a focal stack and running a difference-of-Gaussians pyramid on
//! every slice. Each feature carries the slope `λ` at which it is in focus, which is
//! inversely proportional to scene depth.
//!
//! The crate also ships the comparison machinery: single-image SIFT on the central
//! view, SIFT repeated over every view with cross-view consolidation, a slow direct
//! implementation of the 4D filtering used as a test oracle, and a synthetic disk
//! scene generator with ground-truth scoring.
//!
//! Coordinate conventions: views are indexed `(s,t)` with centered offsets
//! `(s', t') = (s - (N_s-1)/2, t - (N_t-1)/2)`; a scene point with slope `λ` that sits
//! at `(u0, v0)` in the central view appears at `(u0 - λ s', v0 - λ t')` in view `(s,t)`.
//! Larger slopes are nearer to the camera.

pub mod baseline;
pub mod descriptor;
pub mod detector;
mod error;
pub mod focalstack;
pub mod lfcore;
pub mod oracle;
pub mod scalespace;
pub mod synth;

pub use baseline::{repeated_sift, sift_detect, work_ratio, ConsolidationParams};
pub use descriptor::{compute_descriptor, match_features, normalize_rootsift, Match};
pub use detector::{detect, DetectorParams, Feature, Keypoint};
pub use error::{Error, Result};
pub use focalstack::{build_focal_stack, default_slopes, refocus_slice, FocalStack};
pub use lfcore::{Image, LfDims, LightField};
pub use scalespace::{build_dog_pyramid, build_scale_slope_space, DoGPyramid, ScaleSlopeSpace};
pub use synth::{EvalReport, SyntheticScene};

/// Number of entries in a feature descriptor (4x4 spatial cells, 8 orientation bins).
pub const DESCRIPTOR_LEN: usize = 128;
