//! Degradation corpora with known quality ranks: Gaussian blur, additive
//! Gaussian noise and JPEG recompression at ordered severity levels.
//!
//! Images are handled as 8-bit grayscale or RGB; anything else is converted
//! to one of the two on entry.

mod corpus;
mod filters;
mod jpeg;
mod psnr;

pub use corpus::{
    build_degraded_corpus, default_plan, manifest_digest, plan_by_name, CorpusEntry, SourceImage,
    MANIFEST_FILE, PLAN_NAMES,
};
pub use filters::{apply_gaussian_blur, apply_gaussian_noise, gaussian_kernel};
pub use jpeg::{recompress_jpeg, JPEG_ENCODER_ID};
pub use psnr::{psnr, Psnr};

use image::DynamicImage;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const BLUR_LADDER: [f64; 3] = [1.0, 2.0, 4.0];
pub const NOISE_LADDER: [f64; 3] = [5.0, 15.0, 35.0];
pub const JPEG_LADDER: [u8; 3] = [70, 30, 10];

#[derive(Debug, Error)]
pub enum DegradeError {
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("cannot decode {path}: {message}")]
    Decode { path: PathBuf, message: String },
    #[error("cannot encode image: {0}")]
    Encode(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("image dimensions differ: {0:?} vs {1:?}")]
    DimensionMismatch((u32, u32, usize), (u32, u32, usize)),
}

impl DegradeError {
    pub(crate) fn io(path: &Path) -> impl FnOnce(io::Error) -> Self + '_ {
        move |source| DegradeError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegradationKind {
    GaussianBlur,
    GaussianNoise,
    Jpeg,
}

impl DegradationKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            DegradationKind::GaussianBlur => "gaussian_blur",
            DegradationKind::GaussianNoise => "gaussian_noise",
            DegradationKind::Jpeg => "jpeg",
        }
    }

    /// Parameter value recorded for the severity-0 (identity) entry.
    pub fn identity_param(&self) -> f64 {
        match self {
            DegradationKind::Jpeg => 100.0,
            _ => 0.0,
        }
    }
}

impl fmt::Display for DegradationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One corpus perturbation. `param` is the blur sigma in pixels, the noise
/// sigma in 8-bit intensity units, or the JPEG quality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegradationSpec {
    pub kind: DegradationKind,
    pub severity_index: u32,
    pub param: f64,
    /// Noise only.
    pub seed: Option<u64>,
}

impl DegradationSpec {
    pub fn clean(kind: DegradationKind) -> Self {
        Self {
            kind,
            severity_index: 0,
            param: kind.identity_param(),
            seed: None,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.severity_index == 0
    }

    pub fn validate(&self) -> Result<(), DegradeError> {
        if self.is_identity() {
            return Ok(());
        }
        let p = self.param;
        let ok = match self.kind {
            DegradationKind::GaussianBlur | DegradationKind::GaussianNoise => p.is_finite() && p > 0.0,
            DegradationKind::Jpeg => p.fract() == 0.0 && (1.0..=100.0).contains(&p),
        };
        if !ok {
            return Err(DegradeError::Param(format!(
                "{} severity {} has invalid param {p}",
                self.kind, self.severity_index
            )));
        }
        if self.kind == DegradationKind::GaussianNoise && self.seed.is_none() {
            return Err(DegradeError::Param("gaussian_noise needs a seed".into()));
        }
        Ok(())
    }

    pub fn apply(&self, image: &DynamicImage) -> Result<DynamicImage, DegradeError> {
        self.validate()?;
        if self.is_identity() {
            return Ok(to_working(image));
        }
        match self.kind {
            DegradationKind::GaussianBlur => apply_gaussian_blur(image, self.param),
            DegradationKind::GaussianNoise => {
                apply_gaussian_noise(image, self.param, self.seed.unwrap_or_default())
            }
            DegradationKind::Jpeg => recompress_jpeg(image, self.param as u8),
        }
    }
}

/// Metadata written next to every corpus image as `<stem>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub kind: DegradationKind,
    pub severity_index: u32,
    pub param: f64,
    pub seed: Option<u64>,
    pub psnr_vs_source: Option<Psnr>,
    pub encoder_id: Option<String>,
}

impl Sidecar {
    pub fn path_for(image_path: &Path) -> PathBuf {
        image_path.with_extension("json")
    }

    /// Reads the sidecar belonging to `image_path`, if there is one.
    pub fn load_for(image_path: &Path) -> Result<Option<Sidecar>, DegradeError> {
        let path = Self::path_for(image_path);
        match std::fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map(Some)
                .map_err(|e| DegradeError::Decode {
                    path,
                    message: e.to_string(),
                }),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(DegradeError::Io { path, source: e }),
        }
    }
}

/// Converts to 8-bit grayscale or RGB.
pub(crate) fn to_working(image: &DynamicImage) -> DynamicImage {
    match image {
        DynamicImage::ImageLuma8(_) | DynamicImage::ImageRgb8(_) => image.clone(),
        other if !other.color().has_color() => DynamicImage::ImageLuma8(other.to_luma8()),
        other => DynamicImage::ImageRgb8(other.to_rgb8()),
    }
}

pub(crate) fn channel_count(image: &DynamicImage) -> usize {
    image.color().channel_count() as usize
}

/// Applies `f(width, height, channels, samples)` to a working-format copy.
pub(crate) fn map_samples<F>(image: &DynamicImage, f: F) -> DynamicImage
where
    F: FnOnce(usize, usize, usize, &mut [u8]),
{
    let mut out = to_working(image);
    let (w, h) = (out.width() as usize, out.height() as usize);
    let c = channel_count(&out);
    match &mut out {
        DynamicImage::ImageLuma8(buf) => f(w, h, c, buf.as_mut()),
        DynamicImage::ImageRgb8(buf) => f(w, h, c, buf.as_mut()),
        _ => unreachable!("to_working yields Luma8 or Rgb8"),
    }
    out
}

pub(crate) fn encode_png(image: &DynamicImage) -> Result<Vec<u8>, DegradeError> {
    let mut out = io::Cursor::new(Vec::new());
    image
        .write_to(&mut out, image::ImageFormat::Png)
        .map_err(|e| DegradeError::Encode(e.to_string()))?;
    Ok(out.into_inner())
}
