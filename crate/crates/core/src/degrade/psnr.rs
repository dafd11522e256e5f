use super::{channel_count, to_working, DegradeError};
use image::DynamicImage;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::cmp::Ordering;

/// Peak signal-to-noise ratio in dB, with a distinguished value for
/// identical images (zero MSE). `Identical` compares above every finite value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Psnr {
    Identical,
    Db(f64),
}

impl Psnr {
    pub fn db(&self) -> Option<f64> {
        match self {
            Psnr::Identical => None,
            Psnr::Db(v) => Some(*v),
        }
    }
}

impl PartialOrd for Psnr {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match (self, other) {
            (Psnr::Identical, Psnr::Identical) => Some(Ordering::Equal),
            (Psnr::Identical, Psnr::Db(_)) => Some(Ordering::Greater),
            (Psnr::Db(_), Psnr::Identical) => Some(Ordering::Less),
            (Psnr::Db(a), Psnr::Db(b)) => a.partial_cmp(b),
        }
    }
}

impl Serialize for Psnr {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Psnr::Identical => s.serialize_str("identical"),
            Psnr::Db(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for Psnr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Db(f64),
            Tag(String),
        }
        match Repr::deserialize(d)? {
            Repr::Db(v) => Ok(Psnr::Db(v)),
            Repr::Tag(t) if t == "identical" => Ok(Psnr::Identical),
            Repr::Tag(t) => Err(serde::de::Error::custom(format!("unknown PSNR tag {t:?}"))),
        }
    }
}

/// `10 log10(255^2 / MSE)` over all samples of both images.
pub fn psnr(reference: &DynamicImage, test: &DynamicImage) -> Result<Psnr, DegradeError> {
    let (a, b) = (to_working(reference), to_working(test));
    let shape = |i: &DynamicImage| (i.width(), i.height(), channel_count(i));
    if shape(&a) != shape(&b) {
        return Err(DegradeError::DimensionMismatch(shape(&a), shape(&b)));
    }
    let (a, b) = (a.as_bytes(), b.as_bytes());
    if a.is_empty() {
        return Ok(Psnr::Identical);
    }
    let sse: u64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| {
            let d = *x as i64 - *y as i64;
            (d * d) as u64
        })
        .sum();
    if sse == 0 {
        return Ok(Psnr::Identical);
    }
    let mse = sse as f64 / a.len() as f64;
    Ok(Psnr::Db(10.0 * (255.0f64 * 255.0 / mse).log10()))
}
