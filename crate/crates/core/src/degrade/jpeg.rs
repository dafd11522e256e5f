use super::{to_working, DegradeError};
use image::DynamicImage;
use jpeg_encoder::{ColorType, Encoder, SamplingFactor};

/// Recorded in sidecars; byte equality is only promised within one encoder.
pub const JPEG_ENCODER_ID: &str = "jpeg-encoder-0.7/baseline/4:2:0/annex-k-tables";

/// Encodes at `quality` with pinned baseline settings and decodes back.
pub fn recompress_jpeg(image: &DynamicImage, quality: u8) -> Result<DynamicImage, DegradeError> {
    if !(1..=100).contains(&quality) {
        return Err(DegradeError::Param(format!(
            "JPEG quality must be in 1..=100, got {quality}"
        )));
    }
    let working = to_working(image);
    let (w, h) = (working.width(), working.height());
    let (w16, h16) = match (u16::try_from(w), u16::try_from(h)) {
        (Ok(a), Ok(b)) => (a, b),
        _ => return Err(DegradeError::Param(format!("{w}x{h} exceeds JPEG dimensions"))),
    };
    let color = match working {
        DynamicImage::ImageLuma8(_) => ColorType::Luma,
        _ => ColorType::Rgb,
    };
    let mut bytes = Vec::new();
    let mut encoder = Encoder::new(&mut bytes, quality);
    encoder.set_sampling_factor(SamplingFactor::F_2_2);
    encoder.set_progressive(false);
    encoder.set_optimized_huffman_tables(false);
    encoder
        .encode(working.as_bytes(), w16, h16, color)
        .map_err(|e| DegradeError::Encode(e.to_string()))?;
    let decoded = image::load_from_memory_with_format(&bytes, image::ImageFormat::Jpeg)
        .map_err(|e| DegradeError::Encode(format!("decoding own JPEG: {e}")))?;
    Ok(match color {
        ColorType::Luma => DynamicImage::ImageLuma8(decoded.to_luma8()),
        _ => DynamicImage::ImageRgb8(decoded.to_rgb8()),
    })
}
