//! 8-bit PGM (P5) / PPM (P6) frames. Decoding also accepts the other PNM variants.

use std::io::Cursor;
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ExtendedColorType, ImageEncoder, ImageFormat, ImageReader};

use crate::error::{CoreError, Result};
use crate::image::Image;

/// Upper bound on decoded pixels, keeping hostile headers from forcing huge allocations.
pub const MAX_PIXELS: u64 = 1 << 26;

fn reader(bytes: &[u8]) -> ImageReader<Cursor<&[u8]>> {
    let mut reader = ImageReader::with_format(Cursor::new(bytes), ImageFormat::Pnm);
    let mut limits = image::Limits::default();
    limits.max_alloc = Some(MAX_PIXELS * 8);
    reader.limits(limits);
    reader
}

pub fn decode(bytes: &[u8]) -> Result<Image> {
    let bad = |detail: String| CoreError::format("PNM", detail);
    let (w, h) = reader(bytes).into_dimensions().map_err(|e| bad(e.to_string()))?;
    if u64::from(w) * u64::from(h) > MAX_PIXELS {
        return Err(bad(format!("{w}x{h} exceeds the pixel limit")));
    }
    let img = reader(bytes).decode().map_err(|e| bad(e.to_string()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    if img.color().has_color() {
        let rgb = img.to_rgb32f();
        let n = w * h;
        let mut data = vec![0.0; 3 * n];
        for (i, px) in rgb.pixels().enumerate() {
            for c in 0..3 {
                data[c * n + i] = f64::from(px.0[c]).clamp(0.0, 1.0);
            }
        }
        Image::new(w, h, 3, data)
    } else {
        let data = match img {
            DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA16(_) => img
                .to_luma16()
                .into_raw()
                .into_iter()
                .map(|v| f64::from(v) / 65535.0)
                .collect(),
            _ => img
                .to_luma8()
                .into_raw()
                .into_iter()
                .map(|v| f64::from(v) / 255.0)
                .collect(),
        };
        Image::new(w, h, 1, data)
    }
}

/// Quantizes to 8 bits: gray images become P5, RGB images P6.
pub fn encode(image: &Image) -> Result<Vec<u8>> {
    let n = image.pixels();
    let q = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let (subtype, color, raw): (_, _, Vec<u8>) = if image.channels() == 1 {
        (
            PnmSubtype::Graymap(SampleEncoding::Binary),
            ExtendedColorType::L8,
            image.data().iter().map(|&v| q(v)).collect(),
        )
    } else {
        let d = image.data();
        (
            PnmSubtype::Pixmap(SampleEncoding::Binary),
            ExtendedColorType::Rgb8,
            (0..n).flat_map(|i| [q(d[i]), q(d[n + i]), q(d[2 * n + i])]).collect(),
        )
    };
    let mut out = Vec::new();
    PnmEncoder::new(&mut out)
        .with_subtype(subtype)
        .write_image(&raw, image.width() as u32, image.height() as u32, color)
        .map_err(|e| CoreError::format("PNM", e.to_string()))?;
    Ok(out)
}

pub fn read(path: &Path) -> Result<Image> {
    decode(&super::read_file(path)?).map_err(|e| match e {
        CoreError::Format { format, detail } => CoreError::Format {
            format,
            detail: format!("{}: {detail}", path.display()),
        },
        other => other,
    })
}

pub fn write(path: &Path, image: &Image) -> Result<()> {
    super::write_file(path, &encode(image)?)
}
