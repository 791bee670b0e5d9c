//! Binary PGM/PPM I/O for masks, overlays and input images.

use std::path::Path;

use std::fs::File;
use std::io::BufWriter;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder, ImageReader};

use crate::encoder::Image;
use crate::error::{Error, Result};

fn image_err(path: &Path, e: image::ImageError) -> Error {
    match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Format {
            offset: 0,
            message: format!("{}: {other}", path.display()),
        },
    }
}

fn write_pnm(path: &Path, width: usize, height: usize, pixels: &[u8], color: ExtendedColorType) -> Result<()> {
    let (subtype, per_pixel) = match color {
        ExtendedColorType::L8 => (PnmSubtype::Graymap(SampleEncoding::Binary), 1),
        _ => (PnmSubtype::Pixmap(SampleEncoding::Binary), 3),
    };
    if pixels.len() != width * height * per_pixel {
        return Err(Error::Argument(format!(
            "{} bytes do not match {width}x{height}x{per_pixel}",
            pixels.len()
        )));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    PnmEncoder::new(BufWriter::new(file))
        .with_subtype(subtype)
        .write_image(pixels, width as u32, height as u32, color)
        .map_err(|e| image_err(path, e))
}

/// Writes an 8-bit grayscale image as binary PGM (P5).
pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: Vec<u8>) -> Result<()> {
    write_pnm(path, width, height, &pixels, ExtendedColorType::L8)
}

/// Writes an 8-bit RGB image as binary PPM (P6).
pub fn write_ppm(path: &Path, width: usize, height: usize, pixels: Vec<u8>) -> Result<()> {
    write_pnm(path, width, height, &pixels, ExtendedColorType::Rgb8)
}

/// Reads a PGM or PPM file into an image with 1 or 3 channels in `[0, 1]`.
pub fn read_image(path: &Path, channels: usize) -> Result<Image> {
    let dynamic = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| image_err(path, e))?;
    let (w, h, raw) = match channels {
        1 => {
            let g = dynamic.to_luma8();
            (g.width(), g.height(), g.into_raw())
        }
        3 => {
            let c = dynamic.to_rgb8();
            (c.width(), c.height(), c.into_raw())
        }
        n => return Err(Error::Config(format!("unsupported channel count {n}"))),
    };
    Image::new(
        h as usize,
        w as usize,
        channels,
        raw.into_iter().map(|v| f64::from(v) / 255.0).collect(),
    )
}

/// Quantizes `[0, 1]` values to bytes.
pub fn to_bytes(values: &[f64]) -> Vec<u8> {
    values
        .iter()
        .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect()
}
