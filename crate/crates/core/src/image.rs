//! Grayscale renderings (binary PGM and 8-bit PNG), without metadata.

use std::io::Write;
use std::path::Path;

use crate::coincidence::{CoincidenceMatrix, Image2D};
use crate::error::{Error, Result};

/// Scale to 0..=255 between the image minimum and maximum.
pub fn to_gray8(image: &Image2D) -> Vec<u8> {
    let lo = image.data.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = image.data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    image
        .data
        .iter()
        .map(|&v| {
            if span > 0.0 && span.is_finite() {
                ((v - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8
            } else {
                0
            }
        })
        .collect()
}

pub fn write_pgm<W: Write>(image: &Image2D, mut out: W) -> std::io::Result<()> {
    write!(out, "P5\n{} {}\n255\n", image.width, image.height)?;
    out.write_all(&to_gray8(image))
}

pub fn save_pgm(image: &Image2D, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_pgm(image, &mut buf).map_err(|e| Error::io(path, e))?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn save_png(image: &Image2D, path: &Path) -> Result<()> {
    let w = u32::try_from(image.width).map_err(|_| Error::InvalidParameter("image too wide".into()))?;
    let h = u32::try_from(image.height).map_err(|_| Error::InvalidParameter("image too tall".into()))?;
    let buf = image::GrayImage::from_raw(w, h, to_gray8(image))
        .ok_or_else(|| Error::InvalidParameter("image buffer size mismatch".into()))?;
    buf.save_with_format(path, image::ImageFormat::Png).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::io(path, std::io::Error::other(other.to_string())),
    })
}

/// Coincidence matrix as an image: idler along y, signal along x.
pub fn matrix_image(gamma: &CoincidenceMatrix) -> Image2D {
    let m = gamma.size();
    Image2D {
        width: m,
        height: m,
        data: gamma.counts().to_vec(),
    }
}

/// A 1D profile rendered as a single-row image repeated `rows` times.
pub fn profile_strip(values: &[f64], rows: usize) -> Image2D {
    let mut data = Vec::with_capacity(values.len() * rows);
    for _ in 0..rows {
        data.extend_from_slice(values);
    }
    Image2D {
        width: values.len(),
        height: rows,
        data,
    }
}
