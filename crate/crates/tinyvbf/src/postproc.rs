//! Envelope detection, log compression and B-mode image output.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::Array2;

use crate::data::{BModeImage, IQImage};
use crate::error::{Error, Result};

/// Display controls for B-mode rendering.
#[derive(Debug, Clone, Copy)]
pub struct DisplayParams {
    pub dynamic_range_db: f64,
}

impl Default for DisplayParams {
    fn default() -> Self {
        Self {
            dynamic_range_db: 60.0,
        }
    }
}

/// Pixel envelope: magnitude of the complex image.
pub fn envelope(image: &IQImage) -> Array2<f64> {
    image.pixels.mapv(|z| z.norm())
}

/// Log compression to decibels relative to the frame maximum, clamped to
/// `[-dynamic_range_db, 0]`. An all-zero envelope has no reference level
/// and is rejected.
pub fn log_compress(env: &Array2<f64>, dynamic_range_db: f64) -> Result<BModeImage> {
    if !(dynamic_range_db > 0.0) || !dynamic_range_db.is_finite() {
        return Err(Error::Argument(
            "dynamic range must be positive and finite".into(),
        ));
    }
    if env.iter().any(|&v| !v.is_finite() || v < 0.0) {
        return Err(Error::Argument(
            "envelope must be non-negative and finite".into(),
        ));
    }
    let max = env.iter().cloned().fold(0.0f64, f64::max);
    if max <= 0.0 {
        return Err(Error::Numeric(
            "all-zero envelope has no reference level for log compression".into(),
        ));
    }
    let db = env.mapv(|v| {
        if v <= 0.0 {
            -dynamic_range_db
        } else {
            (20.0 * (v / max).log10()).clamp(-dynamic_range_db, 0.0)
        }
    });
    BModeImage::new(db, dynamic_range_db)
}

/// Envelope detection plus log compression.
pub fn bmode(image: &IQImage, params: &DisplayParams) -> Result<BModeImage> {
    log_compress(&envelope(image), params.dynamic_range_db)
}

/// Maps `[-dynamic_range, 0]` dB linearly onto 8-bit gray `[0, 255]`.
pub fn to_gray(image: &BModeImage) -> Array2<u8> {
    let dr = image.dynamic_range_db;
    image
        .db
        .mapv(|v| (((v + dr) / dr) * 255.0).round().clamp(0.0, 255.0) as u8)
}

/// Writes a B-mode image as PGM (`.pgm`, binary P5) or PNG (`.png`),
/// selected by file extension.
pub fn write_image(image: &BModeImage, path: &Path) -> Result<()> {
    let gray = to_gray(image);
    let (rows, cols) = gray.dim();
    match path.extension().and_then(|e| e.to_str()) {
        Some("pgm") => {
            let mut w = BufWriter::new(File::create(path)?);
            write!(w, "P5\n{cols} {rows}\n255\n")?;
            for row in gray.rows() {
                w.write_all(row.as_slice().unwrap())?;
            }
            w.flush()?;
            Ok(())
        }
        Some("png") => {
            let mut buf = image::GrayImage::new(cols as u32, rows as u32);
            for r in 0..rows {
                for c in 0..cols {
                    buf.put_pixel(c as u32, r as u32, image::Luma([gray[[r, c]]]));
                }
            }
            buf.save(path)
                .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
            Ok(())
        }
        other => Err(Error::Argument(format!(
            "unsupported image extension {other:?}; use .pgm or .png"
        ))),
    }
}
