//! File helpers shared by the config loaders and the frame/heat-map dumps.

use std::fs;
use std::path::Path;

use image::{GrayImage, ImageBuffer, Luma, RgbImage};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, &e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Config(format!("cannot serialize {}: {e}", path.display())))?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn image_err(path: &Path, e: image::ImageError) -> Error {
    match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::io(path, std::io::Error::other(other)),
    }
}

/// Binary PPM (P6), row-major RGB triples.
pub fn write_ppm(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    let img = RgbImage::from_raw(width as u32, height as u32, rgb.to_vec())
        .ok_or_else(|| Error::invalid("rgb buffer does not match image size"))?;
    img.save_with_format(path, image::ImageFormat::Pnm)
        .map_err(|e| image_err(path, e))
}

/// Binary 8-bit PGM (P5).
pub fn write_pgm8(path: &Path, width: usize, height: usize, gray: &[u8]) -> Result<()> {
    let img = GrayImage::from_raw(width as u32, height as u32, gray.to_vec())
        .ok_or_else(|| Error::invalid("gray buffer does not match image size"))?;
    img.save_with_format(path, image::ImageFormat::Pnm)
        .map_err(|e| image_err(path, e))
}

/// Binary 16-bit PGM (P5, maxval 65535, big-endian samples).
pub fn write_pgm16(path: &Path, width: usize, height: usize, gray: &[u16]) -> Result<()> {
    let img: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(width as u32, height as u32, gray.to_vec())
            .ok_or_else(|| Error::invalid("gray buffer does not match image size"))?;
    img.save_with_format(path, image::ImageFormat::Pnm)
        .map_err(|e| image_err(path, e))
}

/// Blue-to-yellow ramp used for score heat maps; `t` is clamped to [0, 1].
pub fn heat_color(t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0);
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    [lerp(40.0, 250.0), lerp(40.0, 230.0), lerp(160.0, 30.0)]
}
