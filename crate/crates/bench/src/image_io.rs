//! Image import/export: any PNG (resized to a square working size), 8-bit
//! RGB PNG export, and a lossless raw f32 format.
//!
//! Raw layout: the 8-byte magic `NSTRAW1\0`, then channels, height, and width
//! as little-endian `u32`, then `channels·height·width` little-endian `f32`
//! values in channel-major (CHW) order.

use std::fs;
use std::path::Path;

use image::imageops::{self, FilterType};
use image::{ImageBuffer, Rgb, RgbImage};
use nst_core::{ImageTensor, Shape};

use crate::error::{BenchError, Result};

pub const RAW_MAGIC: &[u8; 8] = b"NSTRAW1\0";

/// Loads an image as RGB in `[0, 1]`, bilinearly resized to `size`×`size`.
pub fn load_image(path: &Path, size: usize) -> Result<ImageTensor<f32>> {
    let img = image::open(path).map_err(|e| BenchError::format(path, e.to_string()))?;
    let rgb = img.to_rgb32f();
    let side = u32::try_from(size).map_err(|_| BenchError::Config(format!("image size {size} too large")))?;
    let resized = if rgb.dimensions() == (side, side) {
        rgb
    } else {
        imageops::resize(&rgb, side, side, FilterType::Triangle)
    };
    Ok(ImageTensor::from_fn(Shape::new(3, size, size), |c, y, x| {
        resized.get_pixel(x as u32, y as u32)[c].clamp(0.0, 1.0)
    }))
}

fn to_rgb8(image: &ImageTensor<f32>) -> Result<RgbImage> {
    if image.channels() != 3 {
        return Err(BenchError::Config(format!(
            "PNG export needs 3 channels, got {}",
            image.channels()
        )));
    }
    let (w, h) = (image.width() as u32, image.height() as u32);
    Ok(ImageBuffer::from_fn(w, h, |x, y| {
        let px = |c| (image.get(c, y as usize, x as usize).clamp(0.0, 1.0) * 255.0).round() as u8;
        Rgb([px(0), px(1), px(2)])
    }))
}

pub fn save_png(path: &Path, image: &ImageTensor<f32>) -> Result<()> {
    to_rgb8(image)?
        .save(path)
        .map_err(|e| BenchError::format(path, e.to_string()))
}

pub fn encode_raw(image: &ImageTensor<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(RAW_MAGIC.len() + 12 + 4 * image.len());
    out.extend_from_slice(RAW_MAGIC);
    for d in [image.channels(), image.height(), image.width()] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in image.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_raw(bytes: &[u8]) -> std::result::Result<ImageTensor<f32>, String> {
    let header = RAW_MAGIC.len() + 12;
    if bytes.len() < header || &bytes[..RAW_MAGIC.len()] != RAW_MAGIC {
        return Err("not an NSTRAW1 file".into());
    }
    let dim = |i: usize| {
        let o = RAW_MAGIC.len() + 4 * i;
        u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize
    };
    let shape = Shape::new(dim(0), dim(1), dim(2));
    let payload = &bytes[header..];
    if payload.len() != 4 * shape.len() {
        return Err(format!(
            "shape {shape} needs {} payload bytes, found {}",
            4 * shape.len(),
            payload.len()
        ));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    ImageTensor::from_vec(shape, data).map_err(|e| e.to_string())
}

pub fn save_raw(path: &Path, image: &ImageTensor<f32>) -> Result<()> {
    fs::write(path, encode_raw(image)).map_err(|e| BenchError::io(path, e))
}

pub fn load_raw(path: &Path) -> Result<ImageTensor<f32>> {
    let bytes = fs::read(path).map_err(|e| BenchError::io(path, e))?;
    decode_raw(&bytes).map_err(|m| BenchError::format(path, m))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient(size: usize) -> ImageTensor<f32> {
        ImageTensor::from_fn(Shape::new(3, size, size), |c, y, x| {
            ((c * 50 + y * 10 + x * 3) % 256) as f32 / 255.0
        })
    }

    #[test]
    fn raw_round_trip_is_bit_exact() {
        let img = gradient(7).map(|v| v * 0.123_456_7);
        assert_eq!(decode_raw(&encode_raw(&img)).unwrap(), img);
        assert!(decode_raw(b"garbage").is_err());
        let mut truncated = encode_raw(&img);
        truncated.pop();
        assert!(decode_raw(&truncated).is_err());
    }

    #[test]
    fn png_round_trip_at_8_bits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.png");
        let img = gradient(12);
        save_png(&path, &img).unwrap();
        let back = load_image(&path, 12).unwrap();
        assert!(back.max_abs_diff(&img) <= 0.5 / 255.0 + 1e-6);
        let small = load_image(&path, 6).unwrap();
        assert_eq!(small.shape(), Shape::new(3, 6, 6));
    }

    #[test]
    fn missing_file_is_an_error() {
        assert!(load_image(Path::new("/nonexistent/x.png"), 8).is_err());
    }
}
