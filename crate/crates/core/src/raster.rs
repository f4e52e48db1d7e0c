//! Floating-point image buffers and their 8-bit PNG persistence.
//!
//! Pixel values live in `[0, 1]`. Quantization to 8 bits happens once, when
//! an image is encoded, using round-half-up.

use std::path::Path;

use image::{ImageBuffer, ImageFormat, Rgb};
use sha2::{Digest, Sha256};

use crate::error::{Error, IoContext, Result};

/// `floor(v * 255 + 0.5)` after clamping to `[0, 1]`.
pub fn quantize(v: f32) -> u8 {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    (v * 255.0 + 0.5).floor() as u8
}

pub fn dequantize(v: u8) -> f32 {
    f32::from(v) / 255.0
}

#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, v: f32) -> Self {
        Self {
            width,
            height,
            data: vec![v; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| f64::from(v)).sum::<f64>() / self.data.len() as f64
    }

    /// Replicates the single channel into RGB.
    pub fn to_rgb(&self) -> RgbImage {
        let mut out = RgbImage::new(self.width, self.height);
        for (i, &v) in self.data.iter().enumerate() {
            out.data[3 * i..3 * i + 3].copy_from_slice(&[v, v, v]);
        }
        out
    }

    /// Horizontal mirror.
    pub fn flip_x(&self) -> GrayImage {
        let mut out = GrayImage::new(self.width, self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                out.set(x, y, self.get(self.width - 1 - x, y));
            }
        }
        out
    }
}

/// Interleaved RGB, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn put(&mut self, x: usize, y: usize, p: [f32; 3]) {
        let i = 3 * (y * self.width + x);
        self.data[i..i + 3].copy_from_slice(&p);
    }

    /// Mean over all channels.
    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| f64::from(v)).sum::<f64>() / self.data.len() as f64
    }

    /// Rec. 601 luma per pixel.
    pub fn luma(&self) -> GrayImage {
        let mut out = GrayImage::new(self.width, self.height);
        for (i, px) in self.data.chunks_exact(3).enumerate() {
            out.data[i] = luma(px[0], px[1], px[2]);
        }
        out
    }

    pub fn flip_x(&self) -> RgbImage {
        let mut out = RgbImage::new(self.width, self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                out.put(x, y, self.pixel(self.width - 1 - x, y));
            }
        }
        out
    }

    /// Values rounded to the 8-bit grid, as they would be after a PNG
    /// round trip.
    pub fn quantized(&self) -> RgbImage {
        RgbImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| dequantize(quantize(v))).collect(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.data.iter().map(|&v| quantize(v)).collect()
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let buf: ImageBuffer<Rgb<u8>, Vec<u8>> =
            ImageBuffer::from_raw(self.width as u32, self.height as u32, self.to_bytes())
                .expect("buffer length matches dimensions");
        let mut out = std::io::Cursor::new(Vec::new());
        buf.write_to(&mut out, ImageFormat::Png)?;
        Ok(out.into_inner())
    }

    pub fn decode_png(bytes: &[u8]) -> Result<RgbImage> {
        let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?.into_rgb8();
        let (w, h) = img.dimensions();
        Ok(RgbImage {
            width: w as usize,
            height: h as usize,
            data: img.into_raw().into_iter().map(dequantize).collect(),
        })
    }

    pub fn write_png(&self, path: &Path) -> Result<()> {
        let bytes = self.encode_png()?;
        std::fs::write(path, bytes).at(path)
    }

    pub fn read_png(path: &Path) -> Result<RgbImage> {
        let bytes = std::fs::read(path).at(path)?;
        RgbImage::decode_png(&bytes)
    }

    /// SHA-256 of the quantized pixel bytes, hex encoded.
    pub fn digest(&self) -> String {
        let d = Sha256::digest(self.to_bytes());
        d.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[inline]
pub fn luma(r: f32, g: f32, b: f32) -> f32 {
    0.299 * r + 0.587 * g + 0.114 * b
}

/// Returns an error unless both images share dimensions.
pub fn same_dims(a: &GrayImage, b: &GrayImage) -> Result<()> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::Montage(format!(
            "{}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantization_rounds_half_up() {
        assert_eq!(quantize(0.0), 0);
        assert_eq!(quantize(1.0), 255);
        assert_eq!(quantize(-0.3), 0);
        assert_eq!(quantize(1.7), 255);
        assert_eq!(quantize(0.5 / 255.0), 1);
        assert_eq!(quantize(0.49 / 255.0), 0);
        assert_eq!(quantize(f32::NAN), 0);
        for v in 0..=255u8 {
            assert_eq!(quantize(dequantize(v)), v);
        }
    }

    #[test]
    fn png_round_trip_is_exact_on_grid() {
        let mut img = RgbImage::new(5, 3);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = dequantize((i * 17 % 256) as u8);
        }
        let back = RgbImage::decode_png(&img.encode_png().unwrap()).unwrap();
        assert_eq!(back, img);
        assert_eq!(back.digest(), img.digest());
    }

    #[test]
    fn gray_replicates_into_rgb() {
        let mut g = GrayImage::new(2, 2);
        g.set(1, 0, 0.25);
        let rgb = g.to_rgb();
        assert_eq!(rgb.pixel(1, 0), [0.25; 3]);
        assert_eq!(rgb.pixel(0, 1), [0.0; 3]);
    }
}
