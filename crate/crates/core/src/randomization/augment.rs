//! Vision augmentation, applied in a fixed order:
//! affine warp, color jitter, Gaussian noise, motion blur.

use super::{ColorJitter, VisionRandom};
use crate::raster::{luma, RgbImage};
use crate::rng::Stream;

pub fn apply_vision_augment(img: &RgbImage, vr: &VisionRandom) -> RgbImage {
    let mut out = affine(img, vr);
    apply_color_jitter(&mut out, &vr.jitter);
    add_noise(&mut out, vr.noise_sigma, vr.noise_seed);
    motion_blur(&out, vr.blur_len, vr.blur_angle_deg)
}

/// Bilinear sample with border replication.
fn sample_bilinear(img: &RgbImage, x: f64, y: f64) -> [f32; 3] {
    let maxx = (img.width - 1) as f64;
    let maxy = (img.height - 1) as f64;
    let x = x.clamp(0.0, maxx);
    let y = y.clamp(0.0, maxy);
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let (x0, y0) = (x0 as usize, y0 as usize);
    let x1 = (x0 + 1).min(img.width - 1);
    let y1 = (y0 + 1).min(img.height - 1);
    let p00 = img.pixel(x0, y0);
    let p10 = img.pixel(x1, y0);
    let p01 = img.pixel(x0, y1);
    let p11 = img.pixel(x1, y1);
    let mut out = [0f32; 3];
    for c in 0..3 {
        let top = f64::from(p00[c]) * (1.0 - fx) + f64::from(p10[c]) * fx;
        let bot = f64::from(p01[c]) * (1.0 - fx) + f64::from(p11[c]) * fx;
        out[c] = (top * (1.0 - fy) + bot * fy) as f32;
    }
    out
}

/// Forward map about the image center: scale, then rotate, then shear
/// along x, then translate. Pixels are pulled through the inverse map.
fn affine(img: &RgbImage, vr: &VisionRandom) -> RgbImage {
    if vr.scale == 1.0
        && vr.rotate_deg == 0.0
        && vr.shear_deg == 0.0
        && vr.translate_px == [0.0, 0.0]
    {
        return img.clone();
    }
    let (s, c) = libm::sincos(vr.rotate_deg.to_radians());
    let k = libm::tan(vr.shear_deg.to_radians());
    // M = Shear * Rot * Scale
    let m = [
        [vr.scale * (c + k * s), vr.scale * (-s + k * c)],
        [vr.scale * s, vr.scale * c],
    ];
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let inv = [
        [m[1][1] / det, -m[0][1] / det],
        [-m[1][0] / det, m[0][0] / det],
    ];
    let cx = (img.width as f64 - 1.0) / 2.0;
    let cy = (img.height as f64 - 1.0) / 2.0;
    let mut out = RgbImage::new(img.width, img.height);
    for y in 0..img.height {
        for x in 0..img.width {
            let dx = x as f64 - cx - vr.translate_px[0];
            let dy = y as f64 - cy - vr.translate_px[1];
            let sx = cx + inv[0][0] * dx + inv[0][1] * dy;
            let sy = cy + inv[1][0] * dx + inv[1][1] * dy;
            out.put(x, y, sample_bilinear(img, sx, sy));
        }
    }
    out
}

fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / d).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / d + 2.0) / 6.0
    } else {
        ((r - g) / d + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    (h, s, max)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let i = h6.floor();
    let f = h6 - i;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match i as u32 % 6 {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

/// Brightness, contrast, saturation, then hue. Each stage clamps to `[0, 1]`.
pub fn apply_color_jitter(img: &mut RgbImage, j: &ColorJitter) {
    if j.is_identity() {
        return;
    }
    let clamp = |v: f64| v.clamp(0.0, 1.0);
    if j.brightness != 1.0 {
        for v in &mut img.data {
            *v = clamp(f64::from(*v) * j.brightness) as f32;
        }
    }
    if j.contrast != 1.0 {
        let mean = img.luma().mean();
        for v in &mut img.data {
            *v = clamp((f64::from(*v) - mean) * j.contrast + mean) as f32;
        }
    }
    if j.saturation != 1.0 {
        for px in img.data.chunks_exact_mut(3) {
            let g = f64::from(luma(px[0], px[1], px[2]));
            for v in px.iter_mut() {
                *v = clamp((f64::from(*v) - g) * j.saturation + g) as f32;
            }
        }
    }
    if j.hue != 0.0 {
        for px in img.data.chunks_exact_mut(3) {
            let (h, s, v) = rgb_to_hsv(f64::from(px[0]), f64::from(px[1]), f64::from(px[2]));
            let (r, g, b) = hsv_to_rgb(h + j.hue, s, v);
            px[0] = clamp(r) as f32;
            px[1] = clamp(g) as f32;
            px[2] = clamp(b) as f32;
        }
    }
}

fn add_noise(img: &mut RgbImage, sigma: f64, seed: u64) {
    if sigma == 0.0 {
        return;
    }
    let mut s = Stream::new(seed, "vision-noise");
    for v in &mut img.data {
        *v = (f64::from(*v) + sigma * s.normal()).clamp(0.0, 1.0) as f32;
    }
}

/// Averages `len` bilinear taps spaced one pixel apart along the blur
/// direction, centered on each pixel.
fn motion_blur(img: &RgbImage, len: usize, angle_deg: f64) -> RgbImage {
    if len <= 1 {
        return img.clone();
    }
    let (s, c) = libm::sincos(angle_deg.to_radians());
    let half = (len as f64 - 1.0) / 2.0;
    let mut out = RgbImage::new(img.width, img.height);
    for y in 0..img.height {
        for x in 0..img.width {
            let mut acc = [0f64; 3];
            for t in 0..len {
                let o = t as f64 - half;
                let p = sample_bilinear(img, x as f64 + o * c, y as f64 + o * s);
                for ch in 0..3 {
                    acc[ch] += f64::from(p[ch]);
                }
            }
            out.put(x, y, acc.map(|a| (a / len as f64) as f32));
        }
    }
    out
}
