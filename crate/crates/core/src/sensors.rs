//! Synthetic observations: fingertip tactile sequences and the wrist-camera
//! view of the peg over the hole.
//!
//! The tactile model is a stylized imprint, not gel physics. Each finger sees
//! the peg silhouette pressed into its pad, displaced in proportion to the
//! planar misalignment and growing with contact depth over four frames.
//! Vision is an orthographic top-down render with Lambertian-style shading
//! from three lights, followed by the augmentation pipeline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{fits_inside, make_polygon, transform, Point2, Polygon, Pose, Shape};
use crate::randomization::{
    apply_vision_augment, ColorJitter, PhysicalParams, Randomization, TactileRandom,
    VisionRandom, CONTACT_DEPTH_RANGE,
};
use crate::raster::{same_dims, GrayImage, RgbImage};
use crate::rng::{derive_seed, Stream};

pub const TACTILE_FRAMES: usize = 4;
pub const TACTILE_SIZE: usize = 112;
pub const MONTAGE_SIZE: usize = 2 * TACTILE_SIZE;
pub const VISION_SIZE: usize = 224;
pub const TACTILE_PX_PER_MM: f64 = 20.0;
pub const VISION_PX_PER_MM: f64 = 8.0;

/// Imprint displacement per millimetre of misalignment, as a fraction of
/// the pad resolution.
const TACTILE_SHIFT_GAIN: f64 = 0.4;
/// Relative imprint pressure change per degree of rotational misalignment.
/// A twisted peg loads one finger harder than the other; the right pad sees
/// the mirrored pose, so the two pads move in opposite directions.
const TORSION_LOAD_GAIN: f64 = 0.1;
/// Silhouette size on the pad relative to the true cross-section.
const IMPRINT_SCALE: f64 = 0.15;
const TACTILE_BACKGROUND: f64 = 0.15;
const TACTILE_NOISE_SIGMA: f64 = 0.004;

const AMBIENT: f64 = 0.05;
const LIGHT_GAIN: f64 = 0.8;
const PLATE_ALBEDO: [f64; 3] = [0.85, 0.80, 0.70];
const HOLE_ALBEDO: [f64; 3] = [0.04, 0.04, 0.05];
const PEG_ALBEDO: [f64; 3] = [0.45, 0.52, 0.66];

/// Subsamples per pixel axis.
const SUPERSAMPLE: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

/// Four tactile frames tiled `t0 t1 / t2 t3`.
#[derive(Clone, Debug, PartialEq)]
pub struct TactileMontage {
    pub image: RgbImage,
}

impl TactileMontage {
    /// The frame at row-major tile `index`, taken from the first channel.
    pub fn tile(&self, index: usize) -> GrayImage {
        let w = self.image.width / 2;
        let h = self.image.height / 2;
        let (ox, oy) = ((index % 2) * w, (index / 2) * h);
        let mut out = GrayImage::new(w, h);
        for y in 0..h {
            for x in 0..w {
                out.set(x, y, self.image.pixel(ox + x, oy + y)[0]);
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub tactile_left: TactileMontage,
    pub tactile_right: TactileMontage,
    pub vision: RgbImage,
}

impl Observation {
    /// Copy with every image snapped to the 8-bit grid.
    pub fn quantized(&self) -> Observation {
        Observation {
            tactile_left: TactileMontage {
                image: self.tactile_left.image.quantized(),
            },
            tactile_right: TactileMontage {
                image: self.tactile_right.image.quantized(),
            },
            vision: self.vision.quantized(),
        }
    }
}

/// Polygon with cached bounding radii for fast rejection during raster.
struct Raster {
    poly: Polygon,
    center: Point2,
    r_in2: f64,
    r_out2: f64,
}

impl Raster {
    fn new(poly: Polygon) -> Self {
        let n = poly.vertices().len() as f64;
        let center = Point2::new(
            poly.vertices().iter().map(|v| v.x).sum::<f64>() / n,
            poly.vertices().iter().map(|v| v.y).sum::<f64>() / n,
        );
        let r_in = poly.signed_depth(center).max(0.0);
        let r_out = poly
            .vertices()
            .iter()
            .map(|v| (v.x - center.x).hypot(v.y - center.y))
            .fold(0.0, f64::max);
        Self {
            poly,
            center,
            r_in2: r_in * r_in * (1.0 - 1e-9),
            r_out2: r_out * r_out * (1.0 + 1e-9),
        }
    }

    fn contains(&self, p: Point2) -> bool {
        let dx = p.x - self.center.x;
        let dy = p.y - self.center.y;
        let d2 = dx * dx + dy * dy;
        if d2 < self.r_in2 {
            return true;
        }
        if d2 > self.r_out2 {
            return false;
        }
        self.poly.signed_depth(p) >= 0.0
    }
}

fn subsample_offsets() -> impl Iterator<Item = (f64, f64)> {
    (0..SUPERSAMPLE).flat_map(|j| {
        (0..SUPERSAMPLE).map(move |i| {
            (
                (i as f64 + 0.5) / SUPERSAMPLE as f64,
                (j as f64 + 0.5) / SUPERSAMPLE as f64,
            )
        })
    })
}

/// Imprint silhouette for one finger, before jitter and noise.
fn tactile_raw(
    misalignment: Pose,
    shape: Shape,
    phys: &PhysicalParams,
    side: Side,
) -> Vec<GrayImage> {
    let pose = match side {
        Side::Left => misalignment,
        Side::Right => Pose::new(-misalignment.x, misalignment.y, -misalignment.rz),
    };
    let base = make_polygon(shape);
    let stiffness = phys.youngs_modulus / 5.0e5;
    let spread = 1.0 + (phys.poisson_ratio - 0.3);
    let half = TACTILE_SIZE as f64 / 2.0;
    let shift = TACTILE_SHIFT_GAIN * TACTILE_PX_PER_MM;

    (0..TACTILE_FRAMES)
        .map(|k| {
            let depth = phys.contact_depth * (k + 1) as f64 / TACTILE_FRAMES as f64;
            let growth = (depth / CONTACT_DEPTH_RANGE.1).sqrt();
            let scale = IMPRINT_SCALE * TACTILE_PX_PER_MM * growth * spread;
            let amplitude = (0.15 + 0.35 * stiffness)
                * (0.5 + 0.5 * depth / CONTACT_DEPTH_RANGE.1)
                * (1.0 + TORSION_LOAD_GAIN * pose.rz);

            // silhouette in pad pixels, y up, origin at pad center
            let scaled = Polygon::new(
                base.vertices()
                    .iter()
                    .map(|v| Point2::new(v.x * scale, v.y * scale))
                    .collect(),
            )
            .expect("scaled regular polygon is valid");
            let placed = transform(&scaled, Pose::new(shift * pose.x, shift * pose.y, pose.rz));
            let radius = shape.circumradius() * scale;
            let raster = Raster::new(placed);

            let mut frame = GrayImage::filled(TACTILE_SIZE, TACTILE_SIZE, TACTILE_BACKGROUND as f32);
            for row in 0..TACTILE_SIZE {
                for col in 0..TACTILE_SIZE {
                    let mut acc = 0.0;
                    for (ox, oy) in subsample_offsets() {
                        let p = Point2::new(col as f64 + ox - half, half - (row as f64 + oy));
                        if raster.contains(p) {
                            // pressure falls off toward the rim; friction
                            // keeps the profile flat
                            let dx = p.x - raster.center.x;
                            let dy = p.y - raster.center.y;
                            let rho2 = ((dx * dx + dy * dy) / (radius * radius)).min(1.0);
                            acc += 1.0 - (1.0 - phys.friction) * rho2;
                        }
                    }
                    if acc > 0.0 {
                        let cov = acc / (SUPERSAMPLE * SUPERSAMPLE) as f64;
                        frame.set(col, row, (TACTILE_BACKGROUND + amplitude * cov) as f32);
                    }
                }
            }
            frame
        })
        .collect()
}

fn jitter_gray(frame: &mut GrayImage, j: &ColorJitter) {
    // saturation and hue have no effect on a single channel
    if j.brightness != 1.0 {
        for v in &mut frame.data {
            *v = (f64::from(*v) * j.brightness).clamp(0.0, 1.0) as f32;
        }
    }
    if j.contrast != 1.0 {
        let mean = frame.mean();
        for v in &mut frame.data {
            *v = ((f64::from(*v) - mean) * j.contrast + mean).clamp(0.0, 1.0) as f32;
        }
    }
}

/// Four frames of one finger's imprint during a colliding descent.
pub fn render_tactile_sequence(
    misalignment: Pose,
    shape: Shape,
    clearance_mm: f64,
    phys: &PhysicalParams,
    tactile: &TactileRandom,
    side: Side,
    seed: u64,
) -> Result<Vec<GrayImage>> {
    let peg = make_polygon(shape);
    let hole = make_polygon(shape.hole(clearance_mm));
    if fits_inside(&hole, &peg, misalignment) {
        return Err(Error::NoContact);
    }
    let mut frames = tactile_raw(misalignment, shape, phys, side);
    let mut noise = Stream::new(seed, "tactile-noise");
    for f in &mut frames {
        jitter_gray(f, &tactile.jitter);
        for v in &mut f.data {
            *v = (f64::from(*v) + TACTILE_NOISE_SIGMA * noise.normal()).clamp(0.0, 1.0) as f32;
        }
    }
    Ok(frames)
}

/// Tiles four frames row-major into a 3-channel image twice their size.
pub fn montage_2x2(frames: &[GrayImage]) -> Result<TactileMontage> {
    if frames.len() != TACTILE_FRAMES {
        return Err(Error::Montage(format!("got {} frames", frames.len())));
    }
    for f in &frames[1..] {
        same_dims(&frames[0], f)?;
    }
    let (w, h) = (frames[0].width, frames[0].height);
    let mut image = RgbImage::new(2 * w, 2 * h);
    for (k, f) in frames.iter().enumerate() {
        let (ox, oy) = ((k % 2) * w, (k / 2) * h);
        for y in 0..h {
            for x in 0..w {
                let v = f.get(x, y);
                image.put(ox + x, oy + y, [v, v, v]);
            }
        }
    }
    Ok(TactileMontage { image })
}

/// A flat pad: what a finger reports when nothing presses on it.
pub fn idle_montage() -> TactileMontage {
    let frame = GrayImage::filled(TACTILE_SIZE, TACTILE_SIZE, TACTILE_BACKGROUND as f32);
    montage_2x2(&vec![frame; TACTILE_FRAMES]).expect("uniform frames")
}

fn shading(vr: &VisionRandom) -> f64 {
    // flat surfaces facing +z; wrapped diffuse so lights below the horizon
    // still contribute a little
    AMBIENT
        + LIGHT_GAIN
            * vr.lights
                .iter()
                .map(|l| l.intensity * (0.5 + 0.5 * l.dir[2]))
                .sum::<f64>()
}

/// The scene before augmentation.
pub fn render_vision_raw(
    misalignment: Pose,
    shape: Shape,
    clearance_mm: f64,
    vr: &VisionRandom,
) -> RgbImage {
    let hole = Raster::new(make_polygon(shape.hole(clearance_mm)));
    let peg = Raster::new(transform(&make_polygon(shape), misalignment));
    let light = shading(vr);
    let colors = [PLATE_ALBEDO, HOLE_ALBEDO, PEG_ALBEDO].map(|a| a.map(|c| (c * light).min(1.0)));
    let half = VISION_SIZE as f64 / 2.0;
    let n = (SUPERSAMPLE * SUPERSAMPLE) as f64;

    let mut img = RgbImage::new(VISION_SIZE, VISION_SIZE);
    for row in 0..VISION_SIZE {
        for col in 0..VISION_SIZE {
            let mut acc = [0f64; 3];
            for (ox, oy) in subsample_offsets() {
                let p = Point2::new(
                    (col as f64 + ox - half) / VISION_PX_PER_MM,
                    (half - (row as f64 + oy)) / VISION_PX_PER_MM,
                );
                let layer = if peg.contains(p) {
                    2
                } else if hole.contains(p) {
                    1
                } else {
                    0
                };
                for c in 0..3 {
                    acc[c] += colors[layer][c];
                }
            }
            img.put(col, row, acc.map(|a| (a / n) as f32));
        }
    }
    img
}

/// Wrist-camera image at the moment of contact.
pub fn render_vision(
    misalignment: Pose,
    shape: Shape,
    clearance_mm: f64,
    vr: &VisionRandom,
) -> RgbImage {
    apply_vision_augment(&render_vision_raw(misalignment, shape, clearance_mm, vr), vr)
}

/// Full observation of one colliding attempt. Vision is captured first,
/// then both fingers' tactile sequences.
pub fn render_observation(
    misalignment: Pose,
    shape: Shape,
    clearance_mm: f64,
    rand: &Randomization,
    capture_seed: u64,
) -> Result<Observation> {
    let mut vr = rand.vision.clone();
    vr.noise_seed = derive_seed(rand.vision.noise_seed, &[capture_seed]);
    let vision = render_vision(misalignment, shape, clearance_mm, &vr);
    let montage = |side: Side, idx: u64| -> Result<TactileMontage> {
        let frames = render_tactile_sequence(
            misalignment,
            shape,
            clearance_mm,
            &rand.physical,
            &rand.tactile,
            side,
            derive_seed(capture_seed, &[idx]),
        )?;
        montage_2x2(&frames)
    };
    Ok(Observation {
        tactile_left: montage(Side::Left, 0)?,
        tactile_right: montage(Side::Right, 1)?,
        vision,
    })
}
