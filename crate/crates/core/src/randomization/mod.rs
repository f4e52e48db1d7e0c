//! Domain randomization: physical, task, tactile and vision parameters.
//!
//! Each family draws from its own named stream (`physics`, `task`,
//! `tactile`, `vision`), so adding a draw to one family never moves the
//! values of another.

mod augment;

pub use augment::{apply_color_jitter, apply_vision_augment};

use serde::{Deserialize, Serialize};

use crate::rng::Stream;

pub const YOUNGS_MODULUS_RANGE: (f64, f64) = (1.0e5, 5.0e5);
pub const POISSON_RATIO_RANGE: (f64, f64) = (0.3, 0.48);
pub const FRICTION_RANGE: (f64, f64) = (0.2, 0.7);
pub const PEG_OFFSET_RANGE: (f64, f64) = (-1.0, 1.0);
pub const CONTACT_DEPTH_RANGE: (f64, f64) = (0.6, 0.9);

pub const LIGHT_COUNT: usize = 3;
pub const LIGHT_INTENSITY_RANGE: (f64, f64) = (0.2, 0.6);
pub const SCALE_RANGE: (f64, f64) = (0.9, 1.1);
pub const TRANSLATE_PX_RANGE: (f64, f64) = (-10.0, 10.0);
pub const ROTATE_DEG_RANGE: (f64, f64) = (-3.0, 3.0);
pub const SHEAR_DEG_RANGE: (f64, f64) = (-3.0, 3.0);

/// Multiplicative bounds for brightness, contrast and saturation.
pub const JITTER_GAIN_RANGE: (f64, f64) = (0.8, 1.2);
/// Hue shift bounds as a fraction of the full hue cycle.
pub const JITTER_HUE_RANGE: (f64, f64) = (-0.05, 0.05);
pub const NOISE_SIGMA_RANGE: (f64, f64) = (0.0, 0.02);
pub const BLUR_LENGTHS: [usize; 3] = [0, 3, 5];

/// Sensor elastomer and contact parameters, fixed for one episode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    pub youngs_modulus: f64,
    pub poisson_ratio: f64,
    pub friction: f64,
    pub peg_offset_x: f64,
    pub peg_offset_z: f64,
    pub contact_depth: f64,
}

impl PhysicalParams {
    /// Mid-range values, handy for tests and previews.
    pub fn nominal() -> Self {
        Self {
            youngs_modulus: 3.0e5,
            poisson_ratio: 0.39,
            friction: 0.45,
            peg_offset_x: 0.0,
            peg_offset_z: 0.0,
            contact_depth: 0.75,
        }
    }

    pub fn within_ranges(&self) -> bool {
        within(self.youngs_modulus, YOUNGS_MODULUS_RANGE)
            && within(self.poisson_ratio, POISSON_RATIO_RANGE)
            && within(self.friction, FRICTION_RANGE)
            && within(self.peg_offset_x, PEG_OFFSET_RANGE)
            && within(self.peg_offset_z, PEG_OFFSET_RANGE)
            && within(self.contact_depth, CONTACT_DEPTH_RANGE)
    }
}

/// Brightness, contrast and saturation gains plus a hue shift in cycles.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColorJitter {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue: f64,
}

impl ColorJitter {
    pub const IDENTITY: ColorJitter = ColorJitter {
        brightness: 1.0,
        contrast: 1.0,
        saturation: 1.0,
        hue: 0.0,
    };

    fn sample(s: &mut Stream) -> Self {
        Self {
            brightness: s.uniform(JITTER_GAIN_RANGE.0, JITTER_GAIN_RANGE.1),
            contrast: s.uniform(JITTER_GAIN_RANGE.0, JITTER_GAIN_RANGE.1),
            saturation: s.uniform(JITTER_GAIN_RANGE.0, JITTER_GAIN_RANGE.1),
            hue: s.uniform(JITTER_HUE_RANGE.0, JITTER_HUE_RANGE.1),
        }
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::IDENTITY
    }

    pub fn within_ranges(&self) -> bool {
        within(self.brightness, JITTER_GAIN_RANGE)
            && within(self.contrast, JITTER_GAIN_RANGE)
            && within(self.saturation, JITTER_GAIN_RANGE)
            && within(self.hue, JITTER_HUE_RANGE)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Light {
    /// Unit vector pointing from the scene toward the light.
    pub dir: [f64; 3],
    pub intensity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VisionRandom {
    pub lights: [Light; LIGHT_COUNT],
    pub scale: f64,
    pub translate_px: [f64; 2],
    pub rotate_deg: f64,
    pub shear_deg: f64,
    pub jitter: ColorJitter,
    pub noise_sigma: f64,
    pub blur_len: usize,
    pub blur_angle_deg: f64,
    /// Seed of the per-capture noise stream.
    pub noise_seed: u64,
}

impl VisionRandom {
    /// Overhead lights at the given per-source intensity and no augmentation.
    pub fn identity(intensity: f64) -> Self {
        let dirs = [[0.0, 0.0, 1.0], [0.6, 0.0, 0.8], [-0.6, 0.0, 0.8]];
        Self {
            lights: dirs.map(|dir| Light { dir, intensity }),
            scale: 1.0,
            translate_px: [0.0, 0.0],
            rotate_deg: 0.0,
            shear_deg: 0.0,
            jitter: ColorJitter::IDENTITY,
            noise_sigma: 0.0,
            blur_len: 0,
            blur_angle_deg: 0.0,
            noise_seed: 0,
        }
    }

    /// Copy of these settings with every light set to `intensity`.
    pub fn with_intensity(&self, intensity: f64) -> Self {
        let mut out = self.clone();
        for l in &mut out.lights {
            l.intensity = intensity;
        }
        out
    }

    pub fn within_ranges(&self) -> bool {
        self.lights.iter().all(|l| {
            let n = (l.dir[0] * l.dir[0] + l.dir[1] * l.dir[1] + l.dir[2] * l.dir[2]).sqrt();
            within(l.intensity, LIGHT_INTENSITY_RANGE) && (n - 1.0).abs() < 1e-9
        }) && within(self.scale, SCALE_RANGE)
            && self.translate_px.iter().all(|&t| within(t, TRANSLATE_PX_RANGE))
            && within(self.rotate_deg, ROTATE_DEG_RANGE)
            && within(self.shear_deg, SHEAR_DEG_RANGE)
            && self.jitter.within_ranges()
            && within(self.noise_sigma, NOISE_SIGMA_RANGE)
            && BLUR_LENGTHS.contains(&self.blur_len)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TactileRandom {
    pub jitter: ColorJitter,
}

impl TactileRandom {
    pub fn identity() -> Self {
        Self {
            jitter: ColorJitter::IDENTITY,
        }
    }
}

/// Every randomized quantity of one episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Randomization {
    pub physical: PhysicalParams,
    pub vision: VisionRandom,
    pub tactile: TactileRandom,
}

impl Randomization {
    pub fn within_ranges(&self) -> bool {
        self.physical.within_ranges()
            && self.vision.within_ranges()
            && self.tactile.jitter.within_ranges()
    }
}

fn within(v: f64, (lo, hi): (f64, f64)) -> bool {
    v.is_finite() && v >= lo && v <= hi
}

fn unit_sphere(s: &mut Stream) -> [f64; 3] {
    let z = s.uniform(-1.0, 1.0);
    let phi = s.uniform(0.0, std::f64::consts::TAU);
    let r = (1.0 - z * z).max(0.0).sqrt();
    let v = [r * libm::cos(phi), r * libm::sin(phi), z];
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

/// Draws the full randomization vector for `seed`.
pub fn sample_all(seed: u64) -> Randomization {
    let mut physics = Stream::new(seed, "physics");
    let youngs_modulus = physics.uniform(YOUNGS_MODULUS_RANGE.0, YOUNGS_MODULUS_RANGE.1);
    let poisson_ratio = physics.uniform(POISSON_RATIO_RANGE.0, POISSON_RATIO_RANGE.1);
    let friction = physics.uniform(FRICTION_RANGE.0, FRICTION_RANGE.1);

    let mut task = Stream::new(seed, "task");
    let peg_offset_x = task.uniform(PEG_OFFSET_RANGE.0, PEG_OFFSET_RANGE.1);
    let peg_offset_z = task.uniform(PEG_OFFSET_RANGE.0, PEG_OFFSET_RANGE.1);
    let contact_depth = task.uniform(CONTACT_DEPTH_RANGE.0, CONTACT_DEPTH_RANGE.1);

    let mut tactile = Stream::new(seed, "tactile");
    let tactile_jitter = ColorJitter::sample(&mut tactile);

    let mut vision = Stream::new(seed, "vision");
    let lights = [(); LIGHT_COUNT].map(|_| Light {
        dir: unit_sphere(&mut vision),
        intensity: vision.uniform(LIGHT_INTENSITY_RANGE.0, LIGHT_INTENSITY_RANGE.1),
    });
    let scale = vision.uniform(SCALE_RANGE.0, SCALE_RANGE.1);
    let translate_px = [
        vision.uniform(TRANSLATE_PX_RANGE.0, TRANSLATE_PX_RANGE.1),
        vision.uniform(TRANSLATE_PX_RANGE.0, TRANSLATE_PX_RANGE.1),
    ];
    let rotate_deg = vision.uniform(ROTATE_DEG_RANGE.0, ROTATE_DEG_RANGE.1);
    let shear_deg = vision.uniform(SHEAR_DEG_RANGE.0, SHEAR_DEG_RANGE.1);
    let jitter = ColorJitter::sample(&mut vision);
    let noise_sigma = vision.uniform(NOISE_SIGMA_RANGE.0, NOISE_SIGMA_RANGE.1);
    let blur_len = BLUR_LENGTHS[vision.below(BLUR_LENGTHS.len())];
    let blur_angle_deg = vision.uniform(0.0, 180.0);
    let noise_seed = vision.next_u64();

    Randomization {
        physical: PhysicalParams {
            youngs_modulus,
            poisson_ratio,
            friction,
            peg_offset_x,
            peg_offset_z,
            contact_depth,
        },
        vision: VisionRandom {
            lights,
            scale,
            translate_px,
            rotate_deg,
            shear_deg,
            jitter,
            noise_sigma,
            blur_len,
            blur_angle_deg,
            noise_seed,
        },
        tactile: TactileRandom {
            jitter: tactile_jitter,
        },
    }
}
