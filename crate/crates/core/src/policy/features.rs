//! The frozen featurizer: each image is snapped to 8 bits, converted to
//! luma and mean-pooled to 28x28. Images from memory and from PNG give
//! identical features.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ShapeKind;
use crate::raster::{dequantize, luma, quantize, RgbImage};
use crate::sensors::{Observation, MONTAGE_SIZE, VISION_SIZE};

pub const POOLED: usize = 28;
pub const IMAGE_FEATURES: usize = POOLED * POOLED;
pub const SHAPE_FEATURES: usize = ShapeKind::ALL.len();
pub const FEATURE_DIM: usize = 3 * IMAGE_FEATURES + SHAPE_FEATURES;

/// Where the vision block sits relative to the tactile blocks. The default
/// places it last, next to the shape one-hot and the prediction heads.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureOrder {
    #[default]
    VisionLast,
    VisionFirst,
}

fn pool(img: &RgbImage, name: &'static str, expect: usize, out: &mut Vec<f32>) -> Result<()> {
    if img.width == 0 || img.height == 0 {
        return Err(Error::MissingModality(name));
    }
    if img.width != expect || img.height != expect {
        return Err(Error::FeatureShape {
            expected: expect * expect,
            got: img.width * img.height,
        });
    }
    let cell = expect / POOLED;
    let q = |v: f32| dequantize(quantize(v));
    for gy in 0..POOLED {
        for gx in 0..POOLED {
            let mut acc = 0f64;
            for y in gy * cell..(gy + 1) * cell {
                for x in gx * cell..(gx + 1) * cell {
                    let [r, g, b] = img.pixel(x, y);
                    acc += f64::from(luma(q(r), q(g), q(b)));
                }
            }
            out.push((acc / (cell * cell) as f64 - 0.5) as f32);
        }
    }
    Ok(())
}

pub fn featurize(obs: &Observation, shape: ShapeKind, order: FeatureOrder) -> Result<Vec<f32>> {
    let mut out = Vec::with_capacity(FEATURE_DIM);
    let tl = &obs.tactile_left.image;
    let tr = &obs.tactile_right.image;
    match order {
        FeatureOrder::VisionLast => {
            pool(tl, "tactile_left", MONTAGE_SIZE, &mut out)?;
            pool(tr, "tactile_right", MONTAGE_SIZE, &mut out)?;
            pool(&obs.vision, "vision", VISION_SIZE, &mut out)?;
        }
        FeatureOrder::VisionFirst => {
            pool(&obs.vision, "vision", VISION_SIZE, &mut out)?;
            pool(tl, "tactile_left", MONTAGE_SIZE, &mut out)?;
            pool(tr, "tactile_right", MONTAGE_SIZE, &mut out)?;
        }
    }
    for k in ShapeKind::ALL {
        out.push(if k == shape { 1.0 } else { 0.0 });
    }
    Ok(out)
}
