//! Action discretization: one token per axis.
//!
//! x and y use 51 bins from -2.5 to 2.5 mm in 0.1 mm steps; rz uses 21 bins
//! from -5 to 5 degrees in 0.5 degree steps. Zero maps to the middle bin.

use serde::{Deserialize, Serialize};

use crate::episode::Action;
use crate::error::{Error, Result};

pub const VOCAB_SIZES: [usize; 3] = [51, 51, 21];
pub const AXIS_NAMES: [&str; 3] = ["x", "y", "rz"];
/// Bins per unit (1 / step) on each axis.
const BINS_PER_UNIT: [f64; 3] = [10.0, 10.0, 2.0];
const CENTER: [usize; 3] = [25, 25, 10];

/// Bin widths (mm, mm, deg).
pub const BIN_WIDTHS: [f64; 3] = [0.1, 0.1, 0.5];

/// `[x_bin, y_bin, rz_bin]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "[usize; 3]", try_from = "[usize; 3]")]
pub struct ActionTokens([usize; 3]);

impl ActionTokens {
    pub fn new(tokens: [usize; 3]) -> Result<Self> {
        for axis in 0..3 {
            if tokens[axis] >= VOCAB_SIZES[axis] {
                return Err(Error::TokenOutOfRange {
                    axis: AXIS_NAMES[axis],
                    index: tokens[axis],
                    size: VOCAB_SIZES[axis],
                });
            }
        }
        Ok(Self(tokens))
    }

    pub fn center() -> Self {
        Self(CENTER)
    }

    pub fn get(&self, axis: usize) -> usize {
        self.0[axis]
    }

    pub fn as_array(&self) -> [usize; 3] {
        self.0
    }

    /// Every token sequence, x-major.
    pub fn all() -> impl Iterator<Item = ActionTokens> {
        (0..VOCAB_SIZES[0]).flat_map(|x| {
            (0..VOCAB_SIZES[1])
                .flat_map(move |y| (0..VOCAB_SIZES[2]).map(move |r| ActionTokens([x, y, r])))
        })
    }
}

impl From<ActionTokens> for [usize; 3] {
    fn from(t: ActionTokens) -> Self {
        t.0
    }
}

impl TryFrom<[usize; 3]> for ActionTokens {
    type Error = Error;
    fn try_from(t: [usize; 3]) -> Result<Self> {
        ActionTokens::new(t)
    }
}

/// Clamps to the action bounds and rounds each axis to the nearest bin,
/// halves away from zero.
pub fn tokenize_action(a: Action) -> ActionTokens {
    let a = a.clamped().as_array();
    let mut out = [0usize; 3];
    for axis in 0..3 {
        let k = (a[axis] * BINS_PER_UNIT[axis]).round() as i64;
        let idx = (k + CENTER[axis] as i64).clamp(0, VOCAB_SIZES[axis] as i64 - 1);
        out[axis] = idx as usize;
    }
    ActionTokens(out)
}

/// Bin value of a single axis token.
pub fn bin_value(axis: usize, index: usize) -> f64 {
    (index as f64 - CENTER[axis] as f64) / BINS_PER_UNIT[axis] + 0.0
}

/// Bin centers of each token.
pub fn detokenize_action(t: ActionTokens) -> Action {
    Action::new(bin_value(0, t.0[0]), bin_value(1, t.0[1]), bin_value(2, t.0[2]))
}

/// Checks raw indices and converts them, for data read from disk.
pub fn detokenize_raw(tokens: [usize; 3]) -> Result<Action> {
    Ok(detokenize_action(ActionTokens::new(tokens)?))
}
