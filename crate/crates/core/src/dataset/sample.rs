//! Instruction-format samples and the chat template they are rendered with.
//!
//! Images enter the prompt tactile-left, tactile-right, then vision, so the
//! vision tokens sit closest to the answer.

use serde::{Deserialize, Serialize};

use super::tokens::{detokenize_action, tokenize_action, ActionTokens};
use crate::episode::Action;
use crate::error::{Error, Result};
use crate::geometry::{Pose, ShapeKind};
use crate::randomization::Randomization;
use crate::sensors::{Observation, MONTAGE_SIZE, VISION_SIZE};

pub const SCHEMA_VERSION: u32 = 1;

pub const IM_START: &str = "<|im_start|>";
pub const IM_END: &str = "<|im_end|>";
pub const VISION_START: &str = "<|vision_start|>";
pub const VISION_END: &str = "<|vision_end|>";
pub const IMAGE_PAD: &str = "<|image_pad|>";

const SYSTEM_PROMPT: &str = "You are a robot assembly assistant.";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Split {
    #[serde(rename = "ID")]
    Id,
    #[serde(rename = "OOD")]
    Ood,
}

impl Split {
    pub fn of(kind: ShapeKind) -> Split {
        if kind.is_in_distribution() {
            Split::Id
        } else {
            Split::Ood
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Id => "ID",
            Split::Ood => "OOD",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRefs {
    pub tactile_left: String,
    pub tactile_right: String,
    pub vision: String,
}

impl ImageRefs {
    pub fn for_sample(sample_id: &str) -> Self {
        Self {
            tactile_left: format!("images/{sample_id}_tl.png"),
            tactile_right: format!("images/{sample_id}_tr.png"),
            vision: format!("images/{sample_id}_v.png"),
        }
    }

    /// Paths in prompt order.
    pub fn in_order(&self) -> [&str; 3] {
        [&self.tactile_left, &self.tactile_right, &self.vision]
    }
}

/// One manifest line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub schema: u32,
    pub sample_id: String,
    pub shape: ShapeKind,
    pub clearance_mm: f64,
    pub split: Split,
    pub images: ImageRefs,
    pub instruction: String,
    pub label_text: String,
    pub label_tokens: ActionTokens,
    pub label_continuous: Action,
    pub misalignment: Pose,
    pub randomization: Randomization,
    pub episode_id: u64,
    pub attempt: usize,
}

impl SampleRecord {
    /// Full dialogue round including the assistant answer.
    pub fn transcript(&self) -> String {
        format!("{}{}{IM_END}\n", self.instruction, self.label_text)
    }
}

/// Everything about a sample except its pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleMeta {
    pub sample_id: String,
    pub clearance_mm: f64,
    pub misalignment: Pose,
    pub randomization: Randomization,
    pub episode_id: u64,
    pub attempt: usize,
}

/// A sample with its images in memory.
#[derive(Clone, Debug)]
pub struct InstructionSample {
    pub record: SampleRecord,
    pub observation: Observation,
}

/// The task text: image types, peg shape and the requested action.
pub fn instruction_text(shape: ShapeKind) -> String {
    format!(
        "The first two images are the left and right fingertip tactile sequences, \
         each a 2x2 grid of four consecutive frames recorded during contact. \
         The third image is the wrist camera view of the peg above the hole. \
         The gripper holds a {shape} peg. \
         Predict the robot action that aligns the peg with the hole, \
         as x (mm), y (mm) and rz (deg)."
    )
}

/// System turn plus the user turn with three image slots, ending where the
/// assistant answer begins.
pub fn render_prompt(shape: ShapeKind) -> String {
    let slot = format!("{VISION_START}{IMAGE_PAD}{VISION_END}");
    format!(
        "{IM_START}system\n{SYSTEM_PROMPT}{IM_END}\n\
         {IM_START}user\n{slot}{slot}{slot}{}{IM_END}\n\
         {IM_START}assistant\n",
        instruction_text(shape)
    )
}

/// `x:<v> y:<v> rz:<v>` at bin resolution.
pub fn label_text(tokens: ActionTokens) -> String {
    let a = detokenize_action(tokens);
    format!("x:{:.1} y:{:.1} rz:{:.1}", a.dx + 0.0, a.dy + 0.0, a.drz + 0.0)
}

fn check_dims(name: &'static str, w: usize, h: usize, expect: usize) -> Result<()> {
    if w == 0 || h == 0 {
        return Err(Error::MissingModality(name));
    }
    if w != expect || h != expect {
        return Err(Error::Config(format!(
            "{name} image is {w}x{h}, expected {expect}x{expect}"
        )));
    }
    Ok(())
}

pub fn build_sample(
    obs: Observation,
    label: Action,
    shape: ShapeKind,
    meta: SampleMeta,
) -> Result<InstructionSample> {
    check_dims(
        "tactile_left",
        obs.tactile_left.image.width,
        obs.tactile_left.image.height,
        MONTAGE_SIZE,
    )?;
    check_dims(
        "tactile_right",
        obs.tactile_right.image.width,
        obs.tactile_right.image.height,
        MONTAGE_SIZE,
    )?;
    check_dims("vision", obs.vision.width, obs.vision.height, VISION_SIZE)?;
    if !label.is_finite() {
        return Err(Error::NonFinite {
            what: "label",
            at: meta.sample_id,
        });
    }
    let label = label.clamped();
    let tokens = tokenize_action(label);
    let record = SampleRecord {
        schema: SCHEMA_VERSION,
        images: ImageRefs::for_sample(&meta.sample_id),
        sample_id: meta.sample_id,
        shape,
        clearance_mm: meta.clearance_mm,
        split: Split::of(shape),
        instruction: render_prompt(shape),
        label_text: label_text(tokens),
        label_tokens: tokens,
        label_continuous: label,
        misalignment: meta.misalignment,
        randomization: meta.randomization,
        episode_id: meta.episode_id,
        attempt: meta.attempt,
    };
    Ok(InstructionSample {
        record,
        observation: obs,
    })
}
