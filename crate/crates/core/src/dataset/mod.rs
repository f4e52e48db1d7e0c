//! Action tokens, instruction samples, manifests and corpus generation.

mod generate;
mod manifest;
mod sample;
mod tokens;

pub use generate::{generate_dataset, ClearanceSampling, GenConfig, GenSummary, Preset};
pub use manifest::{
    load_observation, read_manifest, read_manifest_dir, write_manifest, write_records, Manifest,
    MANIFEST_FILE, RUN_CONFIG_FILE, SPLIT_FILES,
};
pub use sample::{
    build_sample, instruction_text, label_text, render_prompt, ImageRefs, InstructionSample,
    SampleMeta, SampleRecord, Split, IMAGE_PAD, IM_END, IM_START, SCHEMA_VERSION, VISION_END,
    VISION_START,
};
pub use tokens::{
    bin_value, detokenize_action, detokenize_raw, tokenize_action, ActionTokens, AXIS_NAMES,
    BIN_WIDTHS, VOCAB_SIZES,
};
