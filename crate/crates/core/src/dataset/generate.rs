//! Corpus generation: run exploration episodes, label every colliding
//! attempt with its ground-truth correction, render, and write to disk.
//!
//! Episodes are simulated without rendering first, which is cheap and fixes
//! the sample list. Rendering then runs in parallel per chunk, and a single
//! writer lays files down in sample order.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::manifest::{write_manifest, RUN_CONFIG_FILE};
use super::sample::{build_sample, SampleMeta, SampleRecord};
use super::tokens::{detokenize_action, ActionTokens, VOCAB_SIZES};
use crate::episode::{
    ground_truth_for, reset, Action, EpisodeState, Phase, StepResult, TaskConfig,
    DEFAULT_MAX_ATTEMPTS,
};
use crate::error::{Error, IoContext, Result};
use crate::geometry::{ShapeKind, CLEARANCE_RANGE};
use crate::rng::{derive_seed, Stream};

pub const EPISODES_FILE: &str = "episodes.jsonl";
const RENDER_CHUNK: usize = 256;
/// Keeps held-out evaluation episodes disjoint from training episodes drawn
/// with the same seed.
const EVAL_SALT: u64 = 0xE7A1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Full,
    Eval,
    Desk,
}

impl Preset {
    pub fn parse(s: &str) -> Option<Preset> {
        match s {
            "full" => Some(Preset::Full),
            "eval" => Some(Preset::Eval),
            "desk" => Some(Preset::Desk),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClearanceSampling {
    Uniform { lo: f64, hi: f64 },
    Fixed(f64),
}

impl ClearanceSampling {
    fn draw(self, s: &mut Stream) -> f64 {
        match self {
            ClearanceSampling::Uniform { lo, hi } => s.uniform(lo, hi),
            ClearanceSampling::Fixed(c) => c,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    /// Sample count per shape.
    pub shapes: Vec<(ShapeKind, usize)>,
    pub clearance: ClearanceSampling,
    pub seed: u64,
    pub salt: u64,
    pub max_attempts: usize,
}

impl GenConfig {
    pub fn preset(preset: Preset, seed: u64) -> Self {
        let each = |kinds: &[ShapeKind], n: usize| kinds.iter().map(|&k| (k, n)).collect();
        let (shapes, salt) = match preset {
            Preset::Full => (each(&ShapeKind::ALL, 5_600), 0),
            Preset::Eval => (each(&ShapeKind::ALL, 2_000), EVAL_SALT),
            Preset::Desk => (each(&ShapeKind::ALL, 400), 0),
        };
        Self {
            shapes,
            clearance: ClearanceSampling::Uniform {
                lo: CLEARANCE_RANGE.0,
                hi: CLEARANCE_RANGE.1,
            },
            seed,
            salt,
            max_attempts: DEFAULT_MAX_ATTEMPTS,
        }
    }

    /// Only the given shapes, `total` samples spread as evenly as possible.
    pub fn for_shapes(kinds: &[ShapeKind], total: usize, seed: u64) -> Self {
        let mut cfg = Self::preset(Preset::Desk, seed);
        cfg.shapes = kinds.iter().map(|&k| (k, 0)).collect();
        cfg.with_total(total)
    }

    /// Redistributes `total` samples over the configured shapes, earlier
    /// shapes taking the remainder.
    pub fn with_total(mut self, total: usize) -> Self {
        let n = self.shapes.len();
        for (i, entry) in self.shapes.iter_mut().enumerate() {
            entry.1 = total / n + usize::from(i < total % n);
        }
        self
    }

    pub fn total(&self) -> usize {
        self.shapes.iter().map(|s| s.1).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.shapes.is_empty() || self.shapes.iter().any(|s| s.1 == 0) {
            return Err(Error::Config("every shape needs a sample count of at least 1".into()));
        }
        let ok = match self.clearance {
            ClearanceSampling::Uniform { lo, hi } => lo > 0.0 && hi >= lo,
            ClearanceSampling::Fixed(c) => c > 0.0,
        };
        if !ok {
            return Err(Error::Config("clearance must be positive".into()));
        }
        if self.max_attempts < 1 {
            return Err(Error::Config("max_attempts must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub shape: ShapeKind,
    pub episode_id: u64,
    pub clearance_mm: f64,
    pub steps: usize,
    pub phase: Phase,
    pub samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenSummary {
    pub samples: usize,
    pub episodes: Vec<EpisodeSummary>,
    pub dir: PathBuf,
}

struct Planned {
    kind: ShapeKind,
    episode: u64,
    state: EpisodeState,
}

fn exploration_action(s: &mut Stream) -> Action {
    let t = [0, 1, 2].map(|axis| s.below(VOCAB_SIZES[axis]));
    detokenize_action(ActionTokens::new(t).expect("drawn below vocab size"))
}

/// Runs one exploration episode and returns the states after each
/// colliding attempt.
fn explore(cfg: &GenConfig, kind: ShapeKind, episode: u64) -> Result<(EpisodeSummary, Vec<Planned>)> {
    let seed = derive_seed(cfg.seed, &[cfg.salt, kind.index() as u64, episode]);
    let clearance = cfg.clearance.draw(&mut Stream::new(seed, "clearance"));
    let mut task = TaskConfig::new(kind, clearance);
    task.max_attempts = cfg.max_attempts;
    let mut state = reset(task, seed)?;
    let mut explore = Stream::new(seed, "exploration");
    let mut planned = Vec::new();
    while !state.is_terminal() {
        let action = if state.attempt == 0 {
            Action::default()
        } else {
            exploration_action(&mut explore)
        };
        if state.advance(action)? == StepResult::Collided {
            planned.push(Planned {
                kind,
                episode,
                state: state.clone(),
            });
        }
    }
    let summary = EpisodeSummary {
        shape: kind,
        episode_id: episode,
        clearance_mm: clearance,
        steps: state.attempt,
        phase: state.phase,
        samples: planned.len(),
    };
    Ok((summary, planned))
}

fn plan(cfg: &GenConfig) -> Result<(Vec<EpisodeSummary>, Vec<Planned>)> {
    let mut episodes = Vec::new();
    let mut planned = Vec::new();
    for &(kind, count) in &cfg.shapes {
        let mut got = 0;
        let mut e = 0u64;
        while got < count {
            let (mut summary, samples) = explore(cfg, kind, e)?;
            let take = samples.len().min(count - got);
            summary.samples = take;
            planned.extend(samples.into_iter().take(take));
            got += take;
            episodes.push(summary);
            e += 1;
        }
    }
    Ok((episodes, planned))
}

fn render(p: &Planned) -> Result<(SampleRecord, [Vec<u8>; 3])> {
    let obs = p.state.observe()?;
    let meta = SampleMeta {
        sample_id: format!("{}-{:06}-{:02}", p.kind.name(), p.episode, p.state.attempt),
        clearance_mm: p.state.config.clearance_mm,
        misalignment: p.state.misalignment,
        randomization: p.state.randomization.clone(),
        episode_id: p.episode,
        attempt: p.state.attempt,
    };
    let label = ground_truth_for(p.state.misalignment);
    let sample = build_sample(obs, label, p.kind, meta)?;
    let o = &sample.observation;
    let pngs = [
        o.tactile_left.image.encode_png()?,
        o.tactile_right.image.encode_png()?,
        o.vision.encode_png()?,
    ];
    Ok((sample.record, pngs))
}

fn partial_dir(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".partial");
    out.with_file_name(name)
}

fn write_all(cfg: &GenConfig, dir: &Path, run_config: &serde_json::Value) -> Result<GenSummary> {
    let (episodes, planned) = plan(cfg)?;
    let images = dir.join("images");
    fs::create_dir_all(&images).at(&images)?;

    let mut records = Vec::with_capacity(planned.len());
    for chunk in planned.chunks(RENDER_CHUNK) {
        let rendered: Vec<Result<(SampleRecord, [Vec<u8>; 3])>> = chunk.par_iter().map(render).collect();
        for item in rendered {
            let (record, pngs) = item?;
            for (rel, bytes) in record.images.in_order().into_iter().zip(&pngs) {
                let path = dir.join(rel);
                fs::write(&path, bytes).at(&path)?;
            }
            records.push(record);
        }
        log::debug!("rendered {}/{} samples", records.len(), planned.len());
    }
    write_manifest(dir, &mut records)?;

    let ep_path = dir.join(EPISODES_FILE);
    let mut w = BufWriter::new(File::create(&ep_path).at(&ep_path)?);
    for e in &episodes {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n").at(&ep_path)?;
    }
    w.flush().at(&ep_path)?;

    let rc_path = dir.join(RUN_CONFIG_FILE);
    let doc = serde_json::json!({ "run": run_config, "generation": cfg });
    fs::write(&rc_path, serde_json::to_string_pretty(&doc)? + "\n").at(&rc_path)?;

    Ok(GenSummary {
        samples: records.len(),
        episodes,
        dir: dir.to_path_buf(),
    })
}

/// Generates a dataset into `out`, which must be absent or empty. Output is
/// assembled in a sibling `.partial` directory and renamed on success; on
/// failure the partial directory is removed.
pub fn generate_dataset(cfg: &GenConfig, out: &Path, run_config: &serde_json::Value) -> Result<GenSummary> {
    cfg.validate()?;
    if out.exists() {
        let empty = fs::read_dir(out).at(out)?.next().is_none();
        if !empty {
            return Err(Error::Config(format!("{} exists and is not empty", out.display())));
        }
        fs::remove_dir(out).at(out)?;
    }
    let tmp = partial_dir(out);
    if tmp.exists() {
        fs::remove_dir_all(&tmp).at(&tmp)?;
    }
    fs::create_dir_all(&tmp).at(&tmp)?;
    match write_all(cfg, &tmp, run_config) {
        Ok(mut summary) => {
            fs::rename(&tmp, out).at(out)?;
            summary.dir = out.to_path_buf();
            Ok(summary)
        }
        Err(e) => {
            let _ = fs::remove_dir_all(&tmp);
            Err(e)
        }
    }
}
