//! The insertion episode: sample a misalignment, descend, collect an
//! observation on collision, apply a corrective action, repeat until the peg
//! goes in or the attempt budget runs out.
//!
//! Actions are cumulative corrections. The misalignment persists across
//! attempts and is kept inside a guard box of `range + clearance` per axis.

use serde::{Deserialize, Serialize};

use crate::dataset::instruction_text;
use crate::error::{Error, Result};
use crate::geometry::{fits_inside, make_polygon, Polygon, Pose, Shape, ShapeKind};
use crate::policy::{ActContext, Policy};
use crate::randomization::{sample_all, Randomization};
use crate::rng::{derive_seed, Stream};
use crate::sensors::{idle_montage, render_observation, render_vision, Observation};

pub const DEFAULT_MAX_ATTEMPTS: usize = 15;
pub const DEFAULT_PEG_SIZE_MM: f64 = 10.0;
pub const MISALIGN_RANGE_XY: f64 = 2.5;
pub const MISALIGN_RANGE_RZ: f64 = 5.0;

/// Per-axis action bounds (mm, mm, deg).
pub const ACTION_BOUNDS: [f64; 3] = [2.5, 2.5, 5.0];

const CAPTURE_TAG: u64 = 0xCA97;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskConfig {
    pub peg: Shape,
    pub clearance_mm: f64,
    pub max_attempts: usize,
    pub misalign_range_xy: f64,
    pub misalign_range_rz: f64,
}

impl TaskConfig {
    pub fn new(kind: ShapeKind, clearance_mm: f64) -> Self {
        Self {
            peg: Shape {
                kind,
                size_mm: DEFAULT_PEG_SIZE_MM,
            },
            clearance_mm,
            max_attempts: DEFAULT_MAX_ATTEMPTS,
            misalign_range_xy: MISALIGN_RANGE_XY,
            misalign_range_rz: MISALIGN_RANGE_RZ,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.max_attempts < 1 {
            return bad("max_attempts must be at least 1");
        }
        if !(self.clearance_mm > 0.0 && self.clearance_mm.is_finite()) {
            return bad("clearance must be positive");
        }
        if !(self.misalign_range_xy > 0.0 && self.misalign_range_rz > 0.0) {
            return bad("misalignment ranges must be positive");
        }
        Shape::new(self.peg.kind, self.peg.size_mm)?;
        Ok(())
    }
}

/// A corrective motion in millimetres and degrees.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Action {
    #[serde(rename = "x")]
    pub dx: f64,
    #[serde(rename = "y")]
    pub dy: f64,
    #[serde(rename = "rz")]
    pub drz: f64,
}

impl Action {
    pub const fn new(dx: f64, dy: f64, drz: f64) -> Self {
        Self { dx, dy, drz }
    }

    pub fn clamped(self) -> Self {
        Self {
            dx: self.dx.clamp(-ACTION_BOUNDS[0], ACTION_BOUNDS[0]),
            dy: self.dy.clamp(-ACTION_BOUNDS[1], ACTION_BOUNDS[1]),
            drz: self.drz.clamp(-ACTION_BOUNDS[2], ACTION_BOUNDS[2]),
        }
    }

    pub fn as_array(self) -> [f64; 3] {
        [self.dx, self.dy, self.drz]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn is_finite(&self) -> bool {
        self.dx.is_finite() && self.dy.is_finite() && self.drz.is_finite()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    InProgress,
    Success,
    Failure,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepResult {
    Inserted,
    Collided,
    Exhausted,
}

/// Result of one descent. Carries an observation only on a collision that
/// leaves attempts remaining.
#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub result: StepResult,
    pub observation: Option<Observation>,
}

#[derive(Clone, Debug)]
pub struct EpisodeState {
    pub config: TaskConfig,
    pub seed: u64,
    pub misalignment: Pose,
    pub attempt: usize,
    pub phase: Phase,
    pub randomization: Randomization,
    hole: Polygon,
    peg: Polygon,
}

/// Starts an episode. Identical `(config, seed)` yields an identical state.
pub fn reset(config: TaskConfig, seed: u64) -> Result<EpisodeState> {
    config.validate()?;
    let mut s = Stream::new(seed, "misalignment");
    let misalignment = Pose::new(
        s.uniform(-config.misalign_range_xy, config.misalign_range_xy),
        s.uniform(-config.misalign_range_xy, config.misalign_range_xy),
        s.uniform(-config.misalign_range_rz, config.misalign_range_rz),
    );
    Ok(EpisodeState {
        config,
        seed,
        misalignment,
        attempt: 0,
        phase: Phase::InProgress,
        randomization: sample_all(seed),
        hole: make_polygon(config.peg.hole(config.clearance_mm)),
        peg: make_polygon(config.peg),
    })
}

impl EpisodeState {
    /// Same episode, but starting from the given misalignment.
    pub fn with_misalignment(mut self, misalignment: Pose) -> Self {
        self.misalignment = misalignment;
        self
    }

    pub fn is_terminal(&self) -> bool {
        self.phase != Phase::InProgress
    }

    /// True when a descent at the current pose would insert.
    pub fn is_aligned(&self) -> bool {
        fits_inside(&self.hole, &self.peg, self.misalignment)
    }

    /// The correction that exactly cancels the misalignment, clamped.
    pub fn ground_truth_action(&self) -> Result<Action> {
        if self.is_terminal() {
            return Err(Error::EpisodeTerminated);
        }
        Ok(ground_truth_for(self.misalignment))
    }

    fn capture_seed(&self) -> u64 {
        derive_seed(self.seed, &[CAPTURE_TAG, self.attempt as u64])
    }

    /// Observation at the current pose. With contact this matches the
    /// observation returned by the step that led here; without contact the
    /// tactile pads are idle.
    pub fn observe(&self) -> Result<Observation> {
        let shape = self.config.peg;
        let c = self.config.clearance_mm;
        if self.is_aligned() {
            let mut vr = self.randomization.vision.clone();
            vr.noise_seed = derive_seed(vr.noise_seed, &[self.capture_seed()]);
            return Ok(Observation {
                tactile_left: idle_montage(),
                tactile_right: idle_montage(),
                vision: render_vision(self.misalignment, shape, c, &vr),
            });
        }
        render_observation(self.misalignment, shape, c, &self.randomization, self.capture_seed())
    }

    fn guard(&self, p: Pose) -> Pose {
        let gxy = self.config.misalign_range_xy + self.config.clearance_mm;
        let grz = self.config.misalign_range_rz + self.config.clearance_mm;
        Pose::new(p.x.clamp(-gxy, gxy), p.y.clamp(-gxy, gxy), p.rz.clamp(-grz, grz))
    }

    /// Applies a correction and descends once, without rendering.
    pub fn advance(&mut self, action: Action) -> Result<StepResult> {
        if self.is_terminal() {
            return Err(Error::EpisodeTerminated);
        }
        if !action.is_finite() {
            return Err(Error::NonFinite {
                what: "action",
                at: format!("attempt {}", self.attempt + 1),
            });
        }
        let a = action.clamped();
        self.misalignment = self.guard(Pose::new(
            self.misalignment.x + a.dx,
            self.misalignment.y + a.dy,
            self.misalignment.rz + a.drz,
        ));
        self.attempt += 1;
        Ok(if self.is_aligned() {
            self.phase = Phase::Success;
            StepResult::Inserted
        } else if self.attempt >= self.config.max_attempts {
            self.phase = Phase::Failure;
            StepResult::Exhausted
        } else {
            StepResult::Collided
        })
    }

    /// Applies a correction, descends, and renders the contact observation
    /// if the attempt collided.
    pub fn step(&mut self, action: Action) -> Result<StepOutcome> {
        let result = self.advance(action)?;
        let observation = match result {
            StepResult::Collided => Some(self.observe()?),
            _ => None,
        };
        Ok(StepOutcome {
            result,
            observation,
        })
    }
}

pub fn ground_truth_for(misalignment: Pose) -> Action {
    Action::new(-misalignment.x, -misalignment.y, -misalignment.rz).clamped()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub attempt: usize,
    pub misalignment_before: Pose,
    pub action: Action,
    pub result: StepResult,
    pub misalignment_after: Pose,
    /// Digest of the vision image the policy acted on.
    pub observation_digest: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub config: TaskConfig,
    pub seed: u64,
    pub initial_misalignment: Pose,
    pub steps: Vec<TraceStep>,
    pub phase: Phase,
}

impl EpisodeTrace {
    pub fn step_count(&self) -> usize {
        self.steps.len()
    }

    pub fn actions(&self) -> Vec<Action> {
        self.steps.iter().map(|s| s.action).collect()
    }
}

/// Runs one episode with `policy`. The policy sees an observation before
/// every descent, starting with the approach view at the sampled pose.
pub fn run_episode(config: TaskConfig, seed: u64, policy: &dyn Policy) -> Result<EpisodeTrace> {
    let mut state = reset(config, seed)?;
    let initial = state.misalignment;
    let instruction = instruction_text(config.peg.kind);
    let mut observation = state.observe()?;
    let mut steps = Vec::new();
    while !state.is_terminal() {
        let before = state.misalignment;
        let ctx = ActContext {
            observation: &observation,
            shape: config.peg.kind,
            instruction: &instruction,
            episode_seed: seed,
            attempt: state.attempt,
            ground_truth: Some(ground_truth_for(before)),
        };
        let action = policy.act(&ctx)?;
        let outcome = state.step(action)?;
        steps.push(TraceStep {
            attempt: state.attempt,
            misalignment_before: before,
            action,
            result: outcome.result,
            misalignment_after: state.misalignment,
            observation_digest: observation.vision.digest(),
        });
        if let Some(obs) = outcome.observation {
            observation = obs;
        }
    }
    Ok(EpisodeTrace {
        config,
        seed,
        initial_misalignment: initial,
        steps,
        phase: state.phase,
    })
}

/// Re-executes recorded actions from a fresh reset.
pub fn replay(config: TaskConfig, seed: u64, actions: &[Action]) -> Result<Vec<StepResult>> {
    let mut state = reset(config, seed)?;
    actions.iter().map(|&a| state.advance(a)).collect()
}
