//! Insertion benchmark: run episodes for every (shape, clearance) cell and
//! aggregate success rate and attempt counts.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::episode::{run_episode, Phase, TaskConfig};
use crate::error::{Error, Result};
use crate::geometry::{ShapeKind, BENCHMARK_CLEARANCES};
use crate::policy::Policy;
use crate::rng::derive_seed;

pub const DEFAULT_TRIALS: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub shape: ShapeKind,
    pub clearance_mm: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Grid {
    /// Square pegs at every benchmark clearance.
    Square,
    /// Every shape at the tightest clearance.
    Shapes,
    /// Every shape at every clearance.
    Full,
}

impl Grid {
    pub fn parse(s: &str) -> Option<Grid> {
        match s {
            "square" => Some(Grid::Square),
            "shapes" => Some(Grid::Shapes),
            "full" => Some(Grid::Full),
            _ => None,
        }
    }

    pub fn cells(self) -> Vec<Cell> {
        let tight = BENCHMARK_CLEARANCES[BENCHMARK_CLEARANCES.len() - 1];
        match self {
            Grid::Square => BENCHMARK_CLEARANCES
                .iter()
                .map(|&c| Cell {
                    shape: ShapeKind::Square,
                    clearance_mm: c,
                })
                .collect(),
            Grid::Shapes => ShapeKind::ALL
                .iter()
                .map(|&shape| Cell {
                    shape,
                    clearance_mm: tight,
                })
                .collect(),
            Grid::Full => ShapeKind::ALL
                .iter()
                .flat_map(|&shape| {
                    BENCHMARK_CLEARANCES.iter().map(move |&c| Cell {
                        shape,
                        clearance_mm: c,
                    })
                })
                .collect(),
        }
    }
}

/// How avg_steps treats failed episodes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepsConvention {
    /// Mean attempts over successful episodes only.
    #[default]
    SuccessOnly,
    /// Mean over every episode; failures count their full attempt budget.
    AllEpisodes,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    pub shape: ShapeKind,
    pub clearance_mm: f64,
    pub trials: usize,
    pub successes: usize,
    /// Trials lost to transport or protocol failures of a remote policy.
    pub errors: usize,
    /// Percent.
    pub success_rate: f64,
    /// `None` when no episode qualifies.
    pub avg_steps: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkTable {
    pub method: String,
    pub seed: u64,
    pub trials: usize,
    pub steps_convention: StepsConvention,
    pub cells: Vec<CellMetrics>,
}

enum Trial {
    Done { success: bool, steps: usize },
    Error,
}

/// Seed of one trial. Independent of the policy, so every method faces the
/// same episodes.
pub fn trial_seed(seed: u64, cell: Cell, trial: usize) -> u64 {
    derive_seed(seed, &[cell.shape.index() as u64, cell.clearance_mm.to_bits(), trial as u64])
}

pub fn insertion_benchmark(
    policy: &dyn Policy,
    cells: &[Cell],
    trials: usize,
    seed: u64,
    convention: StepsConvention,
) -> Result<BenchmarkTable> {
    if trials == 0 {
        return Err(Error::Config("trials must be at least 1".into()));
    }
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..trials).map(move |t| (c, t)))
        .collect();
    let outcomes: Vec<Trial> = jobs
        .par_iter()
        .map(|&(c, t)| {
            let cell = cells[c];
            let task = TaskConfig::new(cell.shape, cell.clearance_mm);
            match run_episode(task, trial_seed(seed, cell, t), policy) {
                Ok(trace) => Ok(Trial::Done {
                    success: trace.phase == Phase::Success,
                    steps: trace.step_count(),
                }),
                Err(Error::Transport(e)) | Err(Error::Protocol(e)) => {
                    log::warn!("{} trial {t}: {e}", cell.shape);
                    Ok(Trial::Error)
                }
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;

    let max_attempts = TaskConfig::new(ShapeKind::Square, 1.0).max_attempts;
    let mut out = Vec::with_capacity(cells.len());
    for (c, cell) in cells.iter().enumerate() {
        let mut successes = 0;
        let mut errors = 0;
        let mut step_sum = 0usize;
        let mut step_n = 0usize;
        for o in &outcomes[c * trials..(c + 1) * trials] {
            match o {
                Trial::Done { success, steps } => {
                    if *success {
                        successes += 1;
                    }
                    if *success || convention == StepsConvention::AllEpisodes {
                        step_sum += steps;
                        step_n += 1;
                    }
                }
                Trial::Error => {
                    errors += 1;
                    if convention == StepsConvention::AllEpisodes {
                        step_sum += max_attempts;
                        step_n += 1;
                    }
                }
            }
        }
        out.push(CellMetrics {
            shape: cell.shape,
            clearance_mm: cell.clearance_mm,
            trials,
            successes,
            errors,
            success_rate: 100.0 * successes as f64 / trials as f64,
            avg_steps: (step_n > 0).then(|| step_sum as f64 / step_n as f64),
        });
    }
    Ok(BenchmarkTable {
        method: policy.name(),
        seed,
        trials,
        steps_convention: convention,
        cells: out,
    })
}
