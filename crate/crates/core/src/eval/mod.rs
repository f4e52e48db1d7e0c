//! Dataset metrics, the insertion benchmark and report rendering.

mod benchmark;
mod metrics;
mod report;

pub use benchmark::{
    insertion_benchmark, trial_seed, BenchmarkTable, Cell, CellMetrics, Grid, StepsConvention,
    DEFAULT_TRIALS,
};
pub use metrics::{
    axis_accuracy, dataset_metrics, goal_convergence_rate, l1_per_axis, DatasetMetrics, Tolerance,
};
pub use report::{plot_series, report, DatasetReport, Format, Metrics};

use rayon::prelude::*;

use crate::dataset::{detokenize_action, Manifest, Split};
use crate::episode::Action;
use crate::error::Result;
use crate::policy::{Example, PolicyModel};

/// Greedy predictions and bin-center labels for every example.
pub fn predict(model: &PolicyModel, examples: &[Example]) -> Result<(Vec<Action>, Vec<Action>)> {
    let preds: Vec<Action> = examples
        .par_iter()
        .map(|ex| model.argmax(&ex.features).map(detokenize_action))
        .collect::<Result<_>>()?;
    let labels = examples.iter().map(|ex| detokenize_action(ex.tokens)).collect();
    Ok((preds, labels))
}

/// Metrics per split present in the manifest, ID first. `examples` must be
/// the manifest's records featurized in order.
pub fn evaluate_dataset(
    model: &PolicyModel,
    manifest: &Manifest,
    examples: &[Example],
    tol: Tolerance,
) -> Result<Vec<DatasetMetrics>> {
    let (preds, labels) = predict(model, examples)?;
    let mut out = Vec::new();
    for split in [Split::Id, Split::Ood] {
        let idx: Vec<usize> = (0..manifest.records.len())
            .filter(|&i| manifest.records[i].split == split)
            .collect();
        if idx.is_empty() {
            continue;
        }
        let p: Vec<Action> = idx.iter().map(|&i| preds[i]).collect();
        let l: Vec<Action> = idx.iter().map(|&i| labels[i]).collect();
        out.push(dataset_metrics(split, &p, &l, tol)?);
    }
    Ok(out)
}
