//! Dataset metrics: goal convergence rate and per-axis L1 error.

use serde::{Deserialize, Serialize};

use crate::dataset::{Split, BIN_WIDTHS};
use crate::episode::Action;
use crate::error::{Error, Result};

/// Per-axis tolerance (mm, mm, deg) under which a prediction counts as
/// correct. The default is half a bin, so correct means same token.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tolerance(pub [f64; 3]);

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance(BIN_WIDTHS.map(|w| w / 2.0))
    }
}

fn check(preds: &[Action], labels: &[Action]) -> Result<()> {
    if preds.len() != labels.len() {
        return Err(Error::LengthMismatch(preds.len(), labels.len()));
    }
    if preds.is_empty() {
        return Err(Error::Config("no predictions to score".into()));
    }
    Ok(())
}

fn correct(p: Action, l: Action, tol: Tolerance) -> [bool; 3] {
    let (p, l) = (p.as_array(), l.as_array());
    [0, 1, 2].map(|a| (p[a] - l[a]).abs() <= tol.0[a])
}

/// Percentage of predictions correct on all three axes at once.
pub fn goal_convergence_rate(preds: &[Action], labels: &[Action], tol: Tolerance) -> Result<f64> {
    check(preds, labels)?;
    let hits = preds
        .iter()
        .zip(labels)
        .filter(|(p, l)| correct(**p, **l, tol).iter().all(|&c| c))
        .count();
    Ok(100.0 * hits as f64 / preds.len() as f64)
}

/// Percentage correct on each axis separately.
pub fn axis_accuracy(preds: &[Action], labels: &[Action], tol: Tolerance) -> Result<[f64; 3]> {
    check(preds, labels)?;
    let mut hits = [0usize; 3];
    for (p, l) in preds.iter().zip(labels) {
        for (h, c) in hits.iter_mut().zip(correct(*p, *l, tol)) {
            *h += usize::from(c);
        }
    }
    Ok(hits.map(|h| 100.0 * h as f64 / preds.len() as f64))
}

/// Mean absolute error per axis, summed in sample order.
pub fn l1_per_axis(preds: &[Action], labels: &[Action]) -> Result<[f64; 3]> {
    check(preds, labels)?;
    let mut sum = [0.0; 3];
    for (p, l) in preds.iter().zip(labels) {
        let (p, l) = (p.as_array(), l.as_array());
        for a in 0..3 {
            sum[a] += (p[a] - l[a]).abs();
        }
    }
    Ok(sum.map(|s| s / preds.len() as f64))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetrics {
    pub split: Split,
    pub samples: usize,
    pub gcr: f64,
    pub l1_x: f64,
    pub l1_y: f64,
    pub l1_rz: f64,
    pub axis_accuracy: [f64; 3],
}

/// All metrics for one split. Panics if the conjunction bound
/// `gcr <= min(axis accuracy)` is ever violated.
pub fn dataset_metrics(split: Split, preds: &[Action], labels: &[Action], tol: Tolerance) -> Result<DatasetMetrics> {
    let gcr = goal_convergence_rate(preds, labels, tol)?;
    let acc = axis_accuracy(preds, labels, tol)?;
    let l1 = l1_per_axis(preds, labels)?;
    assert!(
        acc.iter().all(|&a| gcr <= a),
        "goal convergence {gcr} exceeds an axis accuracy {acc:?}"
    );
    Ok(DatasetMetrics {
        split,
        samples: preds.len(),
        gcr,
        l1_x: l1[0],
        l1_y: l1[1],
        l1_rz: l1[2],
        axis_accuracy: acc,
    })
}
