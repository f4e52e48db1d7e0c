//! Direct preference optimization against a frozen reference model.
//!
//! ```text
//! m    = (log pi(yc|x) - log ref(yc|x)) - (log pi(yr|x) - log ref(yr|x))
//! loss = -log sigmoid(beta * m)
//! ```

use serde::{Deserialize, Serialize};

use crate::dataset::ActionTokens;
use crate::error::{Error, Result};
use crate::policy::{epoch_order, Adam, Cache, PolicyModel};

/// One preference pair with its reference log-probabilities fixed at
/// construction.
#[derive(Clone, Debug, PartialEq)]
pub struct PrefExample {
    pub id: String,
    pub features: Vec<f32>,
    pub chosen: ActionTokens,
    pub rejected: ActionTokens,
    pub ref_chosen: f64,
    pub ref_rejected: f64,
}

impl PrefExample {
    pub fn new(
        reference: &PolicyModel,
        id: &str,
        features: Vec<f32>,
        chosen: ActionTokens,
        rejected: ActionTokens,
    ) -> Result<Self> {
        let ref_chosen = reference.sequence_logprob(&features, chosen)?;
        let ref_rejected = reference.sequence_logprob(&features, rejected)?;
        Ok(Self {
            id: id.to_string(),
            features,
            chosen,
            rejected,
            ref_chosen,
            ref_rejected,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DpoConfig {
    pub beta: f64,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for DpoConfig {
    fn default() -> Self {
        Self {
            beta: 0.1,
            lr: 1e-4,
            batch: 32,
            epochs: 3,
            seed: 0,
        }
    }
}

impl DpoConfig {
    /// The learning rate used for billion-parameter models; far too small
    /// for the tiny policy.
    pub fn original() -> Self {
        Self {
            lr: 5e-6,
            ..Self::default()
        }
    }

    /// Schedule tuned for the tiny policy on about a thousand pairs.
    pub fn desk() -> Self {
        Self {
            beta: 0.5,
            lr: 3e-4,
            epochs: 10,
            ..Self::default()
        }
    }
}

/// `-log sigmoid(z)` without overflow.
pub fn neg_log_sigmoid(z: f64) -> f64 {
    (-z).max(0.0) + (-z.abs()).exp().ln_1p()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn seq_logprob(c: &Cache, t: ActionTokens) -> f64 {
    (0..3).map(|a| c.logp[a][t.get(a)]).sum()
}

/// The inner log-ratio margin `m` for one pair.
pub fn margin(model: &PolicyModel, ex: &PrefExample) -> Result<f64> {
    let c = model.sequence_logprob(&ex.features, ex.chosen)?;
    let r = model.sequence_logprob(&ex.features, ex.rejected)?;
    Ok((c - ex.ref_chosen) - (r - ex.ref_rejected))
}

/// Upstream gradient on the logits for `w * d log P(t) / d logits`.
fn seq_grad(c: &Cache, t: ActionTokens, w: f64) -> [Vec<f64>; 3] {
    [0, 1, 2].map(|a| {
        let mut dz: Vec<f64> = c.logp[a].iter().map(|lp| -w * lp.exp()).collect();
        dz[t.get(a)] += w;
        dz
    })
}

/// Mean DPO loss over the batch and its exact gradient with respect to the
/// policy parameters.
pub fn dpo_loss(model: &PolicyModel, batch: &[&PrefExample], beta: f64) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    if !(beta > 0.0) {
        return Err(Error::Config("beta must be positive".into()));
    }
    let n = batch.len() as f64;
    let mut grad = vec![0.0; model.param_count()];
    let mut loss = 0.0;
    for ex in batch {
        let cc = model.forward_cache(&ex.features, ex.chosen)?;
        let cr = model.forward_cache(&ex.features, ex.rejected)?;
        let m = (seq_logprob(&cc, ex.chosen) - ex.ref_chosen) - (seq_logprob(&cr, ex.rejected) - ex.ref_rejected);
        let l = neg_log_sigmoid(beta * m);
        if !l.is_finite() {
            return Err(Error::NonFinite {
                what: "dpo loss",
                at: ex.id.clone(),
            });
        }
        loss += l / n;
        // d loss / d m
        let g = -beta * sigmoid(-beta * m) / n;
        model.backward(&cc, &seq_grad(&cc, ex.chosen, g), &mut grad);
        model.backward(&cr, &seq_grad(&cr, ex.rejected, -g), &mut grad);
    }
    Ok((loss, grad))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DpoLog {
    pub initial_loss: f64,
    pub final_loss: f64,
    pub initial_accuracy: f64,
    pub step_losses: Vec<f64>,
    /// Mean loss over all pairs at the end of each epoch.
    pub epoch_losses: Vec<f64>,
    /// Fraction of pairs with a positive margin at the end of each epoch.
    pub accuracy: Vec<f64>,
}

/// Mean loss and preference accuracy (fraction with `beta * m > 0`).
pub fn evaluate_pairs(model: &PolicyModel, pairs: &[PrefExample], beta: f64) -> Result<(f64, f64)> {
    if pairs.is_empty() {
        return Err(Error::Config("no preference pairs".into()));
    }
    let mut loss = 0.0;
    let mut wins = 0usize;
    for ex in pairs {
        let m = margin(model, ex)?;
        loss += neg_log_sigmoid(beta * m);
        wins += usize::from(beta * m > 0.0);
    }
    let n = pairs.len() as f64;
    Ok((loss / n, wins as f64 / n))
}

/// Trains in place. The reference enters only through the precomputed
/// log-probabilities in `pairs`.
pub fn dpo_train(model: &mut PolicyModel, pairs: &[PrefExample], cfg: &DpoConfig) -> Result<DpoLog> {
    if cfg.batch == 0 || !(cfg.lr > 0.0) {
        return Err(Error::Config("batch and lr must be positive".into()));
    }
    let (initial_loss, initial_accuracy) = evaluate_pairs(model, pairs, cfg.beta)?;
    let mut log = DpoLog {
        initial_loss,
        final_loss: initial_loss,
        initial_accuracy,
        ..DpoLog::default()
    };
    let mut opt = Adam::new(cfg.lr, model.param_count());
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        for chunk in epoch_order(pairs.len(), cfg.seed, epoch).chunks(cfg.batch) {
            let batch: Vec<&PrefExample> = chunk.iter().map(|&i| &pairs[i]).collect();
            let (loss, grad) = dpo_loss(model, &batch, cfg.beta)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence { step, loss });
            }
            opt.step(&mut model.theta, &grad);
            log.step_losses.push(loss);
            step += 1;
        }
        let (loss, acc) = evaluate_pairs(model, pairs, cfg.beta)?;
        log.epoch_losses.push(loss);
        log.accuracy.push(acc);
        log.final_loss = loss;
        log::info!("dpo epoch {} loss {loss:.4} accuracy {acc:.3}", epoch + 1);
    }
    Ok(log)
}
