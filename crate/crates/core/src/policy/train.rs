//! Next-token-prediction loss over the three action tokens, and the
//! supervised training loop.

use serde::{Deserialize, Serialize};

use super::model::{InputNorm, PolicyModel};
use crate::dataset::ActionTokens;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, Stream};

/// One training example: frozen features and the label tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub features: Vec<f32>,
    pub tokens: ActionTokens,
}

/// Mean over the batch of `-sum_n log P(t_n | t_<n)` and its exact
/// gradient.
pub fn ntp_loss(model: &PolicyModel, batch: &[&Example]) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut grad = vec![0.0; model.param_count()];
    let mut loss = 0.0;
    for ex in batch {
        let cache = model.forward_cache(&ex.features, ex.tokens)?;
        let t = ex.tokens.as_array();
        let mut dz: [Vec<f64>; 3] = Default::default();
        for axis in 0..3 {
            loss -= cache.logp[axis][t[axis]];
            dz[axis] = cache.logp[axis].iter().map(|lp| scale * lp.exp()).collect();
            dz[axis][t[axis]] -= scale;
        }
        model.backward(&cache, &dz, &mut grad);
    }
    Ok((loss * scale, grad))
}

/// Loss only, averaged over every example.
pub fn mean_ntp_loss(model: &PolicyModel, data: &[Example]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Config("empty dataset".into()));
    }
    let mut total = 0.0;
    for ex in data {
        total -= model.sequence_logprob(&ex.features, ex.tokens)?;
    }
    Ok(total / data.len() as f64)
}

/// Adam with optional decoupled weight decay. Moments are kept in `f64`;
/// parameters are rounded back to `f32` after every step.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(lr: f64, n: usize) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, theta: &mut [f32], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..theta.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            let p = f64::from(theta[i]);
            let p = p - self.lr * (mhat / (vhat.sqrt() + self.eps) + self.weight_decay * p);
            theta[i] = p as f32;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SftConfig {
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    pub weight_decay: f64,
}

impl Default for SftConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            batch: 64,
            epochs: 10,
            seed: 0,
            weight_decay: 0.0,
        }
    }
}

impl SftConfig {
    /// Schedule tuned for the tiny policy on a few thousand samples. The
    /// default schedule underfits at this scale.
    pub fn desk() -> Self {
        Self {
            lr: 2e-3,
            epochs: 40,
            ..Self::default()
        }
    }
}

/// Standardizer fit on the features of `examples`.
pub fn fit_input_norm(examples: &[Example]) -> Result<InputNorm> {
    let rows: Vec<&[f32]> = examples.iter().map(|e| e.features.as_slice()).collect();
    InputNorm::fit(&rows)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// Mean loss over the training set before the first step.
    pub initial_loss: f64,
    /// Mean loss over the training set after the last step.
    pub final_loss: f64,
    /// Batch loss at every step.
    pub step_losses: Vec<f64>,
    /// Mean batch loss per epoch.
    pub epoch_losses: Vec<f64>,
}

/// Shuffled example order for one epoch.
pub(crate) fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut s = Stream::new(derive_seed(seed, &[epoch as u64]), "batches");
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        idx.swap(i, s.below(i + 1));
    }
    idx
}

/// Trains in place with Adam over shuffled minibatches. Single-threaded
/// and deterministic given the seed.
pub fn sft_train(model: &mut PolicyModel, data: &[Example], cfg: &SftConfig) -> Result<TrainLog> {
    if cfg.batch == 0 || !(cfg.lr > 0.0) {
        return Err(Error::Config("batch and lr must be positive".into()));
    }
    if data.len() < cfg.batch {
        return Err(Error::Config(format!(
            "{} examples is fewer than one batch of {}",
            data.len(),
            cfg.batch
        )));
    }
    let mut log = TrainLog {
        initial_loss: mean_ntp_loss(model, data)?,
        ..TrainLog::default()
    };
    let mut opt = Adam::new(cfg.lr, model.param_count());
    opt.weight_decay = cfg.weight_decay;
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let order = epoch_order(data.len(), cfg.seed, epoch);
        let mut sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &data[i]).collect();
            let (loss, grad) = ntp_loss(model, &batch)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence { step, loss });
            }
            opt.step(&mut model.theta, &grad);
            log.step_losses.push(loss);
            sum += loss;
            batches += 1;
            step += 1;
        }
        log.epoch_losses.push(sum / batches as f64);
        log::info!("sft epoch {} loss {:.4}", epoch + 1, sum / batches as f64);
    }
    log.final_loss = mean_ntp_loss(model, data)?;
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::model::Architecture;

    fn arch() -> Architecture {
        Architecture {
            input_dim: 10,
            hidden: 8,
            layers: 2,
            embed: 4,
            ..Architecture::default()
        }
    }

    fn data(n: usize) -> Vec<Example> {
        let mut s = Stream::new(5, "data");
        (0..n)
            .map(|i| {
                let features: Vec<f32> = (0..10).map(|_| s.uniform(-0.5, 0.5) as f32).collect();
                let x = (features[0] * 40.0 + 25.0) as usize;
                let tokens = ActionTokens::new([x, 50 - x, i % 21]).unwrap();
                Example { features, tokens }
            })
            .collect()
    }

    #[test]
    fn uniform_model_loss() {
        let m = PolicyModel::zeros(arch()).unwrap();
        let d = data(4);
        let batch: Vec<&Example> = d.iter().collect();
        let (loss, _) = ntp_loss(&m, &batch).unwrap();
        let expect = 2.0 * 51f64.ln() + 21f64.ln();
        assert!((loss - expect).abs() < 1e-9);
        assert!((expect - 10.908174).abs() < 1e-6);
    }

    #[test]
    fn zero_epochs_keep_theta() {
        let mut m = PolicyModel::init(arch(), 1).unwrap();
        let before = m.theta.clone();
        let cfg = SftConfig {
            epochs: 0,
            batch: 8,
            ..SftConfig::default()
        };
        sft_train(&mut m, &data(32), &cfg).unwrap();
        assert_eq!(m.theta, before);
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let cfg = SftConfig {
            lr: 1e-2,
            batch: 16,
            epochs: 20,
            seed: 3,
            weight_decay: 0.0,
        };
        let d = data(128);
        let mut a = PolicyModel::init(arch(), 1).unwrap();
        let log = sft_train(&mut a, &d, &cfg).unwrap();
        assert!(log.final_loss < 0.7 * log.initial_loss, "{log:?}");
        let mut b = PolicyModel::init(arch(), 1).unwrap();
        sft_train(&mut b, &d, &cfg).unwrap();
        assert_eq!(a.theta_digest(), b.theta_digest());
    }

    #[test]
    fn batch_larger_than_data_is_rejected() {
        let mut m = PolicyModel::init(arch(), 1).unwrap();
        let cfg = SftConfig {
            batch: 64,
            ..SftConfig::default()
        };
        assert!(sft_train(&mut m, &data(10), &cfg).is_err());
    }

    #[test]
    fn divergence_reports_step() {
        let mut m = PolicyModel::init(arch(), 1).unwrap();
        m.theta[0] = f32::NAN;
        let cfg = SftConfig {
            batch: 8,
            epochs: 1,
            ..SftConfig::default()
        };
        match sft_train(&mut m, &data(16), &cfg) {
            Err(Error::Divergence { step: 0, .. }) => {}
            other => panic!("expected divergence at step 0, got {other:?}"),
        }
    }
}
