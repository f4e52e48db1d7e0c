//! Stochastic decoding with temperature and top-k truncation.

use serde::{Deserialize, Serialize};

use super::model::{argmax_index, PolicyModel};
use crate::dataset::{detokenize_action, ActionTokens};
use crate::episode::Action;
use crate::error::{Error, Result};
use crate::rng::Stream;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub temperature: f64,
    pub top_k: Option<usize>,
    pub seed: u64,
}

impl SamplingConfig {
    /// The two generation settings used to build preference candidates:
    /// a conservative one and an exploratory one.
    pub const GENERATION: [SamplingConfig; 2] = [
        SamplingConfig {
            temperature: 0.7,
            top_k: Some(5),
            seed: 0,
        },
        SamplingConfig {
            temperature: 1.2,
            top_k: None,
            seed: 1,
        },
    ];

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config("temperature must be positive".into()));
        }
        if self.top_k == Some(0) {
            return Err(Error::Config("top_k must be at least 1".into()));
        }
        Ok(())
    }
}

/// Draws one index from `softmax(z / temperature)` restricted to the `top_k`
/// largest logits (ties toward lower index).
pub fn sample_categorical(z: &[f64], temperature: f64, top_k: Option<usize>, s: &mut Stream) -> usize {
    let mut keep = vec![true; z.len()];
    if let Some(k) = top_k {
        if k < z.len() {
            let mut order: Vec<usize> = (0..z.len()).collect();
            order.sort_by(|&a, &b| z[b].total_cmp(&z[a]).then(a.cmp(&b)));
            keep.iter_mut().for_each(|v| *v = false);
            for &i in &order[..k] {
                keep[i] = true;
            }
        }
    }
    let best = argmax_index(z);
    let m = z[best] / temperature;
    let w: Vec<f64> = z
        .iter()
        .zip(&keep)
        .map(|(&v, &k)| if k { (v / temperature - m).exp() } else { 0.0 })
        .collect();
    let total: f64 = w.iter().sum();
    let u = s.unit() * total;
    let mut acc = 0.0;
    let mut last = best;
    for (i, &wi) in w.iter().enumerate() {
        if wi == 0.0 {
            continue;
        }
        acc += wi;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

pub fn sample_tokens(model: &PolicyModel, x: &[f32], cfg: &SamplingConfig, s: &mut Stream) -> Result<ActionTokens> {
    cfg.validate()?;
    model.decode(x, |_, z| sample_categorical(z, cfg.temperature, cfg.top_k, s))
}

/// Samples an action with a stream seeded from `cfg.seed`.
pub fn sample_action(model: &PolicyModel, x: &[f32], cfg: &SamplingConfig) -> Result<Action> {
    let mut s = Stream::new(cfg.seed, "sample-action");
    Ok(detokenize_action(sample_tokens(model, x, cfg, &mut s)?))
}

/// Empirical entropy (nats) of a token histogram.
pub fn empirical_entropy<I: IntoIterator<Item = usize>>(tokens: I, vocab: usize) -> f64 {
    let mut counts = vec![0usize; vocab];
    let mut n = 0usize;
    for t in tokens {
        counts[t] += 1;
        n += 1;
    }
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n as f64;
            -p * p.ln()
        })
        .sum()
}
