//! The token-sequence policy: a tanh MLP trunk over frozen image features
//! and three autoregressive categorical heads.
//!
//! ```text
//! h      = trunk(features)
//! p(x)   = softmax(Wx h + bx)
//! p(y|x) = softmax(Wy [h; Ex[x]] + by)
//! p(r|xy)= softmax(Wr [h; Ex[x]; Ey[y]] + br)
//! ```
//!
//! Parameters are stored as `f32`; all arithmetic runs in `f64`.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::features::{FeatureOrder, FEATURE_DIM};
use crate::dataset::{ActionTokens, VOCAB_SIZES};
use crate::error::{Error, Result};
use crate::rng::Stream;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub embed: usize,
    pub vocab: [usize; 3],
    pub feature_order: FeatureOrder,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            input_dim: FEATURE_DIM,
            hidden: 64,
            layers: 2,
            embed: 8,
            vocab: VOCAB_SIZES,
            feature_order: FeatureOrder::VisionLast,
        }
    }
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden == 0 || self.layers == 0 || self.embed == 0 {
            return Err(Error::Config("architecture dimensions must be positive".into()));
        }
        if self.vocab != VOCAB_SIZES {
            return Err(Error::Config(format!(
                "vocabulary {:?} does not match the action tokenizer {:?}",
                self.vocab, VOCAB_SIZES
            )));
        }
        Ok(())
    }

    fn layout(&self) -> Layout {
        let mut off = 0;
        let mut take = |n: usize| {
            let o = off;
            off += n;
            o
        };
        let h = self.hidden;
        let trunk = (0..self.layers)
            .map(|l| {
                let fan_in = if l == 0 { self.input_dim } else { h };
                Dense {
                    w: take(h * fan_in),
                    b: take(h),
                    fan_in,
                    fan_out: h,
                }
            })
            .collect();
        let mut heads = [Dense::default(); 3];
        let mut emb = [0; 2];
        for axis in 0..3 {
            let fan_in = h + axis * self.embed;
            heads[axis] = Dense {
                w: take(self.vocab[axis] * fan_in),
                b: take(self.vocab[axis]),
                fan_in,
                fan_out: self.vocab[axis],
            };
            if axis < 2 {
                emb[axis] = take(self.vocab[axis] * self.embed);
            }
        }
        Layout {
            trunk,
            heads,
            emb,
            total: off,
        }
    }

    pub fn param_count(&self) -> usize {
        self.layout().total
    }
}

#[derive(Clone, Copy, Debug, Default)]
struct Dense {
    w: usize,
    b: usize,
    fan_in: usize,
    fan_out: usize,
}

#[derive(Clone, Debug)]
struct Layout {
    trunk: Vec<Dense>,
    heads: [Dense; 3],
    emb: [usize; 2],
    total: usize,
}

/// Per-axis log-probability tables.
pub type LogProbTables = [Vec<f64>; 3];

/// Frozen per-feature standardization applied before the trunk:
/// `(x - shift) * scale`.
#[derive(Clone, Debug, PartialEq)]
pub struct InputNorm {
    pub shift: Vec<f32>,
    pub scale: Vec<f32>,
}

impl InputNorm {
    /// Added to every standard deviation so near-constant pixels are not
    /// blown up into noise.
    pub const STD_FLOOR: f64 = 0.05;

    /// Mean and floored standard deviation of each feature.
    pub fn fit(rows: &[&[f32]]) -> Result<Self> {
        let d = rows.first().map(|r| r.len()).ok_or_else(|| Error::Config("no rows to fit".into()))?;
        if let Some(r) = rows.iter().find(|r| r.len() != d) {
            return Err(Error::FeatureShape {
                expected: d,
                got: r.len(),
            });
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0f64; d];
        for r in rows {
            for (m, &v) in mean.iter_mut().zip(r.iter()) {
                *m += f64::from(v);
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0f64; d];
        for r in rows {
            for ((s, &v), m) in var.iter_mut().zip(r.iter()).zip(&mean) {
                *s += (f64::from(v) - m).powi(2);
            }
        }
        Ok(Self {
            shift: mean.iter().map(|&m| m as f32).collect(),
            scale: var
                .iter()
                .map(|&s| (1.0 / ((s / n).sqrt() + Self::STD_FLOOR)) as f32)
                .collect(),
        })
    }

    pub fn identity(d: usize) -> Self {
        Self {
            shift: vec![0.0; d],
            scale: vec![1.0; d],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyModel {
    pub arch: Architecture,
    pub theta: Vec<f32>,
    /// Not trained; fit once on the training features.
    pub norm: Option<InputNorm>,
}

/// Activations kept for the backward pass.
#[derive(Clone, Debug)]
pub(crate) struct Cache {
    acts: Vec<Vec<f64>>,
    tokens: [usize; 3],
    pub(crate) logp: LogProbTables,
}

pub fn log_softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = z.iter().map(|&v| (v - m).exp()).sum();
    let lse = m + s.ln();
    z.iter().map(|&v| v - lse).collect()
}

fn normal_fill(theta: &mut [f32], s: &mut Stream, std: f64) {
    for v in theta {
        *v = (std * s.normal()) as f32;
    }
}

impl PolicyModel {
    /// All parameters zero: every table is uniform.
    pub fn zeros(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        let n = arch.param_count();
        Ok(Self {
            arch,
            theta: vec![0.0; n],
            norm: None,
        })
    }

    /// Scaled-normal trunk and embeddings, zero heads. Starts uniform.
    pub fn init(arch: Architecture, seed: u64) -> Result<Self> {
        let mut m = Self::zeros(arch)?;
        let lay = m.arch.layout();
        let mut s = Stream::new(seed, "policy-init");
        for d in &lay.trunk {
            let std = (1.0 / d.fan_in as f64).sqrt();
            normal_fill(&mut m.theta[d.w..d.w + d.fan_in * d.fan_out], &mut s, std);
        }
        for axis in 0..2 {
            let n = m.arch.vocab[axis] * m.arch.embed;
            normal_fill(&mut m.theta[lay.emb[axis]..lay.emb[axis] + n], &mut s, 0.5);
        }
        Ok(m)
    }

    /// Every parameter drawn from `N(0, std^2)`. For tests and probes.
    pub fn random(arch: Architecture, seed: u64, std: f64) -> Result<Self> {
        let mut m = Self::zeros(arch)?;
        normal_fill(&mut m.theta, &mut Stream::new(seed, "policy-random"), std);
        Ok(m)
    }

    pub fn param_count(&self) -> usize {
        self.theta.len()
    }

    /// SHA-256 over the little-endian parameter bytes.
    pub fn theta_digest(&self) -> String {
        let mut h = Sha256::new();
        for v in &self.theta {
            h.update(v.to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    fn p(&self, i: usize) -> f64 {
        f64::from(self.theta[i])
    }

    /// Installs a standardizer; its length must match the input width.
    pub fn with_norm(mut self, norm: InputNorm) -> Result<Self> {
        for len in [norm.shift.len(), norm.scale.len()] {
            if len != self.arch.input_dim {
                return Err(Error::FeatureShape {
                    expected: self.arch.input_dim,
                    got: len,
                });
            }
        }
        self.norm = Some(norm);
        Ok(self)
    }

    fn check_input(&self, x: &[f32]) -> Result<()> {
        if x.len() != self.arch.input_dim {
            return Err(Error::FeatureShape {
                expected: self.arch.input_dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    fn dense(&self, d: &Dense, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for i in 0..d.fan_out {
            let row = &self.theta[d.w + i * d.fan_in..d.w + (i + 1) * d.fan_in];
            let mut acc = self.p(d.b + i);
            for (w, x) in row.iter().zip(input) {
                acc += f64::from(*w) * x;
            }
            out.push(acc);
        }
    }

    fn trunk(&self, lay: &Layout, x: &[f32]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(lay.trunk.len() + 1);
        acts.push(match &self.norm {
            Some(n) => x
                .iter()
                .zip(&n.shift)
                .zip(&n.scale)
                .map(|((&v, &m), &k)| (f64::from(v) - f64::from(m)) * f64::from(k))
                .collect(),
            None => x.iter().map(|&v| f64::from(v)).collect::<Vec<f64>>(),
        });
        for d in &lay.trunk {
            let mut z = Vec::with_capacity(d.fan_out);
            self.dense(d, acts.last().expect("input pushed"), &mut z);
            z.iter_mut().for_each(|v| *v = v.tanh());
            acts.push(z);
        }
        acts
    }

    fn head_input(&self, lay: &Layout, h: &[f64], axis: usize, prefix: &[usize]) -> Vec<f64> {
        let e = self.arch.embed;
        let mut u = Vec::with_capacity(h.len() + axis * e);
        u.extend_from_slice(h);
        for (k, &tok) in prefix.iter().enumerate().take(axis) {
            let o = lay.emb[k] + tok * e;
            u.extend((o..o + e).map(|i| self.p(i)));
        }
        u
    }

    fn head_logits(&self, lay: &Layout, h: &[f64], axis: usize, prefix: &[usize]) -> Vec<f64> {
        let u = self.head_input(lay, h, axis, prefix);
        let mut z = Vec::new();
        self.dense(&lay.heads[axis], &u, &mut z);
        z
    }

    pub(crate) fn forward_cache(&self, x: &[f32], tokens: ActionTokens) -> Result<Cache> {
        self.check_input(x)?;
        let lay = self.arch.layout();
        let acts = self.trunk(&lay, x);
        let h = acts.last().expect("trunk has layers");
        let t = tokens.as_array();
        let logp = [0, 1, 2].map(|axis| log_softmax(&self.head_logits(&lay, h, axis, &t)));
        Ok(Cache { acts, tokens: t, logp })
    }

    /// Log-probability tables for each axis, conditioning later axes on the
    /// given tokens of earlier axes.
    pub fn forward_logprobs(&self, x: &[f32], tokens: ActionTokens) -> Result<LogProbTables> {
        Ok(self.forward_cache(x, tokens)?.logp)
    }

    /// `log P(x) + log P(y|x) + log P(rz|x,y)`.
    pub fn sequence_logprob(&self, x: &[f32], tokens: ActionTokens) -> Result<f64> {
        let c = self.forward_cache(x, tokens)?;
        Ok((0..3).map(|a| c.logp[a][c.tokens[a]]).sum())
    }

    /// Autoregressive decoding; `pick` chooses a token from an axis's logits.
    pub fn decode<F>(&self, x: &[f32], mut pick: F) -> Result<ActionTokens>
    where
        F: FnMut(usize, &[f64]) -> usize,
    {
        self.check_input(x)?;
        let lay = self.arch.layout();
        let acts = self.trunk(&lay, x);
        let h = acts.last().expect("trunk has layers");
        let mut t = [0usize; 3];
        for axis in 0..3 {
            let z = self.head_logits(&lay, h, axis, &t);
            t[axis] = pick(axis, &z);
        }
        ActionTokens::new(t)
    }

    /// Greedy decoding. Ties go to the lowest index.
    pub fn argmax(&self, x: &[f32]) -> Result<ActionTokens> {
        self.decode(x, |_, z| argmax_index(z))
    }

    /// Adds to `grad` the gradient of `sum_axis <dz[axis], logits[axis]>`,
    /// i.e. back-propagates upstream logit gradients through heads,
    /// embeddings and trunk.
    pub(crate) fn backward(&self, cache: &Cache, dz: &[Vec<f64>; 3], grad: &mut [f64]) {
        let lay = self.arch.layout();
        let hdim = self.arch.hidden;
        let e = self.arch.embed;
        let h = cache.acts.last().expect("trunk has layers");
        let mut dh = vec![0.0; hdim];
        for axis in 0..3 {
            let d = lay.heads[axis];
            let u = self.head_input(&lay, h, axis, &cache.tokens);
            let mut du = vec![0.0; d.fan_in];
            for (v, &g) in dz[axis].iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                grad[d.b + v] += g;
                let row = d.w + v * d.fan_in;
                for j in 0..d.fan_in {
                    grad[row + j] += g * u[j];
                    du[j] += g * self.p(row + j);
                }
            }
            for j in 0..hdim {
                dh[j] += du[j];
            }
            for k in 0..axis {
                let o = lay.emb[k] + cache.tokens[k] * e;
                for j in 0..e {
                    grad[o + j] += du[hdim + k * e + j];
                }
            }
        }
        for (l, d) in lay.trunk.iter().enumerate().rev() {
            let out = &cache.acts[l + 1];
            let input = &cache.acts[l];
            let dzl: Vec<f64> = dh.iter().zip(out).map(|(g, a)| g * (1.0 - a * a)).collect();
            let mut din = vec![0.0; if l > 0 { d.fan_in } else { 0 }];
            for (i, &g) in dzl.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                grad[d.b + i] += g;
                let row = d.w + i * d.fan_in;
                for j in 0..d.fan_in {
                    grad[row + j] += g * input[j];
                }
                if l > 0 {
                    for j in 0..d.fan_in {
                        din[j] += g * self.p(row + j);
                    }
                }
            }
            dh = din;
        }
    }
}

pub fn argmax_index(z: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in z.iter().enumerate() {
        if v > z[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn norm_fit_standardizes() {
        let rows: Vec<Vec<f32>> = (0..4).map(|i| vec![i as f32, 2.0, -(i as f32) * 2.0]).collect();
        let refs: Vec<&[f32]> = rows.iter().map(|r| r.as_slice()).collect();
        let n = InputNorm::fit(&refs).unwrap();
        assert_eq!(n.shift, vec![1.5, 2.0, -3.0]);
        let sd = 1.25f64.sqrt();
        assert!((f64::from(n.scale[0]) - 1.0 / (sd + InputNorm::STD_FLOOR)).abs() < 1e-6);
        assert!((f64::from(n.scale[1]) - 1.0 / InputNorm::STD_FLOOR).abs() < 1e-4);
        assert!(InputNorm::fit(&[]).is_err());
        let m = PolicyModel::zeros(Architecture {
            input_dim: 2,
            ..Architecture::default()
        })
        .unwrap();
        assert!(m.with_norm(n).is_err());
    }

    fn small() -> Architecture {
        Architecture {
            input_dim: 12,
            hidden: 6,
            layers: 2,
            embed: 3,
            ..Architecture::default()
        }
    }

    fn input(seed: u64, n: usize) -> Vec<f32> {
        let mut s = Stream::new(seed, "x");
        (0..n).map(|_| s.uniform(-0.5, 0.5) as f32).collect()
    }

    #[test]
    fn param_count_matches_layout() {
        let a = small();
        let expect = (12 * 6 + 6) + (6 * 6 + 6) + (51 * 6 + 51) + 51 * 3 + (51 * 9 + 51) + 51 * 3 + (21 * 12 + 21);
        assert_eq!(a.param_count(), expect);
    }

    #[test]
    fn tables_normalize() {
        let m = PolicyModel::random(small(), 3, 0.8).unwrap();
        let x = input(1, 12);
        let t = m.forward_logprobs(&x, ActionTokens::new([3, 40, 7]).unwrap()).unwrap();
        for table in &t {
            let s: f64 = table.iter().map(|v| v.exp()).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_and_init_models_are_uniform() {
        for m in [PolicyModel::zeros(small()).unwrap(), PolicyModel::init(small(), 4).unwrap()] {
            let t = m.forward_logprobs(&input(2, 12), ActionTokens::center()).unwrap();
            assert!(t[0].iter().all(|&v| (v + 51f64.ln()).abs() < 1e-12));
            assert!(t[1].iter().all(|&v| (v + 51f64.ln()).abs() < 1e-12));
            assert!(t[2].iter().all(|&v| (v + 21f64.ln()).abs() < 1e-12));
        }
    }

    #[test]
    fn later_axes_depend_on_prefix() {
        let m = PolicyModel::random(small(), 5, 0.8).unwrap();
        let x = input(3, 12);
        let a = m.forward_logprobs(&x, ActionTokens::new([0, 0, 0]).unwrap()).unwrap();
        let b = m.forward_logprobs(&x, ActionTokens::new([9, 0, 0]).unwrap()).unwrap();
        assert_eq!(a[0], b[0]);
        assert_ne!(a[1], b[1]);
        assert_ne!(a[2], b[2]);
    }

    #[test]
    fn wrong_input_length() {
        let m = PolicyModel::zeros(small()).unwrap();
        assert!(matches!(
            m.argmax(&[0.0; 5]),
            Err(Error::FeatureShape { expected: 12, got: 5 })
        ));
    }

    #[test]
    fn argmax_decode_is_consistent_with_tables() {
        let m = PolicyModel::random(small(), 8, 0.8).unwrap();
        let x = input(4, 12);
        let t = m.argmax(&x).unwrap();
        let tables = m.forward_logprobs(&x, t).unwrap();
        for axis in 0..3 {
            assert_eq!(argmax_index(&tables[axis]), t.get(axis));
        }
    }
}
