//! Policies: the learned token-sequence model, the reference oracle and
//! random policies, and the remote policy boundary.

mod checkpoint;
mod features;
mod model;
mod sampling;
mod train;
pub mod wire;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use features::{featurize, FeatureOrder, FEATURE_DIM, IMAGE_FEATURES, POOLED};
pub use model::{argmax_index, log_softmax, Architecture, InputNorm, LogProbTables, PolicyModel};
pub use sampling::{empirical_entropy, sample_action, sample_categorical, sample_tokens, SamplingConfig};
pub use train::{fit_input_norm, mean_ntp_loss, ntp_loss, sft_train, Adam, Example, SftConfig, TrainLog};

pub(crate) use model::Cache;
pub(crate) use train::epoch_order;

use rayon::prelude::*;

use crate::dataset::{detokenize_action, ActionTokens, Manifest, VOCAB_SIZES};
use crate::episode::Action;
use crate::error::{Error, Result};
use crate::geometry::ShapeKind;
use crate::rng::{derive_seed, Stream};
use crate::sensors::Observation;

/// Featurizes every record of a manifest, in record order.
pub fn load_examples(manifest: &Manifest, order: FeatureOrder) -> Result<Vec<Example>> {
    manifest
        .records
        .par_iter()
        .map(|r| {
            let obs = manifest.observation(r)?;
            Ok(Example {
                features: featurize(&obs, r.shape, order)?,
                tokens: r.label_tokens,
            })
        })
        .collect()
}

/// What a policy sees before a descent.
#[derive(Clone, Copy, Debug)]
pub struct ActContext<'a> {
    pub observation: &'a Observation,
    pub shape: ShapeKind,
    pub instruction: &'a str,
    pub episode_seed: u64,
    /// Attempts already made in this episode.
    pub attempt: usize,
    /// Only available inside the simulator.
    pub ground_truth: Option<Action>,
}

pub trait Policy: Send + Sync {
    fn act(&self, ctx: &ActContext) -> Result<Action>;

    fn name(&self) -> String {
        "policy".into()
    }
}

/// Wraps a closure.
pub struct FnPolicy<F>(pub F);

impl<F> Policy for FnPolicy<F>
where
    F: Fn(&ActContext) -> Result<Action> + Send + Sync,
{
    fn act(&self, ctx: &ActContext) -> Result<Action> {
        (self.0)(ctx)
    }

    fn name(&self) -> String {
        "fn".into()
    }
}

/// Returns the simulator's ground-truth correction.
#[derive(Clone, Copy, Debug, Default)]
pub struct OraclePolicy;

pub fn oracle_policy() -> OraclePolicy {
    OraclePolicy
}

impl Policy for OraclePolicy {
    fn act(&self, ctx: &ActContext) -> Result<Action> {
        ctx.ground_truth.ok_or(Error::OracleRefused)
    }

    fn name(&self) -> String {
        "oracle".into()
    }
}

/// Uniform random bin-center actions. The draw depends only on the seed,
/// the episode seed and the attempt index, so it is reproducible under any
/// scheduling.
#[derive(Clone, Copy, Debug)]
pub struct RandomPolicy {
    pub seed: u64,
}

pub fn random_policy(seed: u64) -> RandomPolicy {
    RandomPolicy { seed }
}

impl RandomPolicy {
    pub fn tokens(&self, episode_seed: u64, attempt: usize) -> ActionTokens {
        let mut s = Stream::new(derive_seed(self.seed, &[episode_seed, attempt as u64]), "random-policy");
        let t = [0, 1, 2].map(|axis| s.below(VOCAB_SIZES[axis]));
        ActionTokens::new(t).expect("drawn below vocab size")
    }
}

impl Policy for RandomPolicy {
    fn act(&self, ctx: &ActContext) -> Result<Action> {
        Ok(detokenize_action(self.tokens(ctx.episode_seed, ctx.attempt)))
    }

    fn name(&self) -> String {
        "random".into()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Decoding {
    Argmax,
    Sample(SamplingConfig),
}

/// The learned model acting on featurized observations.
#[derive(Clone, Debug)]
pub struct ModelPolicy {
    pub model: PolicyModel,
    pub decoding: Decoding,
    pub label: String,
}

impl ModelPolicy {
    pub fn argmax(model: PolicyModel, label: &str) -> Self {
        Self {
            model,
            decoding: Decoding::Argmax,
            label: label.to_string(),
        }
    }

    pub fn tokens(&self, obs: &Observation, shape: ShapeKind, seed: u64) -> Result<ActionTokens> {
        let x = featurize(obs, shape, self.model.arch.feature_order)?;
        match self.decoding {
            Decoding::Argmax => self.model.argmax(&x),
            Decoding::Sample(cfg) => {
                let mut s = Stream::new(derive_seed(cfg.seed, &[seed]), "model-policy");
                sample_tokens(&self.model, &x, &cfg, &mut s)
            }
        }
    }
}

impl Policy for ModelPolicy {
    fn act(&self, ctx: &ActContext) -> Result<Action> {
        let seed = derive_seed(ctx.episode_seed, &[ctx.attempt as u64]);
        Ok(detokenize_action(self.tokens(ctx.observation, ctx.shape, seed)?))
    }

    fn name(&self) -> String {
        self.label.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::tokenize_action;
    use crate::sensors::idle_montage;
    use crate::raster::RgbImage;

    fn ctx<'a>(obs: &'a Observation, gt: Option<Action>, attempt: usize) -> ActContext<'a> {
        ActContext {
            observation: obs,
            shape: ShapeKind::Square,
            instruction: "",
            episode_seed: 5,
            attempt,
            ground_truth: gt,
        }
    }

    fn obs() -> Observation {
        Observation {
            tactile_left: idle_montage(),
            tactile_right: idle_montage(),
            vision: RgbImage::new(224, 224),
        }
    }

    #[test]
    fn oracle_needs_ground_truth() {
        let o = obs();
        let gt = Action::new(0.3, -0.2, 1.0);
        assert_eq!(oracle_policy().act(&ctx(&o, Some(gt), 0)).unwrap(), gt);
        assert!(matches!(oracle_policy().act(&ctx(&o, None, 0)), Err(Error::OracleRefused)));
    }

    #[test]
    fn random_actions_on_bin_centers_and_reproducible() {
        let o = obs();
        let p = random_policy(3);
        let q = random_policy(3);
        for k in 0..500 {
            let a = p.act(&ctx(&o, None, k)).unwrap();
            assert_eq!(detokenize_action(tokenize_action(a)), a);
            assert_eq!(a, q.act(&ctx(&o, None, k)).unwrap());
        }
        assert_ne!(
            random_policy(3).tokens(5, 0),
            random_policy(4).tokens(5, 0),
        );
    }
}
