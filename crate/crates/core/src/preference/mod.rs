//! Preference data: sampled candidate actions ranked by distance to the
//! ground truth, and the DPO trainer that consumes them.

mod dpo;

pub use dpo::{
    dpo_loss, dpo_train, evaluate_pairs, margin, neg_log_sigmoid, sigmoid, DpoConfig, DpoLog, PrefExample,
};

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{detokenize_action, ActionTokens};
use crate::error::{Error, IoContext, Result};
use crate::policy::{sample_tokens, Example, PolicyModel, SamplingConfig};
use crate::rng::{derive_seed, Stream};

/// Distances closer than this count as ties.
pub const TIE_EPS: f64 = 1e-9;

/// Summed absolute error over (x mm, y mm, rz deg) between the bin centers
/// of two token sequences.
pub fn action_distance(a: ActionTokens, b: ActionTokens) -> f64 {
    let (a, b) = (detokenize_action(a).as_array(), detokenize_action(b).as_array());
    (0..3).map(|i| (a[i] - b[i]).abs()).sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    /// Index into the generation configs.
    pub config: usize,
    pub tokens: ActionTokens,
    pub distance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleCandidates {
    pub sample_id: String,
    pub gt: ActionTokens,
    pub candidates: Vec<Candidate>,
}

/// Draws `per_config` actions per sample from each config. The stream of
/// a candidate depends only on the config seed, config index and sample id.
pub fn generate_candidates(
    model: &PolicyModel,
    ids: &[String],
    examples: &[Example],
    cfgs: &[SamplingConfig],
    per_config: usize,
) -> Result<Vec<SampleCandidates>> {
    if ids.len() != examples.len() {
        return Err(Error::LengthMismatch(ids.len(), examples.len()));
    }
    if examples.is_empty() || cfgs.is_empty() || per_config == 0 {
        return Err(Error::Preference("nothing to generate".into()));
    }
    for c in cfgs {
        c.validate()?;
    }
    ids.par_iter()
        .zip(examples)
        .map(|(id, ex)| {
            let mut candidates = Vec::with_capacity(cfgs.len() * per_config);
            for (ci, cfg) in cfgs.iter().enumerate() {
                let mut s = Stream::new(derive_seed(cfg.seed, &[ci as u64]), &format!("candidate/{id}"));
                for _ in 0..per_config {
                    let tokens = sample_tokens(model, &ex.features, cfg, &mut s)?;
                    candidates.push(Candidate {
                        config: ci,
                        tokens,
                        distance: action_distance(tokens, ex.tokens),
                    });
                }
            }
            Ok(SampleCandidates {
                sample_id: id.clone(),
                gt: ex.tokens,
                candidates,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub sample_id: String,
    pub chosen_tokens: ActionTokens,
    pub rejected_tokens: ActionTokens,
    pub gt_tokens: ActionTokens,
    pub d_chosen: f64,
    pub d_rejected: f64,
    /// Configs that produced the chosen and rejected actions.
    pub gen_configs: [SamplingConfig; 2],
}

impl PreferencePair {
    pub fn check(&self) -> Result<()> {
        if !(self.d_chosen < self.d_rejected) {
            return Err(Error::Preference(format!(
                "{}: d_chosen {} not below d_rejected {}",
                self.sample_id, self.d_chosen, self.d_rejected
            )));
        }
        if self.chosen_tokens == self.rejected_tokens {
            return Err(Error::Preference(format!("{}: identical chosen and rejected", self.sample_id)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PairStats {
    pub samples: usize,
    pub pairs: usize,
    pub dropped_ties: usize,
    pub dropped_identical: usize,
}

/// One pair per sample: the closest candidate against the farthest.
/// Identical sequences and distance ties are dropped and counted.
pub fn build_preference_pairs(
    candidates: &[SampleCandidates],
    cfgs: &[SamplingConfig],
) -> Result<(Vec<PreferencePair>, PairStats)> {
    let mut stats = PairStats {
        samples: candidates.len(),
        ..PairStats::default()
    };
    let mut pairs = Vec::new();
    for s in candidates {
        if s.candidates.len() < 2 {
            return Err(Error::Preference(format!("{}: fewer than two candidates", s.sample_id)));
        }
        // First minimum and first maximum, so ordering is stable.
        let mut best = &s.candidates[0];
        let mut worst = &s.candidates[0];
        for c in &s.candidates[1..] {
            if c.distance < best.distance {
                best = c;
            }
            if c.distance > worst.distance {
                worst = c;
            }
        }
        if s.candidates.iter().all(|c| c.tokens == best.tokens) {
            stats.dropped_identical += 1;
            continue;
        }
        if worst.distance - best.distance <= TIE_EPS {
            stats.dropped_ties += 1;
            continue;
        }
        let cfg = |i: usize| {
            cfgs.get(i)
                .copied()
                .ok_or_else(|| Error::Preference(format!("config index {i} out of range")))
        };
        let pair = PreferencePair {
            sample_id: s.sample_id.clone(),
            chosen_tokens: best.tokens,
            rejected_tokens: worst.tokens,
            gt_tokens: s.gt,
            d_chosen: best.distance,
            d_rejected: worst.distance,
            gen_configs: [cfg(best.config)?, cfg(worst.config)?],
        };
        pair.check()?;
        pairs.push(pair);
    }
    stats.pairs = pairs.len();
    Ok((pairs, stats))
}

pub fn write_pairs(path: &Path, pairs: &[PreferencePair]) -> Result<()> {
    let f = File::create(path).at(path)?;
    let mut w = BufWriter::new(f);
    for p in pairs {
        p.check()?;
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n").at(path)?;
    }
    w.flush().at(path)
}

/// Reads and validates a preference JSONL file.
pub fn read_pairs(path: &Path) -> Result<Vec<PreferencePair>> {
    let f = File::open(path).at(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.at(path)?;
        if line.trim().is_empty() {
            continue;
        }
        let p: PreferencePair = serde_json::from_str(&line)
            .map_err(|e| Error::Preference(format!("{}:{}: {e}", path.display(), i + 1)))?;
        p.check()
            .map_err(|e| Error::Preference(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(p);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(x: usize, y: usize, r: usize) -> ActionTokens {
        ActionTokens::new([x, y, r]).unwrap()
    }

    fn cand(config: usize, tokens: ActionTokens, gt: ActionTokens) -> Candidate {
        Candidate {
            config,
            tokens,
            distance: action_distance(tokens, gt),
        }
    }

    #[test]
    fn distance_in_mm_and_degrees() {
        assert!((action_distance(t(25, 25, 10), t(30, 20, 12)) - 2.0).abs() < 1e-12);
        assert_eq!(action_distance(t(3, 4, 5), t(3, 4, 5)), 0.0);
    }

    #[test]
    fn closer_is_chosen_and_ties_dropped() {
        let gt = t(25, 25, 10);
        let cfgs = SamplingConfig::GENERATION;
        let samples = vec![
            SampleCandidates {
                sample_id: "a".into(),
                gt,
                // 0.5 vs 1.5
                candidates: vec![cand(0, t(30, 25, 10), gt), cand(1, t(40, 25, 10), gt)],
            },
            SampleCandidates {
                sample_id: "b".into(),
                gt,
                candidates: vec![cand(0, t(30, 25, 10), gt), cand(1, t(20, 25, 10), gt)],
            },
            SampleCandidates {
                sample_id: "c".into(),
                gt,
                candidates: vec![cand(0, t(30, 25, 10), gt), cand(1, t(30, 25, 10), gt)],
            },
        ];
        let (pairs, stats) = build_preference_pairs(&samples, &cfgs).unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].chosen_tokens, t(30, 25, 10));
        assert!((pairs[0].d_chosen - 0.5).abs() < 1e-12 && (pairs[0].d_rejected - 1.5).abs() < 1e-12);
        assert_eq!(pairs[0].gen_configs, cfgs);
        assert_eq!((stats.dropped_ties, stats.dropped_identical), (1, 1));
    }

    #[test]
    fn jsonl_round_trip_and_load_check() {
        let dir = tempfile::tempdir().unwrap();
        let p = PreferencePair {
            sample_id: "s".into(),
            chosen_tokens: t(1, 2, 3),
            rejected_tokens: t(4, 5, 6),
            gt_tokens: t(1, 2, 3),
            d_chosen: 0.0,
            d_rejected: 2.1,
            gen_configs: SamplingConfig::GENERATION,
        };
        let path = dir.path().join("prefs.jsonl");
        write_pairs(&path, std::slice::from_ref(&p)).unwrap();
        assert_eq!(read_pairs(&path).unwrap(), vec![p.clone()]);

        let bad = PreferencePair {
            d_chosen: 3.0,
            ..p
        };
        std::fs::write(&path, serde_json::to_string(&bad).unwrap() + "\n").unwrap();
        let err = read_pairs(&path).unwrap_err().to_string();
        assert!(err.contains(":1:"), "{err}");
    }
}
