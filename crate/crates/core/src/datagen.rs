//! Synthetic preference corpora with a tunable chosen/rejected overlap.
//!
//! Chosen responses are sampled from a random ground-truth tabular policy.
//! Each rejected response copies the chosen token at every position with
//! probability `similarity` and otherwise draws a uniform token, so the
//! expected per-position agreement is `s + (1 - s) / V`.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{validate_dataset, write_jsonl, PreferenceTriple, TokenId, TokenSeq};
use crate::error::{Error, Result};
use crate::policy::{sample, TabularPolicy, TrainablePolicy};

const STREAM_GROUND_TRUTH: u64 = 0;
const STREAM_PROMPTS: u64 = 1;
const STREAM_RECORD_BASE: u64 = 1 << 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSpec {
    pub vocab_size: usize,
    pub num_prompts: usize,
    pub prompt_len: usize,
    pub pairs_per_prompt: usize,
    pub response_len: usize,
    /// Probability that a rejected token copies the chosen token.
    pub similarity: f64,
    pub seed: u64,
    /// Ground-truth logits are drawn uniformly from `[-scale, scale]`.
    #[serde(default = "default_logit_scale")]
    pub logit_scale: f64,
    /// Number of prompt buckets the ground-truth policy conditions on.
    #[serde(default = "default_gt_prompt_buckets")]
    pub ground_truth_prompt_buckets: usize,
}

fn default_logit_scale() -> f64 {
    3.0
}

fn default_gt_prompt_buckets() -> usize {
    4
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            vocab_size: 64,
            num_prompts: 100,
            prompt_len: 4,
            pairs_per_prompt: 22,
            response_len: 24,
            similarity: 0.9,
            seed: 0,
            logit_scale: default_logit_scale(),
            ground_truth_prompt_buckets: default_gt_prompt_buckets(),
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 {
            return Err(Error::domain("vocab_size must be at least 2"));
        }
        if self.vocab_size > TokenId::MAX as usize {
            return Err(Error::domain("vocab_size exceeds token id range"));
        }
        if self.num_prompts == 0 || self.prompt_len == 0 || self.pairs_per_prompt == 0 || self.response_len == 0 {
            return Err(Error::domain("corpus sizes and lengths must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.similarity) {
            return Err(Error::domain(format!("similarity must lie in [0, 1], got {}", self.similarity)));
        }
        if !(self.logit_scale.is_finite() && self.logit_scale >= 0.0) {
            return Err(Error::domain("logit_scale must be finite and >= 0"));
        }
        if self.ground_truth_prompt_buckets == 0 {
            return Err(Error::domain("ground_truth_prompt_buckets must be at least 1"));
        }
        Ok(())
    }

    pub fn num_records(&self) -> usize {
        self.num_prompts * self.pairs_per_prompt
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }

    /// The fixed generating distribution for chosen responses.
    pub fn ground_truth(&self) -> Result<TabularPolicy<f64>> {
        self.validate()?;
        let mut gt = TabularPolicy::uniform(self.vocab_size, 1, self.ground_truth_prompt_buckets)?;
        let mut rng = self.rng(STREAM_GROUND_TRUTH);
        let s = self.logit_scale;
        for w in gt.params_mut().as_mut_slice() {
            *w = s * (2.0 * rng.gen::<f64>() - 1.0);
        }
        Ok(gt)
    }
}

pub fn generate_corpus(spec: &CorpusSpec) -> Result<Vec<PreferenceTriple>> {
    let gt = spec.ground_truth()?;
    let v = spec.vocab_size as TokenId;
    let mut prng = spec.rng(STREAM_PROMPTS);
    let prompts: Vec<TokenSeq> = (0..spec.num_prompts)
        .map(|_| TokenSeq((0..spec.prompt_len).map(|_| prng.gen_range(0..v)).collect()))
        .collect();
    let mut out = Vec::with_capacity(spec.num_records());
    for (pi, prompt) in prompts.iter().enumerate() {
        for j in 0..spec.pairs_per_prompt {
            let id = (pi * spec.pairs_per_prompt + j) as u64;
            let mut rng = spec.rng(STREAM_RECORD_BASE + id);
            let chosen = sample(&gt, prompt, spec.response_len, None, &mut rng)?;
            let rejected = TokenSeq(
                chosen
                    .tokens()
                    .iter()
                    .map(|&t| {
                        if rng.gen::<f64>() < spec.similarity {
                            t
                        } else {
                            rng.gen_range(0..v)
                        }
                    })
                    .collect(),
            );
            out.push(PreferenceTriple::new(id, prompt.clone(), chosen, rejected));
        }
    }
    Ok(out)
}

/// Mean per-position token agreement between chosen and rejected, pooled over
/// all positions up to the shorter response of each pair.
pub fn corpus_similarity(records: &[PreferenceTriple]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::domain("corpus_similarity of an empty corpus"));
    }
    let (mut same, mut total) = (0usize, 0usize);
    for r in records {
        for (a, b) in r.chosen.tokens().iter().zip(r.rejected.tokens()) {
            total += 1;
            same += usize::from(a == b);
        }
    }
    if total == 0 {
        return Err(Error::domain("corpus has no comparable positions"));
    }
    Ok(same as f64 / total as f64)
}

/// Split off every `every`-th record (ids `every-1, 2*every-1, ...`) as the
/// held-out set. Returns `(train, test)`.
pub fn split_holdout(records: Vec<PreferenceTriple>, every: usize) -> Result<(Vec<PreferenceTriple>, Vec<PreferenceTriple>)> {
    if every < 2 {
        return Err(Error::domain("holdout stride must be at least 2"));
    }
    let (test, train): (Vec<_>, Vec<_>) = records
        .into_iter()
        .enumerate()
        .partition(|(i, _)| i % every == every - 1);
    Ok((
        train.into_iter().map(|(_, r)| r).collect(),
        test.into_iter().map(|(_, r)| r).collect(),
    ))
}

/// Write `corpus.jsonl` and `corpus_spec.json` into `dir`.
pub fn write_corpus(dir: &Path, spec: &CorpusSpec, records: &[PreferenceTriple]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let report = validate_dataset(records, spec.vocab_size);
    if !report.passed() {
        return Err(Error::domain(format!("generated corpus failed validation: {:?}", report.violations)));
    }
    write_jsonl(&dir.join("corpus.jsonl"), records)?;
    let header = dir.join("corpus_spec.json");
    let json = serde_json::to_string_pretty(spec).map_err(|e| Error::parse(&header, e))?;
    std::fs::write(&header, json + "\n").map_err(|e| Error::io(&header, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(s: f64, prompts: usize, pairs: usize, len: usize) -> CorpusSpec {
        CorpusSpec {
            vocab_size: 16,
            num_prompts: prompts,
            prompt_len: 3,
            pairs_per_prompt: pairs,
            response_len: len,
            similarity: s,
            seed: 42,
            ..CorpusSpec::default()
        }
    }

    /// Binomial `k`-sigma interval half-width for a rate `q` over `n` trials.
    fn band(q: f64, n: usize, k: f64) -> f64 {
        k * (q * (1.0 - q) / n as f64).sqrt()
    }

    #[test]
    fn full_similarity_copies_chosen() {
        let c = generate_corpus(&spec(1.0, 10, 5, 12)).unwrap();
        assert!(c.iter().all(|r| r.chosen == r.rejected));
        assert_eq!(corpus_similarity(&c).unwrap(), 1.0);
    }

    #[test]
    fn zero_similarity_is_chance_level() {
        let sp = spec(0.0, 50, 20, 20);
        let c = generate_corpus(&sp).unwrap();
        let n = c.len() * sp.response_len;
        let q = 1.0 / sp.vocab_size as f64;
        assert!((corpus_similarity(&c).unwrap() - q).abs() <= band(q, n, 5.0));
    }

    #[test]
    fn high_similarity_copy_rate() {
        let mut sp = spec(0.9, 50, 20, 20);
        sp.vocab_size = 64;
        let c = generate_corpus(&sp).unwrap();
        assert_eq!(c.len(), 1000);
        let r = corpus_similarity(&c).unwrap();
        assert!((0.88..=0.92).contains(&r), "{r}");
    }

    #[test]
    fn half_similarity_matches_effective_rate() {
        let sp = spec(0.5, 50, 20, 20);
        let c = generate_corpus(&sp).unwrap();
        let q = 0.5 + 0.5 / sp.vocab_size as f64;
        let n = c.len() * sp.response_len;
        assert!((corpus_similarity(&c).unwrap() - q).abs() <= band(q, n, 5.0));
    }

    #[test]
    fn similarity_monotone_in_knob() {
        let vals: Vec<f64> = [0.0, 0.25, 0.5, 0.75, 1.0]
            .iter()
            .map(|&s| corpus_similarity(&generate_corpus(&spec(s, 50, 20, 10)).unwrap()).unwrap())
            .collect();
        assert!(vals.windows(2).all(|w| w[0] <= w[1]), "{vals:?}");
    }

    #[test]
    fn deterministic_and_valid() {
        let sp = spec(0.7, 6, 4, 9);
        let a = generate_corpus(&sp).unwrap();
        assert_eq!(a, generate_corpus(&sp).unwrap());
        assert!(validate_dataset(&a, sp.vocab_size).passed());
        let dir = tempfile::tempdir().unwrap();
        write_corpus(&dir.path().join("a"), &sp, &a).unwrap();
        write_corpus(&dir.path().join("b"), &sp, &a).unwrap();
        let fa = std::fs::read(dir.path().join("a/corpus.jsonl")).unwrap();
        let fb = std::fs::read(dir.path().join("b/corpus.jsonl")).unwrap();
        assert_eq!(fa, fb);
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut sp = spec(1.5, 1, 1, 1);
        assert!(generate_corpus(&sp).is_err());
        sp.similarity = 0.5;
        sp.vocab_size = 1;
        assert!(generate_corpus(&sp).is_err());
        sp.vocab_size = 4;
        sp.response_len = 0;
        assert!(generate_corpus(&sp).is_err());
    }

    #[test]
    fn similarity_edge_cases() {
        assert!(corpus_similarity(&[]).is_err());
        let disjoint = PreferenceTriple::new(0, TokenSeq(vec![]), TokenSeq(vec![0, 1, 2]), TokenSeq(vec![3, 4]));
        assert_eq!(corpus_similarity(&[disjoint]).unwrap(), 0.0);
    }

    #[test]
    fn holdout_split() {
        let c = generate_corpus(&spec(0.5, 5, 11, 3)).unwrap();
        let (train, test) = split_holdout(c, 11).unwrap();
        assert_eq!((train.len(), test.len()), (50, 5));
        assert!(test.iter().all(|r| r.id % 11 == 10));
    }
}
