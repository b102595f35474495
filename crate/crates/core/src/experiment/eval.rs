use serde::{Deserialize, Serialize};

use crate::data::PreferenceTriple;
use crate::error::{Error, Result};
use crate::math::sigmoid;
use crate::objectives::ref_logprobs;
use crate::policy::{logprob, FrozenPolicy, Policy};
use crate::scalar::Scalar;

/// One row of `eval_records.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub id: u64,
    pub logp_w: f64,
    pub logp_l: f64,
    /// `beta * (chosen_logratio - rejected_logratio)`.
    pub margin: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub omega1: f64,
    pub omega2_hard: f64,
    pub omega2_smooth: f64,
    pub reward_accuracy: f64,
    pub mean_margin: f64,
    pub mean_rejected_logprob: f64,
    pub perplexity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub records: Vec<EvalRecord>,
    pub summary: EvalSummary,
}

/// Per-record log-probabilities and margins on `testset`, plus the summary.
pub fn evaluate<T: Scalar, P: Policy<T>, R: Policy<T>>(
    policy: &P,
    reference: &FrozenPolicy<R>,
    testset: &[PreferenceTriple],
    beta: f64,
    gamma: f64,
) -> Result<Evaluation> {
    if testset.is_empty() {
        return Err(Error::domain("evaluate: empty test set"));
    }
    if !(beta > 0.0 && beta.is_finite() && gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::domain("evaluate: beta and gamma must be > 0"));
    }
    let mut records = Vec::with_capacity(testset.len());
    for r in testset {
        let rl = ref_logprobs(r, reference)?;
        let w = logprob(policy, &r.prompt, &r.chosen)?;
        let l = logprob(policy, &r.prompt, &r.rejected)?;
        let d = ((w - rl.chosen) - (l - rl.rejected)).as_f64();
        records.push(EvalRecord {
            id: r.id,
            logp_w: w.as_f64(),
            logp_l: l.as_f64(),
            margin: beta * d,
        });
    }
    let perplexity = perplexity(policy, testset)?;
    let summary = summarize(&records, beta, gamma, perplexity)?;
    Ok(Evaluation { records, summary })
}

/// Summary statistics recomputed from an evaluation table alone.
pub fn summarize(records: &[EvalRecord], beta: f64, gamma: f64, perplexity: f64) -> Result<EvalSummary> {
    if records.is_empty() {
        return Err(Error::domain("summarize: empty table"));
    }
    let n = records.len() as f64;
    let hits = records.iter().filter(|r| r.margin > 0.0).count() as f64 / n;
    let smooth = records.iter().map(|r| sigmoid(gamma * r.margin / beta)).sum::<f64>() / n;
    Ok(EvalSummary {
        omega1: records.iter().map(|r| r.logp_w).sum::<f64>() / n,
        omega2_hard: hits,
        omega2_smooth: smooth,
        reward_accuracy: hits,
        mean_margin: records.iter().map(|r| r.margin).sum::<f64>() / n,
        mean_rejected_logprob: records.iter().map(|r| r.logp_l).sum::<f64>() / n,
        perplexity,
    })
}

/// `exp(-mean per-token log-prob)` over the chosen responses.
pub fn perplexity<T: Scalar, P: Policy<T>>(policy: &P, testset: &[PreferenceTriple]) -> Result<f64> {
    if testset.is_empty() {
        return Err(Error::domain("perplexity: empty test set"));
    }
    let mut total = 0.0;
    let mut tokens = 0usize;
    for r in testset {
        total += logprob(policy, &r.prompt, &r.chosen)?.as_f64();
        tokens += r.chosen.len();
    }
    if tokens == 0 {
        return Err(Error::domain("perplexity: no chosen tokens"));
    }
    Ok((-total / tokens as f64).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::TokenSeq;
    use crate::policy::{token_logprobs, LogLinearPolicy, TabularPolicy, TrainablePolicy};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn triple(id: u64, c: Vec<u32>, r: Vec<u32>) -> PreferenceTriple {
        PreferenceTriple::new(id, TokenSeq(vec![1]), TokenSeq(c), TokenSeq(r))
    }

    fn random_set(rng: &mut ChaCha8Rng, v: u32, n: usize) -> Vec<PreferenceTriple> {
        (0..n as u64)
            .map(|i| {
                let len = rng.gen_range(1..8);
                let c = (0..len).map(|_| rng.gen_range(0..v)).collect();
                let r = (0..len).map(|_| rng.gen_range(0..v)).collect();
                triple(i, c, r)
            })
            .collect()
    }

    #[test]
    fn uniform_perplexity_is_vocab() {
        let p = TabularPolicy::<f64>::uniform(32, 1, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let data = random_set(&mut rng, 32, 20);
        assert!((perplexity(&p, &data).unwrap() - 32.0).abs() <= 1e-9);
        assert!(perplexity(&p, &[]).is_err());
    }

    #[test]
    fn deterministic_policy_perplexity_one() {
        // order-0 tabular policy that puts all mass on token 2
        let mut p = TabularPolicy::<f64>::uniform(4, 0, 1).unwrap();
        p.params_mut().as_mut_slice()[2] = 800.0;
        let data = vec![triple(0, vec![2, 2, 2], vec![0])];
        assert_eq!(perplexity(&p, &data).unwrap(), 1.0);
    }

    #[test]
    fn perplexity_matches_per_token_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = LogLinearPolicy::<f64>::zeros(8, 32, 1).unwrap();
        p.params_mut().as_mut_slice().iter_mut().for_each(|w| *w = rng.gen::<f64>() * 2.0 - 1.0);
        let data = random_set(&mut rng, 8, 15);
        let (mut s, mut n) = (0.0, 0usize);
        for r in &data {
            for lp in token_logprobs(&p, &r.prompt, &r.chosen).unwrap() {
                s += lp;
                n += 1;
            }
        }
        let want = (-s / n as f64).exp();
        assert!((perplexity(&p, &data).unwrap() - want).abs() <= 1e-10 * want);
    }

    #[test]
    fn at_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = LogLinearPolicy::<f64>::zeros(8, 32, 1).unwrap();
        p.params_mut().as_mut_slice().iter_mut().for_each(|w| *w = rng.gen::<f64>());
        let frozen = FrozenPolicy::new(p.clone());
        let data = random_set(&mut rng, 8, 10);
        let e = evaluate(&p, &frozen, &data, 0.1, 1.0).unwrap();
        assert!(e.records.iter().all(|r| r.margin == 0.0));
        assert_eq!(e.summary.reward_accuracy, 0.0);
        assert_eq!(e.summary.omega2_smooth, 0.5);
    }

    #[test]
    fn counting_summary() {
        let rec = |margin| EvalRecord { id: 0, logp_w: -1.0, logp_l: -2.0, margin };
        let s = summarize(&[rec(0.2), rec(-0.1), rec(0.3), rec(0.0)], 0.1, 1.0, 1.0).unwrap();
        assert_eq!(s.reward_accuracy, 0.5);
        assert!((s.mean_margin - 0.1).abs() < 1e-15);
    }

    #[test]
    fn summary_matches_table() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = LogLinearPolicy::<f64>::zeros(8, 32, 1).unwrap();
        p.params_mut().as_mut_slice().iter_mut().for_each(|w| *w = rng.gen::<f64>());
        let reference = FrozenPolicy::new(LogLinearPolicy::<f64>::zeros(8, 32, 1).unwrap());
        let data = random_set(&mut rng, 8, 25);
        let e = evaluate(&p, &reference, &data, 0.1, 1.0).unwrap();
        let n = data.len() as f64;
        let o1: f64 = e.records.iter().map(|r| r.logp_w).sum::<f64>() / n;
        assert!((e.summary.omega1 - o1).abs() <= 1e-12);
        let smooth = crate::diagnostics::omega2_smooth(&p, &reference, &data, 1.0).unwrap();
        assert!((e.summary.omega2_smooth - smooth).abs() <= 1e-12);
        let hard = crate::diagnostics::omega2_hard(&p, &reference, &data, ).unwrap();
        assert_eq!(e.summary.omega2_hard, hard);
        let o1_direct = crate::diagnostics::omega1(&p, &data).unwrap();
        assert!((e.summary.omega1 - o1_direct).abs() <= 1e-12);
    }
}
