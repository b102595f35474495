use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{ObjectiveConfig, ObjectiveKind};
use crate::data::PreferenceTriple;
use crate::error::{Error, Result};
use crate::objectives::{f_value, ref_logprobs, sample_objective, RefLogprobs, ScheduleSpec};
use crate::policy::{logprob_and_grad, FrozenPolicy, Policy, SparseGrad, TrainablePolicy};
use crate::scalar::Scalar;

use super::optim::{optimizer_step, OptimizerConfig, OptimizerState};

pub(crate) const STREAM_SFT_SHUFFLE: u64 = 16;
pub(crate) const STREAM_PO_SHUFFLE: u64 = 17;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub epochs: usize,
}

impl StageConfig {
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if self.batch_size == 0 {
            return Err(Error::domain("batch_size must be at least 1"));
        }
        Ok(())
    }

    pub fn steps_for(&self, n: usize) -> usize {
        self.epochs * n.div_ceil(self.batch_size)
    }
}

/// Mini-batches of indices, reshuffled every epoch from one seeded stream.
fn batches(n: usize, stage: &StageConfig, seed: u64, stream: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut out = Vec::with_capacity(stage.steps_for(n));
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..stage.epochs {
        order.shuffle(&mut rng);
        out.extend(order.chunks(stage.batch_size).map(|c| c.to_vec()));
    }
    out
}

fn apply<T: Scalar, P: TrainablePolicy<T>>(
    policy: &mut P,
    state: &mut OptimizerState<T>,
    grad: &SparseGrad<T>,
    hyper: &OptimizerConfig,
    step: usize,
) -> Result<()> {
    let dense = grad.to_dense(policy.dim());
    optimizer_step(state, policy.params_mut().as_mut_slice(), &dense, hyper)?;
    if !policy.params().all_finite() {
        return Err(Error::numeric(format!("non-finite parameters after step {step}")));
    }
    Ok(())
}

/// Maximum-likelihood training on the chosen responses. Returns the mean
/// per-sequence negative log-likelihood of every step's batch.
pub fn train_sft<T: Scalar, P: TrainablePolicy<T>>(
    policy: &mut P,
    corpus: &[PreferenceTriple],
    stage: &StageConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    if corpus.is_empty() {
        return Err(Error::domain("train_sft: empty corpus"));
    }
    stage.validate()?;
    let mut state = OptimizerState::new(stage.optimizer.kind, policy.dim());
    let mut losses = Vec::new();
    for (step, batch) in batches(corpus.len(), stage, seed, STREAM_SFT_SHUFFLE).into_iter().enumerate() {
        let scale = T::one() / T::of_usize(batch.len());
        let mut grad = SparseGrad::new(policy.vocab_size());
        let mut loss = T::zero();
        for &i in &batch {
            let r = &corpus[i];
            let (lp, g) = logprob_and_grad(&*policy, &r.prompt, &r.chosen)?;
            loss -= lp;
            grad.add_scaled(&g, -scale);
        }
        let loss = (loss * scale).as_f64();
        if !loss.is_finite() {
            return Err(Error::numeric(format!("non-finite SFT loss at step {step}")));
        }
        losses.push(loss);
        apply(policy, &mut state, &grad, &stage.optimizer, step)?;
    }
    Ok(losses)
}

/// One row of `metrics.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: usize,
    pub loss: f64,
    pub f_value: f64,
    pub mean_margin: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoSettings<'a> {
    pub stage: &'a StageConfig,
    pub objective: &'a ObjectiveConfig,
    pub seed: u64,
    /// Abort when the batch mean per-token chosen log-prob falls below this.
    pub collapse_bound: f64,
}

/// The schedule over the run's optimizer steps; the last step sits at the
/// schedule's end point.
pub fn po_schedule(objective: &ObjectiveConfig, steps: usize) -> Result<ScheduleSpec> {
    objective.schedule.with_horizon(steps.saturating_sub(1).max(1))
}

/// Preference optimization from the current state of `policy`.
pub fn train_po<T, P, R>(
    policy: &mut P,
    reference: &FrozenPolicy<R>,
    corpus: &[PreferenceTriple],
    settings: PoSettings<'_>,
) -> Result<Vec<MetricsRow>>
where
    T: Scalar,
    P: TrainablePolicy<T>,
    R: Policy<T>,
{
    train_po_observed(policy, reference, corpus, settings, &mut |_, _| Ok(()))
}

/// [`train_po`] with a callback after every optimizer step. The callback
/// sees the step index and the updated policy and cannot modify it.
pub fn train_po_observed<T, P, R, F>(
    policy: &mut P,
    reference: &FrozenPolicy<R>,
    corpus: &[PreferenceTriple],
    settings: PoSettings<'_>,
    observer: &mut F,
) -> Result<Vec<MetricsRow>>
where
    T: Scalar,
    P: TrainablePolicy<T>,
    R: Policy<T>,
    F: FnMut(usize, &P) -> Result<()>,
{
    if corpus.is_empty() {
        return Err(Error::domain("train_po: empty corpus"));
    }
    let PoSettings { stage, objective, seed, collapse_bound } = settings;
    stage.validate()?;
    objective.validate()?;
    let refs: Vec<RefLogprobs<T>> = corpus.iter().map(|r| ref_logprobs(r, reference)).collect::<Result<_>>()?;
    let plan = batches(corpus.len(), stage, seed, STREAM_PO_SHUFFLE);
    let schedule = po_schedule(objective, plan.len())?;
    let beta = T::of(objective.beta);
    let alpha = T::of(objective.alpha);
    let mut state = OptimizerState::new(stage.optimizer.kind, policy.dim());
    let mut metrics = Vec::with_capacity(plan.len());
    for (step, batch) in plan.into_iter().enumerate() {
        let f = match objective.objective_kind {
            ObjectiveKind::DpoShift => f_value(&schedule, step)?,
            ObjectiveKind::Dpo | ObjectiveKind::AlphaDpo => 1.0,
        };
        let scale = T::one() / T::of_usize(batch.len());
        let mut grad = SparseGrad::new(policy.vocab_size());
        let (mut loss, mut margin, mut chosen_lp) = (T::zero(), T::zero(), T::zero());
        let mut tokens = 0usize;
        for &i in &batch {
            let r = &corpus[i];
            let s = sample_objective(objective.objective_kind, r, &*policy, refs[i], beta, T::of(f), alpha)?;
            loss += s.breakdown.loss;
            margin += beta * (s.breakdown.chosen_logratio - s.breakdown.rejected_logratio);
            chosen_lp += s.chosen_logprob;
            tokens += r.chosen.len();
            grad.add_scaled(&s.grad, scale);
        }
        let loss = (loss * scale).as_f64();
        if !loss.is_finite() {
            return Err(Error::numeric(format!("non-finite loss at step {step}")));
        }
        let per_token = chosen_lp.as_f64() / tokens.max(1) as f64;
        if per_token < collapse_bound {
            return Err(Error::Collapse {
                step,
                mean_token_logprob: per_token,
                bound: collapse_bound,
            });
        }
        metrics.push(MetricsRow {
            step,
            loss,
            f_value: f,
            mean_margin: (margin * scale).as_f64(),
        });
        apply(policy, &mut state, &grad, &stage.optimizer, step)?;
        observer(step, policy)?;
    }
    Ok(metrics)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::TokenSeq;
    use crate::objectives::{objective_gradient, ScheduleConfig};
    use crate::policy::{grad_logprob, LogLinearPolicy, TabularPolicy};
    use rand::Rng;

    fn sgd(lr: f64, batch: usize, epochs: usize) -> StageConfig {
        StageConfig {
            optimizer: OptimizerConfig::sgd(lr),
            batch_size: batch,
            epochs,
        }
    }

    fn random_set(rng: &mut ChaCha8Rng, v: u32, n: usize, len: usize) -> Vec<PreferenceTriple> {
        (0..n as u64)
            .map(|i| {
                let c: Vec<u32> = (0..len).map(|_| rng.gen_range(0..v)).collect();
                let r = c.iter().map(|&t| if rng.gen::<f64>() < 0.7 { t } else { rng.gen_range(0..v) }).collect();
                PreferenceTriple::new(i, TokenSeq(vec![rng.gen_range(0..v)]), TokenSeq(c), TokenSeq(r))
            })
            .collect()
    }

    #[test]
    fn sft_zero_lr_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let data = random_set(&mut rng, 6, 10, 4);
        let mut p = LogLinearPolicy::<f64>::zeros(6, 16, 1).unwrap();
        let before = p.clone();
        train_sft(&mut p, &data, &sgd(0.0, 3, 2), 1).unwrap();
        assert_eq!(p, before);
        let mut cfg = sgd(0.0, 3, 2);
        cfg.optimizer = OptimizerConfig::adam(0.0);
        train_sft(&mut p, &data, &cfg, 1).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn sft_single_sgd_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data = random_set(&mut rng, 5, 7, 3);
        let mut p = TabularPolicy::<f64>::uniform(5, 1, 2).unwrap();
        let mut want = p.params().as_slice().to_vec();
        for r in &data {
            let g = grad_logprob(&p, &r.prompt, &r.chosen).unwrap();
            for (w, gi) in want.iter_mut().zip(g) {
                *w += 0.5 * gi / 7.0;
            }
        }
        train_sft(&mut p, &data, &sgd(0.5, 7, 1), 3).unwrap();
        for (a, b) in p.params().as_slice().iter().zip(&want) {
            assert!((a - b).abs() <= 1e-14);
        }
    }

    #[test]
    fn sft_recovers_tabular_frequencies() {
        // order-1 tabular model: the maximum-likelihood solution is the
        // empirical next-token distribution of every context
        let v = 4usize;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let probs = [[0.7, 0.1, 0.1, 0.1], [0.25, 0.25, 0.4, 0.1], [0.1, 0.2, 0.3, 0.4], [0.5, 0.5, 0.0, 0.0], [0.2, 0.2, 0.2, 0.4]];
        let draw = |rng: &mut ChaCha8Rng, p: &[f64; 4]| {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            for (i, q) in p.iter().enumerate() {
                acc += q;
                if u < acc {
                    return i as u32;
                }
            }
            3
        };
        let data: Vec<_> = (0..300u64)
            .map(|i| {
                let mut seq = vec![draw(&mut rng, &probs[4])];
                for _ in 0..5 {
                    let prev = *seq.last().unwrap() as usize;
                    seq.push(draw(&mut rng, &probs[prev]));
                }
                PreferenceTriple::new(i, TokenSeq(vec![0]), TokenSeq(seq), TokenSeq(vec![0]))
            })
            .collect();
        let mut counts = vec![[0.0f64; 4]; v + 1];
        for r in &data {
            let t = r.chosen.tokens();
            counts[v][t[0] as usize] += 1.0;
            for w in t.windows(2) {
                counts[w[0] as usize][w[1] as usize] += 1.0;
            }
        }
        let mut p = TabularPolicy::<f64>::uniform(v, 1, 1).unwrap();
        let stage = StageConfig {
            optimizer: OptimizerConfig::adam(0.05),
            batch_size: 300,
            epochs: 1500,
        };
        train_sft(&mut p, &data, &stage, 0).unwrap();
        for (ctx, c) in counts.iter().enumerate() {
            let total: f64 = c.iter().sum();
            let prefix: Vec<u32> = if ctx == v { vec![] } else { vec![ctx as u32] };
            let lp = crate::policy::next_token_logprobs(&p, &TokenSeq(vec![0]), &prefix);
            let tv: f64 = (0..v).map(|k| (lp[k].exp() - c[k] / total).abs()).sum::<f64>() / 2.0;
            assert!(tv <= 0.02, "context {ctx}: tv {tv}");
        }
    }

    fn po_settings<'a>(stage: &'a StageConfig, objective: &'a ObjectiveConfig) -> PoSettings<'a> {
        PoSettings {
            stage,
            objective,
            seed: 5,
            collapse_bound: -100.0,
        }
    }

    #[test]
    fn po_full_batch_sgd_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data = random_set(&mut rng, 6, 9, 4);
        let mut p = LogLinearPolicy::<f64>::zeros(6, 16, 1).unwrap();
        p.params_mut().as_mut_slice().iter_mut().for_each(|w| *w = rng.gen::<f64>() - 0.5);
        let reference = FrozenPolicy::new(LogLinearPolicy::<f64>::zeros(6, 16, 1).unwrap());
        let objective = ObjectiveConfig {
            objective_kind: ObjectiveKind::DpoShift,
            beta: 0.5,
            alpha: 0.0,
            schedule: ScheduleConfig::fixed(0.8),
        };
        let mut want = p.params().as_slice().to_vec();
        for r in &data {
            let g = objective_gradient(r, &p, &reference, 0.5, 0.8).unwrap();
            for (w, gi) in want.iter_mut().zip(g) {
                *w -= 0.1 * gi / 9.0;
            }
        }
        let stage = sgd(0.1, 9, 1);
        let m = train_po(&mut p, &reference, &data, po_settings(&stage, &objective)).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].f_value, 0.8);
        for (a, b) in p.params().as_slice().iter().zip(&want) {
            assert!((a - b).abs() <= 1e-14);
        }
    }

    #[test]
    fn po_shift_at_one_matches_dpo() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let data = random_set(&mut rng, 6, 20, 5);
        let start = LogLinearPolicy::<f64>::zeros(6, 16, 1).unwrap();
        let reference = FrozenPolicy::new(start.clone());
        let stage = StageConfig {
            optimizer: OptimizerConfig::adam(0.01),
            batch_size: 6,
            epochs: 2,
        };
        let shift = ObjectiveConfig {
            objective_kind: ObjectiveKind::DpoShift,
            beta: 0.1,
            alpha: 0.0,
            schedule: ScheduleConfig::fixed(1.0),
        };
        let dpo = ObjectiveConfig {
            objective_kind: ObjectiveKind::Dpo,
            ..shift.clone()
        };
        let (mut a, mut b) = (start.clone(), start);
        let ma = train_po(&mut a, &reference, &data, po_settings(&stage, &shift)).unwrap();
        let mb = train_po(&mut b, &reference, &data, po_settings(&stage, &dpo)).unwrap();
        assert_eq!(ma, mb);
        assert_eq!(a, b);
        assert_eq!(ma.len(), 8);
    }

    #[test]
    fn po_schedule_is_logged() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let data = random_set(&mut rng, 6, 12, 3);
        let mut p = LogLinearPolicy::<f64>::zeros(6, 16, 1).unwrap();
        let reference = FrozenPolicy::new(p.clone());
        let objective = ObjectiveConfig {
            objective_kind: ObjectiveKind::DpoShift,
            beta: 0.1,
            alpha: 0.0,
            schedule: ScheduleConfig {
                strategy: crate::objectives::Strategy::LinearIncrease,
                lambda_min: 0.5,
                lambda_max: 1.0,
            },
        };
        let stage = sgd(0.01, 4, 1);
        let m = train_po(&mut p, &reference, &data, po_settings(&stage, &objective)).unwrap();
        let fs: Vec<f64> = m.iter().map(|r| r.f_value).collect();
        assert_eq!(fs, vec![0.5, 0.75, 1.0]);
        // first step at the reference: loss ln 2, margin 0
        assert!((m[0].loss - std::f64::consts::LN_2).abs() <= 1e-12);
        assert_eq!(m[0].mean_margin, 0.0);
    }

    #[test]
    fn collapse_is_detected() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let data = random_set(&mut rng, 6, 12, 3);
        let mut p = LogLinearPolicy::<f64>::zeros(6, 16, 1).unwrap();
        let reference = FrozenPolicy::new(p.clone());
        let objective = ObjectiveConfig::default();
        let stage = sgd(0.01, 4, 1);
        let mut settings = po_settings(&stage, &objective);
        // uniform over 6 tokens sits at -ln 6 per token
        settings.collapse_bound = -1.0;
        let err = train_po(&mut p, &reference, &data, settings).unwrap_err();
        assert!(matches!(err, Error::Collapse { step: 0, .. }));
    }

    #[test]
    fn reference_is_untouched() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let data = random_set(&mut rng, 6, 12, 3);
        let mut p = LogLinearPolicy::<f64>::zeros(6, 16, 1).unwrap();
        let reference = FrozenPolicy::new(p.clone());
        let before: Vec<_> = data.iter().map(|r| ref_logprobs(r, &reference).unwrap()).collect();
        let objective = ObjectiveConfig::default();
        let stage = StageConfig { optimizer: OptimizerConfig::adam(0.05), batch_size: 4, epochs: 3 };
        train_po(&mut p, &reference, &data, po_settings(&stage, &objective)).unwrap();
        let after: Vec<_> = data.iter().map(|r| ref_logprobs(r, &reference).unwrap()).collect();
        assert_eq!(before, after);
        assert_ne!(p.params(), reference.inner().params());
    }
}
