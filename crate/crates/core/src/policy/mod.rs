//! Autoregressive categorical policies with exact log-probabilities and
//! parameter gradients.
//!
//! Both backends are linear in a sparse feature vector: the next-token logits
//! at a context are `sum_f value_f * W[row_f, :]` over the active feature rows.
//! A tabular policy activates exactly one row (its context index); a
//! log-linear policy activates a handful of hashed rows. Everything else
//! (log-probabilities, gradients, sampling) is shared.

mod checkpoint;
mod frozen;
mod grad;
mod hashing;
mod loglinear;
mod tabular;

pub use checkpoint::{read_checkpoint, write_checkpoint, BackendKind, CheckpointHeader};
pub use frozen::FrozenPolicy;
pub use grad::SparseGrad;
pub use hashing::{bucket, mix, prompt_key};
pub use loglinear::{LogLinearPolicy, ACTIVE_FEATURES};
pub use tabular::TabularPolicy;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{TokenId, TokenSeq};
use crate::error::{Error, Result};
use crate::math::logsumexp;
use crate::scalar::Scalar;

/// Flat parameter vector laid out as a `rows x vocab` row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams<T> {
    theta: Vec<T>,
    rows: usize,
    vocab: usize,
}

impl<T: Scalar> PolicyParams<T> {
    pub fn zeros(rows: usize, vocab: usize) -> Result<Self> {
        if rows == 0 || vocab == 0 {
            return Err(Error::domain("parameter matrix must be non-empty"));
        }
        Ok(PolicyParams {
            theta: vec![T::zero(); rows * vocab],
            rows,
            vocab,
        })
    }

    pub fn from_vec(theta: Vec<T>, rows: usize, vocab: usize) -> Result<Self> {
        if rows == 0 || vocab == 0 {
            return Err(Error::domain("parameter matrix must be non-empty"));
        }
        if theta.len() != rows * vocab {
            return Err(Error::domain(format!(
                "parameter count {} does not match layout {rows}x{vocab}",
                theta.len()
            )));
        }
        if let Some(i) = theta.iter().position(|v| !v.is_finite()) {
            return Err(Error::numeric(format!("parameter {i} is not finite")));
        }
        Ok(PolicyParams { theta, rows, vocab })
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    /// Index of the `(row, token)` coordinate in the flat vector.
    pub fn index(&self, row: usize, token: usize) -> usize {
        debug_assert!(row < self.rows && token < self.vocab);
        row * self.vocab + token
    }

    pub fn row(&self, row: usize) -> &[T] {
        &self.theta[row * self.vocab..(row + 1) * self.vocab]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.theta
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.theta
    }

    pub fn all_finite(&self) -> bool {
        self.theta.iter().all(|v| v.is_finite())
    }

    /// `theta += scale * g` for a sparse gradient.
    pub fn add_sparse(&mut self, g: &SparseGrad<T>, scale: T) {
        for (row, vals) in g.rows() {
            let base = row * self.vocab;
            for (p, &v) in self.theta[base..base + self.vocab].iter_mut().zip(vals) {
                *p += scale * v;
            }
        }
    }
}

/// Read-only view of a policy.
pub trait Policy<T: Scalar> {
    fn vocab_size(&self) -> usize;

    fn params(&self) -> &PolicyParams<T>;

    /// Active `(row, value)` feature pairs for predicting the token that
    /// follows `prefix` given `prompt`. Cleared and refilled by the callee.
    fn features(&self, prompt: &TokenSeq, prefix: &[TokenId], out: &mut Vec<(usize, T)>);

    fn dim(&self) -> usize {
        self.params().dim()
    }
}

/// A policy whose parameters may be updated in place.
pub trait TrainablePolicy<T: Scalar>: Policy<T> {
    fn params_mut(&mut self) -> &mut PolicyParams<T>;
}

impl<T: Scalar, P: Policy<T> + ?Sized> Policy<T> for &P {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }
    fn params(&self) -> &PolicyParams<T> {
        (**self).params()
    }
    fn features(&self, prompt: &TokenSeq, prefix: &[TokenId], out: &mut Vec<(usize, T)>) {
        (**self).features(prompt, prefix, out)
    }
}

/// Policy of either backend, as loaded from a config or checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyPolicy<T> {
    Tabular(TabularPolicy<T>),
    LogLinear(LogLinearPolicy<T>),
}

impl<T: Scalar> Policy<T> for AnyPolicy<T> {
    fn vocab_size(&self) -> usize {
        match self {
            AnyPolicy::Tabular(p) => p.vocab_size(),
            AnyPolicy::LogLinear(p) => p.vocab_size(),
        }
    }
    fn params(&self) -> &PolicyParams<T> {
        match self {
            AnyPolicy::Tabular(p) => p.params(),
            AnyPolicy::LogLinear(p) => p.params(),
        }
    }
    fn features(&self, prompt: &TokenSeq, prefix: &[TokenId], out: &mut Vec<(usize, T)>) {
        match self {
            AnyPolicy::Tabular(p) => p.features(prompt, prefix, out),
            AnyPolicy::LogLinear(p) => p.features(prompt, prefix, out),
        }
    }
}

impl<T: Scalar> TrainablePolicy<T> for AnyPolicy<T> {
    fn params_mut(&mut self) -> &mut PolicyParams<T> {
        match self {
            AnyPolicy::Tabular(p) => p.params_mut(),
            AnyPolicy::LogLinear(p) => p.params_mut(),
        }
    }
}

/// Backend selection as it appears in run configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicySpec {
    Tabular {
        #[serde(default = "default_order")]
        order: usize,
        #[serde(default = "default_prompt_buckets")]
        prompt_buckets: usize,
    },
    LogLinear {
        #[serde(default = "default_features")]
        features: usize,
        #[serde(default = "default_order")]
        order: usize,
    },
}

fn default_order() -> usize {
    1
}
fn default_prompt_buckets() -> usize {
    1
}
fn default_features() -> usize {
    256
}

impl Default for PolicySpec {
    fn default() -> Self {
        PolicySpec::LogLinear {
            features: default_features(),
            order: default_order(),
        }
    }
}

impl PolicySpec {
    /// Uniform policy (all-zero logits) of this shape.
    pub fn build<T: Scalar>(&self, vocab_size: usize) -> Result<AnyPolicy<T>> {
        Ok(match *self {
            PolicySpec::Tabular {
                order,
                prompt_buckets,
            } => AnyPolicy::Tabular(TabularPolicy::uniform(vocab_size, order, prompt_buckets)?),
            PolicySpec::LogLinear { features, order } => {
                AnyPolicy::LogLinear(LogLinearPolicy::zeros(vocab_size, features, order)?)
            }
        })
    }
}

fn check_tokens(seq: &TokenSeq, vocab: usize, what: &str) -> Result<()> {
    match seq.first_out_of_vocab(vocab) {
        Some(t) => Err(Error::domain(format!(
            "{what} token {t} out of vocabulary (V = {vocab})"
        ))),
        None => Ok(()),
    }
}

/// Logits at one context; `feats` is scratch space.
fn logits_at<T: Scalar, P: Policy<T> + ?Sized>(
    policy: &P,
    prompt: &TokenSeq,
    prefix: &[TokenId],
    feats: &mut Vec<(usize, T)>,
    logits: &mut [T],
) {
    policy.features(prompt, prefix, feats);
    let params = policy.params();
    logits.iter_mut().for_each(|l| *l = T::zero());
    for &(row, val) in feats.iter() {
        for (l, &w) in logits.iter_mut().zip(params.row(row)) {
            *l += val * w;
        }
    }
}

/// Next-token log-probabilities after `prefix`.
pub fn next_token_logprobs<T: Scalar, P: Policy<T> + ?Sized>(
    policy: &P,
    prompt: &TokenSeq,
    prefix: &[TokenId],
) -> Vec<T> {
    let mut feats = Vec::new();
    let mut logits = vec![T::zero(); policy.vocab_size()];
    logits_at(policy, prompt, prefix, &mut feats, &mut logits);
    let lse = logsumexp(&logits);
    logits.iter().map(|&l| l - lse).collect()
}

/// `log pi(y | x)` as a sum of per-token log-softmax terms.
pub fn logprob<T: Scalar, P: Policy<T> + ?Sized>(
    policy: &P,
    prompt: &TokenSeq,
    response: &TokenSeq,
) -> Result<T> {
    let v = policy.vocab_size();
    check_tokens(prompt, v, "prompt")?;
    check_tokens(response, v, "response")?;
    let mut feats = Vec::new();
    let mut logits = vec![T::zero(); v];
    let mut total = T::zero();
    let toks = response.tokens();
    for i in 0..toks.len() {
        logits_at(policy, prompt, &toks[..i], &mut feats, &mut logits);
        total += logits[toks[i] as usize] - logsumexp(&logits);
    }
    Ok(total)
}

/// Per-token log-probabilities of `response`.
pub fn token_logprobs<T: Scalar, P: Policy<T> + ?Sized>(
    policy: &P,
    prompt: &TokenSeq,
    response: &TokenSeq,
) -> Result<Vec<T>> {
    let v = policy.vocab_size();
    check_tokens(prompt, v, "prompt")?;
    check_tokens(response, v, "response")?;
    let mut feats = Vec::new();
    let mut logits = vec![T::zero(); v];
    let toks = response.tokens();
    Ok((0..toks.len())
        .map(|i| {
            logits_at(policy, prompt, &toks[..i], &mut feats, &mut logits);
            logits[toks[i] as usize] - logsumexp(&logits)
        })
        .collect())
}

/// `log pi(y | x)` together with its sparse parameter gradient.
///
/// The gradient of `log softmax(z)[y]` with respect to the logits is
/// `onehot(y) - softmax(z)`; each active feature row receives that vector
/// scaled by the feature value.
pub fn logprob_and_grad<T: Scalar, P: Policy<T> + ?Sized>(
    policy: &P,
    prompt: &TokenSeq,
    response: &TokenSeq,
) -> Result<(T, SparseGrad<T>)> {
    let v = policy.vocab_size();
    check_tokens(prompt, v, "prompt")?;
    check_tokens(response, v, "response")?;
    let mut feats = Vec::new();
    let mut logits = vec![T::zero(); v];
    let mut coef = vec![T::zero(); v];
    let mut total = T::zero();
    let mut grad = SparseGrad::new(v);
    let toks = response.tokens();
    for i in 0..toks.len() {
        logits_at(policy, prompt, &toks[..i], &mut feats, &mut logits);
        let lse = logsumexp(&logits);
        let y = toks[i] as usize;
        total += logits[y] - lse;
        for (c, &l) in coef.iter_mut().zip(&logits) {
            *c = -(l - lse).exp();
        }
        coef[y] += T::one();
        for &(row, val) in &feats {
            grad.add_row_scaled(row, &coef, val);
        }
    }
    Ok((total, grad))
}

/// Dense gradient of `log pi(y | x)` with respect to the flat parameters.
pub fn grad_logprob<T: Scalar, P: Policy<T> + ?Sized>(
    policy: &P,
    prompt: &TokenSeq,
    response: &TokenSeq,
) -> Result<Vec<T>> {
    let (_, g) = logprob_and_grad(policy, prompt, response)?;
    Ok(g.to_dense(policy.dim()))
}

/// Central finite-difference gradient of `logprob`, one coordinate at a time.
///
/// This is a verification oracle; it costs `2 d` log-probability
/// evaluations.
pub fn finite_diff_grad<T, P>(policy: &P, prompt: &TokenSeq, response: &TokenSeq, h: T) -> Result<Vec<T>>
where
    T: Scalar,
    P: TrainablePolicy<T> + Clone,
{
    finite_diff(policy, h, |p| logprob(p, prompt, response))
}

/// Central differences of an arbitrary scalar function of the parameters.
pub fn finite_diff<T, P, F>(policy: &P, h: T, mut f: F) -> Result<Vec<T>>
where
    T: Scalar,
    P: TrainablePolicy<T> + Clone,
    F: FnMut(&P) -> Result<T>,
{
    if h <= T::zero() || !h.is_finite() {
        return Err(Error::domain(format!("finite-difference step must be > 0, got {h}")));
    }
    let mut probe = policy.clone();
    let d = policy.dim();
    let two_h = h + h;
    let mut out = Vec::with_capacity(d);
    for j in 0..d {
        let orig = probe.params().as_slice()[j];
        probe.params_mut().as_mut_slice()[j] = orig + h;
        let up = f(&probe)?;
        probe.params_mut().as_mut_slice()[j] = orig - h;
        let down = f(&probe)?;
        probe.params_mut().as_mut_slice()[j] = orig;
        out.push((up - down) / two_h);
    }
    Ok(out)
}

/// Ancestral sampling of up to `max_len` tokens, stopping after `end_token`.
pub fn sample<T: Scalar, P: Policy<T> + ?Sized, R: Rng + ?Sized>(
    policy: &P,
    prompt: &TokenSeq,
    max_len: usize,
    end_token: Option<TokenId>,
    rng: &mut R,
) -> Result<TokenSeq> {
    if max_len == 0 {
        return Err(Error::domain("max_len must be at least 1"));
    }
    check_tokens(prompt, policy.vocab_size(), "prompt")?;
    let mut out = Vec::with_capacity(max_len);
    for _ in 0..max_len {
        let lp = next_token_logprobs(policy, prompt, &out);
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut pick = lp.len() - 1;
        for (j, l) in lp.iter().enumerate() {
            acc += l.as_f64().exp();
            if u < acc {
                pick = j;
                break;
            }
        }
        let tok = pick as TokenId;
        out.push(tok);
        if Some(tok) == end_token {
            break;
        }
    }
    Ok(TokenSeq(out))
}

/// Last `order` tokens of `prefix`, most recent first, padded with `pad`.
pub(crate) fn padded_context(prefix: &[TokenId], order: usize, pad: TokenId) -> impl Iterator<Item = TokenId> + '_ {
    let n = prefix.len();
    (0..order).map(move |j| {
        if j < n {
            prefix[n - 1 - j]
        } else {
            pad
        }
    })
}
