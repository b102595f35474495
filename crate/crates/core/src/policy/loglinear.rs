use crate::data::{TokenId, TokenSeq};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::hashing::{bucket, mix, prompt_key};
use super::{padded_context, Policy, PolicyParams, TrainablePolicy};

const TAG_PROMPT: u64 = 1;
const TAG_CONTEXT: u64 = 2;
const TAG_POSITION: u64 = 3;

/// Number of hashed features active at every position.
pub const ACTIVE_FEATURES: usize = 3;

/// Log-linear next-token model: logits are `W^T phi(x, prefix)` with `phi` a
/// sparse hashed indicator over
///
/// * the prompt,
/// * the last `order` tokens,
/// * a logarithmic position bucket.
///
/// Every feature carries value 1, so `||phi||_2 <= ACTIVE_FEATURES`
/// (equality only if all features collide).
#[derive(Debug, Clone, PartialEq)]
pub struct LogLinearPolicy<T> {
    vocab: usize,
    features: usize,
    order: usize,
    params: PolicyParams<T>,
}

impl<T: Scalar> LogLinearPolicy<T> {
    pub fn zeros(vocab: usize, features: usize, order: usize) -> Result<Self> {
        Self::validate(vocab, features, order)?;
        Ok(LogLinearPolicy {
            vocab,
            features,
            order,
            params: PolicyParams::zeros(features, vocab)?,
        })
    }

    pub fn from_params(vocab: usize, features: usize, order: usize, params: PolicyParams<T>) -> Result<Self> {
        Self::validate(vocab, features, order)?;
        if params.rows() != features || params.vocab() != vocab {
            return Err(Error::domain(format!(
                "log-linear layout needs {features}x{vocab} parameters, got {}x{}",
                params.rows(),
                params.vocab()
            )));
        }
        Ok(LogLinearPolicy {
            vocab,
            features,
            order,
            params,
        })
    }

    fn validate(vocab: usize, features: usize, order: usize) -> Result<()> {
        if vocab < 1 || features < 1 {
            return Err(Error::domain("vocabulary and feature dimension must be non-empty"));
        }
        if order < 1 || order > super::tabular::MAX_ORDER {
            return Err(Error::domain(format!("context order {order} outside 1..=3")));
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        self.features
    }

    pub fn order(&self) -> usize {
        self.order
    }

    fn position_bucket(pos: usize) -> u64 {
        // 0, 1, 2-3, 4-7, 8-15, ...
        (usize::BITS - pos.leading_zeros()) as u64
    }
}

impl<T: Scalar> Policy<T> for LogLinearPolicy<T> {
    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn params(&self) -> &PolicyParams<T> {
        &self.params
    }

    fn features(&self, prompt: &TokenSeq, prefix: &[TokenId], out: &mut Vec<(usize, T)>) {
        out.clear();
        let pk = prompt_key(prompt);
        let pad = self.vocab as TokenId;
        let ctx = padded_context(prefix, self.order, pad).fold(mix(TAG_CONTEXT, 0), |acc, t| mix(acc, t as u64));
        let keys = [
            mix(TAG_PROMPT, pk),
            ctx,
            mix(TAG_POSITION, Self::position_bucket(prefix.len())),
        ];
        for k in keys {
            out.push((bucket(k, self.features), T::one()));
        }
    }
}

impl<T: Scalar> TrainablePolicy<T> for LogLinearPolicy<T> {
    fn params_mut(&mut self) -> &mut PolicyParams<T> {
        &mut self.params
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn features_are_deterministic_and_bounded() {
        let p = LogLinearPolicy::<f64>::zeros(16, 64, 2).unwrap();
        let x = TokenSeq(vec![3, 1, 4]);
        let mut a = Vec::new();
        let mut b = Vec::new();
        for len in 0..10 {
            let prefix: Vec<u32> = (0..len).map(|i| (i * 7 % 16) as u32).collect();
            p.features(&x, &prefix, &mut a);
            p.features(&x, &prefix, &mut b);
            assert_eq!(a, b);
            assert_eq!(a.len(), ACTIVE_FEATURES);
            let mut dense = vec![0.0; 64];
            for &(r, v) in &a {
                assert!(r < 64);
                dense[r] += v;
            }
            let norm = dense.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(norm <= ACTIVE_FEATURES as f64);
        }
    }

    #[test]
    fn position_buckets_are_logarithmic() {
        let b: Vec<u64> = [0usize, 1, 2, 3, 4, 7, 8].iter().map(|&p| LogLinearPolicy::<f64>::position_bucket(p)).collect();
        assert_eq!(b, vec![0, 1, 2, 2, 3, 3, 4]);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(LogLinearPolicy::<f64>::zeros(8, 0, 1).is_err());
        assert!(LogLinearPolicy::<f64>::zeros(8, 16, 0).is_err());
        assert!(LogLinearPolicy::<f64>::zeros(8, 16, 4).is_err());
    }
}
