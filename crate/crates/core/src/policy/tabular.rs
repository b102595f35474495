use crate::data::{TokenId, TokenSeq};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::hashing::{bucket, prompt_key};
use super::{padded_context, Policy, PolicyParams, TrainablePolicy};

pub const MAX_ORDER: usize = 3;

/// One free logit vector per context, where a context is the prompt bucket
/// plus the last `order` response tokens (padded with a start symbol).
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy<T> {
    vocab: usize,
    order: usize,
    prompt_buckets: usize,
    params: PolicyParams<T>,
}

impl<T: Scalar> TabularPolicy<T> {
    pub fn num_contexts(vocab: usize, order: usize, prompt_buckets: usize) -> usize {
        prompt_buckets * (vocab + 1).pow(order as u32)
    }

    pub fn uniform(vocab: usize, order: usize, prompt_buckets: usize) -> Result<Self> {
        Self::validate(vocab, order, prompt_buckets)?;
        let rows = Self::num_contexts(vocab, order, prompt_buckets);
        Ok(TabularPolicy {
            vocab,
            order,
            prompt_buckets,
            params: PolicyParams::zeros(rows, vocab)?,
        })
    }

    pub fn from_params(
        vocab: usize,
        order: usize,
        prompt_buckets: usize,
        params: PolicyParams<T>,
    ) -> Result<Self> {
        Self::validate(vocab, order, prompt_buckets)?;
        let rows = Self::num_contexts(vocab, order, prompt_buckets);
        if params.rows() != rows || params.vocab() != vocab {
            return Err(Error::domain(format!(
                "tabular layout needs {rows}x{vocab} parameters, got {}x{}",
                params.rows(),
                params.vocab()
            )));
        }
        Ok(TabularPolicy {
            vocab,
            order,
            prompt_buckets,
            params,
        })
    }

    fn validate(vocab: usize, order: usize, prompt_buckets: usize) -> Result<()> {
        if vocab < 1 {
            return Err(Error::domain("vocabulary must be non-empty"));
        }
        if order > MAX_ORDER {
            return Err(Error::domain(format!("context order {order} exceeds {MAX_ORDER}")));
        }
        if prompt_buckets == 0 {
            return Err(Error::domain("prompt_buckets must be at least 1"));
        }
        Ok(())
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn prompt_buckets(&self) -> usize {
        self.prompt_buckets
    }

    pub fn prompt_bucket(&self, prompt: &TokenSeq) -> usize {
        bucket(prompt_key(prompt), self.prompt_buckets)
    }

    /// Row of the parameter matrix used after `prefix`.
    pub fn context_row(&self, prompt: &TokenSeq, prefix: &[TokenId]) -> usize {
        let base = self.vocab + 1;
        let pad = self.vocab as TokenId;
        let ctx = padded_context(prefix, self.order, pad).fold(0usize, |acc, t| acc * base + t as usize);
        self.prompt_bucket(prompt) * base.pow(self.order as u32) + ctx
    }
}

impl<T: Scalar> Policy<T> for TabularPolicy<T> {
    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn params(&self) -> &PolicyParams<T> {
        &self.params
    }

    fn features(&self, prompt: &TokenSeq, prefix: &[TokenId], out: &mut Vec<(usize, T)>) {
        out.clear();
        out.push((self.context_row(prompt, prefix), T::one()));
    }
}

impl<T: Scalar> TrainablePolicy<T> for TabularPolicy<T> {
    fn params_mut(&mut self) -> &mut PolicyParams<T> {
        &mut self.params
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn context_rows_are_distinct_and_in_range() {
        let p = TabularPolicy::<f64>::uniform(3, 2, 2).unwrap();
        let prompt = TokenSeq(vec![1]);
        let mut seen = std::collections::BTreeSet::new();
        let prefixes: Vec<Vec<u32>> = vec![vec![], vec![0], vec![1], vec![0, 1], vec![1, 0], vec![2, 2, 2]];
        for pre in &prefixes {
            let r = p.context_row(&prompt, pre);
            assert!(r < p.params().rows());
            seen.insert(r);
        }
        assert_eq!(seen.len(), prefixes.len());
        assert_eq!(p.context_row(&prompt, &[2, 0, 1]), p.context_row(&prompt, &[0, 1]));
    }

    #[test]
    fn order_zero_has_one_context_per_bucket() {
        let p = TabularPolicy::<f64>::uniform(4, 0, 1).unwrap();
        assert_eq!(p.params().rows(), 1);
        assert_eq!(p.context_row(&TokenSeq(vec![3]), &[1, 2]), 0);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(TabularPolicy::<f64>::uniform(4, 4, 1).is_err());
        assert!(TabularPolicy::<f64>::uniform(4, 1, 0).is_err());
        let params = PolicyParams::<f64>::zeros(3, 4).unwrap();
        assert!(TabularPolicy::from_params(4, 1, 1, params).is_err());
    }
}
