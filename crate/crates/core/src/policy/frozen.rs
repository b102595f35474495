use crate::data::{TokenId, TokenSeq};
use crate::scalar::Scalar;

use super::{Policy, PolicyParams};

/// Immutable snapshot used as the reference model. It implements only the
/// read-only [`Policy`] trait, so it cannot be handed to an optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenPolicy<P> {
    inner: P,
}

impl<P> FrozenPolicy<P> {
    pub fn new(policy: P) -> Self {
        FrozenPolicy { inner: policy }
    }

    pub fn inner(&self) -> &P {
        &self.inner
    }
}

impl<P: Clone> FrozenPolicy<P> {
    /// Mutable copy of the snapshot, e.g. to initialise the trained policy.
    pub fn thaw(&self) -> P {
        self.inner.clone()
    }
}

impl<T: Scalar, P: Policy<T>> Policy<T> for FrozenPolicy<P> {
    fn vocab_size(&self) -> usize {
        self.inner.vocab_size()
    }

    fn params(&self) -> &PolicyParams<T> {
        self.inner.params()
    }

    fn features(&self, prompt: &TokenSeq, prefix: &[TokenId], out: &mut Vec<(usize, T)>) {
        self.inner.features(prompt, prefix, out)
    }
}
