//! Multiply-shift hashing for feature indices and prompt ids.
//!
//! Keys are folded with `(acc ^ x) * K` where `K` is the 64-bit golden-ratio
//! constant, and reduced to `[0, n)` by taking the high 32 bits and scaling
//! (`(h >> 32) * n >> 32`). The scheme is fixed: changing it changes every
//! log-linear model and every checkpoint's meaning.

use crate::data::TokenSeq;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
pub fn mix(acc: u64, x: u64) -> u64 {
    let h = (acc ^ x).wrapping_mul(GOLDEN);
    h ^ (h >> 29)
}

/// Map a 64-bit hash onto `[0, n)`.
#[inline]
pub fn bucket(h: u64, n: usize) -> usize {
    (((h >> 32) * n as u64) >> 32) as usize
}

/// Hash of the full prompt token sequence.
pub fn prompt_key(prompt: &TokenSeq) -> u64 {
    prompt
        .tokens()
        .iter()
        .fold(mix(0, prompt.len() as u64), |acc, &t| mix(acc, t as u64 + 1))
}
