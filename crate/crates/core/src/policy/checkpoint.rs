//! Binary policy checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! | offset | size | field                                             |
//! |--------|------|---------------------------------------------------|
//! | 0      | 4    | magic `PSCK`                                      |
//! | 4      | 4    | format version (1)                                |
//! | 8      | 4    | backend: 0 = tabular, 1 = log-linear              |
//! | 12     | 4    | vocabulary size `V`                               |
//! | 16     | 4    | context order `k`                                 |
//! | 20     | 4    | prompt buckets (tabular) or feature dim `m`       |
//! | 24     | 8    | parameter count `d`                               |
//! | 32     | 8d   | parameters as IEEE-754 binary64                   |

use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::{AnyPolicy, LogLinearPolicy, Policy, PolicyParams, TabularPolicy};

const MAGIC: &[u8; 4] = b"PSCK";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendKind {
    Tabular,
    LogLinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CheckpointHeader {
    pub backend: BackendKind,
    pub vocab: u32,
    pub order: u32,
    pub shape: u32,
    pub dim: u64,
}

impl<T: Scalar> AnyPolicy<T> {
    pub fn header(&self) -> CheckpointHeader {
        let (backend, vocab, order, shape) = match self {
            AnyPolicy::Tabular(p) => (BackendKind::Tabular, p.vocab_size(), p.order(), p.prompt_buckets()),
            AnyPolicy::LogLinear(p) => (BackendKind::LogLinear, p.vocab_size(), p.order(), p.feature_dim()),
        };
        CheckpointHeader {
            backend,
            vocab: vocab as u32,
            order: order as u32,
            shape: shape as u32,
            dim: self.dim() as u64,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let h = self.header();
        let mut out = Vec::with_capacity(HEADER_LEN + 8 * self.dim());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let kind: u32 = match h.backend {
            BackendKind::Tabular => 0,
            BackendKind::LogLinear => 1,
        };
        out.extend_from_slice(&kind.to_le_bytes());
        out.extend_from_slice(&h.vocab.to_le_bytes());
        out.extend_from_slice(&h.order.to_le_bytes());
        out.extend_from_slice(&h.shape.to_le_bytes());
        out.extend_from_slice(&h.dim.to_le_bytes());
        for v in self.params().as_slice() {
            out.extend_from_slice(&v.as_f64().to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
            return Err(Error::domain("not a policy checkpoint"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        if u32_at(4) != VERSION {
            return Err(Error::domain(format!("unsupported checkpoint version {}", u32_at(4))));
        }
        let backend = match u32_at(8) {
            0 => BackendKind::Tabular,
            1 => BackendKind::LogLinear,
            k => return Err(Error::domain(format!("unknown backend kind {k}"))),
        };
        let vocab = u32_at(12) as usize;
        let order = u32_at(16) as usize;
        let shape = u32_at(20) as usize;
        let dim = u64::from_le_bytes(bytes[24..32].try_into().unwrap()) as usize;
        if bytes.len() != HEADER_LEN + 8 * dim {
            return Err(Error::domain(format!(
                "checkpoint declares {dim} parameters but holds {} bytes of data",
                bytes.len() - HEADER_LEN
            )));
        }
        let theta: Vec<T> = bytes[HEADER_LEN..]
            .chunks_exact(8)
            .map(|c| T::of(f64::from_le_bytes(c.try_into().unwrap())))
            .collect();
        if vocab == 0 || dim % vocab != 0 {
            return Err(Error::domain("checkpoint parameter count is not a multiple of V"));
        }
        let params = PolicyParams::from_vec(theta, dim / vocab, vocab)?;
        Ok(match backend {
            BackendKind::Tabular => AnyPolicy::Tabular(TabularPolicy::from_params(vocab, order, shape, params)?),
            BackendKind::LogLinear => AnyPolicy::LogLinear(LogLinearPolicy::from_params(vocab, shape, order, params)?),
        })
    }
}

pub fn write_checkpoint<T: Scalar>(path: &Path, policy: &AnyPolicy<T>) -> Result<()> {
    std::fs::write(path, policy.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint<T: Scalar>(path: &Path) -> Result<AnyPolicy<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    AnyPolicy::from_bytes(&bytes).map_err(|e| match e {
        Error::Domain(m) => Error::parse(path, m),
        other => other,
    })
}
