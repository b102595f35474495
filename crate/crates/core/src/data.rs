//! Token sequences, preference triples, dataset validation and the JSON-lines
//! dataset format.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = u32;

/// Ordered list of dense token ids.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSeq(pub Vec<TokenId>);

impl TokenSeq {
    pub fn new(tokens: Vec<TokenId>) -> Self {
        TokenSeq(tokens)
    }

    pub fn empty() -> Self {
        TokenSeq(Vec::new())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.0
    }

    /// First token id `>= vocab_size`, if any.
    pub fn first_out_of_vocab(&self, vocab_size: usize) -> Option<TokenId> {
        self.0.iter().copied().find(|&t| t as usize >= vocab_size)
    }
}

impl From<Vec<TokenId>> for TokenSeq {
    fn from(v: Vec<TokenId>) -> Self {
        TokenSeq(v)
    }
}

/// One `(prompt, chosen, rejected)` record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferenceTriple {
    pub id: u64,
    pub prompt: TokenSeq,
    pub chosen: TokenSeq,
    pub rejected: TokenSeq,
}

impl PreferenceTriple {
    pub fn new(id: u64, prompt: TokenSeq, chosen: TokenSeq, rejected: TokenSeq) -> Self {
        PreferenceTriple {
            id,
            prompt,
            chosen,
            rejected,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Field {
    Prompt,
    Chosen,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    OutOfVocab {
        record: u64,
        field: Field,
        token: TokenId,
    },
    EmptyResponse {
        record: u64,
        field: Field,
    },
    DuplicateId {
        record: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub records: usize,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn validate_dataset(records: &[PreferenceTriple], vocab_size: usize) -> ValidationReport {
    let mut violations = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for r in records {
        if !seen.insert(r.id) {
            violations.push(Violation::DuplicateId { record: r.id });
        }
        for (field, seq) in [
            (Field::Prompt, &r.prompt),
            (Field::Chosen, &r.chosen),
            (Field::Rejected, &r.rejected),
        ] {
            if field != Field::Prompt && seq.is_empty() {
                violations.push(Violation::EmptyResponse {
                    record: r.id,
                    field,
                });
            }
            for &t in seq.tokens() {
                if t as usize >= vocab_size {
                    violations.push(Violation::OutOfVocab {
                        record: r.id,
                        field,
                        token: t,
                    });
                }
            }
        }
    }
    ValidationReport {
        records: records.len(),
        violations,
    }
}

pub fn write_jsonl(path: &Path, records: &[PreferenceTriple]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::parse(path, e))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl(path: &Path) -> Result<Vec<PreferenceTriple>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PreferenceTriple = serde_json::from_str(&line)
            .map_err(|e| Error::parse(path, format!("line {}: {e}", n + 1)))?;
        out.push(rec);
    }
    Ok(out)
}
