//! Embedding-table ingestion and sequence-to-matrix lookup.
//!
//! Tables are loaded once from word2vec text files and are immutable
//! afterwards, so they can be shared across threads behind an `Arc`. Both
//! towers read from a table; nothing ever writes one.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use log::warn;
use ndarray::Array2;
use sha2::{Digest, Sha256};

use crate::token::TokenSequence;
use crate::{Error, Result};

/// What vector unknown tokens resolve to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OovPolicy {
    /// All-zeros: unknown words contribute nothing to cosine similarity.
    #[default]
    Zeros,
    /// Mean of all stored vectors.
    MeanOfVectors,
}

/// Frozen pretrained word vectors keyed by token.
///
/// Lookup is total: unknown tokens resolve to the OOV vector. The content
/// hash identifies the source bytes so checkpoints can verify at load time
/// that they are paired with the embeddings they were trained against.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    dim: usize,
    entries: HashMap<String, Vec<f64>>,
    oov: Vec<f64>,
    content_hash: [u8; 32],
}

impl EmbeddingTable {
    /// Loads a word2vec text file ("count dim" header, then one
    /// space-separated "token v1 .. v_dim" row per line) with the all-zeros
    /// OOV policy.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::load_with(path, OovPolicy::Zeros)
    }

    /// Loads a word2vec text file with an explicit OOV policy.
    pub fn load_with(path: impl AsRef<Path>, policy: OovPolicy) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let content_hash: [u8; 32] = Sha256::digest(&bytes).into();
        let text = String::from_utf8_lossy(&bytes);
        Self::parse(&text, policy, content_hash)
    }

    fn parse(text: &str, policy: OovPolicy, content_hash: [u8; 32]) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| Error::MalformedHeader {
            header: String::new(),
        })?;
        let mut fields = header.split_whitespace();
        let (count, dim) = match (
            fields.next().and_then(|s| s.parse::<usize>().ok()),
            fields.next().and_then(|s| s.parse::<usize>().ok()),
            fields.next(),
        ) {
            (Some(count), Some(dim), None) if dim >= 1 => (count, dim),
            _ => {
                return Err(Error::MalformedHeader {
                    header: header.to_string(),
                })
            }
        };

        let mut entries = HashMap::with_capacity(count);
        let mut rows_read = 0usize;
        for (idx, line) in lines {
            if rows_read == count {
                break;
            }
            let line_no = idx + 1; // 1-based, header is line 1
            let mut fields = line.split_whitespace();
            let token = match fields.next() {
                Some(t) => t,
                None => return Err(Error::EmptyToken { line: line_no }),
            };
            let mut vector = Vec::with_capacity(dim);
            for field in fields {
                let value: f64 = field.parse().map_err(|_| Error::NonNumeric {
                    line: line_no,
                    value: field.to_string(),
                })?;
                if !value.is_finite() {
                    return Err(Error::NonNumeric {
                        line: line_no,
                        value: field.to_string(),
                    });
                }
                vector.push(value);
            }
            if vector.len() != dim {
                return Err(Error::RowArity {
                    line: line_no,
                    expected: dim,
                    found: vector.len(),
                });
            }
            rows_read += 1;
            if entries.contains_key(token) {
                warn!("duplicate embedding token {token:?} at line {line_no}; keeping first");
                continue;
            }
            entries.insert(token.to_string(), vector);
        }
        if rows_read != count {
            return Err(Error::TruncatedEmbeddings {
                declared: count,
                found: rows_read,
            });
        }

        Self::finish(dim, entries, policy, content_hash)
    }

    /// Builds a table directly from `(token, vector)` pairs. The content
    /// hash is computed over a canonical serialization (sorted tokens), so
    /// equal tables hash equally regardless of insertion order.
    pub fn from_entries<I>(dim: usize, pairs: I, policy: OovPolicy) -> Result<Self>
    where
        I: IntoIterator<Item = (String, Vec<f64>)>,
    {
        let mut entries = HashMap::new();
        for (token, vector) in pairs {
            if token.is_empty() {
                return Err(Error::EmptyToken { line: 0 });
            }
            if vector.len() != dim {
                return Err(Error::RowArity {
                    line: 0,
                    expected: dim,
                    found: vector.len(),
                });
            }
            if vector.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("embedding vector"));
            }
            if entries.insert(token.clone(), vector).is_some() {
                warn!("duplicate embedding token {token:?}; keeping last");
            }
        }
        let mut hasher = Sha256::new();
        hasher.update(b"medrank-embeddings-v1");
        hasher.update((dim as u64).to_le_bytes());
        let mut tokens: Vec<&String> = entries.keys().collect();
        tokens.sort();
        for token in tokens {
            hasher.update(token.as_bytes());
            hasher.update([0u8]);
            for v in &entries[token] {
                hasher.update(v.to_le_bytes());
            }
        }
        let content_hash: [u8; 32] = hasher.finalize().into();
        Self::finish(dim, entries, policy, content_hash)
    }

    fn finish(
        dim: usize,
        entries: HashMap<String, Vec<f64>>,
        policy: OovPolicy,
        content_hash: [u8; 32],
    ) -> Result<Self> {
        let oov = match policy {
            OovPolicy::Zeros => vec![0.0; dim],
            OovPolicy::MeanOfVectors => {
                if entries.is_empty() {
                    return Err(Error::EmptyEmbeddingTable);
                }
                let mut mean = vec![0.0; dim];
                let n = entries.len() as f64;
                for vector in entries.values() {
                    for (m, v) in mean.iter_mut().zip(vector) {
                        *m += v / n;
                    }
                }
                mean
            }
        };
        Ok(Self {
            dim,
            entries,
            oov,
            content_hash,
        })
    }

    pub fn dimension(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.entries.contains_key(token)
    }

    /// Total lookup: unknown tokens resolve to the OOV vector.
    pub fn vector(&self, token: &str) -> &[f64] {
        self.entries.get(token).map_or(&self.oov, Vec::as_slice)
    }

    pub fn oov_vector(&self) -> &[f64] {
        &self.oov
    }

    pub fn content_hash(&self) -> &[u8; 32] {
        &self.content_hash
    }

    /// Tokens in lexicographic order (stable regardless of map layout).
    pub fn sorted_tokens(&self) -> Vec<&str> {
        let mut tokens: Vec<&str> = self.entries.keys().map(String::as_str).collect();
        tokens.sort_unstable();
        tokens
    }
}

impl fmt::Display for EmbeddingTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} vectors of dimension {}", self.entries.len(), self.dim)
    }
}

/// Looks up each token of `seq` and stacks the vectors into a
/// `max(len, min_len) x dim` matrix. Sequences shorter than `min_len` are
/// padded with the OOV vector so a convolution window of `min_len` is
/// always defined.
pub fn embed(seq: &TokenSequence, table: &EmbeddingTable, min_len: usize) -> Array2<f64> {
    assert!(min_len >= 1, "min_len must be at least 1");
    let rows = seq.len().max(min_len);
    let mut out = Array2::zeros((rows, table.dimension()));
    for (i, token) in seq.iter().enumerate() {
        out.row_mut(i)
            .iter_mut()
            .zip(table.vector(token))
            .for_each(|(o, v)| *o = *v);
    }
    for i in seq.len()..rows {
        out.row_mut(i)
            .iter_mut()
            .zip(table.oov_vector())
            .for_each(|(o, v)| *o = *v);
    }
    out
}
