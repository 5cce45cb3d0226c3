//! Entity-based hard attention: reduce noisy free text to the medical
//! entity spans that matter before encoding.
//!
//! The extractor here is a gazetteer (dictionary) matcher: greedy
//! longest-match-first over the tokenized text, case-insensitive, no
//! overlapping spans. A wire-compatible client for a remote extraction
//! service lives in [`crate::remote`].

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::token::{tokenize, tokenize_with_offsets, TokenSequence};
use crate::{Error, Result};

/// The eight entity types whose spans are kept when building a DMP.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum EntityType {
    DxName,
    TreatmentName,
    SystemOrganSite,
    Swap,
    GenericName,
    ProcedureName,
    BrandName,
    TestName,
}

impl EntityType {
    pub const ALL: [EntityType; 8] = [
        EntityType::DxName,
        EntityType::TreatmentName,
        EntityType::SystemOrganSite,
        EntityType::Swap,
        EntityType::GenericName,
        EntityType::ProcedureName,
        EntityType::BrandName,
        EntityType::TestName,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            EntityType::DxName => "dx_name",
            EntityType::TreatmentName => "treatment_name",
            EntityType::SystemOrganSite => "system_organ_site",
            EntityType::Swap => "swap",
            EntityType::GenericName => "generic_name",
            EntityType::ProcedureName => "procedure_name",
            EntityType::BrandName => "brand_name",
            EntityType::TestName => "test_name",
        }
    }
}

impl fmt::Display for EntityType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EntityType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .find(|t| t.as_str() == s)
            .copied()
            .ok_or_else(|| Error::UnknownEntityType(s.to_string()))
    }
}

/// One extracted entity: the exact source slice plus its `[start, end)`
/// character offsets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntitySpan {
    pub text: String,
    pub etype: EntityType,
    pub start: usize,
    pub end: usize,
}

impl EntitySpan {
    /// The span's tokens joined by single spaces — the form used for
    /// deduplication and entity-set comparisons.
    pub fn normalized_phrase(&self) -> String {
        tokenize(&self.text).joined()
    }
}

/// A phrase dictionary mapping lowercase, single-spaced phrases to entity
/// types. Immutable once built; extraction is pure and thread-safe.
#[derive(Debug, Clone, Default)]
pub struct Gazetteer {
    phrases: HashMap<String, EntityType>,
    max_tokens: usize,
}

impl Gazetteer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts one phrase, normalizing it to lowercase single-spaced token
    /// form. The first insertion wins on duplicates.
    pub fn insert(&mut self, phrase: &str, etype: EntityType) -> Result<()> {
        let toks = tokenize(phrase);
        if toks.is_empty() {
            return Err(Error::InvalidGazetteerEntry {
                line: 0,
                reason: format!("phrase {phrase:?} has no tokens"),
            });
        }
        let normalized = toks.joined();
        if self.phrases.contains_key(&normalized) {
            warn!("duplicate gazetteer phrase {normalized:?}; keeping first");
            return Ok(());
        }
        self.max_tokens = self.max_tokens.max(toks.len());
        self.phrases.insert(normalized, etype);
        Ok(())
    }

    pub fn from_entries<'a, I>(entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a str, EntityType)>,
    {
        let mut gaz = Self::new();
        for (phrase, etype) in entries {
            gaz.insert(phrase, etype)?;
        }
        Ok(gaz)
    }

    /// Loads a JSONL file of `{"phrase": ..., "type": ...}` lines. Blank
    /// lines are skipped.
    pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Self> {
        #[derive(Deserialize)]
        struct Entry {
            phrase: String,
            #[serde(rename = "type")]
            etype: EntityType,
        }
        let reader = BufReader::new(std::fs::File::open(path)?);
        let mut gaz = Self::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: Entry =
                serde_json::from_str(&line).map_err(|e| Error::InvalidGazetteerEntry {
                    line: idx + 1,
                    reason: e.to_string(),
                })?;
            gaz.insert(&entry.phrase, entry.etype)
                .map_err(|e| Error::InvalidGazetteerEntry {
                    line: idx + 1,
                    reason: e.to_string(),
                })?;
        }
        Ok(gaz)
    }

    pub fn lookup(&self, normalized_phrase: &str) -> Option<EntityType> {
        self.phrases.get(normalized_phrase).copied()
    }

    pub fn len(&self) -> usize {
        self.phrases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phrases.is_empty()
    }
}

/// Scans the tokenized text left to right, matching the longest gazetteer
/// phrase at each position. Matched tokens are consumed, so spans never
/// overlap; output is in source order.
pub fn extract_entities(text: &str, gaz: &Gazetteer) -> Vec<EntitySpan> {
    if gaz.is_empty() {
        return Vec::new();
    }
    let toks = tokenize_with_offsets(text);
    let chars: Vec<char> = text.chars().collect();
    let mut spans = Vec::new();
    let mut i = 0;
    while i < toks.len() {
        let longest = gaz.max_tokens.min(toks.len() - i);
        let mut matched = 0;
        let mut etype = None;
        for len in (1..=longest).rev() {
            let phrase = toks[i..i + len]
                .iter()
                .map(|(t, _, _)| t.as_str())
                .collect::<Vec<_>>()
                .join(" ");
            if let Some(t) = gaz.lookup(&phrase) {
                matched = len;
                etype = Some(t);
                break;
            }
        }
        match etype {
            Some(etype) => {
                let start = toks[i].1;
                let end = toks[i + matched - 1].2;
                spans.push(EntitySpan {
                    text: chars[start..end].iter().collect(),
                    etype,
                    start,
                    end,
                });
                i += matched;
            }
            None => i += 1,
        }
    }
    spans
}

/// Builds a DMP from free text: the tokens of every extracted span whose
/// type is in `allowed`, concatenated in source order. Exact-duplicate
/// phrases are dropped after their first occurrence; near-duplicates
/// ("cough", "coughing") survive. An empty result means the text carried no
/// usable entities and the caller decides what to do with the record.
pub fn build_dmp(text: &str, gaz: &Gazetteer, allowed: &BTreeSet<EntityType>) -> TokenSequence {
    debug_assert!(!allowed.is_empty(), "allowed entity-type set is empty");
    let mut seen = HashSet::new();
    let mut tokens: Vec<String> = Vec::new();
    for span in extract_entities(text, gaz) {
        if !allowed.contains(&span.etype) {
            continue;
        }
        let phrase = span.normalized_phrase();
        if !seen.insert(phrase.clone()) {
            continue;
        }
        tokens.extend(phrase.split(' ').map(str::to_string));
    }
    TokenSequence::from_tokens(tokens).expect("normalized phrases contain valid tokens")
}

/// Draws a random contiguous n-gram from the text: n uniform on `{1..5}`
/// (clamped to the token count), then a uniform start position. The
/// baseline DMP generator used to measure what entity attention buys.
pub fn random_ngram_dmp(text: &str, rng: &mut impl Rng) -> Result<TokenSequence> {
    let toks = tokenize(text);
    if toks.is_empty() {
        return Err(Error::EmptyNgramSource);
    }
    let n = rng.gen_range(1..=5usize).min(toks.len());
    let start = rng.gen_range(0..=toks.len() - n);
    TokenSequence::from_tokens(toks.tokens()[start..start + n].to_vec())
}
