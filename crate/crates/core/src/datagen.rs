//! Synthetic training/evaluation data from patient-education records.
//!
//! Each corpus record pairs a medication's generic name with lay-language
//! "uses" text. Instances are built per record and per DMP derived from its
//! uses text: one positive name, `n - 1` negatives whose records share no
//! entity with the positive's record, candidate order shuffled. A DMP whose
//! negative pool is too small is skipped (and counted), never an error.
//!
//! Generation is a pure function of (corpus, n, mode, seed): records are
//! visited in corpus order and all draws come from one seeded stream, so
//! the emitted JSONL is byte-identical across runs.

use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::entity::{extract_entities, EntityType, Gazetteer};
use crate::token::{tokenize, TokenSequence};
use crate::{Error, Result};

/// Ordered (source-order, deduplicated) and set views of one record's
/// extracted entity phrases.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EntityCache {
    pub ordered: Vec<String>,
    pub set: BTreeSet<String>,
}

/// One patient-education record: the medication generic name plus its
/// "uses" description.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PemRecord {
    pub generic_name: String,
    #[serde(rename = "uses")]
    pub uses_text: String,
    #[serde(skip)]
    pub entity_cache: Option<EntityCache>,
}

impl PemRecord {
    pub fn new(generic_name: impl Into<String>, uses_text: impl Into<String>) -> Self {
        Self {
            generic_name: generic_name.into(),
            uses_text: uses_text.into(),
            entity_cache: None,
        }
    }

    fn cache(&self) -> Result<&EntityCache> {
        self.entity_cache
            .as_ref()
            .ok_or_else(|| Error::MissingEntityCache(self.generic_name.clone()))
    }
}

/// A validated record collection: generic names are non-empty and unique.
#[derive(Debug, Clone, Default)]
pub struct PemCorpus {
    records: Vec<PemRecord>,
}

impl PemCorpus {
    pub fn from_records(records: Vec<PemRecord>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for (idx, record) in records.iter().enumerate() {
            let line = idx + 1;
            if record.generic_name.trim().is_empty() {
                return Err(Error::InvalidCorpusRecord {
                    line,
                    reason: "empty generic_name".into(),
                });
            }
            if !seen.insert(record.generic_name.clone()) {
                return Err(Error::InvalidCorpusRecord {
                    line,
                    reason: format!("duplicate generic_name {:?}", record.generic_name),
                });
            }
        }
        Ok(Self { records })
    }

    /// Loads a JSONL corpus of `{"generic_name": ..., "uses": ...}` lines.
    pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Self> {
        let reader = BufReader::new(std::fs::File::open(path)?);
        let mut records = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: PemRecord =
                serde_json::from_str(&line).map_err(|e| Error::InvalidCorpusRecord {
                    line: idx + 1,
                    reason: e.to_string(),
                })?;
            records.push(record);
        }
        Self::from_records(records)
    }

    /// Extracts each record's allowed-type entity phrases once and caches
    /// them for generation.
    pub fn populate_entity_caches(&mut self, gaz: &Gazetteer, allowed: &BTreeSet<EntityType>) {
        for record in &mut self.records {
            let mut cache = EntityCache::default();
            for span in extract_entities(&record.uses_text, gaz) {
                if !allowed.contains(&span.etype) {
                    continue;
                }
                let phrase = span.normalized_phrase();
                if cache.set.insert(phrase.clone()) {
                    cache.ordered.push(phrase);
                }
            }
            record.entity_cache = Some(cache);
        }
    }

    pub fn records(&self) -> &[PemRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, generic_name: &str) -> Option<&PemRecord> {
        self.records.iter().find(|r| r.generic_name == generic_name)
    }
}

/// One `(Q, P_1..P_n, Y)` example. Exactly one label is 1 (the training
/// contract); `positive_smns` keeps every valid answer so relaxed
/// evaluation can credit any of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInstance {
    pub q: TokenSequence,
    pub candidates: Vec<TokenSequence>,
    pub labels: Vec<u8>,
    pub positive_smns: BTreeSet<String>,
}

impl DatasetInstance {
    pub fn n(&self) -> usize {
        self.candidates.len()
    }

    /// Index of the labeled positive.
    pub fn positive_index(&self) -> usize {
        self.labels
            .iter()
            .position(|&l| l == 1)
            .expect("validated instance has a positive")
    }

    pub fn validate(&self) -> Result<()> {
        if self.candidates.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "instance needs at least 2 candidates, got {}",
                self.candidates.len()
            )));
        }
        if self.labels.len() != self.candidates.len() {
            return Err(Error::InvalidArgument(format!(
                "{} labels for {} candidates",
                self.labels.len(),
                self.candidates.len()
            )));
        }
        if self.labels.iter().any(|&l| l > 1) {
            return Err(Error::InvalidArgument("labels must be 0 or 1".into()));
        }
        let positives = self.labels.iter().filter(|&&l| l == 1).count();
        if positives != 1 {
            return Err(Error::InvalidArgument(format!(
                "expected exactly one positive label, got {positives}"
            )));
        }
        Ok(())
    }
}

/// How DMPs are derived from a record's uses text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DmpMode {
    /// One DMP per extracted entity phrase.
    Entity,
    /// One random 1..5-gram per record.
    Ngram,
}

impl std::str::FromStr for DmpMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "entity" => Ok(DmpMode::Entity),
            "ngram" => Ok(DmpMode::Ngram),
            other => Err(Error::InvalidArgument(format!(
                "unknown dmp mode {other:?}; expected \"entity\" or \"ngram\""
            ))),
        }
    }
}

/// An instance plus the record it is grouped under for splitting: the
/// record whose generic name is the instance's labeled positive.
#[derive(Debug, Clone, PartialEq)]
pub struct SourcedInstance {
    pub group: String,
    pub instance: DatasetInstance,
}

/// Output of [`make_instances`].
#[derive(Debug, Clone, Default)]
pub struct GeneratedDataset {
    pub instances: Vec<SourcedInstance>,
    /// DMPs dropped because fewer than `n - 1` eligible negatives existed.
    pub skipped_dmps: usize,
}

/// All generic names of records whose uses-text entity set contains
/// `dmp_phrase`. A general phrase ("high blood pressure") maps to several
/// medications; a specific one maps to a single record.
pub fn positive_set(dmp_phrase: &str, corpus: &PemCorpus) -> Result<BTreeSet<String>> {
    let phrase = tokenize(dmp_phrase).joined();
    let mut out = BTreeSet::new();
    for record in corpus.records() {
        if record.cache()?.set.contains(&phrase) {
            out.insert(record.generic_name.clone());
        }
    }
    Ok(out)
}

/// Generic names eligible as negatives: not already positives, and whose
/// records' entity sets are disjoint from `dmp_entities`.
pub fn negative_set(
    dmp_entities: &BTreeSet<String>,
    corpus: &PemCorpus,
    positives: &BTreeSet<String>,
) -> Result<BTreeSet<String>> {
    let mut out = BTreeSet::new();
    for record in corpus.records() {
        if positives.contains(&record.generic_name) {
            continue;
        }
        if record.cache()?.set.is_disjoint(dmp_entities) {
            out.insert(record.generic_name.clone());
        }
    }
    Ok(out)
}

/// Generates instances for every record and every DMP derived from its
/// uses text. The positive is drawn uniformly from the DMP's positive set;
/// negatives are drawn uniformly without replacement from the records
/// entity-disjoint with the positive's record; candidate order is shuffled.
pub fn make_instances(
    corpus: &PemCorpus,
    n: usize,
    mode: DmpMode,
    rng: &mut impl Rng,
) -> Result<GeneratedDataset> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "instances need n >= 2 candidates, got {n}"
        )));
    }
    if corpus.len() < n {
        return Err(Error::CorpusTooSmall {
            records: corpus.len(),
            needed: n,
        });
    }

    let mut out = GeneratedDataset::default();
    for record in corpus.records() {
        let dmp_phrases: Vec<String> = match mode {
            DmpMode::Entity => record.cache()?.ordered.clone(),
            DmpMode::Ngram => match crate::entity::random_ngram_dmp(&record.uses_text, rng) {
                Ok(seq) => vec![seq.joined()],
                Err(Error::EmptyNgramSource) => Vec::new(),
                Err(e) => return Err(e),
            },
        };

        for phrase in dmp_phrases {
            let mut positives = positive_set(&phrase, corpus)?;
            if mode == DmpMode::Ngram {
                // An arbitrary n-gram usually is not an entity phrase; the
                // record it was drawn from is always a valid answer.
                positives.insert(record.generic_name.clone());
            }
            let pool: Vec<&String> = positives.iter().collect();
            let chosen = pool[rng.gen_range(0..pool.len())].clone();
            let chosen_record = corpus.get(&chosen).expect("positive name from corpus");

            let mut dmp_entities = chosen_record.cache()?.set.clone();
            dmp_entities.insert(phrase.clone());
            let eligible = negative_set(&dmp_entities, corpus, &positives)?;
            if eligible.len() < n - 1 {
                out.skipped_dmps += 1;
                continue;
            }
            let mut neg_pool: Vec<&String> = eligible.iter().collect();
            for i in 0..n - 1 {
                let j = rng.gen_range(i..neg_pool.len());
                neg_pool.swap(i, j);
            }

            let mut names: Vec<&str> = Vec::with_capacity(n);
            names.push(&chosen);
            names.extend(neg_pool[..n - 1].iter().map(|s| s.as_str()));
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(rng);

            let mut candidates = Vec::with_capacity(n);
            let mut labels = Vec::with_capacity(n);
            for &src in &order {
                candidates.push(tokenize(names[src]));
                labels.push(u8::from(src == 0));
            }

            out.instances.push(SourcedInstance {
                group: chosen,
                instance: DatasetInstance {
                    q: TokenSequence::from_tokens(phrase.split(' ').map(str::to_string))
                        .expect("normalized phrase"),
                    candidates,
                    labels,
                    positive_smns: positives,
                },
            });
        }
    }
    Ok(out)
}

/// Partitions group keys into train/heldout sets: seeded shuffle, then the
/// first `round(fraction * len)` groups train.
pub fn split_groups(
    groups: &[String],
    train_fraction: f64,
    seed: u64,
) -> Result<(BTreeSet<String>, BTreeSet<String>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidFraction(train_fraction));
    }
    let mut shuffled: Vec<&String> = groups.iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shuffled.shuffle(&mut rng);
    let n_train = ((groups.len() as f64) * train_fraction).round() as usize;
    let n_train = n_train.min(groups.len());
    let train: BTreeSet<String> = shuffled[..n_train].iter().map(|s| s.to_string()).collect();
    let heldout: BTreeSet<String> = shuffled[n_train..].iter().map(|s| s.to_string()).collect();
    Ok((train, heldout))
}

/// Splits instances by their group record so no record's instances leak
/// across the boundary: all instances grouped under one generic name land
/// on one side. Fractions are honored to within one record.
pub fn split(
    instances: &[SourcedInstance],
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<SourcedInstance>, Vec<SourcedInstance>)> {
    let mut groups: Vec<String> = Vec::new();
    for si in instances {
        if !groups.contains(&si.group) {
            groups.push(si.group.clone());
        }
    }
    let (train_groups, _) = split_groups(&groups, train_fraction, seed)?;
    let mut train = Vec::new();
    let mut heldout = Vec::new();
    for si in instances {
        if train_groups.contains(&si.group) {
            train.push(si.clone());
        } else {
            heldout.push(si.clone());
        }
    }
    Ok((train, heldout))
}

/// Writes instances as JSONL, one object per line, in the given order.
pub fn write_instances<'a, W, I>(writer: W, instances: I) -> Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a DatasetInstance>,
{
    let mut w = BufWriter::new(writer);
    for instance in instances {
        serde_json::to_writer(&mut w, instance).map_err(io_from_json)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Writes instances to a file path.
pub fn write_instances_to_path<'a, I>(path: impl AsRef<Path>, instances: I) -> Result<()>
where
    I: IntoIterator<Item = &'a DatasetInstance>,
{
    write_instances(std::fs::File::create(path)?, instances)
}

/// Reads and validates a JSONL instance file.
pub fn read_instances(path: impl AsRef<Path>) -> Result<Vec<DatasetInstance>> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let instance: DatasetInstance =
            serde_json::from_str(&line).map_err(|e| Error::InvalidDatasetLine {
                line: idx + 1,
                reason: e.to_string(),
            })?;
        instance.validate().map_err(|e| Error::InvalidDatasetLine {
            line: idx + 1,
            reason: e.to_string(),
        })?;
        out.push(instance);
    }
    Ok(out)
}

fn io_from_json(e: serde_json::Error) -> Error {
    Error::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}
