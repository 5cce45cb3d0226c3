//! Versioned binary model checkpoints.
//!
//! Layout (all integers little-endian u32, all floats little-endian f64):
//!
//! ```text
//! "MIM1"                                  magic
//! dim                                     embedding dimension
//! per tower (query, then candidate):
//!   num_filters, window
//!   weights        num_filters * window * dim floats, row-major
//!   biases         num_filters floats
//! query_table_hash      32 bytes (sha-256 of the embedding source)
//! candidate_table_hash  32 bytes
//! ```
//!
//! The trailing hashes tie a checkpoint to the embedding files it was
//! trained against; loading verifies them so a model is never silently
//! paired with the wrong vectors.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use ndarray::{Array1, Array2};

use crate::embedding::EmbeddingTable;
use crate::encoder::{ConvTower, ModelParams};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"MIM1";

/// Writes `model` to `path` in the checkpoint format above.
pub fn save(model: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    write_u32(&mut w, model.dim as u32)?;
    for tower in [&model.query_tower, &model.candidate_tower] {
        write_u32(&mut w, tower.num_filters as u32)?;
        write_u32(&mut w, tower.window as u32)?;
        for v in tower.weights.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in tower.biases.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.write_all(model.query_table.content_hash())?;
    w.write_all(model.candidate_table.content_hash())?;
    w.flush()?;
    Ok(())
}

/// Reads a checkpoint and pairs it with the given embedding tables,
/// verifying dimensions and content hashes.
pub fn load(
    path: impl AsRef<Path>,
    query_table: Arc<EmbeddingTable>,
    candidate_table: Arc<EmbeddingTable>,
) -> Result<ModelParams> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::CorruptCheckpoint("file too short for magic".into()))?;
    if &magic != MAGIC {
        return Err(Error::BadMagic);
    }
    let dim = read_u32(&mut r)? as usize;
    if dim == 0 {
        return Err(Error::CorruptCheckpoint("zero embedding dimension".into()));
    }
    let towers: Vec<ConvTower> = (0..2)
        .map(|_| read_tower(&mut r, dim))
        .collect::<Result<_>>()?;
    let mut hashes = [[0u8; 32]; 2];
    for h in &mut hashes {
        r.read_exact(h)
            .map_err(|_| Error::CorruptCheckpoint("missing embedding hashes".into()))?;
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::CorruptCheckpoint("trailing bytes".into()));
    }

    if query_table.dimension() != dim || candidate_table.dimension() != dim {
        return Err(Error::DimensionMismatch {
            what: "embedding tables supplied at load".into(),
            dim,
        });
    }
    if query_table.content_hash() != &hashes[0] {
        return Err(Error::EmbeddingProvenance { side: "query" });
    }
    if candidate_table.content_hash() != &hashes[1] {
        return Err(Error::EmbeddingProvenance { side: "candidate" });
    }

    let mut towers = towers.into_iter();
    let query_tower = towers.next().expect("two towers read");
    let candidate_tower = towers.next().expect("two towers read");
    ModelParams::new(query_tower, candidate_tower, query_table, candidate_table)
}

fn read_tower(r: &mut impl Read, dim: usize) -> Result<ConvTower> {
    let num_filters = read_u32(r)? as usize;
    let window = read_u32(r)? as usize;
    if num_filters == 0 || window == 0 {
        return Err(Error::CorruptCheckpoint(
            "tower with zero filters or zero window".into(),
        ));
    }
    let cols = window * dim;
    let mut weights = Vec::with_capacity(num_filters * cols);
    for _ in 0..num_filters * cols {
        weights.push(read_f64(r)?);
    }
    let mut biases = Vec::with_capacity(num_filters);
    for _ in 0..num_filters {
        biases.push(read_f64(r)?);
    }
    let weights = Array2::from_shape_vec((num_filters, cols), weights)
        .map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
    ConvTower::new(window, weights, Array1::from(biases))
}

fn write_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|_| Error::CorruptCheckpoint("unexpected end of file".into()))?;
    Ok(u32::from_le_bytes(buf))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)
        .map_err(|_| Error::CorruptCheckpoint("unexpected end of file".into()))?;
    let v = f64::from_le_bytes(buf);
    if !v.is_finite() {
        return Err(Error::NonFinite("checkpoint parameter"));
    }
    Ok(v)
}
