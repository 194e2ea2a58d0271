//! Snapshot persistence for a trained model.
//!
//! Layout of a snapshot directory:
//!   manifest.json    format version, hyperparameters, dimensions, CRC32s
//!   psi.bin          regression weights [consistency(6), xi(E*Z), bias]
//!   counts_ezw.bin   E x Z x W word counts
//!   trans_ee.bin     E x E transition counts
//!   assignments.bin  per-review expertise and per-token facet labels
//!   vocab.tsv        index, word, document frequency
//!
//! Binary files start with the magic "HLPS1" followed by a little-endian
//! u64 element count and the elements as little-endian 64-bit values.

use std::collections::BTreeMap;
use std::io::BufReader;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Vocabulary;
use crate::error::{CoreError, Result};
use crate::model::{Assignments, HyperParams, ModelState, PsiWeights};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 5] = b"HLPS1";

#[derive(Debug, Serialize, Deserialize)]
struct Dims {
    e_levels: usize,
    facets: usize,
    vocab_size: usize,
    n_reviews: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    hyper: HyperParams,
    dims: Dims,
    checksums: BTreeMap<String, u32>,
}

fn encode_u64s(values: &[u64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(MAGIC.len() + 8 + values.len() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn encode_f64s(values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(MAGIC.len() + 8 + values.len() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn decode_words(file: &str, bytes: &[u8]) -> Result<Vec<[u8; 8]>> {
    if bytes.len() < MAGIC.len() + 8 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(CoreError::Snapshot(format!("{file}: missing HLPS1 magic header")));
    }
    let mut count_bytes = [0u8; 8];
    count_bytes.copy_from_slice(&bytes[MAGIC.len()..MAGIC.len() + 8]);
    let count = u64::from_le_bytes(count_bytes) as usize;
    let payload = &bytes[MAGIC.len() + 8..];
    if payload.len() != count * 8 {
        return Err(CoreError::Snapshot(format!(
            "{file}: payload holds {} bytes, header promises {} elements",
            payload.len(),
            count
        )));
    }
    Ok(payload
        .chunks_exact(8)
        .map(|c| {
            let mut b = [0u8; 8];
            b.copy_from_slice(c);
            b
        })
        .collect())
}

fn decode_u64s(file: &str, bytes: &[u8]) -> Result<Vec<u64>> {
    Ok(decode_words(file, bytes)?
        .into_iter()
        .map(u64::from_le_bytes)
        .collect())
}

fn decode_f64s(file: &str, bytes: &[u8]) -> Result<Vec<f64>> {
    Ok(decode_words(file, bytes)?
        .into_iter()
        .map(f64::from_le_bytes)
        .collect())
}

fn encode_assignments(assignments: &Assignments) -> Vec<u8> {
    let n = assignments.expertise.len();
    let mut words = Vec::with_capacity(1 + 2 * n + assignments.facets.iter().map(Vec::len).sum::<usize>());
    words.push(n as u64);
    words.extend(assignments.expertise.iter().map(|&e| e as u64));
    words.extend(assignments.facets.iter().map(|f| f.len() as u64));
    for facets in &assignments.facets {
        words.extend(facets.iter().map(|&z| z as u64));
    }
    encode_u64s(&words)
}

fn decode_assignments(file: &str, bytes: &[u8], n_reviews: usize) -> Result<Assignments> {
    let words = decode_u64s(file, bytes)?;
    let shape_err = || CoreError::Snapshot(format!("{file}: truncated assignment payload"));
    let n = *words.first().ok_or_else(shape_err)? as usize;
    if n != n_reviews {
        return Err(CoreError::Snapshot(format!(
            "{file}: holds {n} reviews, manifest promises {n_reviews}"
        )));
    }
    if words.len() < 1 + 2 * n {
        return Err(shape_err());
    }
    let expertise: Vec<u32> = words[1..1 + n].iter().map(|&w| w as u32).collect();
    let lens: Vec<usize> = words[1 + n..1 + 2 * n].iter().map(|&w| w as usize).collect();
    let total: usize = lens.iter().sum();
    if words.len() != 1 + 2 * n + total {
        return Err(shape_err());
    }
    let mut facets = Vec::with_capacity(n);
    let mut offset = 1 + 2 * n;
    for len in lens {
        facets.push(words[offset..offset + len].iter().map(|&w| w as u32).collect());
        offset += len;
    }
    Ok(Assignments { facets, expertise })
}

/// Writes the state and assignments into `dir`; the round-trip through
/// `load_snapshot` is bit-exact.
pub fn save_snapshot(dir: &Path, state: &ModelState, assignments: &Assignments) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
    let mut vocab_tsv = Vec::new();
    state
        .vocab
        .write_tsv(&mut vocab_tsv)
        .map_err(|e| CoreError::io(&dir.join("vocab.tsv"), e))?;
    let files: Vec<(&str, Vec<u8>)> = vec![
        ("psi.bin", encode_f64s(&state.psi.to_flat())),
        ("counts_ezw.bin", encode_u64s(&state.word_counts)),
        ("trans_ee.bin", encode_u64s(&state.transition_counts)),
        ("assignments.bin", encode_assignments(assignments)),
        ("vocab.tsv", vocab_tsv),
    ];
    let mut checksums = BTreeMap::new();
    for (name, bytes) in &files {
        checksums.insert(name.to_string(), crc32fast::hash(bytes));
        let path = dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| CoreError::io(&path, e))?;
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        hyper: state.hyper.clone(),
        dims: Dims {
            e_levels: state.hyper.e_levels,
            facets: state.hyper.facets,
            vocab_size: state.vocab.len(),
            n_reviews: assignments.expertise.len(),
        },
        checksums,
    };
    let path = dir.join("manifest.json");
    let body = serde_json::to_string_pretty(&manifest)
        .map_err(|e| CoreError::Snapshot(format!("serialize manifest: {e}")))?;
    std::fs::write(&path, body).map_err(|e| CoreError::io(&path, e))
}

fn read_checked(dir: &Path, name: &str, manifest: &Manifest) -> Result<Vec<u8>> {
    let path = dir.join(name);
    let bytes = std::fs::read(&path).map_err(|e| CoreError::io(&path, e))?;
    let stored = *manifest
        .checksums
        .get(name)
        .ok_or_else(|| CoreError::Snapshot(format!("manifest lists no checksum for {name}")))?;
    let computed = crc32fast::hash(&bytes);
    if stored != computed {
        return Err(CoreError::ChecksumMismatch {
            file: name.to_string(),
            stored,
            computed,
        });
    }
    Ok(bytes)
}

/// Loads a snapshot directory, verifying format version, per-file CRC32
/// checksums and tensor shapes.
pub fn load_snapshot(dir: &Path) -> Result<(ModelState, Assignments)> {
    let manifest_path = dir.join("manifest.json");
    let body = std::fs::read_to_string(&manifest_path).map_err(|e| CoreError::io(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&body)
        .map_err(|e| CoreError::Snapshot(format!("manifest.json: {e}")))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(CoreError::SnapshotVersion {
            found: manifest.format_version,
            expected: FORMAT_VERSION,
        });
    }
    let hyper = manifest.hyper.clone();
    let dims = &manifest.dims;
    if dims.e_levels != hyper.e_levels || dims.facets != hyper.facets {
        return Err(CoreError::Snapshot(format!(
            "manifest dims ({} levels, {} facets) disagree with hyperparameters ({}, {})",
            dims.e_levels, dims.facets, hyper.e_levels, hyper.facets
        )));
    }

    let vocab_bytes = read_checked(dir, "vocab.tsv", &manifest)?;
    let vocab = Vocabulary::read_tsv(BufReader::new(vocab_bytes.as_slice()))?;
    if vocab.len() != dims.vocab_size {
        return Err(CoreError::Snapshot(format!(
            "vocab.tsv holds {} words, manifest promises {}",
            vocab.len(),
            dims.vocab_size
        )));
    }

    let psi_flat = decode_f64s("psi.bin", &read_checked(dir, "psi.bin", &manifest)?)?;
    let psi = PsiWeights::from_flat(&psi_flat, hyper.e_levels, hyper.facets)
        .map_err(|_| CoreError::Snapshot(format!(
            "psi.bin holds {} weights, expected {} for E={} Z={}",
            psi_flat.len(),
            7 + hyper.e_levels * hyper.facets,
            hyper.e_levels,
            hyper.facets
        )))?;

    let word_counts = decode_u64s("counts_ezw.bin", &read_checked(dir, "counts_ezw.bin", &manifest)?)?;
    let expect = hyper.e_levels * hyper.facets * dims.vocab_size;
    if word_counts.len() != expect {
        return Err(CoreError::Snapshot(format!(
            "counts_ezw.bin holds {} cells, expected {expect}",
            word_counts.len()
        )));
    }
    let transition_counts = decode_u64s("trans_ee.bin", &read_checked(dir, "trans_ee.bin", &manifest)?)?;
    if transition_counts.len() != hyper.e_levels * hyper.e_levels {
        return Err(CoreError::Snapshot(format!(
            "trans_ee.bin holds {} cells, expected {}",
            transition_counts.len(),
            hyper.e_levels * hyper.e_levels
        )));
    }
    let assignments = decode_assignments(
        "assignments.bin",
        &read_checked(dir, "assignments.bin", &manifest)?,
        dims.n_reviews,
    )?;

    let mut word_row_totals = vec![0u64; hyper.e_levels * hyper.facets];
    for (row, counts) in word_counts.chunks_exact(dims.vocab_size).enumerate() {
        word_row_totals[row] = counts.iter().sum();
    }
    let mut state = ModelState {
        psi,
        theta: Vec::new(),
        word_counts,
        word_row_totals,
        transition_counts,
        vocab,
        hyper,
    };
    state.refresh_theta();
    Ok((state, assignments))
}
