//! Bit-exact binary model files.
//!
//! Layout, all integers little-endian:
//!
//! | offset | size | field |
//! |---|---|---|
//! | 0 | 4 | magic `LDC1` |
//! | 4 | 2 | format version (1) |
//! | 6 | 1 | model kind: 0 ldc, 1 hdc-basic, 2 hdc-retrain |
//! | 7 | 1 | reserved, zero |
//! | 8 | 4 | feature count `N` |
//! | 12 | 4 | level count `M` |
//! | 16 | 4 | class count `K` |
//! | 20 | 4 | value dimension |
//! | 24 | 4 | feature dimension |
//! | 28 | 8 | seed |
//! | 36 | 8 | value section length in bits (`M * value_dim`) |
//! | 44 | 8 | feature section length in bits (`N * feature_dim`) |
//! | 52 | 8 | class section length in bits (`K * feature_dim`) |
//! | 60 | .. | value, feature and class sections |
//! | end - 4 | 4 | CRC-32 of every preceding byte |
//!
//! Each section is the concatenation of its vectors' bits (bit `j` of vector
//! `i` at stream position `i * dim + j`, 1 meaning -1), packed LSB-first into
//! 64-bit words and zero-padded to a whole word.

use std::path::Path;

use crate::bitvec::{words_for, BipolarVector, WORD_BITS};
use crate::error::{Error, Result};
use crate::model::{BinaryModel, ItemMemory, ModelDescriptor, ModelKind};

pub const MAGIC: [u8; 4] = *b"LDC1";
pub const VERSION: u16 = 1;
pub const HEADER_BYTES: usize = 60;
const CRC_BYTES: usize = 4;

/// Binary storage of a model: `M * D_V + N * D_F + K * D_F` bits. For HDC
/// models both dimensions are `D`.
pub fn model_size_bits(desc: &ModelDescriptor) -> u64 {
    let (n, m, k) = (desc.num_features as u64, desc.num_levels as u64, desc.num_classes as u64);
    m * desc.value_dim as u64 + (n + k) * desc.feature_dim as u64
}

/// Size in kilobytes, 1 KB = 1000 bytes.
pub fn size_kb(bits: u64) -> f64 {
    bits as f64 / 8.0 / 1000.0
}

fn pack(vectors: &[BipolarVector], dim: usize) -> Vec<u64> {
    let total = vectors.len() * dim;
    let mut out = vec![0u64; words_for(total)];
    let mut pos = 0;
    for v in vectors {
        if pos % WORD_BITS == 0 {
            let start = pos / WORD_BITS;
            out[start..start + v.words().len()].copy_from_slice(v.words());
        } else {
            let shift = pos % WORD_BITS;
            for (w, &word) in v.words().iter().enumerate() {
                let q = pos / WORD_BITS + w;
                out[q] |= word << shift;
                if q + 1 < out.len() {
                    out[q + 1] |= word >> (WORD_BITS - shift);
                }
            }
        }
        pos += dim;
    }
    out
}

fn unpack(words: &[u64], count: usize, dim: usize) -> Result<Vec<BipolarVector>> {
    let per = words_for(dim);
    let tail = dim % WORD_BITS;
    (0..count)
        .map(|i| {
            let pos = i * dim;
            let (q, shift) = (pos / WORD_BITS, pos % WORD_BITS);
            let mut v: Vec<u64> = (0..per)
                .map(|w| {
                    let lo = words[q + w] >> shift;
                    let hi = if shift > 0 { words.get(q + w + 1).map_or(0, |x| x << (WORD_BITS - shift)) } else { 0 };
                    lo | hi
                })
                .collect();
            if tail != 0 {
                v[per - 1] &= (1u64 << tail) - 1;
            }
            BipolarVector::from_words(dim, v)
        })
        .collect()
}

fn section_padding_clean(words: &[u64], bits: usize) -> bool {
    let tail = bits % WORD_BITS;
    tail == 0 || words.last().map_or(true, |w| w >> tail == 0)
}

/// Serializes a model to bytes.
pub fn to_bytes(model: &BinaryModel) -> Vec<u8> {
    let desc = model.descriptor();
    let im = model.item_memory();
    let sections = [
        (pack(im.values(), desc.value_dim), desc.num_levels * desc.value_dim),
        (pack(im.features(), desc.feature_dim), desc.num_features * desc.feature_dim),
        (pack(model.classes(), desc.feature_dim), desc.num_classes * desc.feature_dim),
    ];
    let mut out = Vec::with_capacity(HEADER_BYTES + CRC_BYTES + sections.iter().map(|s| s.0.len() * 8).sum::<usize>());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(desc.kind.code());
    out.push(0);
    for x in [desc.num_features, desc.num_levels, desc.num_classes, desc.value_dim, desc.feature_dim] {
        out.extend_from_slice(&(x as u32).to_le_bytes());
    }
    out.extend_from_slice(&model.seed.to_le_bytes());
    for (_, bits) in &sections {
        out.extend_from_slice(&(*bits as u64).to_le_bytes());
    }
    for (words, _) in &sections {
        for w in words {
            out.extend_from_slice(&w.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

fn u32_at(b: &[u8], at: usize) -> usize {
    u32::from_le_bytes(b[at..at + 4].try_into().expect("4 bytes")) as usize
}

fn u64_at(b: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(b[at..at + 8].try_into().expect("8 bytes"))
}

/// Parses a model, verifying magic, version, lengths and checksum.
pub fn from_bytes(bytes: &[u8]) -> Result<BinaryModel> {
    let min = HEADER_BYTES + CRC_BYTES;
    if bytes.len() < 4 || bytes[..4] != MAGIC {
        if bytes.len() >= 4 {
            return Err(Error::ModelMagic(bytes[..4].try_into().expect("4 bytes")));
        }
        return Err(Error::ModelTruncated {
            expected: min,
            found: bytes.len(),
        });
    }
    if bytes.len() < min {
        return Err(Error::ModelTruncated {
            expected: min,
            found: bytes.len(),
        });
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(Error::ModelVersion(version));
    }
    let bits = [u64_at(bytes, 36), u64_at(bytes, 44), u64_at(bytes, 52)];
    let payload = bits
        .iter()
        .try_fold(0u64, |acc, &b| acc.checked_add(b.div_ceil(64).checked_mul(8)?))
        .and_then(|p| usize::try_from(p).ok())
        .and_then(|p| p.checked_add(min))
        .ok_or_else(|| Error::ModelCorrupt("section lengths overflow".into()))?;
    if bytes.len() < payload {
        return Err(Error::ModelTruncated {
            expected: payload,
            found: bytes.len(),
        });
    }
    if bytes.len() > payload {
        return Err(Error::ModelCorrupt(format!(
            "{} trailing bytes after checksum",
            bytes.len() - payload
        )));
    }
    let body = &bytes[..payload - CRC_BYTES];
    let stored = u32::from_le_bytes(bytes[payload - CRC_BYTES..].try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }

    let kind = ModelKind::from_code(bytes[6]).ok_or_else(|| Error::ModelCorrupt(format!("unknown model kind {}", bytes[6])))?;
    if bytes[7] != 0 {
        return Err(Error::ModelCorrupt("reserved byte is not zero".into()));
    }
    let (n, m, k, dv, df) = (u32_at(bytes, 8), u32_at(bytes, 12), u32_at(bytes, 16), u32_at(bytes, 20), u32_at(bytes, 24));
    let seed = u64_at(bytes, 28);
    if n == 0 || m == 0 || k == 0 || dv == 0 || df == 0 {
        return Err(Error::ModelCorrupt("zero dimension in header".into()));
    }
    if kind.is_hdc() && dv != df {
        return Err(Error::ModelCorrupt("HDC model with distinct value and feature dimensions".into()));
    }
    let expected = [(m * dv) as u64, (n * df) as u64, (k * df) as u64];
    if bits != expected {
        return Err(Error::ModelCorrupt(format!(
            "section lengths {bits:?} do not match header dimensions {expected:?}"
        )));
    }

    let mut at = HEADER_BYTES;
    let mut sections = Vec::with_capacity(3);
    for (&b, (count, dim)) in bits.iter().zip([(m, dv), (n, df), (k, df)]) {
        let nw = words_for(b as usize);
        let words: Vec<u64> = body[at..at + nw * 8]
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if !section_padding_clean(&words, b as usize) {
            return Err(Error::ModelCorrupt("non-zero section padding".into()));
        }
        sections.push(unpack(&words, count, dim)?);
        at += nw * 8;
    }
    let classes = sections.pop().expect("three sections");
    let features = sections.pop().expect("three sections");
    let values = sections.pop().expect("three sections");
    let im = ItemMemory::new(values, features).map_err(|e| Error::ModelCorrupt(e.to_string()))?;
    BinaryModel::new(kind, seed, im, classes).map_err(|e| Error::ModelCorrupt(e.to_string()))
}

pub fn save(model: &BinaryModel, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<BinaryModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
