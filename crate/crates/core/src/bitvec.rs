//! Bit-packed bipolar vectors.
//!
//! A bipolar vector holds `dim` entries in {+1, -1}. Entry `i` lives in bit
//! `i % 64` of word `i / 64`; a set bit encodes -1 and a clear bit encodes +1.
//! Padding bits past `dim` in the last word are always clear, so XOR and
//! popcount never need a mask.

use std::fmt;

use rand::Rng;

use crate::error::{Error, Result};

pub const WORD_BITS: usize = 64;

#[inline]
pub fn words_for(dim: usize) -> usize {
    dim.div_ceil(WORD_BITS)
}

#[inline]
fn tail_mask(dim: usize) -> u64 {
    match dim % WORD_BITS {
        0 => u64::MAX,
        r => (1u64 << r) - 1,
    }
}

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BipolarVector {
    dim: usize,
    words: Vec<u64>,
}

/// Exact Hamming distance: the number of differing coordinates out of `dim`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HammingDistance {
    pub differing: usize,
    pub dim: usize,
}

impl HammingDistance {
    /// Normalized distance `differing / dim` in [0, 1].
    pub fn normalized(self) -> f64 {
        self.differing as f64 / self.dim as f64
    }
}

impl BipolarVector {
    /// All-(+1) vector.
    pub fn ones(dim: usize) -> Self {
        assert!(dim > 0, "bipolar vectors need a positive dimension");
        BipolarVector {
            dim,
            words: vec![0; words_for(dim)],
        }
    }

    pub fn random<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        let mut v = Self::ones(dim);
        for w in &mut v.words {
            *w = rng.gen();
        }
        v.clear_padding();
        v
    }

    /// Builds a vector from signs; any negative entry is -1, everything else +1.
    pub fn from_signs<T: Copy + Into<f64>>(signs: &[T]) -> Self {
        let mut v = Self::ones(signs.len());
        for (i, &s) in signs.iter().enumerate() {
            if s.into() < 0.0 {
                v.words[i / WORD_BITS] |= 1 << (i % WORD_BITS);
            }
        }
        v
    }

    /// Builds a vector from raw bits (`true` encodes -1).
    pub fn from_bits(bits: &[bool]) -> Self {
        let mut v = Self::ones(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            if b {
                v.words[i / WORD_BITS] |= 1 << (i % WORD_BITS);
            }
        }
        v
    }

    /// Wraps packed words. Fails if the word count is wrong or padding is dirty.
    pub fn from_words(dim: usize, words: Vec<u64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("bipolar vector dimension must be positive".into()));
        }
        Error::check_dim(words_for(dim), words.len())?;
        if words[words.len() - 1] & !tail_mask(dim) != 0 {
            return Err(Error::ModelCorrupt("padding bits set past vector dimension".into()));
        }
        Ok(BipolarVector { dim, words })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn words(&self) -> &[u64] {
        &self.words
    }

    #[inline]
    pub fn bit(&self, i: usize) -> bool {
        assert!(i < self.dim, "index {i} out of range for dim {}", self.dim);
        self.words[i / WORD_BITS] >> (i % WORD_BITS) & 1 == 1
    }

    /// Entry `i` as +1 or -1.
    #[inline]
    pub fn get(&self, i: usize) -> i8 {
        if self.bit(i) {
            -1
        } else {
            1
        }
    }

    pub fn set(&mut self, i: usize, sign: i8) {
        assert!(i < self.dim, "index {i} out of range for dim {}", self.dim);
        let mask = 1u64 << (i % WORD_BITS);
        if sign < 0 {
            self.words[i / WORD_BITS] |= mask;
        } else {
            self.words[i / WORD_BITS] &= !mask;
        }
    }

    pub fn flip(&mut self, i: usize) {
        assert!(i < self.dim, "index {i} out of range for dim {}", self.dim);
        self.words[i / WORD_BITS] ^= 1 << (i % WORD_BITS);
    }

    pub fn to_signs(&self) -> Vec<i8> {
        (0..self.dim).map(|i| self.get(i)).collect()
    }

    pub fn complement(&self) -> Self {
        let mut v = BipolarVector {
            dim: self.dim,
            words: self.words.iter().map(|w| !w).collect(),
        };
        v.clear_padding();
        v
    }

    /// Number of -1 entries.
    pub fn count_negative(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Element-wise (Hadamard) product, which is XOR on the bit encoding.
    pub fn bind(&self, other: &Self) -> Result<Self> {
        Error::check_dim(self.dim, other.dim)?;
        Ok(BipolarVector {
            dim: self.dim,
            words: self.words.iter().zip(&other.words).map(|(a, b)| a ^ b).collect(),
        })
    }

    /// Repeats the vector `n` times end to end.
    pub fn tile(&self, n: usize) -> Self {
        assert!(n > 0);
        if n == 1 {
            return self.clone();
        }
        let mut out = Self::ones(self.dim * n);
        for rep in 0..n {
            for i in 0..self.dim {
                if self.bit(i) {
                    let j = rep * self.dim + i;
                    out.words[j / WORD_BITS] |= 1 << (j % WORD_BITS);
                }
            }
        }
        out
    }

    pub fn hamming_distance(&self, other: &Self) -> Result<HammingDistance> {
        Error::check_dim(self.dim, other.dim)?;
        Ok(HammingDistance {
            differing: xor_popcount(&self.words, &other.words),
            dim: self.dim,
        })
    }

    /// Normalized Hamming distance.
    pub fn hamming(&self, other: &Self) -> Result<f64> {
        self.hamming_distance(other).map(HammingDistance::normalized)
    }

    /// Inner product of the bipolar vectors: `dim - 2 * differing`.
    pub fn dot(&self, other: &Self) -> Result<i64> {
        let h = self.hamming_distance(other)?;
        Ok(self.dim as i64 - 2 * h.differing as i64)
    }

    fn clear_padding(&mut self) {
        let mask = tail_mask(self.dim);
        if let Some(last) = self.words.last_mut() {
            *last &= mask;
        }
    }
}

impl fmt::Debug for BipolarVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let shown = self.dim.min(64);
        let s: String = (0..shown).map(|i| if self.bit(i) { '-' } else { '+' }).collect();
        let ellipsis = if shown < self.dim { "…" } else { "" };
        write!(f, "BipolarVector(dim={}, {s}{ellipsis})", self.dim)
    }
}

#[inline]
pub fn xor_popcount(a: &[u64], b: &[u64]) -> usize {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones() as usize).sum()
}

/// Index of the class vector nearest to `query` in Hamming distance.
/// Ties go to the lowest index.
pub fn nearest(classes: &[BipolarVector], query: &BipolarVector) -> Result<usize> {
    let mut best = (usize::MAX, 0usize);
    for (k, c) in classes.iter().enumerate() {
        let d = c.hamming_distance(query)?.differing;
        if d < best.0 {
            best = (d, k);
        }
    }
    if classes.is_empty() {
        return Err(Error::Config("no class vectors".into()));
    }
    Ok(best.1)
}

/// Per-dimension signed sums of bipolar vectors, the pre-sign state of bundling.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Accumulator {
    counts: Vec<i32>,
    weight: u64,
}

impl Accumulator {
    pub fn new(dim: usize) -> Self {
        Accumulator {
            counts: vec![0; dim],
            weight: 0,
        }
    }

    pub fn from_counts(counts: Vec<i32>, weight: u64) -> Self {
        Accumulator { counts, weight }
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[i32] {
        &self.counts
    }

    /// Total absolute weight accumulated so far; bounds every `|counts[j]|`.
    pub fn weight(&self) -> u64 {
        self.weight
    }

    pub fn add(&mut self, v: &BipolarVector) -> Result<()> {
        self.add_weighted(v, 1)
    }

    /// Adds `weight * v`; a negative weight subtracts.
    pub fn add_weighted(&mut self, v: &BipolarVector, weight: i32) -> Result<()> {
        Error::check_dim(self.counts.len(), v.dim())?;
        for (chunk, &word) in self.counts.chunks_mut(WORD_BITS).zip(v.words()) {
            for (j, c) in chunk.iter_mut().enumerate() {
                // +w for a clear bit, -w for a set bit
                let neg = (word >> j & 1) as i32;
                *c += weight - 2 * weight * neg;
            }
        }
        self.weight += weight.unsigned_abs() as u64;
        Ok(())
    }

    pub fn merge(&mut self, other: &Accumulator) -> Result<()> {
        Error::check_dim(self.counts.len(), other.counts.len())?;
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.weight += other.weight;
        Ok(())
    }

    /// Sign binarization with sgn(0) = +1.
    pub fn bundle_sign(&self) -> Result<BipolarVector> {
        if self.weight == 0 {
            return Err(Error::EmptyAccumulator);
        }
        Ok(sign_of_counts(&self.counts))
    }
}

/// Binarizes signed sums: negative sums become -1, zero and positive +1.
pub fn sign_of_counts(counts: &[i32]) -> BipolarVector {
    let mut out = BipolarVector::ones(counts.len());
    for (w, chunk) in out.words.iter_mut().zip(counts.chunks(WORD_BITS)) {
        for (j, &c) in chunk.iter().enumerate() {
            *w |= ((c < 0) as u64) << j;
        }
    }
    out
}

pub fn bundle_sign(acc: &Accumulator) -> Result<BipolarVector> {
    acc.bundle_sign()
}

/// Vertical (bit-sliced) population counter.
///
/// Plane `p` holds bit `p` of the per-lane count of set bits seen so far, so
/// adding one packed vector costs a short ripple-carry over the planes instead
/// of one integer add per dimension.
pub(crate) struct BitSlicedCounter {
    words: usize,
    planes: Vec<u64>,
    depth: usize,
    added: usize,
}

impl BitSlicedCounter {
    pub(crate) fn new(dim: usize, capacity: usize) -> Self {
        let depth = (usize::BITS - capacity.leading_zeros()).max(1) as usize;
        let words = words_for(dim);
        BitSlicedCounter {
            words,
            planes: vec![0; depth * words],
            depth,
            added: 0,
        }
    }

    pub(crate) fn reset(&mut self) {
        self.planes.fill(0);
        self.added = 0;
    }

    /// Adds the bits of `a XOR b`.
    #[inline]
    pub(crate) fn add_xor(&mut self, a: &[u64], b: &[u64]) {
        debug_assert!(self.added < (1 << self.depth) - 1);
        for w in 0..self.words {
            let mut carry = a[w] ^ b[w];
            let mut p = w * self.depth;
            while carry != 0 {
                let plane = self.planes[p];
                self.planes[p] = plane ^ carry;
                carry &= plane;
                p += 1;
            }
        }
        self.added += 1;
    }

    /// Majority: a lane becomes -1 when more than half of the added vectors had
    /// -1 there, i.e. when the bipolar sum is negative.
    pub(crate) fn majority(&self, dim: usize) -> BipolarVector {
        let threshold = self.added / 2;
        let mut out = BipolarVector::ones(dim);
        for w in 0..self.words {
            let planes = &self.planes[w * self.depth..(w + 1) * self.depth];
            // lanes whose count is strictly greater than `threshold`
            let mut gt = 0u64;
            let mut eq = u64::MAX;
            for b in (0..self.depth).rev() {
                if threshold >> b & 1 == 1 {
                    eq &= planes[b];
                } else {
                    gt |= eq & planes[b];
                    eq &= !planes[b];
                }
            }
            out.words[w] = gt;
        }
        out.clear_padding();
        out
    }
}
