//! Item memory, binary classifier model, and the shared prediction interface.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::bitvec::{nearest, BipolarVector, BitSlicedCounter};
use crate::data::QuantizedDataset;
use crate::error::{Error, Result};

/// Anything that maps a quantized sample to a class index.
pub trait Classifier: Sync {
    fn num_features(&self) -> usize;
    fn num_classes(&self) -> usize;
    fn predict(&self, levels: &[u8]) -> Result<usize>;
}

/// Value vectors (one per quantization level) and feature vectors (one per
/// feature position).
///
/// Value vectors may be shorter than feature vectors when the feature dimension
/// is an integer multiple `n` of the value dimension; binding then uses the
/// value vector repeated `n` times.
#[derive(Clone, PartialEq, Eq)]
pub struct ItemMemory {
    values: Vec<BipolarVector>,
    features: Vec<BipolarVector>,
    tiled: Vec<BipolarVector>,
}

impl fmt::Debug for ItemMemory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ItemMemory")
            .field("levels", &self.values.len())
            .field("value_dim", &self.value_dim())
            .field("features", &self.features.len())
            .field("feature_dim", &self.feature_dim())
            .finish()
    }
}

impl ItemMemory {
    pub fn new(values: Vec<BipolarVector>, features: Vec<BipolarVector>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::Config("item memory needs at least two value vectors".into()));
        }
        if values.len() > 256 {
            return Err(Error::Config("at most 256 quantization levels are supported".into()));
        }
        if features.is_empty() {
            return Err(Error::Config("item memory needs at least one feature vector".into()));
        }
        let dv = values[0].dim();
        let df = features[0].dim();
        for v in &values {
            Error::check_dim(dv, v.dim())?;
        }
        for f in &features {
            Error::check_dim(df, f.dim())?;
        }
        if df % dv != 0 {
            return Err(Error::Config(format!(
                "feature dimension {df} is not a multiple of value dimension {dv}"
            )));
        }
        let tiled = if df == dv {
            Vec::new()
        } else {
            values.iter().map(|v| v.tile(df / dv)).collect()
        };
        Ok(ItemMemory {
            values,
            features,
            tiled,
        })
    }

    pub fn values(&self) -> &[BipolarVector] {
        &self.values
    }

    pub fn features(&self) -> &[BipolarVector] {
        &self.features
    }

    pub fn num_levels(&self) -> usize {
        self.values.len()
    }

    pub fn num_features(&self) -> usize {
        self.features.len()
    }

    pub fn value_dim(&self) -> usize {
        self.values[0].dim()
    }

    pub fn feature_dim(&self) -> usize {
        self.features[0].dim()
    }

    /// Value vector for `level`, repeated to the feature dimension.
    #[inline]
    pub fn binding_value(&self, level: usize) -> &BipolarVector {
        if self.tiled.is_empty() {
            &self.values[level]
        } else {
            &self.tiled[level]
        }
    }

    fn check_levels(&self, levels: &[u8]) -> Result<()> {
        Error::check_dim(self.features.len(), levels.len())?;
        if let Some(&l) = levels.iter().find(|&&l| l as usize >= self.values.len()) {
            return Err(Error::LevelOutOfRange {
                level: l as usize,
                levels: self.values.len(),
            });
        }
        Ok(())
    }

    pub(crate) fn counter(&self) -> BitSlicedCounter {
        BitSlicedCounter::new(self.feature_dim(), self.features.len())
    }

    pub(crate) fn encode_with(&self, counter: &mut BitSlicedCounter, levels: &[u8]) -> Result<BipolarVector> {
        self.check_levels(levels)?;
        counter.reset();
        for (f, &l) in self.features.iter().zip(levels) {
            counter.add_xor(f.words(), self.binding_value(l as usize).words());
        }
        Ok(counter.majority(self.feature_dim()))
    }

    /// Sample vector: majority over features of `F_i ∘ V_{f_i}` (sgn(0) = +1).
    pub fn encode(&self, levels: &[u8]) -> Result<BipolarVector> {
        self.encode_with(&mut self.counter(), levels)
    }

    /// Encodes every sample of `data`, in parallel.
    pub fn encode_all(&self, data: &QuantizedDataset) -> Result<Vec<BipolarVector>> {
        Error::check_dim(self.num_features(), data.num_features())?;
        (0..data.len())
            .into_par_iter()
            .map_init(|| self.counter(), |c, i| self.encode_with(c, data.sample(i)))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Ldc,
    HdcBasic,
    HdcRetrained,
}

impl ModelKind {
    pub fn code(self) -> u8 {
        match self {
            ModelKind::Ldc => 0,
            ModelKind::HdcBasic => 1,
            ModelKind::HdcRetrained => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(ModelKind::Ldc),
            1 => Some(ModelKind::HdcBasic),
            2 => Some(ModelKind::HdcRetrained),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Ldc => "ldc",
            ModelKind::HdcBasic => "hdc-basic",
            ModelKind::HdcRetrained => "hdc-retrain",
        }
    }

    pub fn is_hdc(self) -> bool {
        !matches!(self, ModelKind::Ldc)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ldc" => Ok(ModelKind::Ldc),
            "hdc-basic" => Ok(ModelKind::HdcBasic),
            "hdc-retrain" => Ok(ModelKind::HdcRetrained),
            other => Err(Error::Config(format!(
                "unknown model kind {other:?} (expected ldc, hdc-basic or hdc-retrain)"
            ))),
        }
    }
}

/// Counts and dimensions of a model, enough for size and latency accounting.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelDescriptor {
    pub kind: ModelKind,
    pub num_features: usize,
    pub num_levels: usize,
    pub num_classes: usize,
    pub value_dim: usize,
    pub feature_dim: usize,
}

impl ModelDescriptor {
    pub fn ldc(num_features: usize, num_levels: usize, num_classes: usize, value_dim: usize, feature_dim: usize) -> Self {
        ModelDescriptor {
            kind: ModelKind::Ldc,
            num_features,
            num_levels,
            num_classes,
            value_dim,
            feature_dim,
        }
    }

    pub fn hdc(num_features: usize, num_levels: usize, num_classes: usize, dim: usize) -> Self {
        ModelDescriptor {
            kind: ModelKind::HdcBasic,
            num_features,
            num_levels,
            num_classes,
            value_dim: dim,
            feature_dim: dim,
        }
    }
}

/// A fully binary classifier: item memory for encoding plus class vectors
/// (the associative memory) for the nearest-class search. Both trained LDC
/// models and HDC models reduce to this form for inference and storage.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryModel {
    pub kind: ModelKind,
    pub seed: u64,
    item_memory: ItemMemory,
    classes: Vec<BipolarVector>,
}

impl BinaryModel {
    pub fn new(kind: ModelKind, seed: u64, item_memory: ItemMemory, classes: Vec<BipolarVector>) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::Config("model needs at least one class vector".into()));
        }
        for c in &classes {
            Error::check_dim(item_memory.feature_dim(), c.dim())?;
        }
        Ok(BinaryModel {
            kind,
            seed,
            item_memory,
            classes,
        })
    }

    pub fn item_memory(&self) -> &ItemMemory {
        &self.item_memory
    }

    pub fn classes(&self) -> &[BipolarVector] {
        &self.classes
    }

    pub fn descriptor(&self) -> ModelDescriptor {
        ModelDescriptor {
            kind: self.kind,
            num_features: self.item_memory.num_features(),
            num_levels: self.item_memory.num_levels(),
            num_classes: self.classes.len(),
            value_dim: self.item_memory.value_dim(),
            feature_dim: self.item_memory.feature_dim(),
        }
    }

    pub fn encode(&self, levels: &[u8]) -> Result<BipolarVector> {
        self.item_memory.encode(levels)
    }

    /// Hamming distances from the encoded sample to every class vector.
    pub fn distances(&self, levels: &[u8]) -> Result<Vec<usize>> {
        let q = self.encode(levels)?;
        self.classes
            .iter()
            .map(|c| c.hamming_distance(&q).map(|h| h.differing))
            .collect()
    }

    /// Replaces the class vectors, keeping everything else.
    pub fn with_classes(&self, classes: Vec<BipolarVector>) -> Result<Self> {
        BinaryModel::new(self.kind, self.seed, self.item_memory.clone(), classes)
    }

    pub fn with_item_memory(&self, item_memory: ItemMemory) -> Result<Self> {
        BinaryModel::new(self.kind, self.seed, item_memory, self.classes.clone())
    }
}

impl Classifier for BinaryModel {
    fn num_features(&self) -> usize {
        self.item_memory.num_features()
    }

    fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// Encode, then nearest class by Hamming distance (lowest index on ties).
    fn predict(&self, levels: &[u8]) -> Result<usize> {
        nearest(&self.classes, &self.encode(levels)?)
    }
}
