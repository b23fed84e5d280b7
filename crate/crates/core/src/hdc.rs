//! Reference binary HDC classifier with random item memory, majority
//! training, and mistake-driven retraining.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::bitvec::{nearest, Accumulator, BipolarVector};
use crate::data::QuantizedDataset;
use crate::error::{Error, Result};
use crate::model::{BinaryModel, Classifier, ItemMemory, ModelKind};

const FEATURE_STREAM: u64 = 1;
const VALUE_STREAM: u64 = 2;
const RETRAIN_STREAM: u64 = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct HdcConfig {
    pub dim: usize,
    pub num_features: usize,
    pub num_levels: usize,
    pub num_classes: usize,
    pub seed: u64,
    pub retrain_epochs: usize,
    /// Weight of a mis-classified sample in the retraining update.
    pub retrain_rate: u32,
}

impl HdcConfig {
    pub fn new(num_features: usize, num_classes: usize) -> Self {
        HdcConfig {
            dim: 8000,
            num_features,
            num_levels: 256,
            num_classes,
            seed: 0,
            retrain_epochs: 20,
            retrain_rate: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::Config("HDC dimension must be at least 2".into()));
        }
        if !(2..=256).contains(&self.num_levels) {
            return Err(Error::Config("level count must be in 2..=256".into()));
        }
        if self.num_features == 0 || self.num_classes == 0 {
            return Err(Error::Config("feature and class counts must be positive".into()));
        }
        if self.retrain_rate == 0 {
            return Err(Error::Config("retrain rate must be positive".into()));
        }
        Ok(())
    }

    /// Bits flipped between consecutive value levels: `round(D / (2 (M - 1)))`.
    pub fn flips_per_level(&self) -> usize {
        let denom = 2 * (self.num_levels - 1);
        (self.dim + denom / 2) / denom
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// `N` i.i.d. uniform random feature hypervectors.
pub fn gen_feature_hvs(cfg: &HdcConfig) -> Vec<BipolarVector> {
    let mut rng = stream_rng(cfg.seed, FEATURE_STREAM);
    (0..cfg.num_features)
        .map(|_| BipolarVector::random(cfg.dim, &mut rng))
        .collect()
}

/// `M` correlated value hypervectors.
///
/// Level 0 is uniform random. One random permutation of the dimensions is
/// drawn up front and consumed in order: each next level flips the next
/// `flips_per_level` positions of it, so flips never overlap and
/// `hamming(V_i, V_j) = |i - j| * flips_per_level / D` exactly.
pub fn gen_value_hvs(cfg: &HdcConfig) -> Result<Vec<BipolarVector>> {
    if cfg.num_levels < 2 {
        return Err(Error::Config("value hypervectors need at least two levels".into()));
    }
    let flips = cfg.flips_per_level();
    let required = flips * (cfg.num_levels - 1);
    if required > cfg.dim {
        return Err(Error::FlipBudgetExceeded {
            required,
            dim: cfg.dim,
        });
    }
    let mut rng = stream_rng(cfg.seed, VALUE_STREAM);
    let mut current = BipolarVector::random(cfg.dim, &mut rng);
    let mut order: Vec<usize> = (0..cfg.dim).collect();
    order.shuffle(&mut rng);

    let mut out = Vec::with_capacity(cfg.num_levels);
    out.push(current.clone());
    for chunk in order.chunks(flips.max(1)).take(cfg.num_levels - 1) {
        if flips > 0 {
            for &pos in chunk {
                current.flip(pos);
            }
        }
        out.push(current.clone());
    }
    // flips == 0 yields identical levels; keep the count right regardless
    while out.len() < cfg.num_levels {
        out.push(current.clone());
    }
    Ok(out)
}

pub fn item_memory(cfg: &HdcConfig) -> Result<ItemMemory> {
    cfg.validate()?;
    ItemMemory::new(gen_value_hvs(cfg)?, gen_feature_hvs(cfg))
}

pub fn encode(im: &ItemMemory, levels: &[u8]) -> Result<BipolarVector> {
    im.encode(levels)
}

/// Class hypervectors together with the per-class sums they were binarized from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AssociativeMemory {
    classes: Vec<BipolarVector>,
    accumulators: Vec<Accumulator>,
}

impl AssociativeMemory {
    pub fn from_accumulators(accumulators: Vec<Accumulator>) -> Result<Self> {
        let classes = accumulators
            .iter()
            .enumerate()
            .map(|(k, a)| a.bundle_sign().map_err(|_| Error::EmptyClass(k)))
            .collect::<Result<_>>()?;
        Ok(AssociativeMemory {
            classes,
            accumulators,
        })
    }

    pub fn classes(&self) -> &[BipolarVector] {
        &self.classes
    }

    pub fn accumulators(&self) -> &[Accumulator] {
        &self.accumulators
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    fn update(&mut self, class: usize, sample: &BipolarVector, weight: i32) -> Result<()> {
        self.accumulators[class].add_weighted(sample, weight)?;
        self.classes[class] = self.accumulators[class].bundle_sign()?;
        Ok(())
    }
}

/// Nearest class by Hamming distance; ties go to the lowest class index.
pub fn predict(am: &AssociativeMemory, query: &BipolarVector) -> Result<usize> {
    nearest(&am.classes, query)
}

/// Majority training over already encoded samples.
pub fn train_basic_encoded(encoded: &[BipolarVector], labels: &[u32], num_classes: usize) -> Result<AssociativeMemory> {
    Error::check_dim(encoded.len(), labels.len())?;
    let dim = encoded.first().map(BipolarVector::dim).ok_or(Error::EmptyClass(0))?;
    let empty = || vec![Accumulator::new(dim); num_classes];
    let accumulators = encoded
        .par_iter()
        .zip(labels.par_iter())
        .try_fold(empty, |mut accs, (s, &y)| {
            let acc = accs.get_mut(y as usize).ok_or(Error::LabelOutOfRange {
                label: y as usize,
                classes: num_classes,
            })?;
            acc.add(s)?;
            Ok::<_, Error>(accs)
        })
        .try_reduce(empty, |mut a, b| {
            for (x, y) in a.iter_mut().zip(&b) {
                x.merge(y)?;
            }
            Ok(a)
        })?;
    AssociativeMemory::from_accumulators(accumulators)
}

/// `C_k = sgn(sum of encodings of class-k samples)`.
pub fn train_basic(im: &ItemMemory, data: &QuantizedDataset) -> Result<AssociativeMemory> {
    if data.is_empty() {
        return Err(Error::EmptyClass(0));
    }
    let encoded = im.encode_all(data)?;
    train_basic_encoded(&encoded, data.labels(), data.num_classes())
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RetrainReport {
    /// Mis-classifications seen during each completed epoch.
    pub mistakes: Vec<usize>,
}

/// Online mistake-driven retraining over encoded samples.
///
/// Each epoch visits the samples in a shuffle seeded by `seed + epoch`. A
/// mis-classified sample is added with weight `rate` to its true class sum and
/// subtracted from the predicted class sum; both classes are re-binarized
/// before the next sample. Stops early after an epoch without mistakes.
pub fn retrain_encoded(
    am: &AssociativeMemory,
    encoded: &[BipolarVector],
    labels: &[u32],
    cfg: &HdcConfig,
) -> Result<(AssociativeMemory, RetrainReport)> {
    Error::check_dim(encoded.len(), labels.len())?;
    let mut am = am.clone();
    let mut report = RetrainReport::default();
    let rate = cfg.retrain_rate as i32;
    let mut order: Vec<usize> = (0..encoded.len()).collect();
    for epoch in 0..cfg.retrain_epochs {
        let mut rng = stream_rng(cfg.seed.wrapping_add(epoch as u64), RETRAIN_STREAM);
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut mistakes = 0;
        for &i in &order {
            let s = &encoded[i];
            let truth = labels[i] as usize;
            let guess = predict(&am, s)?;
            if guess != truth {
                mistakes += 1;
                am.update(truth, s, rate)?;
                am.update(guess, s, -rate)?;
            }
        }
        report.mistakes.push(mistakes);
        if mistakes == 0 {
            break;
        }
    }
    Ok((am, report))
}

pub fn retrain(
    am: &AssociativeMemory,
    im: &ItemMemory,
    data: &QuantizedDataset,
    cfg: &HdcConfig,
) -> Result<AssociativeMemory> {
    let encoded = im.encode_all(data)?;
    retrain_encoded(am, &encoded, data.labels(), cfg).map(|(am, _)| am)
}

/// A trained HDC classifier.
#[derive(Clone, Debug)]
pub struct HdcClassifier {
    pub config: HdcConfig,
    pub kind: ModelKind,
    pub item_memory: ItemMemory,
    pub memory: AssociativeMemory,
    pub retrain_report: Option<RetrainReport>,
}

impl HdcClassifier {
    /// Generates the item memory, trains by majority, and retrains when
    /// `retrain` is set.
    pub fn fit(cfg: &HdcConfig, data: &QuantizedDataset, retrain: bool) -> Result<Self> {
        cfg.validate()?;
        Error::check_dim(cfg.num_features, data.num_features())?;
        Error::check_dim(cfg.num_levels, data.num_levels())?;
        Error::check_dim(cfg.num_classes, data.num_classes())?;
        let im = item_memory(cfg)?;
        let encoded = im.encode_all(data)?;
        let basic = train_basic_encoded(&encoded, data.labels(), cfg.num_classes)?;
        let (memory, kind, report) = if retrain {
            let (am, report) = retrain_encoded(&basic, &encoded, data.labels(), cfg)?;
            (am, ModelKind::HdcRetrained, Some(report))
        } else {
            (basic, ModelKind::HdcBasic, None)
        };
        Ok(HdcClassifier {
            config: cfg.clone(),
            kind,
            item_memory: im,
            memory,
            retrain_report: report,
        })
    }

    pub fn to_binary_model(&self) -> BinaryModel {
        BinaryModel::new(
            self.kind,
            self.config.seed,
            self.item_memory.clone(),
            self.memory.classes().to_vec(),
        )
        .expect("trained HDC classifier is consistent")
    }
}

impl Classifier for HdcClassifier {
    fn num_features(&self) -> usize {
        self.item_memory.num_features()
    }

    fn num_classes(&self) -> usize {
        self.memory.num_classes()
    }

    fn predict(&self, levels: &[u8]) -> Result<usize> {
        predict(&self.memory, &self.item_memory.encode(levels)?)
    }
}
