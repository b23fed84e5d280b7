//! The LDC classifier as a trainable network, and extraction of its binary form.
//!
//! The network has three stages:
//!
//! * a shared *ValueBox* mapping a scalar level to a `D_V`-dim sign vector:
//!   `1 -> hidden (tanh) -> D_V -> batch norm -> tanh -> sign`;
//! * a *feature layer* binding each feature's value vector (tiled `n = D_F / D_V`
//!   times) with that feature's `D_F`-dim weight row and bundling by sign;
//! * a *class layer* whose `K` weight rows are the class vectors, producing
//!   logits `S^T C_k`.
//!
//! The feature layer weight is the block matrix whose block `i` stacks
//! `diag(F_i^1) .. diag(F_i^n)`. Only the diagonals are ever non-zero, so it is
//! stored as one dense `D_F` row per feature. Latent reals back every binary
//! weight during training; binarization maps `w >= 0` to +1.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bitvec::BipolarVector;
use crate::error::{Error, Result};
use crate::model::{BinaryModel, Classifier, ItemMemory, ModelKind};

pub const BN_EPS: f64 = 1e-5;
const INIT_STREAM: u64 = 10;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LdcConfig {
    pub num_features: usize,
    pub num_levels: usize,
    pub num_classes: usize,
    pub value_dim: usize,
    pub feature_dim: usize,
    pub valuebox_hidden: usize,
}

impl LdcConfig {
    pub fn new(num_features: usize, num_classes: usize, value_dim: usize, feature_dim: usize) -> Self {
        LdcConfig {
            num_features,
            num_levels: 256,
            num_classes,
            value_dim,
            feature_dim,
            valuebox_hidden: 20,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.value_dim < 2 {
            return Err(Error::Config("value dimension must be at least 2".into()));
        }
        if self.feature_dim == 0 || self.feature_dim % self.value_dim != 0 {
            return Err(Error::Config(format!(
                "feature dimension {} must be a positive multiple of value dimension {}",
                self.feature_dim, self.value_dim
            )));
        }
        if !(2..=256).contains(&self.num_levels) {
            return Err(Error::Config("level count must be in 2..=256".into()));
        }
        if self.num_features == 0 || self.num_classes < 2 || self.valuebox_hidden == 0 {
            return Err(Error::Config(
                "need at least one feature, two classes and one hidden unit".into(),
            ));
        }
        Ok(())
    }

    /// `n = D_F / D_V`.
    pub fn tiles(&self) -> usize {
        self.feature_dim / self.value_dim
    }
}

/// Sign with sgn(0) = +1.
#[inline]
pub fn sign(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// How binary units are evaluated in the forward pass.
///
/// `Sign` is the real network. `HardTanh` replaces every sign by its
/// straight-through surrogate `clamp(x, -1, 1)`, which makes the forward pass
/// differentiable with exactly the gradients the straight-through backward
/// computes; it exists so gradients can be checked by finite differences.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Binarizer {
    #[default]
    Sign,
    HardTanh,
}

impl Binarizer {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Binarizer::Sign => sign(x),
            Binarizer::HardTanh => x.clamp(-1.0, 1.0),
        }
    }
}

/// Batch-norm statistics per output unit.
#[derive(Clone, Debug, PartialEq)]
pub struct BnStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl BnStats {
    /// Statistics of the multiset in which level `f`'s pre-activation appears
    /// `weights[f]` times.
    pub fn weighted(pre: &[Vec<f64>], weights: &[f64]) -> BnStats {
        let dim = pre.iter().map(Vec::len).find(|&l| l > 0).unwrap_or(0);
        let total: f64 = weights.iter().sum();
        let mut mean = vec![0.0; dim];
        let mut var = vec![0.0; dim];
        for (z, &w) in pre.iter().zip(weights) {
            if w > 0.0 {
                for (m, &x) in mean.iter_mut().zip(z) {
                    *m += w * x;
                }
            }
        }
        mean.iter_mut().for_each(|m| *m /= total);
        for (z, &w) in pre.iter().zip(weights) {
            if w > 0.0 {
                for j in 0..dim {
                    let d = z[j] - mean[j];
                    var[j] += w * d * d;
                }
            }
        }
        var.iter_mut().for_each(|v| *v /= total);
        BnStats { mean, var }
    }
}

/// Real-valued output of the ValueBox for one level.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueBoxOutput {
    pub hidden: Vec<f64>,
    /// Final fully-connected output, before batch norm.
    pub pre_norm: Vec<f64>,
    pub normalized: Vec<f64>,
    /// `tanh` of the batch-norm output; the signs of this are the value vector.
    pub activation: Vec<f64>,
    pub signs: BipolarVector,
}

/// Small fully-connected network mapping a level to a value vector.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueBox {
    pub(crate) levels: usize,
    pub(crate) hidden_width: usize,
    pub(crate) dim: usize,
    pub(crate) w1: Vec<f64>,
    pub(crate) b1: Vec<f64>,
    /// `dim x hidden_width`, row-major.
    pub(crate) w2: Vec<f64>,
    pub(crate) b2: Vec<f64>,
    pub(crate) gamma: Vec<f64>,
    pub(crate) beta: Vec<f64>,
    pub(crate) running: BnStats,
}

impl ValueBox {
    pub fn new<R: Rng + ?Sized>(levels: usize, hidden: usize, dim: usize, rng: &mut R) -> Self {
        let b1 = 1.0; // fan-in 1
        let b2 = 1.0 / (hidden as f64).sqrt();
        let mut uniform = |n: usize, bound: f64| (0..n).map(|_| rng.gen_range(-bound..=bound)).collect::<Vec<_>>();
        ValueBox {
            levels,
            hidden_width: hidden,
            dim,
            w1: uniform(hidden, b1),
            b1: uniform(hidden, b1),
            w2: uniform(dim * hidden, b2),
            b2: uniform(dim, b2),
            gamma: vec![1.0; dim],
            beta: vec![0.0; dim],
            running: BnStats {
                mean: vec![0.0; dim],
                var: vec![1.0; dim],
            },
        }
    }

    /// All weights zero, identity batch norm.
    pub fn zeros(levels: usize, hidden: usize, dim: usize) -> Self {
        ValueBox {
            levels,
            hidden_width: hidden,
            dim,
            w1: vec![0.0; hidden],
            b1: vec![0.0; hidden],
            w2: vec![0.0; dim * hidden],
            b2: vec![0.0; dim],
            gamma: vec![1.0; dim],
            beta: vec![0.0; dim],
            running: BnStats {
                mean: vec![0.0; dim],
                var: vec![1.0 - BN_EPS; dim],
            },
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn running_stats(&self) -> &BnStats {
        &self.running
    }

    pub fn set_running_stats(&mut self, stats: BnStats) {
        self.running = stats;
    }

    /// Level scaled to [-1, 1].
    #[inline]
    pub fn input(&self, level: usize) -> f64 {
        level as f64 / (self.levels - 1) as f64 * 2.0 - 1.0
    }

    fn check(&self, level: usize) -> Result<()> {
        if level >= self.levels {
            return Err(Error::LevelOutOfRange {
                level,
                levels: self.levels,
            });
        }
        Ok(())
    }

    /// Hidden activations and pre-norm output.
    pub(crate) fn pre_norm(&self, level: usize) -> (Vec<f64>, Vec<f64>) {
        let x = self.input(level);
        let hidden: Vec<f64> = self.w1.iter().zip(&self.b1).map(|(w, b)| (w * x + b).tanh()).collect();
        let z = (0..self.dim)
            .map(|j| {
                let row = &self.w2[j * self.hidden_width..(j + 1) * self.hidden_width];
                self.b2[j] + row.iter().zip(&hidden).map(|(w, h)| w * h).sum::<f64>()
            })
            .collect();
        (hidden, z)
    }

    /// Forward pass for one level. Batch norm uses `stats` when given (training
    /// with batch statistics) and the frozen running statistics otherwise.
    pub fn forward(&self, level: usize, stats: Option<&BnStats>) -> Result<ValueBoxOutput> {
        self.check(level)?;
        let (hidden, pre_norm) = self.pre_norm(level);
        Ok(self.finish(hidden, pre_norm, stats.unwrap_or(&self.running)))
    }

    pub(crate) fn finish(&self, hidden: Vec<f64>, pre_norm: Vec<f64>, stats: &BnStats) -> ValueBoxOutput {
        let normalized: Vec<f64> = (0..self.dim)
            .map(|j| (pre_norm[j] - stats.mean[j]) / (stats.var[j] + BN_EPS).sqrt())
            .collect();
        let activation: Vec<f64> = (0..self.dim)
            .map(|j| (self.gamma[j] * normalized[j] + self.beta[j]).tanh())
            .collect();
        let signs = BipolarVector::from_signs(&activation);
        ValueBoxOutput {
            hidden,
            pre_norm,
            normalized,
            activation,
            signs,
        }
    }

    /// Binary value vector for `level` under the frozen statistics.
    pub fn forward_eval(&self, level: usize) -> Result<BipolarVector> {
        self.forward(level, None).map(|o| o.signs)
    }

    /// Value vectors for every level.
    pub fn table(&self) -> Vec<BipolarVector> {
        (0..self.levels)
            .map(|l| self.forward_eval(l).expect("level in range"))
            .collect()
    }

    /// Sets the running statistics to the population statistics of a level
    /// histogram (e.g. every feature value of the training split).
    pub fn calibrate(&mut self, histogram: &[u64]) {
        let pre: Vec<Vec<f64>> = (0..self.levels)
            .map(|l| if histogram[l] > 0 { self.pre_norm(l).1 } else { Vec::new() })
            .collect();
        let weights: Vec<f64> = histogram.iter().map(|&c| c as f64).collect();
        self.running = BnStats::weighted(&pre, &weights);
    }
}

/// Named parameter tensors of the network, in a fixed order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamGroup {
    ValueW1,
    ValueB1,
    ValueW2,
    ValueB2,
    Gamma,
    Beta,
    Feature,
    Class,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 8] = [
        ParamGroup::ValueW1,
        ParamGroup::ValueB1,
        ParamGroup::ValueW2,
        ParamGroup::ValueB2,
        ParamGroup::Gamma,
        ParamGroup::Beta,
        ParamGroup::Feature,
        ParamGroup::Class,
    ];

    /// Latent weights of binary layers, kept in [-1, 1].
    pub fn is_latent(self) -> bool {
        matches!(self, ParamGroup::Feature | ParamGroup::Class)
    }

    /// Batch-norm affine parameters are not decayed.
    pub fn decays(self) -> bool {
        !matches!(self, ParamGroup::Gamma | ParamGroup::Beta)
    }
}

/// The trainable LDC network.
#[derive(Clone, Debug, PartialEq)]
pub struct LdcNetwork {
    pub(crate) config: LdcConfig,
    pub(crate) value_box: ValueBox,
    /// `N x D_F` latent feature weights, row `i` is feature `i`.
    pub(crate) feature_latent: Vec<f64>,
    /// `K x D_F` latent class weights, row `k` is class `k`.
    pub(crate) class_latent: Vec<f64>,
}

impl LdcNetwork {
    pub fn new(config: LdcConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(INIT_STREAM);
        let value_box = ValueBox::new(config.num_levels, config.valuebox_hidden, config.value_dim, &mut rng);
        let mut latent = |n: usize| (0..n).map(|_| rng.gen_range(-0.1..=0.1)).collect::<Vec<f64>>();
        let feature_latent = latent(config.num_features * config.feature_dim);
        let class_latent = latent(config.num_classes * config.feature_dim);
        Ok(LdcNetwork {
            config,
            value_box,
            feature_latent,
            class_latent,
        })
    }

    /// Builds a network from explicit parts; latent slices must be
    /// `N x D_F` and `K x D_F`.
    pub fn from_parts(config: LdcConfig, value_box: ValueBox, feature_latent: Vec<f64>, class_latent: Vec<f64>) -> Result<Self> {
        config.validate()?;
        Error::check_dim(config.value_dim, value_box.dim)?;
        Error::check_dim(config.num_levels, value_box.levels)?;
        Error::check_dim(config.num_features * config.feature_dim, feature_latent.len())?;
        Error::check_dim(config.num_classes * config.feature_dim, class_latent.len())?;
        Ok(LdcNetwork {
            config,
            value_box,
            feature_latent,
            class_latent,
        })
    }

    pub fn config(&self) -> &LdcConfig {
        &self.config
    }

    pub fn value_box(&self) -> &ValueBox {
        &self.value_box
    }

    pub fn value_box_mut(&mut self) -> &mut ValueBox {
        &mut self.value_box
    }

    pub fn feature_latent(&self) -> &[f64] {
        &self.feature_latent
    }

    pub fn class_latent(&self) -> &[f64] {
        &self.class_latent
    }

    pub fn params(&self) -> [(ParamGroup, &[f64]); 8] {
        let vb = &self.value_box;
        [
            (ParamGroup::ValueW1, &vb.w1),
            (ParamGroup::ValueB1, &vb.b1),
            (ParamGroup::ValueW2, &vb.w2),
            (ParamGroup::ValueB2, &vb.b2),
            (ParamGroup::Gamma, &vb.gamma),
            (ParamGroup::Beta, &vb.beta),
            (ParamGroup::Feature, &self.feature_latent),
            (ParamGroup::Class, &self.class_latent),
        ]
    }

    pub fn params_mut(&mut self) -> [(ParamGroup, &mut [f64]); 8] {
        let vb = &mut self.value_box;
        [
            (ParamGroup::ValueW1, &mut vb.w1),
            (ParamGroup::ValueB1, &mut vb.b1),
            (ParamGroup::ValueW2, &mut vb.w2),
            (ParamGroup::ValueB2, &mut vb.b2),
            (ParamGroup::Gamma, &mut vb.gamma),
            (ParamGroup::Beta, &mut vb.beta),
            (ParamGroup::Feature, &mut self.feature_latent),
            (ParamGroup::Class, &mut self.class_latent),
        ]
    }

    /// Binarized feature layer, `N x D_F` entries in {-1, +1}.
    pub fn binary_feature_weights(&self) -> Vec<f64> {
        self.feature_latent.iter().map(|&w| sign(w)).collect()
    }

    /// Block `i` of the feature layer weight matrix, `D_F x D_V`, with the
    /// binarized weights on the block diagonals and zeros elsewhere.
    pub fn feature_block(&self, i: usize) -> Vec<Vec<f64>> {
        let (dv, df) = (self.config.value_dim, self.config.feature_dim);
        let row = &self.feature_latent[i * df..(i + 1) * df];
        (0..df)
            .map(|d| (0..dv).map(|j| if d % dv == j { sign(row[d]) } else { 0.0 }).collect())
            .collect()
    }

    /// Class logits `S^T C_k` with binary weights and activations, batch norm
    /// on frozen statistics. Every logit lies in {-D_F, -D_F + 2, .., D_F}.
    pub fn network_forward(&self, levels: &[u8]) -> Result<Vec<f64>> {
        let cfg = &self.config;
        Error::check_dim(cfg.num_features, levels.len())?;
        let (dv, df) = (cfg.value_dim, cfg.feature_dim);
        let mut table: Vec<Option<Vec<f64>>> = vec![None; cfg.num_levels];
        let mut pre = vec![0.0; df];
        for (i, &l) in levels.iter().enumerate() {
            let l = l as usize;
            if table.get(l).is_none() {
                return Err(Error::LevelOutOfRange {
                    level: l,
                    levels: cfg.num_levels,
                });
            }
            let v = table[l].get_or_insert_with(|| {
                let signs = self.value_box.forward_eval(l).expect("level checked");
                signs.to_signs().into_iter().map(f64::from).collect()
            });
            let row = &self.feature_latent[i * df..(i + 1) * df];
            for d in 0..df {
                pre[d] += sign(row[d]) * v[d % dv];
            }
        }
        let s: Vec<f64> = pre.iter().map(|&p| sign(p)).collect();
        Ok((0..cfg.num_classes)
            .map(|k| {
                let c = &self.class_latent[k * df..(k + 1) * df];
                s.iter().zip(c).map(|(x, &w)| x * sign(w)).sum()
            })
            .collect())
    }

    /// Extracts the binary model: value vectors from a sweep of the ValueBox
    /// over all levels, feature vectors from the feature-layer diagonals, class
    /// vectors from the class-layer rows. The float ValueBox is not needed
    /// afterwards.
    pub fn extract(&self, seed: u64) -> BinaryModel {
        let df = self.config.feature_dim;
        let features = self
            .feature_latent
            .chunks_exact(df)
            .map(BipolarVector::from_signs)
            .collect();
        let classes = self
            .class_latent
            .chunks_exact(df)
            .map(BipolarVector::from_signs)
            .collect();
        let im = ItemMemory::new(self.value_box.table(), features).expect("network dimensions are consistent");
        BinaryModel::new(ModelKind::Ldc, seed, im, classes).expect("network dimensions are consistent")
    }
}

/// Index of the largest logit, lowest index on ties.
pub fn argmax(logits: &[f64]) -> usize {
    let mut best = 0;
    for (k, &x) in logits.iter().enumerate() {
        if x > logits[best] {
            best = k;
        }
    }
    best
}

impl Classifier for LdcNetwork {
    fn num_features(&self) -> usize {
        self.config.num_features
    }

    fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    fn predict(&self, levels: &[u8]) -> Result<usize> {
        self.network_forward(levels).map(|l| argmax(&l))
    }
}

/// Sample vector of a binary model: `sgn(sum_i F_i ∘ tile_n(V_{f_i}))`.
pub fn encode_ldc(model: &BinaryModel, levels: &[u8]) -> Result<BipolarVector> {
    model.encode(levels)
}

/// Fully binary inference: XOR/popcount encoding and nearest class vector.
pub fn predict_binary(model: &BinaryModel, levels: &[u8]) -> Result<usize> {
    model.predict(levels)
}
