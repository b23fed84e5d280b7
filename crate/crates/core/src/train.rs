//! Straight-through training of the LDC network.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{QuantizedDataset, Split};
use crate::error::{Error, Result};
use crate::ldc::{argmax, Binarizer, BnStats, LdcConfig, LdcNetwork, ParamGroup, ValueBoxOutput};

const SHUFFLE_STREAM: u64 = 11;
/// Samples per gradient partial; partials are reduced in order so results do
/// not depend on the thread count.
const CHUNK: usize = 16;

/// Learning-rate schedule over epochs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    Constant,
    /// Halve the rate every `n` epochs.
    Halve(usize),
    /// Decay linearly towards zero over the run.
    Linear,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule::Halve(5)
    }
}

impl Schedule {
    pub fn rate(self, base: f64, epoch: usize, epochs: usize) -> f64 {
        match self {
            Schedule::Constant => base,
            Schedule::Halve(n) => base * 0.5f64.powi((epoch / n.max(1)) as i32),
            Schedule::Linear => base * (1.0 - epoch as f64 / epochs.max(1) as f64),
        }
    }
}

impl std::str::FromStr for Schedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(Schedule::Constant),
            "linear" => Ok(Schedule::Linear),
            "halve" | "step" => Ok(Schedule::Halve(5)),
            _ => s
                .strip_prefix("halve-")
                .and_then(|n| n.parse().ok())
                .filter(|&n: &usize| n > 0)
                .map(Schedule::Halve)
                .ok_or_else(|| Error::Config(format!("unknown schedule {s:?}"))),
        }
    }
}

/// Per-dataset LDC settings `(D_V, D_F, learning rate, weight decay)` for the
/// five benchmark datasets.
pub fn dataset_defaults(name: &str) -> Option<(usize, usize, f64, f64)> {
    match name.to_ascii_lowercase().replace('_', "-").as_str() {
        "mnist" => Some((4, 64, 1e-4, 0.0)),
        "fashion-mnist" | "fmnist" => Some((4, 64, 2e-4, 1e-5)),
        "ucihar" | "uci-har" => Some((4, 128, 1e-3, 1e-4)),
        "isolet" => Some((4, 128, 5e-3, 1e-4)),
        "ctg" | "cardiotocography" => Some((4, 64, 8e-3, 1e-4)),
        _ => None,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub schedule: Schedule,
    pub seed: u64,
    /// Stratified fraction of the training split held out for model selection.
    pub validation_fraction: f64,
    pub binarizer: Binarizer,
    /// Multiplier on the logits inside the training loss. `None` uses
    /// `1/sqrt(D_F)`. Inference is unaffected.
    pub logit_scale: Option<f64>,
    /// Multiplier on the pre-sign sum of the sample vector before its
    /// straight-through estimator. `None` uses `1/sqrt(N)`.
    pub sample_scale: Option<f64>,
}

impl TrainConfig {
    pub fn new(learning_rate: f64, weight_decay: f64) -> Self {
        TrainConfig {
            learning_rate,
            weight_decay,
            batch_size: 64,
            epochs: 50,
            schedule: Schedule::default(),
            seed: 0,
            validation_fraction: 0.1,
            binarizer: Binarizer::Sign,
            logit_scale: None,
            sample_scale: None,
        }
    }

    /// Loss scales for a network of shape `cfg`.
    pub fn scales_for(&self, cfg: &LdcConfig) -> LossScales {
        LossScales {
            logit: self.logit_scale.unwrap_or(1.0 / (cfg.feature_dim as f64).sqrt()),
            sample: self.sample_scale.unwrap_or(1.0 / (cfg.num_features as f64).sqrt()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Config(format!("learning rate must be non-negative, got {}", self.learning_rate)));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config(format!("weight decay must be non-negative, got {}", self.weight_decay)));
        }
        for (name, t) in [("logit", self.logit_scale), ("sample", self.sample_scale)] {
            if let Some(t) = t {
                if !(t.is_finite() && t > 0.0) {
                    return Err(Error::Config(format!("{name} scale must be positive, got {t}")));
                }
            }
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config("validation fraction must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Forward sign of a tensor, sgn(0) = +1.
pub fn ste_sign(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| crate::ldc::sign(v)).collect()
}

/// Straight-through backward: `upstream * 1{|x| <= 1}`.
pub fn ste_backward(x: &[f64], upstream: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(upstream)
        .map(|(&v, &g)| if v.abs() <= 1.0 { g } else { 0.0 })
        .collect()
}

/// Softmax probabilities, computed with the maximum subtracted.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Softmax cross-entropy `-log softmax(logits)[label]`.
pub fn loss_ce(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln() - logits[label]
}

/// Gradients with the same layout as [`LdcNetwork::params`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    groups: [Vec<f64>; 8],
}

impl Gradients {
    pub fn zeros_like(net: &LdcNetwork) -> Self {
        Gradients {
            groups: net.params().map(|(_, p)| vec![0.0; p.len()]),
        }
    }

    pub fn get(&self, group: ParamGroup) -> &[f64] {
        &self.groups[group as usize]
    }

    fn get_mut(&mut self, group: ParamGroup) -> &mut Vec<f64> {
        &mut self.groups[group as usize]
    }

    pub fn groups(&self) -> impl Iterator<Item = (ParamGroup, &[f64])> {
        ParamGroup::ALL.into_iter().zip(self.groups.iter().map(Vec::as_slice))
    }
}

#[derive(Clone, Debug)]
pub struct BatchOutput {
    /// Mean cross-entropy over the batch.
    pub loss: f64,
    pub correct: usize,
    pub gradients: Gradients,
}

struct Partial {
    loss: f64,
    correct: usize,
    feature: Vec<f64>,
    class: Vec<f64>,
    /// Gradient w.r.t. the tiled value table, `M x D_F`.
    value: Vec<f64>,
}

/// Loss and straight-through gradients of one batch in training mode: batch
/// norm uses the statistics of every value input in the batch. Logits enter
/// the loss unscaled and the sample-vector sum is divided by `N`.
pub fn batch_gradients(net: &LdcNetwork, data: &QuantizedDataset, batch: &[usize], bin: Binarizer) -> Result<BatchOutput> {
    batch_gradients_scaled(net, data, batch, bin, LossScales::plain(net.config().num_features))
}

/// Scale factors of the training surrogate. The forward binary computation
/// does not depend on them.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossScales {
    /// Multiplier on the logits before the softmax.
    pub logit: f64,
    /// Multiplier on the sample-vector sum before its straight-through sign.
    pub sample: f64,
}

impl LossScales {
    /// Unit logits and a `1/N` sample scale.
    pub fn plain(num_features: usize) -> Self {
        LossScales {
            logit: 1.0,
            sample: 1.0 / num_features as f64,
        }
    }
}

/// As [`batch_gradients`] with explicit loss scales.
pub fn batch_gradients_scaled(
    net: &LdcNetwork,
    data: &QuantizedDataset,
    batch: &[usize],
    bin: Binarizer,
    scales: LossScales,
) -> Result<BatchOutput> {
    let cfg: &LdcConfig = net.config();
    Error::check_dim(cfg.num_features, data.num_features())?;
    if data.num_levels() > cfg.num_levels {
        return Err(Error::LevelOutOfRange {
            level: data.num_levels() - 1,
            levels: cfg.num_levels,
        });
    }
    if data.num_classes() > cfg.num_classes {
        return Err(Error::LabelOutOfRange {
            label: data.num_classes() - 1,
            classes: cfg.num_classes,
        });
    }
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let (m, n, k, dv, df) = (cfg.num_levels, cfg.num_features, cfg.num_classes, cfg.value_dim, cfg.feature_dim);
    let vb = net.value_box();

    let mut count = vec![0.0f64; m];
    for &i in batch {
        for &l in data.sample(i) {
            count[l as usize] += 1.0;
        }
    }
    let total = (batch.len() * n) as f64;
    let (hidden, pre): (Vec<Vec<f64>>, Vec<Vec<f64>>) = (0..m)
        .map(|l| if count[l] > 0.0 { vb.pre_norm(l) } else { (Vec::new(), Vec::new()) })
        .unzip();
    let stats = BnStats::weighted(&pre, &count);
    let outs: Vec<Option<ValueBoxOutput>> = hidden
        .into_iter()
        .zip(pre)
        .map(|(h, z)| (!z.is_empty()).then(|| vb.finish(h, z, &stats)))
        .collect();

    let mut table = vec![0.0; m * df];
    for (l, o) in outs.iter().enumerate() {
        if let Some(o) = o {
            for d in 0..df {
                table[l * df + d] = bin.apply(o.activation[d % dv]);
            }
        }
    }
    let fb: Vec<f64> = net.feature_latent().iter().map(|&w| bin.apply(w)).collect();
    let cb: Vec<f64> = net.class_latent().iter().map(|&w| bin.apply(w)).collect();
    let scale = 1.0 / batch.len() as f64;
    let (logit_scale, sample_scale) = (scales.logit, scales.sample);

    let partials: Vec<Partial> = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut p = Partial {
                loss: 0.0,
                correct: 0,
                feature: vec![0.0; n * df],
                class: vec![0.0; k * df],
                value: vec![0.0; m * df],
            };
            let mut acc = vec![0.0; df];
            let mut s = vec![0.0; df];
            let mut ds = vec![0.0; df];
            for &idx in chunk {
                let x = data.sample(idx);
                let y = data.label(idx);
                acc.iter_mut().for_each(|a| *a = 0.0);
                for (i, &l) in x.iter().enumerate() {
                    let fr = &fb[i * df..(i + 1) * df];
                    let vr = &table[l as usize * df..(l as usize + 1) * df];
                    for d in 0..df {
                        acc[d] += fr[d] * vr[d];
                    }
                }
                for d in 0..df {
                    s[d] = bin.apply(acc[d] * sample_scale);
                }
                let logits: Vec<f64> = (0..k)
                    .map(|c| logit_scale * cb[c * df..(c + 1) * df].iter().zip(&s).map(|(w, v)| w * v).sum::<f64>())
                    .collect();
                p.loss += loss_ce(&logits, y);
                if argmax(&logits) == y {
                    p.correct += 1;
                }
                let mut g = softmax(&logits);
                g[y] -= 1.0;
                ds.iter_mut().for_each(|v| *v = 0.0);
                for c in 0..k {
                    let gc = g[c] * scale * logit_scale;
                    let row = &cb[c * df..(c + 1) * df];
                    let grow = &mut p.class[c * df..(c + 1) * df];
                    for d in 0..df {
                        grow[d] += gc * s[d];
                        ds[d] += gc * row[d];
                    }
                }
                // sample-vector straight-through on u = acc * sample_scale, then du/dacc
                for d in 0..df {
                    let u = acc[d] * sample_scale;
                    ds[d] = if u.abs() <= 1.0 { ds[d] * sample_scale } else { 0.0 };
                }
                for (i, &l) in x.iter().enumerate() {
                    let l = l as usize;
                    let fr = &fb[i * df..(i + 1) * df];
                    let vr = &table[l * df..(l + 1) * df];
                    let gf = &mut p.feature[i * df..(i + 1) * df];
                    for d in 0..df {
                        gf[d] += ds[d] * vr[d];
                    }
                    let gv = &mut p.value[l * df..(l + 1) * df];
                    for d in 0..df {
                        gv[d] += ds[d] * fr[d];
                    }
                }
            }
            p
        })
        .collect();

    let mut it = partials.into_iter();
    let mut sum = it.next().expect("non-empty batch");
    for p in it {
        sum.loss += p.loss;
        sum.correct += p.correct;
        add(&mut sum.feature, &p.feature);
        add(&mut sum.class, &p.class);
        add(&mut sum.value, &p.value);
    }

    let mut grads = Gradients::zeros_like(net);
    for (g, &w) in sum.feature.iter_mut().zip(net.feature_latent()) {
        if w.abs() > 1.0 {
            *g = 0.0;
        }
    }
    for (g, &w) in sum.class.iter_mut().zip(net.class_latent()) {
        if w.abs() > 1.0 {
            *g = 0.0;
        }
    }
    *grads.get_mut(ParamGroup::Feature) = sum.feature;
    *grads.get_mut(ParamGroup::Class) = sum.class;

    // ValueBox backward, one pass per distinct level with occurrence-summed gradients.
    let hw = vb.hidden_width;
    let mut dxhat = vec![Vec::new(); m];
    let mut dgamma = vec![0.0; dv];
    let mut dbeta = vec![0.0; dv];
    let mut mean_g = vec![0.0; dv];
    let mut mean_gx = vec![0.0; dv];
    for (l, o) in outs.iter().enumerate() {
        let Some(o) = o else { continue };
        let mut dvv = vec![0.0; dv];
        for (d, g) in sum.value[l * df..(l + 1) * df].iter().enumerate() {
            dvv[d % dv] += g;
        }
        let mut dx = vec![0.0; dv];
        for j in 0..dv {
            let a = o.activation[j];
            let da = if a.abs() <= 1.0 { dvv[j] } else { 0.0 };
            let dy = da * (1.0 - a * a);
            dgamma[j] += dy * o.normalized[j];
            dbeta[j] += dy;
            dx[j] = dy * vb.gamma[j];
            mean_g[j] += dx[j] / total;
            mean_gx[j] += dx[j] * o.normalized[j] / total;
        }
        dxhat[l] = dx;
    }
    let inv_std: Vec<f64> = stats.var.iter().map(|v| 1.0 / (v + crate::ldc::BN_EPS).sqrt()).collect();
    let mut dw1 = vec![0.0; hw];
    let mut db1 = vec![0.0; hw];
    let mut dw2 = vec![0.0; dv * hw];
    let mut db2 = vec![0.0; dv];
    for (l, o) in outs.iter().enumerate() {
        let Some(o) = o else { continue };
        let c = count[l];
        let dz: Vec<f64> = (0..dv)
            .map(|j| inv_std[j] * (dxhat[l][j] - c * mean_g[j] - c * o.normalized[j] * mean_gx[j]))
            .collect();
        let mut dh = vec![0.0; hw];
        for j in 0..dv {
            db2[j] += dz[j];
            for h in 0..hw {
                dw2[j * hw + h] += dz[j] * o.hidden[h];
                dh[h] += dz[j] * vb.w2[j * hw + h];
            }
        }
        let x = vb.input(l);
        for h in 0..hw {
            let dq = dh[h] * (1.0 - o.hidden[h] * o.hidden[h]);
            dw1[h] += dq * x;
            db1[h] += dq;
        }
    }
    *grads.get_mut(ParamGroup::ValueW1) = dw1;
    *grads.get_mut(ParamGroup::ValueB1) = db1;
    *grads.get_mut(ParamGroup::ValueW2) = dw2;
    *grads.get_mut(ParamGroup::ValueB2) = db2;
    *grads.get_mut(ParamGroup::Gamma) = dgamma;
    *grads.get_mut(ParamGroup::Beta) = dbeta;

    Ok(BatchOutput {
        loss: sum.loss * scale,
        correct: sum.correct,
        gradients: grads,
    })
}

fn add(a: &mut [f64], b: &[f64]) {
    a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
}

/// AdamW with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(net: &LdcNetwork) -> Self {
        let zeros: Vec<Vec<f64>> = net.params().iter().map(|(_, p)| vec![0.0; p.len()]).collect();
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One update. Weight decay skips batch-norm parameters; latent binary
    /// weights are clipped to [-1, 1] afterwards.
    pub fn step(&mut self, net: &mut LdcNetwork, grads: &Gradients, lr: f64, weight_decay: f64) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        for (gi, (group, params)) in net.params_mut().into_iter().enumerate() {
            let decay = if group.decays() { 1.0 - lr * weight_decay } else { 1.0 };
            let g = grads.get(group);
            let (m, v) = (&mut self.m[gi], &mut self.v[gi]);
            for j in 0..params.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let update = (m[j] / bc1) / ((v[j] / bc2).sqrt() + self.eps);
                params[j] = params[j] * decay - lr * update;
                if group.is_latent() {
                    params[j] = params[j].clamp(-1.0, 1.0);
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub split: Split,
    pub loss: f64,
    pub accuracy: f64,
    pub learning_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct TrainReport {
    pub history: Vec<EpochMetrics>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_validation_accuracy: Option<f64>,
}

/// Mean loss and accuracy of the network in evaluation mode.
pub fn evaluate_network(net: &LdcNetwork, data: &QuantizedDataset, logit_scale: f64) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Ok((0.0, 0.0));
    }
    let (loss, correct) = (0..data.len())
        .into_par_iter()
        .map(|i| {
            let logits: Vec<f64> = net.network_forward(data.sample(i))?.iter().map(|z| z * logit_scale).collect();
            let y = data.label(i);
            Ok((loss_ce(&logits, y), (argmax(&logits) == y) as usize))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold((0.0, 0), |(l, c), (a, b)| (l + a, c + b));
    Ok((loss / data.len() as f64, correct as f64 / data.len() as f64))
}

/// Trains `net` on `data`. A stratified validation split is held out when
/// `validation_fraction > 0` and the parameters of the epoch with the best
/// validation accuracy are kept. `on_epoch` sees each metrics record as it is
/// produced.
pub fn fit(
    net: &mut LdcNetwork,
    data: &QuantizedDataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainReport> {
    cfg.validate()?;
    let (train, validation) = if cfg.validation_fraction > 0.0 {
        let (t, mut v) = data.stratified_split(cfg.validation_fraction, cfg.seed);
        v.split = Split::Validation;
        (t, Some(v))
    } else {
        (data.clone(), None)
    };
    if train.is_empty() {
        return Err(Error::Config("no training samples".into()));
    }
    let scales = cfg.scales_for(net.config());
    let histogram = train.level_histogram();
    net.value_box_mut().calibrate(&histogram);

    let mut adam = AdamW::new(net);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut report = TrainReport::default();
    let mut best: Option<(f64, LdcNetwork)> = None;

    for epoch in 0..cfg.epochs {
        let lr = cfg.schedule.rate(cfg.learning_rate, epoch, cfg.epochs);
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0);
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let out = batch_gradients_scaled(net, &train, batch, cfg.binarizer, scales)?;
            if !out.loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    loss: out.loss,
                });
            }
            loss_sum += out.loss * batch.len() as f64;
            correct += out.correct;
            adam.step(net, &out.gradients, lr, cfg.weight_decay);
        }
        net.value_box_mut().calibrate(&histogram);
        let m = EpochMetrics {
            epoch,
            split: Split::Train,
            loss: loss_sum / train.len() as f64,
            accuracy: correct as f64 / train.len() as f64,
            learning_rate: lr,
        };
        on_epoch(&m);
        report.history.push(m);
        if let Some(v) = &validation {
            let (loss, accuracy) = evaluate_network(net, v, scales.logit)?;
            let m = EpochMetrics {
                epoch,
                split: Split::Validation,
                loss,
                accuracy,
                learning_rate: lr,
            };
            on_epoch(&m);
            report.history.push(m);
            if best.as_ref().map_or(true, |(a, _)| accuracy > *a) {
                best = Some((accuracy, net.clone()));
                report.best_epoch = epoch;
                report.best_validation_accuracy = Some(accuracy);
            }
        } else {
            report.best_epoch = epoch;
        }
    }
    if let Some((_, snapshot)) = best {
        *net = snapshot;
    }
    Ok(report)
}
