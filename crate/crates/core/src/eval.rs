//! Accuracy, bit-error robustness, and the pipelined accelerator cycle model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bitvec::{nearest, BipolarVector};
use crate::data::QuantizedDataset;
use crate::error::{Error, Result};
use crate::model::{BinaryModel, Classifier, ItemMemory, ModelDescriptor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

fn check<C: Classifier + ?Sized>(model: &C, data: &QuantizedDataset) -> Result<()> {
    Error::check_dim(model.num_features(), data.num_features())?;
    if data.num_classes() > model.num_classes() {
        return Err(Error::LabelOutOfRange {
            label: data.num_classes() - 1,
            classes: model.num_classes(),
        });
    }
    Ok(())
}

fn report(predictions: &[usize], data: &QuantizedDataset, classes: usize) -> EvalReport {
    let mut confusion = vec![vec![0; classes]; classes];
    for (&p, &y) in predictions.iter().zip(data.labels()) {
        confusion[y as usize][p] += 1;
    }
    let correct = (0..classes).map(|k| confusion[k][k]).sum();
    let total = predictions.len();
    EvalReport {
        accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
        correct,
        total,
        confusion,
    }
}

/// Accuracy and `K x K` confusion matrix of any classifier on `data`.
pub fn evaluate<C: Classifier + ?Sized>(model: &C, data: &QuantizedDataset) -> Result<EvalReport> {
    check(model, data)?;
    let predictions = (0..data.len())
        .into_par_iter()
        .map(|i| model.predict(data.sample(i)))
        .collect::<Result<Vec<_>>>()?;
    Ok(report(&predictions, data, model.num_classes()))
}

/// Evaluation of a binary model against pre-encoded samples.
pub fn evaluate_encoded(classes: &[BipolarVector], encoded: &[BipolarVector], data: &QuantizedDataset) -> Result<EvalReport> {
    Error::check_dim(data.len(), encoded.len())?;
    let predictions = encoded
        .par_iter()
        .map(|q| nearest(classes, q))
        .collect::<Result<Vec<_>>>()?;
    Ok(report(&predictions, data, classes.len()))
}

/// Which stored vectors bit errors are injected into.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InjectionTarget {
    #[default]
    AssociativeMemory,
    ItemMemory,
    Both,
}

impl InjectionTarget {
    fn class_vectors(self) -> bool {
        matches!(self, InjectionTarget::AssociativeMemory | InjectionTarget::Both)
    }

    fn item_memory(self) -> bool {
        matches!(self, InjectionTarget::ItemMemory | InjectionTarget::Both)
    }
}

impl std::str::FromStr for InjectionTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "associative-memory" | "am" => Ok(InjectionTarget::AssociativeMemory),
            "item-memory" | "im" => Ok(InjectionTarget::ItemMemory),
            "both" => Ok(InjectionTarget::Both),
            _ => Err(Error::Config(format!("unknown injection target {s:?}"))),
        }
    }
}

fn flip_bits(v: &BipolarVector, p: f64, rng: &mut ChaCha8Rng) -> BipolarVector {
    let mut out = v.clone();
    for i in 0..v.dim() {
        if rng.gen_bool(p) {
            out.flip(i);
        }
    }
    out
}

fn check_rate(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Config(format!("bit error rate must be in [0, 1], got {p}")));
    }
    Ok(())
}

/// Copy of `model` with every targeted bit flipped independently with
/// probability `p`. Class vectors are drawn first, then value and feature
/// vectors, from one seeded stream.
pub fn inject_bit_errors(model: &BinaryModel, p: f64, seed: u64, target: InjectionTarget) -> Result<BinaryModel> {
    check_rate(p)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = model.clone();
    if target.class_vectors() {
        let classes = model.classes().iter().map(|c| flip_bits(c, p, &mut rng)).collect();
        out = out.with_classes(classes)?;
    }
    if target.item_memory() {
        let im = model.item_memory();
        let values = im.values().iter().map(|v| flip_bits(v, p, &mut rng)).collect();
        let features = im.features().iter().map(|v| flip_bits(v, p, &mut rng)).collect();
        out = out.with_item_memory(ItemMemory::new(values, features)?)?;
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateSummary {
    pub rate: f64,
    /// `(seed, accuracy)` per run.
    pub runs: Vec<(u64, f64)>,
    pub mean: f64,
    /// Sample standard deviation over runs.
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub target: InjectionTarget,
    pub clean_accuracy: f64,
    pub rates: Vec<RateSummary>,
}

impl RobustnessReport {
    pub fn error_rates(&self) -> Vec<f64> {
        self.rates.iter().map(|r| r.rate).collect()
    }

    /// Tab-separated table: one row per rate.
    pub fn to_table(&self) -> String {
        let mut s = String::from("rate\tmean\tstd\truns\n");
        for r in &self.rates {
            let runs: Vec<String> = r.runs.iter().map(|(_, a)| format!("{a:.4}")).collect();
            s.push_str(&format!("{}\t{:.4}\t{:.4}\t{}\n", r.rate, r.mean, r.std, runs.join(",")));
        }
        s
    }
}

/// Mean and sample standard deviation. Identical inputs give their value
/// back exactly.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs[0] + xs.iter().map(|x| x - xs[0]).sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Accuracy under bit errors at each rate, one injected model copy per
/// `(rate, seed)`. Run `r` at rate index `i` uses seed `base_seed + r` mixed
/// with `i`, so reports are reproducible.
pub fn robustness_sweep(
    model: &BinaryModel,
    data: &QuantizedDataset,
    rates: &[f64],
    runs: usize,
    base_seed: u64,
    target: InjectionTarget,
) -> Result<RobustnessReport> {
    check(model, data)?;
    for &p in rates {
        check_rate(p)?;
    }
    if rates.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Config("error rates must be sorted ascending".into()));
    }
    if runs == 0 {
        return Err(Error::Config("need at least one run per rate".into()));
    }
    let encoded = model.item_memory().encode_all(data)?;
    let clean = evaluate_encoded(model.classes(), &encoded, data)?.accuracy;

    let jobs: Vec<(usize, u64)> = (0..rates.len())
        .flat_map(|i| (0..runs as u64).map(move |r| (i, r)))
        .collect();
    let run_seed = |i: usize, r: u64| base_seed.wrapping_add(r).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ i as u64;
    let accs = jobs
        .iter()
        .map(|&(i, r)| {
            let seed = run_seed(i, r);
            let noisy = inject_bit_errors(model, rates[i], seed, target)?;
            let acc = if target.item_memory() {
                evaluate(&noisy, data)?.accuracy
            } else {
                evaluate_encoded(noisy.classes(), &encoded, data)?.accuracy
            };
            Ok((seed, acc))
        })
        .collect::<Result<Vec<_>>>()?;

    let rates = rates
        .iter()
        .enumerate()
        .map(|(i, &rate)| {
            let runs: Vec<(u64, f64)> = accs[i * runs..(i + 1) * runs].to_vec();
            let (mean, std) = mean_std(&runs.iter().map(|r| r.1).collect::<Vec<_>>());
            RateSummary { rate, runs, mean, std }
        })
        .collect();
    Ok(RobustnessReport {
        target,
        clean_accuracy: clean,
        rates,
    })
}

pub const DEFAULT_CLOCK_MHZ: f64 = 200.0;

/// Constant term of the similarity stage, fitted once against the reference
/// end-to-end latencies of the two LDC designs (798 and 28 cycles) and frozen.
pub const SIMILARITY_OFFSET: i64 = -3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CycleEstimate {
    pub encode_cycles: u64,
    pub similarity_cycles: u64,
    pub total_cycles: u64,
    pub clock_mhz: f64,
    pub latency_us: f64,
}

fn ceil_log2(x: usize) -> u64 {
    x.next_power_of_two().trailing_zeros() as u64
}

fn similarity_base(desc: &ModelDescriptor) -> i64 {
    desc.num_classes as i64 + ceil_log2(desc.feature_dim) as i64
}

/// Pipelined accelerator latency: `N + 1` encoding cycles (one binding per
/// cycle plus the threshold), then one cycle per class vector plus a
/// `ceil(log2 D)` adder tree and a fixed offset.
pub fn cycle_estimate(desc: &ModelDescriptor, clock_mhz: f64) -> CycleEstimate {
    let encode = desc.num_features as u64 + 1;
    let similarity = (similarity_base(desc) + SIMILARITY_OFFSET).max(1) as u64;
    let total = encode + similarity;
    CycleEstimate {
        encode_cycles: encode,
        similarity_cycles: similarity,
        total_cycles: total,
        clock_mhz,
        latency_us: total as f64 / clock_mhz,
    }
}

/// Fits the similarity offset to measured totals, requiring a single value
/// that reproduces every measurement.
pub fn calibrate_similarity_offset(measured: &[(ModelDescriptor, u64)]) -> Result<i64> {
    let mut fitted = None;
    for (desc, total) in measured {
        let c = *total as i64 - (desc.num_features as i64 + 1) - similarity_base(desc);
        match fitted {
            None => fitted = Some(c),
            Some(f) if f != c => {
                return Err(Error::Config(format!("inconsistent offsets {f} and {c}")));
            }
            _ => {}
        }
    }
    fitted.ok_or_else(|| Error::Config("no measurements to calibrate against".into()))
}
