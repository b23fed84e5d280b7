#![allow(dead_code)]

use std::path::PathBuf;

use ldc_core::data::QuantizedDataset;
use ldc_core::ldc::{Binarizer, ParamGroup};
use ldc_core::train::batch_gradients;
use ldc_core::{DatasetManifest, LdcConfig, LdcNetwork, PreparedDataset};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Dataset root from `LDC_DATA_ROOT`, if set.
pub fn data_root() -> Option<PathBuf> {
    std::env::var_os("LDC_DATA_ROOT").map(PathBuf::from)
}

pub fn manifest_path(name: &str) -> Option<PathBuf> {
    data_root().map(|r| r.join(name).join("manifest.toml"))
}

pub fn load(name: &str) -> Option<Result<PreparedDataset, String>> {
    let path = manifest_path(name)?;
    if !path.is_file() {
        return Some(Err(format!("{} not found", path.display())));
    }
    Some(
        DatasetManifest::from_file(&path)
            .and_then(|m| m.prepare())
            .map_err(|e| e.to_string()),
    )
}

pub fn tiny_config() -> LdcConfig {
    LdcConfig {
        num_levels: 8,
        ..LdcConfig::new(3, 2, 2, 4)
    }
}

/// Network with every parameter drawn away from clipping boundaries.
pub fn random_network(cfg: LdcConfig, seed: u64) -> LdcNetwork {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = LdcNetwork::new(cfg, seed).unwrap();
    for (group, params) in net.params_mut() {
        let (lo, hi) = match group {
            ParamGroup::ValueW1 | ParamGroup::ValueB1 => (-1.0, 1.0),
            ParamGroup::ValueW2 | ParamGroup::ValueB2 => (-0.5, 0.5),
            ParamGroup::Gamma => (0.5, 1.5),
            ParamGroup::Beta => (-0.3, 0.3),
            ParamGroup::Feature | ParamGroup::Class => (-0.9, 0.9),
        };
        params.iter_mut().for_each(|p| *p = rng.gen_range(lo..hi));
    }
    net
}

pub fn random_batch(cfg: &LdcConfig, samples: usize, seed: u64) -> QuantizedDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    let levels = (0..samples * cfg.num_features)
        .map(|_| rng.gen_range(0..cfg.num_levels) as u8)
        .collect();
    let labels = (0..samples).map(|_| rng.gen_range(0..cfg.num_classes) as u32).collect();
    QuantizedDataset::new(cfg.num_features, cfg.num_levels, cfg.num_classes, levels, labels).unwrap()
}

fn surrogate_loss(net: &LdcNetwork, data: &QuantizedDataset, batch: &[usize]) -> f64 {
    batch_gradients(net, data, batch, Binarizer::HardTanh).unwrap().loss
}

/// Largest element-wise relative error between analytic straight-through
/// gradients and central finite differences of the surrogate loss, over
/// every parameter of one random draw. The denominator is floored at 1e-6.
pub fn gradient_check(seed: u64) -> f64 {
    let cfg = tiny_config();
    let mut net = random_network(cfg.clone(), seed);
    let data = random_batch(&cfg, 8, seed);
    let batch: Vec<usize> = (0..data.len()).collect();
    let analytic = batch_gradients(&net, &data, &batch, Binarizer::HardTanh).unwrap().gradients;
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    for gi in 0..ParamGroup::ALL.len() {
        let len = net.params()[gi].1.len();
        for j in 0..len {
            let orig = net.params()[gi].1[j];
            let mut at = |x: f64| {
                net.params_mut()[gi].1[j] = x;
                surrogate_loss(&net, &data, &batch)
            };
            let (p2, p1, m1, m2) = (at(orig + 2.0 * h), at(orig + h), at(orig - h), at(orig - 2.0 * h));
            net.params_mut()[gi].1[j] = orig;
            // fourth-order central difference
            let numeric = (-p2 + 8.0 * p1 - 8.0 * m1 + m2) / (12.0 * h);
            let a = analytic.get(ParamGroup::ALL[gi])[j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            if std::env::var_os("GRAD_DEBUG").is_some() && rel > 1e-5 {
                eprintln!("{:?}[{j}] analytic {a:e} numeric {numeric:e}", ParamGroup::ALL[gi]);
            }
            worst = worst.max(rel);
        }
    }
    worst
}
