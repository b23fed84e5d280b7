mod common;

use ldc_core::bitvec::{bundle_sign, nearest, Accumulator, BipolarVector};
use ldc_core::data::{quantize, stratified_indices, QuantizedDataset, RawDataset};
use ldc_core::eval::{cycle_estimate, inject_bit_errors, InjectionTarget};
use ldc_core::hdc::{self, HdcConfig};
use ldc_core::ldc::{argmax, predict_binary, LdcConfig, LdcNetwork};
use ldc_core::model::{BinaryModel, ItemMemory, ModelDescriptor, ModelKind};
use ldc_core::store;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn signs(dim: std::ops::Range<usize>) -> impl Strategy<Value = Vec<i8>> {
    prop::collection::vec(prop::bool::ANY.prop_map(|b| if b { 1i8 } else { -1 }), dim)
}

fn pair(dim: std::ops::Range<usize>) -> impl Strategy<Value = (BipolarVector, BipolarVector)> {
    dim.prop_flat_map(|d| (signs(d..d + 1), signs(d..d + 1)))
        .prop_map(|(a, b)| (BipolarVector::from_signs(&a), BipolarVector::from_signs(&b)))
}

fn padding_clean(v: &BipolarVector) -> bool {
    let tail = v.dim() % 64;
    tail == 0 || v.words().last().unwrap() >> tail == 0
}

fn random_model(kind: ModelKind, n: usize, m: usize, k: usize, dv: usize, df: usize, seed: u64) -> BinaryModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..m).map(|_| BipolarVector::random(dv, &mut rng)).collect();
    let features = (0..n).map(|_| BipolarVector::random(df, &mut rng)).collect();
    let classes = (0..k).map(|_| BipolarVector::random(df, &mut rng)).collect();
    BinaryModel::new(kind, seed, ItemMemory::new(values, features).unwrap(), classes).unwrap()
}

proptest! {
    #[test]
    fn dot_hamming_identity((a, b) in pair(1..300)) {
        let d = a.dim() as i64;
        let h = a.hamming_distance(&b).unwrap().differing as i64;
        prop_assert_eq!(a.dot(&b).unwrap(), d - 2 * h);
        let naive: i64 = a.to_signs().iter().zip(b.to_signs()).map(|(x, y)| (*x as i64) * (y as i64)).sum();
        prop_assert_eq!(naive, d - 2 * h);
    }

    #[test]
    fn binding_is_an_involution((a, b) in pair(1..300)) {
        let ab = a.bind(&b).unwrap();
        prop_assert_eq!(ab.bind(&b).unwrap(), a.clone());
        prop_assert_eq!(ab.clone(), b.bind(&a).unwrap());
        prop_assert!(padding_clean(&ab));
        prop_assert_eq!(a.hamming_distance(&a.complement()).unwrap().differing, a.dim());
        prop_assert!(padding_clean(&a.complement()));
    }

    #[test]
    fn hamming_is_a_metric((a, b) in pair(1..200), seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = BipolarVector::random(a.dim(), &mut rng);
        let h = |x: &BipolarVector, y: &BipolarVector| x.hamming_distance(y).unwrap().differing;
        prop_assert_eq!(h(&a, &b), h(&b, &a));
        prop_assert_eq!(h(&a, &a), 0);
        prop_assert!(h(&a, &c) <= h(&a, &b) + h(&b, &c));
    }

    #[test]
    fn tiling_repeats(v in signs(1..40), n in 1usize..6) {
        let b = BipolarVector::from_signs(&v);
        let t = b.tile(n);
        prop_assert_eq!(t.dim(), v.len() * n);
        for i in 0..t.dim() {
            prop_assert_eq!(t.get(i), v[i % v.len()]);
        }
        prop_assert!(padding_clean(&t));
    }

    #[test]
    fn bundle_matches_integer_majority(dim in 1usize..150, count in 1usize..12, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vs: Vec<BipolarVector> = (0..count).map(|_| BipolarVector::random(dim, &mut rng)).collect();
        let mut acc = Accumulator::new(dim);
        for v in &vs {
            acc.add(v).unwrap();
        }
        let s = bundle_sign(&acc).unwrap();
        for i in 0..dim {
            let sum: i32 = vs.iter().map(|v| v.get(i) as i32).sum();
            prop_assert_eq!(s.get(i), if sum >= 0 { 1 } else { -1 });
        }
    }

    #[test]
    fn nearest_is_argmax_dot(k in 1usize..8, dim in 1usize..100, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let classes: Vec<BipolarVector> = (0..k).map(|_| BipolarVector::random(dim, &mut rng)).collect();
        let q = BipolarVector::random(dim, &mut rng);
        let dots: Vec<f64> = classes.iter().map(|c| c.dot(&q).unwrap() as f64).collect();
        prop_assert_eq!(nearest(&classes, &q).unwrap(), argmax(&dots));
    }

    #[test]
    fn words_round_trip(v in signs(1..200)) {
        let b = BipolarVector::from_signs(&v);
        prop_assert_eq!(BipolarVector::from_words(b.dim(), b.words().to_vec()).unwrap(), b);
    }

    #[test]
    fn model_files_round_trip(
        kind in 0u8..3, n in 1usize..12, m in 2usize..20, k in 1usize..5,
        dv in 1usize..70, tiles in 1usize..4, seed in 0u64..1000,
    ) {
        let kind = ModelKind::from_code(kind).unwrap();
        let df = dv * tiles;
        let dv = if kind.is_hdc() { df } else { dv };
        let model = random_model(kind, n, m, k, dv, df, seed);
        let bytes = store::to_bytes(&model);
        prop_assert_eq!(bytes.len() as u64, 64 + 8 * [m * dv, n * df, k * df].iter().map(|&b| (b as u64).div_ceil(64)).sum::<u64>());
        prop_assert_eq!(store::from_bytes(&bytes).unwrap(), model);
    }

    #[test]
    fn any_single_byte_corruption_is_rejected(seed in 0u64..1000, pos in any::<prop::sample::Index>(), xor in 1u8..=255) {
        let model = random_model(ModelKind::Ldc, 5, 7, 3, 4, 8, seed);
        let mut bytes = store::to_bytes(&model);
        let i = pos.index(bytes.len());
        bytes[i] ^= xor;
        prop_assert!(store::from_bytes(&bytes).is_err());
    }

    #[test]
    fn truncation_is_rejected(seed in 0u64..100, cut in 1usize..200) {
        let model = random_model(ModelKind::HdcBasic, 4, 5, 2, 40, 40, seed);
        let bytes = store::to_bytes(&model);
        let keep = bytes.len().saturating_sub(cut);
        prop_assert!(store::from_bytes(&bytes[..keep]).is_err());
    }

    #[test]
    fn quantized_levels_in_range(rows in prop::collection::vec(prop::collection::vec(-1e3f32..1e3, 4), 1..20)) {
        let labels = vec![0u32; rows.len()];
        let raw = RawDataset::new(4, rows.concat(), labels).unwrap();
        let q = quantize(&raw, None, 1).unwrap();
        prop_assert_eq!(q.len(), rows.len());
        for f in 0..4 {
            let col: Vec<f32> = rows.iter().map(|r| r[f]).collect();
            let lo = col.iter().cloned().fold(f32::INFINITY, f32::min);
            let hi = col.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            for (i, r) in rows.iter().enumerate() {
                let l = q.sample(i)[f];
                if r[f] == lo { prop_assert_eq!(l, 0); }
                if r[f] == hi && hi > lo { prop_assert_eq!(l, 255); }
            }
        }
    }

    #[test]
    fn stratified_split_partitions(labels in prop::collection::vec(0u32..4, 1..200), frac in 0.0f64..1.0, seed in 0u64..100) {
        let (a, b) = stratified_indices(&labels, 4, frac, seed);
        let mut all: Vec<usize> = a.iter().chain(&b).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
        for k in 0..4u32 {
            let count = labels.iter().filter(|&&y| y == k).count();
            let held = b.iter().filter(|&&i| labels[i] == k).count();
            prop_assert_eq!(held, (frac * count as f64).round() as usize);
        }
    }

    #[test]
    fn value_vectors_follow_the_flip_schedule(dim in 64usize..2000, levels in 2usize..40, seed in 0u64..100) {
        let cfg = HdcConfig { dim, num_levels: levels, seed, ..HdcConfig::new(2, 2) };
        let flips = cfg.flips_per_level();
        prop_assume!(flips * (levels - 1) <= dim);
        let vs = hdc::gen_value_hvs(&cfg).unwrap();
        for i in 0..levels {
            for j in 0..levels {
                prop_assert_eq!(vs[i].hamming_distance(&vs[j]).unwrap().differing, i.abs_diff(j) * flips);
            }
        }
    }

    #[test]
    fn binary_path_matches_network(seed in 0u64..10_000, n in 1usize..8, dv in 2usize..5, tiles in 1usize..4, k in 2usize..5) {
        let cfg = LdcConfig { num_levels: 16, ..LdcConfig::new(n, k, dv, dv * tiles) };
        let net = common::random_network(cfg.clone(), seed);
        let model = net.extract(seed);
        let data = common::random_batch(&cfg, 30, seed);
        for i in 0..data.len() {
            let x = data.sample(i);
            prop_assert_eq!(predict_binary(&model, x).unwrap(), argmax(&net.network_forward(x).unwrap()));
        }
    }

    #[test]
    fn ldc_encoding_matches_unpacked_oracle(seed in 0u64..10_000, n in 1usize..9, dv in 1usize..6, tiles in 1usize..5) {
        let model = random_model(ModelKind::Ldc, n, 10, 3, dv, dv * tiles, seed);
        let im = model.item_memory();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<u8> = (0..n).map(|_| rand::Rng::gen_range(&mut rng, 0..10u8)).collect();
        let df = dv * tiles;
        let s = model.encode(&x).unwrap();
        for d in 0..df {
            let sum: i32 = (0..n)
                .map(|i| im.features()[i].get(d) as i32 * im.values()[x[i] as usize].get(d % dv) as i32)
                .sum();
            prop_assert_eq!(s.get(d), if sum >= 0 { 1 } else { -1 });
        }
        let dots: Vec<f64> = model.classes().iter().map(|c| c.dot(&s).unwrap() as f64).collect();
        prop_assert_eq!(predict_binary(&model, &x).unwrap(), argmax(&dots));
    }

    #[test]
    fn injection_leaves_original_and_item_memory(seed in 0u64..1000, p in 0.0f64..=1.0) {
        let model = random_model(ModelKind::Ldc, 3, 4, 3, 4, 16, 1);
        let before = model.clone();
        let noisy = inject_bit_errors(&model, p, seed, InjectionTarget::AssociativeMemory).unwrap();
        prop_assert_eq!(&model, &before);
        prop_assert_eq!(noisy.item_memory(), model.item_memory());
    }

    #[test]
    fn cycles_linear_in_features(n in 1usize..2000, k in 2usize..30, dlog in 1u32..14) {
        let d = 1usize << dlog;
        let c = |n| cycle_estimate(&ModelDescriptor::ldc(n, 256, k, 2, d), 200.0);
        prop_assert_eq!(c(n).encode_cycles, n as u64 + 1);
        prop_assert_eq!(c(n + 1).total_cycles - c(n).total_cycles, 1);
        prop_assert_eq!(c(2 * n).total_cycles - c(n).total_cycles, n as u64);
        let e = c(n);
        prop_assert_eq!(e.total_cycles, e.encode_cycles + e.similarity_cycles);
    }
}

#[test]
fn injected_flip_fraction_is_binomial() {
    let model = random_model(ModelKind::HdcBasic, 2, 2, 10, 1000, 1000, 3);
    let total = 10 * 1000;
    let p = 0.01;
    for seed in 0..100 {
        let noisy = inject_bit_errors(&model, p, seed, InjectionTarget::AssociativeMemory).unwrap();
        let flips: usize = noisy
            .classes()
            .iter()
            .zip(model.classes())
            .map(|(a, b)| a.hamming_distance(b).unwrap().differing)
            .sum();
        let sd = (total as f64 * p * (1.0 - p)).sqrt();
        assert!((flips as f64 - total as f64 * p).abs() <= 3.0 * sd + 1.0, "seed {seed}: {flips} flips");
    }
}

#[test]
fn hdc_training_is_deterministic() {
    let data = ldc_core::data::synthetic(120, 8, 3, 25, 1);
    let cfg = HdcConfig { dim: 300, seed: 5, ..HdcConfig::new(8, 3) };
    let a = hdc::HdcClassifier::fit(&cfg, &data, true).unwrap().to_binary_model();
    let b = hdc::HdcClassifier::fit(&cfg, &data, true).unwrap().to_binary_model();
    assert_eq!(store::to_bytes(&a), store::to_bytes(&b));
}

#[test]
fn ldc_training_is_deterministic() {
    let data = ldc_core::data::synthetic(200, 6, 3, 30, 2);
    let run = || {
        let mut net = LdcNetwork::new(LdcConfig::new(6, 3, 2, 8), 3).unwrap();
        let mut cfg = ldc_core::TrainConfig::new(0.01, 1e-4);
        cfg.epochs = 3;
        cfg.seed = 3;
        let mut log = Vec::new();
        ldc_core::train::fit(&mut net, &data, &cfg, |m| log.push(m.clone())).unwrap();
        (store::to_bytes(&net.extract(3)), net, log)
    };
    let (a, na, la) = run();
    let (b, nb, lb) = run();
    assert_eq!(a, b);
    assert_eq!(na, nb);
    assert_eq!(la, lb);
}

#[test]
fn structural_sparsity_survives_training() {
    let data = ldc_core::data::synthetic(100, 4, 2, 30, 8);
    let mut net = LdcNetwork::new(LdcConfig::new(4, 2, 2, 6), 1).unwrap();
    let mut cfg = ldc_core::TrainConfig::new(0.05, 0.0);
    cfg.epochs = 3;
    ldc_core::train::fit(&mut net, &data, &cfg, |_| {}).unwrap();
    for i in 0..4 {
        let block = net.feature_block(i);
        assert_eq!(block.len(), 6);
        for (d, row) in block.iter().enumerate() {
            for (j, &w) in row.iter().enumerate() {
                if d % 2 == j {
                    assert!(w == 1.0 || w == -1.0);
                } else {
                    assert_eq!(w, 0.0);
                }
            }
        }
    }
}

#[test]
fn first_epoch_loss_decreases() {
    let data = ldc_core::data::synthetic(2000, 20, 4, 40, 6);
    let mut net = LdcNetwork::new(LdcConfig::new(20, 4, 4, 32), 6).unwrap();
    let batches: Vec<Vec<usize>> = (0..data.len()).collect::<Vec<_>>().chunks(64).map(|c| c.to_vec()).collect();
    let mut adam = ldc_core::train::AdamW::new(&net);
    let mut losses = Vec::new();
    for b in &batches {
        let out = ldc_core::train::batch_gradients(&net, &data, b, ldc_core::ldc::Binarizer::Sign).unwrap();
        losses.push(out.loss);
        adam.step(&mut net, &out.gradients, 0.01, 0.0);
    }
    let half = losses.len() / 2;
    let first: f64 = losses[..half].iter().sum::<f64>() / half as f64;
    let second: f64 = losses[half..].iter().sum::<f64>() / (losses.len() - half) as f64;
    assert!(second < first, "{first} -> {second}");
}

#[test]
fn empty_class_and_dataset_errors() {
    let data = QuantizedDataset::new(2, 256, 3, vec![0, 1, 2, 3], vec![0, 1]).unwrap();
    let cfg = HdcConfig { dim: 64, ..HdcConfig::new(2, 3) };
    assert!(matches!(
        hdc::HdcClassifier::fit(&cfg, &data, false),
        Err(ldc_core::Error::EmptyClass(2))
    ));
}
