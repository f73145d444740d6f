mod common;

use candle_core::{DType, Device, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::*;
use vreid::eval::{cmc_map, DvdpTrace, RANKS};
use vreid::losses::{aitl_loss, batch_hard_triplet_loss, dvdp, itl_loss, unified_loss, LossConfig, LossInputs, Reduction};
use vreid::sampler::{center_clip_indices, clip_indices};

fn rotate(rows: &[Vec<f64>], angles: &[f64]) -> Vec<Vec<f64>> {
    // Product of Givens rotations over consecutive coordinate pairs.
    rows.iter()
        .map(|r| {
            let mut v = r.clone();
            for (i, &a) in angles.iter().enumerate() {
                let (j, k) = (i % v.len(), (i + 1) % v.len());
                let (x, y) = (v[j], v[k]);
                v[j] = a.cos() * x - a.sin() * y;
                v[k] = a.sin() * x + a.cos() * y;
            }
            v
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn cmc_invariant_to_gallery_permutation_and_rotation(seed in any::<u64>(), angles in prop::collection::vec(-3.0f64..3.0, 6)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = random_retrieval(&mut rng, 6, 15, 4, 5);
        let base = cmc_map(&fm(&c.query), &c.query_labels, &fm(&c.gallery), &c.gallery_labels).unwrap();

        let order: Vec<usize> = (0..c.gallery.len()).rev().collect();
        let g: Vec<_> = order.iter().map(|&i| c.gallery[i].clone()).collect();
        let gl: Vec<_> = order.iter().map(|&i| c.gallery_labels[i]).collect();
        let permuted = cmc_map(&fm(&c.query), &c.query_labels, &fm(&g), &gl).unwrap();
        prop_assert!((permuted.map - base.map).abs() < 1e-12);

        let rotated = cmc_map(&fm(&rotate(&c.query, &angles)), &c.query_labels, &fm(&rotate(&c.gallery, &angles)), &c.gallery_labels).unwrap();
        prop_assert!((rotated.map - base.map).abs() < 1e-9);
        for k in RANKS {
            prop_assert_eq!(permuted.rank(k), base.rank(k));
            prop_assert_eq!(rotated.rank(k), base.rank(k));
        }
    }

    #[test]
    fn ranking_invariants(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = random_retrieval(&mut rng, 8, 20, 3, 6);
        let r = cmc_map(&fm(&c.query), &c.query_labels, &fm(&c.gallery), &c.gallery_labels).unwrap();
        for w in RANKS.windows(2) {
            prop_assert!(r.rank(w[0]) <= r.rank(w[1]));
        }
        prop_assert!(r.per_query_ap.iter().all(|&ap| ap > 0.0 && ap <= 1.0));
        let mean = r.per_query_ap.iter().sum::<f64>() / r.per_query_ap.len() as f64;
        prop_assert!((mean - r.map).abs() < 1e-15);
    }

    #[test]
    fn dvdp_and_itl_agree(seed in any::<u64>(), p in 1usize..=5, k in 2usize..=5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = batch(&gaussian_rows(&mut rng, p * k, 6), &unit_rows(&mut rng, p * k, 4), p, k);
        let d = dvdp(&b).unwrap();
        prop_assert!(d.sum >= 0.0);
        let itl = itl_loss(&b, 0.0, Reduction::Sum).unwrap().value().unwrap();
        prop_assert!((itl - d.sum).abs() < 1e-12);
        let aitl = aitl_loss(&b, 0.0, Reduction::Sum).unwrap().value().unwrap();
        prop_assert!(aitl <= d.sum + 1e-12);
    }

    #[test]
    fn losses_ignore_order_within_identity(seed in any::<u64>(), p in 2usize..=4, k in 3usize..=5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let reid = gaussian_rows(&mut rng, p * k, 6);
        let attr = unit_rows(&mut rng, p * k, 4);
        // Reverse the clips of every identity group.
        let perm: Vec<usize> = (0..p).flat_map(|i| (0..k).rev().map(move |a| i * k + a)).collect();
        let reid2: Vec<_> = perm.iter().map(|&i| reid[i].clone()).collect();
        let attr2: Vec<_> = perm.iter().map(|&i| attr[i].clone()).collect();
        let (b1, b2) = (batch(&reid, &attr, p, k), batch(&reid2, &attr2, p, k));
        let pairs = [
            (batch_hard_triplet_loss(&b1, 0.3).unwrap().value().unwrap(), batch_hard_triplet_loss(&b2, 0.3).unwrap().value().unwrap()),
            (aitl_loss(&b1, 0.1, Reduction::Sum).unwrap().value().unwrap(), aitl_loss(&b2, 0.1, Reduction::Sum).unwrap().value().unwrap()),
            (dvdp(&b1).unwrap().sum, dvdp(&b2).unwrap().sum),
        ];
        for (x, y) in pairs {
            prop_assert!((x - y).abs() < 1e-6);
        }
        let s1 = aitl_loss(&b1, 0.0, Reduction::Sum).unwrap().selection;
        let s2 = aitl_loss(&b2, 0.0, Reduction::Sum).unwrap().selection;
        for a in 0..p * k {
            prop_assert_eq!(perm[s2.negative[a]], s1.negative[perm[a]]);
            prop_assert_eq!(perm[s2.positive[a]], s1.positive[perm[a]]);
        }
    }

    #[test]
    fn breakdown_total_is_sum(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (p, k, classes) = (3, 3, 5);
        let reid = gaussian_rows(&mut rng, p * k, 4);
        let b = batch(&reid, &unit_rows(&mut rng, p * k, 3), p, k);
        let dev = Device::Cpu;
        let feats = fm(&reid).into_tensor();
        let w = fm(&gaussian_rows(&mut rng, classes, 4)).into_tensor();
        let bias = Tensor::zeros(classes, DType::F64, &dev).unwrap();
        let logits = fm(&gaussian_rows(&mut rng, p * k, 3)).into_tensor();
        let targets = logits.ge(0.0).unwrap().to_dtype(DType::F64).unwrap();
        let labels: Vec<usize> = (0..p * k).map(|i| i / k).collect();
        let inputs = LossInputs {
            batch: &b,
            final_features: &feats,
            labels: &labels,
            classifier_weight: &w,
            classifier_bias: &bias,
            attr_logits: &logits,
            attr_targets: &targets,
        };
        let out = unified_loss(&inputs, &LossConfig::default()).unwrap();
        let x = out.breakdown;
        prop_assert!((x.total - (x.l_bce + x.l_tri + x.l_softmax + x.l_aitl)).abs() < 1e-6);
        prop_assert!((out.total.to_scalar::<f64>().unwrap() - x.total).abs() < 1e-9);
    }

    #[test]
    fn trace_csv_round_trips(values in prop::collection::vec((0.0f64..2.0, 0.0f64..1.0), 1..20)) {
        let mut trace = DvdpTrace::new();
        for (i, (d, m)) in values.iter().enumerate() {
            trace.push(i + 1, *d, *m).unwrap();
        }
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let back = DvdpTrace::read_csv(buf.as_slice()).unwrap();
        prop_assert_eq!(back.points(), trace.points());
    }

    #[test]
    fn clip_indices_stay_in_chunks(len in 1usize..40, t in 1usize..10, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let idx = clip_indices(len, t, &mut rng);
        let center = center_clip_indices(len, t);
        prop_assert_eq!(idx.len(), t);
        prop_assert_eq!(center.len(), t);
        prop_assert!(idx.iter().chain(&center).all(|&i| i < len));
        if len >= t {
            for (i, (&a, &c)) in idx.iter().zip(&center).enumerate() {
                let (lo, hi) = (i * len / t, (i + 1) * len / t);
                prop_assert!((lo..hi).contains(&a) && (lo..hi).contains(&c));
            }
        }
    }
}
