use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::dataset::{split_head_tail, synthesize_long_tailed, LongTailSpec};
use crate::tensor::{finite_diff_grad, Activation, FeedForwardNet, Layer, LayerSpec, Matrix, NetGrads};
use crate::Error;

fn bank(centroids: Vec<Vec<f64>>, counts: Vec<usize>, is_head: Vec<bool>) -> PrototypeBank {
    PrototypeBank {
        centroids: Matrix::from_rows(&centroids).unwrap(),
        counts,
        is_head,
    }
}

fn zero_weight_net(c: usize, l: usize) -> FeedForwardNet {
    FeedForwardNet::from_layers(vec![Layer {
        spec: LayerSpec::new(c, l, Activation::Identity),
        weights: Matrix::zeros(l, c),
        bias: vec![0.0; l],
    }])
    .unwrap()
}

fn embedder(seed: u64, d: usize, c: usize, l: usize, mode: EtaMode, norm: WeightNorm) -> MetaEmbedder {
    let config = EmbedderConfig {
        eta_mode: mode,
        weight_norm: norm,
        ..EmbedderConfig::default()
    };
    MetaEmbedder::new(d, &[6], c, l, config, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn random_bank(rng: &mut ChaCha8Rng, l: usize, c: usize) -> PrototypeBank {
    let centroids = Matrix::random_uniform(l, c, 1.5, rng);
    let mut counts: Vec<usize> = (0..l).map(|k| 1 + (k * 7) % 5).collect();
    counts[l - 1] = 0;
    let is_head = (0..l).map(|k| k < l / 2).collect();
    PrototypeBank {
        centroids,
        counts,
        is_head,
    }
}

#[test]
fn single_active_class_memory_is_its_centroid() {
    let b = bank(vec![vec![1.0, -2.0], vec![0.0, 0.0]], vec![3, 0], vec![true, false]);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let net = FeedForwardNet::mlp(&[2, 2], Activation::Identity, Activation::Identity, &mut rng).unwrap();
    for norm in [WeightNorm::Softmax] {
        let (mem, w) = memory_feature(&[0.3, 0.9], &b, &net, norm).unwrap();
        assert_eq!(mem, vec![1.0, -2.0]);
        assert_eq!(w, vec![1.0, 0.0]);
    }
}

#[test]
fn equal_logits_average_two_centroids() {
    let b = bank(vec![vec![1.0, 3.0], vec![-1.0, 5.0]], vec![1, 1], vec![true, false]);
    let (mem, w) = memory_feature(&[0.7, -0.2], &b, &zero_weight_net(2, 2), WeightNorm::Softmax).unwrap();
    assert_eq!(w, vec![0.5, 0.5]);
    assert_eq!(mem, vec![0.0, 4.0]);
}

#[test]
fn empty_bank_is_a_configuration_error() {
    let b = bank(vec![vec![0.0, 0.0]], vec![0], vec![true]);
    let err = memory_feature(&[1.0, 1.0], &b, &zero_weight_net(2, 1), WeightNorm::Softmax).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
}

#[test]
fn memory_matches_explicit_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (c, l) = (4, 6);
    let b = random_bank(&mut rng, l, c);
    let net = FeedForwardNet::mlp(&[c, l], Activation::Identity, Activation::Identity, &mut rng).unwrap();
    let v: Vec<f64> = Matrix::random_uniform(1, c, 1.0, &mut rng).into_vec();
    let (mem, w) = memory_feature(&v, &b, &net, WeightNorm::Softmax).unwrap();

    let layer = &net.layers()[0];
    let logits: Vec<f64> = (0..l)
        .map(|k| layer.bias[k] + (0..c).map(|j| layer.weights[(k, j)] * v[j]).sum::<f64>())
        .collect();
    let exps: Vec<f64> = (0..l)
        .map(|k| if b.counts[k] > 0 { logits[k].exp() } else { 0.0 })
        .collect();
    let z: f64 = exps.iter().sum();
    for k in 0..l {
        assert!((w[k] - exps[k] / z).abs() < 1e-14);
    }
    for d in 0..c {
        let expect: f64 = (0..l).map(|k| exps[k] / z * b.centroids[(k, d)]).sum();
        assert!((mem[d] - expect).abs() < 1e-14);
    }

    let (mem_raw, w_raw) = memory_feature(&v, &b, &net, WeightNorm::Raw).unwrap();
    assert_eq!(w_raw[l - 1], 0.0);
    for d in 0..c {
        let expect: f64 = (0..l - 1).map(|k| logits[k] * b.centroids[(k, d)]).sum();
        assert!((mem_raw[d] - expect).abs() < 1e-12);
    }
}

#[test]
fn eta_symmetric_distances_give_one() {
    let b = bank(vec![vec![1.0, 0.0], vec![-1.0, 0.0]], vec![5, 2], vec![true, false]);
    for mode in [EtaMode::AsPrinted, EtaMode::IntentRatio] {
        assert_eq!(ratio_eta(&[0.0, 3.0], &b, mode, 10.0).unwrap(), 1.0);
    }
}

#[test]
fn eta_on_head_centroid_is_zero_in_intent_mode() {
    let b = bank(vec![vec![1.0, 2.0], vec![-1.0, 0.0]], vec![5, 2], vec![true, false]);
    assert_eq!(ratio_eta(&[1.0, 2.0], &b, EtaMode::IntentRatio, 10.0).unwrap(), 0.0);
    // as printed divides by the zero distance: floored then clamped
    assert_eq!(ratio_eta(&[1.0, 2.0], &b, EtaMode::AsPrinted, 10.0).unwrap(), 10.0);
}

#[test]
fn eta_hand_placed_centroids() {
    // heads at (0,0) and (4,0); tails at (0,3) and (10,10); v = (1,1)
    let b = bank(
        vec![vec![0.0, 0.0], vec![0.0, 3.0], vec![4.0, 0.0], vec![10.0, 10.0]],
        vec![9, 2, 9, 2],
        vec![true, false, true, false],
    );
    // d_head = min(2, 10) = 2; d_tail = min(5, 162) = 5
    let v = [1.0, 1.0];
    assert!((ratio_eta(&v, &b, EtaMode::IntentRatio, 10.0).unwrap() - 0.4).abs() < 1e-15);
    assert!((ratio_eta(&v, &b, EtaMode::AsPrinted, 10.0).unwrap() - 2.5).abs() < 1e-15);
    assert_eq!(ratio_eta(&v, &b, EtaMode::AsPrinted, 1.5).unwrap(), 1.5);
}

#[test]
fn eta_needs_head_and_tail() {
    let b = bank(vec![vec![0.0], vec![1.0]], vec![3, 3], vec![true, true]);
    assert!(matches!(ratio_eta(&[0.5], &b, EtaMode::IntentRatio, 10.0), Err(Error::Config(_))));
    let b = bank(vec![vec![0.0], vec![1.0]], vec![3, 0], vec![true, false]);
    assert!(ratio_eta(&[0.5], &b, EtaMode::AsPrinted, 10.0).is_err());
}

#[test]
fn meta_feature_degenerate_cases() {
    let mut e = embedder(3, 3, 2, 2, EtaMode::IntentRatio, WeightNorm::Softmax);
    e.weight_net = zero_weight_net(2, 2);
    let b = bank(vec![vec![1.0, 2.0], vec![3.0, 0.0]], vec![4, 1], vec![true, false]);
    // on the head centroid: η = 0
    let f = e.meta_feature(&[1.0, 2.0], &b).unwrap();
    assert_eq!(f.eta, 0.0);
    assert_eq!(f.v_meta, f.v_direct);
    // midpoint: equidistant (η = 1) and memory equals the midpoint itself
    let f = e.meta_feature(&[2.0, 1.0], &b).unwrap();
    assert_eq!(f.eta, 1.0);
    assert_eq!(f.v_memory, vec![2.0, 1.0]);
    assert_eq!(f.v_meta, vec![4.0, 2.0]);
}

#[test]
fn embed_batch_columns_match_per_sample_features() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for mode in [EtaMode::IntentRatio, EtaMode::AsPrinted, EtaMode::Learned] {
        let e = embedder(5, 5, 4, 6, mode, WeightNorm::Softmax);
        let b = random_bank(&mut rng, 6, 4);
        let x = Matrix::random_uniform(7, 5, 1.0, &mut rng);
        let (v, cache) = e.embed_batch(&x, &b).unwrap();
        assert_eq!(v.shape(), (4, 7));
        let direct = e.direct_features(&x).unwrap();
        for i in 0..7 {
            let f = e.meta_feature(direct.row(i), &b).unwrap();
            assert!((f.eta - cache.etas()[i]).abs() < 1e-12);
            for k in 0..4 {
                assert!((v[(k, i)] - f.v_meta[k]).abs() < 1e-12);
                // exact composition
                let recomposed = f.v_direct[k] + f.eta * f.v_memory[k];
                assert_eq!(f.v_meta[k], recomposed);
            }
            let s: f64 = cache.weights().row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn no_memory_returns_direct_features() {
    let mut e = embedder(6, 3, 2, 2, EtaMode::IntentRatio, WeightNorm::Softmax);
    e.config.use_memory = false;
    let b = bank(vec![vec![1.0, 2.0], vec![3.0, 0.0]], vec![4, 1], vec![true, false]);
    let x = Matrix::from_rows(&[vec![0.1, 0.2, 0.3]]).unwrap();
    let (v, _) = e.embed_batch(&x, &b).unwrap();
    assert_eq!(v, e.direct_features(&x).unwrap().transpose());
}

fn plain_basic_grads(e: &MetaEmbedder, x: &Matrix, g: &Matrix) -> NetGrads {
    let (_, cache) = e.basic_net.forward(x).unwrap();
    e.basic_net.backward(&cache, &g.transpose()).unwrap().0
}

#[test]
fn zero_eta_backward_is_plain_backward() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let e = embedder(8, 4, 3, 5, EtaMode::IntentRatio, WeightNorm::Softmax);
    let b = random_bank(&mut rng, 5, 3);
    let x = Matrix::random_uniform(6, 4, 1.0, &mut rng);
    let g = Matrix::random_uniform(3, 6, 1.0, &mut rng);
    let (_, cache) = e.embed_batch_with(&x, &b, Some(&[0.0; 6])).unwrap();
    let grads = e.embed_backward(&cache, &b, &g).unwrap();
    assert_eq!(grads.basic, plain_basic_grads(&e, &x, &g));
    assert_eq!(grads.weight.unwrap().max_abs(), 0.0);
}

#[test]
fn single_class_constant_memory_backward_is_plain_backward() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut e = embedder(10, 4, 3, 2, EtaMode::IntentRatio, WeightNorm::Softmax);
    e.weight_net = zero_weight_net(3, 2);
    let b = bank(vec![vec![0.5, -1.0, 2.0], vec![0.0; 3]], vec![3, 0], vec![true, false]);
    let x = Matrix::random_uniform(5, 4, 1.0, &mut rng);
    let g = Matrix::random_uniform(3, 5, 1.0, &mut rng);
    let (_, cache) = e.embed_batch_with(&x, &b, Some(&[0.7; 5])).unwrap();
    let grads = e.embed_backward(&cache, &b, &g).unwrap();
    let plain = plain_basic_grads(&e, &x, &g);
    let diff: f64 = grads
        .basic
        .flatten()
        .iter()
        .zip(plain.flatten())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(diff < 1e-14);
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    num / den.max(1e-12)
}

/// Scalar loss `Σ target ⊙ V_meta²` and its gradient.
fn check_against_finite_differences(mode: EtaMode, norm: WeightNorm, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let e = embedder(seed + 100, 4, 3, 5, mode, norm);
    let b = random_bank(&mut rng, 5, 3);
    let x = Matrix::random_uniform(6, 4, 1.0, &mut rng);
    let target = Matrix::random_uniform(3, 6, 1.0, &mut rng);

    // ratio-mode η is a stop-gradient constant: pin it at the base values
    let (_, base_cache) = e.embed_batch(&x, &b).unwrap();
    let pinned: Option<Vec<f64>> = (mode != EtaMode::Learned).then(|| base_cache.etas().to_vec());

    let loss = |emb: &MetaEmbedder| -> f64 {
        let (v, _) = emb.embed_batch_with(&x, &b, pinned.as_deref()).unwrap();
        v.as_slice().iter().zip(target.as_slice()).map(|(a, t)| t * a * a).sum()
    };
    let (v, cache) = e.embed_batch_with(&x, &b, pinned.as_deref()).unwrap();
    let g = v.zip_with(&target, "grad", |a, t| 2.0 * t * a).unwrap();
    let grads = e.embed_backward(&cache, &b, &g).unwrap();

    let fd_basic = finite_diff_grad(
        &e.basic_net,
        |net| {
            let mut probe = e.clone();
            probe.basic_net = net.clone();
            loss(&probe)
        },
        1e-6,
    );
    let err = rel_err(&grads.basic.flatten(), &fd_basic.flatten());
    assert!(err < 1e-4, "{mode:?}/{norm:?} basic net: {err}");

    let fd_weight = finite_diff_grad(
        &e.weight_net,
        |net| {
            let mut probe = e.clone();
            probe.weight_net = net.clone();
            loss(&probe)
        },
        1e-6,
    );
    let err = rel_err(&grads.weight.as_ref().unwrap().flatten(), &fd_weight.flatten());
    assert!(err < 1e-4, "{mode:?}/{norm:?} weight net: {err}");

    if mode == EtaMode::Learned {
        let eta_net = e.eta_net.as_ref().unwrap();
        let fd_eta = finite_diff_grad(
            eta_net,
            |net| {
                let mut probe = e.clone();
                probe.eta_net = Some(net.clone());
                loss(&probe)
            },
            1e-6,
        );
        let err = rel_err(&grads.eta.as_ref().unwrap().flatten(), &fd_eta.flatten());
        assert!(err < 1e-4, "eta net: {err}");
    }
}

#[test]
fn backward_matches_finite_differences() {
    for seed in 0..4 {
        check_against_finite_differences(EtaMode::Learned, WeightNorm::Softmax, seed);
        check_against_finite_differences(EtaMode::IntentRatio, WeightNorm::Softmax, seed);
        check_against_finite_differences(EtaMode::AsPrinted, WeightNorm::Raw, seed);
    }
}

#[test]
fn eta_ordering_on_gaussian_clusters() {
    let mut spec = LongTailSpec::flickr().scaled(20);
    spec.dim_x = 16;
    spec.dim_y = 8;
    let ds = synthesize_long_tailed(&spec, 11).unwrap();
    let partition = split_head_tail(&ds.labels.class_counts(), 100).unwrap();
    let e = embedder(12, 16, 8, ds.num_classes(), EtaMode::IntentRatio, WeightNorm::Softmax);
    let direct = e.direct_features(&ds.x).unwrap();
    let b = compute_prototypes(&direct, &ds.labels, &partition).unwrap();
    let mean_eta = |mode: EtaMode, head: bool| {
        let mut acc = 0.0;
        let mut count = 0;
        for i in 0..ds.len() {
            let k = ds.labels.row_labels(i)[0];
            if partition.is_head(k) == head {
                acc += ratio_eta(direct.row(i), &b, mode, 10.0).unwrap();
                count += 1;
            }
        }
        acc / count as f64
    };
    assert!(mean_eta(EtaMode::IntentRatio, true) < mean_eta(EtaMode::IntentRatio, false));
    assert!(mean_eta(EtaMode::AsPrinted, true) > mean_eta(EtaMode::AsPrinted, false));
}

proptest! {
    #[test]
    fn weights_lie_on_the_simplex(seed in 0u64..2000, scale in 0.1f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = random_bank(&mut rng, 7, 3);
        let net = FeedForwardNet::mlp(&[3, 7], Activation::Identity, Activation::Identity, &mut rng).unwrap();
        let v: Vec<f64> = Matrix::random_uniform(1, 3, scale, &mut rng).into_vec();
        let (_, w) = memory_feature(&v, &b, &net, WeightNorm::Softmax).unwrap();
        prop_assert!(w.iter().all(|&x| x >= 0.0));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
