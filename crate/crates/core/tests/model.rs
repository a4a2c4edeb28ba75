use esiqa_core::model::blocks::multihead_attention;
use esiqa_core::model::layers::ForwardCtx;
use esiqa_core::model::params::Init;
use esiqa_core::model::*;
use esiqa_core::tensor::{backward, no_grad, Tensor};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn store_with<T>(seed: u64, build: impl FnOnce(&mut Init) -> T) -> (ParamStore, T) {
    let mut ps = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let block = build(&mut Init { store: &mut ps, rng: &mut rng });
    (ps, block)
}

fn set_identity_linear(ps: &mut ParamStore, l: &layers::Linear, c: usize) {
    let mut w = vec![0.0; c * c];
    for i in 0..c {
        w[i * c + i] = 1.0;
    }
    ps.set_data(l.weight, w);
    ps.set_data(l.bias, vec![0.0; c]);
}

fn softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

fn random_ssd(rng: &mut ChaCha8Rng, l: usize, n: usize) -> SsdParams {
    SsdParams {
        a: (0..l).map(|_| rng.random_range(1e-3..=1.0)).collect(),
        b: (0..l * n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        c: (0..l * n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        delta: (0..l).map(|_| rng.random_range(0.01..2.0)).collect(),
        state: n,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn duality(seed in any::<u64>(), l in 1usize..=32, n in 1usize..=8, width in 1usize..=4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_ssd(&mut rng, l, n);
        let x: Vec<f64> = (0..l * width).map(|_| rng.random_range(-2.0..2.0)).collect();
        let r = ssd_recurrent(&x, width, &p).unwrap();
        let d = ssd_dual(&x, width, &p).unwrap();
        let scale = r.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
        let dev = r.iter().zip(&d).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        prop_assert!(dev < 1e-8);
        prop_assert!(dev / scale < 1e-8);
    }

    #[test]
    fn ncssd_permutation_equivariance(seed in any::<u64>()) {
        let (mut ps, mixer) = store_with(seed, |i| blocks::NcSsd::new(i, "m", 8, 2));
        mixer.conv.set_identity(&mut ps);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let x = Tensor::randn(&[2, 9, 8], 1.0, &mut rng);
        let mut perm: Vec<usize> = (0..9).collect();
        perm.shuffle(&mut rng);
        let permute = |t: &Tensor| {
            let mut out = Vec::with_capacity(t.numel());
            for b in 0..2 {
                for &p in &perm {
                    out.extend_from_slice(&t.data()[(b * 9 + p) * 8..(b * 9 + p + 1) * 8]);
                }
            }
            Tensor::new(out, &[2, 9, 8]).unwrap()
        };
        let y = mixer.forward(&ps, &x, 3).unwrap();
        let yp = mixer.forward(&ps, &permute(&x), 3).unwrap();
        for (a, b) in permute(&y).data().iter().zip(yp.data()) {
            prop_assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn transposed_attention_rows_are_stochastic(seed in any::<u64>(), heads in 1usize..=2) {
        let (ps, ta) = store_with(seed, |i| TransposedAttention::new(i, "t", 8, heads));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = Tensor::randn(&[2, 9, 8], 3.0, &mut rng);
        let a = ta.attention_map(&ps, &f).unwrap();
        for row in a.data().chunks(8 / heads) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn ncssd_dead_gates_give_zero() {
    let (mut ps, mixer) = store_with(4, |i| blocks::NcSsd::new(i, "m", 8, 2));
    ps.set_data(mixer.a_log, vec![50.0, 50.0]);
    let x = Tensor::randn(&[1, 9, 8], 1.0, &mut ChaCha8Rng::seed_from_u64(2));
    let y = mixer.forward(&ps, &x, 3).unwrap();
    assert!(y.data().iter().all(|&v| v == 0.0));
    assert!(mixer.forward(&ps, &Tensor::zeros(&[1, 8, 8]), 3).is_err());
}

#[test]
fn zeroed_residual_blocks_are_identity() {
    let x = Tensor::randn(&[2, 9, 8], 1.0, &mut ChaCha8Rng::seed_from_u64(9));
    let r = Tensor::randn(&[2, 9, 8], 1.0, &mut ChaCha8Rng::seed_from_u64(10));

    let (mut ps, vssd) = store_with(1, |i| VssdBlock::new(i, "v", 8, 2));
    vssd.zero_outputs(&mut ps);
    let y = vssd.forward(&ps, &x, 3).unwrap();
    assert_ne!(y.data(), x.data());
    vssd.zero_local_perception(&mut ps);
    assert_eq!(vssd.forward(&ps, &x, 3).unwrap().data(), x.data());
    assert_eq!(y.extents(), x.extents());

    let (mut ps, msa) = store_with(2, |i| MsaBlock::new(i, "m", 8, 2).unwrap());
    msa.zero_outputs(&mut ps);
    assert_eq!(msa.forward(&ps, &x).unwrap().data(), x.data());

    let (mut ps, ta) = store_with(3, |i| TransposedAttention::new(i, "t", 8, 1));
    ta.proj.zero(&mut ps);
    assert_eq!(ta.forward(&ps, &x).unwrap().data(), x.data());

    let (mut ps, ca) = store_with(4, |i| CrossAttention::new(i, "c", 8, 2));
    ca.proj.zero(&mut ps);
    assert_eq!(ca.forward(&ps, &x, &r).unwrap().data(), x.data());
}

#[test]
fn msa_divisibility() {
    let mut ps = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(matches!(
        MsaBlock::new(&mut Init { store: &mut ps, rng: &mut rng }, "m", 10, 4),
        Err(ModelError::Config(_))
    ));
}

#[test]
fn msa_identical_tokens_stay_identical() {
    let (ps, msa) = store_with(5, |i| MsaBlock::new(i, "m", 8, 2).unwrap());
    let token: Vec<f64> = (0..8).map(|i| (i as f64 * 0.7).sin()).collect();
    let x = Tensor::new(token.repeat(4), &[1, 4, 8]).unwrap();
    let y = msa.forward(&ps, &x).unwrap();
    let first = &y.data()[..8];
    for t in y.data().chunks(8) {
        for (a, b) in t.iter().zip(first) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn single_head_attention_two_tokens_by_hand() {
    let q = Tensor::new(vec![1.0, 0.0, 0.0, 1.0], &[1, 2, 2]).unwrap();
    let k = Tensor::new(vec![1.0, 0.0, 0.0, 2.0], &[1, 2, 2]).unwrap();
    let v = Tensor::new(vec![1.0, 2.0, 3.0, 4.0], &[1, 2, 2]).unwrap();
    let y = multihead_attention(&q, &k, &v, 1).unwrap();
    let s = 2f64.sqrt();
    // row 0 scores [1/√2, 0], row 1 scores [0, 2/√2]
    let w0 = 1.0 / (1.0 + (-1.0 / s).exp());
    let w1 = 1.0 / (1.0 + (-2.0 / s).exp());
    let expect =
        [w0 + 3.0 * (1.0 - w0), 2.0 * w0 + 4.0 * (1.0 - w0), (1.0 - w1) + 3.0 * w1, 2.0 * (1.0 - w1) + 4.0 * w1];
    for (a, b) in y.data().iter().zip(expect) {
        assert!((a - b).abs() < 1e-14, "{a} vs {b}");
    }
}

#[test]
fn cross_attention_three_tokens_by_hand() {
    let (mut ps, ca) = store_with(6, |i| CrossAttention::new(i, "c", 2, 1));
    for l in [&ca.q, &ca.k, &ca.v, &ca.proj] {
        set_identity_linear(&mut ps, l, 2);
    }
    let left = [[0.5, -1.0], [2.0, 0.0], [-0.3, 0.8]];
    let right = [[1.0, 1.0], [0.0, -2.0], [1.5, 0.5]];
    let lt = Tensor::new(left.concat(), &[1, 3, 2]).unwrap();
    let rt = Tensor::new(right.concat(), &[1, 3, 2]).unwrap();
    let y = ca.forward(&ps, &lt, &rt).unwrap();
    for t in 0..3 {
        let scores: Vec<f64> = right.iter().map(|r| (left[t][0] * r[0] + left[t][1] * r[1]) / 2f64.sqrt()).collect();
        let w = softmax(&scores);
        for ch in 0..2 {
            let attended: f64 = (0..3).map(|s| w[s] * right[s][ch]).sum();
            let expect = attended + left[t][ch];
            assert!((y.data()[t * 2 + ch] - expect).abs() < 1e-14);
        }
    }
}

#[test]
fn cross_attention_identical_keys_average_values() {
    let (mut ps, ca) = store_with(7, |i| CrossAttention::new(i, "c", 4, 2));
    ca.k.zero(&mut ps);
    set_identity_linear(&mut ps, &ca.proj, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let left = Tensor::randn(&[1, 5, 4], 1.0, &mut rng);
    let right = Tensor::randn(&[1, 5, 4], 1.0, &mut rng);
    let y = ca.forward(&ps, &left, &right).unwrap();
    let v = ca.v.forward(&ps, &right).unwrap();
    let mean: Vec<f64> = (0..4).map(|ch| (0..5).map(|t| v.data()[t * 4 + ch]).sum::<f64>() / 5.0).collect();
    for t in 0..5 {
        for ch in 0..4 {
            let expect = mean[ch] + left.data()[t * 4 + ch];
            assert!((y.data()[t * 4 + ch] - expect).abs() < 1e-12);
        }
    }
    let bad = Tensor::zeros(&[1, 4, 4]);
    assert!(matches!(ca.forward(&ps, &left, &bad), Err(ModelError::Extents(_))));
}

#[test]
fn transposed_attention_by_hand() {
    let (mut ps, ta) = store_with(8, |i| TransposedAttention::new(i, "t", 2, 1));
    for l in [&ta.q, &ta.k, &ta.v, &ta.proj] {
        set_identity_linear(&mut ps, l, 2);
    }
    let x = [[1.0, 0.5], [-0.5, 2.0], [0.3, -1.0]];
    let f = Tensor::new(x.concat(), &[1, 3, 2]).unwrap();
    let y = ta.forward(&ps, &f).unwrap();
    // A[i][j] = softmax_j(Σ_t x[t][i]·x[t][j] / √2)
    let gram = |i: usize, j: usize| (0..3).map(|t| x[t][i] * x[t][j]).sum::<f64>() / 2f64.sqrt();
    let a: Vec<Vec<f64>> = (0..2).map(|i| softmax(&[gram(i, 0), gram(i, 1)])).collect();
    for t in 0..3 {
        for i in 0..2 {
            let expect = x[t][0] * a[i][0] + x[t][1] * a[i][1] + x[t][i];
            assert!((y.data()[t * 2 + i] - expect).abs() < 1e-14);
        }
    }
}

#[test]
fn micro_shapes_at_224() {
    let cfg = ModelConfig::micro().with_mode(DisplayMode::Flat);
    assert_eq!(cfg.feature_len(), 720);
    let model = Esiqanet::new(cfg, 0).unwrap();
    let x = Tensor::full(&[1, 3, 224, 224], 0.1);
    let feats = no_grad(|| model.stage_features(&x, None, &mut ForwardCtx::eval())).unwrap();
    let got: Vec<Vec<usize>> = feats.iter().map(|f| f.left.extents().to_vec()).collect();
    assert_eq!(got, vec![vec![1, 3136, 48], vec![1, 784, 96], vec![1, 196, 192], vec![1, 49, 384]]);
    let cm = feats[0].left_channel_major().unwrap();
    assert_eq!(cm.extents(), &[1, 48, 3136]);
}

#[test]
fn zero_cross_projection_matches_flat_mode() {
    let mut stereo = Esiqanet::new(ModelConfig::reduced(), 12).unwrap();
    stereo.zero_cross_attention_outputs();
    let mut flat = Esiqanet::new(ModelConfig::reduced().with_mode(DisplayMode::Flat), 99).unwrap();
    let ids: Vec<_> = flat.params().ids().collect();
    for id in ids {
        let name = flat.params().entry(id).name.clone();
        let src = stereo.params().find(&name).expect("shared parameter");
        let data = stereo.params().get(src).data().to_vec();
        flat.params_mut().set_data(id, data);
    }
    let img = Tensor::randn(&[3, 32, 32], 1.0, &mut ChaCha8Rng::seed_from_u64(4));
    let a = stereo.predict(&img, Some(&img)).unwrap();
    let b = flat.predict(&img, None).unwrap();
    assert_eq!(a, b);
}

#[test]
fn finite_outputs_and_gradients_over_seeds() {
    for seed in 0..10 {
        let model = Esiqanet::new(ModelConfig::reduced(), seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let l = Tensor::randn(&[2, 3, 32, 32], 2.0, &mut rng);
        let r = Tensor::randn(&[2, 3, 32, 32], 2.0, &mut rng);
        let y = model.forward(&l, Some(&r), &mut ForwardCtx::train(seed)).unwrap();
        assert!(y.is_finite());
        let g = backward(&y.sum()).unwrap();
        for e in model.params().entries() {
            let grad = g.get(&e.value).unwrap_or_else(|| panic!("no gradient for {}", e.name));
            assert!(grad.is_finite(), "{}", e.name);
        }
    }
}

#[test]
fn parameter_counts_scale_quadratically() {
    let base = ModelConfig::custom([1, 1, 2, 1], [8, 16, 32, 64], [1, 2, 4, 8]);
    let double = ModelConfig::custom([1, 1, 2, 1], [16, 32, 64, 128], [1, 2, 4, 8]);
    let a = Esiqanet::new(base.clone(), 0).unwrap().param_report();
    let a2 = Esiqanet::new(base, 7).unwrap().param_report();
    let b = Esiqanet::new(double, 0).unwrap().param_report();
    assert_eq!(a, a2);
    assert_eq!(b.kind(ParamKind::ChannelAffine), 4 * a.kind(ParamKind::ChannelAffine));
}
