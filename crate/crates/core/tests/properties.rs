use proptest::prelude::*;

use evovit::analysis::linear_cka;
use evovit::data::idx::{encode_images, encode_labels, parse_images, parse_labels};
use evovit::encoder::checkpoint;
use evovit::encoder::{block_forward, EncoderConfig, Image, LayerParams, ModelParams, SlowFastPlan};
use evovit::evolution::{
    keep_count, model_forward_evo, normalized_weights, select_informative, EvoConfig,
    GlobalClassAttention, ScheduleMode,
};
use evovit::numeric::{
    check_gradients, cross_entropy_backward, cross_entropy_logits, gelu, gelu_backward, gelu_map,
    layer_norm_backward, layer_norm_rows_cached, matmul, matmul_backward, softmax_rows,
    softmax_rows_backward, Matrix, ParamSet, Parameter, RngState, DEFAULT_STEP, LN_EPS,
};

fn dot(a: &Matrix, b: &Matrix) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn layer(c: usize, heads: usize, seed: u64) -> LayerParams {
    let cfg = EncoderConfig::new(2, 1, 1, c, heads, 1, 2);
    let mut rng = RngState::new(seed);
    let mut p = ModelParams::init(&cfg, &mut rng).unwrap();
    for q in p.params_mut() {
        for v in q.value.data_mut() {
            *v += 0.2 * rng.normal();
        }
    }
    p.layers.remove(0)
}

fn random_plan(n: usize, k: usize, rng: &mut RngState) -> SlowFastPlan {
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    let mut informative = order[..k].to_vec();
    let mut placeholder = order[k..].to_vec();
    informative.sort_unstable();
    placeholder.sort_unstable();
    let raw: Vec<f64> = placeholder.iter().map(|_| rng.uniform()).collect();
    SlowFastPlan {
        informative,
        placeholder,
        weights: normalized_weights(&raw),
    }
}

proptest! {
    #![proptest_config(ProptestConfig {
        cases: 48,
        failure_persistence: None,
        ..ProptestConfig::default()
    })]

    #[test]
    fn softmax_rows_are_distributions(r in 1usize..=8, c in 1usize..=8, seed: u64, shift in -50.0f64..50.0) {
        let mut rng = RngState::new(seed);
        let x = rng.normal_matrix(r, c, 3.0);
        let p = softmax_rows(&x);
        for i in 0..r {
            let s: f64 = p.row(i).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            prop_assert!(p.row(i).iter().all(|&v| v > 0.0 && v <= 1.0));
        }
        let shifted = Matrix::from_vec(r, c, x.data().iter().map(|v| v + shift).collect()).unwrap();
        prop_assert!(softmax_rows(&shifted).max_abs_diff(&p) < 1e-12);
    }

    #[test]
    fn matmul_gradients(m in 1usize..=8, k in 1usize..=8, n in 1usize..=8, seed: u64) {
        let mut rng = RngState::new(seed);
        let r = rng.normal_matrix(m, n, 1.0);
        let mut ps = vec![
            Parameter::new("a", rng.normal_matrix(m, k, 1.0), false),
            Parameter::new("b", rng.normal_matrix(k, n, 1.0), false),
        ];
        let rep = check_gradients(&mut ps, DEFAULT_STEP, |p, g| {
            let c = matmul(&p[0].value, &p[1].value)?;
            if g {
                let (da, db) = matmul_backward(&p[0].value, &p[1].value, &r)?;
                p[0].accumulate(&da);
                p[1].accumulate(&db);
            }
            Ok(dot(&c, &r))
        }).unwrap();
        prop_assert!(rep.max_rel_error < 1e-7, "{:?}", rep);
    }

    #[test]
    fn softmax_gradients(m in 1usize..=8, n in 1usize..=8, seed: u64) {
        let mut rng = RngState::new(seed);
        let r = rng.normal_matrix(m, n, 1.0);
        let mut ps = vec![Parameter::new("x", rng.normal_matrix(m, n, 2.0), false)];
        let rep = check_gradients(&mut ps, DEFAULT_STEP, |p, g| {
            let s = softmax_rows(&p[0].value);
            if g {
                p[0].accumulate(&softmax_rows_backward(&s, &r));
            }
            Ok(dot(&s, &r))
        }).unwrap();
        prop_assert!(rep.max_rel_error < 1e-7, "{:?}", rep);
    }

    #[test]
    fn layer_norm_gradients_and_moments(m in 1usize..=8, n in 2usize..=8, seed: u64) {
        let mut rng = RngState::new(seed);
        let r = rng.normal_matrix(m, n, 1.0);
        let x = rng.normal_matrix(m, n, 2.0);
        let (y, _) = layer_norm_rows_cached(&x, &vec![1.0; n], &vec![0.0; n], LN_EPS).unwrap();
        let moments = |row: &[f64]| {
            let mean = row.iter().sum::<f64>() / n as f64;
            (mean, row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64)
        };
        for i in 0..m {
            let (_, v_in) = moments(x.row(i));
            let (mean, var) = moments(y.row(i));
            prop_assert!(mean.abs() < 1e-12);
            prop_assert!((var - v_in / (v_in + LN_EPS)).abs() < 1e-9);
        }
        let mut ps = vec![
            Parameter::new("x", x, false),
            Parameter::new("gain", rng.normal_matrix(1, n, 1.0), false),
            Parameter::new("bias", rng.normal_matrix(1, n, 1.0), false),
        ];
        let rep = check_gradients(&mut ps, DEFAULT_STEP, |p, g| {
            let gain = p[1].value.data().to_vec();
            let (y, cache) = layer_norm_rows_cached(&p[0].value, &gain, p[2].value.data(), LN_EPS)?;
            if g {
                let (dx, dg, db) = layer_norm_backward(&cache, &gain, &r);
                p[0].accumulate(&dx);
                p[1].accumulate_slice(&dg);
                p[2].accumulate_slice(&db);
            }
            Ok(dot(&y, &r))
        }).unwrap();
        prop_assert!(rep.max_rel_error < 1e-6, "{:?}", rep);
    }

    #[test]
    fn gelu_and_cross_entropy_gradients(m in 1usize..=8, n in 2usize..=8, seed: u64) {
        let mut rng = RngState::new(seed);
        let r = rng.normal_matrix(m, n, 1.0);
        let mut ps = vec![Parameter::new("x", rng.normal_matrix(m, n, 2.0), false)];
        let rep = check_gradients(&mut ps, DEFAULT_STEP, |p, g| {
            let y = gelu_map(&p[0].value);
            if g {
                let d = gelu_backward(&p[0].value, &r);
                p[0].accumulate(&d);
            }
            Ok(dot(&y, &r))
        }).unwrap();
        prop_assert!(rep.max_rel_error < 1e-7, "{:?}", rep);

        let labels: Vec<usize> = (0..m).map(|_| rng.below(n)).collect();
        let rep = check_gradients(&mut ps, DEFAULT_STEP, |p, g| {
            if g {
                let d = cross_entropy_backward(&p[0].value, &labels)?;
                p[0].accumulate(&d);
            }
            cross_entropy_logits(&p[0].value, &labels)
        }).unwrap();
        prop_assert!(rep.max_rel_error < 1e-7, "{:?}", rep);
    }

    #[test]
    fn gelu_monotone_on_nonnegative_axis(a in 0.0f64..20.0, d in 0.0f64..5.0) {
        prop_assert!(gelu(a) <= gelu(a + d));
    }

    #[test]
    fn selection_matches_sort_oracle(scores in prop::collection::vec(0u8..6, 1..64), pct in 1u32..=100) {
        let scores: Vec<f64> = scores.into_iter().map(|v| f64::from(v) / 5.0).collect();
        let ratio = f64::from(pct) / 100.0;
        let sel = select_informative(&scores, ratio).unwrap();
        let mut idx: Vec<usize> = (0..scores.len()).collect();
        idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        let mut expected = idx[..keep_count(ratio, scores.len())].to_vec();
        expected.sort_unstable();
        prop_assert_eq!(&sel.informative, &expected);
        prop_assert_eq!(sel.k() + sel.placeholder.len(), scores.len());
    }

    #[test]
    fn dense_block_permutation_equivariant(n in 2usize..=10, seed: u64) {
        let c = 8;
        let lp = layer(c, 2, seed);
        let mut rng = RngState::new(seed ^ 1);
        let x = rng.normal_matrix(n + 1, c, 1.0);
        let mut perm: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut perm);
        let rows: Vec<usize> = std::iter::once(0).chain(perm.iter().map(|p| p + 1)).collect();
        let (y, _) = block_forward(&x, &lp, 2, None).unwrap();
        let (yp, _) = block_forward(&x.gather_rows(&rows), &lp, 2, None).unwrap();
        prop_assert!(yp.max_abs_diff(&y.gather_rows(&rows)) < 1e-12);
    }

    #[test]
    fn slow_fast_block_permutation_equivariant(n in 3usize..=10, seed: u64) {
        let c = 8;
        let lp = layer(c, 2, seed);
        let mut rng = RngState::new(seed ^ 2);
        let x = rng.normal_matrix(n + 1, c, 1.0);
        let k = 1 + rng.below(n - 1);
        let plan = random_plan(n, k, &mut rng);
        let mut perm: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut perm);
        // Patch j of the permuted sequence is patch perm[j] of the original.
        let mut inv = vec![0; n];
        for (j, &p) in perm.iter().enumerate() {
            inv[p] = j;
        }
        let mut informative: Vec<usize> = plan.informative.iter().map(|&i| inv[i]).collect();
        informative.sort_unstable();
        let mut pairs: Vec<(usize, f64)> = plan.placeholder.iter().zip(&plan.weights).map(|(&i, &w)| (inv[i], w)).collect();
        pairs.sort_by_key(|p| p.0);
        let permuted = SlowFastPlan {
            informative,
            placeholder: pairs.iter().map(|p| p.0).collect(),
            weights: pairs.iter().map(|p| p.1).collect(),
        };
        let rows: Vec<usize> = std::iter::once(0).chain(perm.iter().map(|p| p + 1)).collect();
        let (y, _) = block_forward(&x, &lp, 2, Some(plan)).unwrap();
        let (yp, _) = block_forward(&x.gather_rows(&rows), &lp, 2, Some(permuted)).unwrap();
        prop_assert!(yp.max_abs_diff(&y.gather_rows(&rows)) < 1e-12);
    }

    #[test]
    fn placeholders_share_one_additive_update(n in 2usize..=12, seed: u64) {
        let c = 8;
        let lp = layer(c, 4, seed);
        let mut rng = RngState::new(seed ^ 3);
        let x = rng.normal_matrix(n + 1, c, 1.0);
        let k = 1 + rng.below(n - 1);
        let plan = random_plan(n, k, &mut rng);
        let (y, trace) = block_forward(&x, &lp, 4, Some(plan.clone())).unwrap();
        prop_assert_eq!(y.rows(), n + 1);
        let (r1, r2) = trace.rep_residuals.clone().unwrap();
        for &ph in &plan.placeholder {
            for j in 0..c {
                let delta = y.get(ph + 1, j) - x.get(ph + 1, j);
                prop_assert!((delta - (r1[j] + r2[j])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn full_keep_ratio_matches_dense(depth in 2usize..=5, heads_pow in 0u32..=2, seed: u64) {
        let heads = 1 << heads_pow;
        let cfg = EncoderConfig::new(8, 2, 1, 8, heads, depth, 3);
        let mut rng = RngState::new(seed);
        let params = ModelParams::init(&cfg, &mut rng).unwrap();
        let img = Image::new(8, 8, 1, (0..64).map(|_| rng.uniform()).collect()).unwrap();
        let dense = evovit::encoder::model_forward_vanilla(&img, &params, &cfg, false).unwrap();
        let start = 2 + rng.below(depth - 1);
        let evo = model_forward_evo(&img, &params, &cfg, &EvoConfig::with_ratio(1.0, start), ScheduleMode::LayerWise).unwrap();
        for (a, b) in dense.logits_avg.iter().zip(&evo.logits_avg) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn global_attention_stays_in_unit_interval(n in 1usize..=32, layers in 1usize..=12, alpha in 0.0f64..=1.0, seed: u64) {
        let mut rng = RngState::new(seed);
        let mut g = GlobalClassAttention::new(n);
        for l in 0..layers {
            let raw: Vec<f64> = (0..=n).map(|_| rng.uniform()).collect();
            let a = normalized_weights(&raw);
            let mask: Option<Vec<usize>> = (l > 0 && rng.uniform() < 0.5).then(|| select_informative(&g.scores, 0.5).unwrap().informative);
            g.update(&a, alpha, mask.as_deref()).unwrap();
            prop_assert!(g.scores.iter().chain([&g.cls_share]).all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn cka_invariances(rows in 3usize..=20, d1 in 1usize..=6, d2 in 1usize..=6, a in 0.1f64..10.0, b in 0.1f64..10.0, seed: u64) {
        let mut rng = RngState::new(seed);
        let x = rng.normal_matrix(rows, d1, 1.0);
        let y = rng.normal_matrix(rows, d2, 1.0);
        let base = linear_cka(&x, &y).unwrap();
        prop_assert!((0.0..=1.0).contains(&base));
        prop_assert!((linear_cka(&x.scale(a), &y.scale(b)).unwrap() - base).abs() < 1e-10);
        prop_assert!((linear_cka(&y, &x).unwrap() - base).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_round_trip(c_half in 1usize..=4, depth in 1usize..=3, classes in 2usize..=5, seed: u64) {
        let cfg = EncoderConfig::new(4, 2, 2, 2 * c_half, 2, depth, classes);
        let p = ModelParams::init(&cfg, &mut RngState::new(seed)).unwrap();
        let bytes = checkpoint::encode(&cfg, &p);
        let (cfg2, p2) = checkpoint::decode(&bytes).unwrap();
        prop_assert_eq!(&cfg, &cfg2);
        prop_assert_eq!(checkpoint::encode(&cfg2, &p2), bytes);
    }

    #[test]
    fn idx_round_trip(count in 1usize..=5, side in 1usize..=6, labels in prop::collection::vec(0usize..10, 5)) {
        let images: Vec<Image> = (0..count)
            .map(|i| Image::new(side, side, 1, (0..side * side).map(|j| ((i * 31 + j * 7) % 256) as f64 / 255.0).collect()).unwrap())
            .collect();
        let parsed = parse_images(&encode_images(&images)).unwrap();
        prop_assert_eq!(parsed, images);
        prop_assert_eq!(parse_labels(&encode_labels(&labels)).unwrap(), labels);
    }
}
