mod support;

use hierlearn::metrics::{
    ahd, ahs_at_k, hp_at_k, hs_at_k, mean_correlation_values, retrieval_hs_means, retrieval_list, spearman, topk_accuracy,
};
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::*;

#[test]
fn rank_metrics_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let inst = instance(&mut rng);
        let k_max = inst.d_h.nrows();
        for k in [1, 2, k_max.min(5), k_max] {
            let r = ranked(&inst, k);
            assert_eq!(topk_accuracy(&r, &inst.labels, k).unwrap(), oracle_topk(&inst, k));
            assert!((ahd(&r, &inst.labels, inst.d_h.view(), k).unwrap() - oracle_ahd(&inst, k)).abs() <= 1e-12);
            assert!((hp_at_k(&r, &inst.labels, inst.d_h.view(), k).unwrap() - oracle_hp(&inst, k)).abs() <= 1e-12);
        }
    }
}

#[test]
fn retrieval_metrics_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..50 {
        let inst = instance(&mut rng);
        let n = inst.labels.len();
        let max_k = rng.random_range(1..=10);
        let mut oracle_means = vec![0.0; max_k];
        for q in 0..n {
            let list = retrieval_list(inst.embeds.view(), &inst.labels, q).classes();
            let expected = oracle_retrieved(&inst, q);
            assert_eq!(list, expected);
            for k in 1..=max_k {
                let hs = hs_at_k(inst.labels[q], &list, inst.s_h.view(), k).unwrap();
                let want = oracle_hs(&inst, q, &expected, k);
                assert!((hs - want).abs() <= 1e-12);
                oracle_means[k - 1] += want / n as f64;
            }
        }
        let means = retrieval_hs_means(inst.embeds.view(), &inst.labels, inst.s_h.view(), max_k, Some(2)).unwrap();
        for (a, b) in means.iter().zip(&oracle_means) {
            assert!((a - b).abs() <= 1e-12);
        }
        let ahs = ahs_at_k(&means, max_k).unwrap();
        assert!((ahs - oracle_means.iter().sum::<f64>() / max_k as f64).abs() <= 1e-12);
    }
}

#[test]
fn mean_correlation_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut checked = 0;
    while checked < 50 {
        let inst = instance(&mut rng);
        let k = inst.d_h.nrows();
        let pts = Array2::from_shape_fn((k, 4), |_| rng.random_range(-1.0..1.0f64));
        let mut learned = Array2::zeros((k, k));
        for i in 0..k {
            for j in 0..k {
                learned[[i, j]] = (&pts.row(i) - &pts.row(j)).mapv(|x| x * x).sum().sqrt();
            }
        }
        // trees where some class sees every other class at one distance have a constant row
        let Ok(got) = mean_correlation_values(learned.view(), inst.d_h.view()) else {
            continue;
        };
        assert!((got - oracle_mean_corr(&learned, &inst.d_h)).abs() <= 1e-12);
        checked += 1;
    }
}

#[test]
fn retrieval_means_do_not_depend_on_thread_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let inst = instance(&mut rng);
    let one = retrieval_hs_means(inst.embeds.view(), &inst.labels, inst.s_h.view(), 8, Some(1)).unwrap();
    let many = retrieval_hs_means(inst.embeds.view(), &inst.labels, inst.s_h.view(), 8, Some(4)).unwrap();
    let all = retrieval_hs_means(inst.embeds.view(), &inst.labels, inst.s_h.view(), 8, None).unwrap();
    assert_eq!(one, many);
    assert_eq!(one, all);
}

#[test]
fn ahd_is_zero_exactly_when_top1_is_perfect() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for _ in 0..50 {
        let inst = instance(&mut rng);
        let r = ranked(&inst, 1);
        let top1 = topk_accuracy(&r, &inst.labels, 1).unwrap();
        let a = ahd(&r, &inst.labels, inst.d_h.view(), 1).unwrap();
        assert_eq!(a == 0.0, top1 == 1.0);
        let perfect: Vec<Vec<usize>> = inst.labels.iter().map(|&c| vec![c]).collect();
        assert_eq!(topk_accuracy(&perfect, &inst.labels, 1).unwrap(), 1.0);
        assert_eq!(ahd(&perfect, &inst.labels, inst.d_h.view(), 1).unwrap(), 0.0);
    }
}

proptest! {
    #[test]
    fn spearman_is_invariant_under_monotone_maps(v in prop::collection::vec((0.0f64..50.0, 0.0f64..50.0), 3..40)) {
        let (a, b): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
        prop_assume!(a.iter().any(|&x| x != a[0]) && b.iter().any(|&x| x != b[0]));
        let base = spearman(&a, &b).unwrap();
        let cubed: Vec<f64> = a.iter().map(|x| x.powi(3)).collect();
        let logged: Vec<f64> = b.iter().map(|x| x.ln_1p()).collect();
        prop_assert!((spearman(&cubed, &logged).unwrap() - base).abs() < 1e-12);
        prop_assert!((base - oracle_spearman(&a, &b)).abs() < 1e-12);
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&base));
    }

    #[test]
    fn spearman_is_symmetric(v in prop::collection::vec((-5i32..5, -5i32..5), 3..30)) {
        let a: Vec<f64> = v.iter().map(|p| p.0 as f64).collect();
        let b: Vec<f64> = v.iter().map(|p| p.1 as f64).collect();
        prop_assert_eq!(spearman(&a, &b), spearman(&b, &a));
    }

    #[test]
    fn hs_lies_in_unit_interval(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = instance(&mut rng);
        let list = retrieval_list(inst.embeds.view(), &inst.labels, 0).classes();
        for k in 1..=list.len().min(20) {
            let hs = hs_at_k(inst.labels[0], &list, inst.s_h.view(), k).unwrap();
            prop_assert!(hs > 0.0 && hs <= 1.0 + 1e-12);
        }
    }
}
