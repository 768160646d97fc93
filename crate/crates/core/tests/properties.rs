use minn::data::{fit_zscore, stratified_folds, Bag, Dataset};
use minn::eval::auc;
use minn::linalg::{max_abs_diff, Matrix};
use minn::pooling::{pool, pool_att, pool_mean, pool_sum, pool_uatt, softmax, AttentionParams, PoolingKind};
use proptest::prelude::*;

fn bag_strategy(dim: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-5.0f64..5.0, dim), 1..10)
}

fn matrix(rows: &[Vec<f64>]) -> Matrix {
    Matrix::from_rows(rows).unwrap()
}

fn scores_and_labels() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    (2usize..60).prop_flat_map(|n| {
        (
            prop::collection::vec(-10.0f64..10.0, n),
            prop::collection::vec(0u8..2, n).prop_map(|mut l| {
                l[0] = 1;
                l[1] = 0;
                l
            }),
        )
    })
}

proptest! {
    #[test]
    fn pooling_ignores_instance_order(rows in bag_strategy(4), seed in 0u64..1000, rot in 0usize..10) {
        let params = AttentionParams::random(3, 4, 1.0, seed);
        let mut rotated = rows.clone();
        let k = rot % rows.len();
        rotated.rotate_left(k);
        rotated.reverse();
        for kind in PoolingKind::ALL {
            let a = pool(kind, &matrix(&rows), Some(&params)).unwrap().z;
            let b = pool(kind, &matrix(&rotated), Some(&params)).unwrap().z;
            prop_assert!(max_abs_diff(&a, &b) <= 1e-12, "{kind}");
        }
    }

    #[test]
    fn softmax_is_a_distribution(logits in prop::collection::vec(-700.0f64..700.0, 1..20)) {
        let a = softmax(&logits);
        prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(a.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn uatt_gate_does_not_depend_on_bag_mates(rows in bag_strategy(3), extra in bag_strategy(3), seed in 0u64..100) {
        let params = AttentionParams::random(4, 3, 1.0, seed);
        let (_, alone) = pool_uatt(&params, &matrix(&rows)).unwrap();
        let joined: Vec<Vec<f64>> = rows.iter().chain(&extra).cloned().collect();
        let (_, together) = pool_uatt(&params, &matrix(&joined)).unwrap();
        prop_assert!(max_abs_diff(&alone, &together[..rows.len()]) <= 1e-15);
    }

    #[test]
    fn sum_is_additive_over_bag_union(a in bag_strategy(3), b in bag_strategy(3)) {
        let joined: Vec<Vec<f64>> = a.iter().chain(&b).cloned().collect();
        let za = pool_sum(&matrix(&a)).unwrap();
        let zb = pool_sum(&matrix(&b)).unwrap();
        let zj = pool_sum(&matrix(&joined)).unwrap();
        let added: Vec<f64> = za.iter().zip(&zb).map(|(x, y)| x + y).collect();
        prop_assert!(max_abs_diff(&added, &zj) <= 1e-12);
    }

    #[test]
    fn mean_ignores_duplication(rows in bag_strategy(3)) {
        let doubled: Vec<Vec<f64>> = rows.iter().chain(&rows).cloned().collect();
        prop_assert!(max_abs_diff(&pool_mean(&matrix(&rows)).unwrap(), &pool_mean(&matrix(&doubled)).unwrap()) <= 1e-12);
    }

    #[test]
    fn attention_with_zero_params_is_mean(rows in bag_strategy(5)) {
        let (z, _) = pool_att(&AttentionParams::zeros(4, 5), &matrix(&rows)).unwrap();
        prop_assert!(max_abs_diff(&z, &pool_mean(&matrix(&rows)).unwrap()) <= 1e-12);
    }

    #[test]
    fn auc_invariant_under_increasing_map((scores, labels) in scores_and_labels()) {
        let mapped: Vec<f64> = scores.iter().map(|s| 2.0 * s + 1.0).collect();
        prop_assert_eq!(auc(&scores, &labels).unwrap(), auc(&mapped, &labels).unwrap());
    }

    #[test]
    fn flipped_labels_complement_auc((scores, labels) in scores_and_labels()) {
        let flipped: Vec<u8> = labels.iter().map(|l| 1 - l).collect();
        let total = auc(&scores, &labels).unwrap() + auc(&scores, &flipped).unwrap();
        prop_assert!((total - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn folds_are_stratified(labels in prop::collection::vec(0u8..2, 10..120), k in 2usize..11, seed in 0u64..1000) {
        let bags: Vec<Bag> = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| Bag::from_rows(format!("p{i}"), &[[i as f64]], Some(l)).unwrap())
            .collect();
        let dataset = Dataset { bags, feature_names: vec!["f".into()], horizon_days: None };
        let plan = stratified_folds(&dataset, k, seed).unwrap();
        for class in [0u8, 1] {
            let counts: Vec<usize> = (0..k)
                .map(|f| plan.split(&dataset, f).1.iter().filter(|b| b.label == Some(class)).count())
                .collect();
            prop_assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
        }
    }

    #[test]
    fn zscore_composition(rows in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 3), 2..50)) {
        let bags = vec![Bag::from_rows("p", &rows, None).unwrap()];
        let norm = fit_zscore(&bags).unwrap();
        let out = norm.apply(&bags).unwrap();
        let n = rows.len() as f64;
        for j in 0..3 {
            let col: Vec<f64> = out[0].instances.iter().map(|i| i.features[j]).collect();
            let mean = col.iter().sum::<f64>() / n;
            let std = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            prop_assert!(mean.abs() < 1e-10);
            if norm.stds[j] != 1.0 || rows.iter().any(|r| r[j] != rows[0][j]) {
                prop_assert!((std - 1.0).abs() < 1e-9, "std {}", std);
            }
        }
    }
}
