mod common;

use common::{mixed_features, quarter_targets, random_matrix, rng};
use ghg_core::gbdt::{fit, fit_with_history, Hyperparameters, Node, Predicate};
use ghg_core::matrix::{Column, FeatureMatrix, Value};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

fn hp(leaves: usize, min_leaf: usize, rounds: usize, lr: f64) -> Hyperparameters {
    Hyperparameters {
        learning_rate: lr,
        num_leaves: leaves,
        min_samples_per_leaf: min_leaf,
        num_rounds: rounds,
        ..Hyperparameters::default()
    }
}

fn leaf_of(tree: &ghg_core::gbdt::Tree, row: &[Value]) -> usize {
    let mut i = 0;
    while let Node::Split { feature, .. } = &tree.nodes[i] {
        i = tree.next(i, row[*feature]);
    }
    i
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn training_loss_never_increases(seed in any::<u64>(), n in 20usize..120, leaves in 2usize..12, lr in 0.05f64..1.0) {
        let mut r = rng(seed);
        let m = random_matrix(&mut r, mixed_features(4, 5), n, 0.2);
        let y = quarter_targets(&mut r, n);
        let h = fit_with_history(&m, &y, &hp(leaves, 3, 15, lr)).unwrap();
        for w in h.training_mse.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-15, "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn single_leaf_is_the_mean(seed in any::<u64>(), n in 2usize..80) {
        let mut r = rng(seed);
        let m = random_matrix(&mut r, mixed_features(3, 3), n, 0.3);
        let y: Vec<f64> = (0..n).map(|_| r.random_range(-5.0..5.0)).collect();
        let e = fit(&m, &y, &hp(1, 1, 1, 1.0)).unwrap();
        let mean = y.iter().sum::<f64>() / n as f64;
        for p in e.predict(&m).unwrap() {
            prop_assert!((p - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn row_order_does_not_matter(seed in any::<u64>(), n in 10usize..100, leaves in 2usize..10) {
        let mut r = rng(seed);
        let m = random_matrix(&mut r, mixed_features(4, 4), n, 0.2);
        let y = quarter_targets(&mut r, n);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut r);
        let shuffled_y: Vec<f64> = order.iter().map(|&i| y[i]).collect();
        let params = hp(leaves, 2, 1, 1.0);
        let a = fit(&m, &y, &params).unwrap();
        let b = fit(&m.select_rows(&order), &shuffled_y, &params).unwrap();
        // Same splits; leaf sums differ only by summation order.
        for (p, q) in a.predict(&m).unwrap().into_iter().zip(b.predict(&m).unwrap()) {
            prop_assert!((p - q).abs() < 1e-9, "{} vs {}", p, q);
        }
    }

    #[test]
    fn leaves_respect_the_minimum_size(seed in any::<u64>(), n in 10usize..150, leaves in 2usize..16, min_leaf in 1usize..12) {
        let mut r = rng(seed);
        let m = random_matrix(&mut r, mixed_features(4, 6), n, 0.25);
        let y = quarter_targets(&mut r, n);
        let e = fit(&m, &y, &hp(leaves, min_leaf, 5, 0.3)).unwrap();
        for tree in &e.trees {
            prop_assert!(tree.n_leaves() <= leaves);
            let mut counts = vec![0usize; tree.nodes.len()];
            for row in m.rows() {
                counts[leaf_of(tree, &row)] += 1;
            }
            for (i, node) in tree.nodes.iter().enumerate() {
                if let Node::Leaf { samples, .. } = node {
                    prop_assert_eq!(*samples as usize, counts[i]);
                    if tree.nodes.len() > 1 {
                        prop_assert!(counts[i] >= min_leaf, "leaf {} holds {} rows", i, counts[i]);
                    }
                }
            }
        }
    }

    #[test]
    fn monotone_feature_transform_keeps_predictions(seed in any::<u64>(), n in 10usize..80, leaves in 2usize..8) {
        let mut r = rng(seed);
        let m = random_matrix(&mut r, mixed_features(3, 3), n, 0.2);
        let y = quarter_targets(&mut r, n);
        let transform = |x: f64| (x / 3.0).exp() * 7.0 - 2.0;
        let mut columns = m.columns().to_vec();
        let Column::Numeric(v) = &columns[0] else { unreachable!() };
        columns[0] = Column::Numeric(v.iter().map(|x| x.map(transform)).collect());
        let t = FeatureMatrix::new(m.features().to_vec(), columns).unwrap();
        let params = hp(leaves, 2, 3, 0.5);
        let a = fit(&m, &y, &params).unwrap();
        let b = fit(&t, &y, &params).unwrap();
        prop_assert_eq!(a.predict(&m).unwrap(), b.predict(&t).unwrap());
    }
}

#[test]
fn step_function_is_fit_exactly() {
    let xs: Vec<Option<f64>> = (0..40).map(|i| Some(i as f64)).collect();
    let y: Vec<f64> = (0..40).map(|i| if i < 17 { -1.5 } else { 2.0 }).collect();
    let m = FeatureMatrix::new(vec![ghg_core::matrix::FeatureInfo::numeric("x")], vec![Column::Numeric(xs)]).unwrap();
    let e = fit(&m, &y, &hp(2, 1, 1, 1.0)).unwrap();
    for (p, t) in e.predict(&m).unwrap().into_iter().zip(&y) {
        assert!((p - t).abs() < 1e-12, "{p} vs {t}");
    }
    let Node::Split { predicate: Predicate::Threshold { threshold }, .. } = &e.trees[0].nodes[0] else {
        panic!("expected a threshold split");
    };
    assert!((16.0..17.0).contains(threshold));
}
