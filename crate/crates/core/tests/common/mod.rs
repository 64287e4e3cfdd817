#![allow(dead_code)]

pub mod cleaning;

use ghg_core::gbdt::{Direction, Ensemble, Hyperparameters, Node, Predicate, Tree};
use ghg_core::matrix::{Column, FeatureInfo, FeatureMatrix, Value};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Features alternate numeric / categorical, starting numeric.
pub fn mixed_features(n: usize, n_categories: usize) -> Vec<FeatureInfo> {
    (0..n)
        .map(|f| {
            if f % 2 == 0 {
                FeatureInfo::numeric(format!("x{f}"))
            } else {
                FeatureInfo::categorical(format!("c{f}"), (0..n_categories).map(|c| format!("k{c}")).collect())
            }
        })
        .collect()
}

/// Numeric cells are small integers so ties and exact sums are common.
pub fn random_matrix(r: &mut ChaCha8Rng, features: Vec<FeatureInfo>, n_rows: usize, missing: f64) -> FeatureMatrix {
    let columns = features
        .iter()
        .map(|f| {
            if f.is_categorical() {
                let k = f.n_categories() as u32;
                Column::Categorical((0..n_rows).map(|_| (!r.random_bool(missing)).then(|| r.random_range(0..k))).collect())
            } else {
                Column::Numeric(
                    (0..n_rows)
                        .map(|_| (!r.random_bool(missing)).then(|| r.random_range(-20..20) as f64 / 2.0))
                        .collect(),
                )
            }
        })
        .collect();
    FeatureMatrix::new(features, columns).unwrap()
}

/// Multiples of 1/4, so histogram sums are exact in any order.
pub fn quarter_targets(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| r.random_range(-40..40) as f64 / 4.0).collect()
}

pub fn random_value(r: &mut ChaCha8Rng, info: &FeatureInfo, missing: f64) -> Value {
    if r.random_bool(missing) {
        Value::Missing
    } else if info.is_categorical() {
        Value::Cat(r.random_range(0..info.n_categories() as u32))
    } else {
        Value::Num(r.random_range(-20..20) as f64 / 2.0)
    }
}

fn grow(r: &mut ChaCha8Rng, features: &[FeatureInfo], nodes: &mut Vec<Node>, depth: usize) -> usize {
    let id = nodes.len();
    if depth == 0 || r.random_bool(0.2) {
        nodes.push(Node::Leaf {
            value: r.random_range(-2.0..2.0),
            samples: 1,
        });
        return id;
    }
    let feature = r.random_range(0..features.len());
    let predicate = if r.random_bool(0.15) {
        Predicate::IsMissing
    } else if features[feature].is_categorical() {
        let k = features[feature].n_categories() as u32;
        let left: Vec<u32> = (0..k).filter(|_| r.random_bool(0.5)).collect();
        Predicate::Categories { left }
    } else {
        Predicate::Threshold {
            threshold: r.random_range(-10..10) as f64 / 2.0 + 0.25,
        }
    };
    let default_direction = if r.random_bool(0.5) { Direction::Left } else { Direction::Right };
    nodes.push(Node::Leaf { value: 0.0, samples: 0 });
    let left = grow(r, features, nodes, depth - 1);
    let right = grow(r, features, nodes, depth - 1);
    nodes[id] = Node::Split {
        feature,
        predicate,
        default_direction,
        left,
        right,
        samples: 2,
        gain: 1.0,
    };
    id
}

pub fn random_tree(r: &mut ChaCha8Rng, features: &[FeatureInfo], max_depth: usize) -> Tree {
    let mut nodes = Vec::new();
    grow(r, features, &mut nodes, max_depth);
    Tree { nodes }
}

pub fn ensemble_of(features: Vec<FeatureInfo>, trees: Vec<Tree>, base_score: f64) -> Ensemble {
    Ensemble {
        base_score,
        learning_rate: 1.0,
        hyperparameters: Hyperparameters::default(),
        features,
        trees,
    }
}

pub fn random_ensemble(r: &mut ChaCha8Rng, n_features: usize, n_trees: usize, max_depth: usize) -> Ensemble {
    let features = mixed_features(n_features, 4);
    let trees = (0..n_trees).map(|_| random_tree(r, &features, max_depth)).collect();
    let base = r.random_range(-1.0..1.0);
    ensemble_of(features, trees, base)
}
