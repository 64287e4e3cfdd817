use std::collections::{BTreeMap, BTreeSet};

use ghg_core::cleaning::build_targets;
use ghg_core::dataset::Scope;
use ghg_core::features::{build_matrix, extract_all_rows, life_expectancy, prune_rare_categories, FeatureConfig, FeatureSchema};
use ghg_core::synth::{generate_panel, GeneratorConfig};
use proptest::prelude::*;

fn labels() -> impl Strategy<Value = Vec<Option<String>>> {
    prop::collection::vec(prop::option::of("[a-e]"), 0..60)
}

fn money() -> impl Strategy<Value = Option<f64>> {
    prop::option::of(0.0f64..1e6)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn pruning_never_invents_labels(column in labels(), reference in labels(), min_count in 0usize..6) {
        let out = prune_rare_categories(&column, &reference, min_count);
        prop_assert_eq!(out.len(), column.len());
        let seen: BTreeSet<&String> = column.iter().flatten().collect();
        for (before, after) in column.iter().zip(&out) {
            if let Some(l) = after {
                prop_assert!(seen.contains(l));
                prop_assert_eq!(Some(l), before.as_ref());
                let count = reference.iter().filter(|r| r.as_ref() == Some(l)).count();
                prop_assert!(count >= min_count);
            }
        }
    }

    #[test]
    fn asset_life_ignores_currency_scale(nppe in money(), capex in money(), acc in money(), dda in money(), c in 1e-3f64..1e3) {
        let scale = |v: Option<f64>| v.map(|x| x * c);
        let a = life_expectancy(nppe, capex, acc, dda);
        let b = life_expectancy(scale(nppe), scale(capex), scale(acc), scale(dda));
        match (a, b) {
            (Some(a), Some(b)) => prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0)),
            (None, None) => {}
            // Numerators that cancel to zero can change sign under rounding.
            (x, y) => {
                let n = nppe.unwrap_or(0.0) - capex.unwrap_or(0.0) + acc.unwrap_or(0.0);
                prop_assert!(n.abs() <= 1e-9 * nppe.unwrap_or(0.0).max(1.0), "{:?} vs {:?}", x, y);
            }
        }
    }
}

#[test]
fn matrix_building_is_deterministic() {
    let data = generate_panel(&GeneratorConfig {
        n_companies: 150,
        seed: 8,
        ..Default::default()
    })
    .unwrap();
    let cleaned = build_targets(&data.panel, Scope::S1, &data.actions, &Default::default()).unwrap();
    let targets: BTreeMap<(String, i32), f64> = cleaned.targets.iter().map(|(k, t)| (k.clone(), t.log10)).collect();
    let config = FeatureConfig::default();
    let schema = FeatureSchema::learn(&extract_all_rows(&data.panel, config.life_expectancy), config);
    let a = build_matrix(&data.panel, &targets, &schema).unwrap();
    let b = build_matrix(&data.panel, &targets, &schema).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.matrix.n_rows(), targets.len());
}
