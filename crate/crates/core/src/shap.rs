//! Interventional Shapley attributions for tree ensembles.
//!
//! For a row `x` and one background row `z`, a feature is "present" when it
//! takes its value from `x` and "absent" when it takes it from `z`. Walking
//! a tree once per (x, z) pair and tracking which features sent the two rows
//! down different branches gives the exact Shapley values of that pair; the
//! attribution of `x` is the average over the background.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gbdt::{Ensemble, Node, Tree};
use crate::matrix::{FeatureInfo, FeatureKind, FeatureMatrix, Value};

pub const MAX_BRUTE_FORCE_FEATURES: usize = 20;

/// Background rows used when the caller does not pick a size.
pub const DEFAULT_BACKGROUND_SIZE: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapRow {
    pub values: Vec<f64>,
    pub base_value: f64,
}

impl ShapRow {
    /// `base_value + Σ values`, equal to the model prediction.
    pub fn reconstructed(&self) -> f64 {
        self.values.iter().fold(self.base_value, |a, v| a + v)
    }
}

/// Uniform subsample of at most `size` rows, in original row order.
pub fn subsample_background(matrix: &FeatureMatrix, size: usize, seed: u64) -> FeatureMatrix {
    if matrix.n_rows() <= size {
        return matrix.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = sample(&mut rng, matrix.n_rows(), size).into_vec();
    rows.sort_unstable();
    matrix.select_rows(&rows)
}

/// `(a-1)! b! / (a+b)!`, the weight a present feature receives at a leaf
/// reached with `a` present and `b` absent deciding features.
fn coalition_weight(a: usize, b: usize) -> f64 {
    debug_assert!(a >= 1);
    // (a-1)! b! / (a+b)! = 1 / ((a+b) * C(a+b-1, b))
    let mut binom = 1.0;
    for i in 1..=b {
        binom = binom * (a - 1 + i) as f64 / i as f64;
    }
    1.0 / ((a + b) as f64 * binom)
}

struct PairWalk<'a> {
    tree: &'a Tree,
    x: &'a [Value],
    z: &'a [Value],
    state: Vec<u8>,
    from_x: Vec<usize>,
    from_z: Vec<usize>,
}

const FREE: u8 = 0;
const FROM_X: u8 = 1;
const FROM_Z: u8 = 2;

impl PairWalk<'_> {
    fn walk(&mut self, node: usize, phi: &mut [f64]) {
        match &self.tree.nodes[node] {
            Node::Leaf { value, .. } => {
                let a = self.from_x.len();
                let b = self.from_z.len();
                if a > 0 {
                    let w = value * coalition_weight(a, b);
                    for &f in &self.from_x {
                        phi[f] += w;
                    }
                }
                if b > 0 {
                    let w = value * coalition_weight(b, a);
                    for &f in &self.from_z {
                        phi[f] -= w;
                    }
                }
            }
            Node::Split { feature, .. } => {
                let f = *feature;
                let cx = self.tree.next(node, self.x[f]);
                let cz = self.tree.next(node, self.z[f]);
                if cx == cz {
                    self.walk(cx, phi);
                    return;
                }
                match self.state[f] {
                    FROM_X => self.walk(cx, phi),
                    FROM_Z => self.walk(cz, phi),
                    _ => {
                        self.state[f] = FROM_X;
                        self.from_x.push(f);
                        self.walk(cx, phi);
                        self.from_x.pop();
                        self.state[f] = FROM_Z;
                        self.from_z.push(f);
                        self.walk(cz, phi);
                        self.from_z.pop();
                        self.state[f] = FREE;
                    }
                }
            }
        }
    }
}

/// Adds the attributions of `tree` for `x` against the single reference `z`.
fn tree_pair(tree: &Tree, x: &[Value], z: &[Value], phi: &mut [f64]) {
    let mut walk = PairWalk {
        tree,
        x,
        z,
        state: vec![FREE; x.len()],
        from_x: Vec::new(),
        from_z: Vec::new(),
    };
    walk.walk(0, phi);
}

struct Background {
    rows: Vec<Vec<Value>>,
    base_value: f64,
}

fn prepare_background(ensemble: &Ensemble, background: &FeatureMatrix) -> Result<Background> {
    if background.n_rows() == 0 {
        return Err(Error::EmptyBackground);
    }
    ensemble.check_matrix(background)?;
    let rows: Vec<Vec<Value>> = background.rows().collect();
    let base_value = rows.iter().map(|r| ensemble.predict_unchecked(r)).sum::<f64>() / rows.len() as f64;
    Ok(Background { rows, base_value })
}

fn shap_with(ensemble: &Ensemble, row: &[Value], bg: &Background) -> ShapRow {
    let p = ensemble.n_features();
    let mut values = vec![0.0; p];
    let mut phi = vec![0.0; p];
    for tree in &ensemble.trees {
        if tree.nodes.len() == 1 {
            continue;
        }
        phi.iter_mut().for_each(|v| *v = 0.0);
        for z in &bg.rows {
            tree_pair(tree, row, z, &mut phi);
        }
        for (v, t) in values.iter_mut().zip(&phi) {
            *v += t / bg.rows.len() as f64;
        }
    }
    ShapRow {
        values,
        base_value: bg.base_value,
    }
}

pub fn tree_shap(ensemble: &Ensemble, row: &[Value], background: &FeatureMatrix) -> Result<ShapRow> {
    ensemble.check_row(row)?;
    let bg = prepare_background(ensemble, background)?;
    Ok(shap_with(ensemble, row, &bg))
}

/// Attributions for every row of `matrix`, computed in parallel.
pub fn tree_shap_matrix(ensemble: &Ensemble, matrix: &FeatureMatrix, background: &FeatureMatrix) -> Result<Vec<ShapRow>> {
    ensemble.check_matrix(matrix)?;
    let bg = prepare_background(ensemble, background)?;
    Ok(crate::par::map_range(matrix.n_rows(), |r| shap_with(ensemble, &matrix.row(r), &bg)))
}

/// Shapley values by enumerating every coalition; the reference oracle.
pub fn brute_force_shap(ensemble: &Ensemble, row: &[Value], background: &FeatureMatrix) -> Result<ShapRow> {
    let p = ensemble.n_features();
    if p > MAX_BRUTE_FORCE_FEATURES {
        return Err(Error::TooManyFeatures {
            got: p,
            max: MAX_BRUTE_FORCE_FEATURES,
        });
    }
    ensemble.check_row(row)?;
    let bg = prepare_background(ensemble, background)?;

    // value[mask] = mean over the background of f(x on mask, z elsewhere)
    let n_masks = 1usize << p;
    let mut value = vec![0.0; n_masks];
    let mut hybrid = vec![Value::Missing; p];
    for (mask, v) in value.iter_mut().enumerate() {
        let mut total = 0.0;
        for z in &bg.rows {
            for f in 0..p {
                hybrid[f] = if mask >> f & 1 == 1 { row[f] } else { z[f] };
            }
            total += ensemble.predict_unchecked(&hybrid);
        }
        *v = total / bg.rows.len() as f64;
    }

    let mut factorial = vec![1.0f64; p + 1];
    for i in 1..=p {
        factorial[i] = factorial[i - 1] * i as f64;
    }
    let mut values = vec![0.0; p];
    for (f, phi) in values.iter_mut().enumerate() {
        for mask in 0..n_masks {
            if mask >> f & 1 == 1 {
                continue;
            }
            let s = mask.count_ones() as usize;
            let w = factorial[s] * factorial[p - s - 1] / factorial[p];
            *phi += w * (value[mask | 1 << f] - value[mask]);
        }
    }
    Ok(ShapRow {
        values,
        base_value: bg.base_value,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Importance {
    pub feature: String,
    pub index: usize,
    pub mean_abs: f64,
}

/// Mean absolute attribution per feature, most important first; ties keep
/// schema order.
pub fn importance_summary(rows: &[ShapRow], features: &[FeatureInfo]) -> Vec<Importance> {
    let mut out: Vec<Importance> = features
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let mean_abs = if rows.is_empty() {
                0.0
            } else {
                rows.iter().map(|r| r.values[i].abs()).sum::<f64>() / rows.len() as f64
            };
            Importance {
                feature: f.name.clone(),
                index: i,
                mean_abs,
            }
        })
        .collect();
    out.sort_by(|a, b| b.mean_abs.total_cmp(&a.mean_abs).then(a.index.cmp(&b.index)));
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DependenceValue {
    Missing,
    /// `log10` is absent for non-positive values.
    Numeric { value: f64, log10: Option<f64> },
    Category { label: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DependencePoint {
    pub value: DependenceValue,
    pub attribution: f64,
}

/// Pairs each row's value of `feature` with its attribution.
pub fn dependence_export(rows: &[ShapRow], matrix: &FeatureMatrix, feature: usize) -> Result<Vec<DependencePoint>> {
    if feature >= matrix.n_features() {
        return Err(Error::SchemaMismatch(format!("feature index {feature} out of range")));
    }
    if rows.len() != matrix.n_rows() {
        return Err(Error::LengthMismatch {
            left: rows.len(),
            right: matrix.n_rows(),
        });
    }
    let info = &matrix.features()[feature];
    Ok(rows
        .iter()
        .enumerate()
        .map(|(r, shap)| {
            let value = match matrix.get(r, feature) {
                Value::Missing => DependenceValue::Missing,
                Value::Num(x) => DependenceValue::Numeric {
                    value: x,
                    log10: (x > 0.0).then(|| x.log10()),
                },
                Value::Cat(c) => DependenceValue::Category {
                    label: info.label(c).unwrap_or("?").to_string(),
                },
            };
            DependencePoint {
                value,
                attribution: shap.values[feature],
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategorySummary {
    pub count: usize,
    pub mean: f64,
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Attribution distribution per category label; missing values are grouped
/// under `"NA"`.
pub fn category_distribution(points: &[DependencePoint]) -> BTreeMap<String, CategorySummary> {
    let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for p in points {
        let key = match &p.value {
            DependenceValue::Category { label } => label.clone(),
            DependenceValue::Missing => "NA".to_string(),
            DependenceValue::Numeric { .. } => continue,
        };
        groups.entry(key).or_default().push(p.attribution);
    }
    groups
        .into_iter()
        .map(|(k, mut v)| {
            v.sort_by(f64::total_cmp);
            let summary = CategorySummary {
                count: v.len(),
                mean: v.iter().sum::<f64>() / v.len() as f64,
                min: v[0],
                q25: quantile(&v, 0.25),
                median: quantile(&v, 0.5),
                q75: quantile(&v, 0.75),
                max: v[v.len() - 1],
            };
            (k, summary)
        })
        .collect()
}

/// Whether `feature` is used by any split of the ensemble.
pub fn feature_is_used(ensemble: &Ensemble, feature: usize) -> bool {
    ensemble.trees.iter().any(|t| t.split_features().any(|f| f == feature))
}

/// Category labels of a categorical feature, empty for numeric ones.
pub fn category_labels(info: &FeatureInfo) -> &[String] {
    match &info.kind {
        FeatureKind::Categorical { labels } => labels,
        FeatureKind::Numeric => &[],
    }
}
