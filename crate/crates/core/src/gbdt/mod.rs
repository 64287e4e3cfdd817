//! Histogram gradient-boosted regression trees for squared error.
//!
//! Leaf values are stored already multiplied by the learning rate, so a
//! prediction is `base_score` plus the sum of one leaf per tree.

mod binning;
mod grow;
mod tree;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{FeatureInfo, FeatureKind, FeatureMatrix, Value};

pub use binning::{BinnedData, FeatureBins};
pub use grow::SplitCandidate;
pub use tree::{Direction, Node, Predicate, Tree};

pub const FORMAT: &str = "ghg-gbdt";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub learning_rate: f64,
    pub num_leaves: usize,
    pub min_samples_per_leaf: usize,
    pub num_rounds: usize,
    #[serde(default = "default_max_bins")]
    pub max_bins: usize,
    /// Recorded for reproducibility; training has no random components.
    #[serde(default)]
    pub seed: u64,
}

fn default_max_bins() -> usize {
    255
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Hyperparameters {
            learning_rate: 0.1,
            num_leaves: 31,
            min_samples_per_leaf: 20,
            num_rounds: 100,
            max_bins: 255,
            seed: 0,
        }
    }
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad("learning_rate must be in (0, 1]");
        }
        // One leaf is allowed: it reduces the model to the target mean.
        if self.num_leaves < 1 {
            return bad("num_leaves must be at least 1");
        }
        if self.num_rounds < 1 {
            return bad("num_rounds must be at least 1");
        }
        if self.max_bins < 2 {
            return bad("max_bins must be at least 2");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub base_score: f64,
    pub learning_rate: f64,
    pub hyperparameters: Hyperparameters,
    pub features: Vec<FeatureInfo>,
    pub trees: Vec<Tree>,
}

/// Model plus the training loss after each round (index 0 is the base score).
#[derive(Debug, Clone)]
pub struct FitHistory {
    pub ensemble: Ensemble,
    pub training_mse: Vec<f64>,
}

pub fn fit(matrix: &FeatureMatrix, targets: &[f64], hp: &Hyperparameters) -> Result<Ensemble> {
    fit_with_history(matrix, targets, hp).map(|h| h.ensemble)
}

pub fn fit_with_history(matrix: &FeatureMatrix, targets: &[f64], hp: &Hyperparameters) -> Result<FitHistory> {
    hp.validate()?;
    check_training_data(matrix.n_rows(), matrix.n_features(), targets)?;
    let binned = BinnedData::new(matrix, hp.max_bins);
    fit_binned(&binned, matrix.features(), targets, hp)
}

fn check_training_data(n_rows: usize, n_features: usize, targets: &[f64]) -> Result<()> {
    if n_rows == 0 || n_features == 0 {
        return Err(Error::EmptyMatrix);
    }
    if targets.len() != n_rows {
        return Err(Error::LengthMismatch {
            left: n_rows,
            right: targets.len(),
        });
    }
    if n_rows < 2 {
        return Err(Error::DegenerateData("at least 2 rows are needed".into()));
    }
    if targets.iter().any(|t| !t.is_finite()) {
        return Err(Error::DegenerateData("targets must be finite".into()));
    }
    Ok(())
}

/// Trains on pre-binned data, letting callers reuse one binning across
/// several hyperparameter settings. `hp.max_bins` is ignored here.
pub fn fit_binned(
    binned: &BinnedData,
    features: &[FeatureInfo],
    targets: &[f64],
    hp: &Hyperparameters,
) -> Result<FitHistory> {
    hp.validate()?;
    check_training_data(binned.n_rows(), binned.n_features(), targets)?;
    if features.len() != binned.n_features() {
        return Err(Error::SchemaMismatch(format!(
            "{} feature descriptions for {} binned features",
            features.len(),
            binned.n_features()
        )));
    }
    let n = targets.len();
    let base_score = targets.iter().sum::<f64>() / n as f64;
    let mut pred = vec![base_score; n];
    let mut residuals: Vec<f64> = targets.iter().map(|t| t - base_score).collect();
    let mse = |r: &[f64]| r.iter().map(|e| e * e).sum::<f64>() / n as f64;
    let mut training_mse = vec![mse(&residuals)];
    let mut trees = Vec::new();

    if residuals.iter().any(|&r| r != 0.0) {
        for _ in 0..hp.num_rounds {
            let rows: Vec<u32> = (0..n as u32).collect();
            let grown = grow::grow_tree(
                binned,
                rows,
                &residuals,
                hp.num_leaves,
                hp.min_samples_per_leaf,
                hp.learning_rate,
            );
            for (rows, value) in &grown.leaves {
                for &r in rows {
                    pred[r as usize] += value;
                }
            }
            for ((r, p), t) in residuals.iter_mut().zip(&pred).zip(targets) {
                *r = t - p;
            }
            let single_leaf = grown.tree.nodes.len() == 1;
            trees.push(grown.tree);
            training_mse.push(mse(&residuals));
            if single_leaf {
                // Nothing left to split; further rounds would repeat this one.
                break;
            }
        }
    }

    Ok(FitHistory {
        ensemble: Ensemble {
            base_score,
            learning_rate: hp.learning_rate,
            hyperparameters: hp.clone(),
            features: features.to_vec(),
            trees,
        },
        training_mse,
    })
}

/// Best split of `feature` over `rows` for residuals `gradients`, or `None`
/// if no positive-gain split keeps `min_samples_per_leaf` rows on each side.
pub fn find_best_split(
    binned: &BinnedData,
    rows: &[u32],
    feature: usize,
    gradients: &[f64],
    min_samples_per_leaf: usize,
) -> Option<SplitCandidate> {
    let hist = grow::build_histogram(binned, rows, gradients);
    grow::best_split_for_feature(&hist[feature], binned.layout(feature), feature, min_samples_per_leaf)
}

impl Ensemble {
    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    pub fn check_row(&self, row: &[Value]) -> Result<()> {
        if row.len() != self.features.len() {
            return Err(Error::SchemaMismatch(format!(
                "row has {} values, model expects {}",
                row.len(),
                self.features.len()
            )));
        }
        for (info, v) in self.features.iter().zip(row) {
            let ok = match (&info.kind, v) {
                (_, Value::Missing) => true,
                (FeatureKind::Numeric, Value::Num(x)) => x.is_finite(),
                (FeatureKind::Categorical { labels }, Value::Cat(c)) => (*c as usize) < labels.len(),
                _ => false,
            };
            if !ok {
                return Err(Error::SchemaMismatch(format!("invalid value for feature `{}`", info.name)));
            }
        }
        Ok(())
    }

    pub fn check_matrix(&self, matrix: &FeatureMatrix) -> Result<()> {
        if matrix.features() != self.features.as_slice() {
            return Err(Error::SchemaMismatch(
                "matrix features differ from the model's feature schema".into(),
            ));
        }
        Ok(())
    }

    pub fn predict_row(&self, row: &[Value]) -> Result<f64> {
        self.check_row(row)?;
        Ok(self.predict_unchecked(row))
    }

    pub(crate) fn predict_unchecked(&self, row: &[Value]) -> f64 {
        self.trees.iter().fold(self.base_score, |acc, t| acc + t.predict(row))
    }

    pub fn predict(&self, matrix: &FeatureMatrix) -> Result<Vec<f64>> {
        self.check_matrix(matrix)?;
        Ok(crate::par::map_range(matrix.n_rows(), |r| self.predict_unchecked(&matrix.row(r))))
    }

    /// Predictions using only the first `k` trees, for each `k` in `stages`.
    pub fn predict_staged(&self, matrix: &FeatureMatrix, stages: &[usize]) -> Result<Vec<Vec<f64>>> {
        self.check_matrix(matrix)?;
        let per_row = crate::par::map_range(matrix.n_rows(), |r| {
            let row = matrix.row(r);
            let mut out = Vec::with_capacity(stages.len());
            let mut acc = self.base_score;
            let mut used = 0;
            for &k in stages {
                let k = k.min(self.trees.len());
                if k < used {
                    acc = self.trees[..k].iter().fold(self.base_score, |a, t| a + t.predict(&row));
                } else {
                    acc = self.trees[used..k].iter().fold(acc, |a, t| a + t.predict(&row));
                }
                used = k;
                out.push(acc);
            }
            out
        });
        Ok((0..stages.len())
            .map(|s| per_row.iter().map(|r| r[s]).collect())
            .collect())
    }

    /// Copy keeping only the first `rounds` trees.
    pub fn truncated(&self, rounds: usize) -> Ensemble {
        let mut e = self.clone();
        e.trees.truncate(rounds);
        e.hyperparameters.num_rounds = rounds;
        e
    }

    pub fn to_json(&self) -> String {
        let file = ModelFile {
            format: FORMAT.to_string(),
            format_version: FORMAT_VERSION,
            ensemble: self.clone(),
        };
        serde_json::to_string_pretty(&file).expect("ensembles always serialize")
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.to_json().into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Ensemble> {
        let value: serde_json::Value =
            serde_json::from_slice(bytes).map_err(|e| Error::CorruptModel(format!("unreadable model: {e}")))?;
        Self::from_json_value(value)
    }

    pub fn from_json_value(value: serde_json::Value) -> Result<Ensemble> {
        check_header(&value, FORMAT, FORMAT_VERSION)?;
        let file: ModelFile =
            serde_json::from_value(value).map_err(|e| Error::CorruptModel(format!("invalid model: {e}")))?;
        file.ensemble.validate()?;
        Ok(file.ensemble)
    }

    /// Structural checks run after loading.
    pub fn validate(&self) -> Result<()> {
        let corrupt = |m: String| Err(Error::CorruptModel(m));
        if !self.base_score.is_finite() {
            return corrupt("base_score is not finite".into());
        }
        for (t, tree) in self.trees.iter().enumerate() {
            if tree.nodes.is_empty() {
                return corrupt(format!("tree {t} has no nodes"));
            }
            for (i, node) in tree.nodes.iter().enumerate() {
                match node {
                    Node::Leaf { value, .. } => {
                        if !value.is_finite() {
                            return corrupt(format!("tree {t} node {i}: non-finite leaf"));
                        }
                    }
                    Node::Split {
                        feature,
                        predicate,
                        left,
                        right,
                        ..
                    } => {
                        let n = tree.nodes.len();
                        if *left <= i || *right <= i || *left >= n || *right >= n {
                            return corrupt(format!("tree {t} node {i}: bad child index"));
                        }
                        let Some(info) = self.features.get(*feature) else {
                            return corrupt(format!("tree {t} node {i}: unknown feature {feature}"));
                        };
                        let ok = match (predicate, &info.kind) {
                            (Predicate::IsMissing, _) => true,
                            (Predicate::Threshold { threshold }, FeatureKind::Numeric) => threshold.is_finite(),
                            (Predicate::Categories { left }, FeatureKind::Categorical { labels }) => {
                                left.windows(2).all(|w| w[0] < w[1])
                                    && left.iter().all(|&c| (c as usize) < labels.len())
                            }
                            _ => false,
                        };
                        if !ok {
                            return corrupt(format!("tree {t} node {i}: predicate does not fit feature"));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Rejects JSON whose `format`/`format_version` header does not match.
pub(crate) fn check_header(value: &serde_json::Value, format: &str, version: u32) -> Result<()> {
    let found_format = value.get("format").and_then(|v| v.as_str());
    if found_format != Some(format) {
        return Err(Error::CorruptModel(format!(
            "expected format `{format}`, found {}",
            found_format.map_or("none".to_string(), |f| format!("`{f}`"))
        )));
    }
    match value.get("format_version").and_then(|v| v.as_u64()) {
        Some(v) if v == version as u64 => Ok(()),
        Some(v) => Err(Error::CorruptModel(format!(
            "unsupported format_version {v}, this build reads version {version}"
        ))),
        None => Err(Error::CorruptModel("missing format_version".into())),
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    format_version: u32,
    #[serde(flatten)]
    ensemble: Ensemble,
}
