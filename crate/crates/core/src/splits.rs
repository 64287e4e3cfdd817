//! Company-wise test split, K-fold cross-validation and grid search.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureConfig, FeatureSchema};
use crate::gbdt::{self, BinnedData, Hyperparameters};
use crate::matrix::FeatureMatrix;
use crate::par;
use crate::pipeline::{ModelArtifact, ScopeData};

/// Fewest last-year reporters a test draw accepts.
pub const MIN_LAST_YEAR_REPORTERS: usize = 10;

/// Seeds of the five evaluation test sets.
pub const PROTOCOL_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

// Keeps the fold shuffle independent of the test draw for the same seed.
const FOLD_STREAM: u64 = 0x5eed_f01d;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSplit {
    pub seed: u64,
    pub last_year: i32,
    /// Companies reporting in `last_year`.
    pub eligible: usize,
    pub test_companies: BTreeSet<String>,
}

/// Draws `round(test_fraction * n)` of the `n` companies with a target in the
/// last year present in `keys`.
pub fn make_test_split(keys: &[(String, i32)], test_fraction: f64, seed: u64) -> Result<TestSplit> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::InvalidConfig(format!(
            "test fraction must be in [0, 1), got {test_fraction}"
        )));
    }
    let Some(last_year) = keys.iter().map(|k| k.1).max() else {
        return Err(Error::TooFewReporters {
            year: 0,
            got: 0,
            need: MIN_LAST_YEAR_REPORTERS,
        });
    };
    let reporters: BTreeSet<&str> = keys
        .iter()
        .filter(|k| k.1 == last_year)
        .map(|k| k.0.as_str())
        .collect();
    if reporters.len() < MIN_LAST_YEAR_REPORTERS {
        return Err(Error::TooFewReporters {
            year: last_year,
            got: reporters.len(),
            need: MIN_LAST_YEAR_REPORTERS,
        });
    }
    let mut order: Vec<&str> = reporters.into_iter().collect();
    let eligible = order.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let n_test = (test_fraction * eligible as f64).round() as usize;
    Ok(TestSplit {
        seed,
        last_year,
        eligible,
        test_companies: order[..n_test].iter().map(|c| c.to_string()).collect(),
    })
}

/// Partitions companies into `k` validation groups whose sizes differ by at
/// most one.
pub fn kfold_companies(companies: &[String], k: usize, seed: u64) -> Result<Vec<BTreeSet<String>>> {
    if k < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 folds, got {k}")));
    }
    let mut order: Vec<&String> = companies.iter().collect::<BTreeSet<_>>().into_iter().collect();
    if order.len() < k {
        return Err(Error::TooFewCompanies {
            got: order.len(),
            need: k,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ FOLD_STREAM);
    order.shuffle(&mut rng);
    let mut folds = vec![BTreeSet::new(); k];
    for (i, c) in order.into_iter().enumerate() {
        folds[i % k].insert(c.clone());
    }
    Ok(folds)
}

/// Test companies plus K validation groups over the remaining companies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub seed: u64,
    /// Year whose rows form the test set; `None` without a test hold-out.
    pub last_year: Option<i32>,
    pub test_companies: BTreeSet<String>,
    pub folds: Vec<BTreeSet<String>>,
}

impl SplitPlan {
    /// With `test_fraction == 0` no company is held out.
    pub fn new(keys: &[(String, i32)], test_fraction: f64, k: usize, seed: u64) -> Result<Self> {
        let (last_year, test_companies) = if test_fraction == 0.0 {
            (None, BTreeSet::new())
        } else {
            let t = make_test_split(keys, test_fraction, seed)?;
            (Some(t.last_year), t.test_companies)
        };
        let rest: Vec<String> = keys
            .iter()
            .map(|k| &k.0)
            .filter(|c| !test_companies.contains(*c))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .cloned()
            .collect();
        let folds = kfold_companies(&rest, k, seed)?;
        Ok(SplitPlan {
            seed,
            last_year,
            test_companies,
            folds,
        })
    }

    pub fn k(&self) -> usize {
        self.folds.len()
    }

    /// Last-year rows of test companies.
    pub fn test_rows(&self, keys: &[(String, i32)]) -> Vec<usize> {
        let Some(year) = self.last_year else { return Vec::new() };
        keys.iter()
            .enumerate()
            .filter(|(_, k)| k.1 == year && self.test_companies.contains(&k.0))
            .map(|(i, _)| i)
            .collect()
    }

    /// Every row of every non-test company.
    pub fn development_rows(&self, keys: &[(String, i32)]) -> Vec<usize> {
        keys.iter()
            .enumerate()
            .filter(|(_, k)| !self.test_companies.contains(&k.0))
            .map(|(i, _)| i)
            .collect()
    }

    /// (training rows, validation rows) of fold `fold`.
    pub fn fold_rows(&self, keys: &[(String, i32)], fold: usize) -> (Vec<usize>, Vec<usize>) {
        let mut train = Vec::new();
        let mut validation = Vec::new();
        for (i, (c, _)) in keys.iter().enumerate() {
            if self.test_companies.contains(c) {
                continue;
            }
            if self.folds[fold].contains(c) {
                validation.push(i);
            } else {
                train.push(i);
            }
        }
        (train, validation)
    }
}

pub type Grid = Vec<Hyperparameters>;

fn grid_of(lrs: &[f64], leaves: &[usize], min_samples: &[usize], rounds: &[usize]) -> Grid {
    let mut grid = Vec::new();
    for &learning_rate in lrs {
        for &num_leaves in leaves {
            for &min_samples_per_leaf in min_samples {
                for &num_rounds in rounds {
                    grid.push(Hyperparameters {
                        learning_rate,
                        num_leaves,
                        min_samples_per_leaf,
                        num_rounds,
                        ..Hyperparameters::default()
                    });
                }
            }
        }
    }
    grid
}

/// The 180-point search grid.
pub fn default_grid() -> Grid {
    grid_of(&[0.02, 0.05, 0.1], &[15, 31, 63, 127], &[5, 10, 20], &[100, 200, 300, 500, 800])
}

/// An 18-point subgrid for quick runs.
pub fn reduced_grid() -> Grid {
    grid_of(&[0.1], &[15, 31, 63], &[5, 20], &[100, 200, 300])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvEntry {
    pub grid_index: usize,
    pub fold: usize,
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub k: usize,
    pub grid: Grid,
    /// One entry per (grid point, fold).
    pub entries: Vec<CvEntry>,
    /// Mean validation MSE per grid point.
    pub mean_mse: Vec<f64>,
    pub best_index: usize,
    pub best: Hyperparameters,
}

/// Orders grid points by score, then prefers cheaper and more conservative
/// settings on ties.
fn selection_key(a: (&Hyperparameters, f64), b: (&Hyperparameters, f64)) -> std::cmp::Ordering {
    a.1.total_cmp(&b.1)
        .then(a.0.num_rounds.cmp(&b.0.num_rounds))
        .then(a.0.num_leaves.cmp(&b.0.num_leaves))
        .then(a.0.learning_rate.total_cmp(&b.0.learning_rate))
        .then(a.0.min_samples_per_leaf.cmp(&b.0.min_samples_per_leaf))
        .then(a.0.max_bins.cmp(&b.0.max_bins))
}

struct FoldData {
    binned: BTreeMap<usize, BinnedData>,
    features: Vec<crate::matrix::FeatureInfo>,
    train_targets: Vec<f64>,
    validation: FeatureMatrix,
    validation_targets: Vec<f64>,
}

/// Settings that share one boosting run; grid points differing only in
/// `num_rounds` are read off that run's prefixes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct RunKey {
    learning_rate: u64,
    num_leaves: usize,
    min_samples_per_leaf: usize,
    max_bins: usize,
}

impl RunKey {
    fn of(hp: &Hyperparameters) -> Self {
        RunKey {
            learning_rate: hp.learning_rate.to_bits(),
            num_leaves: hp.num_leaves,
            min_samples_per_leaf: hp.min_samples_per_leaf,
            max_bins: hp.max_bins,
        }
    }
}

fn mse(y: &[f64], p: &[f64]) -> f64 {
    y.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64
}

/// Scores every grid point by mean validation MSE over the plan's folds and
/// returns the best one. Dictionaries are learned per fold on its training
/// rows.
pub fn select_model(
    data: &ScopeData,
    plan: &SplitPlan,
    grid: &[Hyperparameters],
    features: &FeatureConfig,
) -> Result<(Hyperparameters, CvReport)> {
    if grid.is_empty() {
        return Err(Error::InvalidConfig("empty hyperparameter grid".into()));
    }
    for hp in grid {
        hp.validate()?;
    }
    let k = plan.k();
    let max_bins: BTreeSet<usize> = grid.iter().map(|h| h.max_bins).collect();

    let folds: Vec<FoldData> = par::map_range(k, |fold| {
        let (train, validation) = plan.fold_rows(&data.keys, fold);
        let raw = data.raw_rows(&train);
        let schema = FeatureSchema::learn(&raw, *features);
        let matrix = schema.encode(&raw);
        FoldData {
            binned: max_bins.iter().map(|&b| (b, BinnedData::new(&matrix, b))).collect(),
            features: schema.features.clone(),
            train_targets: data.targets_at(&train),
            validation: schema.encode(&data.raw_rows(&validation)),
            validation_targets: data.targets_at(&validation),
        }
    });

    let mut runs: BTreeMap<RunKey, Vec<usize>> = BTreeMap::new();
    for (i, hp) in grid.iter().enumerate() {
        runs.entry(RunKey::of(hp)).or_default().push(i);
    }
    let runs: Vec<(RunKey, Vec<usize>)> = runs.into_iter().collect();
    let jobs: Vec<(usize, usize)> = (0..k).flat_map(|f| (0..runs.len()).map(move |r| (f, r))).collect();

    let results: Vec<Result<Vec<CvEntry>>> = par::map(&jobs, |&(fold, run)| {
        let members = &runs[run].1;
        let fd = &folds[fold];
        let mut hp = grid[members[0]].clone();
        hp.num_rounds = members.iter().map(|&i| grid[i].num_rounds).max().unwrap_or(1);
        let fitted = gbdt::fit_binned(&fd.binned[&hp.max_bins], &fd.features, &fd.train_targets, &hp)?;
        let stages: Vec<usize> = members.iter().map(|&i| grid[i].num_rounds).collect();
        let staged = fitted.ensemble.predict_staged(&fd.validation, &stages)?;
        Ok(members
            .iter()
            .zip(staged)
            .map(|(&grid_index, pred)| CvEntry {
                grid_index,
                fold,
                mse: mse(&fd.validation_targets, &pred),
            })
            .collect())
    });

    let mut entries = Vec::with_capacity(grid.len() * k);
    for r in results {
        entries.extend(r?);
    }
    entries.sort_by_key(|e| (e.grid_index, e.fold));
    let mut mean_mse = vec![0.0; grid.len()];
    for e in &entries {
        mean_mse[e.grid_index] += e.mse / k as f64;
    }
    let best_index = (0..grid.len())
        .min_by(|&a, &b| selection_key((&grid[a], mean_mse[a]), (&grid[b], mean_mse[b])))
        .expect("grid is not empty");
    let best = grid[best_index].clone();
    Ok((
        best.clone(),
        CvReport {
            k,
            grid: grid.to_vec(),
            entries,
            mean_mse,
            best_index,
            best,
        },
    ))
}

/// Refits `hp` on every non-test row of the plan.
pub fn final_fit(data: &ScopeData, plan: &SplitPlan, hp: &Hyperparameters, features: &FeatureConfig) -> Result<ModelArtifact> {
    let rows = plan.development_rows(&data.keys);
    ModelArtifact::fit(data, &rows, hp, features)
}
