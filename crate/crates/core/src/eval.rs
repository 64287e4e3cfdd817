//! Metrics, the five-test-set protocol and per-group breakdowns.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cleaning::CleaningConfig;
use crate::dataset::{CorporateAction, Panel, Scope};
use crate::error::{Error, Result};
use crate::features::{FeatureConfig, RawRow};
use crate::gbdt::Hyperparameters;
use crate::par;
use crate::pipeline::{ModelArtifact, ScopeData};
use crate::splits::{reduced_grid, select_model, CvReport, Grid, SplitPlan, PROTOCOL_SEEDS};

fn check_pair(y: &[f64], p: &[f64]) -> Result<()> {
    if y.len() != p.len() {
        return Err(Error::LengthMismatch {
            left: y.len(),
            right: p.len(),
        });
    }
    if y.is_empty() {
        return Err(Error::DegenerateData("no values to score".into()));
    }
    Ok(())
}

pub fn rmse(y: &[f64], p: &[f64]) -> Result<f64> {
    check_pair(y, p)?;
    Ok((y.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64).sqrt())
}

pub fn mae(y: &[f64], p: &[f64]) -> Result<f64> {
    check_pair(y, p)?;
    Ok(y.iter().zip(p).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64)
}

/// `1 - SS_res / SS_tot`.
pub fn r2(y: &[f64], p: &[f64]) -> Result<f64> {
    check_pair(y, p)?;
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|a| (a - mean) * (a - mean)).sum();
    if ss_tot == 0.0 {
        return Err(Error::ZeroVariance);
    }
    let ss_res: f64 = y.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n: usize,
    /// Absent when the targets have no variance.
    pub r2: Option<f64>,
    pub rmse: f64,
    pub mae: f64,
}

impl Metrics {
    pub fn compute(y: &[f64], p: &[f64]) -> Result<Self> {
        let r2 = match r2(y, p) {
            Ok(v) => Some(v),
            Err(Error::ZeroVariance) => None,
            Err(e) => return Err(e),
        };
        Ok(Metrics {
            n: y.len(),
            r2,
            rmse: rmse(y, p)?,
            mae: mae(y, p)?,
        })
    }
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub mean: f64,
    pub std: f64,
}

impl Spread {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Some(Spread { mean, std: var.sqrt() })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    BicsL1,
    BicsL2,
    BicsL3,
    Country,
    RevenueDecile,
}

impl Grouping {
    pub const ALL: [Grouping; 5] = [
        Grouping::BicsL1,
        Grouping::BicsL2,
        Grouping::BicsL3,
        Grouping::Country,
        Grouping::RevenueDecile,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Grouping::BicsL1 => "bics_l1",
            Grouping::BicsL2 => "bics_l2",
            Grouping::BicsL3 => "bics_l3",
            Grouping::Country => "country",
            Grouping::RevenueDecile => "revenue_decile",
        }
    }

    /// Smallest share of total emissions a group needs to be reported.
    pub fn min_emission_share(self) -> f64 {
        match self {
            Grouping::BicsL3 => 0.01,
            _ => 0.0,
        }
    }
}

impl fmt::Display for Grouping {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Grouping {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Grouping::ALL
            .into_iter()
            .find(|g| g.name() == s)
            .ok_or_else(|| Error::UnknownGrouping(s.to_string()))
    }
}

pub const MISSING_GROUP: &str = "NA";

/// Grouping attributes of one row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupLabels {
    pub bics_l1: Option<String>,
    pub bics_l2: Option<String>,
    pub bics_l3: Option<String>,
    pub country: Option<String>,
    pub revenue_decile: Option<u8>,
}

impl GroupLabels {
    pub fn get(&self, g: Grouping) -> String {
        let v = match g {
            Grouping::BicsL1 => self.bics_l1.clone(),
            Grouping::BicsL2 => self.bics_l2.clone(),
            Grouping::BicsL3 => self.bics_l3.clone(),
            Grouping::Country => self.country.clone(),
            Grouping::RevenueDecile => self.revenue_decile.map(|d| d.to_string()),
        };
        v.unwrap_or_else(|| MISSING_GROUP.to_string())
    }
}

const REVENUE: usize = 3;
const COUNTRY: usize = 1;

fn bics(row: &RawRow, level: usize) -> Option<String> {
    row.categorical[1 + level].clone()
}

/// Decile of `v` within `universe`: `floor(10 * #{u < v} / n)`, so decile 9
/// holds the highest values.
pub fn decile(v: f64, universe_sorted: &[f64]) -> u8 {
    let below = universe_sorted.partition_point(|u| *u < v);
    ((10 * below) / universe_sorted.len()).min(9) as u8
}

/// Revenue decile of each row among the rows of the same year.
pub fn revenue_deciles(rows: &[RawRow]) -> Vec<Option<u8>> {
    let mut by_year: BTreeMap<i32, Vec<f64>> = BTreeMap::new();
    for r in rows {
        if let Some(v) = r.numeric[REVENUE] {
            by_year.entry(r.year).or_default().push(v);
        }
    }
    for v in by_year.values_mut() {
        v.sort_by(f64::total_cmp);
    }
    rows.iter()
        .map(|r| r.numeric[REVENUE].map(|v| decile(v, &by_year[&r.year])))
        .collect()
}

/// Grouping attributes for every row of `data`.
pub fn group_labels(data: &ScopeData) -> Vec<GroupLabels> {
    let deciles = revenue_deciles(&data.rows);
    data.rows
        .iter()
        .zip(deciles)
        .map(|(r, d)| GroupLabels {
            bics_l1: bics(r, 1),
            bics_l2: bics(r, 2),
            bics_l3: bics(r, 3),
            country: r.categorical[COUNTRY].clone(),
            revenue_decile: d,
        })
        .collect()
}

/// Total reported tCO2-eq per group over every row of `data`.
pub fn group_emissions(data: &ScopeData, labels: &[GroupLabels], grouping: Grouping) -> BTreeMap<String, f64> {
    let mut out: BTreeMap<String, f64> = BTreeMap::new();
    for (l, v) in labels.iter().zip(&data.values) {
        *out.entry(l.get(grouping)).or_default() += v;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub test_set: usize,
    pub seed: u64,
    pub company_id: String,
    pub year: i32,
    pub actual: f64,
    pub predicted: f64,
    pub labels: GroupLabels,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupBreakdown {
    pub group: String,
    /// Total reported emissions of the group, used for ordering.
    pub order_key: f64,
    pub share: f64,
    /// One entry per test set; absent where the set has no row of the group.
    pub rmse: Vec<Option<f64>>,
    pub counts: Vec<usize>,
    /// Pooled over test sets; absent below 2 rows or without variance.
    pub r2: Option<f64>,
}

/// Per-group RMSE for each test set, groups ordered from the highest to the
/// lowest total emissions.
pub fn breakdown(
    predictions: &[PredictionRecord],
    n_sets: usize,
    grouping: Grouping,
    emissions: &BTreeMap<String, f64>,
) -> Vec<GroupBreakdown> {
    let total: f64 = emissions.values().sum();
    let mut groups: BTreeMap<String, Vec<&PredictionRecord>> = BTreeMap::new();
    for p in predictions {
        groups.entry(p.labels.get(grouping)).or_default().push(p);
    }
    let mut out: Vec<GroupBreakdown> = groups
        .into_iter()
        .map(|(group, rows)| {
            let mut rmse_sets = Vec::with_capacity(n_sets);
            let mut counts = Vec::with_capacity(n_sets);
            for s in 0..n_sets {
                let (y, p): (Vec<f64>, Vec<f64>) = rows
                    .iter()
                    .filter(|r| r.test_set == s)
                    .map(|r| (r.actual, r.predicted))
                    .unzip();
                counts.push(y.len());
                rmse_sets.push(rmse(&y, &p).ok());
            }
            let (y, p): (Vec<f64>, Vec<f64>) = rows.iter().map(|r| (r.actual, r.predicted)).unzip();
            let r2 = if y.len() < 2 { None } else { r2(&y, &p).ok() };
            let order_key = emissions.get(&group).copied().unwrap_or(0.0);
            GroupBreakdown {
                share: if total > 0.0 { order_key / total } else { 0.0 },
                group,
                order_key,
                rmse: rmse_sets,
                counts,
                r2,
            }
        })
        .filter(|g| g.share >= grouping.min_emission_share())
        .collect();
    out.sort_by(|a, b| b.order_key.total_cmp(&a.order_key).then(a.group.cmp(&b.group)));
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProtocolConfig {
    pub seeds: Vec<u64>,
    pub test_fraction: f64,
    pub k: usize,
    pub grid: Grid,
    pub features: FeatureConfig,
    pub cleaning: CleaningConfig,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            seeds: PROTOCOL_SEEDS.to_vec(),
            test_fraction: 0.3,
            k: 4,
            grid: crate::splits::default_grid(),
            features: FeatureConfig::default(),
            cleaning: CleaningConfig::default(),
        }
    }
}

impl ProtocolConfig {
    /// The default protocol on the 18-point grid.
    pub fn quick() -> Self {
        ProtocolConfig {
            grid: reduced_grid(),
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetMetrics {
    pub test_set: usize,
    pub seed: u64,
    pub metrics: Metrics,
    pub selected: Hyperparameters,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scope: Scope,
    pub sets: Vec<SetMetrics>,
    pub r2: Option<Spread>,
    pub rmse: Spread,
    pub mae: Spread,
    /// Metrics over the predictions of all test sets together.
    pub pooled: Metrics,
    pub breakdowns: BTreeMap<Grouping, Vec<GroupBreakdown>>,
}

/// Everything produced by one protocol run.
#[derive(Debug, Clone)]
pub struct ProtocolRun {
    pub report: MetricsReport,
    pub predictions: Vec<PredictionRecord>,
    pub cv_reports: Vec<CvReport>,
    pub plans: Vec<SplitPlan>,
}

/// One test set: selection on the folds, refit on all development rows,
/// scoring on the held-out last-year rows.
pub struct SeedOutcome {
    pub plan: SplitPlan,
    pub cv: CvReport,
    pub model: ModelArtifact,
    pub test_rows: Vec<usize>,
    pub predicted: Vec<f64>,
}

pub fn run_seed(data: &ScopeData, seed: u64, cfg: &ProtocolConfig) -> Result<SeedOutcome> {
    let plan = SplitPlan::new(&data.keys, cfg.test_fraction, cfg.k, seed)?;
    run_plan(data, plan, &BTreeSet::new(), cfg)
}

/// Like [`run_seed`] with a fixed plan, leaving `excluded` rows out of every
/// training and validation set.
pub fn run_plan(data: &ScopeData, plan: SplitPlan, excluded: &BTreeSet<usize>, cfg: &ProtocolConfig) -> Result<SeedOutcome> {
    let dev: Vec<usize> = plan
        .development_rows(&data.keys)
        .into_iter()
        .filter(|i| !excluded.contains(i))
        .collect();
    let dev_data = data.subset(&dev);
    let (best, cv) = select_model(&dev_data, &plan, &cfg.grid, &cfg.features)?;
    let all: Vec<usize> = (0..dev_data.len()).collect();
    let model = ModelArtifact::fit(&dev_data, &all, &best, &cfg.features)?;
    let test_rows = plan.test_rows(&data.keys);
    let predicted = model.predict(&data.raw_rows(&test_rows));
    Ok(SeedOutcome {
        plan,
        cv,
        model,
        test_rows,
        predicted,
    })
}

/// Cleans the panel and runs the protocol on `scope`.
pub fn evaluate_protocol(panel: &Panel, scope: Scope, actions: &[CorporateAction], cfg: &ProtocolConfig) -> Result<ProtocolRun> {
    let data = ScopeData::prepare(panel, scope, actions, &cfg.cleaning, &cfg.features)?;
    evaluate_scope_data(&data, cfg)
}

pub fn evaluate_scope_data(data: &ScopeData, cfg: &ProtocolConfig) -> Result<ProtocolRun> {
    let outcomes: Vec<Result<SeedOutcome>> = par::map(&cfg.seeds, |&seed| run_seed(data, seed, cfg));
    let outcomes = outcomes.into_iter().collect::<Result<Vec<_>>>()?;
    summarize(data, outcomes)
}

pub fn summarize(data: &ScopeData, outcomes: Vec<SeedOutcome>) -> Result<ProtocolRun> {
    if outcomes.is_empty() {
        return Err(Error::InvalidConfig("no test sets to evaluate".into()));
    }
    let labels = group_labels(data);
    let mut sets = Vec::new();
    let mut predictions = Vec::new();
    let mut cv_reports = Vec::new();
    let mut plans = Vec::new();
    for (s, o) in outcomes.into_iter().enumerate() {
        let actual = data.targets_at(&o.test_rows);
        sets.push(SetMetrics {
            test_set: s,
            seed: o.plan.seed,
            metrics: Metrics::compute(&actual, &o.predicted)?,
            selected: o.cv.best.clone(),
        });
        for (&row, &p) in o.test_rows.iter().zip(&o.predicted) {
            predictions.push(PredictionRecord {
                test_set: s,
                seed: o.plan.seed,
                company_id: data.keys[row].0.clone(),
                year: data.keys[row].1,
                actual: data.targets[row],
                predicted: p,
                labels: labels[row].clone(),
            });
        }
        cv_reports.push(o.cv);
        plans.push(o.plan);
    }
    let n_sets = sets.len();
    let r2s: Vec<f64> = sets.iter().filter_map(|s| s.metrics.r2).collect();
    let rmses: Vec<f64> = sets.iter().map(|s| s.metrics.rmse).collect();
    let maes: Vec<f64> = sets.iter().map(|s| s.metrics.mae).collect();
    let (y, p): (Vec<f64>, Vec<f64>) = predictions.iter().map(|r| (r.actual, r.predicted)).unzip();
    let breakdowns = Grouping::ALL
        .into_iter()
        .map(|g| {
            let emissions = group_emissions(data, &labels, g);
            (g, breakdown(&predictions, n_sets, g, &emissions))
        })
        .collect();
    let report = MetricsReport {
        scope: data.scope,
        r2: if r2s.len() == n_sets { Spread::of(&r2s) } else { None },
        rmse: Spread::of(&rmses).expect("at least one set"),
        mae: Spread::of(&maes).expect("at least one set"),
        pooled: Metrics::compute(&y, &p)?,
        sets,
        breakdowns,
    };
    Ok(ProtocolRun {
        report,
        predictions,
        cv_reports,
        plans,
    })
}

/// Writes box-plot rows `group, test_set, rmse, order_key`.
pub fn write_breakdown_csv(groups: &[GroupBreakdown], path: &Path) -> Result<()> {
    let mut w = crate::error::create_csv(path)?;
    w.write_record(["group", "test_set", "rmse", "order_key"])?;
    for g in groups {
        for (s, r) in g.rmse.iter().enumerate() {
            if let Some(r) = r {
                w.write_record([g.group.clone(), s.to_string(), r.to_string(), g.order_key.to_string()])?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Writes one row per test prediction.
pub fn write_predictions_csv(predictions: &[PredictionRecord], path: &Path) -> Result<()> {
    let mut w = crate::error::create_csv(path)?;
    w.write_record(["test_set", "seed", "company_id", "year", "actual_log10", "predicted_log10"])?;
    for p in predictions {
        w.write_record([
            p.test_set.to_string(),
            p.seed.to_string(),
            p.company_id.clone(),
            p.year.to_string(),
            p.actual.to_string(),
            p.predicted.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_computed_metrics() {
        let y = [0.0, 2.0];
        let p = [1.0, 1.0];
        assert_eq!(rmse(&y, &p).unwrap(), 1.0);
        assert_eq!(mae(&y, &p).unwrap(), 1.0);
        assert_eq!(r2(&y, &p).unwrap(), 0.0);
        let y = [0.0, 0.0, 3.0, 3.0];
        let p = [0.0, 0.0, 3.0, 4.0];
        assert_eq!(mae(&y, &p).unwrap(), 0.25);
        assert_eq!(rmse(&y, &p).unwrap(), 0.5);
        assert_eq!(r2(&y, &y).unwrap(), 1.0);
    }

    #[test]
    fn metric_errors() {
        assert!(matches!(rmse(&[1.0], &[1.0, 2.0]), Err(Error::LengthMismatch { .. })));
        assert!(matches!(r2(&[1.0, 1.0], &[1.0, 2.0]), Err(Error::ZeroVariance)));
        assert!(matches!("sector".parse::<Grouping>(), Err(Error::UnknownGrouping(_))));
    }

    #[test]
    fn deciles_of_one_to_hundred() {
        let universe: Vec<f64> = (1..=100).map(f64::from).collect();
        for v in 91..=100 {
            assert_eq!(decile(v as f64, &universe), 9);
        }
        assert_eq!(decile(90.0, &universe), 8);
        assert_eq!(decile(1.0, &universe), 0);
    }

    fn record(set: usize, group: &str, actual: f64, predicted: f64) -> PredictionRecord {
        PredictionRecord {
            test_set: set,
            seed: set as u64 + 1,
            company_id: format!("{group}{actual}"),
            year: 2020,
            actual,
            predicted,
            labels: GroupLabels {
                bics_l1: Some(group.to_string()),
                bics_l2: None,
                bics_l3: None,
                country: None,
                revenue_decile: None,
            },
        }
    }

    #[test]
    fn group_rmses_recombine_to_global() {
        let preds = vec![
            record(0, "A", 1.0, 1.5),
            record(0, "A", 2.0, 2.0),
            record(0, "B", 3.0, 2.0),
            record(0, "B", 4.0, 4.5),
            record(0, "B", 5.0, 5.1),
        ];
        let emissions = BTreeMap::from([("A".to_string(), 10.0), ("B".to_string(), 30.0)]);
        let b = breakdown(&preds, 1, Grouping::BicsL1, &emissions);
        assert_eq!(b[0].group, "B");
        let combined = b
            .iter()
            .map(|g| g.counts[0] as f64 * g.rmse[0].unwrap().powi(2))
            .sum::<f64>()
            / preds.len() as f64;
        let (y, p): (Vec<f64>, Vec<f64>) = preds.iter().map(|r| (r.actual, r.predicted)).unzip();
        assert!((combined.sqrt() - rmse(&y, &p).unwrap()).abs() < 1e-12);
        let single = breakdown(&preds, 1, Grouping::Country, &BTreeMap::new());
        assert_eq!(single.len(), 1);
        assert_eq!(single[0].group, MISSING_GROUP);
        assert!((single[0].rmse[0].unwrap() - rmse(&y, &p).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn population_std() {
        let s = Spread::of(&[1.0, 3.0]).unwrap();
        assert_eq!(s.mean, 2.0);
        assert_eq!(s.std, 1.0);
    }
}
