//! Point-in-time comparison against other estimate providers, scored on
//! companies that report for the first time in the ground-truth year.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cleaning::{aligned_series, CleaningConfig};
use crate::dataset::{csv_row_error, CorporateAction, Panel, Scope};
use crate::error::{create_csv, Error, Result};
use crate::eval::{rmse, MISSING_GROUP};
use crate::features::{extract_rows, FeatureConfig};
use crate::gbdt::Hyperparameters;
use crate::par;
use crate::pipeline::{ModelArtifact, ScopeData};
use crate::splits::{reduced_grid, default_grid, select_model, CvReport, Grid, SplitPlan};

/// Name under which this system's estimates appear in reports.
pub const OURS: &str = "ours";

/// Emission estimates of one provider, in tCO2-eq per (company, year).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderEstimates {
    pub provider: String,
    pub point_in_time: bool,
    pub estimates: BTreeMap<(String, i32), f64>,
}

impl ProviderEstimates {
    pub fn new(provider: impl Into<String>, point_in_time: bool) -> Self {
        ProviderEstimates {
            provider: provider.into(),
            point_in_time,
            estimates: BTreeMap::new(),
        }
    }

    /// The estimate for `year`, else the one for `year - 1`.
    pub fn estimate_for(&self, company_id: &str, year: i32) -> Option<f64> {
        [year, year - 1]
            .into_iter()
            .find_map(|y| self.estimates.get(&(company_id.to_string(), y)).copied())
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct ProviderRow {
    provider: String,
    company_id: String,
    year: i32,
    value: f64,
    point_in_time: bool,
}

/// Reads `provider,company_id,year,value,point_in_time` rows, grouped by
/// provider in name order.
pub fn load_provider_estimates(path: &Path) -> Result<Vec<ProviderEstimates>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = rdr.headers()?.clone();
    let mut by_provider: BTreeMap<String, ProviderEstimates> = BTreeMap::new();
    for (i, row) in rdr.deserialize::<ProviderRow>().enumerate() {
        let row = row.map_err(|e| csv_row_error(e, i + 1, &headers))?;
        if !(row.value > 0.0 && row.value.is_finite()) {
            return Err(Error::MalformedRow {
                row: i + 1,
                column: "value".into(),
                message: format!("estimates must be positive, got {}", row.value),
            });
        }
        let entry = by_provider
            .entry(row.provider.clone())
            .or_insert_with(|| ProviderEstimates::new(row.provider.clone(), row.point_in_time));
        if entry.point_in_time != row.point_in_time {
            return Err(Error::MalformedRow {
                row: i + 1,
                column: "point_in_time".into(),
                message: format!("provider `{}` mixes point-in-time flags", row.provider),
            });
        }
        if entry.estimates.insert((row.company_id.clone(), row.year), row.value).is_some() {
            return Err(Error::DuplicateKey {
                company_id: row.company_id,
                year: row.year,
            });
        }
    }
    Ok(by_provider.into_values().collect())
}

pub fn save_provider_estimates(providers: &[ProviderEstimates], path: &Path) -> Result<()> {
    let mut w = create_csv(path)?;
    w.write_record(["provider", "company_id", "year", "value", "point_in_time"])?;
    for p in providers {
        for ((company_id, year), &value) in &p.estimates {
            w.serialize(ProviderRow {
                provider: p.provider.clone(),
                company_id: company_id.clone(),
                year: *year,
                value,
                point_in_time: p.point_in_time,
            })?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Companies whose first aligned report of `scope` falls in `year`, with
/// that reported value.
pub fn first_time_reporters(panel: &Panel, scope: Scope, year: i32) -> BTreeMap<String, f64> {
    aligned_series(panel, scope)
        .into_iter()
        .filter_map(|s| {
            let first = s.points.first()?;
            (first.year == year).then(|| (s.company_id, first.value))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompareConfig {
    pub truth_year: i32,
    pub seed: u64,
    pub k: usize,
    pub grid: Grid,
    pub features: FeatureConfig,
    pub cleaning: CleaningConfig,
}

impl Default for CompareConfig {
    fn default() -> Self {
        CompareConfig {
            truth_year: 2020,
            seed: 1,
            k: 4,
            grid: default_grid(),
            features: FeatureConfig::default(),
            cleaning: CleaningConfig::default(),
        }
    }
}

impl CompareConfig {
    pub fn quick() -> Self {
        CompareConfig {
            grid: reduced_grid(),
            ..Default::default()
        }
    }
}

/// A model trained only on rows up to `cutoff`.
#[derive(Debug, Clone)]
pub struct EraModel {
    pub cutoff: i32,
    pub model: ModelArtifact,
    pub selected: Hyperparameters,
    pub cv: CvReport,
    /// Companies with at least one training row.
    pub training_companies: BTreeSet<String>,
}

/// Keeps records up to and including `cutoff`.
pub fn era_panel(panel: &Panel, cutoff: i32) -> Result<Panel> {
    Panel::new(panel.records().iter().filter(|r| r.year <= cutoff).cloned().collect())
}

/// Selects and fits a model on the panel truncated at `cutoff`, so no later
/// information enters cleaning, dictionaries or training.
pub fn era_model(panel: &Panel, scope: Scope, actions: &[CorporateAction], cutoff: i32, cfg: &CompareConfig) -> Result<EraModel> {
    let era = era_panel(panel, cutoff)?;
    let actions: Vec<CorporateAction> = actions.iter().filter(|a| a.year <= cutoff).cloned().collect();
    let data = ScopeData::prepare(&era, scope, &actions, &cfg.cleaning, &cfg.features)?;
    let plan = SplitPlan::new(&data.keys, 0.0, cfg.k, cfg.seed)?;
    let (selected, cv) = select_model(&data, &plan, &cfg.grid, &cfg.features)?;
    let all: Vec<usize> = (0..data.len()).collect();
    let model = ModelArtifact::fit(&data, &all, &selected, &cfg.features)?;
    debug_assert!(data.keys.iter().all(|(_, y)| *y <= cutoff));
    Ok(EraModel {
        cutoff,
        model,
        selected,
        cv,
        training_companies: data.keys.iter().map(|(c, _)| c.clone()).collect(),
    })
}

/// Era models for the two years preceding `cfg.truth_year`, older first.
pub fn point_in_time_models(
    panel: &Panel,
    scope: Scope,
    actions: &[CorporateAction],
    cfg: &CompareConfig,
) -> Result<[EraModel; 2]> {
    let cutoffs = [cfg.truth_year - 2, cfg.truth_year - 1];
    let models = par::map(&cutoffs, |&c| era_model(panel, scope, actions, c, cfg));
    let mut models = models.into_iter();
    let older = models.next().expect("two cutoffs")?;
    let newer = models.next().expect("two cutoffs")?;
    Ok([older, newer])
}

/// Our estimates for `companies`: the newer era model on the company's row of
/// its cutoff year, else the older model on its own cutoff year's row.
pub fn our_estimates(panel: &Panel, models: &[EraModel; 2], companies: &BTreeSet<String>, features: &FeatureConfig) -> Result<ProviderEstimates> {
    let mut out = ProviderEstimates::new(OURS, true);
    for m in models.iter().rev() {
        let keys: Vec<(String, i32)> = companies
            .iter()
            .filter(|c| out.estimate_for(c, models[1].cutoff).is_none() && panel.get(c, m.cutoff).is_some())
            .map(|c| (c.clone(), m.cutoff))
            .collect();
        let rows = extract_rows(panel, &keys, features.life_expectancy)?;
        for (key, log10) in keys.into_iter().zip(m.model.predict(&rows)) {
            out.estimates.insert(key, 10f64.powf(log10));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderScore {
    pub provider: String,
    /// log10 RMSE, `None` without any covered company.
    pub rmse: Option<f64>,
    pub n: usize,
}

/// One provider against ours on the companies both cover.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pairing {
    pub provider: String,
    pub provider_rmse: Option<f64>,
    pub our_rmse: Option<f64>,
    pub n: usize,
    pub companies: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub truth_year: i32,
    pub truth_companies: usize,
    pub all_points: Vec<ProviderScore>,
    pub common_points: Vec<Pairing>,
}

/// log10 errors of `party` on the truth companies it covers, by company.
fn log_errors(party: &ProviderEstimates, truth: &BTreeMap<String, f64>, estimate_year: i32) -> BTreeMap<String, f64> {
    truth
        .iter()
        .filter_map(|(c, &t)| {
            let e = party.estimate_for(c, estimate_year)?;
            Some((c.clone(), (e / t).log10()))
        })
        .collect()
}

fn rms(errors: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = errors.collect();
    if v.is_empty() {
        return None;
    }
    Some(rmse(&v, &vec![0.0; v.len()]).expect("non-empty equal lengths"))
}

/// Scores every provider and ours against `truth`. Each party uses its
/// estimate for `truth_year - 1`, falling back to `truth_year - 2`.
pub fn score_providers(
    ours: &ProviderEstimates,
    providers: &[ProviderEstimates],
    truth: &BTreeMap<String, f64>,
    truth_year: i32,
) -> Result<ComparisonReport> {
    if truth.is_empty() {
        return Err(Error::DegenerateData("no first-time reporters to compare on".into()));
    }
    let year = truth_year - 1;
    let our_errors = log_errors(ours, truth, year);
    let mut all_points = vec![ProviderScore {
        provider: ours.provider.clone(),
        rmse: rms(our_errors.values().copied()),
        n: our_errors.len(),
    }];
    let mut common_points = Vec::new();
    for p in providers {
        let errors = log_errors(p, truth, year);
        all_points.push(ProviderScore {
            provider: p.provider.clone(),
            rmse: rms(errors.values().copied()),
            n: errors.len(),
        });
        let companies: Vec<String> = errors.keys().filter(|c| our_errors.contains_key(*c)).cloned().collect();
        common_points.push(Pairing {
            provider: p.provider.clone(),
            provider_rmse: rms(companies.iter().map(|c| errors[c])),
            our_rmse: rms(companies.iter().map(|c| our_errors[c])),
            n: companies.len(),
            companies,
        });
    }
    Ok(ComparisonReport {
        truth_year,
        truth_companies: truth.len(),
        all_points,
        common_points,
    })
}

/// Signed log10 error of one party on one company.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignedError {
    pub provider: String,
    pub company_id: String,
    pub sector: String,
    pub error: f64,
}

/// Signed errors of every party, labelled with the company's BICS level 1
/// sector in the truth year.
pub fn sector_errors(
    panel: &Panel,
    parties: &[&ProviderEstimates],
    truth: &BTreeMap<String, f64>,
    truth_year: i32,
) -> Vec<SignedError> {
    let mut out = Vec::new();
    for p in parties {
        for (company, error) in log_errors(p, truth, truth_year - 1) {
            let sector = panel
                .get(&company, truth_year)
                .and_then(|r| r.bics_levels[0].clone())
                .unwrap_or_else(|| MISSING_GROUP.to_string());
            out.push(SignedError {
                provider: p.provider.clone(),
                company_id: company,
                sector,
                error,
            });
        }
    }
    out
}

pub fn write_sector_errors_csv(errors: &[SignedError], path: &Path) -> Result<()> {
    let mut w = create_csv(path)?;
    w.write_record(["provider", "company_id", "sector", "error"])?;
    for e in errors {
        w.serialize(e)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone)]
pub struct ComparisonRun {
    pub report: ComparisonReport,
    pub ours: ProviderEstimates,
    pub truth: BTreeMap<String, f64>,
    pub models: [EraModel; 2],
    pub sector_errors: Vec<SignedError>,
}

/// Trains the era models, estimates the first-time reporters of
/// `cfg.truth_year` and scores everyone on them.
pub fn compare_providers(
    panel: &Panel,
    scope: Scope,
    actions: &[CorporateAction],
    providers: &[ProviderEstimates],
    cfg: &CompareConfig,
) -> Result<ComparisonRun> {
    let truth = first_time_reporters(panel, scope, cfg.truth_year);
    if truth.is_empty() {
        return Err(Error::DegenerateData(format!("no first-time reporters in {}", cfg.truth_year)));
    }
    let models = point_in_time_models(panel, scope, actions, cfg)?;
    let companies: BTreeSet<String> = truth.keys().cloned().collect();
    for m in &models {
        assert!(
            m.training_companies.is_disjoint(&companies),
            "a first-time reporter appears in era training data"
        );
    }
    let ours = our_estimates(panel, &models, &companies, &cfg.features)?;
    let report = score_providers(&ours, providers, &truth, cfg.truth_year)?;
    let mut parties = vec![&ours];
    parties.extend(providers);
    let sector_errors = sector_errors(panel, &parties, &truth, cfg.truth_year);
    Ok(ComparisonRun {
        report,
        ours,
        truth,
        models,
        sector_errors,
    })
}
