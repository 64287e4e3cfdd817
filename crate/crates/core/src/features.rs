//! Feature engineering: derived financial features, categorical dictionaries
//! with rare-label pruning, and target alignment.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::cleaning::aligned_year;
use crate::dataset::{CompanyYearRecord, Panel, BICS_LEVELS};
use crate::error::{Error, Result};
use crate::matrix::{Column, FeatureInfo, FeatureKind, FeatureMatrix};

pub const NUMERIC_FEATURES: [&str; 10] = [
    "Employees",
    "Capital Expenditure",
    "Enterprise Value",
    "Revenues",
    "PPE Gross",
    "PPE Net",
    "Life Expectancy of Assets",
    "Energy Consumption",
    "Total Power Generated",
    "Country Energy Mix Carbon Intensity",
];

pub const CATEGORICAL_FEATURES: [&str; 11] = [
    "Year",
    "Country of Incorporation",
    "BICS L1",
    "BICS L2",
    "BICS L3",
    "BICS L4",
    "BICS L5",
    "BICS L6",
    "BICS L7",
    "New Energy Exposure Rating",
    "CO2 Law",
];

pub const N_FEATURES: usize = NUMERIC_FEATURES.len() + CATEGORICAL_FEATURES.len();

/// Matrix column of BICS level `level` (1-based).
pub fn bics_feature_index(level: usize) -> usize {
    assert!((1..=BICS_LEVELS).contains(&level), "BICS level {level} out of range");
    NUMERIC_FEATURES.len() + 1 + level
}

pub fn feature_index(name: &str) -> Option<usize> {
    NUMERIC_FEATURES
        .iter()
        .chain(CATEGORICAL_FEATURES.iter())
        .position(|n| *n == name)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LifeExpectancyFormula {
    /// (NPPE - CapEx + Accumulated Depreciation) / DD&A
    #[default]
    Decomposed,
    /// GPPE / DD&A
    Gross,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    /// BICS labels seen fewer times than this in training become missing.
    pub min_category_count: usize,
    pub life_expectancy: LifeExpectancyFormula,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            min_category_count: 10,
            life_expectancy: LifeExpectancyFormula::Decomposed,
        }
    }
}

/// Average asset life proxy. Missing CapEx or accumulated depreciation count
/// as zero; a missing or non-positive DD&A, or a negative result, gives
/// `None`.
pub fn life_expectancy(
    nppe: Option<f64>,
    capex: Option<f64>,
    accumulated_depreciation: Option<f64>,
    dda: Option<f64>,
) -> Option<f64> {
    let dda = dda.filter(|&d| d > 0.0)?;
    let numerator = nppe? - capex.unwrap_or(0.0) + accumulated_depreciation.unwrap_or(0.0);
    Some(numerator / dda).filter(|v| *v >= 0.0)
}

pub fn life_expectancy_gross(gppe: Option<f64>, dda: Option<f64>) -> Option<f64> {
    let dda = dda.filter(|&d| d > 0.0)?;
    Some(gppe? / dda).filter(|v| *v >= 0.0)
}

/// Replaces labels seen fewer than `min_count` times in `reference` by
/// missing.
pub fn prune_rare_categories(
    column: &[Option<String>],
    reference: &[Option<String>],
    min_count: usize,
) -> Vec<Option<String>> {
    let kept = frequent_labels(reference.iter().map(Option::as_deref), min_count);
    column
        .iter()
        .map(|v| v.as_ref().filter(|l| kept.contains(l.as_str())).cloned())
        .collect()
}

fn frequent_labels<'a>(
    values: impl Iterator<Item = Option<&'a str>>,
    min_count: usize,
) -> BTreeSet<String> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for v in values.flatten() {
        *counts.entry(v).or_default() += 1;
    }
    counts
        .into_iter()
        .filter(|&(_, c)| c >= min_count)
        .map(|(l, _)| l.to_string())
        .collect()
}

/// Unencoded feature values for one company-year.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRow {
    pub company_id: String,
    pub year: i32,
    pub numeric: [Option<f64>; 10],
    pub categorical: [Option<String>; 11],
}

type EnergyKey<'a> = (&'a str, i32);

/// Energy figures re-keyed by the fiscal year they describe.
fn aligned_energy(panel: &Panel) -> HashMap<EnergyKey<'_>, (Option<f64>, Option<f64>)> {
    let mut best: HashMap<EnergyKey<'_>, (Option<chrono::NaiveDate>, Option<f64>, Option<f64>)> =
        HashMap::new();
    for r in panel.records() {
        if r.energy_consumption_gwh.is_none() && r.total_power_generated_gwh.is_none() {
            continue;
        }
        let year = r.report_date_energy.map_or(r.year, aligned_year);
        let candidate = (r.report_date_energy, r.energy_consumption_gwh, r.total_power_generated_gwh);
        best.entry((r.company_id.as_str(), year))
            .and_modify(|cur| {
                if candidate.0 > cur.0 {
                    *cur = candidate;
                }
            })
            .or_insert(candidate);
    }
    best.into_iter().map(|(k, (_, e, p))| (k, (e, p))).collect()
}

fn raw_row(
    r: &CompanyYearRecord,
    energy: Option<&(Option<f64>, Option<f64>)>,
    formula: LifeExpectancyFormula,
) -> RawRow {
    let life = match formula {
        LifeExpectancyFormula::Decomposed => {
            life_expectancy(r.ppe_net, r.capex, r.accumulated_depreciation, r.dda)
        }
        LifeExpectancyFormula::Gross => life_expectancy_gross(r.ppe_gross, r.dda),
    };
    let (energy, power) = energy.copied().unwrap_or((None, None));
    let [l1, l2, l3, l4, l5, l6, l7] = r.bics_levels.clone();
    RawRow {
        company_id: r.company_id.clone(),
        year: r.year,
        numeric: [
            r.employees,
            r.capex,
            r.enterprise_value,
            r.revenues,
            r.ppe_gross,
            r.ppe_net,
            life,
            energy,
            power,
            r.country_mix_intensity,
        ],
        categorical: [
            Some(r.year.to_string()),
            Some(r.country.clone()).filter(|c| !c.is_empty()),
            l1,
            l2,
            l3,
            l4,
            l5,
            l6,
            l7,
            r.new_energy_exposure.map(|e| e.label().to_string()),
            Some(r.co2_law.label().to_string()),
        ],
    }
}

/// Raw feature rows for the given (company, year) keys, in key order.
pub fn extract_rows(
    panel: &Panel,
    keys: &[(String, i32)],
    formula: LifeExpectancyFormula,
) -> Result<Vec<RawRow>> {
    let index = panel.index();
    let energy = aligned_energy(panel);
    keys.iter()
        .map(|(company, year)| {
            let &i = index
                .get(&(company.as_str(), *year))
                .ok_or_else(|| Error::MissingPanelRow {
                    company_id: company.clone(),
                    year: *year,
                })?;
            let r = &panel.records()[i];
            Ok(raw_row(r, energy.get(&(company.as_str(), *year)), formula))
        })
        .collect()
}

/// Raw feature rows for every record of the panel.
pub fn extract_all_rows(panel: &Panel, formula: LifeExpectancyFormula) -> Vec<RawRow> {
    let energy = aligned_energy(panel);
    panel
        .records()
        .iter()
        .map(|r| raw_row(r, energy.get(&(r.company_id.as_str(), r.year)), formula))
        .collect()
}

/// The 21 model features with their learned category dictionaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub config: FeatureConfig,
    pub features: Vec<FeatureInfo>,
}

impl FeatureSchema {
    /// Learns category dictionaries from training rows only. BICS labels are
    /// pruned by frequency; other categorical features keep every label seen.
    pub fn learn(training: &[RawRow], config: FeatureConfig) -> Self {
        let mut features: Vec<FeatureInfo> =
            NUMERIC_FEATURES.iter().map(|n| FeatureInfo::numeric(*n)).collect();
        for (j, name) in CATEGORICAL_FEATURES.iter().enumerate() {
            let is_bics = name.starts_with("BICS");
            let min_count = if is_bics { config.min_category_count.max(1) } else { 1 };
            let labels = frequent_labels(
                training.iter().map(|r| r.categorical[j].as_deref()),
                min_count,
            );
            features.push(FeatureInfo::categorical(*name, labels.into_iter().collect()));
        }
        FeatureSchema { config, features }
    }

    pub fn from_features(features: Vec<FeatureInfo>, config: FeatureConfig) -> Result<Self> {
        let schema = FeatureSchema { config, features };
        schema.check()?;
        Ok(schema)
    }

    pub fn check(&self) -> Result<()> {
        let names: Vec<&str> = self.features.iter().map(|f| f.name.as_str()).collect();
        let expected: Vec<&str> = NUMERIC_FEATURES
            .iter()
            .chain(CATEGORICAL_FEATURES.iter())
            .copied()
            .collect();
        if names != expected {
            return Err(Error::SchemaMismatch(format!(
                "expected features {expected:?}, got {names:?}"
            )));
        }
        for f in &self.features {
            if let FeatureKind::Categorical { labels } = &f.kind {
                let distinct: BTreeSet<&String> = labels.iter().collect();
                if distinct.len() != labels.len() {
                    return Err(Error::SchemaMismatch(format!(
                        "duplicate labels in `{}`",
                        f.name
                    )));
                }
            }
        }
        Ok(())
    }

    /// Encodes rows; labels outside a dictionary become missing.
    pub fn encode(&self, rows: &[RawRow]) -> FeatureMatrix {
        let n_num = NUMERIC_FEATURES.len();
        let mut columns: Vec<Column> = (0..n_num)
            .map(|j| Column::Numeric(rows.iter().map(|r| r.numeric[j]).collect()))
            .collect();
        for (j, info) in self.features[n_num..].iter().enumerate() {
            let FeatureKind::Categorical { labels } = &info.kind else {
                unreachable!("schema checked at construction");
            };
            let codes: HashMap<&str, u32> = labels
                .iter()
                .enumerate()
                .map(|(c, l)| (l.as_str(), c as u32))
                .collect();
            columns.push(Column::Categorical(
                rows.iter()
                    .map(|r| r.categorical[j].as_deref().and_then(|l| codes.get(l).copied()))
                    .collect(),
            ));
        }
        FeatureMatrix::new(self.features.clone(), columns)
            .expect("encoded columns always match the schema")
    }
}

/// Rows keyed by (company, year) with their log10 targets.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingMatrix {
    pub keys: Vec<(String, i32)>,
    pub matrix: FeatureMatrix,
    pub targets: Vec<f64>,
}

/// One row per target, in target-key order.
pub fn build_matrix(
    panel: &Panel,
    targets: &BTreeMap<(String, i32), f64>,
    schema: &FeatureSchema,
) -> Result<TrainingMatrix> {
    let keys: Vec<(String, i32)> = targets.keys().cloned().collect();
    let rows = extract_rows(panel, &keys, schema.config.life_expectancy)?;
    Ok(TrainingMatrix {
        matrix: schema.encode(&rows),
        targets: targets.values().copied().collect(),
        keys,
    })
}
