//! Glue between cleaning, feature extraction and the learner: the per-scope
//! training table and the deployable model artifact.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cleaning::{build_targets, CleanedTargets, CleaningConfig, RemovedPoint};
use crate::dataset::{CorporateAction, Panel, Scope};
use crate::error::{Error, Result};
use crate::features::{extract_rows, FeatureConfig, FeatureSchema, RawRow};
use crate::gbdt::{self, check_header, Ensemble, FitHistory, Hyperparameters};
use crate::matrix::FeatureMatrix;

/// Every cleaned target of one scope with its unencoded features.
#[derive(Debug, Clone)]
pub struct ScopeData {
    pub scope: Scope,
    pub keys: Vec<(String, i32)>,
    pub rows: Vec<RawRow>,
    /// log10 targets.
    pub targets: Vec<f64>,
    /// Targets in tCO2-eq.
    pub values: Vec<f64>,
    /// Panel year each target was reported in.
    pub origin_years: Vec<i32>,
    pub audit: Vec<RemovedPoint>,
}

impl ScopeData {
    /// Cleans the reported series of `scope` and attaches features.
    pub fn prepare(
        panel: &Panel,
        scope: Scope,
        actions: &[CorporateAction],
        cleaning: &CleaningConfig,
        features: &FeatureConfig,
    ) -> Result<Self> {
        let cleaned = build_targets(panel, scope, actions, cleaning)?;
        Self::from_targets(panel, scope, cleaned, features)
    }

    pub fn from_targets(
        panel: &Panel,
        scope: Scope,
        cleaned: CleanedTargets,
        features: &FeatureConfig,
    ) -> Result<Self> {
        let keys: Vec<(String, i32)> = cleaned.targets.keys().cloned().collect();
        let rows = extract_rows(panel, &keys, features.life_expectancy)?;
        Ok(ScopeData {
            scope,
            targets: cleaned.targets.values().map(|t| t.log10).collect(),
            values: cleaned.targets.values().map(|t| t.value).collect(),
            origin_years: cleaned.targets.values().map(|t| t.origin_year).collect(),
            keys,
            rows,
            audit: cleaned.audit,
        })
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    /// Row indices per company, companies sorted.
    pub fn company_rows(&self) -> BTreeMap<&str, Vec<usize>> {
        let mut out: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, (c, _)) in self.keys.iter().enumerate() {
            out.entry(c.as_str()).or_default().push(i);
        }
        out
    }

    /// Copy restricted to `rows`, in the given order.
    pub fn subset(&self, rows: &[usize]) -> ScopeData {
        ScopeData {
            scope: self.scope,
            keys: rows.iter().map(|&i| self.keys[i].clone()).collect(),
            rows: rows.iter().map(|&i| self.rows[i].clone()).collect(),
            targets: rows.iter().map(|&i| self.targets[i]).collect(),
            values: rows.iter().map(|&i| self.values[i]).collect(),
            origin_years: rows.iter().map(|&i| self.origin_years[i]).collect(),
            audit: Vec::new(),
        }
    }

    pub fn raw_rows(&self, rows: &[usize]) -> Vec<RawRow> {
        rows.iter().map(|&i| self.rows[i].clone()).collect()
    }

    pub fn targets_at(&self, rows: &[usize]) -> Vec<f64> {
        rows.iter().map(|&i| self.targets[i]).collect()
    }
}

pub const MODEL_FORMAT: &str = "ghg-model";
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// A trained model together with the feature dictionaries it was fit with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub scope: Scope,
    pub schema: FeatureSchema,
    pub ensemble: Ensemble,
}

#[derive(Serialize, Deserialize)]
struct ArtifactFile {
    format: String,
    format_version: u32,
    #[serde(flatten)]
    artifact: ModelArtifact,
}

impl ModelArtifact {
    /// Learns dictionaries on `rows` of `data` and fits the learner.
    pub fn fit(data: &ScopeData, rows: &[usize], hp: &Hyperparameters, features: &FeatureConfig) -> Result<Self> {
        Self::fit_with_history(data, rows, hp, features).map(|(m, _)| m)
    }

    pub fn fit_with_history(
        data: &ScopeData,
        rows: &[usize],
        hp: &Hyperparameters,
        features: &FeatureConfig,
    ) -> Result<(Self, Vec<f64>)> {
        let raw = data.raw_rows(rows);
        let schema = FeatureSchema::learn(&raw, *features);
        let matrix = schema.encode(&raw);
        let FitHistory { ensemble, training_mse } = gbdt::fit_with_history(&matrix, &data.targets_at(rows), hp)?;
        Ok((
            ModelArtifact {
                scope: data.scope,
                schema,
                ensemble,
            },
            training_mse,
        ))
    }

    pub fn encode(&self, rows: &[RawRow]) -> FeatureMatrix {
        self.schema.encode(rows)
    }

    /// log10 estimates for unencoded rows.
    pub fn predict(&self, rows: &[RawRow]) -> Vec<f64> {
        self.ensemble
            .predict(&self.encode(rows))
            .expect("encoded rows always match the model schema")
    }

    pub fn to_json(&self) -> String {
        let file = ArtifactFile {
            format: MODEL_FORMAT.to_string(),
            format_version: MODEL_FORMAT_VERSION,
            artifact: self.clone(),
        };
        serde_json::to_string_pretty(&file).expect("artifacts always serialize")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_slice(bytes).map_err(|e| Error::CorruptModel(format!("unreadable model: {e}")))?;
        check_header(&value, MODEL_FORMAT, MODEL_FORMAT_VERSION)?;
        let file: ArtifactFile =
            serde_json::from_value(value).map_err(|e| Error::CorruptModel(format!("invalid model: {e}")))?;
        let artifact = file.artifact;
        artifact
            .schema
            .check()
            .map_err(|e| Error::CorruptModel(e.to_string()))?;
        if artifact.schema.features != artifact.ensemble.features {
            return Err(Error::CorruptModel("ensemble features differ from the schema".into()));
        }
        artifact.ensemble.validate()?;
        Ok(artifact)
    }
}
