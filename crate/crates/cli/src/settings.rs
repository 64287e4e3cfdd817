//! Settings shared by the command line and the JSON config file. Every flag
//! has a config key of the same name (dashes become underscores); flags win.

use std::path::{Path, PathBuf};

use ghg_core::cleaning::CleaningConfig;
use ghg_core::features::FeatureConfig;
use ghg_core::polish::ShapSpace;
use ghg_core::synth::GeneratorConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub jobs: Option<usize>,
    pub panel: Option<PathBuf>,
    pub actions: Option<PathBuf>,
    pub regional: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub scope: Option<String>,
    pub seed: Option<u64>,
    pub seeds: Option<Vec<u64>>,
    pub k: Option<usize>,
    pub test_fraction: Option<f64>,
    pub grid: Option<PathBuf>,
    pub quick: Option<bool>,
    pub skip_cleaning: Option<bool>,
    pub truth_year: Option<i32>,
    pub providers: Option<Vec<PathBuf>>,
    pub rows: Option<usize>,
    pub background: Option<usize>,
    pub threshold: Option<f64>,
    pub min_cluster_size: Option<usize>,
    pub level: Option<usize>,
    pub space: Option<ShapSpace>,
    pub evaluate: Option<bool>,
    pub companies: Option<usize>,
    pub noise: Option<f64>,
    pub first_year: Option<i32>,
    pub last_year: Option<i32>,
    pub jump_fraction: Option<f64>,
    pub action_fraction: Option<f64>,
    /// Config-file only: full generator, cleaning and feature settings.
    pub synth: Option<GeneratorConfig>,
    pub cleaning: Option<CleaningConfig>,
    pub features: Option<FeatureConfig>,
}

macro_rules! overlay {
    ($base:ident, $top:ident, $($field:ident),* $(,)?) => {
        $( if $top.$field.is_some() { $base.$field = $top.$field.clone(); } )*
    };
}

impl Settings {
    /// Fields set in `top` replace those of `self`.
    pub fn overlay(mut self, top: &Settings) -> Settings {
        overlay!(
            self, top, jobs, panel, actions, regional, model, input, out, scope, seed, seeds, k,
            test_fraction, grid, quick, skip_cleaning, truth_year, providers, rows, background,
            threshold, min_cluster_size, level, space, evaluate, companies, noise, first_year,
            last_year, jump_fraction, action_fraction, synth, cleaning, features,
        );
        self
    }

    pub fn load(path: &Path) -> Result<Settings, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::usage(format!("invalid config {}: {e}", path.display())))
    }

    pub fn require<'a, T>(value: &'a Option<T>, name: &str) -> Result<&'a T, CliError> {
        value
            .as_ref()
            .ok_or_else(|| CliError::usage(format!("missing required setting `--{}`", name.replace('_', "-"))))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_values() {
        let file = Settings {
            seed: Some(1),
            k: Some(5),
            ..Default::default()
        };
        let flags = Settings {
            seed: Some(7),
            ..Default::default()
        };
        let merged = file.overlay(&flags);
        assert_eq!(merged.seed, Some(7));
        assert_eq!(merged.k, Some(5));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<Settings>(r#"{"sede": 3}"#).is_err());
        let s: Settings = serde_json::from_str(r#"{"seed": 3, "space": "full_vector"}"#).unwrap();
        assert_eq!(s.space, Some(ShapSpace::FullVector));
    }
}
