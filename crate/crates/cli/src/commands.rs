use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use ghg_core::cleaning::{clean_panel, CleaningConfig};
use ghg_core::compare::{compare_providers, load_provider_estimates, save_provider_estimates, write_sector_errors_csv, CompareConfig};
use ghg_core::dataset::{
    join_regional, load_actions, load_panel, save_actions, save_panel, CorporateAction, Format, Panel, RegionalTable, Scope,
};
use ghg_core::eval::{
    evaluate_protocol, run_plan, write_breakdown_csv, write_predictions_csv, Grouping, Metrics, ProtocolConfig,
};
use ghg_core::features::{extract_all_rows, FeatureConfig};
use ghg_core::gbdt::Hyperparameters;
use ghg_core::pipeline::{ModelArtifact, ScopeData};
use ghg_core::polish::{polish_panel, polish_scope_data, write_audit_jsonl, PolishConfig};
use ghg_core::shap::{
    category_distribution, dependence_export, feature_is_used, importance_summary, subsample_background,
    tree_shap_matrix, DependenceValue, DEFAULT_BACKGROUND_SIZE,
};
use ghg_core::splits::{default_grid, reduced_grid, select_model, Grid, SplitPlan, PROTOCOL_SEEDS};
use ghg_core::synth::{generate_panel, ActionSpec, JumpSpec};
use serde::Serialize;

use crate::manifest::Recorder;
use crate::settings::Settings;
use crate::CliError;

type CmdResult = Result<(), CliError>;

pub fn dispatch(name: &str, s: &Settings) -> CmdResult {
    match name {
        "synth" => synth(s),
        "clean" => clean(s),
        "train" => train(s),
        "evaluate" => evaluate(s),
        "predict" => predict(s),
        "explain" => explain(s),
        "polish" => polish(s),
        "compare" => compare(s),
        other => Err(CliError::usage(format!("unknown command `{other}`"))),
    }
}

fn out_dir(s: &Settings) -> Result<PathBuf, CliError> {
    let dir = Settings::require(&s.out, "out")?.clone();
    fs::create_dir_all(&dir).map_err(|e| ghg_core::Error::io(&dir, e))?;
    Ok(dir)
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> CmdResult {
    let text = serde_json::to_string_pretty(value).map_err(ghg_core::Error::from)?;
    fs::write(path, text + "\n").map_err(|e| ghg_core::Error::io(path, e).into())
}

fn write_jsonl<T: Serialize>(values: &[T], path: &Path) -> CmdResult {
    let mut text = String::new();
    for v in values {
        text.push_str(&serde_json::to_string(v).map_err(ghg_core::Error::from)?);
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| ghg_core::Error::io(path, e).into())
}

fn scope(s: &Settings) -> Result<Scope, CliError> {
    s.scope.as_deref().unwrap_or("s1").parse::<Scope>().map_err(Into::into)
}

fn read_panel(path: &Path, regional: Option<&Path>, rec: &mut Recorder) -> Result<Panel, CliError> {
    rec.input(path);
    let panel = load_panel(path, Format::from_path(path))?;
    match regional {
        Some(r) => {
            rec.input(r);
            Ok(join_regional(&panel, &RegionalTable::load(r)?))
        }
        None => Ok(panel),
    }
}

fn inputs(s: &Settings, rec: &mut Recorder) -> Result<(Panel, Vec<CorporateAction>), CliError> {
    let panel = read_panel(Settings::require(&s.panel, "panel")?, s.regional.as_deref(), rec)?;
    let actions = match &s.actions {
        Some(path) => {
            rec.input(path);
            load_actions(path)?
        }
        None => Vec::new(),
    };
    Ok((panel, actions))
}

fn cleaning(s: &Settings) -> CleaningConfig {
    let mut c = s.cleaning.unwrap_or_default();
    if s.skip_cleaning == Some(true) {
        c.remove_jumps = false;
    }
    c
}

fn features(s: &Settings) -> FeatureConfig {
    s.features.unwrap_or_default()
}

fn grid(s: &Settings, rec: &mut Recorder) -> Result<Grid, CliError> {
    if let Some(path) = &s.grid {
        rec.input(path);
        let text = fs::read_to_string(path).map_err(|e| ghg_core::Error::io(path, e))?;
        let grid: Vec<Hyperparameters> = serde_json::from_str(&text)
            .map_err(|e| CliError::usage(format!("invalid grid {}: {e}", path.display())))?;
        if grid.is_empty() {
            return Err(CliError::usage("the grid file is empty"));
        }
        for hp in &grid {
            hp.validate()?;
        }
        return Ok(grid);
    }
    Ok(if s.quick == Some(true) { reduced_grid() } else { default_grid() })
}

fn protocol(s: &Settings, rec: &mut Recorder) -> Result<ProtocolConfig, CliError> {
    let defaults = ProtocolConfig::default();
    Ok(ProtocolConfig {
        seeds: s.seeds.clone().unwrap_or_else(|| PROTOCOL_SEEDS.to_vec()),
        test_fraction: s.test_fraction.unwrap_or(defaults.test_fraction),
        k: s.k.unwrap_or(defaults.k),
        grid: grid(s, rec)?,
        features: features(s),
        cleaning: cleaning(s),
    })
}

fn synth(s: &Settings) -> CmdResult {
    let mut rec = Recorder::new("synth");
    let mut cfg = s.synth.clone().unwrap_or_default();
    if let Some(n) = s.companies {
        cfg.n_companies = n;
    }
    if let Some(seed) = s.seed {
        cfg.seed = seed;
    }
    if let Some(noise) = s.noise {
        cfg.noise_std = noise;
    }
    if let Some(y) = s.first_year {
        cfg.first_year = y;
    }
    if let Some(y) = s.last_year {
        cfg.last_year = y;
    }
    if let Some(fraction) = s.jump_fraction {
        cfg.jumps = Some(JumpSpec { fraction, factor: 3.0 });
    }
    if let Some(fraction) = s.action_fraction {
        cfg.actions = Some(ActionSpec {
            fraction,
            revenue_factor: 1.6,
        });
    }
    let data = generate_panel(&cfg)?;
    let dir = out_dir(s)?;
    rec.seeds.push(cfg.seed);
    save_panel(&data.panel, &rec.output(dir.join("panel.csv")), Format::Csv)?;
    save_actions(&data.actions, &rec.output(dir.join("actions.csv")))?;
    data.regional.save(&rec.output(dir.join("regional.csv")))?;
    write_json(&data.truth, &rec.output(dir.join("truth.json")))?;
    rec.finish(s, &dir)
}

fn clean(s: &Settings) -> CmdResult {
    let mut rec = Recorder::new("clean");
    let (panel, actions) = inputs(s, &mut rec)?;
    let (cleaned, audit) = clean_panel(&panel, &actions, &cleaning(s))?;
    let dir = out_dir(s)?;
    save_panel(&cleaned, &rec.output(dir.join("cleaned_panel.csv")), Format::Csv)?;
    write_jsonl(&audit, &rec.output(dir.join("audit.jsonl")))?;
    log::info!("removed {} reported points", audit.len());
    rec.finish(s, &dir)
}

#[derive(Serialize)]
struct TestSummary {
    seed: u64,
    test_companies: usize,
    metrics: Metrics,
}

fn train(s: &Settings) -> CmdResult {
    let mut rec = Recorder::new("train");
    let scope = scope(s)?;
    let (panel, actions) = inputs(s, &mut rec)?;
    let cfg = protocol(s, &mut rec)?;
    let seed = s.seed.unwrap_or(1);
    rec.seeds.push(seed);
    let data = ScopeData::prepare(&panel, scope, &actions, &cfg.cleaning, &cfg.features)?;
    let plan = SplitPlan::new(&data.keys, cfg.test_fraction, cfg.k, seed)?;
    let outcome = run_plan(&data, plan, &BTreeSet::new(), &cfg)?;
    let dir = out_dir(s)?;
    let model_path = rec.output(dir.join("model.json"));
    fs::write(&model_path, outcome.model.to_json()).map_err(|e| ghg_core::Error::io(&model_path, e))?;
    write_json(&outcome.cv, &rec.output(dir.join("cv_report.json")))?;
    write_json(&outcome.plan, &rec.output(dir.join("split.json")))?;
    if !outcome.test_rows.is_empty() {
        let actual = data.targets_at(&outcome.test_rows);
        let summary = TestSummary {
            seed,
            test_companies: outcome.plan.test_companies.len(),
            metrics: Metrics::compute(&actual, &outcome.predicted)?,
        };
        write_json(&summary, &rec.output(dir.join("test_metrics.json")))?;
    }
    rec.finish(s, &dir)
}

fn evaluate(s: &Settings) -> CmdResult {
    let mut rec = Recorder::new("evaluate");
    let scope = scope(s)?;
    let (panel, actions) = inputs(s, &mut rec)?;
    let cfg = protocol(s, &mut rec)?;
    rec.seeds = cfg.seeds.clone();
    let run = evaluate_protocol(&panel, scope, &actions, &cfg)?;
    let dir = out_dir(s)?;
    write_json(&run.report, &rec.output(dir.join("metrics.json")))?;
    write_json(&run.cv_reports, &rec.output(dir.join("cv_reports.json")))?;
    write_predictions_csv(&run.predictions, &rec.output(dir.join("predictions.csv")))?;
    for g in Grouping::ALL {
        if let Some(groups) = run.report.breakdowns.get(&g) {
            write_breakdown_csv(groups, &rec.output(dir.join(format!("breakdown_{}.csv", g.name()))))?;
        }
    }
    rec.finish(s, &dir)
}

fn load_model(s: &Settings, rec: &mut Recorder) -> Result<ModelArtifact, CliError> {
    let path = Settings::require(&s.model, "model")?;
    rec.input(path);
    let bytes = fs::read(path).map_err(|e| ghg_core::Error::io(path, e))?;
    Ok(ModelArtifact::from_bytes(&bytes)?)
}

fn predict(s: &Settings) -> CmdResult {
    let mut rec = Recorder::new("predict");
    let model = load_model(s, &mut rec)?;
    let panel = read_panel(Settings::require(&s.input, "input")?, s.regional.as_deref(), &mut rec)?;
    let rows = extract_all_rows(&panel, model.schema.config.life_expectancy);
    let estimates = model.predict(&rows);
    let out = Settings::require(&s.out, "out")?.clone();
    let dir = match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir).map_err(|e| ghg_core::Error::io(&dir, e))?;
    let mut w = csv::Writer::from_path(&out).map_err(ghg_core::Error::from)?;
    w.write_record(["company_id", "year", "log10_estimate", "estimate_tco2e"])
        .map_err(ghg_core::Error::from)?;
    for (row, y) in rows.iter().zip(&estimates) {
        w.write_record([row.company_id.clone(), row.year.to_string(), y.to_string(), 10f64.powf(*y).to_string()])
            .map_err(ghg_core::Error::from)?;
    }
    w.flush().map_err(|e| ghg_core::Error::io(&out, e))?;
    rec.output(out);
    rec.finish(s, &dir)
}

fn slug(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect()
}

#[derive(Serialize)]
struct ShapLine<'a> {
    company_id: &'a str,
    year: i32,
    base_value: f64,
    prediction: f64,
    values: BTreeMap<&'a str, f64>,
}

fn explain(s: &Settings) -> CmdResult {
    let mut rec = Recorder::new("explain");
    let model = load_model(s, &mut rec)?;
    let panel = read_panel(Settings::require(&s.panel, "panel")?, s.regional.as_deref(), &mut rec)?;
    let all = extract_all_rows(&panel, model.schema.config.life_expectancy);
    let rows = match s.rows {
        Some(n) if n < all.len() => (0..n).map(|i| all[i * all.len() / n].clone()).collect(),
        _ => all.clone(),
    };
    let seed = s.seed.unwrap_or(0);
    rec.seeds.push(seed);
    let background = subsample_background(
        &model.encode(&all),
        s.background.unwrap_or(DEFAULT_BACKGROUND_SIZE),
        seed,
    );
    let matrix = model.encode(&rows);
    let shap = tree_shap_matrix(&model.ensemble, &matrix, &background)?;
    let features = model.ensemble.features.clone();
    let dir = out_dir(s)?;

    let lines: Vec<ShapLine> = rows
        .iter()
        .zip(&shap)
        .map(|(r, v)| ShapLine {
            company_id: &r.company_id,
            year: r.year,
            base_value: v.base_value,
            prediction: v.reconstructed(),
            values: features.iter().map(|f| f.name.as_str()).zip(v.values.iter().copied()).collect(),
        })
        .collect();
    write_jsonl(&lines, &rec.output(dir.join("shap.jsonl")))?;

    let importance = importance_summary(&shap, &features);
    let path = rec.output(dir.join("importance.csv"));
    let mut w = csv::Writer::from_path(&path).map_err(ghg_core::Error::from)?;
    w.write_record(["feature", "mean_abs_shap"]).map_err(ghg_core::Error::from)?;
    for imp in &importance {
        w.write_record([imp.feature.clone(), imp.mean_abs.to_string()])
            .map_err(ghg_core::Error::from)?;
    }
    w.flush().map_err(|e| ghg_core::Error::io(&path, e))?;

    let dep_dir = dir.join("dependence");
    fs::create_dir_all(&dep_dir).map_err(|e| ghg_core::Error::io(&dep_dir, e))?;
    for (f, info) in features.iter().enumerate() {
        if !feature_is_used(&model.ensemble, f) {
            continue;
        }
        let points = dependence_export(&shap, &matrix, f)?;
        let path = rec.output(dep_dir.join(format!("{}.csv", slug(&info.name))));
        let mut w = csv::Writer::from_path(&path).map_err(ghg_core::Error::from)?;
        w.write_record(["value", "log10_value", "label", "shap"]).map_err(ghg_core::Error::from)?;
        for p in &points {
            let (value, log10, label) = match &p.value {
                DependenceValue::Missing => (String::new(), String::new(), String::new()),
                DependenceValue::Numeric { value, log10 } => {
                    (value.to_string(), log10.map(|l| l.to_string()).unwrap_or_default(), String::new())
                }
                DependenceValue::Category { label } => (String::new(), String::new(), label.clone()),
            };
            w.write_record([value, log10, label, p.attribution.to_string()])
                .map_err(ghg_core::Error::from)?;
        }
        w.flush().map_err(|e| ghg_core::Error::io(&path, e))?;
        if info.is_categorical() {
            let summary = category_distribution(&points);
            write_json(&summary, &rec.output(dep_dir.join(format!("{}_categories.json", slug(&info.name)))))?;
        }
    }
    rec.finish(s, &dir)
}

fn polish_config(s: &Settings) -> PolishConfig {
    let d = PolishConfig::default();
    PolishConfig {
        cluster_distance_threshold: s.threshold.unwrap_or(d.cluster_distance_threshold),
        min_cluster_size: s.min_cluster_size.unwrap_or(d.min_cluster_size),
        grouping_level: s.level.unwrap_or(d.grouping_level),
        shap_space: s.space.unwrap_or(d.shap_space),
        background_size: s.background.unwrap_or(d.background_size),
        seed: s.seed.unwrap_or(d.seed),
    }
}

#[derive(Serialize)]
struct PolishSummary<'a> {
    before: &'a ghg_core::eval::MetricsReport,
    after: &'a ghg_core::eval::MetricsReport,
    removed_per_test_set: Vec<usize>,
    training_rows_per_test_set: Vec<usize>,
}

fn polish(s: &Settings) -> CmdResult {
    let mut rec = Recorder::new("polish");
    let scope = scope(s)?;
    let pcfg = polish_config(s);
    pcfg.validate()?;
    let (panel, actions) = inputs(s, &mut rec)?;
    let cfg = protocol(s, &mut rec)?;
    let data = ScopeData::prepare(&panel, scope, &actions, &cfg.cleaning, &cfg.features)?;
    let model = match &s.model {
        Some(_) => load_model(s, &mut rec)?,
        None => {
            let seed = s.seed.unwrap_or(1);
            rec.seeds.push(seed);
            let plan = SplitPlan::new(&data.keys, 0.0, cfg.k, seed)?;
            let (hp, _) = select_model(&data, &plan, &cfg.grid, &cfg.features)?;
            let all: Vec<usize> = (0..data.len()).collect();
            ModelArtifact::fit(&data, &all, &hp, &cfg.features)?
        }
    };
    if model.scope != scope {
        return Err(CliError::usage(format!("the model was trained for {} but --scope is {scope}", model.scope)));
    }
    let (polished, audit) = polish_panel(&panel, &data, &model, &pcfg)?;
    let dir = out_dir(s)?;
    save_panel(&polished, &rec.output(dir.join("polished_panel.csv")), Format::Csv)?;
    write_jsonl(&audit, &rec.output(dir.join("audit.jsonl")))?;
    log::info!("removed {} of {} targets", audit.len(), data.len());
    if s.evaluate == Some(true) {
        rec.seeds.extend(&cfg.seeds);
        let run = polish_scope_data(&data, &cfg, &pcfg)?;
        let summary = PolishSummary {
            before: &run.before.report,
            after: &run.after.report,
            removed_per_test_set: run.audits.iter().map(|a| a.removed.len()).collect(),
            training_rows_per_test_set: run.audits.iter().map(|a| a.training_rows).collect(),
        };
        write_json(&summary, &rec.output(dir.join("polish_report.json")))?;
        write_audit_jsonl(&run.audits, &rec.output(dir.join("evaluation_audit.jsonl")))?;
    }
    rec.finish(s, &dir)
}

fn compare(s: &Settings) -> CmdResult {
    let mut rec = Recorder::new("compare");
    let scope = scope(s)?;
    let (panel, actions) = inputs(s, &mut rec)?;
    let defaults = CompareConfig::default();
    let cfg = CompareConfig {
        truth_year: s.truth_year.unwrap_or(defaults.truth_year),
        seed: s.seed.unwrap_or(defaults.seed),
        k: s.k.unwrap_or(defaults.k),
        grid: grid(s, &mut rec)?,
        features: features(s),
        cleaning: cleaning(s),
    };
    rec.seeds.push(cfg.seed);
    let mut providers = Vec::new();
    for path in s.providers.iter().flatten() {
        rec.input(path);
        providers.extend(load_provider_estimates(path)?);
    }
    let names: BTreeSet<&str> = providers.iter().map(|p| p.provider.as_str()).collect();
    if names.len() != providers.len() {
        return Err(CliError::usage("a provider appears in more than one file"));
    }
    let run = compare_providers(&panel, scope, &actions, &providers, &cfg)?;
    let dir = out_dir(s)?;
    write_json(&run.report, &rec.output(dir.join("comparison.json")))?;
    write_sector_errors_csv(&run.sector_errors, &rec.output(dir.join("sector_errors.csv")))?;
    save_provider_estimates(std::slice::from_ref(&run.ours), &rec.output(dir.join("our_estimates.csv")))?;
    rec.finish(s, &dir)
}
