//! Target construction: source priority, reporting-period alignment, jump
//! cleaning and the log10 transform.

use std::collections::BTreeMap;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::dataset::{CorporateAction, Panel, Scope};
use crate::error::{Error, Result};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Source {
    #[serde(rename = "CDP")]
    Cdp,
    #[serde(rename = "BBG")]
    Bbg,
}

/// One reported value before alignment. `origin_year` is the year of the
/// panel record it was read from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawReport {
    pub value: f64,
    pub report_date: Option<NaiveDate>,
    pub source: Source,
    pub origin_year: i32,
}

impl RawReport {
    /// Reports published January-June describe the previous year.
    pub fn aligned_year(&self) -> i32 {
        match self.report_date {
            Some(d) if d.month() <= 6 => d.year() - 1,
            Some(d) => d.year(),
            None => self.origin_year,
        }
    }
}

/// Fiscal year a report published on `date` is attributed to.
pub fn aligned_year(date: NaiveDate) -> i32 {
    if date.month() <= 6 {
        date.year() - 1
    } else {
        date.year()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub year: i32,
    pub value: f64,
    pub source: Source,
    pub origin_year: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmissionSeries {
    pub company_id: String,
    pub scope: Scope,
    /// Strictly increasing years, strictly positive values.
    pub points: Vec<SeriesPoint>,
}

impl EmissionSeries {
    pub fn new(company_id: impl Into<String>, scope: Scope, points: Vec<SeriesPoint>) -> Self {
        debug_assert!(points.windows(2).all(|w| w[0].year < w[1].year));
        EmissionSeries {
            company_id: company_id.into(),
            scope,
            points,
        }
    }

    /// Convenience constructor for (year, value) pairs reported by CDP.
    pub fn from_pairs(company_id: &str, scope: Scope, pairs: &[(i32, f64)]) -> Self {
        let points = pairs
            .iter()
            .map(|&(year, value)| SeriesPoint {
                year,
                value,
                source: Source::Cdp,
                origin_year: year,
            })
            .collect();
        EmissionSeries::new(company_id, scope, points)
    }

    pub fn years(&self) -> Vec<i32> {
        self.points.iter().map(|p| p.year).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Jump {
    pub from_year: i32,
    pub to_year: i32,
    /// (v_to - v_from) / v_from on raw emissions.
    pub relative_change: f64,
    pub explained: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CleaningConfig {
    pub jump_threshold: f64,
    pub action_revenue_fraction: f64,
    pub action_window_years: i32,
    /// When false, series are aligned but jumps are kept.
    pub remove_jumps: bool,
}

impl Default for CleaningConfig {
    fn default() -> Self {
        CleaningConfig {
            jump_threshold: 0.50,
            action_revenue_fraction: 0.20,
            action_window_years: 1,
            remove_jumps: true,
        }
    }
}

impl CleaningConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| x > 0.0 && x <= 1.0;
        if !unit(self.jump_threshold) || !unit(self.action_revenue_fraction) {
            return Err(Error::InvalidConfig(
                "cleaning thresholds must lie in (0, 1]".into(),
            ));
        }
        if self.action_window_years < 0 {
            return Err(Error::InvalidConfig(
                "action window must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// CDP takes priority over Bloomberg when both report.
pub fn select_target_source(cdp: Option<f64>, bbg: Option<f64>) -> Option<(f64, Source)> {
    cdp.map(|v| (v, Source::Cdp))
        .or_else(|| bbg.map(|v| (v, Source::Bbg)))
}

/// Aligns reports onto fiscal years, keeping one value per year.
pub fn align_reporting_period(company_id: &str, scope: Scope, raw: &[RawReport]) -> EmissionSeries {
    align_with_superseded(company_id, scope, raw).0
}

/// Like [`align_reporting_period`], also returning the reports that lost a
/// same-year collision. The later report date wins; ties fall back to source
/// priority, then origin year.
pub fn align_with_superseded(
    company_id: &str,
    scope: Scope,
    raw: &[RawReport],
) -> (EmissionSeries, Vec<RawReport>) {
    let mut by_year: BTreeMap<i32, RawReport> = BTreeMap::new();
    let mut superseded = Vec::new();
    let rank = |r: &RawReport| (r.report_date, std::cmp::Reverse(r.source), r.origin_year);
    for report in raw {
        let year = report.aligned_year();
        match by_year.get(&year) {
            Some(current) if rank(current) >= rank(report) => superseded.push(*report),
            Some(current) => {
                superseded.push(*current);
                by_year.insert(year, *report);
            }
            None => {
                by_year.insert(year, *report);
            }
        }
    }
    let points = by_year
        .into_iter()
        .map(|(year, r)| SeriesPoint {
            year,
            value: r.value,
            source: r.source,
            origin_year: r.origin_year,
        })
        .collect();
    (EmissionSeries::new(company_id, scope, points), superseded)
}

/// Adjacent pairs of reported years (gaps included) whose relative change
/// exceeds the threshold.
pub fn detect_jumps(series: &EmissionSeries, cfg: &CleaningConfig) -> Vec<Jump> {
    series
        .points
        .windows(2)
        .filter_map(|w| {
            let change = (w[1].value - w[0].value) / w[0].value;
            (change.abs() > cfg.jump_threshold).then_some(Jump {
                from_year: w[0].year,
                to_year: w[1].year,
                relative_change: change,
                explained: false,
            })
        })
        .collect()
}

/// True when a corporate action near the jump amounts to a large enough
/// share of that year's revenues.
pub fn explain_jump(
    jump: &Jump,
    actions: &[CorporateAction],
    revenues: &BTreeMap<i32, f64>,
    cfg: &CleaningConfig,
) -> bool {
    let lo = jump.from_year - cfg.action_window_years;
    let hi = jump.to_year + cfg.action_window_years;
    actions.iter().any(|a| {
        (lo..=hi).contains(&a.year)
            && revenues
                .get(&a.year)
                .is_some_and(|&rev| a.amount >= cfg.action_revenue_fraction * rev)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RemovalReason {
    UnexplainedJump,
    SupersededReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemovedPoint {
    pub company_id: String,
    pub scope: Scope,
    pub year: i32,
    pub origin_year: i32,
    pub value: f64,
    pub reason: RemovalReason,
}

/// Drops every point up to and including the start of the most recent
/// unexplained jump. Explained jumps are kept.
pub fn clean_series(
    series: &EmissionSeries,
    actions: &[CorporateAction],
    revenues: &BTreeMap<i32, f64>,
    cfg: &CleaningConfig,
) -> EmissionSeries {
    clean_series_with_audit(series, actions, revenues, cfg).0
}

pub fn clean_series_with_audit(
    series: &EmissionSeries,
    actions: &[CorporateAction],
    revenues: &BTreeMap<i32, f64>,
    cfg: &CleaningConfig,
) -> (EmissionSeries, Vec<RemovedPoint>) {
    if !cfg.remove_jumps {
        return (series.clone(), Vec::new());
    }
    let cutoff = detect_jumps(series, cfg)
        .iter()
        .rev()
        .find(|j| !explain_jump(j, actions, revenues, cfg))
        .map(|j| j.from_year);
    let Some(cutoff) = cutoff else {
        return (series.clone(), Vec::new());
    };
    let (removed, kept): (Vec<SeriesPoint>, Vec<SeriesPoint>) =
        series.points.iter().partition(|p| p.year <= cutoff);
    let audit = removed
        .into_iter()
        .map(|p| RemovedPoint {
            company_id: series.company_id.clone(),
            scope: series.scope,
            year: p.year,
            origin_year: p.origin_year,
            value: p.value,
            reason: RemovalReason::UnexplainedJump,
        })
        .collect();
    (
        EmissionSeries::new(series.company_id.clone(), series.scope, kept),
        audit,
    )
}

pub fn log_target(value: f64) -> Result<f64> {
    if value > 0.0 && value.is_finite() {
        Ok(value.log10())
    } else {
        Err(Error::NonPositiveTarget(value))
    }
}

/// A cleaned, aligned target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub value: f64,
    pub log10: f64,
    pub source: Source,
    pub origin_year: i32,
}

#[derive(Debug, Clone, Default)]
pub struct CleanedTargets {
    /// (company, fiscal year) -> target.
    pub targets: BTreeMap<(String, i32), Target>,
    /// Aligned series before jump cleaning, one per reporting company.
    pub aligned: Vec<EmissionSeries>,
    pub audit: Vec<RemovedPoint>,
}

fn group_by_company(panel: &Panel, scope: Scope) -> BTreeMap<&str, (Vec<RawReport>, BTreeMap<i32, f64>)> {
    let mut out: BTreeMap<&str, (Vec<RawReport>, BTreeMap<i32, f64>)> = BTreeMap::new();
    for r in panel.records() {
        let entry = out.entry(r.company_id.as_str()).or_default();
        if let Some(rev) = r.revenues {
            entry.1.insert(r.year, rev);
        }
        let (cdp, bbg, date) = r.reported(scope);
        if let Some((value, source)) = select_target_source(cdp, bbg) {
            entry.0.push(RawReport {
                value,
                report_date: date,
                source,
                origin_year: r.year,
            });
        }
    }
    out
}

/// Aligned but uncleaned series for every company reporting `scope`.
pub fn aligned_series(panel: &Panel, scope: Scope) -> Vec<EmissionSeries> {
    group_by_company(panel, scope)
        .into_iter()
        .filter(|(_, (raw, _))| !raw.is_empty())
        .map(|(company, (raw, _))| align_reporting_period(company, scope, &raw))
        .collect()
}

/// Runs source selection, alignment and jump cleaning for every company.
pub fn build_targets(
    panel: &Panel,
    scope: Scope,
    actions: &[CorporateAction],
    cfg: &CleaningConfig,
) -> Result<CleanedTargets> {
    cfg.validate()?;
    let mut actions_by_company: BTreeMap<&str, Vec<CorporateAction>> = BTreeMap::new();
    for a in actions {
        actions_by_company
            .entry(a.company_id.as_str())
            .or_default()
            .push(a.clone());
    }
    let groups: Vec<_> = group_by_company(panel, scope)
        .into_iter()
        .filter(|(_, (raw, _))| !raw.is_empty())
        .collect();
    let no_actions = Vec::new();
    let per_company = par::map(&groups, |(company, (raw, revenues))| {
        let (series, superseded) = align_with_superseded(company, scope, raw);
        let company_actions = actions_by_company.get(company).unwrap_or(&no_actions);
        let (cleaned, mut audit) = clean_series_with_audit(&series, company_actions, revenues, cfg);
        audit.extend(superseded.into_iter().map(|r| RemovedPoint {
            company_id: company.to_string(),
            scope,
            year: r.aligned_year(),
            origin_year: r.origin_year,
            value: r.value,
            reason: RemovalReason::SupersededReport,
        }));
        (series, cleaned, audit)
    });

    let mut out = CleanedTargets::default();
    for (series, cleaned, audit) in per_company {
        for p in &cleaned.points {
            let target = Target {
                value: p.value,
                log10: log_target(p.value)?,
                source: p.source,
                origin_year: p.origin_year,
            };
            out.targets.insert((cleaned.company_id.clone(), p.year), target);
        }
        out.aligned.push(series);
        out.audit.extend(audit);
    }
    out.audit
        .sort_by(|a, b| (&a.company_id, a.year, a.origin_year).cmp(&(&b.company_id, b.year, b.origin_year)));
    Ok(out)
}

/// Blanks every removed point in the panel, for both scopes, returning the
/// cleaned panel and the audit trail.
pub fn clean_panel(
    panel: &Panel,
    actions: &[CorporateAction],
    cfg: &CleaningConfig,
) -> Result<(Panel, Vec<RemovedPoint>)> {
    let mut audit = Vec::new();
    for scope in [Scope::S1, Scope::S2] {
        audit.extend(build_targets(panel, scope, actions, cfg)?.audit);
    }
    let removed: std::collections::BTreeSet<(&str, i32, Scope)> = audit
        .iter()
        .map(|p| (p.company_id.as_str(), p.origin_year, p.scope))
        .collect();
    let cleaned = panel.map_records(|r| {
        for scope in [Scope::S1, Scope::S2] {
            if removed.contains(&(r.company_id.as_str(), r.year, scope)) {
                r.clear_reported(scope);
            }
        }
    })?;
    Ok((cleaned, audit))
}
