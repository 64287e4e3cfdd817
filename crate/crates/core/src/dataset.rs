//! Company-year data model, ingestion and regional joins.
//!
//! Monetary amounts are in million USD, energy in GWh and emissions in
//! tCO2-eq. Missing cells are `None`; there are no sentinel numbers.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: &str = "1";
pub const BICS_LEVELS: usize = 7;
pub const MIN_YEAR: i32 = 2000;
pub const MAX_YEAR: i32 = 2100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EnergyExposure {
    A1,
    A2,
    A3,
    A4,
}

impl EnergyExposure {
    pub fn label(self) -> &'static str {
        match self {
            EnergyExposure::A1 => "A1",
            EnergyExposure::A2 => "A2",
            EnergyExposure::A3 => "A3",
            EnergyExposure::A4 => "A4",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Co2Law {
    #[default]
    NoLaw,
    NationalImplemented,
    SubnationalImplemented,
}

impl Co2Law {
    pub fn label(self) -> &'static str {
        match self {
            Co2Law::NoLaw => "NoLaw",
            Co2Law::NationalImplemented => "NationalImplemented",
            Co2Law::SubnationalImplemented => "SubnationalImplemented",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Scope {
    #[serde(rename = "s1")]
    S1,
    #[serde(rename = "s2")]
    S2,
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scope::S1 => "s1",
            Scope::S2 => "s2",
        })
    }
}

impl FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "s1" | "scope1" => Ok(Scope::S1),
            "s2" | "scope2" => Ok(Scope::S2),
            other => Err(Error::InvalidConfig(format!("unknown scope `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CompanyYearRecord {
    pub company_id: String,
    pub year: i32,
    pub country: String,
    pub employees: Option<f64>,
    pub capex: Option<f64>,
    pub enterprise_value: Option<f64>,
    pub revenues: Option<f64>,
    pub ppe_gross: Option<f64>,
    pub ppe_net: Option<f64>,
    pub accumulated_depreciation: Option<f64>,
    pub dda: Option<f64>,
    pub energy_consumption_gwh: Option<f64>,
    pub total_power_generated_gwh: Option<f64>,
    pub bics_levels: [Option<String>; BICS_LEVELS],
    pub new_energy_exposure: Option<EnergyExposure>,
    pub co2_law: Co2Law,
    pub country_mix_intensity: Option<f64>,
    pub reported_scope1_cdp: Option<f64>,
    pub reported_scope1_bbg: Option<f64>,
    pub reported_scope2_cdp: Option<f64>,
    pub reported_scope2_bbg: Option<f64>,
    pub report_date_scope1: Option<NaiveDate>,
    pub report_date_scope2: Option<NaiveDate>,
    /// Publication date of the energy figures; aligned like emission targets.
    pub report_date_energy: Option<NaiveDate>,
}

impl CompanyYearRecord {
    pub fn key(&self) -> (String, i32) {
        (self.company_id.clone(), self.year)
    }

    pub fn reported(&self, scope: Scope) -> (Option<f64>, Option<f64>, Option<NaiveDate>) {
        match scope {
            Scope::S1 => (
                self.reported_scope1_cdp,
                self.reported_scope1_bbg,
                self.report_date_scope1,
            ),
            Scope::S2 => (
                self.reported_scope2_cdp,
                self.reported_scope2_bbg,
                self.report_date_scope2,
            ),
        }
    }

    /// Blanks both reported sources of `scope`.
    pub fn clear_reported(&mut self, scope: Scope) {
        match scope {
            Scope::S1 => {
                self.reported_scope1_cdp = None;
                self.reported_scope1_bbg = None;
            }
            Scope::S2 => {
                self.reported_scope2_cdp = None;
                self.reported_scope2_bbg = None;
            }
        }
    }

    fn amounts(&self) -> [(&'static str, Option<f64>); 11] {
        [
            ("employees", self.employees),
            ("capex", self.capex),
            ("enterprise_value", self.enterprise_value),
            ("revenues", self.revenues),
            ("ppe_gross", self.ppe_gross),
            ("ppe_net", self.ppe_net),
            ("accumulated_depreciation", self.accumulated_depreciation),
            ("dda", self.dda),
            ("energy_consumption_gwh", self.energy_consumption_gwh),
            ("total_power_generated_gwh", self.total_power_generated_gwh),
            ("country_mix_intensity", self.country_mix_intensity),
        ]
    }

    fn emissions(&self) -> [(&'static str, Option<f64>); 4] {
        [
            ("reported_scope1_cdp", self.reported_scope1_cdp),
            ("reported_scope1_bbg", self.reported_scope1_bbg),
            ("reported_scope2_cdp", self.reported_scope2_cdp),
            ("reported_scope2_bbg", self.reported_scope2_bbg),
        ]
    }

    pub fn bics_prefix_consistent(&self) -> bool {
        let mut seen_gap = false;
        for level in &self.bics_levels {
            match level {
                Some(_) if seen_gap => return false,
                Some(_) => {}
                None => seen_gap = true,
            }
        }
        true
    }

    /// Checks the record invariants, reporting the first violation.
    pub fn check(&self, row: usize) -> Result<()> {
        if !(MIN_YEAR..=MAX_YEAR).contains(&self.year) {
            return Err(Error::MalformedRow {
                row,
                column: "year".into(),
                message: format!("year {} outside [{MIN_YEAR}, {MAX_YEAR}]", self.year),
            });
        }
        for (column, value) in self.amounts().into_iter().chain(self.emissions()) {
            if let Some(v) = value {
                if !v.is_finite() {
                    return Err(Error::MalformedRow {
                        row,
                        column: column.into(),
                        message: format!("non-finite value {v}"),
                    });
                }
                if v < 0.0 {
                    return Err(Error::NegativeValue {
                        row,
                        column: column.into(),
                    });
                }
            }
        }
        for (column, value) in self.emissions() {
            if value == Some(0.0) {
                return Err(Error::NonPositiveEmission {
                    row,
                    column: column.into(),
                });
            }
        }
        if !self.bics_prefix_consistent() {
            return Err(Error::MalformedRow {
                row,
                column: "bics_l1".into(),
                message: "BICS levels are not prefix-consistent".into(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Panel {
    records: Vec<CompanyYearRecord>,
    pub schema_version: String,
}

impl Default for Panel {
    fn default() -> Self {
        Panel {
            records: Vec::new(),
            schema_version: SCHEMA_VERSION.to_string(),
        }
    }
}

impl Panel {
    /// Builds a panel, rejecting duplicate (company, year) keys.
    pub fn new(records: Vec<CompanyYearRecord>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            if !seen.insert((r.company_id.as_str(), r.year)) {
                return Err(Error::DuplicateKey {
                    company_id: r.company_id.clone(),
                    year: r.year,
                });
            }
        }
        Ok(Panel {
            records,
            schema_version: SCHEMA_VERSION.to_string(),
        })
    }

    pub fn records(&self) -> &[CompanyYearRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<CompanyYearRecord> {
        self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// (company, year) -> position in `records()`.
    pub fn index(&self) -> BTreeMap<(&str, i32), usize> {
        self.records
            .iter()
            .enumerate()
            .map(|(i, r)| ((r.company_id.as_str(), r.year), i))
            .collect()
    }

    pub fn get(&self, company_id: &str, year: i32) -> Option<&CompanyYearRecord> {
        self.records
            .iter()
            .find(|r| r.year == year && r.company_id == company_id)
    }

    pub fn companies(&self) -> BTreeSet<&str> {
        self.records.iter().map(|r| r.company_id.as_str()).collect()
    }

    /// Applies `f` to every record; keys must not change.
    pub fn map_records(&self, mut f: impl FnMut(&mut CompanyYearRecord)) -> Result<Panel> {
        let mut records = self.records.clone();
        records.iter_mut().for_each(&mut f);
        let mut panel = Panel::new(records)?;
        panel.schema_version = self.schema_version.clone();
        Ok(panel)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Jsonl,
}

impl Format {
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") => Format::Jsonl,
            _ => Format::Csv,
        }
    }
}

/// Column layout of the panel file formats.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct FlatRecord {
    company_id: String,
    year: i32,
    country: String,
    #[serde(default)]
    employees: Option<f64>,
    #[serde(default)]
    capex: Option<f64>,
    #[serde(default)]
    enterprise_value: Option<f64>,
    #[serde(default)]
    revenues: Option<f64>,
    #[serde(default)]
    ppe_gross: Option<f64>,
    #[serde(default)]
    ppe_net: Option<f64>,
    #[serde(default)]
    accumulated_depreciation: Option<f64>,
    #[serde(default)]
    dda: Option<f64>,
    #[serde(default)]
    energy_consumption_gwh: Option<f64>,
    #[serde(default)]
    total_power_generated_gwh: Option<f64>,
    #[serde(default)]
    bics_l1: Option<String>,
    #[serde(default)]
    bics_l2: Option<String>,
    #[serde(default)]
    bics_l3: Option<String>,
    #[serde(default)]
    bics_l4: Option<String>,
    #[serde(default)]
    bics_l5: Option<String>,
    #[serde(default)]
    bics_l6: Option<String>,
    #[serde(default)]
    bics_l7: Option<String>,
    #[serde(default)]
    new_energy_exposure: Option<EnergyExposure>,
    #[serde(default)]
    co2_law: Option<Co2Law>,
    #[serde(default)]
    country_mix_intensity: Option<f64>,
    #[serde(default)]
    reported_scope1_cdp: Option<f64>,
    #[serde(default)]
    reported_scope1_bbg: Option<f64>,
    #[serde(default)]
    reported_scope2_cdp: Option<f64>,
    #[serde(default)]
    reported_scope2_bbg: Option<f64>,
    #[serde(default)]
    report_date_scope1: Option<NaiveDate>,
    #[serde(default)]
    report_date_scope2: Option<NaiveDate>,
    #[serde(default)]
    report_date_energy: Option<NaiveDate>,
}

const COLUMNS: [&str; 30] = [
    "company_id",
    "year",
    "country",
    "employees",
    "capex",
    "enterprise_value",
    "revenues",
    "ppe_gross",
    "ppe_net",
    "accumulated_depreciation",
    "dda",
    "energy_consumption_gwh",
    "total_power_generated_gwh",
    "bics_l1",
    "bics_l2",
    "bics_l3",
    "bics_l4",
    "bics_l5",
    "bics_l6",
    "bics_l7",
    "new_energy_exposure",
    "co2_law",
    "country_mix_intensity",
    "reported_scope1_cdp",
    "reported_scope1_bbg",
    "reported_scope2_cdp",
    "reported_scope2_bbg",
    "report_date_scope1",
    "report_date_scope2",
    "report_date_energy",
];

fn known_column(name: &str) -> bool {
    COLUMNS.contains(&name)
}

fn blank_to_none(s: Option<String>) -> Option<String> {
    s.filter(|v| !v.is_empty())
}

impl From<FlatRecord> for CompanyYearRecord {
    fn from(f: FlatRecord) -> Self {
        CompanyYearRecord {
            company_id: f.company_id,
            year: f.year,
            country: f.country,
            employees: f.employees,
            capex: f.capex,
            enterprise_value: f.enterprise_value,
            revenues: f.revenues,
            ppe_gross: f.ppe_gross,
            ppe_net: f.ppe_net,
            accumulated_depreciation: f.accumulated_depreciation,
            dda: f.dda,
            energy_consumption_gwh: f.energy_consumption_gwh,
            total_power_generated_gwh: f.total_power_generated_gwh,
            bics_levels: [
                blank_to_none(f.bics_l1),
                blank_to_none(f.bics_l2),
                blank_to_none(f.bics_l3),
                blank_to_none(f.bics_l4),
                blank_to_none(f.bics_l5),
                blank_to_none(f.bics_l6),
                blank_to_none(f.bics_l7),
            ],
            new_energy_exposure: f.new_energy_exposure,
            co2_law: f.co2_law.unwrap_or_default(),
            country_mix_intensity: f.country_mix_intensity,
            reported_scope1_cdp: f.reported_scope1_cdp,
            reported_scope1_bbg: f.reported_scope1_bbg,
            reported_scope2_cdp: f.reported_scope2_cdp,
            reported_scope2_bbg: f.reported_scope2_bbg,
            report_date_scope1: f.report_date_scope1,
            report_date_scope2: f.report_date_scope2,
            report_date_energy: f.report_date_energy,
        }
    }
}

impl From<&CompanyYearRecord> for FlatRecord {
    fn from(r: &CompanyYearRecord) -> Self {
        let [l1, l2, l3, l4, l5, l6, l7] = r.bics_levels.clone();
        FlatRecord {
            company_id: r.company_id.clone(),
            year: r.year,
            country: r.country.clone(),
            employees: r.employees,
            capex: r.capex,
            enterprise_value: r.enterprise_value,
            revenues: r.revenues,
            ppe_gross: r.ppe_gross,
            ppe_net: r.ppe_net,
            accumulated_depreciation: r.accumulated_depreciation,
            dda: r.dda,
            energy_consumption_gwh: r.energy_consumption_gwh,
            total_power_generated_gwh: r.total_power_generated_gwh,
            bics_l1: l1,
            bics_l2: l2,
            bics_l3: l3,
            bics_l4: l4,
            bics_l5: l5,
            bics_l6: l6,
            bics_l7: l7,
            new_energy_exposure: r.new_energy_exposure,
            co2_law: Some(r.co2_law),
            country_mix_intensity: r.country_mix_intensity,
            reported_scope1_cdp: r.reported_scope1_cdp,
            reported_scope1_bbg: r.reported_scope1_bbg,
            reported_scope2_cdp: r.reported_scope2_cdp,
            reported_scope2_bbg: r.reported_scope2_bbg,
            report_date_scope1: r.report_date_scope1,
            report_date_scope2: r.report_date_scope2,
            report_date_energy: r.report_date_energy,
        }
    }
}

/// Side information gathered while loading a panel.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadReport {
    /// Unknown column names, each counted once per file (CSV) or per
    /// occurrence (JSONL).
    pub ignored_columns: BTreeMap<String, usize>,
}

impl LoadReport {
    pub fn warning_count(&self) -> usize {
        self.ignored_columns.values().sum()
    }
}

pub fn load_panel(path: &Path, format: Format) -> Result<Panel> {
    load_panel_with_report(path, format).map(|(panel, _)| panel)
}

pub fn load_panel_with_report(path: &Path, format: Format) -> Result<(Panel, LoadReport)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let (records, report) = match format {
        Format::Csv => read_csv_records(file)?,
        Format::Jsonl => read_jsonl_records(BufReader::new(file), path)?,
    };
    if report.warning_count() > 0 {
        log::warn!(
            "{}: ignored {} unknown column(s): {:?}",
            path.display(),
            report.warning_count(),
            report.ignored_columns.keys().collect::<Vec<_>>()
        );
    }
    Ok((Panel::new(records)?, report))
}

/// Parses panel CSV from any reader. Row indices in errors are 1-based data
/// rows (the header is row 0).
pub fn read_csv_records<R: std::io::Read>(
    reader: R,
) -> Result<(Vec<CompanyYearRecord>, LoadReport)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut report = LoadReport::default();
    for h in headers.iter().filter(|h| !known_column(h)) {
        *report.ignored_columns.entry(h.to_string()).or_default() += 1;
    }
    let mut records = Vec::new();
    for (i, row) in rdr.deserialize::<FlatRecord>().enumerate() {
        let row_index = i + 1;
        let flat = row.map_err(|e| csv_row_error(e, row_index, &headers))?;
        let record = CompanyYearRecord::from(flat);
        record.check(row_index)?;
        records.push(record);
    }
    Ok((records, report))
}

pub(crate) fn csv_row_error(err: csv::Error, row: usize, headers: &csv::StringRecord) -> Error {
    let message = err.to_string();
    let column = match err.kind() {
        csv::ErrorKind::Deserialize { err, .. } => err
            .field()
            .and_then(|f| headers.get(f as usize))
            .unwrap_or("?")
            .to_string(),
        _ => "?".to_string(),
    };
    Error::MalformedRow {
        row,
        column,
        message,
    }
}

fn read_jsonl_records<R: BufRead>(
    reader: R,
    path: &Path,
) -> Result<(Vec<CompanyYearRecord>, LoadReport)> {
    let mut report = LoadReport::default();
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let row = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| Error::MalformedRow {
                row,
                column: "?".into(),
                message: e.to_string(),
            })?;
        let serde_json::Value::Object(mut map) = value else {
            return Err(Error::MalformedRow {
                row,
                column: "?".into(),
                message: "expected a JSON object".into(),
            });
        };
        let unknown: Vec<String> = map.keys().filter(|k| !known_column(k)).cloned().collect();
        for key in unknown {
            map.remove(&key);
            *report.ignored_columns.entry(key).or_default() += 1;
        }
        // Nulls and empty strings both mean "missing".
        map.retain(|_, v| !(v.is_null() || v.as_str() == Some("")));
        let flat: FlatRecord = serde_json::from_value(serde_json::Value::Object(map))
            .map_err(|e| Error::MalformedRow {
                row,
                column: json_error_column(&e),
                message: e.to_string(),
            })?;
        let record = CompanyYearRecord::from(flat);
        record.check(row)?;
        records.push(record);
    }
    Ok((records, report))
}

fn json_error_column(e: &serde_json::Error) -> String {
    let msg = e.to_string();
    COLUMNS
        .iter()
        .find(|c| msg.contains(&format!("`{c}`")))
        .map(|c| c.to_string())
        .unwrap_or_else(|| "?".to_string())
}

pub fn save_panel(panel: &Panel, path: &Path, format: Format) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    match format {
        Format::Csv => write_csv_records(panel.records(), file),
        Format::Jsonl => {
            let mut w = BufWriter::new(file);
            for r in panel.records() {
                serde_json::to_writer(&mut w, &FlatRecord::from(r))?;
                w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
            }
            w.flush().map_err(|e| Error::io(path, e))
        }
    }
}

pub fn write_csv_records<W: Write>(records: &[CompanyYearRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    if records.is_empty() {
        w.write_record(COLUMNS)?;
    }
    for r in records {
        w.serialize(FlatRecord::from(r))?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorporateAction {
    pub company_id: String,
    pub year: i32,
    pub amount: f64,
}

pub fn load_actions(path: &Path) -> Result<Vec<CorporateAction>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = rdr.headers()?.clone();
    let mut actions = Vec::new();
    for (i, row) in rdr.deserialize::<CorporateAction>().enumerate() {
        let action = row.map_err(|e| csv_row_error(e, i + 1, &headers))?;
        if !(action.amount >= 0.0) {
            return Err(Error::NegativeValue {
                row: i + 1,
                column: "amount".into(),
            });
        }
        actions.push(action);
    }
    Ok(actions)
}

pub fn save_actions(actions: &[CorporateAction], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    if actions.is_empty() {
        w.write_record(["company_id", "year", "amount"])?;
    }
    for a in actions {
        w.serialize(a)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionalRow {
    pub mix_intensity: Option<f64>,
    pub co2_law: Co2Law,
}

/// Country-level indicators keyed by (country, year).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RegionalTable {
    rows: BTreeMap<String, BTreeMap<i32, RegionalRow>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RegionalCsvRow {
    country: String,
    year: i32,
    mix_intensity: Option<f64>,
    co2_law: Option<Co2Law>,
}

impl RegionalTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a row; a second row for the same (country, year) is rejected.
    pub fn insert(&mut self, country: &str, year: i32, row: RegionalRow) -> Result<()> {
        let by_year = self.rows.entry(country.to_string()).or_default();
        if by_year.insert(year, row).is_some() {
            return Err(Error::DuplicateKey {
                company_id: country.to_string(),
                year,
            });
        }
        Ok(())
    }

    /// Indicators in force for (country, year), carrying the last known
    /// values forward past the end of the series.
    pub fn lookup(&self, country: &str, year: i32) -> Option<RegionalRow> {
        let by_year = self.rows.get(country)?;
        let (_, latest) = by_year.range(..=year).next_back()?;
        let mix_intensity = by_year
            .range(..=year)
            .rev()
            .find_map(|(_, r)| r.mix_intensity);
        Some(RegionalRow {
            mix_intensity,
            co2_law: latest.co2_law,
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, i32, &RegionalRow)> {
        self.rows
            .iter()
            .flat_map(|(c, m)| m.iter().map(move |(y, r)| (c.as_str(), *y, r)))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
        let headers = rdr.headers()?.clone();
        let mut table = RegionalTable::new();
        for (i, row) in rdr.deserialize::<RegionalCsvRow>().enumerate() {
            let row = row.map_err(|e| csv_row_error(e, i + 1, &headers))?;
            if row.mix_intensity.is_some_and(|m| m < 0.0) {
                return Err(Error::NegativeValue {
                    row: i + 1,
                    column: "mix_intensity".into(),
                });
            }
            table.insert(
                &row.country,
                row.year,
                RegionalRow {
                    mix_intensity: row.mix_intensity,
                    co2_law: row.co2_law.unwrap_or_default(),
                },
            )?;
        }
        Ok(table)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        for (country, year, row) in self.iter() {
            w.serialize(RegionalCsvRow {
                country: country.to_string(),
                year,
                mix_intensity: row.mix_intensity,
                co2_law: Some(row.co2_law),
            })?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Attaches country energy-mix intensity and CO2-law status to each record.
/// Records whose country is absent from the table are left unchanged.
pub fn join_regional(panel: &Panel, regional: &RegionalTable) -> Panel {
    let mut out = panel.clone();
    for r in &mut out.records {
        if let Some(row) = regional.lookup(&r.country, r.year) {
            r.country_mix_intensity = row.mix_intensity;
            r.co2_law = row.co2_law;
        }
    }
    out
}

/// Year-end FX rates, expressed as USD per unit of the local currency.
#[derive(Debug, Clone, Default)]
pub struct FxTable {
    rates: BTreeMap<(String, i32), f64>,
}

impl FxTable {
    pub fn insert(&mut self, currency: &str, year: i32, usd_per_unit: f64) {
        self.rates.insert((currency.to_string(), year), usd_per_unit);
    }

    pub fn rate(&self, currency: &str, year: i32) -> Option<f64> {
        if currency == "USD" {
            return Some(1.0);
        }
        self.rates.get(&(currency.to_string(), year)).copied()
    }
}

/// Converts monetary fields of each company's records from its reporting
/// currency to USD using the December 31 rate of the record's year.
pub fn convert_to_usd(
    panel: &Panel,
    currencies: &BTreeMap<String, String>,
    fx: &FxTable,
) -> Result<Panel> {
    let mut out = panel.clone();
    for r in &mut out.records {
        let Some(currency) = currencies.get(&r.company_id) else {
            continue;
        };
        let rate = fx.rate(currency, r.year).ok_or_else(|| Error::MissingFxRate {
            currency: currency.clone(),
            year: r.year,
        })?;
        for field in [
            &mut r.capex,
            &mut r.enterprise_value,
            &mut r.revenues,
            &mut r.ppe_gross,
            &mut r.ppe_net,
            &mut r.accumulated_depreciation,
            &mut r.dda,
        ] {
            if let Some(v) = field.as_mut() {
                *v *= rate;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub records: usize,
    /// Invariant name -> number of offending records.
    pub violations: BTreeMap<String, usize>,
    /// Column name -> fraction of records with a value.
    pub coverage: BTreeMap<String, f64>,
}

impl ValidationReport {
    pub fn total_violations(&self) -> usize {
        self.violations.values().sum()
    }
}

pub fn validate_panel(panel: &Panel) -> ValidationReport {
    let mut violations: BTreeMap<String, usize> = [
        "year_range",
        "negative_value",
        "non_positive_emission",
        "bics_prefix",
        "duplicate_key",
    ]
    .into_iter()
    .map(|k| (k.to_string(), 0))
    .collect();
    let mut present: BTreeMap<String, usize> = BTreeMap::new();
    let mut keys = HashSet::new();
    let mut bump = |name: &str| *violations.get_mut(name).expect("known invariant") += 1;

    for r in panel.records() {
        if !(MIN_YEAR..=MAX_YEAR).contains(&r.year) {
            bump("year_range");
        }
        if r.amounts()
            .iter()
            .chain(r.emissions().iter())
            .any(|(_, v)| v.is_some_and(|v| v < 0.0))
        {
            bump("negative_value");
        }
        if r.emissions().iter().any(|(_, v)| *v == Some(0.0)) {
            bump("non_positive_emission");
        }
        if !r.bics_prefix_consistent() {
            bump("bics_prefix");
        }
        if !keys.insert((r.company_id.as_str(), r.year)) {
            bump("duplicate_key");
        }
        for (name, v) in r.amounts().iter().chain(r.emissions().iter()) {
            *present.entry(name.to_string()).or_default() += usize::from(v.is_some());
        }
        for (level, label) in r.bics_levels.iter().enumerate() {
            *present.entry(format!("bics_l{}", level + 1)).or_default() +=
                usize::from(label.is_some());
        }
        *present.entry("new_energy_exposure".into()).or_default() +=
            usize::from(r.new_energy_exposure.is_some());
    }
    let n = panel.len().max(1) as f64;
    ValidationReport {
        records: panel.len(),
        violations,
        coverage: present
            .into_iter()
            .map(|(k, c)| (k, c as f64 / n))
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "company_id,year,country,revenues,bics_l1,bics_l2";

    fn record(company: &str, year: i32) -> CompanyYearRecord {
        CompanyYearRecord {
            company_id: company.into(),
            year,
            country: "FRA".into(),
            ..Default::default()
        }
    }

    #[test]
    fn empty_csv_gives_empty_panel() {
        let (records, _) = read_csv_records(format!("{HEADER}\n").as_bytes()).unwrap();
        assert!(Panel::new(records).unwrap().is_empty());
    }

    #[test]
    fn single_row_is_parsed() {
        let data = format!("{HEADER}\nA,2020,FRA,4167,Energy,\n");
        let (records, report) = read_csv_records(data.as_bytes()).unwrap();
        let panel = Panel::new(records).unwrap();
        assert_eq!(panel.len(), 1);
        assert_eq!(panel.records()[0].revenues, Some(4167.0));
        assert_eq!(panel.records()[0].bics_levels[0].as_deref(), Some("Energy"));
        assert_eq!(panel.records()[0].bics_levels[1], None);
        assert_eq!(panel.records()[0].co2_law, Co2Law::NoLaw);
        assert_eq!(report.warning_count(), 0);
    }

    #[test]
    fn duplicate_key_is_rejected() {
        let data = format!("{HEADER}\nA,2020,FRA,1,,\nA,2020,FRA,2,,\n");
        let (records, _) = read_csv_records(data.as_bytes()).unwrap();
        assert!(matches!(
            Panel::new(records),
            Err(Error::DuplicateKey { year: 2020, .. })
        ));
    }

    #[test]
    fn bad_cells_report_row_and_column() {
        let data = format!("{HEADER}\nA,2020,FRA,1,,\nB,2020,FRA,abc,,\n");
        match read_csv_records(data.as_bytes()) {
            Err(Error::MalformedRow { row, column, .. }) => {
                assert_eq!(row, 2);
                assert_eq!(column, "revenues");
            }
            other => panic!("unexpected {other:?}"),
        }
        let data = format!("{HEADER}\nA,2020,FRA,-5,,\n");
        assert!(matches!(
            read_csv_records(data.as_bytes()),
            Err(Error::NegativeValue { row: 1, .. })
        ));
        let data = "company_id,year,country,reported_scope1_cdp\nA,2020,FRA,0\n";
        assert!(matches!(
            read_csv_records(data.as_bytes()),
            Err(Error::NonPositiveEmission { .. })
        ));
        let data = format!("{HEADER}\nA,2020,FRA,1,,Oil\n");
        assert!(matches!(
            read_csv_records(data.as_bytes()),
            Err(Error::MalformedRow { .. })
        ));
    }

    #[test]
    fn unknown_columns_are_counted() {
        let data = "company_id,year,country,isin,ticker\nA,2020,FRA,X,Y\n";
        let (records, report) = read_csv_records(data.as_bytes()).unwrap();
        assert_eq!(records.len(), 1);
        assert_eq!(report.warning_count(), 2);
    }

    #[test]
    fn jsonl_reads_same_fields() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.jsonl");
        std::fs::write(
            &path,
            "{\"company_id\":\"A\",\"year\":2020,\"country\":\"FRA\",\"revenues\":4167,\"bics_l1\":\"Energy\",\"extra\":1,\"report_date_scope1\":\"2021-03-15\"}\n",
        )
        .unwrap();
        let (panel, report) = load_panel_with_report(&path, Format::Jsonl).unwrap();
        assert_eq!(panel.records()[0].revenues, Some(4167.0));
        assert_eq!(
            panel.records()[0].report_date_scope1,
            NaiveDate::from_ymd_opt(2021, 3, 15)
        );
        assert_eq!(report.warning_count(), 1);
    }

    #[test]
    fn regional_join_carries_forward_and_skips_unknown_countries() {
        let mut table = RegionalTable::new();
        let law = Co2Law::NationalImplemented;
        table
            .insert("FRA", 2017, RegionalRow { mix_intensity: Some(18.0), co2_law: law })
            .unwrap();
        table
            .insert("FRA", 2018, RegionalRow { mix_intensity: Some(17.7), co2_law: law })
            .unwrap();
        table
            .insert("USA", 2020, RegionalRow { mix_intensity: Some(53.0), co2_law: Co2Law::SubnationalImplemented })
            .unwrap();
        let mut usa = record("B", 2020);
        usa.country = "USA".into();
        let mut xyz = record("C", 2020);
        xyz.country = "XYZ".into();
        let panel = Panel::new(vec![record("A", 2020), usa, xyz]).unwrap();
        let joined = join_regional(&panel, &table);
        assert_eq!(joined.records()[0].country_mix_intensity, Some(17.7));
        assert_eq!(joined.records()[0].co2_law, law);
        assert_eq!(joined.records()[1].country_mix_intensity, Some(53.0));
        assert_eq!(joined.records()[2].country_mix_intensity, None);
        assert_eq!(joined.records()[2].co2_law, Co2Law::NoLaw);
        assert_eq!(join_regional(&joined, &table), joined);
    }

    #[test]
    fn regional_table_rejects_duplicates() {
        let mut table = RegionalTable::new();
        let row = RegionalRow { mix_intensity: None, co2_law: Co2Law::NoLaw };
        table.insert("FRA", 2020, row).unwrap();
        assert!(table.insert("FRA", 2020, row).is_err());
    }

    #[test]
    fn validation_counts_prefix_violations_without_mutating() {
        let mut bad = record("B", 2020);
        bad.bics_levels[2] = Some("L3".into());
        let mut good = record("A", 2020);
        good.bics_levels[0] = Some("L1".into());
        good.energy_consumption_gwh = Some(1.0);
        let panel = Panel::new(vec![good, bad]).unwrap();
        let before = panel.clone();
        let report = validate_panel(&panel);
        assert_eq!(report.violations["bics_prefix"], 1);
        assert_eq!(report.total_violations(), 1);
        assert_eq!(report.coverage["energy_consumption_gwh"], 0.5);
        assert_eq!(panel, before);
    }

    #[test]
    fn fx_conversion_uses_year_end_rate() {
        let mut r = record("A", 2020);
        r.revenues = Some(100.0);
        r.employees = Some(10.0);
        let panel = Panel::new(vec![r]).unwrap();
        let mut fx = FxTable::default();
        fx.insert("EUR", 2020, 1.22);
        let currencies = BTreeMap::from([("A".to_string(), "EUR".to_string())]);
        let out = convert_to_usd(&panel, &currencies, &fx).unwrap();
        assert_eq!(out.records()[0].revenues, Some(122.0));
        assert_eq!(out.records()[0].employees, Some(10.0));
        let missing = FxTable::default();
        assert!(convert_to_usd(&panel, &currencies, &missing).is_err());
    }
}
