//! Synthetic company-year panels with a known emissions process.
//!
//! For scope `s`,
//!
//! ```text
//! log10 E = alpha[sector][s] + beta[s] * log10(energy) + gamma[s] * log10(revenue)
//!         + delta[s] * mix / 1000 + eps[s] + outlier shift
//! ```
//!
//! where `eps` is a per-company AR(1) disturbance. Reported values may carry
//! an extra reporting offset before a planted unexplained jump.

use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{
    join_regional, Co2Law, CompanyYearRecord, CorporateAction, EnergyExposure, Panel, RegionalRow, RegionalTable,
    Scope,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    pub beta_energy: f64,
    pub gamma_revenue: f64,
    /// Per 1000 gCO2/kWh of country mix intensity.
    pub delta_mix: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectorSpec {
    /// BICS levels 1 to 4; deeper levels are drawn per company.
    pub labels: [String; 4],
    /// Intercept per scope (scope 1, scope 2).
    pub alpha: [f64; 2],
    /// log10 GWh of energy per unit of log10 revenue, at zero log revenue.
    pub energy_offset: f64,
    pub generates_power: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountrySpec {
    /// ISO 3166 alpha-3 code.
    pub code: String,
    /// gCO2/kWh in the first year.
    pub mix_intensity: f64,
    /// Yearly change in gCO2/kWh.
    pub mix_trend: f64,
    pub co2_law: Co2Law,
    /// First year the law applies; earlier years have no law.
    pub law_since: i32,
}

/// Probability that each field is blanked, applied after generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Missingness {
    pub employees: f64,
    pub capex: f64,
    pub enterprise_value: f64,
    pub revenues: f64,
    pub ppe_gross: f64,
    pub ppe_net: f64,
    pub accumulated_depreciation: f64,
    pub dda: f64,
    pub energy_consumption: f64,
    pub total_power_generated: f64,
    /// BICS levels 5 to 7.
    pub bics_deep: f64,
    pub new_energy_exposure: f64,
}

impl Default for Missingness {
    fn default() -> Self {
        Missingness {
            employees: 0.05,
            capex: 0.05,
            enterprise_value: 0.10,
            revenues: 0.02,
            ppe_gross: 0.10,
            ppe_net: 0.05,
            accumulated_depreciation: 0.30,
            dda: 0.05,
            energy_consumption: 0.30,
            total_power_generated: 0.20,
            bics_deep: 0.30,
            new_energy_exposure: 0.50,
        }
    }
}

impl Missingness {
    pub fn none() -> Self {
        Missingness {
            employees: 0.0,
            capex: 0.0,
            enterprise_value: 0.0,
            revenues: 0.0,
            ppe_gross: 0.0,
            ppe_net: 0.0,
            accumulated_depreciation: 0.0,
            dda: 0.0,
            energy_consumption: 0.0,
            total_power_generated: 0.0,
            bics_deep: 0.0,
            new_energy_exposure: 0.0,
        }
    }

    fn rates(&self) -> [f64; 12] {
        [
            self.employees,
            self.capex,
            self.enterprise_value,
            self.revenues,
            self.ppe_gross,
            self.ppe_net,
            self.accumulated_depreciation,
            self.dda,
            self.energy_consumption,
            self.total_power_generated,
            self.bics_deep,
            self.new_energy_exposure,
        ]
    }
}

/// Companies whose reported values before `year` are too low by `factor`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpSpec {
    /// Share of reporting companies given an unexplained jump.
    pub fraction: f64,
    pub factor: f64,
}

/// Acquisitions multiplying revenue (and with it emissions) from one year on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionSpec {
    pub fraction: f64,
    pub revenue_factor: f64,
}

/// A handful of rows in one sector whose emissions follow a shifted regime.
/// Shifted rows carry energy-exposure rating A4, which no other row of that
/// sector has.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierClusterSpec {
    pub sector: usize,
    pub size: usize,
    pub shift_log10: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub n_companies: usize,
    pub first_year: i32,
    pub last_year: i32,
    pub sectors: Vec<SectorSpec>,
    pub countries: Vec<CountrySpec>,
    pub coefficients: [Coefficients; 2],
    /// Standard deviation of the log10 disturbance.
    pub noise_std: f64,
    /// Year-to-year autocorrelation of the disturbance.
    pub noise_persistence: f64,
    /// Probability that a company has reported by the first year.
    pub initial_report_share: f64,
    /// Probability that a company never reports.
    pub never_report_share: f64,
    /// Probability of reporting in a year after the first report.
    pub report_continuity: f64,
    /// Probability that a scope 1 reporter also reports scope 2.
    pub scope2_share: f64,
    /// Probability a report comes from CDP rather than Bloomberg only.
    pub cdp_share: f64,
    pub missingness: Missingness,
    pub jumps: Option<JumpSpec>,
    pub actions: Option<ActionSpec>,
    pub outliers: Vec<OutlierClusterSpec>,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n_companies: 1000,
            first_year: 2010,
            last_year: 2020,
            sectors: default_sectors(),
            countries: default_countries(),
            coefficients: [
                Coefficients {
                    beta_energy: 0.6,
                    gamma_revenue: 0.3,
                    delta_mix: 0.5,
                },
                Coefficients {
                    beta_energy: 0.8,
                    gamma_revenue: 0.1,
                    delta_mix: 1.5,
                },
            ],
            noise_std: 0.0,
            noise_persistence: 0.95,
            initial_report_share: 0.35,
            never_report_share: 0.15,
            report_continuity: 0.95,
            scope2_share: 0.9,
            cdp_share: 0.7,
            missingness: Missingness::default(),
            jumps: None,
            actions: None,
            outliers: Vec::new(),
            seed: 0,
        }
    }
}

/// 24 level-4 sectors under 6 level-1 sectors.
pub fn default_sectors() -> Vec<SectorSpec> {
    const L1: [&str; 6] = ["Utilities", "Energy", "Materials", "Industrials", "Consumer", "Financials"];
    const L1_ALPHA: [f64; 6] = [1.6, 1.3, 1.0, 0.4, 0.0, -0.9];
    const L1_ENERGY: [f64; 6] = [-0.2, -0.4, -0.6, -1.2, -1.5, -2.2];
    let mut out = Vec::new();
    for (i, l1) in L1.iter().enumerate() {
        for j in 0..2 {
            for k in 0..2 {
                let l2 = format!("{l1} {}", j + 1);
                let l3 = format!("{l2}.{}", k + 1);
                let l4 = format!("{l3}.1");
                let within = 0.35 * (2 * j + k) as f64 - 0.5;
                out.push(SectorSpec {
                    labels: [l1.to_string(), l2, l3, l4],
                    alpha: [L1_ALPHA[i] + within, 0.5 * L1_ALPHA[i] - 0.5 * within + 0.3],
                    energy_offset: L1_ENERGY[i] + 0.15 * (j as f64 - k as f64),
                    generates_power: i == 0,
                });
            }
        }
    }
    out
}

pub fn default_countries() -> Vec<CountrySpec> {
    let c = |code: &str, mix: f64, trend: f64, law: Co2Law, since: i32| CountrySpec {
        code: code.to_string(),
        mix_intensity: mix,
        mix_trend: trend,
        co2_law: law,
        law_since: since,
    };
    vec![
        c("USA", 450.0, -8.0, Co2Law::SubnationalImplemented, 2013),
        c("FRA", 70.0, -1.0, Co2Law::NationalImplemented, 2014),
        c("DEU", 480.0, -12.0, Co2Law::NationalImplemented, 2012),
        c("GBR", 450.0, -20.0, Co2Law::NationalImplemented, 2013),
        c("JPN", 500.0, -3.0, Co2Law::NationalImplemented, 2012),
        c("CHN", 760.0, -10.0, Co2Law::SubnationalImplemented, 2014),
        c("IND", 780.0, -4.0, Co2Law::NoLaw, 2100),
        c("BRA", 90.0, 1.0, Co2Law::NoLaw, 2100),
        c("CAN", 150.0, -3.0, Co2Law::NationalImplemented, 2019),
        c("AUS", 800.0, -12.0, Co2Law::NoLaw, 2100),
    ]
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        let prob = |x: f64| (0.0..=1.0).contains(&x);
        if self.n_companies == 0 {
            return bad("n_companies must be positive".into());
        }
        if self.first_year > self.last_year {
            return bad("first_year is after last_year".into());
        }
        if self.sectors.is_empty() || self.countries.is_empty() {
            return bad("need at least one sector and one country".into());
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad("noise_std must be non-negative".into());
        }
        if !(0.0..1.0).contains(&self.noise_persistence) {
            return bad("noise_persistence must be in [0, 1)".into());
        }
        for (name, p) in [
            ("initial_report_share", self.initial_report_share),
            ("never_report_share", self.never_report_share),
            ("report_continuity", self.report_continuity),
            ("scope2_share", self.scope2_share),
            ("cdp_share", self.cdp_share),
        ] {
            if !prob(p) {
                return bad(format!("{name} must be a probability"));
            }
        }
        if self.initial_report_share + self.never_report_share > 1.0 {
            return bad("initial_report_share + never_report_share exceeds 1".into());
        }
        if !self.missingness.rates().iter().all(|&p| prob(p)) {
            return bad("missingness rates must be probabilities".into());
        }
        if let Some(j) = &self.jumps {
            if !prob(j.fraction) || !(j.factor > 1.5) {
                return bad("jump fraction must be a probability and factor above 1.5".into());
            }
        }
        if let Some(a) = &self.actions {
            if !prob(a.fraction) || !(a.revenue_factor > 1.0) {
                return bad("action fraction must be a probability and revenue factor above 1".into());
            }
        }
        for o in &self.outliers {
            if o.sector >= self.sectors.len() || o.size == 0 || !o.shift_log10.is_finite() {
                return bad("outlier cluster refers to an unknown sector or is empty".into());
            }
        }
        Ok(())
    }
}

/// Every generative term of one company-year.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRow {
    pub company_id: String,
    pub year: i32,
    pub sector: usize,
    pub country: String,
    pub log10_revenue: f64,
    pub log10_energy: f64,
    pub mix_intensity: f64,
    pub alpha: [f64; 2],
    pub epsilon: [f64; 2],
    pub outlier_shift: f64,
    /// Added to the true log10 emission in the reported value.
    pub reporting_offset: f64,
    pub reported: [bool; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedJump {
    pub company_id: String,
    /// First year reported correctly.
    pub year: i32,
    pub factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub config: GeneratorConfig,
    pub rows: Vec<TruthRow>,
    pub jumps: Vec<PlantedJump>,
    pub actions: Vec<CorporateAction>,
    /// (company, year) of rows in planted outlier clusters.
    pub outliers: Vec<(String, i32)>,
}

impl GroundTruth {
    /// True log10 emission of a row (without reporting offsets).
    pub fn log10_emission(&self, row: &TruthRow, scope: Scope) -> f64 {
        log10_emission(&self.config.coefficients, row, scope)
    }

    /// Value a company discloses, offsets included.
    pub fn reported_emission(&self, row: &TruthRow, scope: Scope) -> f64 {
        10f64.powf(self.log10_emission(row, scope) + row.reporting_offset)
    }

    pub fn row(&self, company_id: &str, year: i32) -> Option<&TruthRow> {
        self.rows.iter().find(|r| r.company_id == company_id && r.year == year)
    }
}

fn scope_index(scope: Scope) -> usize {
    match scope {
        Scope::S1 => 0,
        Scope::S2 => 1,
    }
}

/// A generated dataset: panel, corporate actions, regional table and truth.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub panel: Panel,
    pub actions: Vec<CorporateAction>,
    pub regional: RegionalTable,
    pub truth: GroundTruth,
}

pub fn regional_table(cfg: &GeneratorConfig) -> RegionalTable {
    let mut table = RegionalTable::new();
    for c in &cfg.countries {
        for year in cfg.first_year..=cfg.last_year {
            let mix = (c.mix_intensity + c.mix_trend * (year - cfg.first_year) as f64).max(10.0);
            let law = if year >= c.law_since { c.co2_law } else { Co2Law::NoLaw };
            table
                .insert(
                    &c.code,
                    year,
                    RegionalRow {
                        mix_intensity: Some(mix),
                        co2_law: law,
                    },
                )
                .expect("one row per country and year");
        }
    }
    table
}

struct Company {
    id: String,
    sector: usize,
    country: usize,
    deep: [String; 3],
    base_revenue: f64,
    energy_noise: f64,
    exposure: EnergyExposure,
    start: Option<i32>,
}

fn report_date(rng: &mut ChaCha8Rng, year: i32) -> NaiveDate {
    let (y, month) = if rng.random_bool(0.5) {
        (year, rng.random_range(7..=12))
    } else {
        (year + 1, rng.random_range(1..=6))
    };
    NaiveDate::from_ymd_opt(y, month, rng.random_range(1..=28)).expect("valid date")
}

/// Rounds to 6 significant digits, like figures in a vendor extract.
fn tidy(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let digits = 5 - x.abs().log10().floor() as i32;
    let scale = 10f64.powi(digits);
    (x * scale).round() / scale
}

pub fn generate_panel(cfg: &GeneratorConfig) -> Result<SyntheticData> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let years: Vec<i32> = (cfg.first_year..=cfg.last_year).collect();
    let width = cfg.n_companies.to_string().len().max(4);
    let marked: BTreeSet<usize> = cfg.outliers.iter().map(|o| o.sector).collect();

    let companies: Vec<Company> = (0..cfg.n_companies)
        .map(|i| {
            let sector = rng.random_range(0..cfg.sectors.len());
            let l4 = &cfg.sectors[sector].labels[3];
            let a = rng.random_range(1..=3);
            let b = rng.random_range(1..=2);
            let c = rng.random_range(1..=2);
            let start = {
                let u: f64 = rng.random();
                if u < cfg.never_report_share {
                    None
                } else if u < cfg.never_report_share + cfg.initial_report_share {
                    Some(cfg.first_year)
                } else {
                    Some(years[rng.random_range(0..years.len())])
                }
            };
            let mut exposure = [EnergyExposure::A1, EnergyExposure::A2, EnergyExposure::A3, EnergyExposure::A4]
                [rng.random_range(0..4)];
            if exposure == EnergyExposure::A4 && marked.contains(&sector) {
                exposure = EnergyExposure::A3;
            }
            Company {
                id: format!("C{i:0width$}"),
                sector,
                country: rng.random_range(0..cfg.countries.len()),
                deep: [format!("{l4}.{a}"), format!("{l4}.{a}.{b}"), format!("{l4}.{a}.{b}.{c}")],
                base_revenue: 3.0 + 0.8 * std_normal.sample(&mut rng),
                energy_noise: 0.05 * std_normal.sample(&mut rng),
                exposure,
                start,
            }
        })
        .collect();

    // Which companies report in which year.
    let reported: Vec<Vec<[bool; 2]>> = companies
        .iter()
        .map(|c| {
            years
                .iter()
                .map(|&y| match c.start {
                    Some(s) if y == s => [true, rng.random_bool(cfg.scope2_share)],
                    Some(s) if y > s => {
                        let s1 = rng.random_bool(cfg.report_continuity);
                        [s1, s1 && rng.random_bool(cfg.scope2_share)]
                    }
                    _ => [false, false],
                })
                .collect()
        })
        .collect();

    let reporting_years = |flags: &[[bool; 2]]| flags.iter().filter(|f| f[0]).count();
    let mut eligible: Vec<usize> = (0..companies.len())
        .filter(|&i| reporting_years(&reported[i]) >= 3)
        .collect();
    eligible.shuffle(&mut rng);
    let n_jumps = cfg.jumps.as_ref().map_or(0, |j| (j.fraction * eligible.len() as f64).round() as usize);
    let n_actions = cfg.actions.as_ref().map_or(0, |a| (a.fraction * eligible.len() as f64).round() as usize);
    let n_actions = n_actions.min(eligible.len() - n_jumps.min(eligible.len()));
    let jump_companies: Vec<usize> = eligible.iter().take(n_jumps).copied().collect();
    let action_companies: Vec<usize> = eligible.iter().skip(n_jumps).take(n_actions).copied().collect();

    // Year index from which something changes, drawn among reporting years
    // after the first one.
    let pick_change_year = |rng: &mut ChaCha8Rng, flags: &[[bool; 2]]| {
        let idx: Vec<usize> = (0..flags.len()).filter(|&t| flags[t][0]).skip(1).collect();
        idx[rng.random_range(0..idx.len())]
    };
    let mut jump_at: BTreeMap<usize, usize> = BTreeMap::new();
    for &c in &jump_companies {
        jump_at.insert(c, pick_change_year(&mut rng, &reported[c]));
    }
    let mut action_at: BTreeMap<usize, usize> = BTreeMap::new();
    for &c in &action_companies {
        action_at.insert(c, pick_change_year(&mut rng, &reported[c]));
    }

    // Outlier rows: reported rows of distinct companies in the sector.
    let mut outlier_rows: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for spec in &cfg.outliers {
        let mut candidates: Vec<(usize, usize)> = (0..companies.len())
            .filter(|&c| companies[c].sector == spec.sector && !jump_at.contains_key(&c) && !action_at.contains_key(&c))
            .filter_map(|c| {
                let t: Vec<usize> = (0..years.len()).filter(|&t| reported[c][t][0]).collect();
                t.last().map(|&t| (c, t))
            })
            .filter(|k| !outlier_rows.contains_key(k))
            .collect();
        if candidates.len() < spec.size {
            return Err(Error::InvalidConfig(format!(
                "sector {} has only {} reporting companies for an outlier cluster of {}",
                spec.sector,
                candidates.len(),
                spec.size
            )));
        }
        candidates.shuffle(&mut rng);
        for k in candidates.into_iter().take(spec.size) {
            outlier_rows.insert(k, spec.shift_log10);
        }
    }

    let regional = regional_table(cfg);
    let mut records = Vec::with_capacity(companies.len() * years.len());
    let mut truth_rows = Vec::with_capacity(companies.len() * years.len());
    let mut actions = Vec::new();
    let mut jumps = Vec::new();
    let mut outliers = Vec::new();
    let rho = cfg.noise_persistence;
    let innovation = cfg.noise_std * (1.0 - rho * rho).sqrt();
    let miss = cfg.missingness.rates();

    for (ci, c) in companies.iter().enumerate() {
        let sector = &cfg.sectors[c.sector];
        let country = &cfg.countries[c.country];
        let mut log_rev = c.base_revenue;
        let mut eps = [
            cfg.noise_std * std_normal.sample(&mut rng),
            cfg.noise_std * std_normal.sample(&mut rng),
        ];
        let ppe_ratio = 0.3 + 1.2 * rng.random::<f64>();
        let life_years = rng.random_range(8.0..30.0);
        let employee_scale = rng.random_range(1.5..4.0);
        for (t, &year) in years.iter().enumerate() {
            if t > 0 {
                log_rev += 0.01 + 0.03 * std_normal.sample(&mut rng);
                for e in &mut eps {
                    *e = rho * *e + innovation * std_normal.sample(&mut rng);
                }
            }
            let action_here = action_at.get(&ci) == Some(&t);
            if action_here {
                let factor = cfg.actions.as_ref().map_or(1.0, |a| a.revenue_factor);
                let before = tidy(10f64.powf(log_rev));
                log_rev += factor.log10();
                let after = tidy(10f64.powf(log_rev));
                actions.push(CorporateAction {
                    company_id: c.id.clone(),
                    year,
                    amount: tidy(after - before),
                });
            }
            let revenue = tidy(10f64.powf(log_rev));
            let log10_revenue = revenue.log10();
            let energy = tidy(10f64.powf(sector.energy_offset + log10_revenue + c.energy_noise));
            let log10_energy = energy.log10();
            let regional_row = regional.lookup(&country.code, year).expect("country is in the table");
            let mix = regional_row.mix_intensity.expect("generated mix is present");

            let outlier_shift = outlier_rows.get(&(ci, t)).copied().unwrap_or(0.0);
            if outlier_shift != 0.0 {
                outliers.push((c.id.clone(), year));
            }
            let reporting_offset = match (jump_at.get(&ci), &cfg.jumps) {
                (Some(&jt), Some(spec)) if t < jt => -spec.factor.log10(),
                _ => 0.0,
            };
            let flags = reported[ci][t];
            let row = TruthRow {
                company_id: c.id.clone(),
                year,
                sector: c.sector,
                country: country.code.clone(),
                log10_revenue,
                log10_energy,
                mix_intensity: mix,
                alpha: sector.alpha,
                epsilon: eps,
                outlier_shift,
                reporting_offset,
                reported: flags,
            };

            let ppe_gross = tidy(revenue * ppe_ratio);
            let dda = tidy(ppe_gross / life_years);
            let capex = tidy(dda * rng.random_range(0.8..1.6));
            let acc_dep = tidy(ppe_gross * rng.random_range(0.3..0.6));
            let ppe_net = tidy(ppe_gross - acc_dep);
            let mut blank = |i: usize| rng.random_bool(miss[i]);
            let keep = |v: f64, drop: bool| if drop { None } else { Some(v) };
            let bics = &sector.labels;
            let deep_missing = blank(10);
            let exposure = if outlier_shift != 0.0 {
                Some(EnergyExposure::A4)
            } else if blank(11) {
                None
            } else {
                Some(c.exposure)
            };
            let mut record = CompanyYearRecord {
                company_id: c.id.clone(),
                year,
                country: country.code.clone(),
                employees: keep(tidy(10f64.powf(log10_revenue + employee_scale - 3.0) * 1000.0).round(), blank(0)),
                capex: keep(capex, blank(1)),
                enterprise_value: keep(tidy(revenue * 1.4), blank(2)),
                revenues: keep(revenue, blank(3) && !action_here),
                ppe_gross: keep(ppe_gross, blank(4)),
                ppe_net: keep(ppe_net, blank(5)),
                accumulated_depreciation: keep(acc_dep, blank(6)),
                dda: keep(dda, blank(7)),
                energy_consumption_gwh: keep(energy, blank(8)),
                total_power_generated_gwh: if sector.generates_power {
                    keep(tidy(energy * 0.8), blank(9))
                } else {
                    None
                },
                bics_levels: [
                    Some(bics[0].clone()),
                    Some(bics[1].clone()),
                    Some(bics[2].clone()),
                    Some(bics[3].clone()),
                    (!deep_missing).then(|| c.deep[0].clone()),
                    (!deep_missing).then(|| c.deep[1].clone()),
                    (!deep_missing).then(|| c.deep[2].clone()),
                ],
                new_energy_exposure: exposure,
                ..Default::default()
            };
            if record.energy_consumption_gwh.is_some() || record.total_power_generated_gwh.is_some() {
                record.report_date_energy = Some(report_date(&mut rng, year));
            }
            for scope in [Scope::S1, Scope::S2] {
                let s = scope_index(scope);
                if !flags[s] {
                    continue;
                }
                let value = 10f64.powf(log10_emission(&cfg.coefficients, &row, scope) + row.reporting_offset);
                let date = Some(report_date(&mut rng, year));
                let cdp = rng.random_bool(cfg.cdp_share);
                match scope {
                    Scope::S1 => {
                        if cdp {
                            record.reported_scope1_cdp = Some(value);
                        } else {
                            record.reported_scope1_bbg = Some(value);
                        }
                        record.report_date_scope1 = date;
                    }
                    Scope::S2 => {
                        if cdp {
                            record.reported_scope2_cdp = Some(value);
                        } else {
                            record.reported_scope2_bbg = Some(value);
                        }
                        record.report_date_scope2 = date;
                    }
                }
            }
            records.push(record);
            truth_rows.push(row);
        }
        if let (Some(&jt), Some(spec)) = (jump_at.get(&ci), &cfg.jumps) {
            jumps.push(PlantedJump {
                company_id: c.id.clone(),
                year: years[jt],
                factor: spec.factor,
            });
        }
    }
    let panel = join_regional(&Panel::new(records)?, &regional);
    Ok(SyntheticData {
        panel,
        actions: actions.clone(),
        regional,
        truth: GroundTruth {
            config: cfg.clone(),
            rows: truth_rows,
            jumps,
            actions,
            outliers,
        },
    })
}

fn log10_emission(coefficients: &[Coefficients; 2], row: &TruthRow, scope: Scope) -> f64 {
    let s = scope_index(scope);
    let c = &coefficients[s];
    row.alpha[s]
        + c.beta_energy * row.log10_energy
        + c.gamma_revenue * row.log10_revenue
        + c.delta_mix * row.mix_intensity / 1000.0
        + row.epsilon[s]
        + row.outlier_shift
}
