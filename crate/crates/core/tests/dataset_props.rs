use chrono::NaiveDate;
use ghg_core::dataset::{
    join_regional, load_panel, save_panel, validate_panel, Co2Law, CompanyYearRecord, EnergyExposure, Format, Panel,
    RegionalRow, RegionalTable,
};
use proptest::prelude::*;

fn amount() -> impl Strategy<Value = Option<f64>> {
    prop_oneof![Just(None), (0.0f64..1e13).prop_map(Some), (1e-9f64..1e-3).prop_map(Some)]
}

fn emission() -> impl Strategy<Value = Option<f64>> {
    prop_oneof![Just(None), (1e-6f64..1e10).prop_map(Some)]
}

fn date() -> impl Strategy<Value = Option<NaiveDate>> {
    prop_oneof![Just(None), (0u32..8000).prop_map(|d| NaiveDate::from_num_days_from_ce_opt(730_000 + d as i32))]
}

fn record() -> impl Strategy<Value = CompanyYearRecord> {
    let ids = ("[A-Za-z][A-Za-z0-9_, \"-]{0,10}[A-Za-z0-9]", 2000i32..=2030, "[A-Z]{3}");
    let money = prop::collection::vec(amount(), 11);
    let reported = prop::collection::vec(emission(), 4);
    let dates = prop::collection::vec(date(), 3);
    let bics = (0usize..=7, "[A-Za-z][A-Za-z0-9 .&]{0,12}[a-z0-9]");
    let labels = (
        prop::option::of(prop_oneof![
            Just(EnergyExposure::A1),
            Just(EnergyExposure::A2),
            Just(EnergyExposure::A3),
            Just(EnergyExposure::A4)
        ]),
        prop_oneof![
            Just(Co2Law::NoLaw),
            Just(Co2Law::NationalImplemented),
            Just(Co2Law::SubnationalImplemented)
        ],
    );
    (ids, money, reported, dates, bics, labels).prop_map(|((id, year, country), m, e, d, (depth, bics), (exposure, law))| {
        CompanyYearRecord {
            company_id: id,
            year,
            country,
            employees: m[0],
            capex: m[1],
            enterprise_value: m[2],
            revenues: m[3],
            ppe_gross: m[4],
            ppe_net: m[5],
            accumulated_depreciation: m[6],
            dda: m[7],
            energy_consumption_gwh: m[8],
            total_power_generated_gwh: m[9],
            bics_levels: std::array::from_fn(|l| (l < depth).then(|| format!("{bics} {l}"))),
            new_energy_exposure: exposure,
            co2_law: law,
            country_mix_intensity: m[10],
            reported_scope1_cdp: e[0],
            reported_scope1_bbg: e[1],
            reported_scope2_cdp: e[2],
            reported_scope2_bbg: e[3],
            report_date_scope1: d[0],
            report_date_scope2: d[1],
            report_date_energy: d[2],
        }
    })
}

fn panel() -> impl Strategy<Value = Panel> {
    prop::collection::vec(record(), 0..20).prop_map(|mut records| {
        for (i, r) in records.iter_mut().enumerate() {
            r.company_id = format!("{}{i}", r.company_id);
        }
        Panel::new(records).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn save_then_load_is_identity(p in panel()) {
        let dir = tempfile::tempdir().unwrap();
        for (name, format) in [("p.csv", Format::Csv), ("p.jsonl", Format::Jsonl)] {
            let path = dir.path().join(name);
            save_panel(&p, &path, format).unwrap();
            let back = load_panel(&path, format).unwrap();
            prop_assert_eq!(&back, &p);
        }
    }

    #[test]
    fn joining_twice_is_joining_once(p in panel(), intensity in 10.0f64..900.0) {
        let mut table = RegionalTable::new();
        for r in p.records().iter().step_by(2) {
            let row = RegionalRow { mix_intensity: Some(intensity), co2_law: Co2Law::NationalImplemented };
            let _ = table.insert(&r.country, r.year, row);
        }
        let once = join_regional(&p, &table);
        prop_assert_eq!(join_regional(&once, &table), once);
    }

    #[test]
    fn validation_leaves_the_panel_alone(p in panel()) {
        let before = p.clone();
        let report = validate_panel(&p);
        prop_assert_eq!(report.records, p.len());
        prop_assert_eq!(p, before);
    }
}
