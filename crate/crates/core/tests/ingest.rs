use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use proptest::prelude::*;

use workforce_core::data_model::{AgeGroup, GroupBound};
use workforce_core::ingest::{write_canonical, CanonicalFiles, Dataset, IngestError};
use workforce_core::{
    AgeSpec, CohortKey, Country, CountryBundle, FieldId, InflowSeries, PopulationProjection, Sex,
    StockKey, StockTable,
};

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/eu")
}

/// Column sum straight from the CSV text, filtered on the first columns.
fn column_sum(file: &str, prefix: &[&str], column: usize) -> f64 {
    fs::read_to_string(fixture().join(file))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').collect::<Vec<_>>())
        .filter(|cells| prefix.iter().enumerate().all(|(i, p)| cells[i] == *p))
        .map(|cells| cells[column].parse::<f64>().unwrap())
        .sum()
}

#[test]
fn fixture_totals_match_raw_columns() {
    let ds = Dataset::read(&CanonicalFiles::in_dir(&fixture())).unwrap();
    for country in ["AT", "HR", "LU"] {
        let b = ds.bundle(&Country::new(country)).unwrap();
        let totals = b.stocks.observed_totals();
        for year in [2000, 2005, 2016] {
            for field in FieldId::minimal() {
                let y = year.to_string();
                let raw = column_sum("stocks.csv", &[country, &y, &field.to_string()], 6);
                assert_eq!(totals.get(field, year), Some(raw), "{country} {field} {year}");
            }
            let y = year.to_string();
            let grads = column_sum("inflow.csv", &[country, &y, "GRAD"], 3);
            let migr = column_sum("inflow.csv", &[country, &y, "MIGR"], 3);
            assert_eq!(b.inflow.total(year), Some(grads + migr));
        }
    }
}

#[test]
fn fixture_breaks_and_detail() {
    let ds = Dataset::read(&CanonicalFiles::in_dir(&fixture())).unwrap();
    let hr = ds.bundle(&Country::new("HR")).unwrap();
    assert!(hr.stocks.is_break(2005));
    assert!(!hr.stocks.is_break(2006));
    let lu = ds.bundle(&Country::new("LU")).unwrap();
    assert!(!lu.stocks.has_detail(FieldId::GP, 2016));
    assert!(lu.inflow.entrant_sex_share.is_none());
    let at = ds.bundle(&Country::new("AT")).unwrap();
    assert!(at.sector_split.is_some());
    assert_eq!(at.populations.len(), 3);
}

#[test]
fn fixture_round_trips() {
    let ds = Dataset::read(&CanonicalFiles::in_dir(&fixture())).unwrap();
    let bundles: Vec<CountryBundle> = ds.countries().map(|c| ds.bundle(c).unwrap()).collect();
    let dir = tempfile::tempdir().unwrap();
    let files = write_canonical(&bundles, dir.path()).unwrap();
    let again = Dataset::read(&files).unwrap();
    for b in &bundles {
        assert_eq!(&again.bundle(&b.country).unwrap(), b);
    }
}

#[test]
fn missing_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let err = Dataset::read(&CanonicalFiles::in_dir(dir.path())).unwrap_err();
    assert!(matches!(err, IngestError::Io { .. }), "{err}");
}

const GROUPS: [(&str, u32, u32, GroupBound); 4] = [
    ("<25", 20, 25, GroupBound::OpenBelow),
    ("25-44", 25, 45, GroupBound::Closed),
    ("45-64", 45, 65, GroupBound::Closed),
    ("65+", 65, 70, GroupBound::OpenAbove),
];

fn bundle_from(counts: &[f64], years: i32, flagged: Option<i32>) -> CountryBundle {
    let country = Country::new("ZZ");
    let mut stocks = StockTable::new(country.clone());
    let mut it = counts.iter().cycle();
    for year in 2000..2000 + years {
        for field in FieldId::minimal() {
            for sex in Sex::ALL {
                for (_, start, end, bound) in GROUPS {
                    let age = AgeSpec::Group(AgeGroup { start, end, bound });
                    let key = StockKey { field, year, cohort: Some(CohortKey { sex, age }) };
                    stocks.insert(key, *it.next().unwrap());
                }
            }
        }
    }
    if let Some(y) = flagged {
        stocks.add_flag(y, "b");
    }
    let mut inflow = InflowSeries::new(country.clone());
    for year in 2000..2000 + years {
        inflow.graduates.insert(year, *it.next().unwrap());
        inflow.migrants.insert(year, *it.next().unwrap());
    }
    let pop = PopulationProjection {
        country: country.clone(),
        scenario: "baseline".into(),
        values: (2000..2000 + years).map(|y| (y, 1e6 + *it.next().unwrap())).collect(),
    };
    CountryBundle { country, stocks, inflow, populations: vec![pop], sector_split: None }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn written_bundles_read_back_identically(
        counts in prop::collection::vec(0.0f64..1e6, 1..40),
        years in 2i32..6,
        flag in prop::option::of(2000i32..2006),
    ) {
        let original = bundle_from(&counts, years, flag.filter(|y| *y < 2000 + years));
        let dir = tempfile::tempdir().unwrap();
        let files = write_canonical(std::slice::from_ref(&original), dir.path()).unwrap();
        let ds = Dataset::read(&files).unwrap();
        prop_assert_eq!(&ds.stocks[&original.country], &original.stocks);
        prop_assert_eq!(&ds.inflow[&original.country].graduates, &original.inflow.graduates);
        prop_assert_eq!(&ds.inflow[&original.country].migrants, &original.inflow.migrants);
        let pops: BTreeMap<_, _> = ds.populations[&original.country].iter().map(|p| (p.scenario.clone(), p.values.clone())).collect();
        prop_assert_eq!(&pops["baseline"], &original.populations[0].values);
        let labels: Vec<String> = GROUPS.iter().map(|g| g.0.to_string()).collect();
        let text = fs::read_to_string(&files.stocks).unwrap();
        prop_assert!(labels.iter().all(|l| text.contains(l.as_str())));
    }
}
