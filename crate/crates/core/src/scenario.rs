//! Sector-resolved model construction and inflow interventions.

use std::collections::BTreeMap;
use std::ops::RangeInclusive;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data_model::{FieldId, Profession, Sector, SectorAnchors, StockKey, StockTable};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("sector anchors are both in {0}")]
    DegenerateAnchors(i32),
    #[error("no sector shares for {0}")]
    MissingShare(i32),
    #[error("stock table is already split into sectors")]
    AlreadySplit,
    #[error("intervention `{0}` must give exactly one of `inflow_additions` or `ramp`")]
    AmbiguousIntervention(String),
    #[error("ramp of `{0}` ends before it starts")]
    InvertedRamp(String),
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parsing {path}: {source}")]
    Json { path: String, source: serde_json::Error },
}

/// Yearly sector shares per profession.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ShareTrend {
    pub shares: BTreeMap<(i32, Profession, Sector), f64>,
}

impl ShareTrend {
    pub fn get(&self, year: i32, profession: Profession, sector: Sector) -> Option<f64> {
        self.shares.get(&(year, profession, sector)).copied()
    }
}

/// Line through the two anchor shares of each (sector, profession),
/// evaluated over `window`, clipped to `[0, 1]` and renormalized per
/// profession and year.
pub fn sector_share_trend(
    anchors: &SectorAnchors,
    window: RangeInclusive<i32>,
) -> Result<ShareTrend, ScenarioError> {
    let [y0, y1] = anchors.years;
    if y0 == y1 {
        return Err(ScenarioError::DegenerateAnchors(y0));
    }
    let mut shares = BTreeMap::new();
    for year in window {
        let frac = f64::from(year - y0) / f64::from(y1 - y0);
        for profession in Profession::ALL {
            let raw: Vec<f64> = Sector::ALL
                .iter()
                .map(|&sector| {
                    let s0 = anchors.share(profession, sector, 0);
                    let s1 = anchors.share(profession, sector, 1);
                    (s0 + (s1 - s0) * frac).clamp(0.0, 1.0)
                })
                .collect();
            let total: f64 = raw.iter().sum();
            for (sector, r) in Sector::ALL.into_iter().zip(raw) {
                shares.insert((year, profession, sector), r / total);
            }
        }
    }
    Ok(ShareTrend { shares })
}

/// Splits each profession's stocks into its three sectors by the yearly shares.
pub fn split_fields(stocks: &StockTable, trend: &ShareTrend) -> Result<StockTable, ScenarioError> {
    if stocks.is_extended() {
        return Err(ScenarioError::AlreadySplit);
    }
    let mut out = StockTable::new(stocks.country.clone());
    out.flags = stocks.flags.clone();
    for (key, &count) in &stocks.entries {
        let profession = key.field.profession;
        for sector in Sector::ALL {
            let share = trend
                .get(key.year, profession, sector)
                .ok_or(ScenarioError::MissingShare(key.year))?;
            let field = FieldId::new(profession, Some(sector));
            out.insert(StockKey { field, ..*key }, share * count);
        }
    }
    Ok(out)
}

/// Linear ramp from zero at `start_year` to `peak` at `end_year`, flat after.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ramp {
    pub start_year: i32,
    pub end_year: i32,
    pub peak: f64,
}

impl Ramp {
    pub fn value(&self, year: i32) -> f64 {
        if year <= self.start_year {
            0.0
        } else if year >= self.end_year {
            self.peak
        } else {
            self.peak * f64::from(year - self.start_year) / f64::from(self.end_year - self.start_year)
        }
    }
}

/// Graduates added by the new medical faculty: zero in 2019 rising to 300 in 2029.
pub const NEW_FACULTY: Ramp = Ramp { start_year: 2019, end_year: 2029, peak: 300.0 };

pub fn new_faculty_inflow(year: i32) -> f64 {
    NEW_FACULTY.value(year)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InflowAddition {
    pub year: i32,
    pub amount: f64,
}

/// A forward-looking change to the inflow, read from a JSON scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Intervention {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inflow_additions: Option<Vec<InflowAddition>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ramp: Option<Ramp>,
}

impl Intervention {
    pub fn new_faculty() -> Self {
        Intervention { name: "new_faculty".into(), inflow_additions: None, ramp: Some(NEW_FACULTY) }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        match (&self.inflow_additions, &self.ramp) {
            (Some(_), None) => Ok(()),
            (None, Some(r)) if r.end_year > r.start_year => Ok(()),
            (None, Some(_)) => Err(ScenarioError::InvertedRamp(self.name.clone())),
            _ => Err(ScenarioError::AmbiguousIntervention(self.name.clone())),
        }
    }

    pub fn from_json(text: &str, path: &str) -> Result<Self, ScenarioError> {
        let iv: Intervention = serde_json::from_str(text)
            .map_err(|source| ScenarioError::Json { path: path.to_string(), source })?;
        iv.validate()?;
        Ok(iv)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let p = path.display().to_string();
        let text = std::fs::read_to_string(path)
            .map_err(|source| ScenarioError::Io { path: p.clone(), source })?;
        Intervention::from_json(&text, &p)
    }

    pub fn amount(&self, year: i32) -> f64 {
        if let Some(r) = &self.ramp {
            return r.value(year);
        }
        self.inflow_additions
            .iter()
            .flatten()
            .filter(|a| a.year == year)
            .map(|a| a.amount)
            .sum()
    }
}

/// Summed additions of all interventions over `years`, zeros omitted.
pub fn combined_additions(
    interventions: &[Intervention],
    years: RangeInclusive<i32>,
) -> BTreeMap<i32, f64> {
    years
        .filter_map(|y| {
            let total: f64 = interventions.iter().map(|iv| iv.amount(y)).sum();
            (total != 0.0).then_some((y, total))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_model::{CohortKey, Country, Sex};

    fn anchors(gp: [[f64; 3]; 2], sp: [[f64; 3]; 2], years: [i32; 2]) -> SectorAnchors {
        let mut shares = BTreeMap::new();
        for (i, sector) in Sector::ALL.into_iter().enumerate() {
            shares.insert((Profession::Gp, sector), [gp[0][i], gp[1][i]]);
            shares.insert((Profession::Specialist, sector), [sp[0][i], sp[1][i]]);
        }
        SectorAnchors { country: Country::new("AT"), years, shares }
    }

    #[test]
    fn flat_anchors_give_constant_shares() {
        let a = anchors([[0.5, 0.3, 0.2]; 2], [[0.2, 0.7, 0.1]; 2], [2012, 2016]);
        let t = sector_share_trend(&a, 2000..=2040).unwrap();
        for y in 2000..=2040 {
            assert!((t.get(y, Profession::Gp, Sector::Employed).unwrap() - 0.3).abs() < 1e-15);
        }
    }

    /// Oracle: two-point line arithmetic by hand.
    #[test]
    fn trend_extrapolates_linearly() {
        let a = anchors(
            [[0.6, 0.3, 0.1], [0.5, 0.35, 0.15]],
            [[0.3, 0.6, 0.1], [0.3, 0.6, 0.1]],
            [2012, 2016],
        );
        let t = sector_share_trend(&a, 2012..=2020).unwrap();
        let got: Vec<f64> =
            Sector::ALL.iter().map(|s| t.get(2020, Profession::Gp, *s).unwrap()).collect();
        for (g, want) in got.iter().zip([0.4, 0.4, 0.2]) {
            assert!((g - want).abs() < 1e-12, "{got:?}");
        }
        assert!((t.get(2012, Profession::Gp, Sector::Contracted).unwrap() - 0.6).abs() < 1e-15);
        assert!((t.get(2016, Profession::Gp, Sector::NonContracted).unwrap() - 0.15).abs() < 1e-15);
    }

    #[test]
    fn negative_extrapolation_is_clipped() {
        let a = anchors(
            [[0.6, 0.3, 0.1], [0.6, 0.35, 0.05]],
            [[0.3, 0.6, 0.1], [0.3, 0.6, 0.1]],
            [2012, 2016],
        );
        let t = sector_share_trend(&a, 2030..=2030).unwrap();
        // raw: 0.6, 0.525, -0.125 -> clip 0 -> renormalize by 1.125
        assert_eq!(t.get(2030, Profession::Gp, Sector::NonContracted), Some(0.0));
        let con = t.get(2030, Profession::Gp, Sector::Contracted).unwrap();
        assert!((con - 0.6 / 1.125).abs() < 1e-12);
        assert!(matches!(
            sector_share_trend(&anchors([[0.0; 3]; 2], [[0.0; 3]; 2], [2016, 2016]), 2016..=2016),
            Err(ScenarioError::DegenerateAnchors(2016))
        ));
    }

    #[test]
    fn split_is_proportional() {
        let mut stocks = StockTable::new(Country::new("AT"));
        let age = "35-44".parse().unwrap();
        stocks.insert(
            StockKey {
                field: FieldId::GP,
                year: 2016,
                cohort: Some(CohortKey { sex: Sex::Female, age }),
            },
            100.0,
        );
        let a = anchors([[0.6, 0.3, 0.1]; 2], [[1.0, 0.0, 0.0]; 2], [2012, 2016]);
        let t = sector_share_trend(&a, 2016..=2016).unwrap();
        let split = split_fields(&stocks, &t).unwrap();
        let got: Vec<f64> = Sector::ALL
            .iter()
            .map(|s| split.field_total(FieldId::new(Profession::Gp, Some(*s)), 2016).unwrap())
            .collect();
        assert!((got[0] - 60.0).abs() < 1e-12);
        assert!((got[1] - 30.0).abs() < 1e-12);
        assert!((got[2] - 10.0).abs() < 1e-12);
        assert!(matches!(split_fields(&split, &t), Err(ScenarioError::AlreadySplit)));

        let empty = ShareTrend::default();
        assert!(matches!(split_fields(&stocks, &empty), Err(ScenarioError::MissingShare(2016))));
    }

    #[test]
    fn new_faculty_ramp() {
        assert_eq!(new_faculty_inflow(2015), 0.0);
        assert_eq!(new_faculty_inflow(2019), 0.0);
        assert_eq!(new_faculty_inflow(2020), 30.0);
        assert_eq!(new_faculty_inflow(2024), 150.0);
        assert_eq!(new_faculty_inflow(2029), 300.0);
        assert_eq!(new_faculty_inflow(2040), 300.0);
    }

    #[test]
    fn intervention_files() {
        let ramp = Intervention::from_json(
            r#"{"name": "faculty", "ramp": {"start_year": 2019, "end_year": 2029, "peak": 300}}"#,
            "x.json",
        )
        .unwrap();
        assert_eq!(ramp.amount(2024), 150.0);
        let adds = Intervention::from_json(
            r#"{"name": "bump", "inflow_additions": [{"year": 2024, "amount": 150}]}"#,
            "x.json",
        )
        .unwrap();
        assert_eq!(adds.amount(2024), 150.0);
        assert_eq!(adds.amount(2025), 0.0);
        let both = combined_additions(&[ramp, adds], 2023..=2025);
        assert_eq!(both, BTreeMap::from([(2023, 120.0), (2024, 300.0), (2025, 180.0)]));
        assert!(matches!(
            Intervention::from_json(r#"{"name": "empty"}"#, "x.json"),
            Err(ScenarioError::AmbiguousIntervention(_))
        ));
    }
}
