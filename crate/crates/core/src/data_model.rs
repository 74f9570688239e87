//! Domain types shared by every stage of the model, plus dataset validation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::{Range, RangeInclusive};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative tolerance used for every "sums to one" / "matches the total" check.
pub const SUM_TOLERANCE: f64 = 1e-9;

/// Width assumed for the open-ended age groups `<25` and `75+`.
pub const OPEN_GROUP_WIDTH: u32 = 5;

/// Scenario label every population projection set must contain.
pub const BASELINE: &str = "baseline";

/// Flag marking a break in series for a year.
pub const BREAK_FLAG: &str = "b";

#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Country(pub String);

impl Country {
    pub fn new(code: impl Into<String>) -> Self {
        Country(code.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Country {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Profession {
    Gp,
    Specialist,
}

impl Profession {
    pub const ALL: [Profession; 2] = [Profession::Gp, Profession::Specialist];

    pub fn code(self) -> &'static str {
        match self {
            Profession::Gp => "GP",
            Profession::Specialist => "SP",
        }
    }
}

impl FromStr for Profession {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "GP" => Ok(Profession::Gp),
            "SP" => Ok(Profession::Specialist),
            other => Err(format!("unknown profession `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Sector {
    Contracted,
    Employed,
    NonContracted,
}

impl Sector {
    pub const ALL: [Sector; 3] = [Sector::Contracted, Sector::Employed, Sector::NonContracted];

    pub fn code(self) -> &'static str {
        match self {
            Sector::Contracted => "CON",
            Sector::Employed => "EMP",
            Sector::NonContracted => "NON",
        }
    }
}

impl FromStr for Sector {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "CON" => Ok(Sector::Contracted),
            "EMP" => Ok(Sector::Employed),
            "NON" => Ok(Sector::NonContracted),
            other => Err(format!("unknown sector `{other}`")),
        }
    }
}

/// A model compartment: a profession, optionally refined by sector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FieldId {
    pub profession: Profession,
    pub sector: Option<Sector>,
}

impl FieldId {
    pub const GP: FieldId = FieldId { profession: Profession::Gp, sector: None };
    pub const SP: FieldId = FieldId { profession: Profession::Specialist, sector: None };

    pub fn new(profession: Profession, sector: Option<Sector>) -> Self {
        FieldId { profession, sector }
    }

    /// The two fields of the minimal model.
    pub fn minimal() -> Vec<FieldId> {
        vec![FieldId::GP, FieldId::SP]
    }

    /// The six sector x profession fields of the extended model.
    pub fn extended() -> Vec<FieldId> {
        let mut out = Vec::with_capacity(6);
        for sector in Sector::ALL {
            for profession in Profession::ALL {
                out.push(FieldId::new(profession, Some(sector)));
            }
        }
        out.sort();
        out
    }
}

impl fmt::Display for FieldId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.sector {
            Some(sector) => write!(f, "{}/{}", self.profession.code(), sector.code()),
            None => f.write_str(self.profession.code()),
        }
    }
}

impl FromStr for FieldId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once('/') {
            Some((prof, sector)) => Ok(FieldId::new(prof.parse()?, Some(sector.parse()?))),
            None => Ok(FieldId::new(s.parse()?, None)),
        }
    }
}

impl Serialize for FieldId {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for FieldId {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Sex {
    Male,
    Female,
}

impl Sex {
    pub const ALL: [Sex; 2] = [Sex::Male, Sex::Female];

    pub fn code(self) -> &'static str {
        match self {
            Sex::Male => "M",
            Sex::Female => "F",
        }
    }

    pub fn index(self) -> usize {
        match self {
            Sex::Male => 0,
            Sex::Female => 1,
        }
    }
}

impl FromStr for Sex {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "M" => Ok(Sex::Male),
            "F" => Ok(Sex::Female),
            other => Err(format!("unknown sex `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum GroupBound {
    Closed,
    /// `<N`
    OpenBelow,
    /// `N+`
    OpenAbove,
}

/// A half-open age range `[start, end)` in years.
///
/// Open-ended groups keep their bound so they print back as `<25` / `75+`,
/// but their span is bounded by [`OPEN_GROUP_WIDTH`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AgeGroup {
    pub start: u32,
    pub end: u32,
    pub bound: GroupBound,
}

impl AgeGroup {
    pub fn closed(start: u32, end: u32) -> Self {
        AgeGroup { start, end, bound: GroupBound::Closed }
    }

    pub fn span(&self) -> Range<u32> {
        self.start..self.end
    }

    pub fn width(&self) -> u32 {
        self.end - self.start
    }

    pub fn overlaps(&self, other: &AgeGroup) -> bool {
        self.start < other.end && other.start < self.end
    }
}

impl fmt::Display for AgeGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.bound {
            GroupBound::OpenBelow => write!(f, "<{}", self.end),
            GroupBound::OpenAbove => write!(f, "{}+", self.start),
            GroupBound::Closed => write!(f, "{}-{}", self.start, self.end - 1),
        }
    }
}

/// Age of a stock record: either a single age year or an age group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AgeSpec {
    Year(u32),
    Group(AgeGroup),
}

impl AgeSpec {
    pub fn span(&self) -> Range<u32> {
        match self {
            AgeSpec::Year(a) => *a..a + 1,
            AgeSpec::Group(g) => g.span(),
        }
    }
}

impl fmt::Display for AgeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AgeSpec::Year(a) => write!(f, "{a}"),
            AgeSpec::Group(g) => g.fmt(f),
        }
    }
}

impl FromStr for AgeSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let num = |t: &str| t.trim().parse::<u32>().map_err(|_| format!("bad age `{s}`"));
        if let Some(rest) = s.strip_prefix('<') {
            let end = num(rest)?;
            if end < OPEN_GROUP_WIDTH {
                return Err(format!("open group `{s}` has no room below"));
            }
            return Ok(AgeSpec::Group(AgeGroup {
                start: end - OPEN_GROUP_WIDTH,
                end,
                bound: GroupBound::OpenBelow,
            }));
        }
        if let Some(rest) = s.strip_suffix('+') {
            let start = num(rest)?;
            return Ok(AgeSpec::Group(AgeGroup {
                start,
                end: start + OPEN_GROUP_WIDTH,
                bound: GroupBound::OpenAbove,
            }));
        }
        if let Some((lo, hi)) = s.split_once('-') {
            let (lo, hi) = (num(lo)?, num(hi)?);
            if hi < lo {
                return Err(format!("inverted age group `{s}`"));
            }
            return Ok(AgeSpec::Group(AgeGroup::closed(lo, hi + 1)));
        }
        Ok(AgeSpec::Year(num(s)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CohortKey {
    pub sex: Sex,
    pub age: AgeSpec,
}

/// Key of one stock record. `cohort == None` is the field total row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StockKey {
    pub field: FieldId,
    pub year: i32,
    pub cohort: Option<CohortKey>,
}

/// Observed physician counts for one country.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StockTable {
    pub country: Country,
    pub entries: BTreeMap<StockKey, f64>,
    pub flags: BTreeMap<i32, BTreeSet<String>>,
}

impl StockTable {
    pub fn new(country: Country) -> Self {
        StockTable { country, ..Default::default() }
    }

    /// Inserts a record, returning the previous value if the key was taken.
    pub fn insert(&mut self, key: StockKey, count: f64) -> Option<f64> {
        self.entries.insert(key, count)
    }

    pub fn add_flag(&mut self, year: i32, flag: impl Into<String>) {
        self.flags.entry(year).or_default().insert(flag.into());
    }

    pub fn is_break(&self, year: i32) -> bool {
        self.flags.get(&year).is_some_and(|f| f.contains(BREAK_FLAG))
    }

    pub fn fields(&self) -> BTreeSet<FieldId> {
        self.entries.keys().map(|k| k.field).collect()
    }

    pub fn years(&self) -> BTreeSet<i32> {
        self.entries.keys().map(|k| k.year).collect()
    }

    pub fn first_year(&self) -> Option<i32> {
        self.entries.keys().map(|k| k.year).min()
    }

    pub fn last_year(&self) -> Option<i32> {
        self.entries.keys().map(|k| k.year).max()
    }

    pub fn is_extended(&self) -> bool {
        self.entries.keys().any(|k| k.field.sector.is_some())
    }

    pub fn cohorts(&self, field: FieldId, year: i32) -> impl Iterator<Item = (CohortKey, f64)> + '_ {
        self.entries
            .iter()
            .filter(move |(k, _)| k.field == field && k.year == year)
            .filter_map(|(k, &v)| k.cohort.map(|c| (c, v)))
    }

    pub fn has_detail(&self, field: FieldId, year: i32) -> bool {
        self.cohorts(field, year).next().is_some()
    }

    pub fn stored_total(&self, field: FieldId, year: i32) -> Option<f64> {
        self.entries.get(&StockKey { field, year, cohort: None }).copied()
    }

    /// Field total: the cohort sum when cohort rows exist, else the total row.
    pub fn field_total(&self, field: FieldId, year: i32) -> Option<f64> {
        let mut any = false;
        let mut sum = 0.0;
        for (_, v) in self.cohorts(field, year) {
            any = true;
            sum += v;
        }
        if any {
            Some(sum)
        } else {
            self.stored_total(field, year)
        }
    }

    /// Age-group counts for one (field, sex, year), ordered by age.
    pub fn age_groups(&self, field: FieldId, sex: Sex, year: i32) -> Vec<(AgeSpec, f64)> {
        self.cohorts(field, year)
            .filter(|(c, _)| c.sex == sex)
            .map(|(c, v)| (c.age, v))
            .collect()
    }

    /// All observed field totals keyed by field and year.
    pub fn observed_totals(&self) -> ObservedTotals {
        let mut out = ObservedTotals::default();
        for field in self.fields() {
            for year in self.years() {
                if let Some(v) = self.field_total(field, year) {
                    out.0.insert((field, year), v);
                }
            }
        }
        out
    }
}

/// Observed field totals `Z_i(t)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ObservedTotals(pub BTreeMap<(FieldId, i32), f64>);

impl ObservedTotals {
    pub fn get(&self, field: FieldId, year: i32) -> Option<f64> {
        self.0.get(&(field, year)).copied()
    }

    pub fn years(&self) -> BTreeSet<i32> {
        self.0.keys().map(|(_, y)| *y).collect()
    }

    pub fn fields(&self) -> BTreeSet<FieldId> {
        self.0.keys().map(|(f, _)| *f).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SexShares {
    pub male: f64,
    pub female: f64,
}

impl SexShares {
    pub const EVEN: SexShares = SexShares { male: 0.5, female: 0.5 };

    pub fn get(&self, sex: Sex) -> f64 {
        match sex {
            Sex::Male => self.male,
            Sex::Female => self.female,
        }
    }

    pub fn sum(&self) -> f64 {
        self.male + self.female
    }
}

/// Graduate and migrant inflow history for one country.
#[derive(Debug, Clone, PartialEq)]
pub struct InflowSeries {
    pub country: Country,
    pub graduates: BTreeMap<i32, f64>,
    pub migrants: BTreeMap<i32, f64>,
    /// Sex distribution of entrants, when it could be observed.
    pub entrant_sex_share: Option<SexShares>,
    pub entry_ages: RangeInclusive<u32>,
}

impl InflowSeries {
    pub const DEFAULT_ENTRY_AGES: RangeInclusive<u32> = 25..=34;

    pub fn new(country: Country) -> Self {
        InflowSeries {
            country,
            graduates: BTreeMap::new(),
            migrants: BTreeMap::new(),
            entrant_sex_share: None,
            entry_ages: Self::DEFAULT_ENTRY_AGES,
        }
    }

    pub fn years(&self) -> BTreeSet<i32> {
        self.graduates.keys().chain(self.migrants.keys()).copied().collect()
    }

    /// Total inflow `Y(t)`: graduates plus migrants, missing migrants count as zero.
    pub fn total(&self, year: i32) -> Option<f64> {
        let grads = self.graduates.get(&year).copied();
        let migr = self.migrants.get(&year).copied();
        match (grads, migr) {
            (None, None) => None,
            (g, m) => Some(g.unwrap_or(0.0) + m.unwrap_or(0.0)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PopulationProjection {
    pub country: Country,
    pub scenario: String,
    pub values: BTreeMap<i32, f64>,
}

impl PopulationProjection {
    pub fn is_baseline(&self) -> bool {
        self.scenario == BASELINE
    }
}

/// Sector shares per profession at two anchor years.
#[derive(Debug, Clone, PartialEq)]
pub struct SectorAnchors {
    pub country: Country,
    pub years: [i32; 2],
    /// Shares at `years[0]` and `years[1]`.
    pub shares: BTreeMap<(Profession, Sector), [f64; 2]>,
}

impl SectorAnchors {
    pub fn share(&self, profession: Profession, sector: Sector, anchor: usize) -> f64 {
        self.shares.get(&(profession, sector)).map_or(0.0, |s| s[anchor])
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParamsError {
    #[error("p_enter {0} outside [0, 1]")]
    EnterOutOfRange(f64),
    #[error("field choice probability for {field} is {value}, outside [0, 1]")]
    ChoiceOutOfRange { field: FieldId, value: f64 },
    #[error("field choice probabilities sum to {sum}, expected 1")]
    ShareSumViolation { sum: f64 },
    #[error("no field choice probabilities given")]
    Empty,
}

/// Entry probability and field-choice distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub p_enter: f64,
    pub field_choice: BTreeMap<FieldId, f64>,
}

impl Params {
    pub fn new(p_enter: f64, field_choice: BTreeMap<FieldId, f64>) -> Result<Self, ParamsError> {
        let params = Params { p_enter, field_choice };
        params.validate()?;
        Ok(params)
    }

    /// `{GP: p_gp, SP: 1 - p_gp}`.
    pub fn minimal(p_enter: f64, p_gp: f64) -> Result<Self, ParamsError> {
        let choice = BTreeMap::from([(FieldId::GP, p_gp), (FieldId::SP, 1.0 - p_gp)]);
        Params::new(p_enter, choice)
    }

    /// Rows are sectors in [`Sector::ALL`] order, columns are (GP, SP).
    pub fn extended(p_enter: f64, matrix: [[f64; 2]; 3]) -> Result<Self, ParamsError> {
        let mut choice = BTreeMap::new();
        for (row, sector) in matrix.iter().zip(Sector::ALL) {
            for (&p, profession) in row.iter().zip(Profession::ALL) {
                choice.insert(FieldId::new(profession, Some(sector)), p);
            }
        }
        Params::new(p_enter, choice)
    }

    pub fn validate(&self) -> Result<(), ParamsError> {
        if !(0.0..=1.0).contains(&self.p_enter) {
            return Err(ParamsError::EnterOutOfRange(self.p_enter));
        }
        if self.field_choice.is_empty() {
            return Err(ParamsError::Empty);
        }
        for (&field, &value) in &self.field_choice {
            if !(0.0..=1.0).contains(&value) {
                return Err(ParamsError::ChoiceOutOfRange { field, value });
            }
        }
        let sum: f64 = self.field_choice.values().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(ParamsError::ShareSumViolation { sum });
        }
        Ok(())
    }

    pub fn choice(&self, field: FieldId) -> f64 {
        self.field_choice.get(&field).copied().unwrap_or(0.0)
    }

    /// Probability of choosing a GP field, summed over sectors.
    pub fn gp_share(&self) -> f64 {
        self.field_choice
            .iter()
            .filter(|(f, _)| f.profession == Profession::Gp)
            .map(|(_, p)| p)
            .sum()
    }
}

/// Net exit rates per (sex, age); identical for every field.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExitRates {
    pub rates: BTreeMap<(Sex, u32), f64>,
}

impl ExitRates {
    pub fn get(&self, sex: Sex, age: u32) -> Option<f64> {
        self.rates.get(&(sex, age)).copied()
    }

    pub fn is_empty(&self) -> bool {
        self.rates.is_empty()
    }

    /// Fills cohorts absent here with the values from `reference`.
    pub fn filled_from(&self, reference: &ExitRates) -> ExitRates {
        let mut rates = reference.rates.clone();
        rates.extend(self.rates.iter().map(|(k, v)| (*k, *v)));
        ExitRates { rates }
    }
}

/// Everything the model needs for one country.
#[derive(Debug, Clone, PartialEq)]
pub struct CountryBundle {
    pub country: Country,
    pub stocks: StockTable,
    pub inflow: InflowSeries,
    pub populations: Vec<PopulationProjection>,
    pub sector_split: Option<SectorAnchors>,
}

impl CountryBundle {
    pub fn baseline(&self) -> Option<&PopulationProjection> {
        self.populations.iter().find(|p| p.is_baseline())
    }

    pub fn scenario(&self, label: &str) -> Option<&PopulationProjection> {
        self.populations.iter().find(|p| p.scenario == label)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Violation {
    #[error("{component} refers to country {found}, expected {expected}")]
    CountryMismatch { component: String, expected: Country, found: Country },
    #[error("no `baseline` population scenario")]
    MissingBaselineScenario,
    #[error("negative count at {0}")]
    NegativeCount(String),
    #[error("{what} shares sum to {sum}, expected 1")]
    ShareSumViolation { what: String, sum: f64 },
    #[error("years of {0} are not contiguous")]
    NonContiguousYears(String),
    #[error("{field} {year}: stored total {total} but cohorts sum to {cohort_sum}")]
    TotalMismatch { field: FieldId, year: i32, total: f64, cohort_sum: f64 },
    #[error("dataset mixes fields with and without sector")]
    MixedFieldKinds,
    #[error("overlapping age groups for {field} {sex:?} {year}")]
    OverlappingGroups { field: FieldId, sex: Sex, year: i32 },
    #[error("population of scenario `{scenario}` in {year} is not positive")]
    NonPositivePopulation { scenario: String, year: i32 },
    #[error("stock table is empty")]
    EmptyStocks,
}

fn contiguous(years: impl IntoIterator<Item = i32>) -> bool {
    let years: Vec<i32> = years.into_iter().collect();
    years.windows(2).all(|w| w[1] == w[0] + 1)
}

fn check_shares(what: &str, sum: f64, out: &mut Vec<Violation>) {
    if (sum - 1.0).abs() > SUM_TOLERANCE {
        out.push(Violation::ShareSumViolation { what: what.to_string(), sum });
    }
}

/// Lists every invariant violation in the bundle; empty when it is well-formed.
pub fn violations(bundle: &CountryBundle) -> Vec<Violation> {
    let mut out = Vec::new();
    let country = &bundle.country;
    let mut check_country = |component: &str, found: &Country| {
        if found != country {
            out.push(Violation::CountryMismatch {
                component: component.to_string(),
                expected: country.clone(),
                found: found.clone(),
            });
        }
    };
    check_country("stocks", &bundle.stocks.country);
    check_country("inflow", &bundle.inflow.country);
    for p in &bundle.populations {
        check_country(&format!("population `{}`", p.scenario), &p.country);
    }
    if let Some(split) = &bundle.sector_split {
        check_country("sector split", &split.country);
    }

    let stocks = &bundle.stocks;
    if stocks.entries.is_empty() {
        out.push(Violation::EmptyStocks);
    }
    for (key, &v) in &stocks.entries {
        if !(v >= 0.0) {
            let cohort = key
                .cohort
                .map(|c| format!(" {} {}", c.sex.code(), c.age))
                .unwrap_or_default();
            out.push(Violation::NegativeCount(format!(
                "stocks {} {}{}",
                key.field, key.year, cohort
            )));
        }
    }
    if !contiguous(stocks.years()) {
        out.push(Violation::NonContiguousYears("stocks".into()));
    }
    let fields = stocks.fields();
    let with_sector = fields.iter().filter(|f| f.sector.is_some()).count();
    if with_sector != 0 && with_sector != fields.len() {
        out.push(Violation::MixedFieldKinds);
    }
    for &field in &fields {
        for year in stocks.years() {
            if let Some(total) = stocks.stored_total(field, year) {
                if stocks.has_detail(field, year) {
                    let cohort_sum: f64 = stocks.cohorts(field, year).map(|(_, v)| v).sum();
                    let scale = total.abs().max(cohort_sum.abs()).max(1.0);
                    if (total - cohort_sum).abs() > SUM_TOLERANCE * scale {
                        out.push(Violation::TotalMismatch { field, year, total, cohort_sum });
                    }
                }
            }
            for sex in Sex::ALL {
                let mut spans: Vec<Range<u32>> =
                    stocks.age_groups(field, sex, year).iter().map(|(a, _)| a.span()).collect();
                spans.sort_by_key(|r| r.start);
                if spans.windows(2).any(|w| w[1].start < w[0].end) {
                    out.push(Violation::OverlappingGroups { field, sex, year });
                }
            }
        }
    }

    let inflow = &bundle.inflow;
    for (label, series) in [("graduates", &inflow.graduates), ("migrants", &inflow.migrants)] {
        for (&year, &v) in series {
            if !(v >= 0.0) {
                out.push(Violation::NegativeCount(format!("inflow {label} {year}")));
            }
        }
        if !contiguous(series.keys().copied()) {
            out.push(Violation::NonContiguousYears(format!("inflow {label}")));
        }
    }
    if let Some(shares) = inflow.entrant_sex_share {
        if shares.male < 0.0 || shares.female < 0.0 {
            out.push(Violation::NegativeCount("entrant sex share".into()));
        }
        check_shares("entrant sex", shares.sum(), &mut out);
    }

    if bundle.baseline().is_none() {
        out.push(Violation::MissingBaselineScenario);
    }
    for p in &bundle.populations {
        for (&year, &v) in &p.values {
            if !(v > 0.0) {
                out.push(Violation::NonPositivePopulation { scenario: p.scenario.clone(), year });
            }
        }
        if !contiguous(p.values.keys().copied()) {
            out.push(Violation::NonContiguousYears(format!("population `{}`", p.scenario)));
        }
    }

    if let Some(split) = &bundle.sector_split {
        for (anchor, year) in split.years.iter().enumerate() {
            for profession in Profession::ALL {
                let mut sum = 0.0;
                for sector in Sector::ALL {
                    let s = split.share(profession, sector, anchor);
                    if s < 0.0 {
                        out.push(Violation::NegativeCount(format!(
                            "sector split {} {} {year}",
                            profession.code(),
                            sector.code()
                        )));
                    }
                    sum += s;
                }
                check_shares(&format!("sector split {} {year}", profession.code()), sum, &mut out);
            }
        }
    }
    out
}

/// Returns the bundle unchanged when it satisfies every invariant, otherwise
/// the complete list of violations.
pub fn validate_dataset(bundle: CountryBundle) -> Result<CountryBundle, Vec<Violation>> {
    let found = violations(&bundle);
    if found.is_empty() {
        Ok(bundle)
    } else {
        Err(found)
    }
}
