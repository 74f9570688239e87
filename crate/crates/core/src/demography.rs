//! Age-year resolution of grouped stocks, net exit rates and entrant
//! distributions.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::RangeInclusive;

use thiserror::Error;

use crate::data_model::{AgeSpec, ExitRates, InflowSeries, Sex, SexShares, StockTable};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DemographyError {
    #[error("age groups overlap at ages {0}..{1}")]
    OverlappingGroups(u32, u32),
    #[error("negative count {0} in age group input")]
    NegativeInput(f64),
    #[error("no net rate observed for cohort {0:?} age {1}")]
    EmptyCohort(Sex, u32),
    #[error("net rate table is empty")]
    EmptyNetTable,
    #[error("no country with complete age and sex detail")]
    NoCompleteCountry,
    #[error("no physicians aged {lo}-{hi} in {year}")]
    EmptyEntryBand { year: i32, lo: u32, hi: u32 },
}

/// Per-age-year stocks `X(s, a, t)`, keyed by (sex, age, year).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AgeTable {
    pub values: BTreeMap<(Sex, u32, i32), f64>,
}

impl AgeTable {
    pub fn get(&self, sex: Sex, age: u32, year: i32) -> Option<f64> {
        self.values.get(&(sex, age, year)).copied()
    }

    pub fn years(&self) -> Vec<i32> {
        let mut years: Vec<i32> = self.values.keys().map(|k| k.2).collect();
        years.sort_unstable();
        years.dedup();
        years
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Element-wise sum over the union of keys.
    pub fn pooled<'a>(tables: impl IntoIterator<Item = &'a AgeTable>) -> AgeTable {
        let mut out = AgeTable::default();
        for t in tables {
            for (k, v) in &t.values {
                *out.values.entry(*k).or_insert(0.0) += v;
            }
        }
        out
    }

    pub fn scaled(&self, factor: f64) -> AgeTable {
        AgeTable { values: self.values.iter().map(|(k, v)| (*k, v * factor)).collect() }
    }

    /// Years where two consecutive observations exist, i.e. rates can be formed.
    pub fn supports_rates(&self) -> bool {
        self.years().windows(2).any(|w| w[1] == w[0] + 1)
    }
}

/// Net rates of change `alpha(s, a, t)`; only defined where `X(s, a, t) > 0`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NetRateTable {
    pub rates: BTreeMap<(Sex, u32, i32), f64>,
}

impl NetRateTable {
    pub fn get(&self, sex: Sex, age: u32, year: i32) -> Option<f64> {
        self.rates.get(&(sex, age, year)).copied()
    }
}

/// Sex/age composition of a stock, per year.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AgeSexShares {
    pub by_year: BTreeMap<i32, BTreeMap<(Sex, u32), f64>>,
}

impl AgeSexShares {
    pub fn from_table(table: &AgeTable) -> AgeSexShares {
        let mut by_year: BTreeMap<i32, BTreeMap<(Sex, u32), f64>> = BTreeMap::new();
        for (&(sex, age, year), &v) in &table.values {
            by_year.entry(year).or_default().insert((sex, age), v);
        }
        for shares in by_year.values_mut() {
            let total: f64 = shares.values().sum();
            if total > 0.0 {
                shares.values_mut().for_each(|v| *v /= total);
            }
        }
        by_year.retain(|_, s| s.values().sum::<f64>() > 0.0);
        AgeSexShares { by_year }
    }

    /// Shares for `year`, or for the nearest year available (earlier on ties).
    pub fn at(&self, year: i32) -> Option<&BTreeMap<(Sex, u32), f64>> {
        self.by_year
            .iter()
            .min_by_key(|(y, _)| ((**y - year).abs(), **y))
            .map(|(_, s)| s)
    }
}

/// Entrants' sex shares and the ages over which they are spread uniformly.
#[derive(Debug, Clone, PartialEq)]
pub struct EntrantDistribution {
    pub sex_share: SexShares,
    pub ages: RangeInclusive<u32>,
}

impl EntrantDistribution {
    pub fn new(sex_share: SexShares, ages: RangeInclusive<u32>) -> Self {
        EntrantDistribution { sex_share, ages }
    }

    /// Fraction of total inflow entering as (sex, age).
    pub fn weight(&self, sex: Sex, age: u32) -> f64 {
        if !self.ages.contains(&age) {
            return 0.0;
        }
        let n = (self.ages.end() - self.ages.start() + 1) as f64;
        self.sex_share.get(sex) / n
    }
}

/// Pooled reference quantities used for countries without age/sex detail.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceDemography {
    pub rates: ExitRates,
    pub shares: AgeSexShares,
    pub entrants: SexShares,
}

fn piecewise_linear(anchors: &[(f64, f64)], x: f64) -> f64 {
    let first = anchors[0];
    let last = anchors[anchors.len() - 1];
    if x <= first.0 {
        return first.1;
    }
    if x >= last.0 {
        return last.1;
    }
    let i = anchors.partition_point(|&(m, _)| m <= x);
    let (x0, y0) = anchors[i - 1];
    let (x1, y1) = anchors[i];
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

/// Spreads grouped counts over single age years.
///
/// Each group's density (count / width) sits at the group's midpoint age; values
/// are linear between adjacent midpoints and flat beyond the outermost ones,
/// then rescaled within each group so the group sum is conserved.
pub fn interpolate_age_groups(
    grouped: &[(AgeSpec, f64)],
) -> Result<BTreeMap<u32, f64>, DemographyError> {
    let mut groups: Vec<(std::ops::Range<u32>, f64)> =
        grouped.iter().map(|(a, c)| (a.span(), *c)).collect();
    if let Some(&(_, bad)) = groups.iter().find(|(_, c)| !(*c >= 0.0)) {
        return Err(DemographyError::NegativeInput(bad));
    }
    groups.sort_by_key(|(r, _)| r.start);
    for w in groups.windows(2) {
        if w[1].0.start < w[0].0.end {
            return Err(DemographyError::OverlappingGroups(w[1].0.start, w[0].0.end));
        }
    }
    let mut out = BTreeMap::new();
    if groups.is_empty() {
        return Ok(out);
    }
    let anchors: Vec<(f64, f64)> = groups
        .iter()
        .map(|(r, c)| {
            let width = r.len() as f64;
            let mid = (r.start + r.end - 1) as f64 / 2.0;
            (mid, c / width)
        })
        .collect();
    for (range, count) in &groups {
        if *count == 0.0 {
            out.extend(range.clone().map(|a| (a, 0.0)));
            continue;
        }
        let raw: Vec<f64> = range.clone().map(|a| piecewise_linear(&anchors, a as f64)).collect();
        let raw_sum: f64 = raw.iter().sum();
        if raw_sum > 0.0 {
            let factor = count / raw_sum;
            out.extend(range.clone().zip(raw).map(|(a, v)| (a, v * factor)));
        } else {
            let flat = count / range.len() as f64;
            out.extend(range.clone().map(|a| (a, flat)));
        }
    }
    Ok(out)
}

/// Per-age-year all-field aggregate, for the years in which every field has
/// cohort detail.
pub fn aggregate_age_table(stocks: &StockTable) -> Result<AgeTable, DemographyError> {
    let fields = stocks.fields();
    let mut table = AgeTable::default();
    for year in stocks.years() {
        if !fields.iter().all(|f| stocks.has_detail(*f, year)) {
            continue;
        }
        for &field in &fields {
            for sex in Sex::ALL {
                let groups = stocks.age_groups(field, sex, year);
                for (age, v) in interpolate_age_groups(&groups)? {
                    *table.values.entry((sex, age, year)).or_insert(0.0) += v;
                }
            }
        }
    }
    Ok(table)
}

/// `alpha(s,a,t) = (X(s,a+1,t+1) - X(s,a,t)) / X(s,a,t)` wherever both cells
/// exist and `X(s,a,t) > 0`.
pub fn net_change_rates(table: &AgeTable) -> NetRateTable {
    let mut rates = BTreeMap::new();
    for (&(sex, age, year), &x) in &table.values {
        if x <= 0.0 {
            continue;
        }
        if let Some(next) = table.get(sex, age + 1, year + 1) {
            rates.insert((sex, age, year), (next - x) / x);
        }
    }
    NetRateTable { rates }
}

fn exit_contribution(alpha: f64) -> f64 {
    (-alpha).clamp(0.0, 1.0)
}

/// Exit rate of a single cohort: the year-average of `max(0, -alpha)`.
pub fn cohort_exit_rate(net: &NetRateTable, sex: Sex, age: u32) -> Result<f64, DemographyError> {
    let (sum, n) = net
        .rates
        .range((sex, age, i32::MIN)..=(sex, age, i32::MAX))
        .fold((0.0, 0usize), |(s, n), (_, &a)| (s + exit_contribution(a), n + 1));
    if n == 0 {
        return Err(DemographyError::EmptyCohort(sex, age));
    }
    Ok(sum / n as f64)
}

/// Year-averaged exit rates for every cohort present in `net`.
pub fn exit_rates(net: &NetRateTable) -> Result<ExitRates, DemographyError> {
    if net.rates.is_empty() {
        return Err(DemographyError::EmptyNetTable);
    }
    let mut acc: BTreeMap<(Sex, u32), (f64, usize)> = BTreeMap::new();
    for (&(sex, age, _), &alpha) in &net.rates {
        let e = acc.entry((sex, age)).or_insert((0.0, 0));
        e.0 += exit_contribution(alpha);
        e.1 += 1;
    }
    let rates = acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect();
    Ok(ExitRates { rates })
}

fn band_shares(
    table: &AgeTable,
    year: i32,
    ages: &RangeInclusive<u32>,
) -> Result<SexShares, DemographyError> {
    let band = |sex: Sex| -> f64 { ages.clone().filter_map(|a| table.get(sex, a, year)).sum() };
    let (male, female) = (band(Sex::Male), band(Sex::Female));
    let total = male + female;
    if !(total > 0.0) {
        return Err(DemographyError::EmptyEntryBand { year, lo: *ages.start(), hi: *ages.end() });
    }
    Ok(SexShares { male: male / total, female: female / total })
}

/// Entrant sex shares taken from the all-field stock within the entry ages
/// at `ref_year`; entrants are spread uniformly over those ages.
pub fn entrant_distribution(
    stocks: &StockTable,
    ref_year: i32,
) -> Result<EntrantDistribution, DemographyError> {
    let ages = InflowSeries::DEFAULT_ENTRY_AGES;
    let table = aggregate_age_table(stocks)?;
    let shares = band_shares(&table, ref_year, &ages)?;
    Ok(EntrantDistribution::new(shares, ages))
}

/// Reference rates and compositions computed on the pooled stock of every
/// country with complete age/sex detail.
pub fn reference_rates(stocks: &[&StockTable]) -> Result<ReferenceDemography, DemographyError> {
    let mut complete = Vec::new();
    for s in stocks {
        let table = aggregate_age_table(s)?;
        if table.supports_rates() {
            complete.push(table);
        }
    }
    // Pool only years every country covers, otherwise coverage edges show up as exits.
    let common: BTreeSet<i32> = complete
        .iter()
        .map(|t| t.years().into_iter().collect::<BTreeSet<_>>())
        .reduce(|a, b| a.intersection(&b).copied().collect())
        .ok_or(DemographyError::NoCompleteCountry)?;
    let trimmed: Vec<AgeTable> = complete
        .iter()
        .map(|t| AgeTable {
            values: t.values.iter().filter(|(k, _)| common.contains(&k.2)).map(|(k, v)| (*k, *v)).collect(),
        })
        .collect();
    let pooled = AgeTable::pooled(&trimmed);
    if !pooled.supports_rates() {
        return Err(DemographyError::NoCompleteCountry);
    }
    reference_from_table(&pooled)
}

pub fn reference_from_table(pooled: &AgeTable) -> Result<ReferenceDemography, DemographyError> {
    let rates = exit_rates(&net_change_rates(pooled))?;
    let shares = AgeSexShares::from_table(pooled);
    let last = *pooled.years().last().ok_or(DemographyError::NoCompleteCountry)?;
    let entrants = band_shares(pooled, last, &InflowSeries::DEFAULT_ENTRY_AGES)?;
    Ok(ReferenceDemography { rates, shares, entrants })
}
