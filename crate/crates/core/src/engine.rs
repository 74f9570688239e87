//! Yearly age / exit / enter protocol and trajectory runner.
//!
//! One step applies
//!
//! ```text
//! N_i(s, a+1, t+1) = (1 - gamma(s, a)) N_i(s, a, t) + p_enter p_i Y(s, a+1, t+1)
//! ```
//!
//! to every field. The youngest age only receives entrants, and the oldest
//! age of the layout leaves the system entirely in the following year.

use std::collections::BTreeMap;
use std::ops::RangeInclusive;
use std::sync::Arc;

use log::warn;
use serde::Serialize;
use thiserror::Error;

use crate::data_model::{ExitRates, FieldId, InflowSeries, Params, Sex, StockTable};
use crate::demography::{interpolate_age_groups, DemographyError, EntrantDistribution};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("no data for field {field} in {year}")]
    MissingField { field: FieldId, year: i32 },
    #[error("field {field} has only a total in {year} and no age/sex distribution is available")]
    NoDistribution { field: FieldId, year: i32 },
    #[error("horizon {t_end} precedes start year {t0}")]
    HorizonBeforeStart { t0: i32, t_end: i32 },
    #[error("no inflow history")]
    NoInflowHistory,
    #[error("no inflow planned for {0}")]
    MissingInflow(i32),
    #[error(transparent)]
    Demography(#[from] DemographyError),
}

/// Shape of a model state: the fields and the age span tracked.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub fields: Vec<FieldId>,
    pub min_age: u32,
    pub max_age: u32,
}

impl Layout {
    pub const DEFAULT_AGES: RangeInclusive<u32> = 20..=79;

    pub fn new(fields: Vec<FieldId>, ages: RangeInclusive<u32>) -> Arc<Layout> {
        assert!(ages.start() <= ages.end(), "empty age span");
        Arc::new(Layout { fields, min_age: *ages.start(), max_age: *ages.end() })
    }

    /// Smallest span covering every cohort row of `stocks` and the entry ages.
    pub fn for_stocks(fields: Vec<FieldId>, stocks: &StockTable) -> Arc<Layout> {
        let entry = InflowSeries::DEFAULT_ENTRY_AGES;
        let mut lo = *entry.start();
        let mut hi = *entry.end();
        let mut any = false;
        for key in stocks.entries.keys() {
            if let Some(c) = key.cohort {
                let span = c.age.span();
                lo = lo.min(span.start);
                hi = hi.max(span.end - 1);
                any = true;
            }
        }
        if !any {
            return Layout::new(fields, Layout::DEFAULT_AGES);
        }
        Layout::new(fields, lo..=hi)
    }

    pub fn n_ages(&self) -> usize {
        (self.max_age - self.min_age + 1) as usize
    }

    pub fn ages(&self) -> RangeInclusive<u32> {
        self.min_age..=self.max_age
    }

    pub fn len(&self) -> usize {
        self.fields.len() * 2 * self.n_ages()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn field_index(&self, field: FieldId) -> Option<usize> {
        self.fields.iter().position(|f| *f == field)
    }

    fn cohort_offset(&self, sex: Sex, age: u32) -> Option<usize> {
        if age < self.min_age || age > self.max_age {
            return None;
        }
        Some(sex.index() * self.n_ages() + (age - self.min_age) as usize)
    }

    fn offset(&self, field_idx: usize, sex: Sex, age: u32) -> Option<usize> {
        self.cohort_offset(sex, age).map(|c| field_idx * 2 * self.n_ages() + c)
    }
}

/// Simulated stocks `N_i(s, a, t)` for one year.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub year: i32,
    layout: Arc<Layout>,
    stocks: Vec<f64>,
}

impl ModelState {
    pub fn zeros(layout: Arc<Layout>, year: i32) -> Self {
        let stocks = vec![0.0; layout.len()];
        ModelState { year, layout, stocks }
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn get(&self, field: FieldId, sex: Sex, age: u32) -> f64 {
        self.layout
            .field_index(field)
            .and_then(|f| self.layout.offset(f, sex, age))
            .map_or(0.0, |i| self.stocks[i])
    }

    /// Sets one cohort; returns false when the cohort is outside the layout.
    pub fn set(&mut self, field: FieldId, sex: Sex, age: u32, value: f64) -> bool {
        match self.layout.field_index(field).and_then(|f| self.layout.offset(f, sex, age)) {
            Some(i) => {
                self.stocks[i] = value;
                true
            }
            None => false,
        }
    }

    fn field_slice(&self, field_idx: usize) -> &[f64] {
        let n = 2 * self.layout.n_ages();
        &self.stocks[field_idx * n..(field_idx + 1) * n]
    }

    pub fn field_total(&self, field: FieldId) -> f64 {
        self.layout.field_index(field).map_or(0.0, |i| self.field_slice(i).iter().sum())
    }

    /// Field totals in layout order.
    pub fn totals(&self) -> Vec<f64> {
        (0..self.layout.fields.len()).map(|i| self.field_slice(i).iter().sum()).collect()
    }

    pub fn total(&self) -> f64 {
        self.stocks.iter().sum()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.stocks
    }
}

/// Exit rates laid out densely for one [`Layout`]; missing cohorts hold 0.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortRates {
    gamma: Vec<f64>,
    missing: Vec<(Sex, u32)>,
}

impl CohortRates {
    pub fn new(rates: &ExitRates, layout: &Layout) -> Self {
        let mut gamma = vec![0.0; 2 * layout.n_ages()];
        let mut missing = Vec::new();
        for sex in Sex::ALL {
            for age in layout.ages() {
                let i = layout.cohort_offset(sex, age).expect("age inside layout");
                match rates.get(sex, age) {
                    Some(g) => gamma[i] = g.clamp(0.0, 1.0),
                    // the oldest age exits entirely anyway
                    None if age < layout.max_age => missing.push((sex, age)),
                    None => {}
                }
            }
        }
        if !missing.is_empty() {
            warn!(
                "no exit rate for {} cohort(s) (first: {:?}); using gamma = 0",
                missing.len(),
                missing[0]
            );
        }
        CohortRates { gamma, missing }
    }

    /// Cohorts with no rate available, assigned `gamma = 0`.
    pub fn missing(&self) -> &[(Sex, u32)] {
        &self.missing
    }
}

/// Inflow `Y(s, a, t)` for one year, laid out per (sex, age).
#[derive(Debug, Clone, PartialEq)]
pub struct CohortInflow {
    values: Vec<f64>,
}

impl CohortInflow {
    pub fn new(layout: &Layout, total: f64, entrants: &EntrantDistribution) -> Self {
        let mut values = vec![0.0; 2 * layout.n_ages()];
        for sex in Sex::ALL {
            for age in layout.ages() {
                let i = layout.cohort_offset(sex, age).expect("age inside layout");
                values[i] = total * entrants.weight(sex, age);
            }
        }
        CohortInflow { values }
    }

    pub fn zeros(layout: &Layout) -> Self {
        CohortInflow { values: vec![0.0; 2 * layout.n_ages()] }
    }

    /// Arbitrary inflow per cohort, e.g. for tests or external entry profiles.
    pub fn from_fn(layout: &Layout, mut f: impl FnMut(Sex, u32) -> f64) -> Self {
        let mut out = CohortInflow::zeros(layout);
        for sex in Sex::ALL {
            for age in layout.ages() {
                let i = layout.cohort_offset(sex, age).expect("age inside layout");
                out.values[i] = f(sex, age);
            }
        }
        out
    }

    pub fn get(&self, layout: &Layout, sex: Sex, age: u32) -> f64 {
        layout.cohort_offset(sex, age).map_or(0.0, |i| self.values[i])
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// Persons entering and leaving each field during one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepFlows {
    pub entered: Vec<f64>,
    pub exited: Vec<f64>,
}

/// Advances `state` by one year.
pub fn step(
    state: &ModelState,
    params: &Params,
    rates: &CohortRates,
    inflow: &CohortInflow,
) -> ModelState {
    step_with_flows(state, params, rates, inflow).0
}

/// [`step`], also reporting the per-field entry and exit volumes.
pub fn step_with_flows(
    state: &ModelState,
    params: &Params,
    rates: &CohortRates,
    inflow: &CohortInflow,
) -> (ModelState, StepFlows) {
    let layout = &state.layout;
    let n = layout.n_ages();
    let mut next = vec![0.0; state.stocks.len()];
    let mut entered = Vec::with_capacity(layout.fields.len());
    let mut exited = Vec::with_capacity(layout.fields.len());
    for (f, &field) in layout.fields.iter().enumerate() {
        let q = params.p_enter * params.choice(field);
        let mut field_in = 0.0;
        let mut field_out = 0.0;
        for s in 0..2 {
            let base = (f * 2 + s) * n;
            let old = &state.stocks[base..base + n];
            let gamma = &rates.gamma[s * n..(s + 1) * n];
            let y = &inflow.values[s * n..(s + 1) * n];
            let new = &mut next[base..base + n];
            new[0] = q * y[0];
            field_in += new[0];
            for a in 0..n - 1 {
                let leaving = gamma[a] * old[a];
                let entering = q * y[a + 1];
                new[a + 1] = (old[a] - leaving) + entering;
                field_out += leaving;
                field_in += entering;
            }
            field_out += old[n - 1];
        }
        entered.push(field_in);
        exited.push(field_out);
    }
    let next_state = ModelState { year: state.year + 1, layout: Arc::clone(layout), stocks: next };
    (next_state, StepFlows { entered, exited })
}

/// Sets `N_i(s, a, t0)` from the data at `t0`.
///
/// Fields with cohort detail are interpolated to single ages; fields with
/// only a total are spread by `fallback_shares` (sex/age shares summing to 1).
pub fn init_state(
    stocks: &StockTable,
    t0: i32,
    layout: Arc<Layout>,
    fallback_shares: Option<&BTreeMap<(Sex, u32), f64>>,
) -> Result<ModelState, EngineError> {
    let mut state = ModelState::zeros(Arc::clone(&layout), t0);
    for &field in &layout.fields {
        if stocks.has_detail(field, t0) {
            for sex in Sex::ALL {
                let ages = interpolate_age_groups(&stocks.age_groups(field, sex, t0))?;
                for (age, v) in ages {
                    if !state.set(field, sex, age, v) {
                        warn!("{field} {sex:?} age {age} in {t0} lies outside the model ages");
                    }
                }
            }
        } else if let Some(total) = stocks.stored_total(field, t0) {
            let shares = fallback_shares.ok_or(EngineError::NoDistribution { field, year: t0 })?;
            for (&(sex, age), &share) in shares {
                state.set(field, sex, age, total * share);
            }
        } else {
            return Err(EngineError::MissingField { field, year: t0 });
        }
    }
    Ok(state)
}

/// Base forecast inflow: mean of the most recent observed totals.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseProjection {
    pub base: f64,
    pub source_years: Vec<i32>,
    pub warning: Option<String>,
}

/// Number of recent years averaged for the forecast inflow.
pub const PROJECTION_YEARS: usize = 3;

/// Mean of the three most recent total inflows at or before `last_observed`.
pub fn project_inflow(
    history: &InflowSeries,
    last_observed: i32,
) -> Result<BaseProjection, EngineError> {
    let mut years: Vec<i32> = history
        .years()
        .into_iter()
        .filter(|y| *y <= last_observed)
        .rev()
        .take(PROJECTION_YEARS)
        .collect();
    years.reverse();
    if years.is_empty() {
        return Err(EngineError::NoInflowHistory);
    }
    let values: Vec<f64> = years.iter().filter_map(|y| history.total(*y)).collect();
    let base = values.iter().sum::<f64>() / values.len() as f64;
    let warning = (years.len() < PROJECTION_YEARS).then(|| {
        let w = format!(
            "only {} inflow year(s) available; forecast inflow is their mean {base}",
            years.len()
        );
        warn!("{w}");
        w
    });
    Ok(BaseProjection { base, source_years: years, warning })
}

/// Total yearly inflow `Y(t)` for every simulated year, with the entrant
/// sex/age distribution used to resolve it into cohorts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InflowPlan {
    pub totals: BTreeMap<i32, f64>,
    pub additions: BTreeMap<i32, f64>,
    pub last_observed: i32,
    #[serde(skip)]
    pub entrants: EntrantDistribution,
    pub warnings: Vec<String>,
}

impl InflowPlan {
    /// Observed inflow for `(t0, last_observed]`, the projected base plus
    /// `additions` for `(last_observed, t_end]`.
    pub fn build(
        history: &InflowSeries,
        entrants: EntrantDistribution,
        t0: i32,
        last_observed: i32,
        t_end: i32,
        additions: &BTreeMap<i32, f64>,
    ) -> Result<InflowPlan, EngineError> {
        let mut warnings = Vec::new();
        let mut totals = BTreeMap::new();
        for year in (t0 + 1)..=last_observed.min(t_end) {
            let y = match history.total(year) {
                Some(y) => y,
                None => {
                    let y = fill_gap(history, year).ok_or(EngineError::MissingInflow(year))?;
                    let w = format!("no inflow observed in {year}; interpolated {y}");
                    warn!("{w}");
                    warnings.push(w);
                    y
                }
            };
            totals.insert(year, y);
        }
        let mut applied = BTreeMap::new();
        if t_end > last_observed {
            let base = project_inflow(history, last_observed)?;
            warnings.extend(base.warning);
            for year in (last_observed + 1).max(t0 + 1)..=t_end {
                let extra = additions.get(&year).copied().unwrap_or(0.0);
                if extra != 0.0 {
                    applied.insert(year, extra);
                }
                totals.insert(year, (base.base + extra).max(0.0));
            }
        }
        Ok(InflowPlan { totals, additions: applied, last_observed, entrants, warnings })
    }

    /// A plan with the given totals and no forecast logic, mainly for tests.
    pub fn from_totals(
        totals: BTreeMap<i32, f64>,
        entrants: EntrantDistribution,
        last_observed: i32,
    ) -> InflowPlan {
        InflowPlan {
            totals,
            additions: BTreeMap::new(),
            last_observed,
            entrants,
            warnings: Vec::new(),
        }
    }

    pub fn total(&self, year: i32) -> Option<f64> {
        self.totals.get(&year).copied()
    }

    pub fn cohort_inflow(&self, year: i32, layout: &Layout) -> Result<CohortInflow, EngineError> {
        let total = self.total(year).ok_or(EngineError::MissingInflow(year))?;
        Ok(CohortInflow::new(layout, total, &self.entrants))
    }

    /// Cohort inflows for `t0+1..=t_end`, in order.
    pub fn cohort_inflows(
        &self,
        t0: i32,
        t_end: i32,
        layout: &Layout,
    ) -> Result<Vec<CohortInflow>, EngineError> {
        ((t0 + 1)..=t_end).map(|y| self.cohort_inflow(y, layout)).collect()
    }
}

/// Linear interpolation between the nearest observed years, or the nearest
/// one when only one side exists.
fn fill_gap(history: &InflowSeries, year: i32) -> Option<f64> {
    let years = history.years();
    let before = years.range(..year).next_back().copied();
    let after = years.range(year + 1..).next().copied();
    match (before, after) {
        (Some(b), Some(a)) => {
            let (yb, ya) = (history.total(b)?, history.total(a)?);
            Some(yb + (ya - yb) * f64::from(year - b) / f64::from(a - b))
        }
        (Some(b), None) => history.total(b),
        (None, Some(a)) => history.total(a),
        (None, None) => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    Calibration,
    Validation,
    Forecast,
}

impl Window {
    pub fn label(self) -> &'static str {
        match self {
            Window::Calibration => "calibration",
            Window::Validation => "validation",
            Window::Forecast => "forecast",
        }
    }
}

/// Model states for consecutive years starting at the calibration year.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<ModelState>,
    pub windows: Vec<Window>,
}

impl Trajectory {
    pub fn t0(&self) -> i32 {
        self.states[0].year
    }

    pub fn t_end(&self) -> i32 {
        self.states.last().expect("non-empty trajectory").year
    }

    pub fn layout(&self) -> &Arc<Layout> {
        self.states[0].layout()
    }

    pub fn state(&self, year: i32) -> Option<&ModelState> {
        let i = usize::try_from(year - self.t0()).ok()?;
        self.states.get(i)
    }

    pub fn window(&self, year: i32) -> Option<Window> {
        let i = usize::try_from(year - self.t0()).ok()?;
        self.windows.get(i).copied()
    }

    pub fn field_total(&self, field: FieldId, year: i32) -> Option<f64> {
        self.state(year).map(|s| s.field_total(field))
    }

    pub fn years(&self) -> RangeInclusive<i32> {
        self.t0()..=self.t_end()
    }
}

fn window_for(year: i32, t0: i32, last_observed: i32) -> Window {
    if year == t0 {
        Window::Calibration
    } else if year <= last_observed {
        Window::Validation
    } else {
        Window::Forecast
    }
}

/// Runs from `init` to `t_end` using the plan's yearly inflow.
pub fn run(
    init: &ModelState,
    params: &Params,
    rates: &CohortRates,
    plan: &InflowPlan,
    t_end: i32,
) -> Result<Trajectory, EngineError> {
    let t0 = init.year;
    if t_end < t0 {
        return Err(EngineError::HorizonBeforeStart { t0, t_end });
    }
    let inflows = plan.cohort_inflows(t0, t_end, &init.layout)?;
    Ok(run_with_inflows(init, params, rates, &inflows, plan.last_observed))
}

/// [`run`] with pre-resolved cohort inflows for `t0+1..`; the calibration
/// loops reuse them across parameter values.
pub fn run_with_inflows(
    init: &ModelState,
    params: &Params,
    rates: &CohortRates,
    inflows: &[CohortInflow],
    last_observed: i32,
) -> Trajectory {
    let t0 = init.year;
    let mut states = Vec::with_capacity(inflows.len() + 1);
    let mut windows = Vec::with_capacity(inflows.len() + 1);
    states.push(init.clone());
    windows.push(Window::Calibration);
    for inflow in inflows {
        let next = step(states.last().expect("non-empty"), params, rates, inflow);
        windows.push(window_for(next.year, t0, last_observed));
        states.push(next);
    }
    Trajectory { states, windows }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_model::{CohortKey, Country, SexShares, StockKey};

    fn layout(ages: RangeInclusive<u32>) -> Arc<Layout> {
        Layout::new(FieldId::minimal(), ages)
    }

    fn rates(value: f64, layout: &Layout) -> CohortRates {
        let mut r = ExitRates::default();
        for sex in Sex::ALL {
            for a in layout.ages() {
                r.rates.insert((sex, a), value);
            }
        }
        CohortRates::new(&r, layout)
    }

    #[test]
    fn pure_aging_shifts_cohorts() {
        let l = layout(30..=40);
        let mut s = ModelState::zeros(Arc::clone(&l), 2000);
        s.set(FieldId::GP, Sex::Female, 33, 7.0);
        s.set(FieldId::SP, Sex::Male, 30, 3.0);
        let p = Params::minimal(0.5, 0.5).unwrap();
        let next = step(&s, &p, &rates(0.0, &l), &CohortInflow::zeros(&l));
        assert_eq!(next.year, 2001);
        assert_eq!(next.get(FieldId::GP, Sex::Female, 34), 7.0);
        assert_eq!(next.get(FieldId::SP, Sex::Male, 31), 3.0);
        assert_eq!(next.totals(), s.totals());
    }

    #[test]
    fn single_cohort_substitution() {
        let l = Layout::new(vec![FieldId::GP], 30..=32);
        let mut s = ModelState::zeros(Arc::clone(&l), 2000);
        s.set(FieldId::GP, Sex::Female, 30, 100.0);
        let p = Params::new(1.0, BTreeMap::from([(FieldId::GP, 1.0)])).unwrap();
        // all inflow lands on (F, 31)
        let entrants = EntrantDistribution::new(SexShares { male: 0.0, female: 1.0 }, 31..=31);
        let inflow = CohortInflow::new(&l, 20.0, &entrants);
        let next = step(&s, &p, &rates(0.1, &l), &inflow);
        assert!((next.get(FieldId::GP, Sex::Female, 31) - 110.0).abs() < 1e-12);
    }

    #[test]
    fn oldest_age_leaves() {
        let l = layout(30..=31);
        let mut s = ModelState::zeros(Arc::clone(&l), 2000);
        s.set(FieldId::GP, Sex::Male, 31, 50.0);
        let p = Params::minimal(0.5, 0.5).unwrap();
        let (next, flows) = step_with_flows(&s, &p, &rates(0.0, &l), &CohortInflow::zeros(&l));
        assert_eq!(next.total(), 0.0);
        assert_eq!(flows.exited[0], 50.0);
    }

    #[test]
    fn run_of_zero_length_is_init() {
        let l = layout(30..=40);
        let s = ModelState::zeros(Arc::clone(&l), 2000);
        let plan = InflowPlan::from_totals(
            BTreeMap::new(),
            EntrantDistribution::new(SexShares::EVEN, 30..=31),
            2000,
        );
        let p = Params::minimal(0.5, 0.5).unwrap();
        let t = run(&s, &p, &rates(0.0, &l), &plan, 2000).unwrap();
        assert_eq!(t.states, vec![s.clone()]);
        assert_eq!(t.windows, vec![Window::Calibration]);
        assert_eq!(
            run(&s, &p, &rates(0.0, &l), &plan, 1999).unwrap_err(),
            EngineError::HorizonBeforeStart { t0: 2000, t_end: 1999 }
        );
    }

    fn history(totals: &[(i32, f64)]) -> InflowSeries {
        let mut h = InflowSeries::new(Country::new("AT"));
        for &(y, v) in totals {
            h.graduates.insert(y, v - 100.0);
            h.migrants.insert(y, 100.0);
        }
        h
    }

    #[test]
    fn projection_is_three_year_mean() {
        let h = history(&[(2013, 5000.0), (2014, 900.0), (2015, 1000.0), (2016, 1100.0)]);
        let p = project_inflow(&h, 2016).unwrap();
        assert_eq!(p.base, 1000.0);
        assert_eq!(p.source_years, vec![2014, 2015, 2016]);
        assert!(p.warning.is_none());

        let short = history(&[(2016, 1000.0)]);
        let p = project_inflow(&short, 2016).unwrap();
        assert_eq!(p.base, 1000.0);
        assert!(p.warning.is_some());
        assert_eq!(
            project_inflow(&InflowSeries::new(Country::new("AT")), 2016),
            Err(EngineError::NoInflowHistory)
        );
    }

    #[test]
    fn plan_adds_interventions_in_forecast_window() {
        let h = history(&[(2014, 900.0), (2015, 1000.0), (2016, 1100.0)]);
        let additions = BTreeMap::from([(2024, 150.0), (2015, 99.0)]);
        let entrants = EntrantDistribution::new(SexShares::EVEN, 25..=34);
        let plan = InflowPlan::build(&h, entrants, 2014, 2016, 2030, &additions).unwrap();
        assert_eq!(plan.total(2015), Some(1000.0));
        assert_eq!(plan.total(2017), Some(1000.0));
        assert_eq!(plan.total(2024), Some(1150.0));
        assert_eq!(plan.total(2030), Some(1000.0));
        assert_eq!(plan.total(2014), None);
    }

    #[test]
    fn plan_interpolates_missing_history() {
        let h = history(&[(2010, 1000.0), (2012, 1200.0), (2013, 1300.0)]);
        let entrants = EntrantDistribution::new(SexShares::EVEN, 25..=34);
        let plan = InflowPlan::build(&h, entrants, 2010, 2013, 2013, &BTreeMap::new()).unwrap();
        assert_eq!(plan.total(2011), Some(1100.0));
        assert_eq!(plan.warnings.len(), 1);
    }

    #[test]
    fn init_copies_or_spreads() {
        let mut stocks = StockTable::new(Country::new("AT"));
        let age = "35-44".parse().unwrap();
        stocks.insert(
            StockKey {
                field: FieldId::GP,
                year: 2000,
                cohort: Some(CohortKey { sex: Sex::Female, age }),
            },
            100.0,
        );
        stocks.insert(StockKey { field: FieldId::SP, year: 2000, cohort: None }, 300.0);
        let l = layout(20..=79);
        let shares = BTreeMap::from([((Sex::Male, 50), 0.25), ((Sex::Female, 40), 0.75)]);
        let s = init_state(&stocks, 2000, Arc::clone(&l), Some(&shares)).unwrap();
        assert!((s.field_total(FieldId::GP) - 100.0).abs() < 1e-12);
        assert_eq!(s.get(FieldId::GP, Sex::Female, 40), 10.0);
        assert_eq!(s.get(FieldId::SP, Sex::Male, 50), 75.0);
        assert_eq!(s.get(FieldId::SP, Sex::Female, 40), 225.0);

        assert_eq!(
            init_state(&stocks, 2000, Arc::clone(&l), None).unwrap_err(),
            EngineError::NoDistribution { field: FieldId::SP, year: 2000 }
        );
        assert_eq!(
            init_state(&stocks, 2001, l, Some(&shares)).unwrap_err(),
            EngineError::MissingField { field: FieldId::GP, year: 2001 }
        );
    }
}
