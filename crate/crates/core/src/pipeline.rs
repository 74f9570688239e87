//! Assembly of a runnable model from a validated country bundle.

use std::collections::BTreeMap;
use std::sync::Arc;

use log::warn;
use thiserror::Error;

use crate::calibrate::{
    calibrate_extended, grid_search, CalibrateError, CalibrationProblem, DescentOptions,
    ExtendedFit, GofMode, GofSurface,
};
use crate::data_model::{
    Country, CountryBundle, ExitRates, FieldId, ObservedTotals, Params, PopulationProjection, Sex,
    StockTable,
};
use crate::demography::{
    aggregate_age_table, entrant_distribution, exit_rates, interpolate_age_groups,
    net_change_rates, AgeSexShares, DemographyError, EntrantDistribution, ReferenceDemography,
};
use crate::engine::{
    init_state, run, CohortRates, EngineError, InflowPlan, Layout, ModelState, Trajectory,
};
use crate::forecast::{
    gap_report, isodensity, plot_series, validation_rmse, ForecastError, GapInputs, GapReport,
    GofSummary, IsodensityLine, ModelKind, SeriesRow,
};
use crate::ingest::{select_calibration_year, IngestError};
use crate::scenario::{sector_share_trend, split_fields, ScenarioError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Demography(#[from] DemographyError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Calibrate(#[from] CalibrateError),
    #[error(transparent)]
    Forecast(#[from] ForecastError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("{0}: no own exit rates and no reference rates available")]
    NoRates(Country),
    #[error("{0}: no entrant distribution and no reference distribution available")]
    NoEntrants(Country),
    #[error("{0}: extended model needs sector stocks or a sector split")]
    NoSectorData(Country),
    #[error("population scenario `{0}` not found")]
    UnknownScenario(String),
}

impl PipelineError {
    /// True when the failure comes from the input data rather than the numerics.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, PipelineError::Calibrate(_) | PipelineError::Forecast(_))
    }
}

/// A country's model, ready for calibration and forecasting.
#[derive(Debug, Clone)]
pub struct PreparedModel {
    pub country: Country,
    pub kind: ModelKind,
    /// Stocks in the model's field resolution (split into sectors if extended).
    pub stocks: StockTable,
    pub t0: i32,
    pub last_observed: i32,
    pub layout: Arc<Layout>,
    pub init: ModelState,
    pub rates: ExitRates,
    pub entrants: EntrantDistribution,
    pub observed: ObservedTotals,
    pub bundle: CountryBundle,
}

/// Shares from the fields that do have detail at `year`.
fn partial_shares(stocks: &StockTable, year: i32) -> Result<Option<AgeSexShares>, DemographyError> {
    let mut table = crate::demography::AgeTable::default();
    for field in stocks.fields() {
        for sex in Sex::ALL {
            for (age, v) in interpolate_age_groups(&stocks.age_groups(field, sex, year))? {
                *table.values.entry((sex, age, year)).or_insert(0.0) += v;
            }
        }
    }
    let shares = AgeSexShares::from_table(&table);
    Ok((!shares.by_year.is_empty()).then_some(shares))
}

pub fn prepare(
    bundle: &CountryBundle,
    reference: Option<&ReferenceDemography>,
    kind: ModelKind,
) -> Result<PreparedModel, PipelineError> {
    let country = bundle.country.clone();
    let minimal = &bundle.stocks;
    let t0 = select_calibration_year(minimal)?;
    let last_observed = minimal.last_year().ok_or(IngestError::NoValidCalibrationYear)?;

    let own = aggregate_age_table(minimal)?;
    let rates = if own.supports_rates() {
        let own_rates = exit_rates(&net_change_rates(&own))?;
        match reference {
            Some(r) => own_rates.filled_from(&r.rates),
            None => own_rates,
        }
    } else {
        reference.map(|r| r.rates.clone()).ok_or_else(|| PipelineError::NoRates(country.clone()))?
    };

    let entrants = match entrant_distribution(minimal, last_observed) {
        Ok(d) => d,
        Err(e) => {
            let r = reference.ok_or_else(|| PipelineError::NoEntrants(country.clone()))?;
            warn!("{country}: {e}; using reference entrant distribution");
            EntrantDistribution::new(r.entrants, bundle.inflow.entry_ages.clone())
        }
    };

    let stocks = match kind {
        ModelKind::Minimal if minimal.is_extended() => {
            return Err(PipelineError::NoSectorData(country));
        }
        ModelKind::Minimal => minimal.clone(),
        ModelKind::Extended if minimal.is_extended() => minimal.clone(),
        ModelKind::Extended => {
            let anchors =
                bundle.sector_split.as_ref().ok_or_else(|| PipelineError::NoSectorData(country.clone()))?;
            let first = minimal.first_year().unwrap_or(t0);
            let trend = sector_share_trend(anchors, first..=last_observed)?;
            split_fields(minimal, &trend)?
        }
    };
    let fields = match kind {
        ModelKind::Minimal => FieldId::minimal(),
        ModelKind::Extended => FieldId::extended(),
    };
    let layout = Layout::for_stocks(fields, &stocks);

    let fallback = match reference {
        Some(r) => Some(r.shares.clone()),
        None => partial_shares(&stocks, t0)?,
    };
    let init = init_state(&stocks, t0, Arc::clone(&layout), fallback.as_ref().and_then(|s| s.at(t0)))?;
    let observed = stocks.observed_totals();
    Ok(PreparedModel {
        country,
        kind,
        stocks,
        t0,
        last_observed,
        layout,
        init,
        rates,
        entrants,
        observed,
        bundle: bundle.clone(),
    })
}

/// Everything produced by one forecast run.
#[derive(Debug, Clone)]
pub struct ForecastOutput {
    pub trajectory: Trajectory,
    pub plan: InflowPlan,
    pub rmse: BTreeMap<FieldId, f64>,
    pub isodensity: Vec<IsodensityLine>,
    pub report: GapReport,
    pub series: BTreeMap<FieldId, Vec<SeriesRow>>,
}

impl PreparedModel {
    pub fn cohort_rates(&self) -> CohortRates {
        CohortRates::new(&self.rates, &self.layout)
    }

    pub fn plan(&self, t_end: i32, additions: &BTreeMap<i32, f64>) -> Result<InflowPlan, PipelineError> {
        Ok(InflowPlan::build(
            &self.bundle.inflow,
            self.entrants.clone(),
            self.t0,
            self.last_observed,
            t_end,
            additions,
        )?)
    }

    pub fn problem(&self, gof: GofMode) -> Result<CalibrationProblem, PipelineError> {
        let plan = self.plan(self.last_observed, &BTreeMap::new())?;
        Ok(CalibrationProblem::new(
            self.init.clone(),
            self.cohort_rates(),
            &plan,
            self.observed.clone(),
            gof,
        )?)
    }

    pub fn grid_search(&self, gof: GofMode, step: f64) -> Result<GofSurface, PipelineError> {
        Ok(grid_search(&self.problem(gof)?, step)?)
    }

    pub fn calibrate_extended(
        &self,
        gof: GofMode,
        init: &Params,
        opts: &DescentOptions,
    ) -> Result<ExtendedFit, PipelineError> {
        Ok(calibrate_extended(&self.problem(gof)?, init, opts)?)
    }

    pub fn populations(&self) -> &[PopulationProjection] {
        &self.bundle.populations
    }

    pub fn forecast(
        &self,
        params: &Params,
        chi2: Option<f64>,
        t_end: i32,
        additions: &BTreeMap<i32, f64>,
        scenario: &str,
    ) -> Result<ForecastOutput, PipelineError> {
        if self.bundle.scenario(scenario).is_none() {
            return Err(PipelineError::UnknownScenario(scenario.to_string()));
        }
        let plan = self.plan(t_end, additions)?;
        let trajectory = run(&self.init, params, &self.cohort_rates(), &plan, t_end)?;
        let rmse = validation_rmse(&trajectory, &self.observed)?;
        let base_year = self.last_observed;
        let mut lines = Vec::new();
        for &field in &self.layout.fields {
            let z = self
                .observed
                .get(field, base_year)
                .ok_or(EngineError::MissingField { field, year: base_year })?;
            lines.push(isodensity(field, z, base_year, self.populations(), base_year..=t_end)?);
        }
        let inflow_at_horizon = plan.total(t_end).ok_or(EngineError::MissingInflow(t_end))?;
        let inputs = GapInputs {
            trajectory: &trajectory,
            isodensity: &lines,
            rmse: &rmse,
            scenario,
            base_year,
            last_observed: self.last_observed,
            inflow_at_horizon,
        };
        let gof = GofSummary { p_enter: params.p_enter, field_choice: params.field_choice.clone(), chi2 };
        let report = gap_report(&inputs, self.country.as_str(), self.kind, gof)?;
        let series = self
            .layout
            .fields
            .iter()
            .zip(&lines)
            .map(|(&field, line)| {
                let rows = plot_series(
                    &trajectory,
                    field,
                    &self.observed,
                    Some(line),
                    scenario,
                    rmse[&field],
                    self.last_observed,
                );
                (field, rows)
            })
            .collect();
        Ok(ForecastOutput { trajectory, plan, rmse, isodensity: lines, report, series })
    }
}
