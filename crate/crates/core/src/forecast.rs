//! Constant-density reference lines, validation error, and density gaps.

use std::collections::BTreeMap;
use std::ops::RangeInclusive;

use serde::Serialize;
use statrs::function::erf::erfc;
use thiserror::Error;

use crate::data_model::{FieldId, ObservedTotals, PopulationProjection, BASELINE};
use crate::engine::{Trajectory, Window};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ForecastError {
    #[error("population scenario `{scenario}` has no value for {year}")]
    MissingYear { scenario: String, year: i32 },
    #[error("no `baseline` population scenario")]
    MissingBaselineScenario,
    #[error("validation window is empty")]
    EmptyValidationWindow,
    #[error("inflow at the horizon is zero")]
    ZeroInflow,
    #[error("horizon length must be positive, got {0}")]
    NonPositiveHorizon(i32),
    #[error("standard deviation is zero")]
    ZeroSd,
}

/// Field counts needed to hold the base-year physician density constant.
#[derive(Debug, Clone, PartialEq)]
pub struct IsodensityLine {
    pub field: FieldId,
    pub base_year: i32,
    /// `C_i(t)` per population scenario.
    pub scenarios: BTreeMap<String, BTreeMap<i32, f64>>,
    /// Per-year `(min, max)` over all scenarios.
    pub envelope: BTreeMap<i32, (f64, f64)>,
}

impl IsodensityLine {
    pub fn baseline(&self) -> &BTreeMap<i32, f64> {
        &self.scenarios[BASELINE]
    }

    pub fn value(&self, scenario: &str, year: i32) -> Option<f64> {
        self.scenarios.get(scenario)?.get(&year).copied()
    }
}

/// `C_i(t) = Z_i(base) * Pop(t) / Pop(base)` for every scenario and year.
///
/// The envelope spans all scenarios, so it always contains the baseline.
pub fn isodensity(
    field: FieldId,
    z_base: f64,
    base_year: i32,
    populations: &[PopulationProjection],
    years: RangeInclusive<i32>,
) -> Result<IsodensityLine, ForecastError> {
    if !populations.iter().any(|p| p.is_baseline()) {
        return Err(ForecastError::MissingBaselineScenario);
    }
    let mut scenarios = BTreeMap::new();
    for pop in populations {
        let at = |year: i32| {
            pop.values
                .get(&year)
                .copied()
                .ok_or_else(|| ForecastError::MissingYear { scenario: pop.scenario.clone(), year })
        };
        let base = at(base_year)?;
        let mut line = BTreeMap::new();
        for year in years.clone() {
            line.insert(year, z_base * (at(year)? / base));
        }
        scenarios.insert(pop.scenario.clone(), line);
    }
    let mut envelope = BTreeMap::new();
    for year in years {
        let (lo, hi) = scenarios.values().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), l| {
            let v = l[&year];
            (lo.min(v), hi.max(v))
        });
        envelope.insert(year, (lo, hi));
    }
    Ok(IsodensityLine { field, base_year, scenarios, envelope })
}

/// Root-mean-squared error between model and data over the validation years.
pub fn validation_rmse(
    trajectory: &Trajectory,
    observed: &ObservedTotals,
) -> Result<BTreeMap<FieldId, f64>, ForecastError> {
    let years: Vec<i32> = trajectory
        .years()
        .filter(|y| trajectory.window(*y) == Some(Window::Validation))
        .collect();
    let mut out = BTreeMap::new();
    for &field in &trajectory.layout().fields {
        let residuals: Vec<f64> = years
            .iter()
            .filter_map(|&y| Some(trajectory.field_total(field, y)? - observed.get(field, y)?))
            .collect();
        if residuals.is_empty() {
            return Err(ForecastError::EmptyValidationWindow);
        }
        let mse = residuals.iter().map(|r| r * r).sum::<f64>() / residuals.len() as f64;
        out.insert(field, mse.sqrt());
    }
    Ok(out)
}

/// SD of a forecast `h` years past the data, growing linearly from the
/// validation RMSE reached after `h_val` years.
pub fn forecast_sd(rmse: f64, h: f64, h_val: f64) -> f64 {
    debug_assert!(h > 0.0 && h_val > 0.0);
    rmse * h / h_val
}

/// Independent errors combined in quadrature.
pub fn combine_quadrature(sds: impl IntoIterator<Item = f64>) -> f64 {
    sds.into_iter().map(|s| s * s).sum::<f64>().sqrt()
}

/// `DG = (M - C) / (T * Y)`: horizon gap per year and per unit inflow.
/// Negative means the forecast falls short of constant density.
pub fn density_gap(
    m_horizon: f64,
    c_horizon: f64,
    t: i32,
    y_horizon: f64,
) -> Result<f64, ForecastError> {
    if t <= 0 {
        return Err(ForecastError::NonPositiveHorizon(t));
    }
    if y_horizon == 0.0 {
        return Err(ForecastError::ZeroInflow);
    }
    Ok((m_horizon - c_horizon) / (f64::from(t) * y_horizon))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stars {
    None,
    One,
    Two,
    Three,
}

impl Stars {
    pub fn from_p(p: f64) -> Stars {
        if p < 1e-4 {
            Stars::Three
        } else if p < 1e-3 {
            Stars::Two
        } else if p < 1e-2 {
            Stars::One
        } else {
            Stars::None
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Stars::None => "",
            Stars::One => "*",
            Stars::Two => "**",
            Stars::Three => "***",
        }
    }
}

impl Serialize for Stars {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Significance {
    pub z: f64,
    pub p: f64,
    pub stars: Stars,
}

/// Two-sided z-test of the gap against zero.
pub fn gap_significance(dg: f64, sd: f64) -> Result<Significance, ForecastError> {
    if !(sd > 0.0) {
        return Err(ForecastError::ZeroSd);
    }
    let z = dg / sd;
    let p = erfc(z.abs() / std::f64::consts::SQRT_2).min(1.0);
    Ok(Significance { z, p, stars: Stars::from_p(p) })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Minimal,
    Extended,
}

impl std::str::FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "minimal" => Ok(ModelKind::Minimal),
            "extended" => Ok(ModelKind::Extended),
            other => Err(format!("unknown model `{other}`")),
        }
    }
}

/// Gap of one field (or of an aggregate of fields).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FieldGap {
    pub field: String,
    pub dg: f64,
    pub sd: f64,
    pub z: f64,
    pub p: f64,
    pub stars: Stars,
    /// `M_i(t0 + T)`
    pub model: f64,
    /// `C_i(T)`
    pub isodensity: f64,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GofSummary {
    pub p_enter: f64,
    pub field_choice: BTreeMap<FieldId, f64>,
    pub chi2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapReport {
    pub country: String,
    pub model: ModelKind,
    pub scenario: String,
    pub calibration_year: i32,
    pub base_year: i32,
    pub horizon: i32,
    /// `T`, years from the base year to the horizon.
    pub t: i32,
    /// `Y(t0 + T)`
    pub inflow_at_horizon: f64,
    pub fields: Vec<FieldGap>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub professions: Vec<FieldGap>,
    pub aggregate: FieldGap,
    pub gof: GofSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub provenance: Option<serde_json::Value>,
}

/// Inputs of a gap computation at a single horizon year.
#[derive(Debug, Clone)]
pub struct GapInputs<'a> {
    pub trajectory: &'a Trajectory,
    pub isodensity: &'a [IsodensityLine],
    pub rmse: &'a BTreeMap<FieldId, f64>,
    pub scenario: &'a str,
    pub base_year: i32,
    pub last_observed: i32,
    pub inflow_at_horizon: f64,
}

impl GapInputs<'_> {
    fn horizon(&self) -> i32 {
        self.trajectory.t_end()
    }

    fn t(&self) -> i32 {
        self.horizon() - self.base_year
    }

    fn h_val(&self) -> f64 {
        f64::from(self.last_observed - self.trajectory.t0())
    }

    fn gap<'f>(
        &self,
        label: String,
        fields: impl Iterator<Item = &'f FieldId> + Clone,
    ) -> Result<FieldGap, ForecastError> {
        let horizon = self.horizon();
        let t = self.t();
        let h = f64::from(horizon - self.last_observed);
        let mut m = 0.0;
        let mut c = 0.0;
        let mut sds = Vec::new();
        let mut rmses = Vec::new();
        for field in fields {
            m += self.trajectory.field_total(*field, horizon).unwrap_or(0.0);
            let line = self.isodensity.iter().find(|l| l.field == *field);
            c += line
                .and_then(|l| l.value(self.scenario, horizon))
                .ok_or_else(|| ForecastError::MissingYear {
                    scenario: self.scenario.to_string(),
                    year: horizon,
                })?;
            let rmse = self.rmse.get(field).copied().ok_or(ForecastError::EmptyValidationWindow)?;
            rmses.push(rmse);
            sds.push(forecast_sd(rmse, h, self.h_val()) / (f64::from(t) * self.inflow_at_horizon));
        }
        let dg = density_gap(m, c, t, self.inflow_at_horizon)?;
        let sd = combine_quadrature(sds);
        let sig = if dg == 0.0 && sd == 0.0 {
            Significance { z: 0.0, p: 1.0, stars: Stars::None }
        } else {
            gap_significance(dg, sd)?
        };
        Ok(FieldGap {
            field: label,
            dg,
            sd,
            z: sig.z,
            p: sig.p,
            stars: sig.stars,
            model: m,
            isodensity: c,
            rmse: combine_quadrature(rmses),
        })
    }
}

/// Per-field gaps, per-profession gaps for sector-resolved models, and the
/// all-physician aggregate with field SDs combined in quadrature.
pub fn gap_report(
    inputs: &GapInputs<'_>,
    country: &str,
    model: ModelKind,
    gof: GofSummary,
) -> Result<GapReport, ForecastError> {
    if inputs.t() <= 0 {
        return Err(ForecastError::NonPositiveHorizon(inputs.t()));
    }
    if inputs.h_val() <= 0.0 || inputs.horizon() <= inputs.last_observed {
        return Err(ForecastError::EmptyValidationWindow);
    }
    let fields = &inputs.trajectory.layout().fields;
    let mut per_field = Vec::with_capacity(fields.len());
    for field in fields {
        per_field.push(inputs.gap(field.to_string(), std::iter::once(field))?);
    }
    let mut professions = Vec::new();
    if fields.iter().any(|f| f.sector.is_some()) {
        for prof in crate::data_model::Profession::ALL {
            let members = fields.iter().filter(|f| f.profession == prof);
            professions.push(inputs.gap(prof.code().to_string(), members)?);
        }
    }
    let aggregate = inputs.gap("ALL".to_string(), fields.iter())?;
    Ok(GapReport {
        country: country.to_string(),
        model,
        scenario: inputs.scenario.to_string(),
        calibration_year: inputs.trajectory.t0(),
        base_year: inputs.base_year,
        horizon: inputs.horizon(),
        t: inputs.t(),
        inflow_at_horizon: inputs.inflow_at_horizon,
        fields: per_field,
        professions,
        aggregate,
        gof,
        provenance: None,
    })
}

/// One row of the per-field plot data.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesRow {
    pub year: i32,
    pub model: f64,
    pub sd: f64,
    pub iso_baseline: Option<f64>,
    pub env_min: Option<f64>,
    pub env_max: Option<f64>,
    pub observed: Option<f64>,
}

/// Yearly model totals with error bands, reference line and observations.
///
/// The band is zero at the calibration year, the validation RMSE over the
/// validation years and grows linearly with the horizon afterwards.
pub fn plot_series(
    trajectory: &Trajectory,
    field: FieldId,
    observed: &ObservedTotals,
    line: Option<&IsodensityLine>,
    scenario: &str,
    rmse: f64,
    last_observed: i32,
) -> Vec<SeriesRow> {
    let h_val = f64::from(last_observed - trajectory.t0());
    trajectory
        .years()
        .map(|year| {
            let sd = match trajectory.window(year) {
                Some(Window::Calibration) | None => 0.0,
                Some(Window::Validation) => rmse,
                Some(Window::Forecast) => forecast_sd(rmse, f64::from(year - last_observed), h_val),
            };
            SeriesRow {
                year,
                model: trajectory.field_total(field, year).unwrap_or(0.0),
                sd,
                iso_baseline: line.and_then(|l| l.value(scenario, year)),
                env_min: line.and_then(|l| l.envelope.get(&year)).map(|e| e.0),
                env_max: line.and_then(|l| l.envelope.get(&year)).map(|e| e.1),
                observed: observed.get(field, year),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_model::Country;

    fn pop(label: &str, values: &[(i32, f64)]) -> PopulationProjection {
        PopulationProjection {
            country: Country::new("AT"),
            scenario: label.into(),
            values: values.iter().copied().collect(),
        }
    }

    #[test]
    fn constant_population_keeps_base_count() {
        let p = pop(BASELINE, &[(2016, 8.7e6), (2017, 8.7e6), (2018, 8.7e6)]);
        let line = isodensity(FieldId::GP, 1000.0, 2016, &[p], 2016..=2018).unwrap();
        assert!(line.baseline().values().all(|v| *v == 1000.0));
    }

    #[test]
    fn doubling_population_doubles_requirement() {
        let p = pop(BASELINE, &[(2016, 5.0e6), (2040, 10.0e6)]);
        let line = isodensity(FieldId::GP, 1000.0, 2016, &[p], 2040..=2040).unwrap();
        assert_eq!(line.value(BASELINE, 2040), Some(2000.0));
    }

    #[test]
    fn envelope_is_elementwise_min_max() {
        let base = 8.0e6;
        let pops = [
            pop("low", &[(2016, base), (2040, base * 0.9)]),
            pop(BASELINE, &[(2016, base), (2040, base)]),
            pop("high", &[(2016, base), (2040, base * 1.1)]),
        ];
        let line = isodensity(FieldId::SP, 1000.0, 2016, &pops, 2016..=2016).unwrap();
        assert_eq!(line.envelope[&2016], (1000.0, 1000.0));
        let line = isodensity(FieldId::SP, 1000.0, 2016, &pops, 2040..=2040).unwrap();
        let (lo, hi) = line.envelope[&2040];
        let oracle_lo = [0.9, 1.0, 1.1].iter().map(|f| 1000.0 * (base * f / base)).fold(f64::MAX, f64::min);
        let oracle_hi = [0.9, 1.0, 1.1].iter().map(|f| 1000.0 * (base * f / base)).fold(f64::MIN, f64::max);
        assert_eq!((lo, hi), (oracle_lo, oracle_hi));
        assert!(lo <= line.value(BASELINE, 2040).unwrap() && line.value(BASELINE, 2040).unwrap() <= hi);
    }

    #[test]
    fn isodensity_errors() {
        let p = pop("high", &[(2016, 1.0)]);
        assert_eq!(
            isodensity(FieldId::GP, 1.0, 2016, &[p], 2016..=2016),
            Err(ForecastError::MissingBaselineScenario)
        );
        let p = pop(BASELINE, &[(2016, 1.0)]);
        assert_eq!(
            isodensity(FieldId::GP, 1.0, 2016, &[p], 2016..=2017),
            Err(ForecastError::MissingYear { scenario: BASELINE.into(), year: 2017 })
        );
    }

    #[test]
    fn sd_rule_and_quadrature() {
        assert_eq!(forecast_sd(4.0, 16.0, 16.0), 4.0);
        assert_eq!(forecast_sd(4.0, 32.0, 16.0), 8.0);
        let agg = combine_quadrature([3.0, 12.0]);
        assert!((agg - 12.369_316_876_852_982).abs() < 1e-12);
        assert_eq!(agg.round(), 12.0);
    }

    #[test]
    fn density_gap_examples() {
        assert_eq!(density_gap(1000.0, 1000.0, 24, 500.0), Ok(0.0));
        let dg = density_gap(1000.0, 1100.0, 24, 500.0).unwrap();
        assert!((dg - (-100.0 / 12000.0)).abs() < 1e-15);
        assert!((dg + 0.008_333_333_333).abs() < 1e-9);
        assert_eq!(density_gap(1.0, 0.0, 24, 0.0), Err(ForecastError::ZeroInflow));
        assert_eq!(density_gap(1.0, 0.0, 0, 1.0), Err(ForecastError::NonPositiveHorizon(0)));
    }

    /// Oracle: two-sided tail by Simpson integration of the normal density.
    fn tail_by_quadrature(z: f64) -> f64 {
        let n = 20_000;
        let h = z.abs() / n as f64;
        let phi = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let mut s = phi(0.0) + phi(z.abs());
        for k in 1..n {
            s += if k % 2 == 1 { 4.0 } else { 2.0 } * phi(k as f64 * h);
        }
        1.0 - 2.0 * (s * h / 3.0)
    }

    #[test]
    fn significance_examples() {
        let s = gap_significance(0.0, 0.03).unwrap();
        assert_eq!((s.p, s.stars), (1.0, Stars::None));

        let s = gap_significance(2.5758 * 0.1, 0.1).unwrap();
        assert!((s.p - tail_by_quadrature(2.5758)).abs() < 1e-9);
        assert!((s.p - 0.01).abs() < 1e-5);
        assert!(s.p > 0.01);
        assert_eq!(s.stars, Stars::None);

        let s = gap_significance(-0.11, 0.03).unwrap();
        assert!((s.z + 3.6667).abs() < 1e-3);
        assert!((s.p - tail_by_quadrature(s.z)).abs() < 1e-9);
        assert!((s.p - 2.4e-4).abs() < 0.1e-4);
        assert_eq!(s.stars, Stars::Two);

        assert_eq!(gap_significance(0.1, 0.0), Err(ForecastError::ZeroSd));
    }

    #[test]
    fn star_thresholds_are_strict() {
        assert_eq!(Stars::from_p(0.01), Stars::None);
        assert_eq!(Stars::from_p(0.0099), Stars::One);
        assert_eq!(Stars::from_p(0.001), Stars::One);
        assert_eq!(Stars::from_p(0.0001), Stars::Two);
        assert_eq!(Stars::from_p(0.00009), Stars::Three);
    }
}
