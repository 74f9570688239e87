//! Stock-flow-consistent forecasting of physician supply.
//!
//! Observed stocks by field, sex and age are turned into net exit rates,
//! an entry probability and field-choice probabilities are calibrated
//! against historical field totals, and the model is run forward to compare
//! supply with the numbers needed to hold physician density constant.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibrate;
pub mod data_model;
pub mod demography;
pub mod engine;
pub mod forecast;
pub mod ingest;
pub mod pipeline;
pub mod scenario;

pub use calibrate::{
    calibrate_extended, gof_chi2, grid_search, project_simplex, CalibrateError,
    CalibrationProblem, DescentOptions, ExtendedFit, GofMode, GofSurface,
};
pub use data_model::{
    validate_dataset, AgeGroup, AgeSpec, CohortKey, Country, CountryBundle, ExitRates, FieldId,
    InflowSeries, ObservedTotals, Params, ParamsError, PopulationProjection, Profession, Sector,
    SectorAnchors, Sex, SexShares, StockKey, StockTable, Violation,
};
pub use engine::{
    init_state, run, step, step_with_flows, CohortInflow, CohortRates, InflowPlan, Layout,
    ModelState, Trajectory, Window,
};
pub use forecast::{
    density_gap, forecast_sd, gap_significance, isodensity, validation_rmse, GapReport,
    IsodensityLine, ModelKind,
};
pub use pipeline::{prepare, ForecastOutput, PipelineError, PreparedModel};
