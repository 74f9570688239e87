//! Estimation of `p_enter` and the field-choice probabilities by minimizing a
//! weighted chi-squared distance between modelled and observed field totals.

use std::collections::BTreeMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::data_model::{FieldId, ObservedTotals, Params, ParamsError};
use crate::engine::{
    run_with_inflows, CohortInflow, CohortRates, EngineError, InflowPlan, ModelState, Trajectory,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibrateError {
    #[error("observed total of {field} in {year} is zero")]
    ZeroObservedTotal { field: FieldId, year: i32 },
    #[error("no observed total for {field} in {year}")]
    MissingObservation { field: FieldId, year: i32 },
    #[error("year {0} is not covered by the trajectory")]
    YearNotSimulated(i32),
    #[error("grid step {0} does not divide 1")]
    InvalidGridStep(f64),
    #[error("grid search needs the two-field minimal model")]
    NotMinimal,
    #[error("extended calibration needs six sector fields")]
    NotExtended,
    #[error("objective is not finite ({0})")]
    NonFinite(f64),
    #[error("no evaluation years")]
    NoEvalYears,
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Params(#[from] ParamsError),
}

/// Which observed years enter the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum GofMode {
    /// Only the last observed year.
    #[default]
    FinalYear,
    /// Every observed year from the calibration year on, summed.
    AllYears,
}

impl std::str::FromStr for GofMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "final-year" => Ok(GofMode::FinalYear),
            "all-years" => Ok(GofMode::AllYears),
            other => Err(format!("unknown gof mode `{other}`")),
        }
    }
}

impl GofMode {
    pub fn eval_years(self, t0: i32, last_observed: i32) -> Vec<i32> {
        match self {
            GofMode::FinalYear => vec![last_observed],
            GofMode::AllYears => (t0..=last_observed).collect(),
        }
    }
}

/// `sum_i w_i ((Z_i - M_i) / Z_i)^2` with `w_i = Z_i / sum_j Z_j`, summed over
/// `eval_years`.
pub fn gof_chi2(
    trajectory: &Trajectory,
    observed: &ObservedTotals,
    eval_years: &[i32],
) -> Result<f64, CalibrateError> {
    let fields = &trajectory.layout().fields;
    let mut chi2 = 0.0;
    for &year in eval_years {
        let state = trajectory.state(year).ok_or(CalibrateError::YearNotSimulated(year))?;
        let mut z = Vec::with_capacity(fields.len());
        for &field in fields {
            let v = observed
                .get(field, year)
                .ok_or(CalibrateError::MissingObservation { field, year })?;
            if v == 0.0 {
                return Err(CalibrateError::ZeroObservedTotal { field, year });
            }
            z.push(v);
        }
        let z_sum: f64 = z.iter().sum();
        for ((&field, zi), mi) in fields.iter().zip(&z).zip(state.totals()) {
            debug_assert_eq!(state.field_total(field), mi);
            let w = zi / z_sum;
            let r = (zi - mi) / zi;
            chi2 += w * r * r;
        }
    }
    Ok(chi2)
}

/// A fixed calibration setting: everything except the parameters.
#[derive(Debug, Clone)]
pub struct CalibrationProblem {
    pub init: ModelState,
    pub rates: CohortRates,
    inflows: Vec<CohortInflow>,
    pub observed: ObservedTotals,
    pub eval_years: Vec<i32>,
    pub last_observed: i32,
}

impl CalibrationProblem {
    pub fn new(
        init: ModelState,
        rates: CohortRates,
        plan: &InflowPlan,
        observed: ObservedTotals,
        mode: GofMode,
    ) -> Result<Self, CalibrateError> {
        let t0 = init.year;
        let last_observed = plan.last_observed;
        let eval_years: Vec<i32> = mode
            .eval_years(t0, last_observed)
            .into_iter()
            .filter(|y| mode == GofMode::FinalYear || observed.years().contains(y))
            .collect();
        if eval_years.is_empty() {
            return Err(CalibrateError::NoEvalYears);
        }
        for &year in &eval_years {
            for &field in &init.layout().fields {
                match observed.get(field, year) {
                    None => return Err(CalibrateError::MissingObservation { field, year }),
                    Some(0.0) => {
                        return Err(CalibrateError::ZeroObservedTotal { field, year })
                    }
                    Some(_) => {}
                }
            }
        }
        let inflows = plan.cohort_inflows(t0, last_observed, init.layout())?;
        Ok(CalibrationProblem { init, rates, inflows, observed, eval_years, last_observed })
    }

    pub fn fields(&self) -> &[FieldId] {
        &self.init.layout().fields
    }

    pub fn trajectory(&self, params: &Params) -> Trajectory {
        run_with_inflows(&self.init, params, &self.rates, &self.inflows, self.last_observed)
    }

    pub fn chi2(&self, params: &Params) -> Result<f64, CalibrateError> {
        gof_chi2(&self.trajectory(params), &self.observed, &self.eval_years)
    }
}

/// Chi-squared values over the `(p_enter, p_GP)` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GofSurface {
    /// Number of intervals per axis; grid values are `k / divisions`.
    pub divisions: usize,
    /// Row-major: `values[i * (divisions + 1) + j]` is at `(i/n, j/n)`.
    pub values: Vec<f64>,
    pub argmin: Params,
    pub min_chi2: f64,
}

impl GofSurface {
    pub fn coordinate(&self, k: usize) -> f64 {
        k as f64 / self.divisions as f64
    }

    pub fn get(&self, i_enter: usize, j_gp: usize) -> f64 {
        self.values[i_enter * (self.divisions + 1) + j_gp]
    }

    /// `(p_enter, p_GP, chi2)` in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        let m = self.divisions + 1;
        self.values.iter().enumerate().map(move |(k, &v)| {
            (self.coordinate(k / m), self.coordinate(k % m), v)
        })
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["p_enter", "p_GP", "chi2"])?;
        for (pe, pg, v) in self.iter() {
            w.write_record([pe.to_string(), pg.to_string(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn grid_divisions(step: f64) -> Result<usize, CalibrateError> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(CalibrateError::InvalidGridStep(step));
    }
    let n = (1.0 / step).round();
    if (n * step - 1.0).abs() > 1e-9 {
        return Err(CalibrateError::InvalidGridStep(step));
    }
    Ok(n as usize)
}

fn minimal_params(p_enter: f64, p_gp: f64) -> Params {
    Params {
        p_enter,
        field_choice: BTreeMap::from([(FieldId::GP, p_gp), (FieldId::SP, 1.0 - p_gp)]),
    }
}

/// Exhaustive search over `[0, 1]^2` at `step`; ties go to the smaller
/// `p_enter`, then the smaller `p_GP`.
pub fn grid_search(problem: &CalibrationProblem, step: f64) -> Result<GofSurface, CalibrateError> {
    if problem.fields() != FieldId::minimal().as_slice() {
        return Err(CalibrateError::NotMinimal);
    }
    let n = grid_divisions(step)?;
    let m = n + 1;
    let values = (0..m * m)
        .into_par_iter()
        .map(|k| {
            let params = minimal_params((k / m) as f64 / n as f64, (k % m) as f64 / n as f64);
            problem.chi2(&params)
        })
        .collect::<Result<Vec<f64>, _>>()?;
    let mut best: Option<(usize, f64)> = None;
    for (k, &v) in values.iter().enumerate() {
        if !v.is_finite() {
            continue;
        }
        if best.is_none_or(|(_, b)| v < b) {
            best = Some((k, v));
        }
    }
    let (k, min_chi2) = best.ok_or(CalibrateError::NonFinite(f64::NAN))?;
    let argmin = minimal_params((k / m) as f64 / n as f64, (k % m) as f64 / n as f64);
    Ok(GofSurface { divisions: n, values, argmin, min_chi2 })
}

/// Euclidean projection onto `{x : x >= 0, sum x = 1}`.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        cumsum += ui;
        let t = (cumsum - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        }
    }
    let mut x: Vec<f64> = v.iter().map(|&vi| (vi - theta).max(0.0)).collect();
    // one more normalization pass removes the rounding left by the threshold
    let s: f64 = x.iter().sum();
    if s > 0.0 {
        x.iter_mut().for_each(|xi| *xi /= s);
    }
    x
}

/// Settings for the extended-model descent.
#[derive(Debug, Clone, PartialEq)]
pub struct DescentOptions {
    pub fd_step: f64,
    pub rel_tol: f64,
    pub max_iter: usize,
    /// Seeds of the random restarts; the caller's start is always tried first.
    pub seeds: Vec<u64>,
}

impl Default for DescentOptions {
    fn default() -> Self {
        DescentOptions { fd_step: 1e-4, rel_tol: 1e-8, max_iter: 10_000, seeds: vec![1, 2, 3, 4] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DescentRun {
    pub start_chi2: f64,
    pub end_chi2: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedFit {
    pub params: Params,
    pub chi2: f64,
    pub runs: Vec<DescentRun>,
}

struct Objective<'a> {
    problem: &'a CalibrationProblem,
    fields: &'a [FieldId],
}

impl Objective<'_> {
    fn params(&self, x: &[f64]) -> Params {
        Params {
            p_enter: x[0],
            field_choice: self.fields.iter().copied().zip(x[1..].iter().copied()).collect(),
        }
    }

    fn eval(&self, x: &[f64]) -> f64 {
        self.problem.chi2(&self.params(x)).unwrap_or(f64::NAN)
    }

    fn gradient(&self, x: &[f64], fx: f64, h: f64) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        let mut probe = x.to_vec();
        for j in 0..x.len() {
            let (lo, hi) = (x[j] - h, x[j] + h);
            g[j] = if lo < 0.0 {
                probe[j] = hi;
                let fp = self.eval(&probe);
                (fp - fx) / h
            } else if hi > 1.0 {
                probe[j] = lo;
                let fm = self.eval(&probe);
                (fx - fm) / h
            } else {
                probe[j] = hi;
                let fp = self.eval(&probe);
                probe[j] = lo;
                let fm = self.eval(&probe);
                (fp - fm) / (2.0 * h)
            };
            probe[j] = x[j];
        }
        g
    }

    fn project(&self, x: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(x.len());
        out.push(x[0].clamp(0.0, 1.0));
        out.extend(project_simplex(&x[1..]));
        out
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn descend(obj: &Objective<'_>, start: Vec<f64>, opts: &DescentOptions) -> (Vec<f64>, f64, usize) {
    const ARMIJO: f64 = 1e-4;
    const MAX_HALVINGS: usize = 60;
    let mut x = start;
    let mut f = obj.eval(&x);
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut iterations = 0;
    while iterations < opts.max_iter && f > 0.0 && f.is_finite() {
        iterations += 1;
        let g = obj.gradient(&x, f, opts.fd_step);
        let g_inf = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !(g_inf > 0.0) {
            break;
        }
        // Barzilai-Borwein guess for the first trial step
        let mut eta = match &prev {
            Some((px, pg)) => {
                let s: Vec<f64> = x.iter().zip(px).map(|(a, b)| a - b).collect();
                let y: Vec<f64> = g.iter().zip(pg).map(|(a, b)| a - b).collect();
                let sy = dot(&s, &y);
                if sy > 0.0 {
                    dot(&s, &s) / sy
                } else {
                    0.1 / g_inf
                }
            }
            None => 0.1 / g_inf,
        };
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let trial: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi - eta * gi).collect();
            let cand = obj.project(&trial);
            let d: Vec<f64> = cand.iter().zip(&x).map(|(c, xi)| c - xi).collect();
            if d.iter().all(|v| *v == 0.0) {
                break;
            }
            let fc = obj.eval(&cand);
            if fc.is_finite() && fc <= f + ARMIJO * dot(&g, &d) {
                accepted = Some((cand, fc));
                break;
            }
            eta *= 0.5;
        }
        let Some((cand, fc)) = accepted else { break };
        let improvement = (f - fc) / f;
        prev = Some((std::mem::replace(&mut x, cand), g));
        f = fc;
        if improvement < opts.rel_tol {
            break;
        }
    }
    (x, f, iterations)
}

fn random_start(fields: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Vec::with_capacity(fields + 1);
    x.push(rng.gen_range(0.05..1.0));
    let e: Vec<f64> = (0..fields).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
    let s: f64 = e.iter().sum();
    x.extend(e.iter().map(|v| v / s));
    x
}

/// Projected gradient descent on `(p_enter, P)` for the six-field model.
///
/// Gradients are central finite differences (one-sided at the box bounds);
/// steps use a backtracking line search and are projected back: `p_enter`
/// is clipped to `[0, 1]`, `P` is projected onto the probability simplex.
/// The best result over the caller's start and the seeded restarts is kept.
pub fn calibrate_extended(
    problem: &CalibrationProblem,
    init: &Params,
    opts: &DescentOptions,
) -> Result<ExtendedFit, CalibrateError> {
    let fields = problem.fields();
    if fields.len() != 6 || fields.iter().any(|f| f.sector.is_none()) {
        return Err(CalibrateError::NotExtended);
    }
    init.validate()?;
    let obj = Objective { problem, fields };
    let mut x0 = vec![init.p_enter];
    x0.extend(fields.iter().map(|f| init.choice(*f)));
    let f0 = obj.eval(&x0);
    if !f0.is_finite() {
        return Err(CalibrateError::NonFinite(f0));
    }
    let mut starts = vec![x0];
    starts.extend(opts.seeds.iter().map(|&s| random_start(fields.len(), s)));
    let results: Vec<(Vec<f64>, f64, DescentRun)> = starts
        .into_par_iter()
        .map(|start| {
            let start_chi2 = obj.eval(&start);
            let (x, f, iterations) = descend(&obj, start, opts);
            (x, f, DescentRun { start_chi2, end_chi2: f, iterations })
        })
        .collect();
    let mut best = 0;
    for (k, r) in results.iter().enumerate() {
        if r.1 < results[best].1 {
            best = k;
        }
    }
    let chi2 = results[best].1;
    let params = obj.params(&results[best].0);
    params.validate()?;
    Ok(ExtendedFit { params, chi2, runs: results.into_iter().map(|r| r.2).collect() })
}
