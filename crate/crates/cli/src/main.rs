use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use workforce_core::calibrate::DescentRun;
use workforce_core::demography::{reference_rates, DemographyError, ReferenceDemography};
use workforce_core::forecast::FieldGap;
use workforce_core::ingest::{select_calibration_year, write_canonical, CanonicalFiles, Dataset, IngestError};
use workforce_core::scenario::{combined_additions, Intervention, ScenarioError};
use workforce_core::{
    prepare, CalibrateError, Country, DescentOptions, FieldId, GofMode, ModelKind, Params,
    PipelineError, PreparedModel,
};

const USAGE: u8 = 1;
const DATA: u8 = 2;
const NUMERIC: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "workforce", version, about = "Physician supply forecasts and density gaps")]
struct Cli {
    /// Directory with stocks.csv, inflow.csv, population.csv and optionally sector_split.csv.
    #[arg(long, global = true, default_value = ".")]
    data_dir: PathBuf,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// final-year or all-years
    #[arg(long, global = true, default_value = "final-year")]
    gof: GofMode,
    /// minimal or extended
    #[arg(long, global = true, default_value = "minimal")]
    model: ModelKind,
    /// Country code; may be omitted when the data holds a single country.
    #[arg(long, global = true)]
    country: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate the canonical files and write a normalised copy.
    Ingest,
    /// Fit entry and field-choice probabilities.
    Calibrate(CalibrateArgs),
    /// Write the goodness-of-fit surface of the minimal model.
    Surface {
        #[arg(long, default_value_t = 0.01)]
        grid_step: f64,
    },
    /// Run the model forward and write trajectories, plot data and gaps.
    Forecast(ForecastArgs),
    /// Like forecast, but only writes gaps.json.
    Gaps(ForecastArgs),
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    #[arg(long, default_value_t = 0.01)]
    grid_step: f64,
    /// Start of the extended descent: `uniform` or a params.json file.
    #[arg(long, default_value = "uniform")]
    init: String,
}

#[derive(Debug, Args)]
struct ForecastArgs {
    #[arg(long, default_value_t = 2040)]
    to: i32,
    #[arg(long, default_value = "baseline")]
    scenario: String,
    /// Fitted parameters; defaults to <out-dir>/params.json.
    #[arg(long, conflicts_with_all = ["p_enter", "p_gp"])]
    params: Option<PathBuf>,
    #[arg(long, requires = "p_gp")]
    p_enter: Option<f64>,
    #[arg(long, requires = "p_enter")]
    p_gp: Option<f64>,
    /// Intervention JSON file; repeatable.
    #[arg(long)]
    intervention: Vec<PathBuf>,
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure { code: USAGE, message: message.into() }
    }

    fn data(message: impl Into<String>) -> Self {
        Failure { code: DATA, message: message.into() }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        let code = match &e {
            PipelineError::Calibrate(CalibrateError::InvalidGridStep(_)) => USAGE,
            PipelineError::UnknownScenario(_) => USAGE,
            e if e.is_data_error() => DATA,
            _ => NUMERIC,
        };
        Failure { code, message: e.to_string() }
    }
}

impl From<IngestError> for Failure {
    fn from(e: IngestError) -> Self {
        let message = match &e {
            IngestError::ValidationFailed(vs) => {
                let lines: Vec<String> = vs.iter().map(|v| format!("  {v}")).collect();
                format!("{e}\n{}", lines.join("\n"))
            }
            _ => e.to_string(),
        };
        Failure::data(message)
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        Failure::data(e.to_string())
    }
}

fn io(path: &Path) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |e| Failure::data(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    fs::write(path, bytes).map_err(io(path))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::data(e.to_string()))?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn sha256_file(path: &Path) -> Result<String, Failure> {
    let bytes = fs::read(path).map_err(io(path))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn file_label(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

struct Session {
    files: CanonicalFiles,
    model: PreparedModel,
}

/// Pooled demography of every valid country with age/sex detail.
fn reference(dataset: &Dataset) -> Result<Option<ReferenceDemography>, Failure> {
    let bundles: Vec<_> = dataset.countries().filter_map(|c| dataset.bundle(c).ok()).collect();
    let stocks: Vec<_> = bundles.iter().map(|b| &b.stocks).collect();
    match reference_rates(&stocks) {
        Ok(r) => Ok(Some(r)),
        Err(DemographyError::NoCompleteCountry) => Ok(None),
        Err(e) => Err(Failure::data(e.to_string())),
    }
}

fn pick_country(dataset: &Dataset, wanted: Option<&str>) -> Result<Country, Failure> {
    match wanted {
        Some(code) => Ok(Country::new(code)),
        None => {
            let all: Vec<_> = dataset.countries().collect();
            match all.as_slice() {
                [one] => Ok((*one).clone()),
                [] => Err(Failure::data("no stocks in the data directory")),
                _ => Err(Failure::usage(format!(
                    "data holds {} countries; pick one with --country",
                    all.len()
                ))),
            }
        }
    }
}

fn open(cli: &Cli) -> Result<Session, Failure> {
    let files = CanonicalFiles::in_dir(&cli.data_dir);
    let dataset = Dataset::read(&files)?;
    let country = pick_country(&dataset, cli.country.as_deref())?;
    let bundle = dataset.bundle(&country)?;
    let reference = reference(&dataset)?;
    let model = prepare(&bundle, reference.as_ref(), cli.model)?;
    info!("{country}: calibration year {}, last observed {}", model.t0, model.last_observed);
    Ok(Session { files, model })
}

fn provenance(cli: &Cli, files: &CanonicalFiles, extra: &[PathBuf], parameters: Value) -> Result<Value, Failure> {
    let mut inputs = BTreeMap::new();
    for path in files.all() {
        inputs.insert(file_label(path), sha256_file(path)?);
    }
    for path in extra {
        inputs.insert(format!("intervention:{}", file_label(path)), sha256_file(path)?);
    }
    Ok(json!({
        "tool": concat!("workforce ", env!("CARGO_PKG_VERSION")),
        "inputs": inputs,
        "gof": cli.gof,
        "parameters": parameters,
    }))
}

fn ensure_out_dir(cli: &Cli) -> Result<(), Failure> {
    fs::create_dir_all(&cli.out_dir).map_err(io(&cli.out_dir))
}

#[derive(Serialize)]
struct ParamsFile<'a> {
    country: &'a str,
    model: ModelKind,
    calibration_year: i32,
    p_enter: f64,
    field_choice: &'a BTreeMap<FieldId, f64>,
    chi2: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    grid_step: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    runs: Option<&'a [DescentRun]>,
    provenance: Value,
}

fn read_params(path: &Path) -> Result<(Params, Option<f64>), Failure> {
    let text = fs::read_to_string(path).map_err(io(path))?;
    let value: Value =
        serde_json::from_str(&text).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
    let params: Params = serde_json::from_value(value.clone())
        .map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
    params.validate().map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
    Ok((params, value.get("chi2").and_then(Value::as_f64)))
}

fn uniform_start(fields: &[FieldId]) -> Params {
    let share = 1.0 / fields.len() as f64;
    Params { p_enter: 0.5, field_choice: fields.iter().map(|&f| (f, share)).collect() }
}

fn ingest(cli: &Cli) -> Result<(), Failure> {
    let files = CanonicalFiles::in_dir(&cli.data_dir);
    let dataset = Dataset::read(&files)?;
    let countries: Vec<Country> = match &cli.country {
        Some(c) => vec![Country::new(c)],
        None => dataset.countries().cloned().collect(),
    };
    let mut bundles = Vec::new();
    let mut summary = Vec::new();
    let mut failed = Vec::new();
    for country in &countries {
        match dataset.bundle(country) {
            Ok(b) => {
                let t0 = select_calibration_year(&b.stocks).ok();
                let years = b.stocks.years();
                println!(
                    "{country}: {}-{} calibration year {} detail {} sector split {}",
                    years.first().copied().unwrap_or_default(),
                    years.last().copied().unwrap_or_default(),
                    t0.map_or_else(|| "none".to_string(), |y| y.to_string()),
                    if years.iter().any(|&y| b.stocks.fields().iter().any(|&f| b.stocks.has_detail(f, y))) {
                        "yes"
                    } else {
                        "no"
                    },
                    if b.sector_split.is_some() || b.stocks.is_extended() { "yes" } else { "no" },
                );
                summary.push(json!({
                    "country": country.as_str(),
                    "first_year": years.first(),
                    "last_year": years.last(),
                    "calibration_year": t0,
                }));
                bundles.push(b);
            }
            Err(e) => {
                eprintln!("{}", Failure::from(e).message);
                failed.push(country.as_str().to_string());
            }
        }
    }
    if !failed.is_empty() {
        return Err(Failure::data(format!("validation failed for {}", failed.join(", "))));
    }
    write_canonical(&bundles, &cli.out_dir.join("canonical"))?;
    let prov = provenance(cli, &files, &[], Value::Null)?;
    write_json(&cli.out_dir.join("ingest.json"), &json!({ "countries": summary, "provenance": prov }))
}

fn surface(cli: &Cli, s: &Session, step: f64) -> Result<(f64, f64, f64), Failure> {
    let surface = s.model.grid_search(cli.gof, step)?;
    let mut buf = Vec::new();
    surface.write_csv(&mut buf).map_err(|e| Failure::data(e.to_string()))?;
    write_file(&cli.out_dir.join("surface.csv"), &buf)?;
    Ok((surface.argmin.p_enter, surface.argmin.gp_share(), surface.min_chi2))
}

fn calibrate(cli: &Cli, args: &CalibrateArgs) -> Result<(), Failure> {
    let s = open(cli)?;
    ensure_out_dir(cli)?;
    let country = s.model.country.as_str();
    let path = cli.out_dir.join("params.json");
    match cli.model {
        ModelKind::Minimal => {
            let (p_enter, p_gp, chi2) = surface(cli, &s, args.grid_step)?;
            let params = Params::minimal(p_enter, p_gp).map_err(|e| Failure { code: NUMERIC, message: e.to_string() })?;
            println!("{country}: p_enter {p_enter} p_GP {p_gp} chi2 {chi2:.6e}");
            let prov = provenance(cli, &s.files, &[], json!({ "grid_step": args.grid_step }))?;
            write_json(
                &path,
                &ParamsFile {
                    country,
                    model: cli.model,
                    calibration_year: s.model.t0,
                    p_enter,
                    field_choice: &params.field_choice,
                    chi2,
                    grid_step: Some(args.grid_step),
                    runs: None,
                    provenance: prov,
                },
            )
        }
        ModelKind::Extended => {
            let start = match args.init.as_str() {
                "uniform" => uniform_start(&s.model.layout.fields),
                file => read_params(Path::new(file))?.0,
            };
            let fit = s.model.calibrate_extended(cli.gof, &start, &DescentOptions::default())?;
            println!("{country}: p_enter {:.6} chi2 {:.6e}", fit.params.p_enter, fit.chi2);
            for (field, p) in &fit.params.field_choice {
                println!("  {field}: {p:.6}");
            }
            let prov = provenance(cli, &s.files, &[], json!({ "init": start }))?;
            write_json(
                &path,
                &ParamsFile {
                    country,
                    model: cli.model,
                    calibration_year: s.model.t0,
                    p_enter: fit.params.p_enter,
                    field_choice: &fit.params.field_choice,
                    chi2: fit.chi2,
                    grid_step: None,
                    runs: Some(&fit.runs),
                    provenance: prov,
                },
            )
        }
    }
}

fn print_gap(g: &FieldGap) {
    println!(
        "  {:<8} DG {:>8.4}  SD {:>7.4}  p {:.2e} {:<3}  model {:>9.1}  needed {:>9.1}",
        g.field,
        g.dg,
        g.sd,
        g.p,
        g.stars.as_str(),
        g.model,
        g.isodensity
    );
}

fn forecast(cli: &Cli, args: &ForecastArgs, full: bool) -> Result<(), Failure> {
    let s = open(cli)?;
    ensure_out_dir(cli)?;
    let (params, chi2) = match (args.p_enter, args.p_gp, &args.params) {
        (Some(pe), Some(pg), _) => {
            if cli.model != ModelKind::Minimal {
                return Err(Failure::usage("--p-enter/--p-gp only apply to the minimal model"));
            }
            (Params::minimal(pe, pg).map_err(|e| Failure::usage(e.to_string()))?, None)
        }
        (_, _, Some(path)) => read_params(path)?,
        _ => {
            let default = cli.out_dir.join("params.json");
            if !default.exists() {
                return Err(Failure::usage("no parameters: pass --params, --p-enter/--p-gp or run calibrate first"));
            }
            read_params(&default)?
        }
    };
    let expected: Vec<FieldId> = s.model.layout.fields.clone();
    if params.field_choice.keys().copied().collect::<Vec<_>>() != expected {
        return Err(Failure::usage(format!("parameters do not match the {:?} model fields", cli.model)));
    }
    if args.to <= s.model.last_observed {
        return Err(Failure::usage(format!("--to must be after {}", s.model.last_observed)));
    }
    let interventions = args
        .intervention
        .iter()
        .map(|p| Intervention::load(p))
        .collect::<Result<Vec<_>, _>>()?;
    let additions = combined_additions(&interventions, s.model.last_observed + 1..=args.to);
    if !interventions.is_empty() && additions.is_empty() {
        warn!("interventions add nothing between {} and {}", s.model.last_observed + 1, args.to);
    }

    let out = s.model.forecast(&params, chi2, args.to, &additions, &args.scenario)?;
    for w in &out.plan.warnings {
        warn!("{w}");
    }
    let mut report = out.report.clone();
    report.provenance = Some(provenance(
        cli,
        &s.files,
        &args.intervention,
        json!({
            "params": params,
            "scenario": args.scenario,
            "horizon": args.to,
            "interventions": interventions.iter().map(|i| &i.name).collect::<Vec<_>>(),
        }),
    )?);
    write_json(&cli.out_dir.join("gaps.json"), &report)?;

    println!("{} {} {} -> {}", report.country, args.scenario, report.base_year, report.horizon);
    report.fields.iter().chain(&report.professions).for_each(print_gap);
    print_gap(&report.aggregate);

    if full {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Failure::data(e.to_string());
        w.write_record(["year", "window", "field", "total"]).map_err(csv_err)?;
        for year in out.trajectory.years() {
            let window = out.trajectory.window(year).map(|w| w.label()).unwrap_or_default();
            for &field in &expected {
                let total = out.trajectory.field_total(field, year).unwrap_or(f64::NAN);
                w.write_record([year.to_string(), window.to_string(), field.to_string(), total.to_string()])
                    .map_err(csv_err)?;
            }
        }
        let bytes = w.into_inner().map_err(|e| Failure::data(e.to_string()))?;
        write_file(&cli.out_dir.join("trajectory.csv"), &bytes)?;

        for (field, rows) in &out.series {
            let mut w = csv::Writer::from_writer(Vec::new());
            for row in rows {
                w.serialize(row).map_err(csv_err)?;
            }
            let bytes = w.into_inner().map_err(|e| Failure::data(e.to_string()))?;
            let name = format!("plot_{}.csv", field.to_string().replace('/', "-"));
            write_file(&cli.out_dir.join(name), &bytes)?;
        }
    }
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Ingest => ingest(cli),
        Command::Calibrate(args) => calibrate(cli, args),
        Command::Surface { grid_step } => {
            if cli.model != ModelKind::Minimal {
                return Err(Failure::usage("the surface is only defined for the minimal model"));
            }
            let s = open(cli)?;
            ensure_out_dir(cli)?;
            let (pe, pg, chi2) = surface(cli, &s, *grid_step)?;
            println!("{}: minimum at p_enter {pe} p_GP {pg} chi2 {chi2:.6e}", s.model.country);
            Ok(())
        }
        Command::Forecast(args) => forecast(cli, args, true),
        Command::Gaps(args) => forecast(cli, args, false),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
