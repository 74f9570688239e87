//! Canonical CSV input files.
//!
//! | file               | columns                                                  |
//! |--------------------|----------------------------------------------------------|
//! | `stocks.csv`       | country,year,field,sector,sex,age_group,count,flags      |
//! | `inflow.csv`       | country,year,source,count                                |
//! | `population.csv`   | country,scenario,year,population                         |
//! | `sector_split.csv` | country,year,profession,sector,count                     |
//!
//! In `stocks.csv` a row with both `sex` and `age_group` empty is the field
//! total; `flags` is `;`-joined and `b` marks a break in series.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::data_model::{
    validate_dataset, AgeSpec, CohortKey, Country, CountryBundle, FieldId, InflowSeries,
    PopulationProjection, Profession, Sector, SectorAnchors, StockKey, StockTable, Violation,
    SUM_TOLERANCE,
};
use crate::demography::entrant_distribution;

pub const STOCKS_HEADER: [&str; 8] =
    ["country", "year", "field", "sector", "sex", "age_group", "count", "flags"];
pub const INFLOW_HEADER: [&str; 4] = ["country", "year", "source", "count"];
pub const POPULATION_HEADER: [&str; 4] = ["country", "scenario", "year", "population"];
pub const SECTOR_SPLIT_HEADER: [&str; 5] = ["country", "year", "profession", "sector", "count"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceTableKind {
    PhysiciansByAgeSex,
    PhysiciansBySpecialty,
    Graduates,
    WorkforceMigration,
    PopulationProjection,
    SectorSplit,
}

impl SourceTableKind {
    /// Canonical file that carries this source table.
    pub fn canonical_file(self) -> &'static str {
        match self {
            SourceTableKind::PhysiciansByAgeSex | SourceTableKind::PhysiciansBySpecialty => {
                "stocks.csv"
            }
            SourceTableKind::Graduates | SourceTableKind::WorkforceMigration => "inflow.csv",
            SourceTableKind::PopulationProjection => "population.csv",
            SourceTableKind::SectorSplit => "sector_split.csv",
        }
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{file}: {source}")]
    Io { file: String, source: std::io::Error },
    #[error("{file}:{line}: {message}")]
    SchemaError { file: String, line: u64, message: String },
    #[error("{file}:{line}: duplicate key")]
    DuplicateKey { file: String, line: u64 },
    #[error("dataset failed validation: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    ValidationFailed(Vec<Violation>),
    #[error("sector split for {country} needs exactly two anchor years, found {found:?}")]
    AnchorYearMissing { country: Country, found: Vec<i32> },
    #[error("sector split for {country} {profession} {year}: shares sum to {sum}")]
    ShareSumViolation { country: Country, profession: &'static str, year: i32, sum: f64 },
    #[error("no calibration year without a later break in series")]
    NoValidCalibrationYear,
    #[error("country {0} not present in the stock table")]
    UnknownCountry(Country),
}

/// Paths of the canonical files for a dataset directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CanonicalFiles {
    pub stocks: PathBuf,
    pub inflow: PathBuf,
    pub population: PathBuf,
    pub sector_split: Option<PathBuf>,
}

impl CanonicalFiles {
    pub fn in_dir(dir: &Path) -> Self {
        let split = dir.join("sector_split.csv");
        CanonicalFiles {
            stocks: dir.join("stocks.csv"),
            inflow: dir.join("inflow.csv"),
            population: dir.join("population.csv"),
            sector_split: split.exists().then_some(split),
        }
    }

    pub fn all(&self) -> Vec<&Path> {
        let mut v = vec![self.stocks.as_path(), self.inflow.as_path(), self.population.as_path()];
        v.extend(self.sector_split.as_deref());
        v
    }
}

struct Rows {
    file: String,
    reader: csv::Reader<Box<dyn Read>>,
}

impl Rows {
    fn open(path: &Path, header: &[&str]) -> Result<Rows, IngestError> {
        let file = path.display().to_string();
        let handle = File::open(path).map_err(|source| IngestError::Io { file: file.clone(), source })?;
        Rows::from_reader(Box::new(handle), file, header)
    }

    fn from_reader(reader: Box<dyn Read>, file: String, header: &[&str]) -> Result<Rows, IngestError> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let found = reader
            .headers()
            .map_err(|e| IngestError::SchemaError { file: file.clone(), line: 1, message: e.to_string() })?;
        let found: Vec<&str> = found.iter().map(str::trim).collect();
        if found != header {
            return Err(IngestError::SchemaError {
                file,
                line: 1,
                message: format!("expected header `{}`, found `{}`", header.join(","), found.join(",")),
            });
        }
        Ok(Rows { file, reader })
    }

    fn for_each(
        &mut self,
        mut f: impl FnMut(&Cells<'_>) -> Result<(), IngestError>,
    ) -> Result<(), IngestError> {
        let mut record = csv::StringRecord::new();
        loop {
            let more = self.reader.read_record(&mut record).map_err(|e| IngestError::SchemaError {
                file: self.file.clone(),
                line: e.position().map_or(0, |p| p.line()),
                message: e.to_string(),
            })?;
            if !more {
                return Ok(());
            }
            let line = record.position().map_or(0, |p| p.line());
            f(&Cells { file: &self.file, line, record: &record })?;
        }
    }
}

struct Cells<'a> {
    file: &'a str,
    line: u64,
    record: &'a csv::StringRecord,
}

impl Cells<'_> {
    fn err(&self, message: impl Into<String>) -> IngestError {
        IngestError::SchemaError { file: self.file.to_string(), line: self.line, message: message.into() }
    }

    fn duplicate(&self) -> IngestError {
        IngestError::DuplicateKey { file: self.file.to_string(), line: self.line }
    }

    fn text(&self, i: usize) -> &str {
        self.record.get(i).unwrap_or("").trim()
    }

    fn required(&self, i: usize, name: &str) -> Result<&str, IngestError> {
        let t = self.text(i);
        if t.is_empty() {
            return Err(self.err(format!("empty `{name}`")));
        }
        Ok(t)
    }

    fn parse<T: std::str::FromStr>(&self, i: usize, name: &str) -> Result<T, IngestError>
    where
        T::Err: std::fmt::Display,
    {
        self.required(i, name)?
            .parse()
            .map_err(|e| self.err(format!("bad `{name}`: {e}")))
    }

    fn number(&self, i: usize, name: &str) -> Result<f64, IngestError> {
        let v: f64 = self.parse(i, name)?;
        if !v.is_finite() {
            return Err(self.err(format!("`{name}` is not finite")));
        }
        Ok(v)
    }
}

pub fn parse_stocks(path: &Path) -> Result<BTreeMap<Country, StockTable>, IngestError> {
    parse_stocks_rows(Rows::open(path, &STOCKS_HEADER)?)
}

fn parse_stocks_rows(mut rows: Rows) -> Result<BTreeMap<Country, StockTable>, IngestError> {
    let mut out: BTreeMap<Country, StockTable> = BTreeMap::new();
    rows.for_each(|c| {
        let country = Country::new(c.required(0, "country")?);
        let year: i32 = c.parse(1, "year")?;
        let profession: Profession = c.parse(2, "field")?;
        let sector = match c.text(3) {
            "" => None,
            s => Some(s.parse::<Sector>().map_err(|e| c.err(e))?),
        };
        let field = FieldId::new(profession, sector);
        let cohort = match (c.text(4), c.text(5)) {
            ("", "") => None,
            ("", _) | (_, "") => {
                return Err(c.err("`sex` and `age_group` must both be set or both be empty"))
            }
            (sex, age) => Some(CohortKey {
                sex: sex.parse().map_err(|e| c.err(e))?,
                age: age.parse::<AgeSpec>().map_err(|e| c.err(e))?,
            }),
        };
        let count = c.number(6, "count")?;
        let table = out.entry(country.clone()).or_insert_with(|| StockTable::new(country));
        if table.insert(StockKey { field, year, cohort }, count).is_some() {
            return Err(c.duplicate());
        }
        for flag in c.text(7).split(';').map(str::trim).filter(|f| !f.is_empty()) {
            table.add_flag(year, flag);
        }
        Ok(())
    })?;
    Ok(out)
}

pub fn parse_inflow(path: &Path) -> Result<BTreeMap<Country, InflowSeries>, IngestError> {
    let mut rows = Rows::open(path, &INFLOW_HEADER)?;
    let mut out: BTreeMap<Country, InflowSeries> = BTreeMap::new();
    rows.for_each(|c| {
        let country = Country::new(c.required(0, "country")?);
        let year: i32 = c.parse(1, "year")?;
        let count = c.number(3, "count")?;
        let series = out.entry(country.clone()).or_insert_with(|| InflowSeries::new(country));
        let target = match c.required(2, "source")? {
            "GRAD" => &mut series.graduates,
            "MIGR" => &mut series.migrants,
            other => return Err(c.err(format!("unknown source `{other}`"))),
        };
        if target.insert(year, count).is_some() {
            return Err(c.duplicate());
        }
        Ok(())
    })?;
    Ok(out)
}

pub fn parse_population(path: &Path) -> Result<BTreeMap<Country, Vec<PopulationProjection>>, IngestError> {
    let mut rows = Rows::open(path, &POPULATION_HEADER)?;
    let mut acc: BTreeMap<(Country, String), BTreeMap<i32, f64>> = BTreeMap::new();
    rows.for_each(|c| {
        let country = Country::new(c.required(0, "country")?);
        let scenario = c.required(1, "scenario")?.to_string();
        let year: i32 = c.parse(2, "year")?;
        let value = c.number(3, "population")?;
        if acc.entry((country, scenario)).or_default().insert(year, value).is_some() {
            return Err(c.duplicate());
        }
        Ok(())
    })?;
    let mut out: BTreeMap<Country, Vec<PopulationProjection>> = BTreeMap::new();
    for ((country, scenario), values) in acc {
        out.entry(country.clone()).or_default().push(PopulationProjection { country, scenario, values });
    }
    Ok(out)
}

/// Sector counts (or shares) at two anchor years, normalized per profession.
pub fn parse_sector_split(path: &Path) -> Result<BTreeMap<Country, SectorAnchors>, IngestError> {
    let mut rows = Rows::open(path, &SECTOR_SPLIT_HEADER)?;
    let mut acc: BTreeMap<Country, BTreeMap<(i32, Profession, Sector), f64>> = BTreeMap::new();
    rows.for_each(|c| {
        let country = Country::new(c.required(0, "country")?);
        let year: i32 = c.parse(1, "year")?;
        let profession: Profession = c.parse(2, "profession")?;
        let sector: Sector = c.parse(3, "sector")?;
        let count = c.number(4, "count")?;
        if count < 0.0 {
            return Err(c.err("negative sector count"));
        }
        if acc.entry(country).or_default().insert((year, profession, sector), count).is_some() {
            return Err(c.duplicate());
        }
        Ok(())
    })?;
    acc.into_iter()
        .map(|(country, cells)| {
            let anchors = sector_anchors(&country, &cells)?;
            Ok((country, anchors))
        })
        .collect()
}

fn sector_anchors(
    country: &Country,
    cells: &BTreeMap<(i32, Profession, Sector), f64>,
) -> Result<SectorAnchors, IngestError> {
    let years: Vec<i32> = cells.keys().map(|k| k.0).collect::<BTreeSet<_>>().into_iter().collect();
    let [y0, y1] = years[..] else {
        return Err(IngestError::AnchorYearMissing { country: country.clone(), found: years });
    };
    let mut shares: BTreeMap<(Profession, Sector), [f64; 2]> = BTreeMap::new();
    for (anchor, year) in [y0, y1].into_iter().enumerate() {
        for profession in Profession::ALL {
            let counts: Vec<f64> = Sector::ALL
                .iter()
                .map(|s| cells.get(&(year, profession, *s)).copied().unwrap_or(0.0))
                .collect();
            let sum: f64 = counts.iter().sum();
            if !(sum > 0.0) {
                return Err(IngestError::ShareSumViolation {
                    country: country.clone(),
                    profession: profession.code(),
                    year,
                    sum,
                });
            }
            // values already forming a distribution are kept as they are
            let already_shares = (sum - 1.0).abs() <= SUM_TOLERANCE;
            for (sector, count) in Sector::ALL.into_iter().zip(counts) {
                let share = if already_shares { count } else { count / sum };
                shares.entry((profession, sector)).or_insert([0.0; 2])[anchor] = share;
            }
        }
    }
    Ok(SectorAnchors { country: country.clone(), years: [y0, y1], shares })
}

/// Earliest year with data for every field such that no year from it to
/// the last observed year carries a break flag.
pub fn select_calibration_year(stocks: &StockTable) -> Result<i32, IngestError> {
    let years: Vec<i32> = stocks.years().into_iter().collect();
    let fields = stocks.fields();
    let mut last_break = None;
    for &y in &years {
        if stocks.is_break(y) {
            last_break = Some(y);
        }
    }
    years
        .iter()
        .copied()
        .filter(|&y| last_break.is_none_or(|b| y > b))
        .find(|&y| fields.iter().all(|f| stocks.field_total(*f, y).is_some()))
        .ok_or(IngestError::NoValidCalibrationYear)
}

/// Raw tables of every country in a canonical dataset.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub stocks: BTreeMap<Country, StockTable>,
    pub inflow: BTreeMap<Country, InflowSeries>,
    pub populations: BTreeMap<Country, Vec<PopulationProjection>>,
    pub sector_split: BTreeMap<Country, SectorAnchors>,
}

impl Dataset {
    pub fn read(files: &CanonicalFiles) -> Result<Dataset, IngestError> {
        Ok(Dataset {
            stocks: parse_stocks(&files.stocks)?,
            inflow: parse_inflow(&files.inflow)?,
            populations: parse_population(&files.population)?,
            sector_split: match &files.sector_split {
                Some(p) => parse_sector_split(p)?,
                None => BTreeMap::new(),
            },
        })
    }

    pub fn countries(&self) -> impl Iterator<Item = &Country> {
        self.stocks.keys()
    }

    /// Assembles and validates the bundle of one country.
    pub fn bundle(&self, country: &Country) -> Result<CountryBundle, IngestError> {
        let stocks = self
            .stocks
            .get(country)
            .cloned()
            .ok_or_else(|| IngestError::UnknownCountry(country.clone()))?;
        let mut inflow =
            self.inflow.get(country).cloned().unwrap_or_else(|| InflowSeries::new(country.clone()));
        if let Some(last) = stocks.last_year() {
            inflow.entrant_sex_share = entrant_distribution(&stocks, last).ok().map(|d| d.sex_share);
        }
        let bundle = CountryBundle {
            country: country.clone(),
            stocks,
            inflow,
            populations: self.populations.get(country).cloned().unwrap_or_default(),
            sector_split: self.sector_split.get(country).cloned(),
        };
        validate_dataset(bundle).map_err(IngestError::ValidationFailed)
    }
}

/// Reads the canonical files and returns the validated bundle of `country`.
pub fn parse_canonical(files: &CanonicalFiles, country: &Country) -> Result<CountryBundle, IngestError> {
    Dataset::read(files)?.bundle(country)
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> IngestError + '_ {
    move |source| IngestError::Io { file: path.display().to_string(), source }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> IngestError + '_ {
    move |e| IngestError::SchemaError { file: path.display().to_string(), line: 0, message: e.to_string() }
}

fn write_csv(
    path: &Path,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<(), IngestError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(header).map_err(csv_err(path))?;
    for row in rows {
        w.write_record(&row).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

/// Writes bundles in the canonical layout; the inverse of [`Dataset::read`].
pub fn write_canonical(bundles: &[CountryBundle], dir: &Path) -> Result<CanonicalFiles, IngestError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let files = CanonicalFiles {
        stocks: dir.join("stocks.csv"),
        inflow: dir.join("inflow.csv"),
        population: dir.join("population.csv"),
        sector_split: bundles.iter().any(|b| b.sector_split.is_some()).then(|| dir.join("sector_split.csv")),
    };

    let mut stock_rows = Vec::new();
    for b in bundles {
        let s = &b.stocks;
        for (key, count) in &s.entries {
            let flags = s.flags.get(&key.year).map(|f| f.iter().cloned().collect::<Vec<_>>().join(";"));
            let (sex, age) = match key.cohort {
                Some(c) => (c.sex.code().to_string(), c.age.to_string()),
                None => (String::new(), String::new()),
            };
            stock_rows.push(vec![
                s.country.to_string(),
                key.year.to_string(),
                key.field.profession.code().to_string(),
                key.field.sector.map(|x| x.code().to_string()).unwrap_or_default(),
                sex,
                age,
                count.to_string(),
                flags.unwrap_or_default(),
            ]);
        }
    }
    write_csv(&files.stocks, &STOCKS_HEADER, stock_rows)?;

    let mut inflow_rows = Vec::new();
    for b in bundles {
        let i = &b.inflow;
        for (source, series) in [("GRAD", &i.graduates), ("MIGR", &i.migrants)] {
            for (year, v) in series {
                inflow_rows.push(vec![i.country.to_string(), year.to_string(), source.into(), v.to_string()]);
            }
        }
    }
    write_csv(&files.inflow, &INFLOW_HEADER, inflow_rows)?;

    let mut pop_rows = Vec::new();
    for b in bundles {
        for p in &b.populations {
            for (year, v) in &p.values {
                pop_rows.push(vec![p.country.to_string(), p.scenario.clone(), year.to_string(), v.to_string()]);
            }
        }
    }
    write_csv(&files.population, &POPULATION_HEADER, pop_rows)?;

    if let Some(path) = &files.sector_split {
        let mut rows = Vec::new();
        for split in bundles.iter().filter_map(|b| b.sector_split.as_ref()) {
            for ((profession, sector), values) in &split.shares {
                for (year, v) in split.years.iter().zip(values) {
                    rows.push(vec![
                        split.country.to_string(),
                        year.to_string(),
                        profession.code().into(),
                        sector.code().into(),
                        v.to_string(),
                    ]);
                }
            }
        }
        write_csv(path, &SECTOR_SPLIT_HEADER, rows)?;
    }
    Ok(files)
}

/// Writes a JSON or CSV artifact, creating parent directories.
pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), IngestError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let mut f = File::create(path).map_err(io_err(path))?;
    f.write_all(bytes).map_err(io_err(path))
}
