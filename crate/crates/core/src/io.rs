//! Price ingestion, log-return conversion, run configuration and atomic
//! result persistence.

use std::collections::HashSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecast::BacktestReport;
use crate::garch::{
    ContaminationSpec, GarchOrder, GarchParams, InnovationDist, Origin, ReturnSeries, SimulationOptions,
};
use crate::inference::{EstimationSettings, OptimizerConfig, PosteriorDraws, SamplerConfig};
use crate::objective::Gamma;
use crate::prior::PriorSpec;

/// Dated closing prices, sorted by date.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSeries {
    pub dates: Vec<String>,
    pub prices: Vec<f64>,
    /// Rows skipped because the price cell was empty.
    pub dropped_rows: usize,
    pub source: Option<String>,
}

impl PriceSeries {
    pub fn len(&self) -> usize {
        self.prices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prices.is_empty()
    }
}

fn column_index(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::Ingestion { row: 0, message: format!("no column named {name:?} in header") })
}

/// Reads a headered CSV of dates and prices. Rows are numbered from 1 after
/// the header. Empty price cells are dropped and counted; anything else that
/// is not a positive number, and repeated dates, are errors.
pub fn load_prices(path: impl AsRef<Path>, date_column: &str, price_column: &str) -> Result<PriceSeries> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_path(path)?;
    let headers = reader.headers()?.clone();
    let di = column_index(&headers, date_column)?;
    let pi = column_index(&headers, price_column)?;

    let mut rows: Vec<(String, f64)> = Vec::new();
    let mut seen = HashSet::new();
    let mut dropped = 0;
    for (i, rec) in reader.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| Error::Ingestion { row, message: e.to_string() })?;
        let date = rec.get(di).unwrap_or("").trim().to_string();
        let cell = rec.get(pi).unwrap_or("").trim();
        if cell.is_empty() || cell.eq_ignore_ascii_case("null") || cell.eq_ignore_ascii_case("na") {
            dropped += 1;
            continue;
        }
        let price: f64 =
            cell.parse().map_err(|_| Error::Ingestion { row, message: format!("unparseable price {cell:?}") })?;
        if !(price > 0.0) || !price.is_finite() {
            return Err(Error::Ingestion { row, message: format!("price must be positive, got {cell}") });
        }
        if date.is_empty() {
            return Err(Error::Ingestion { row, message: "empty date".into() });
        }
        if !seen.insert(date.clone()) {
            return Err(Error::Ingestion { row, message: format!("duplicate date {date}") });
        }
        rows.push((date, price));
    }
    rows.sort_by(|a, b| a.0.cmp(&b.0));
    let (dates, prices) = rows.into_iter().unzip();
    Ok(PriceSeries { dates, prices, dropped_rows: dropped, source: Some(path.display().to_string()) })
}

/// Percent log-returns 100 * ln(P_t / P_{t-1}).
pub fn to_log_returns(prices: &PriceSeries) -> Result<ReturnSeries> {
    if prices.len() < 2 {
        return Err(Error::Input(format!("need at least two prices, got {}", prices.len())));
    }
    let values = prices.prices.windows(2).map(|w| 100.0 * (w[1].ln() - w[0].ln())).collect();
    let origin = match &prices.source {
        Some(p) => Origin::Ingested { path: p.clone() },
        None => Origin::InMemory,
    };
    ReturnSeries::with_origin(values, origin)
}

/// Reads one numeric column of a headered CSV as a return series.
pub fn load_returns(path: impl AsRef<Path>, column: &str) -> Result<ReturnSeries> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path)?;
    let ci = column_index(&reader.headers()?.clone(), column)?;
    let mut values = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| Error::Ingestion { row, message: e.to_string() })?;
        let cell = rec.get(ci).unwrap_or("").trim();
        let v: f64 =
            cell.parse().map_err(|_| Error::Ingestion { row, message: format!("unparseable value {cell:?}") })?;
        if !v.is_finite() {
            return Err(Error::Ingestion { row, message: format!("non-finite value {cell}") });
        }
        values.push(v);
    }
    ReturnSeries::with_origin(values, Origin::Ingested { path: path.display().to_string() })
}

/// Writes `bytes` to a temporary file next to `path`, then renames it into place.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn csv_bytes(header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// `t,return` with one row per observation.
pub fn write_returns_csv(path: impl AsRef<Path>, series: &ReturnSeries) -> Result<()> {
    let header = vec!["t".to_string(), "return".to_string()];
    let rows = series.values().iter().enumerate().map(|(t, v)| vec![t.to_string(), v.to_string()]);
    write_atomic(path, &csv_bytes(&header, rows)?)
}

fn param_names(order: GarchOrder) -> Vec<String> {
    let mut names = vec!["omega".to_string()];
    names.extend((1..=order.p).map(|i| format!("alpha{i}")));
    names.extend((1..=order.q).map(|j| format!("beta{j}")));
    names
}

/// `chain,iteration,omega,alpha1..,beta1..`.
pub fn write_draws_csv(path: impl AsRef<Path>, draws: &PosteriorDraws) -> Result<()> {
    let order = draws.draws.iter().flatten().next().map_or(GarchOrder::garch11(), |p| p.order());
    let mut header = vec!["chain".to_string(), "iteration".to_string()];
    header.extend(param_names(order));
    let rows = draws.draws.iter().enumerate().flat_map(|(c, chain)| {
        chain.iter().enumerate().map(move |(i, p)| {
            let mut row = vec![c.to_string(), i.to_string()];
            row.extend(p.to_vec().iter().map(|v| v.to_string()));
            row
        })
    });
    write_atomic(path, &csv_bytes(&header, rows)?)
}

/// Reads a draws CSV written by [`write_draws_csv`] back into
/// `[chain][iteration][parameter]`.
pub fn read_draws_matrix(path: impl AsRef<Path>) -> Result<Vec<Vec<Vec<f64>>>> {
    let mut reader = csv::Reader::from_path(path.as_ref())?;
    let width = reader.headers()?.len();
    if width < 3 {
        return Err(Error::Ingestion { row: 0, message: "expected chain, iteration and parameter columns".into() });
    }
    let mut chains: Vec<Vec<Vec<f64>>> = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| Error::Ingestion { row, message: e.to_string() })?;
        let chain: usize =
            rec[0].trim().parse().map_err(|_| Error::Ingestion { row, message: "bad chain index".into() })?;
        let values = (2..width)
            .map(|k| rec[k].trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::Ingestion { row, message: "unparseable draw".into() })?;
        if chains.len() <= chain {
            chains.resize(chain + 1, Vec::new());
        }
        chains[chain].push(values);
    }
    Ok(chains)
}

/// Per-day forecasts: `t,return,sigma2_hat,var_hat,violated`.
pub fn write_forecast_csv(path: impl AsRef<Path>, report: &BacktestReport) -> Result<()> {
    let header: Vec<String> =
        ["t", "return", "sigma2_hat", "var_hat", "violated"].iter().map(|s| s.to_string()).collect();
    let rows = report.points.iter().map(|p| {
        vec![
            p.t.to_string(),
            p.realized_return.to_string(),
            p.sigma2_hat.to_string(),
            p.var_hat.to_string(),
            (p.violated() as u8).to_string(),
        ]
    });
    write_atomic(path, &csv_bytes(&header, rows)?)
}

/// Where a run's returns come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSource {
    pub path: PathBuf,
    /// `returns` reads `return_column` directly; `prices` converts
    /// `price_column` (sorted by `date_column`) into percent log-returns.
    #[serde(default)]
    pub kind: DataKind,
    #[serde(default = "default_date_column")]
    pub date_column: String,
    #[serde(default = "default_price_column")]
    pub price_column: String,
    #[serde(default = "default_return_column")]
    pub return_column: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DataKind {
    #[default]
    Returns,
    Prices,
}

fn default_date_column() -> String {
    "date".into()
}
fn default_price_column() -> String {
    "close".into()
}
fn default_return_column() -> String {
    "return".into()
}

impl DataSource {
    pub fn returns(path: impl Into<PathBuf>) -> Self {
        Self {
            path: path.into(),
            kind: DataKind::Returns,
            date_column: default_date_column(),
            price_column: default_price_column(),
            return_column: default_return_column(),
        }
    }

    pub fn load(&self) -> Result<ReturnSeries> {
        match self.kind {
            DataKind::Returns => load_returns(&self.path, &self.return_column),
            DataKind::Prices => to_log_returns(&load_prices(&self.path, &self.date_column, &self.price_column)?),
        }
    }
}

/// Simulated data for a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationBlock {
    pub theta: GarchParams,
    pub n: usize,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    #[serde(default)]
    pub innovation: InnovationDist,
    #[serde(default)]
    pub contamination: ContaminationSpec,
    /// Defaults to the run seed.
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_burn_in() -> usize {
    1000
}

impl SimulationBlock {
    pub fn generate(&self, run_seed: u64) -> Result<ReturnSeries> {
        let opts = SimulationOptions {
            burn_in: self.burn_in,
            dist: self.innovation,
            contamination: self.contamination,
            seed: self.seed.unwrap_or(run_seed),
            allow_nonstationary: false,
        };
        crate::garch::simulate(&self.theta, self.n, &opts)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BacktestBlock {
    /// First out-of-sample index.
    pub split_index: usize,
    #[serde(default = "default_refit")]
    pub refit_every: usize,
    #[serde(default = "default_level")]
    pub level: f64,
}

fn default_refit() -> usize {
    1
}
fn default_level() -> f64 {
    0.05
}

/// Everything a CLI run can be configured with from a JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub order: Option<GarchOrder>,
    pub prior: PriorSpec,
    pub sampler: SamplerConfig,
    pub optimizer: OptimizerConfig,
    pub gamma: Option<Gamma>,
    pub grid: Option<Vec<Gamma>>,
    pub data: Option<DataSource>,
    pub simulation: Option<SimulationBlock>,
    pub backtest: Option<BacktestBlock>,
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
}

impl RunConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        if cfg.data.is_some() && cfg.simulation.is_some() {
            return Err(Error::Input("config sets both `data` and `simulation`; choose one".into()));
        }
        if let Some(o) = cfg.order {
            GarchOrder::new(o.p, o.q)?;
        }
        cfg.prior.validate()?;
        cfg.sampler.validate()?;
        Ok(cfg)
    }

    pub fn settings(&self) -> EstimationSettings {
        EstimationSettings { prior: self.prior, sampler: self.sampler.clone(), optimizer: self.optimizer.clone() }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    /// The series the run operates on; exactly one source must be set.
    pub fn series(&self, run_seed: u64) -> Result<ReturnSeries> {
        match (&self.data, &self.simulation) {
            (Some(d), None) => d.load(),
            (None, Some(s)) => s.generate(run_seed),
            (Some(_), Some(_)) => Err(Error::Input("config sets both `data` and `simulation`; choose one".into())),
            (None, None) => Err(Error::Input("no data source: set `data` or `simulation`".into())),
        }
    }
}
