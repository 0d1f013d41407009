//! Dataset ingestion, dataset summaries and experiment orchestration.
//!
//! The interchange format is long CSV with one `item_id,period,demand` row per
//! observation. Wide CSV (one row per item) can be read but not written.
//! Event data is `item_id,timestamp,quantity` with real or ISO-8601 times.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{croston_forecast, sba_forecast, tsb_forecast, zeros_forecast, DEFAULT_ALPHA};
use crate::metrics::{evaluate, sbc_classify, squared_cv, EvaluationInput, MetricsReport, RmsseVariant, SbcThresholds};
use crate::models::{fit, sample_paths, ModelTemplate, Modulation, RnnConfig, SampleConfig, DEFAULT_PATHS};
use crate::pointprocess::EventSeries;
use crate::series::{decompose, DemandSeries, DEFAULT_DEMAND_CAP};
use crate::synthgen::{generate, GeneratorSpec};
use crate::{rng, Error, Result};

/// A problem with one input row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowDiagnostic {
    /// 1-based line number in the file.
    pub line: usize,
    pub item_id: Option<String>,
    pub message: String,
}

impl std::fmt::Display for RowDiagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.item_id {
            Some(id) => write!(f, "line {} (item `{id}`): {}", self.line, self.message),
            None => write!(f, "line {}: {}", self.line, self.message),
        }
    }
}

/// Parsed items plus the rows that were rejected. Items with any rejected
/// row are left out of `items`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ingested<T> {
    pub items: Vec<T>,
    pub diagnostics: Vec<RowDiagnostic>,
}

impl<T> Ingested<T> {
    /// The items, or a parse error listing every diagnostic.
    pub fn strict(self) -> Result<Vec<T>> {
        if self.diagnostics.is_empty() {
            Ok(self.items)
        } else {
            let lines: Vec<String> = self.diagnostics.iter().map(|d| d.to_string()).collect();
            Err(Error::Parse(lines.join("; ")))
        }
    }
}

fn csv_reader<R: Read>(reader: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader)
}

/// Reads every record with its line number; a leading row whose `probe`
/// column is not numeric is taken as a header.
fn records<R: Read>(reader: R, probe: usize) -> Result<Vec<(usize, csv::StringRecord)>> {
    let mut out = Vec::new();
    for (i, rec) in csv_reader(reader).records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
        let line = rec.position().map_or(i + 1, |p| p.line() as usize);
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        if out.is_empty() && i == 0 && rec.get(probe).is_some_and(|f| f.parse::<f64>().is_err()) {
            let looks_like_time = rec.get(probe).is_some_and(|f| parse_time(f).is_some());
            if !looks_like_time {
                continue;
            }
        }
        out.push((line, rec));
    }
    if out.is_empty() {
        return Err(Error::Parse("no data rows".into()));
    }
    Ok(out)
}

fn parse_demand(field: &str, cap: u64) -> std::result::Result<u64, String> {
    let v: i128 = match field.parse::<i128>() {
        Ok(v) => v,
        Err(_) => match field.parse::<f64>() {
            Ok(x) if x.fract() == 0.0 && x.is_finite() => x as i128,
            _ => return Err(format!("demand `{field}` is not an integer")),
        },
    };
    if v < 0 {
        return Err(format!("negative demand {v}"));
    }
    if v > cap as i128 {
        return Err(format!("demand {v} exceeds cap {cap}"));
    }
    Ok(v as u64)
}

/// Options for per-period ingestion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestOptions {
    pub demand_cap: u64,
    /// Drop items with fewer issue points than this.
    pub min_issue_points: usize,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            demand_cap: DEFAULT_DEMAND_CAP,
            min_issue_points: 0,
        }
    }
}

/// Parses long-format CSV. Missing periods between an item's first and last
/// row are zero; items keep their first-appearance order.
pub fn parse_periods_csv<R: Read>(reader: R, opts: &IngestOptions) -> Result<Ingested<DemandSeries>> {
    let mut order: Vec<String> = Vec::new();
    let mut rows: HashMap<String, BTreeMap<i64, u64>> = HashMap::new();
    let mut bad: HashMap<String, ()> = HashMap::new();
    let mut diagnostics = Vec::new();
    for (line, rec) in records(reader, 2)? {
        let diag = |item: Option<&str>, message: String| RowDiagnostic {
            line,
            item_id: item.map(str::to_string),
            message,
        };
        if rec.len() != 3 {
            diagnostics.push(diag(rec.get(0), format!("expected 3 fields, found {}", rec.len())));
            if let Some(id) = rec.get(0) {
                bad.insert(id.to_string(), ());
            }
            continue;
        }
        let id = rec[0].to_string();
        if id.is_empty() {
            diagnostics.push(diag(None, "empty item id".into()));
            continue;
        }
        if !rows.contains_key(&id) {
            order.push(id.clone());
            rows.insert(id.clone(), BTreeMap::new());
        }
        let period = match rec[1].parse::<i64>() {
            Ok(p) => p,
            Err(_) => {
                diagnostics.push(diag(Some(&id), format!("period `{}` is not an integer", &rec[1])));
                bad.insert(id, ());
                continue;
            }
        };
        let demand = match parse_demand(&rec[2], opts.demand_cap) {
            Ok(d) => d,
            Err(m) => {
                diagnostics.push(diag(Some(&id), m));
                bad.insert(id, ());
                continue;
            }
        };
        let entry = rows.get_mut(&id).expect("inserted above");
        if entry.insert(period, demand).is_some() {
            diagnostics.push(diag(Some(&id), format!("duplicate period {period}")));
            bad.insert(id, ());
        }
    }
    let mut items = Vec::new();
    for id in order {
        if bad.contains_key(&id) {
            continue;
        }
        let map = &rows[&id];
        let (Some((&first, _)), Some((&last, _))) = (map.first_key_value(), map.last_key_value()) else {
            continue;
        };
        let mut values = vec![0u64; (last - first + 1) as usize];
        for (&p, &d) in map {
            values[(p - first) as usize] = d;
        }
        let s = DemandSeries::with_cap(id, first, values, opts.demand_cap)?;
        if s.issue_count() >= opts.min_issue_points {
            items.push(s);
        }
    }
    Ok(Ingested { items, diagnostics })
}

/// Parses wide CSV: `item_id,v0,v1,...` per row, starting at period 0.
pub fn parse_wide_csv<R: Read>(reader: R, opts: &IngestOptions) -> Result<Ingested<DemandSeries>> {
    let mut items = Vec::new();
    let mut diagnostics = Vec::new();
    for (line, rec) in records(reader, 1)? {
        let id = rec.get(0).unwrap_or_default().to_string();
        let parsed: std::result::Result<Vec<u64>, String> = rec
            .iter()
            .skip(1)
            .map(|f| {
                if f.is_empty() {
                    Ok(0)
                } else {
                    parse_demand(f, opts.demand_cap)
                }
            })
            .collect();
        match parsed {
            Ok(v) if v.is_empty() => diagnostics.push(RowDiagnostic {
                line,
                item_id: Some(id),
                message: "no demand columns".into(),
            }),
            Ok(v) => {
                let s = DemandSeries::with_cap(id, 0, v, opts.demand_cap)?;
                if s.issue_count() >= opts.min_issue_points {
                    items.push(s);
                }
            }
            Err(message) => diagnostics.push(RowDiagnostic {
                line,
                item_id: Some(id),
                message,
            }),
        }
    }
    Ok(Ingested { items, diagnostics })
}

/// Reads a long-format CSV file, failing on any bad row.
pub fn read_periods_csv(path: &Path) -> Result<Vec<DemandSeries>> {
    parse_periods_csv(BufReader::new(File::open(path)?), &IngestOptions::default())?.strict()
}

/// Reads a wide-format CSV file, failing on any bad row.
pub fn read_wide_csv(path: &Path) -> Result<Vec<DemandSeries>> {
    parse_wide_csv(BufReader::new(File::open(path)?), &IngestOptions::default())?.strict()
}

/// Writes long-format CSV with a header row.
pub fn write_periods<W: Write>(writer: W, data: &[DemandSeries]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let csv_err = |e: csv::Error| Error::Parse(e.to_string());
    w.write_record(["item_id", "period", "demand"]).map_err(csv_err)?;
    for s in data {
        for (n, v) in s.values().iter().enumerate() {
            let period = s.start_period() + n as i64;
            w.write_record([s.item_id(), &period.to_string(), &v.to_string()])
                .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_periods_csv(path: &Path, data: &[DemandSeries]) -> Result<()> {
    write_periods(BufWriter::new(File::create(path)?), data)
}

/// Seconds since the Unix epoch for the ISO-8601 forms we accept.
fn parse_time(field: &str) -> Option<f64> {
    if let Ok(t) = DateTime::parse_from_rfc3339(field) {
        return Some(t.timestamp_millis() as f64 / 1000.0);
    }
    for fmt in [
        "%Y-%m-%dT%H:%M:%S%.f",
        "%Y-%m-%d %H:%M:%S%.f",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ] {
        if let Ok(t) = NaiveDateTime::parse_from_str(field, fmt) {
            return Some(t.and_utc().timestamp_millis() as f64 / 1000.0);
        }
    }
    NaiveDate::parse_from_str(field, "%Y-%m-%d")
        .ok()
        .map(|d| d.and_hms_opt(0, 0, 0).expect("midnight").and_utc().timestamp() as f64)
}

/// Options for event ingestion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EventIngestOptions {
    /// Seconds per time unit for ISO timestamps.
    pub seconds_per_unit: f64,
    /// Observation window length; by default the smallest whole number of
    /// units strictly covering every event.
    pub span: Option<f64>,
}

impl Default for EventIngestOptions {
    fn default() -> Self {
        Self {
            seconds_per_unit: 3600.0,
            span: None,
        }
    }
}

/// Parses `item_id,timestamp,quantity` rows. Numeric timestamps are used
/// as-is; ISO timestamps are measured from the earliest one in the file.
pub fn parse_events_csv<R: Read>(reader: R, opts: &EventIngestOptions) -> Result<Ingested<EventSeries>> {
    if !(opts.seconds_per_unit > 0.0) {
        return Err(Error::InvalidConfig("seconds per unit must be > 0".into()));
    }
    enum Stamp {
        Real(f64),
        Iso(f64),
    }
    let mut order: Vec<String> = Vec::new();
    let mut rows: HashMap<String, Vec<(Stamp, u64)>> = HashMap::new();
    let mut bad: HashMap<String, ()> = HashMap::new();
    let mut diagnostics = Vec::new();
    for (line, rec) in records(reader, 1)? {
        let id = rec.get(0).unwrap_or_default().to_string();
        let mut fail = |message: String| {
            diagnostics.push(RowDiagnostic {
                line,
                item_id: Some(id.clone()),
                message,
            });
            bad.insert(id.clone(), ());
        };
        if rec.len() != 3 {
            fail(format!("expected 3 fields, found {}", rec.len()));
            continue;
        }
        let stamp = match rec[1].parse::<f64>() {
            Ok(t) if t.is_finite() && t >= 0.0 => Stamp::Real(t),
            Ok(t) => {
                fail(format!("timestamp {t} must be finite and >= 0"));
                continue;
            }
            Err(_) => match parse_time(&rec[1]) {
                Some(s) => Stamp::Iso(s),
                None => {
                    fail(format!("unrecognised timestamp `{}`", &rec[1]));
                    continue;
                }
            },
        };
        let q = match parse_demand(&rec[2], DEFAULT_DEMAND_CAP) {
            Ok(0) => {
                fail("event quantity must be >= 1".into());
                continue;
            }
            Ok(q) => q,
            Err(m) => {
                fail(m);
                continue;
            }
        };
        if !rows.contains_key(&id) {
            order.push(id.clone());
        }
        rows.entry(id).or_default().push((stamp, q));
    }
    let all = rows.values().flatten();
    let (mut has_real, mut has_iso, mut origin) = (false, false, f64::INFINITY);
    for (s, _) in all {
        match s {
            Stamp::Real(_) => has_real = true,
            Stamp::Iso(t) => {
                has_iso = true;
                origin = origin.min(*t);
            }
        }
    }
    if has_real && has_iso {
        return Err(Error::Parse("file mixes numeric and ISO timestamps".into()));
    }
    let to_units = |s: &Stamp| match s {
        Stamp::Real(t) => *t,
        Stamp::Iso(t) => (t - origin) / opts.seconds_per_unit,
    };
    let latest = rows.values().flatten().map(|(s, _)| to_units(s)).fold(0.0, f64::max);
    let span = match opts.span {
        Some(s) => s,
        None => latest.floor() + 1.0,
    };
    let mut items = Vec::new();
    for id in order {
        if bad.contains_key(&id) {
            continue;
        }
        let events: Vec<(f64, u64)> = rows[&id].iter().map(|(s, q)| (to_units(s), *q)).collect();
        match EventSeries::new(id.clone(), events, span) {
            Ok(e) => items.push(e),
            Err(e) => diagnostics.push(RowDiagnostic {
                line: 0,
                item_id: Some(id),
                message: e.to_string(),
            }),
        }
    }
    Ok(Ingested { items, diagnostics })
}

pub fn read_events_csv(path: &Path, opts: &EventIngestOptions) -> Result<Vec<EventSeries>> {
    parse_events_csv(BufReader::new(File::open(path)?), opts)?.strict()
}

/// Input file layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataFormat {
    PeriodsCsv,
    WideCsv,
}

/// Reads a per-period dataset in the given layout.
pub fn ingest(path: &Path, format: DataFormat, opts: &IngestOptions) -> Result<Ingested<DemandSeries>> {
    let r = BufReader::new(File::open(path)?);
    match format {
        DataFormat::PeriodsCsv => parse_periods_csv(r, opts),
        DataFormat::WideCsv => parse_wide_csv(r, opts),
    }
}

/// Dataset-level statistics over pooled issue points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub n_items: usize,
    /// Items with no issue point; excluded from every other statistic.
    pub n_all_zero: usize,
    pub n_periods_total: usize,
    pub issue_points: usize,
    pub mean_issue_points: f64,
    pub mean_size: f64,
    pub size_cv2: f64,
    pub mean_interval: f64,
    pub interval_cv2: f64,
    pub sbc_counts: BTreeMap<String, usize>,
}

pub fn summarize(data: &[DemandSeries], thresholds: &SbcThresholds) -> Result<DatasetSummary> {
    if data.is_empty() {
        return Err(Error::InvalidData("cannot summarise an empty dataset".into()));
    }
    let mut sizes = Vec::new();
    let mut intervals = Vec::new();
    let mut n_all_zero = 0;
    let mut sbc_counts: BTreeMap<String, usize> = BTreeMap::new();
    for s in data {
        let si = decompose(s);
        if si.issue_count() == 0 {
            n_all_zero += 1;
            continue;
        }
        sizes.extend(si.sizes().iter().map(|&m| m as f64));
        intervals.extend(si.intervals().iter().map(|&q| q as f64));
        *sbc_counts
            .entry(sbc_classify(s, thresholds)?.name().to_string())
            .or_default() += 1;
    }
    let mean = |v: &[f64]| {
        if v.is_empty() {
            f64::NAN
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    let active = data.len() - n_all_zero;
    Ok(DatasetSummary {
        n_items: data.len(),
        n_all_zero,
        n_periods_total: data.iter().map(|s| s.len()).sum(),
        issue_points: sizes.len(),
        mean_issue_points: if active == 0 {
            0.0
        } else {
            sizes.len() as f64 / active as f64
        },
        mean_size: mean(&sizes),
        size_cv2: squared_cv(sizes.iter().copied()),
        mean_interval: mean(&intervals),
        interval_cv2: squared_cv(intervals.iter().copied()),
        sbc_counts,
    })
}

/// Where an experiment's data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DatasetSource {
    Path { path: PathBuf, format: DataFormat },
    Generator(GeneratorSpec),
}

/// Hyperparameters shared by the configured models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparameters {
    pub baseline_alpha: f64,
    pub tsb_beta: f64,
    pub ewma_alpha: f64,
    pub ar_phi: f64,
    pub ar_beta: f64,
    pub rnn: RnnConfig,
    pub n_paths: usize,
    pub censor_tail: bool,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        let Modulation::StationaryAr { phi, beta } = Modulation::stationary_ar() else {
            unreachable!()
        };
        let Modulation::Ewma { alpha } = Modulation::ewma() else {
            unreachable!()
        };
        Self {
            baseline_alpha: DEFAULT_ALPHA,
            tsb_beta: DEFAULT_ALPHA,
            ewma_alpha: alpha,
            ar_phi: phi,
            ar_beta: beta,
            rnn: RnnConfig::default(),
            n_paths: DEFAULT_PATHS,
            censor_tail: false,
        }
    }
}

/// Metric columns of a results table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricName {
    P50,
    P90,
    Mape,
    Smape,
    Rmse,
    Rmsse,
}

impl MetricName {
    pub const ALL: [MetricName; 6] = [
        MetricName::P50,
        MetricName::P90,
        MetricName::Mape,
        MetricName::Smape,
        MetricName::Rmse,
        MetricName::Rmsse,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MetricName::P50 => "p50",
            MetricName::P90 => "p90",
            MetricName::Mape => "mape",
            MetricName::Smape => "smape",
            MetricName::Rmse => "rmse",
            MetricName::Rmsse => "rmsse",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown metric `{s}`")))
    }

    fn get(self, r: &MetricsReport) -> Option<f64> {
        match self {
            MetricName::P50 => r.p50_loss,
            MetricName::P90 => r.p90_loss,
            MetricName::Mape => r.mape,
            MetricName::Smape => r.smape,
            MetricName::Rmse => r.rmse,
            MetricName::Rmsse => r.rmsse,
        }
    }
}

fn default_models() -> Vec<String> {
    [
        "croston",
        "sba",
        "tsb",
        "zeros",
        "static-g-po",
        "static-nb-nb",
        "rnn-nb-nb",
    ]
    .map(String::from)
    .to_vec()
}

/// A complete experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    #[serde(default = "default_holdout")]
    pub holdout: usize,
    #[serde(default = "default_models")]
    pub models: Vec<String>,
    #[serde(default)]
    pub hyperparameters: Hyperparameters,
    #[serde(default = "default_metrics")]
    pub metrics: Vec<MetricName>,
    #[serde(default)]
    pub rmsse_variant: RmsseVariant,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    /// Not part of the experiment's identity.
    #[serde(skip)]
    pub output_dir: Option<PathBuf>,
}

fn default_holdout() -> usize {
    6
}

fn default_repetitions() -> usize {
    3
}

fn default_metrics() -> Vec<MetricName> {
    MetricName::ALL.to_vec()
}

impl ExperimentConfig {
    pub fn new(dataset: DatasetSource) -> Self {
        Self {
            dataset,
            holdout: default_holdout(),
            models: default_models(),
            hyperparameters: Hyperparameters::default(),
            metrics: default_metrics(),
            rmsse_variant: RmsseVariant::default(),
            seed: 0,
            repetitions: default_repetitions(),
            output_dir: None,
        }
    }

    /// Checks everything that does not need the data.
    pub fn validate(&self) -> Result<()> {
        if self.holdout == 0 {
            return Err(Error::InvalidConfig("holdout must be >= 1".into()));
        }
        if self.repetitions == 0 {
            return Err(Error::InvalidConfig("repetitions must be >= 1".into()));
        }
        if self.models.is_empty() {
            return Err(Error::InvalidConfig("no models configured".into()));
        }
        if self.hyperparameters.n_paths == 0 {
            return Err(Error::InvalidConfig("n_paths must be >= 1".into()));
        }
        for m in &self.models {
            ModelChoice::parse(m, &self.hyperparameters)?;
        }
        if let DatasetSource::Generator(g) = &self.dataset {
            g.validate()?;
        }
        self.hyperparameters.rnn.train.validate()
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> Result<String> {
        let json = serde_json::to_string(self)?;
        Ok(Sha256::digest(json.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect())
    }
}

/// A configured forecasting method.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelChoice {
    Croston { alpha: f64 },
    Sba { alpha: f64 },
    Tsb { alpha: f64, beta: f64 },
    Zeros,
    Renewal(ModelTemplate),
}

impl ModelChoice {
    /// Parses a model identifier, applying the hyperparameters.
    pub fn parse(s: &str, hp: &Hyperparameters) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "croston" => ModelChoice::Croston {
                alpha: hp.baseline_alpha,
            },
            "sba" => ModelChoice::Sba {
                alpha: hp.baseline_alpha,
            },
            "tsb" => ModelChoice::Tsb {
                alpha: hp.baseline_alpha,
                beta: hp.tsb_beta,
            },
            "zeros" | "all-zeros" => ModelChoice::Zeros,
            _ => {
                let mut t = ModelTemplate::parse(s)?;
                t.modulation = match t.modulation {
                    Modulation::Ewma { .. } => Modulation::Ewma { alpha: hp.ewma_alpha },
                    Modulation::StationaryAr { .. } => Modulation::StationaryAr {
                        phi: hp.ar_phi,
                        beta: hp.ar_beta,
                    },
                    Modulation::Rnn(_) => Modulation::Rnn(hp.rnn.clone()),
                    m => m,
                };
                t.censor_tail = hp.censor_tail;
                ModelChoice::Renewal(t)
            }
        })
    }

    pub fn name(&self) -> String {
        match self {
            ModelChoice::Croston { .. } => "Croston".into(),
            ModelChoice::Sba { .. } => "SBA".into(),
            ModelChoice::Tsb { .. } => "TSB".into(),
            ModelChoice::Zeros => "All-Zeros".into(),
            ModelChoice::Renewal(t) => t.name(),
        }
    }
}

/// Training and holdout slices of the items that have training issue points.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<DemandSeries>,
    pub holdout: Vec<DemandSeries>,
    /// Items without issue points in their training slice.
    pub dropped: Vec<String>,
}

/// Splits every series at `N − holdout`.
pub fn split_dataset(data: &[DemandSeries], holdout: usize) -> Result<Split> {
    if data.is_empty() {
        return Err(Error::InvalidData("empty dataset".into()));
    }
    let shortest = data.iter().map(|s| s.len()).min().expect("nonempty");
    if holdout == 0 || holdout >= shortest {
        return Err(Error::InvalidConfig(format!(
            "holdout {holdout} must be in [1, {shortest}) for the shortest series"
        )));
    }
    let mut split = Split {
        train: Vec::new(),
        holdout: Vec::new(),
        dropped: Vec::new(),
    };
    for s in data {
        let (train, test) = s.split_at(s.len() - holdout)?;
        if train.issue_count() == 0 {
            split.dropped.push(s.item_id().to_string());
        } else {
            split.train.push(train);
            split.holdout.push(test);
        }
    }
    if split.train.is_empty() {
        return Err(Error::InvalidData(
            "no item has an issue point in its training slice".into(),
        ));
    }
    Ok(split)
}

/// Per-item forecasts of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelForecast {
    /// `items × L` point forecasts.
    pub point: Vec<Vec<f64>>,
    /// Quantile rows per item as `(level, values)`, empty for point methods.
    pub quantiles: Vec<Vec<(f64, Vec<f64>)>>,
}

/// Sampling seed of item `index`, so items draw independent paths.
pub fn item_seed(seed: u64, index: usize) -> u64 {
    rng::stream(seed, index as u64).random()
}

/// Fits `choice` on the training slices and forecasts the next `horizon`
/// periods of each item. Bootstrap forecasts use the per-period sample mean
/// as the point forecast.
pub fn forecast_model(
    choice: &ModelChoice,
    train: &[DemandSeries],
    horizon: usize,
    n_paths: usize,
    seed: u64,
) -> Result<ModelForecast> {
    let point_only = |f: &dyn Fn(&DemandSeries) -> Result<Vec<f64>>| -> Result<ModelForecast> {
        let point = train.iter().map(f).collect::<Result<Vec<_>>>()?;
        Ok(ModelForecast {
            quantiles: vec![Vec::new(); point.len()],
            point,
        })
    };
    match choice {
        ModelChoice::Croston { alpha } => point_only(&|s| Ok(croston_forecast(s, *alpha, horizon)?.per_period)),
        ModelChoice::Sba { alpha } => point_only(&|s| Ok(sba_forecast(s, *alpha, horizon)?.per_period)),
        ModelChoice::Tsb { alpha, beta } => point_only(&|s| Ok(tsb_forecast(s, *alpha, *beta, horizon)?.per_period)),
        ModelChoice::Zeros => point_only(&|_| Ok(zeros_forecast(horizon).per_period)),
        ModelChoice::Renewal(template) => {
            let mut template = template.clone();
            if let Modulation::Rnn(cfg) = &mut template.modulation {
                cfg.train.seed = seed;
            }
            let model = fit(&template, train)?;
            let results = train
                .par_iter()
                .enumerate()
                .map(|(i, s)| sample_paths(&model, s, &SampleConfig::new(horizon, n_paths, item_seed(seed, i))))
                .collect::<Result<Vec<_>>>()?;
            Ok(ModelForecast {
                point: results.iter().map(|r| r.mean_per_period.clone()).collect(),
                quantiles: results
                    .into_iter()
                    .map(|r| r.quantiles.into_iter().map(|q| (q.level, q.values)).collect())
                    .collect(),
            })
        }
    }
}

/// Mean and sample standard deviation of one metric across repetitions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

fn mean_std(values: &[f64]) -> MeanStd {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    MeanStd { mean, std }
}

/// Outcome of one configured model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelResult {
    pub model: String,
    pub name: String,
    /// Metric name to mean ± std; metrics undefined in any repetition are absent.
    pub summary: BTreeMap<String, MeanStd>,
    pub repetitions: Vec<MetricsReport>,
    pub error: Option<String>,
}

/// Everything `run_experiment` produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResults {
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub n_items: usize,
    pub dropped_items: Vec<String>,
    pub results: Vec<ModelResult>,
    #[serde(skip)]
    pub forecasts: Vec<Vec<Option<ModelForecast>>>,
    #[serde(skip)]
    pub split: Option<Split>,
}

impl ExperimentResults {
    pub fn result(&self, name_or_slug: &str) -> Option<&ModelResult> {
        self.results
            .iter()
            .find(|r| r.model.eq_ignore_ascii_case(name_or_slug) || r.name == name_or_slug)
    }

    /// Pretty JSON followed by a newline.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Long-format per-period forecast table for plotting.
    pub fn write_quantile_csv<W: Write>(&self, writer: W) -> Result<()> {
        let Some(split) = &self.split else {
            return Err(Error::InvalidData("results carry no forecasts".into()));
        };
        let csv_err = |e: csv::Error| Error::Parse(e.to_string());
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "model",
            "repetition",
            "item_id",
            "period",
            "actual",
            "point",
            "level",
            "quantile",
        ])
        .map_err(csv_err)?;
        for (m, per_rep) in self.results.iter().zip(&self.forecasts) {
            for (rep, fc) in per_rep.iter().enumerate() {
                let Some(fc) = fc else { continue };
                for (i, test) in split.holdout.iter().enumerate() {
                    for (n, actual) in test.values().iter().enumerate() {
                        let period = (test.start_period() + n as i64).to_string();
                        let base = [m.model.clone(), rep.to_string(), test.item_id().to_string(), period];
                        let point = fc.point[i][n].to_string();
                        if fc.quantiles[i].is_empty() {
                            let row = base.iter().cloned().chain([
                                actual.to_string(),
                                point.clone(),
                                String::new(),
                                String::new(),
                            ]);
                            w.write_record(row).map_err(csv_err)?;
                        }
                        for (level, values) in &fc.quantiles[i] {
                            let row = base.iter().cloned().chain([
                                actual.to_string(),
                                point.clone(),
                                level.to_string(),
                                values[n].to_string(),
                            ]);
                            w.write_record(row).map_err(csv_err)?;
                        }
                    }
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Writes `results.json` and `quantiles.csv` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("results.json"), self.to_json()?)?;
        let mut f = BufWriter::new(File::create(dir.join("quantiles.csv"))?);
        self.write_quantile_csv(&mut f)?;
        f.flush()?;
        Ok(())
    }
}

/// Loads the dataset described by `source`.
pub fn load_dataset(source: &DatasetSource) -> Result<Vec<DemandSeries>> {
    match source {
        DatasetSource::Path { path, format } => ingest(path, *format, &IngestOptions::default())?.strict(),
        DatasetSource::Generator(spec) => generate(spec),
    }
}

fn to_f64(data: &[DemandSeries]) -> Vec<Vec<f64>> {
    data.iter()
        .map(|s| s.values().iter().map(|&v| v as f64).collect())
        .collect()
}

/// Runs an experiment on already-loaded data.
///
/// Repetition `r` uses seed `seed + r` for training and path sampling. Model
/// failures are recorded in the result without stopping other models.
pub fn run_on(config: &ExperimentConfig, data: &[DemandSeries]) -> Result<ExperimentResults> {
    config.validate()?;
    let split = split_dataset(data, config.holdout)?;
    let choices = config
        .models
        .iter()
        .map(|m| ModelChoice::parse(m, &config.hyperparameters))
        .collect::<Result<Vec<_>>>()?;
    let actuals = to_f64(&split.holdout);
    let in_sample = to_f64(&split.train);
    let jobs: Vec<(usize, usize)> = (0..choices.len())
        .flat_map(|m| (0..config.repetitions).map(move |r| (m, r)))
        .collect();
    let outcomes: Vec<Result<(ModelForecast, MetricsReport)>> = jobs
        .par_iter()
        .map(|&(m, r)| {
            let seed = config.seed.wrapping_add(r as u64);
            let fc = forecast_model(
                &choices[m],
                &split.train,
                config.holdout,
                config.hyperparameters.n_paths,
                seed,
            )?;
            let level = |rho: f64| -> Option<Vec<Vec<f64>>> {
                fc.quantiles
                    .iter()
                    .map(|rows| {
                        rows.iter()
                            .find(|(l, _)| (l - rho).abs() < 1e-12)
                            .map(|(_, v)| v.clone())
                    })
                    .collect()
            };
            let (q50, q90) = (level(0.5), level(0.9));
            let report = evaluate(&EvaluationInput {
                actuals: &actuals,
                point: &fc.point,
                quantiles: q50.as_deref().zip(q90.as_deref()),
                in_sample: &in_sample,
                rmsse_variant: config.rmsse_variant,
            })?;
            Ok((fc, report))
        })
        .collect();
    let mut outcomes = outcomes.into_iter();
    let mut results = Vec::new();
    let mut forecasts = Vec::new();
    for (choice, slug) in choices.iter().zip(&config.models) {
        let mut reports = Vec::new();
        let mut fcs = Vec::new();
        let mut error = None;
        for _ in 0..config.repetitions {
            match outcomes.next().expect("one outcome per job") {
                Ok((fc, rep)) => {
                    reports.push(rep);
                    fcs.push(Some(fc));
                }
                Err(e) => {
                    error.get_or_insert_with(|| e.to_string());
                    fcs.push(None);
                }
            }
        }
        if error.is_some() {
            log::warn!("model {slug} failed: {}", error.as_deref().unwrap_or_default());
        }
        let mut summary = BTreeMap::new();
        if error.is_none() {
            for metric in &config.metrics {
                let vals: Option<Vec<f64>> = reports.iter().map(|r| metric.get(r)).collect();
                if let Some(v) = vals {
                    summary.insert(metric.name().to_string(), mean_std(&v));
                }
            }
        }
        results.push(ModelResult {
            model: slug.to_ascii_lowercase(),
            name: choice.name(),
            summary,
            repetitions: reports,
            error,
        });
        forecasts.push(fcs);
    }
    Ok(ExperimentResults {
        config_hash: config.hash()?,
        config: config.clone(),
        n_items: split.train.len(),
        dropped_items: split.dropped.clone(),
        results,
        forecasts,
        split: Some(split),
    })
}

/// Loads the data, runs the experiment and writes the outputs when an
/// output directory is configured.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResults> {
    config.validate()?;
    let data = load_dataset(&config.dataset)?;
    let results = run_on(config, &data)?;
    if let Some(dir) = &config.output_dir {
        results.write_to(dir)?;
    }
    Ok(results)
}
