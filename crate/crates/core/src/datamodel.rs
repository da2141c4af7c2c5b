//! Datasets, time grids, life tables and CSV ingestion.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SurvError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurvivalRecord {
    pub features: Vec<f64>,
    /// Observed time `min(T, C)`.
    pub time: f64,
    /// 0 for censored, otherwise the index of the event that occurred.
    pub event: u32,
}

impl SurvivalRecord {
    pub fn new(features: Vec<f64>, time: f64, event: u32) -> Self {
        SurvivalRecord {
            features,
            time,
            event,
        }
    }

    pub fn is_death(&self) -> bool {
        self.event != 0
    }
}

/// Right-censored (optionally competing-risks) training or evaluation data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurvivalDataset {
    records: Vec<SurvivalRecord>,
    dim: usize,
    num_events: u32,
}

impl SurvivalDataset {
    /// Validates shared dimension, nonnegative finite times and event codes `<= k`.
    pub fn new(records: Vec<SurvivalRecord>, num_events: u32) -> Result<Self> {
        if num_events == 0 {
            return Err(SurvError::validation("number of event types must be at least 1"));
        }
        let dim = records.first().map_or(0, |r| r.features.len());
        for (i, r) in records.iter().enumerate() {
            if r.features.len() != dim {
                return Err(SurvError::DimensionMismatch {
                    expected: dim,
                    got: r.features.len(),
                });
            }
            if !r.time.is_finite() || r.time < 0.0 {
                return Err(SurvError::validation(format!(
                    "record {i}: observed time must be finite and nonnegative, got {}",
                    r.time
                )));
            }
            if r.event > num_events {
                return Err(SurvError::validation(format!(
                    "record {i}: event {} exceeds declared number of events {num_events}",
                    r.event
                )));
            }
            if r.features.iter().any(|v| !v.is_finite()) {
                return Err(SurvError::validation(format!("record {i}: non-finite feature")));
            }
        }
        Ok(SurvivalDataset {
            records,
            dim,
            num_events,
        })
    }

    /// Single-risk dataset from parallel columns.
    pub fn from_columns(features: Vec<Vec<f64>>, times: &[f64], events: &[u32]) -> Result<Self> {
        Self::from_columns_k(features, times, events, 1)
    }

    pub fn from_columns_k(features: Vec<Vec<f64>>, times: &[f64], events: &[u32], k: u32) -> Result<Self> {
        if features.len() != times.len() || times.len() != events.len() {
            return Err(SurvError::validation("feature, time and event columns differ in length"));
        }
        let records = features
            .into_iter()
            .zip(times.iter().zip(events))
            .map(|(x, (&t, &e))| SurvivalRecord::new(x, t, e))
            .collect();
        Self::new(records, k)
    }

    /// Feature-free single-risk dataset.
    pub fn from_times(times: &[f64], events: &[u32]) -> Result<Self> {
        Self::from_columns(vec![Vec::new(); times.len()], times, events)
    }

    pub fn records(&self) -> &[SurvivalRecord] {
        &self.records
    }

    pub fn record(&self, i: usize) -> &SurvivalRecord {
        &self.records[i]
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_events(&self) -> u32 {
        self.num_events
    }

    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.time).collect()
    }

    pub fn events(&self) -> Vec<u32> {
        self.records.iter().map(|r| r.event).collect()
    }

    pub fn features(&self) -> Vec<Vec<f64>> {
        self.records.iter().map(|r| r.features.clone()).collect()
    }

    pub fn num_deaths(&self) -> usize {
        self.records.iter().filter(|r| r.is_death()).count()
    }

    pub fn max_time(&self) -> f64 {
        self.records.iter().map(|r| r.time).fold(0.0, f64::max)
    }

    pub fn require_deaths(&self) -> Result<()> {
        if self.num_deaths() == 0 {
            Err(SurvError::NoDeaths)
        } else {
            Ok(())
        }
    }

    pub fn require_single_risk(&self) -> Result<()> {
        if self.num_events != 1 {
            return Err(SurvError::validation(format!(
                "operation needs a single-risk dataset, got k = {}",
                self.num_events
            )));
        }
        Ok(())
    }

    pub fn subset(&self, indices: &[usize]) -> SurvivalDataset {
        SurvivalDataset {
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            dim: self.dim,
            num_events: self.num_events,
        }
    }

    /// All-cause view: every nonzero event becomes 1.
    pub fn collapse_events(&self) -> SurvivalDataset {
        SurvivalDataset {
            records: self
                .records
                .iter()
                .map(|r| SurvivalRecord::new(r.features.clone(), r.time, u32::from(r.event != 0)))
                .collect(),
            dim: self.dim,
            num_events: 1,
        }
    }

    /// Censoring becomes the event of interest, as needed for censoring-survival estimates.
    pub fn flip_censoring(&self) -> SurvivalDataset {
        SurvivalDataset {
            records: self
                .records
                .iter()
                .map(|r| SurvivalRecord::new(r.features.clone(), r.time, u32::from(r.event == 0)))
                .collect(),
            dim: self.dim,
            num_events: 1,
        }
    }

    /// Appends another dataset with the same layout.
    pub fn concat(&self, other: &SurvivalDataset) -> Result<SurvivalDataset> {
        if other.dim != self.dim && !other.is_empty() && !self.is_empty() {
            return Err(SurvError::DimensionMismatch {
                expected: self.dim,
                got: other.dim,
            });
        }
        let mut records = self.records.clone();
        records.extend(other.records.iter().cloned());
        SurvivalDataset::new(records, self.num_events.max(other.num_events))
    }
}

/// Column mapping for CSV ingestion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub time_col: String,
    pub event_col: String,
    /// `None` takes every other column, in file order.
    pub feature_cols: Option<Vec<String>>,
    pub num_events: u32,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            time_col: "time".into(),
            event_col: "event".into(),
            feature_cols: None,
            num_events: 1,
        }
    }
}

impl CsvSchema {
    pub fn with_events(mut self, k: u32) -> Self {
        self.num_events = k;
        self
    }
}

pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<SurvivalDataset> {
    let file = std::fs::File::open(path.as_ref())?;
    read_csv(file, schema)
}

pub fn read_csv<R: std::io::Read>(reader: R, schema: &CsvSchema) -> Result<SurvivalDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let position = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| SurvError::Schema(format!("missing column '{name}'")))
    };
    let t_idx = position(&schema.time_col)?;
    let e_idx = position(&schema.event_col)?;
    let f_idx: Vec<usize> = match &schema.feature_cols {
        Some(cols) => cols.iter().map(|c| position(c)).collect::<Result<_>>()?,
        None => (0..headers.len()).filter(|&i| i != t_idx && i != e_idx).collect(),
    };
    let mut records = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = row + 2;
        let cell = |i: usize| -> Result<f64> {
            let raw = rec.get(i).unwrap_or("");
            raw.parse::<f64>().map_err(|_| {
                SurvError::Schema(format!("line {line}: column '{}' has non-numeric value '{raw}'", &headers[i]))
            })
        };
        let time = cell(t_idx)?;
        if time < 0.0 {
            return Err(SurvError::validation(format!("line {line}: negative time {time}")));
        }
        let ev = cell(e_idx)?;
        if ev < 0.0 || ev.fract() != 0.0 {
            return Err(SurvError::validation(format!("line {line}: event must be a nonnegative integer, got {ev}")));
        }
        let features = f_idx.iter().map(|&i| cell(i)).collect::<Result<Vec<_>>>()?;
        records.push(SurvivalRecord::new(features, time, ev as u32));
    }
    if records.is_empty() {
        return Err(SurvError::validation("dataset has zero rows"));
    }
    SurvivalDataset::new(records, schema.num_events)
}

/// Feature rows for prediction; `time` and `event` columns are skipped if present.
pub fn read_feature_rows<R: std::io::Read>(reader: R, schema: &CsvSchema) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let f_idx: Vec<usize> = match &schema.feature_cols {
        Some(cols) => cols
            .iter()
            .map(|c| headers.iter().position(|h| h == c).ok_or_else(|| SurvError::Schema(format!("missing column '{c}'"))))
            .collect::<Result<_>>()?,
        None => (0..headers.len()).filter(|&i| headers[i] != *schema.time_col && headers[i] != *schema.event_col).collect(),
    };
    let mut rows = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let x = f_idx
            .iter()
            .map(|&i| {
                let raw = rec.get(i).unwrap_or("");
                raw.parse::<f64>()
                    .map_err(|_| SurvError::Schema(format!("line {}: column '{}' has non-numeric value '{raw}'", row + 2, &headers[i])))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(x);
    }
    Ok(rows)
}

/// Writes `x0..x{d-1},time,event` unless feature names are given.
pub fn write_csv(ds: &SurvivalDataset, path: impl AsRef<Path>, feature_names: Option<&[String]>) -> Result<()> {
    let file = std::fs::File::create(path.as_ref())?;
    write_csv_to(ds, file, feature_names)
}

pub fn write_csv_to<W: std::io::Write>(ds: &SurvivalDataset, w: W, feature_names: Option<&[String]>) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header: Vec<String> = match feature_names {
        Some(n) => n.to_vec(),
        None => (0..ds.dim()).map(|j| format!("x{j}")).collect(),
    };
    header.push("time".into());
    header.push("event".into());
    wtr.write_record(&header)?;
    for r in ds.records() {
        let mut row: Vec<String> = r.features.iter().map(|v| format!("{v}")).collect();
        row.push(format!("{}", r.time));
        row.push(r.event.to_string());
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Strictly increasing time points τ_1 < … < τ_L, with τ_0 = 0 implicit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.is_empty() {
            return Err(SurvError::validation("time grid must have at least one point"));
        }
        if times.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(SurvError::validation("grid times must be finite and nonnegative"));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(SurvError::validation("grid times must be strictly increasing"));
        }
        Ok(TimeGrid { times })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// τ_ℓ for ℓ in 0..=L, with τ_0 = 0.
    pub fn tau(&self, l: usize) -> f64 {
        if l == 0 {
            0.0
        } else {
            self.times[l - 1]
        }
    }

    pub fn last(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Largest ℓ with τ_ℓ ≤ t, or 0 when t precedes the grid.
    pub fn kappa(&self, t: f64) -> usize {
        self.times.partition_point(|&tau| tau <= t)
    }

    /// τ_ℓ − τ_{ℓ−1} for ℓ = 1..L.
    pub fn widths(&self) -> Vec<f64> {
        (1..=self.len()).map(|l| self.tau(l) - self.tau(l - 1)).collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("index\ttime\n");
        for (l, t) in self.times.iter().enumerate() {
            let _ = writeln!(s, "{}\t{t}", l + 1);
        }
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridStrategy {
    UniqueDeaths,
    Uniform,
    LogUniform,
    Quantile,
}

impl std::str::FromStr for GridStrategy {
    type Err = SurvError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unique-deaths" => Ok(GridStrategy::UniqueDeaths),
            "uniform" => Ok(GridStrategy::Uniform),
            "log-uniform" => Ok(GridStrategy::LogUniform),
            "quantile" => Ok(GridStrategy::Quantile),
            other => Err(SurvError::validation(format!("unknown grid strategy '{other}'"))),
        }
    }
}

fn sorted_death_times(ds: &SurvivalDataset) -> Result<Vec<f64>> {
    let mut t: Vec<f64> = ds.records().iter().filter(|r| r.is_death()).map(|r| r.time).collect();
    if t.is_empty() {
        return Err(SurvError::NoDeaths);
    }
    t.sort_by(f64::total_cmp);
    Ok(t)
}

fn dedup_sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.dedup();
    v
}

pub fn build_grid(ds: &SurvivalDataset, strategy: GridStrategy, l_target: Option<usize>) -> Result<TimeGrid> {
    let deaths = sorted_death_times(ds)?;
    if strategy == GridStrategy::UniqueDeaths {
        return TimeGrid::new(dedup_sorted(deaths));
    }
    let l = l_target.ok_or_else(|| SurvError::validation("grid strategy needs a target size"))?;
    if l < 2 {
        return Err(SurvError::validation("target grid size must be at least 2"));
    }
    let (lo, hi) = (deaths[0], *deaths.last().unwrap());
    let frac = |j: usize| j as f64 / (l - 1) as f64;
    let times = match strategy {
        GridStrategy::Uniform => {
            if hi <= lo {
                return Err(SurvError::validation("uniform grid needs at least two distinct death times"));
            }
            (0..l).map(|j| if j + 1 == l { hi } else { lo + (hi - lo) * frac(j) }).collect()
        }
        GridStrategy::LogUniform => {
            if lo <= 0.0 || hi <= lo {
                return Err(SurvError::validation(
                    "log-uniform grid needs positive, distinct minimum and maximum death times",
                ));
            }
            let (a, b) = (lo.ln(), hi.ln());
            (0..l)
                .map(|j| match j {
                    0 => lo,
                    _ if j + 1 == l => hi,
                    _ => (a + (b - a) * frac(j)).exp(),
                })
                .collect()
        }
        GridStrategy::Quantile => {
            let n = deaths.len();
            (0..l)
                .map(|j| {
                    // linear interpolation between order statistics
                    let pos = frac(j) * (n - 1) as f64;
                    let k = pos.floor() as usize;
                    let w = pos - k as f64;
                    if k + 1 < n {
                        deaths[k] * (1.0 - w) + deaths[k + 1] * w
                    } else {
                        deaths[n - 1]
                    }
                })
                .collect()
        }
        GridStrategy::UniqueDeaths => unreachable!(),
    };
    TimeGrid::new(dedup_sorted(times))
}

/// Death and at-risk counts per grid index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LifeTable {
    pub grid: TimeGrid,
    /// D[ℓ] for ℓ = 1..L, stored at ℓ − 1.
    pub deaths: Vec<u64>,
    /// N[ℓ] = #{j : Y_j ≥ τ_ℓ}.
    pub at_risk: Vec<u64>,
}

impl LifeTable {
    /// Discrete hazard D[ℓ]/N[ℓ], zero where nobody is at risk.
    pub fn hazards(&self) -> Vec<f64> {
        self.deaths
            .iter()
            .zip(&self.at_risk)
            .map(|(&d, &n)| if n == 0 { 0.0 } else { d as f64 / n as f64 })
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("time\tdeaths\tat_risk\n");
        for ((t, d), n) in self.grid.times().iter().zip(&self.deaths).zip(&self.at_risk) {
            let _ = writeln!(s, "{t}\t{d}\t{n}");
        }
        s
    }
}

/// Counts any nonzero event as a death; deaths are snapped to the grid by `kappa`.
pub fn life_table(ds: &SurvivalDataset, grid: &TimeGrid) -> LifeTable {
    let l = grid.len();
    let mut deaths = vec![0u64; l];
    let mut at_risk_start = vec![0u64; l + 1];
    for r in ds.records() {
        let k = grid.kappa(r.time);
        if r.is_death() && k >= 1 {
            deaths[k - 1] += 1;
        }
        // Y ≥ τ_ℓ exactly for ℓ ≤ κ(Y)
        at_risk_start[k] += 1;
    }
    let mut at_risk = vec![0u64; l];
    let mut acc = 0;
    for ell in (1..=l).rev() {
        acc += at_risk_start[ell];
        at_risk[ell - 1] = acc;
    }
    LifeTable {
        grid: grid.clone(),
        deaths,
        at_risk,
    }
}

/// Dense n×L indicator matrix of (record, death index) pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct EventMatrix {
    n: usize,
    l: usize,
    data: Vec<u8>,
}

impl EventMatrix {
    pub fn get(&self, i: usize, ell: usize) -> u8 {
        self.data[i * self.l + ell - 1]
    }

    pub fn row(&self, i: usize) -> &[u8] {
        &self.data[i * self.l..(i + 1) * self.l]
    }

    pub fn rows(&self) -> usize {
        self.n
    }

    pub fn cols(&self) -> usize {
        self.l
    }

    pub fn column_sums(&self) -> Vec<u64> {
        (1..=self.l)
            .map(|ell| (0..self.n).map(|i| self.get(i, ell) as u64).sum())
            .collect()
    }
}

pub fn event_matrix(ds: &SurvivalDataset, grid: &TimeGrid) -> EventMatrix {
    let (n, l) = (ds.len(), grid.len());
    let mut data = vec![0u8; n * l];
    for (i, r) in ds.records().iter().enumerate() {
        let k = grid.kappa(r.time);
        if r.is_death() && k >= 1 {
            data[i * l + k - 1] = 1;
        }
    }
    EventMatrix { n, l, data }
}

/// Per-feature z-score transform, fitted explicitly and stored with models.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(ds: &SurvivalDataset) -> Result<Self> {
        if ds.is_empty() {
            return Err(SurvError::validation("cannot standardize an empty dataset"));
        }
        let n = ds.len() as f64;
        let d = ds.dim();
        let mut mean = vec![0.0; d];
        for r in ds.records() {
            for (m, x) in mean.iter_mut().zip(&r.features) {
                *m += x / n;
            }
        }
        let mut var = vec![0.0; d];
        for r in ds.records() {
            for j in 0..d {
                var[j] += (r.features[j] - mean[j]).powi(2) / n;
            }
        }
        let scale = var.into_iter().map(|v| if v > 0.0 { v.sqrt() } else { 1.0 }).collect();
        Ok(Standardizer { mean, scale })
    }

    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn apply(&self, ds: &SurvivalDataset) -> Result<SurvivalDataset> {
        if ds.dim() != self.mean.len() {
            return Err(SurvError::DimensionMismatch {
                expected: self.mean.len(),
                got: ds.dim(),
            });
        }
        let records = ds
            .records()
            .iter()
            .map(|r| SurvivalRecord::new(self.transform(&r.features), r.time, r.event))
            .collect();
        SurvivalDataset::new(records, ds.num_events())
    }
}
