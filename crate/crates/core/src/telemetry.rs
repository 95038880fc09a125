//! Board telemetry data model: channels, records, runs, CSV/JSON I/O,
//! cleaning, annotation and feature extraction.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of monitored sensor channels.
pub const NUM_CHANNELS: usize = 7;

/// Canonical CSV header (without the optional label column).
pub const CSV_HEADER: &str = "time_s,t_pmic_c,t_fpga_c,v_core_v,v_aux_v,v_ddr3_v,v_tt_v,v_cco_v";

#[derive(Debug, Error, PartialEq)]
pub enum TelemetryError {
    #[error("empty file")]
    EmptyFile,
    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("timestamp decreases at line {line}")]
    NonMonotonicTimestamp { line: usize },
    #[error("need at least 2 training rows, got {0}")]
    TooFewRows(usize),
    #[error("feature width mismatch: expected {expected}, got {got}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("invalid series: {0}")]
    InvalidSeries(String),
    #[error("invalid metadata: {0}")]
    InvalidMetadata(String),
}

/// The seven monitored channels in fixed column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelId {
    TPmic,
    TFpga,
    VCore,
    VAux,
    VDdr3,
    VTt,
    VCco,
}

impl ChannelId {
    pub const ALL: [ChannelId; NUM_CHANNELS] = [
        ChannelId::TPmic,
        ChannelId::TFpga,
        ChannelId::VCore,
        ChannelId::VAux,
        ChannelId::VDdr3,
        ChannelId::VTt,
        ChannelId::VCco,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            ChannelId::TPmic => "t_pmic",
            ChannelId::TFpga => "t_fpga",
            ChannelId::VCore => "v_core",
            ChannelId::VAux => "v_aux",
            ChannelId::VDdr3 => "v_ddr3",
            ChannelId::VTt => "v_tt",
            ChannelId::VCco => "v_cco",
        }
    }

    /// Nominal rail voltage in volts. Temperatures have none.
    pub fn nominal(self) -> Option<f64> {
        match self {
            ChannelId::TPmic | ChannelId::TFpga => None,
            ChannelId::VCore => Some(1.0),
            ChannelId::VAux => Some(1.8),
            ChannelId::VDdr3 => Some(1.35),
            ChannelId::VTt => Some(0.675),
            ChannelId::VCco => Some(3.3),
        }
    }

    pub fn is_temperature(self) -> bool {
        matches!(self, ChannelId::TPmic | ChannelId::TFpga)
    }
}

impl fmt::Display for ChannelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ChannelId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ChannelId::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown channel '{s}'"))
    }
}

/// Ground-truth or predicted label. Serialized as 0 / 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Label {
    #[default]
    Normal,
    Anomaly,
}

impl Label {
    pub fn is_anomaly(self) -> bool {
        self == Label::Anomaly
    }

    pub fn as_u8(self) -> u8 {
        self.into()
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        match l {
            Label::Normal => 0,
            Label::Anomaly => 1,
        }
    }
}

impl TryFrom<u8> for Label {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            0 => Ok(Label::Normal),
            1 => Ok(Label::Anomaly),
            other => Err(format!("label must be 0 or 1, got {other}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TelemetryRecord {
    /// Seconds since run start.
    pub timestamp: f64,
    /// Values indexed by [`ChannelId::index`].
    pub values: [f64; NUM_CHANNELS],
    pub label: Option<Label>,
}

impl TelemetryRecord {
    pub fn new(timestamp: f64, values: [f64; NUM_CHANNELS]) -> Self {
        Self {
            timestamp,
            values,
            label: None,
        }
    }

    pub fn get(&self, ch: ChannelId) -> f64 {
        self.values[ch.index()]
    }

    /// A temperature reading of exactly zero or a non-finite value marks the
    /// record as unusable.
    pub fn has_invalid_temperature(&self) -> bool {
        [ChannelId::TPmic, ChannelId::TFpga].iter().any(|&c| {
            let v = self.get(c);
            !v.is_finite() || v == 0.0
        })
    }
}

/// Ordered 1 Hz (by default) stream of records for one board.
#[derive(Debug, Clone, PartialEq)]
pub struct TelemetrySeries {
    records: Vec<TelemetryRecord>,
    sample_period: f64,
}

impl Default for TelemetrySeries {
    fn default() -> Self {
        Self {
            records: Vec::new(),
            sample_period: 1.0,
        }
    }
}

impl TelemetrySeries {
    pub fn new(records: Vec<TelemetryRecord>, sample_period: f64) -> Result<Self, TelemetryError> {
        if !(sample_period > 0.0 && sample_period.is_finite()) {
            return Err(TelemetryError::InvalidSeries(format!(
                "sample period must be positive, got {sample_period}"
            )));
        }
        for (i, w) in records.windows(2).enumerate() {
            if w[1].timestamp < w[0].timestamp {
                return Err(TelemetryError::NonMonotonicTimestamp { line: i + 2 });
            }
        }
        if let Some(r) = records.iter().find(|r| !(r.timestamp >= 0.0)) {
            return Err(TelemetryError::InvalidSeries(format!(
                "negative or undefined timestamp {}",
                r.timestamp
            )));
        }
        Ok(Self { records, sample_period })
    }

    /// Builds a series from records already known to be ordered.
    pub(crate) fn from_sorted(records: Vec<TelemetryRecord>, sample_period: f64) -> Self {
        debug_assert!(records.windows(2).all(|w| w[0].timestamp <= w[1].timestamp));
        Self { records, sample_period }
    }

    pub fn records(&self) -> &[TelemetryRecord] {
        &self.records
    }

    pub fn sample_period(&self) -> f64 {
        self.sample_period
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn timestamps(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.timestamp).collect()
    }

    pub fn labels(&self) -> Option<Vec<Label>> {
        self.records.iter().map(|r| r.label).collect()
    }

    pub fn has_labels(&self) -> bool {
        !self.records.is_empty() && self.records.iter().all(|r| r.label.is_some())
    }

    /// Parses the telemetry CSV format. The label column is optional but must
    /// be consistent with the header.
    pub fn parse_csv(text: &str) -> Result<Self, TelemetryError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
            .filter(|(_, l)| !l.trim().is_empty());

        let (_, header) = lines.next().ok_or(TelemetryError::EmptyFile)?;
        let header = header.trim();
        let with_label = if header == CSV_HEADER {
            false
        } else if header.strip_suffix(",label") == Some(CSV_HEADER) {
            true
        } else {
            return Err(TelemetryError::MalformedRow {
                line: 1,
                reason: format!("unexpected header '{header}'"),
            });
        };
        let width = 1 + NUM_CHANNELS + usize::from(with_label);

        let mut records: Vec<TelemetryRecord> = Vec::new();
        for (line, row) in lines {
            let malformed = |reason: String| TelemetryError::MalformedRow { line, reason };
            let fields: Vec<&str> = row.split(',').map(str::trim).collect();
            if fields.len() != width {
                if fields.first() == Some(&"time_s") {
                    return Err(malformed("duplicate header".into()));
                }
                return Err(malformed(format!("expected {width} columns, found {}", fields.len())));
            }
            let num = |s: &str| parse_decimal(s).ok_or_else(|| malformed(format!("bad number '{s}'")));
            let timestamp = num(fields[0])?;
            if !(timestamp >= 0.0 && timestamp.is_finite()) {
                return Err(malformed(format!("bad timestamp '{}'", fields[0])));
            }
            let mut values = [0.0; NUM_CHANNELS];
            for (v, s) in values.iter_mut().zip(&fields[1..=NUM_CHANNELS]) {
                *v = num(s)?;
            }
            let label = if with_label {
                let raw: u8 = fields[width - 1]
                    .parse()
                    .map_err(|_| malformed(format!("bad label '{}'", fields[width - 1])))?;
                Some(Label::try_from(raw).map_err(malformed)?)
            } else {
                None
            };
            if let Some(prev) = records.last() {
                if timestamp < prev.timestamp {
                    return Err(TelemetryError::NonMonotonicTimestamp { line });
                }
            }
            records.push(TelemetryRecord {
                timestamp,
                values,
                label,
            });
        }
        if records.is_empty() {
            return Err(TelemetryError::EmptyFile);
        }
        let sample_period = infer_sample_period(&records);
        Ok(Self::from_sorted(records, sample_period))
    }

    /// Writes the CSV format. A label column is emitted when every record is
    /// labeled. Floats use the shortest representation that parses back to
    /// the identical value.
    pub fn to_csv(&self) -> String {
        let with_label = self.has_labels();
        let mut out = String::with_capacity(64 * (self.records.len() + 1));
        out.push_str(CSV_HEADER);
        if with_label {
            out.push_str(",label");
        }
        out.push('\n');
        for r in &self.records {
            write_decimal(&mut out, r.timestamp);
            for v in r.values {
                out.push(',');
                write_decimal(&mut out, v);
            }
            if with_label {
                let _ = write!(out, ",{}", r.label.unwrap_or_default().as_u8());
            }
            out.push('\n');
        }
        out
    }

    /// Drops every record whose temperature is zero or undefined. Timestamps
    /// of the surviving records are untouched, so gaps remain visible.
    pub fn trim_invalid(&self) -> Self {
        let records = self
            .records
            .iter()
            .filter(|r| !r.has_invalid_temperature())
            .cloned()
            .collect();
        Self::from_sorted(records, self.sample_period)
    }

    /// First `min(n, len)` records.
    pub fn take_head(&self, n: usize) -> Self {
        let n = n.min(self.records.len());
        Self::from_sorted(self.records[..n].to_vec(), self.sample_period)
    }

    /// Labels the last `min(window_points, len)` records as anomalies and every
    /// earlier record as normal.
    pub fn annotate_tail(&self, window_points: usize) -> Self {
        let n = self.records.len();
        let start = n - window_points.min(n);
        let records = self
            .records
            .iter()
            .enumerate()
            .map(|(i, r)| TelemetryRecord {
                label: Some(if i >= start { Label::Anomaly } else { Label::Normal }),
                ..r.clone()
            })
            .collect();
        Self::from_sorted(records, self.sample_period)
    }

    pub fn without_labels(&self) -> Self {
        let records = self
            .records
            .iter()
            .map(|r| TelemetryRecord {
                label: None,
                ..r.clone()
            })
            .collect();
        Self::from_sorted(records, self.sample_period)
    }
}

fn infer_sample_period(records: &[TelemetryRecord]) -> f64 {
    let mut diffs: Vec<f64> = records
        .windows(2)
        .map(|w| w[1].timestamp - w[0].timestamp)
        .filter(|d| *d > 0.0)
        .collect();
    if diffs.is_empty() {
        return 1.0;
    }
    diffs.sort_by(f64::total_cmp);
    diffs[diffs.len() / 2]
}

fn parse_decimal(s: &str) -> Option<f64> {
    match s {
        "nan" | "NaN" | "NAN" => Some(f64::NAN),
        "inf" => Some(f64::INFINITY),
        "-inf" => Some(f64::NEG_INFINITY),
        _ => s.parse::<f64>().ok().filter(|v| v.is_finite()),
    }
}

fn write_decimal(out: &mut String, v: f64) {
    if v.is_nan() {
        out.push_str("nan");
    } else if v.is_infinite() {
        out.push_str(if v > 0.0 { "inf" } else { "-inf" });
    } else {
        // Rust's Display for f64 is shortest-round-trip and never uses an
        // exponent, which keeps the `.`-decimal format.
        let _ = write!(out, "{v}");
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Measured,
    Simulated,
}

/// JSON sidecar that accompanies each run CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub rate_gy_per_h: f64,
    pub dut_stop_s: Option<f64>,
    pub monitor_stop_s: Option<f64>,
    pub origin: Origin,
}

impl RunMetadata {
    pub fn validate(&self) -> Result<(), TelemetryError> {
        if !(self.rate_gy_per_h >= 0.0 && self.rate_gy_per_h.is_finite()) {
            return Err(TelemetryError::InvalidMetadata(format!(
                "radiation rate must be non-negative, got {}",
                self.rate_gy_per_h
            )));
        }
        if let (Some(dut), Some(mon)) = (self.dut_stop_s, self.monitor_stop_s) {
            if dut > mon {
                return Err(TelemetryError::InvalidMetadata(format!(
                    "DUT stop time {dut} s is after monitor stop time {mon} s"
                )));
            }
        }
        Ok(())
    }
}

/// One board's telemetry plus scenario metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct BoardRun {
    pub series: TelemetrySeries,
    pub radiation_rate: f64,
    pub dut_stop_time: Option<f64>,
    pub monitor_stop_time: Option<f64>,
    pub origin: Origin,
}

impl BoardRun {
    pub fn new(series: TelemetrySeries, meta: &RunMetadata) -> Result<Self, TelemetryError> {
        meta.validate()?;
        Ok(Self {
            series,
            radiation_rate: meta.rate_gy_per_h,
            dut_stop_time: meta.dut_stop_s,
            monitor_stop_time: meta.monitor_stop_s,
            origin: meta.origin,
        })
    }

    pub fn metadata(&self) -> RunMetadata {
        RunMetadata {
            rate_gy_per_h: self.radiation_rate,
            dut_stop_s: self.dut_stop_time,
            monitor_stop_s: self.monitor_stop_time,
            origin: self.origin,
        }
    }

    pub fn with_series(&self, series: TelemetrySeries) -> Self {
        Self { series, ..self.clone() }
    }

    pub fn trim_invalid(&self) -> Self {
        self.with_series(self.series.trim_invalid())
    }

    pub fn annotate_tail(&self, window_points: usize) -> Self {
        self.with_series(self.series.annotate_tail(window_points))
    }

    /// Timestamp of the first annotated-anomalous record, if any.
    pub fn annotation_start(&self) -> Option<f64> {
        self.series
            .records()
            .iter()
            .find(|r| r.label == Some(Label::Anomaly))
            .map(|r| r.timestamp)
    }

    pub fn to_features(&self, include_rate: bool) -> FeatureMatrix {
        let mut names: Vec<String> = ChannelId::ALL.iter().map(|c| c.name().to_string()).collect();
        if include_rate {
            names.push("rate_gy_per_h".to_string());
        }
        let rows = self
            .series
            .records()
            .iter()
            .map(|r| {
                let mut row = r.values.to_vec();
                if include_rate {
                    row.push(self.radiation_rate);
                }
                row
            })
            .collect();
        FeatureMatrix {
            rows,
            names,
            labels: self.series.labels().filter(|_| self.series.has_labels()),
            scaler: None,
        }
    }
}

/// Per-feature z-score parameters, fitted on training rows only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    /// Population standard deviation; zero marks a constant feature.
    pub stddev: Vec<f64>,
}

impl Scaler {
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self, TelemetryError> {
        if rows.len() < 2 {
            return Err(TelemetryError::TooFewRows(rows.len()));
        }
        let d = rows[0].len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m).powi(2);
            }
        }
        let stddev = var.into_iter().map(|s| (s / n).sqrt()).collect();
        Ok(Self { mean, stddev })
    }

    pub fn transform_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.stddev))
            .map(|(v, (m, s))| if *s > 0.0 { (v - m) / s } else { 0.0 })
            .collect()
    }

    pub fn transform(&self, fm: &FeatureMatrix) -> Result<FeatureMatrix, TelemetryError> {
        if fm.width() != self.mean.len() && !fm.rows.is_empty() {
            return Err(TelemetryError::WidthMismatch {
                expected: self.mean.len(),
                got: fm.width(),
            });
        }
        Ok(FeatureMatrix {
            rows: fm.rows.iter().map(|r| self.transform_row(r)).collect(),
            names: fm.names.clone(),
            labels: fm.labels.clone(),
            scaler: Some(self.clone()),
        })
    }
}

/// Row-major feature vectors, one per record.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureMatrix {
    pub rows: Vec<Vec<f64>>,
    pub names: Vec<String>,
    pub labels: Option<Vec<Label>>,
    pub scaler: Option<Scaler>,
}

impl FeatureMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let width = rows.first().map_or(0, Vec::len);
        Self {
            rows,
            names: (0..width).map(|i| format!("x{i}")).collect(),
            labels: None,
            scaler: None,
        }
    }

    /// Declared width (from feature names), which is meaningful even when
    /// there are no rows.
    pub fn width(&self) -> usize {
        self.names.len()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Concatenates matrices of identical width. Labels survive only when
    /// every part carries them.
    pub fn concat(parts: &[FeatureMatrix]) -> Result<Self, TelemetryError> {
        let Some(first) = parts.first() else {
            return Ok(Self::default());
        };
        let mut out = FeatureMatrix {
            rows: Vec::new(),
            names: first.names.clone(),
            labels: Some(Vec::new()),
            scaler: None,
        };
        for p in parts {
            if p.width() != out.width() {
                return Err(TelemetryError::WidthMismatch {
                    expected: out.width(),
                    got: p.width(),
                });
            }
            out.rows.extend(p.rows.iter().cloned());
            out.labels = match (out.labels.take(), &p.labels) {
                (Some(mut acc), Some(l)) => {
                    acc.extend_from_slice(l);
                    Some(acc)
                }
                _ => None,
            };
        }
        Ok(out)
    }

    pub fn without_labels(mut self) -> Self {
        self.labels = None;
        self
    }
}

/// Fits a z-score scaler on `train` and applies it to `train` and `others`.
pub fn standardize(
    train: &FeatureMatrix,
    others: &[FeatureMatrix],
) -> Result<(FeatureMatrix, Vec<FeatureMatrix>, Scaler), TelemetryError> {
    let scaler = Scaler::fit(&train.rows)?;
    let scaled_train = scaler.transform(train)?;
    let scaled_others = others
        .iter()
        .map(|m| scaler.transform(m))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((scaled_train, scaled_others, scaler))
}
