//! Evaluation: confusion metrics, debounced detection, lead times, training
//! set construction and the three training strategies.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detectors::{DetectorError, DetectorKind, DetectorModel, DetectorParams};
use crate::telemetry::{standardize, BoardRun, ChannelId, FeatureMatrix, Label, Scaler, TelemetryError};

#[derive(Debug, Error, PartialEq)]
pub enum HarnessError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("board '{0}' has no usable records after trimming")]
    EmptyAfterTrim(String),
    #[error("no boards supplied")]
    NoBoards,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("annotation start {start} s lies outside the run span [{first}, {last}] s")]
    AnnotationOutsideRun { start: f64, first: f64, last: f64 },
    #[error("board '{board}': {source}")]
    Detector {
        board: String,
        #[source]
        source: DetectorError,
    },
    #[error(transparent)]
    Telemetry(#[from] TelemetryError),
}

/// A run together with its stable identifier.
#[derive(Debug, Clone, PartialEq)]
pub struct Board {
    pub id: String,
    pub run: BoardRun,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub model_kind: Option<DetectorKind>,
    pub board_id: Option<String>,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// `None` when undefined (no positive predictions).
    pub precision: Option<f64>,
    /// `None` when there are no true anomalies.
    pub recall: Option<f64>,
    /// `None` when either input is undefined or both are zero.
    pub f1: Option<f64>,
}

impl EvalReport {
    pub fn from_counts(tp: usize, fp: usize, tn: usize, fn_: usize) -> Self {
        let ratio = |a: usize, b: usize| (a + b > 0).then(|| a as f64 / (a + b) as f64);
        let precision = ratio(tp, fp);
        let recall = ratio(tp, fn_);
        let f1 = match (precision, recall) {
            (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
            _ => None,
        };
        Self {
            tp,
            fp,
            tn,
            fn_,
            precision,
            recall,
            f1,
            ..Self::default()
        }
    }

    fn tagged(mut self, kind: Option<DetectorKind>, board: &str) -> Self {
        self.model_kind = kind;
        self.board_id = Some(board.to_string());
        self
    }
}

/// Confusion counts with anomaly as the positive class.
pub fn precision_recall_f1(pred: &[Label], truth: &[Label]) -> Result<EvalReport, HarnessError> {
    if pred.len() != truth.len() {
        return Err(HarnessError::LengthMismatch(pred.len(), truth.len()));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (p, t) in pred.iter().zip(truth) {
        match (p.is_anomaly(), t.is_anomaly()) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    Ok(EvalReport::from_counts(tp, fp, tn, fn_))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectionPolicy {
    /// Consecutive anomaly labels required to declare a detection.
    pub debounce_m: usize,
}

impl Default for DetectionPolicy {
    fn default() -> Self {
        Self { debounce_m: 3 }
    }
}

/// Timestamp of the first sample that opens a run of at least `debounce_m`
/// consecutive anomalies.
pub fn detection_time(
    labels: &[Label],
    timestamps: &[f64],
    policy: DetectionPolicy,
) -> Result<Option<f64>, HarnessError> {
    if labels.len() != timestamps.len() {
        return Err(HarnessError::LengthMismatch(labels.len(), timestamps.len()));
    }
    if policy.debounce_m == 0 {
        return Err(HarnessError::InvalidConfig("debounce_m must be >= 1".into()));
    }
    let mut run = 0;
    for (i, l) in labels.iter().enumerate() {
        if l.is_anomaly() {
            run += 1;
            if run == policy.debounce_m {
                return Ok(Some(timestamps[i + 1 - run]));
            }
        } else {
            run = 0;
        }
    }
    Ok(None)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeadTimeReport {
    pub board_id: String,
    pub detection_time: Option<f64>,
    pub annotation_start: f64,
    /// `annotation_start - detection`; negative when detection is late.
    pub lead_vs_annotation: Option<f64>,
    /// `dut_stop_time - detection`.
    pub lead_vs_death: Option<f64>,
    /// Detection exists and precedes board death.
    pub saved: bool,
}

pub fn lead_time(
    board_id: &str,
    run: &BoardRun,
    detection: Option<f64>,
    annotation_start: f64,
) -> Result<LeadTimeReport, HarnessError> {
    let recs = run.series.records();
    if let (Some(first), Some(last)) = (recs.first(), recs.last()) {
        if annotation_start < first.timestamp || annotation_start > last.timestamp {
            return Err(HarnessError::AnnotationOutsideRun {
                start: annotation_start,
                first: first.timestamp,
                last: last.timestamp,
            });
        }
    }
    let lead_vs_annotation = detection.map(|d| annotation_start - d);
    let lead_vs_death = detection.zip(run.dut_stop_time).map(|(d, stop)| stop - d);
    Ok(LeadTimeReport {
        board_id: board_id.to_string(),
        detection_time: detection,
        annotation_start,
        lead_vs_annotation,
        lead_vs_death,
        saved: lead_vs_death.is_some_and(|l| l > 0.0),
    })
}

/// `[-]h:mm:ss` rendering of a signed duration in seconds.
pub fn format_hms(seconds: f64) -> String {
    let sign = if seconds < 0.0 { "-" } else { "" };
    let s = seconds.abs().round() as u64;
    format!("{sign}{}:{:02}:{:02}", s / 3600, (s / 60) % 60, s % 60)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSet {
    Sensors,
    SensorsPlusRate,
}

impl FeatureSet {
    pub fn include_rate(self) -> bool {
        self == FeatureSet::SensorsPlusRate
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadMode {
    /// `head_n` points from every board.
    PerBoard,
    /// `head_n` points in total, split evenly (rounded up) across boards.
    Total,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadLength {
    Points(usize),
    All,
}

impl HeadLength {
    fn take(self) -> usize {
        match self {
            HeadLength::Points(n) => n,
            HeadLength::All => usize::MAX,
        }
    }

    pub fn label(self) -> String {
        match self {
            HeadLength::Points(n) => n.to_string(),
            HeadLength::All => "all".into(),
        }
    }
}

/// Everything that determines one train/evaluate pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub detector: DetectorKind,
    pub params: DetectorParams,
    pub policy: DetectionPolicy,
    pub annotate_w: usize,
    pub head: HeadLength,
    pub head_mode: HeadMode,
    pub feature_set: FeatureSet,
    pub standardize: bool,
    /// Drop samples at or after the recorded DUT stop from training heads.
    pub head_before_stop: bool,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            detector: DetectorKind::Ocsvm,
            params: DetectorParams::default(),
            policy: DetectionPolicy::default(),
            annotate_w: 300,
            head: HeadLength::Points(420),
            head_mode: HeadMode::PerBoard,
            feature_set: FeatureSet::Sensors,
            standardize: true,
            head_before_stop: true,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.policy.debounce_m == 0 {
            return Err(HarnessError::InvalidConfig("debounce_m must be >= 1".into()));
        }
        if self.head == HeadLength::Points(0) {
            return Err(HarnessError::InvalidConfig("head length must be positive".into()));
        }
        Ok(())
    }

    fn effective_params(&self) -> DetectorParams {
        let mut p = self.params.clone();
        p.envelope.mcd.seed = self.seed;
        p
    }
}

/// One board prepared for evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSet {
    pub board_id: String,
    /// Trimmed and tail-annotated run.
    pub run: BoardRun,
    /// Labeled features of every record of `run`.
    pub features: FeatureMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    /// Unlabeled head rows of the training boards, in board-id order.
    pub train: FeatureMatrix,
    /// Evaluation sets in input order.
    pub eval: Vec<EvalSet>,
}

fn prepare_board(b: &Board, annotate_w: usize, fs: FeatureSet) -> Result<EvalSet, HarnessError> {
    let trimmed = b.run.trim_invalid();
    if trimmed.series.is_empty() {
        return Err(HarnessError::EmptyAfterTrim(b.id.clone()));
    }
    let run = trimmed.annotate_tail(annotate_w);
    let features = run.to_features(fs.include_rate());
    Ok(EvalSet {
        board_id: b.id.clone(),
        run,
        features,
    })
}

fn head_rows(set: &EvalSet, n: usize, before_stop: bool) -> FeatureMatrix {
    let mut n = n.min(set.features.len());
    if let (true, Some(stop)) = (before_stop, set.run.dut_stop_time) {
        n = n.min(set.run.series.records().partition_point(|r| r.timestamp < stop));
    }
    FeatureMatrix {
        rows: set.features.rows[..n].to_vec(),
        names: set.features.names.clone(),
        labels: None,
        scaler: None,
    }
}

/// Trims every board, concatenates the heads of the boards named in
/// `train_ids` (all boards when `None`) as unlabeled training rows, and
/// annotates the tail of every trimmed board for evaluation.
pub fn build_training_set_for(
    boards: &[Board],
    train_ids: Option<&[String]>,
    head: HeadLength,
    cfg: &PipelineConfig,
    fs: FeatureSet,
) -> Result<TrainingSet, HarnessError> {
    let annotate_w = cfg.annotate_w;
    if boards.is_empty() {
        return Err(HarnessError::NoBoards);
    }
    let eval = boards
        .iter()
        .map(|b| prepare_board(b, annotate_w, fs))
        .collect::<Result<Vec<_>, _>>()?;
    // Canonical order so input order never changes the trained model.
    let mut train_sets: Vec<&EvalSet> = eval
        .iter()
        .filter(|e| train_ids.is_none_or(|ids| ids.contains(&e.board_id)))
        .collect();
    if train_sets.is_empty() {
        return Err(HarnessError::InvalidConfig("no training boards selected".into()));
    }
    train_sets.sort_by(|a, b| a.board_id.cmp(&b.board_id));
    let per_board = match cfg.head_mode {
        HeadMode::PerBoard => head.take(),
        HeadMode::Total => head.take().div_ceil(train_sets.len()),
    };
    let parts: Vec<FeatureMatrix> = train_sets
        .iter()
        .map(|e| head_rows(e, per_board, cfg.head_before_stop))
        .collect();
    let train = FeatureMatrix::concat(&parts)?.without_labels();
    Ok(TrainingSet { train, eval })
}

pub fn build_training_set(boards: &[Board], cfg: &PipelineConfig) -> Result<TrainingSet, HarnessError> {
    build_training_set_for(boards, None, cfg.head, cfg, cfg.feature_set)
}

/// A trained detector together with the scaler its inputs pass through.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedDetector {
    pub model: DetectorModel,
    pub scaler: Option<Scaler>,
}

impl FittedDetector {
    pub fn fit(
        train: &FeatureMatrix,
        kind: DetectorKind,
        params: &DetectorParams,
        scale: bool,
    ) -> Result<Self, HarnessError> {
        let wrap = |source| HarnessError::Detector {
            board: "<training set>".into(),
            source,
        };
        let (data, scaler) = if scale {
            let (t, _, s) = standardize(train, &[])?;
            (t, Some(s))
        } else {
            (train.clone(), None)
        };
        let model = DetectorModel::train(kind, &data, params).map_err(wrap)?;
        Ok(Self { model, scaler })
    }

    pub fn predict(&self, data: &FeatureMatrix) -> Result<Vec<Label>, DetectorError> {
        match &self.scaler {
            Some(s) => {
                let scaled = s.transform(data).map_err(|e| DetectorError::Format(e.to_string()))?;
                self.model.predict_labels(&scaled)
            }
            None => self.model.predict_labels(data),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoardResult {
    pub eval: EvalReport,
    pub lead: LeadTimeReport,
    #[serde(skip)]
    pub predictions: Vec<Label>,
}

fn evaluate_set(
    fitted: &FittedDetector,
    set: &EvalSet,
    policy: DetectionPolicy,
    restrict_from: usize,
) -> Result<BoardResult, HarnessError> {
    let predictions = fitted.predict(&set.features).map_err(|source| HarnessError::Detector {
        board: set.board_id.clone(),
        source,
    })?;
    let truth = set.features.labels.clone().unwrap_or_default();
    let from = restrict_from.min(predictions.len());
    let eval =
        precision_recall_f1(&predictions[from..], &truth[from..])?.tagged(Some(fitted.model.kind()), &set.board_id);
    let ts = set.run.series.timestamps();
    let detection = detection_time(&predictions, &ts, policy)?;
    let annotation_start = set.run.annotation_start().or_else(|| ts.last().copied()).unwrap_or(0.0);
    let lead = lead_time(&set.board_id, &set.run, detection, annotation_start)?;
    Ok(BoardResult {
        eval,
        lead,
        predictions,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MeanMetrics {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    /// Boards whose metric was undefined and therefore excluded.
    pub undefined_precision: usize,
    pub undefined_recall: usize,
    pub undefined_f1: usize,
}

/// Arithmetic mean over boards, skipping undefined cells.
pub fn mean_metrics<'a>(reports: impl IntoIterator<Item = &'a EvalReport> + Clone) -> MeanMetrics {
    fn avg(xs: Vec<Option<f64>>) -> (Option<f64>, usize) {
        let undefined = xs.iter().filter(|x| x.is_none()).count();
        let vals: Vec<f64> = xs.into_iter().flatten().collect();
        let m = (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64);
        (m, undefined)
    }
    let (precision, undefined_precision) = avg(reports.clone().into_iter().map(|r| r.precision).collect());
    let (recall, undefined_recall) = avg(reports.clone().into_iter().map(|r| r.recall).collect());
    let (f1, undefined_f1) = avg(reports.into_iter().map(|r| r.f1).collect());
    MeanMetrics {
        precision,
        recall,
        f1,
        undefined_precision,
        undefined_recall,
        undefined_f1,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub config: PipelineConfig,
    pub train_rows: usize,
    pub boards: Vec<BoardResult>,
    pub mean: MeanMetrics,
    pub all_saved: bool,
}

/// Full canonical pass: trim, head training set, train, score every board.
pub fn run_pipeline(boards: &[Board], cfg: &PipelineConfig) -> Result<PipelineReport, HarnessError> {
    cfg.validate()?;
    let ts = build_training_set(boards, cfg)?;
    let fitted = FittedDetector::fit(&ts.train, cfg.detector, &cfg.effective_params(), cfg.standardize)?;
    let results = ts
        .eval
        .iter()
        .map(|e| evaluate_set(&fitted, e, cfg.policy, 0))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(PipelineReport {
        config: cfg.clone(),
        train_rows: ts.train.len(),
        mean: mean_metrics(results.iter().map(|r| &r.eval)),
        all_saved: results.iter().all(|r| r.lead.saved),
        boards: results,
    })
}

/// Tidy long-format CSV: one row per (board, time, track). Tracks are the
/// seven channels, `annotation` and `model_output`.
pub fn plot_data_csv(ts: &TrainingSet, results: &[BoardResult]) -> String {
    let mut out = String::from("board_id,time_s,track,value\n");
    for (set, res) in ts.eval.iter().zip(results) {
        for (i, rec) in set.run.series.records().iter().enumerate() {
            for ch in ChannelId::ALL {
                let _ = writeln!(out, "{},{},{},{}", set.board_id, rec.timestamp, ch.name(), rec.get(ch));
            }
            let ann = rec.label.unwrap_or_default().as_u8();
            let _ = writeln!(out, "{},{},annotation,{}", set.board_id, rec.timestamp, ann);
            let pred = res.predictions.get(i).copied().unwrap_or_default().as_u8();
            let _ = writeln!(out, "{},{},model_output,{}", set.board_id, rec.timestamp, pred);
        }
    }
    out
}

/// Runs the pipeline and returns the report together with the plot CSV.
pub fn run_pipeline_with_plot(
    boards: &[Board],
    cfg: &PipelineConfig,
) -> Result<(PipelineReport, String), HarnessError> {
    let report = run_pipeline(boards, cfg)?;
    let ts = build_training_set(boards, cfg)?;
    let csv = plot_data_csv(&ts, &report.boards);
    Ok((report, csv))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepStrategy {
    /// Train on one board's head, test on the rest of that board.
    PerBoard,
    /// Train on the heads of every subset of boards, test on all boards.
    BoardSubsets,
    /// Train on heads of varying length from all boards, test on all boards.
    HeadLengths,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub strategy: SweepStrategy,
    pub head_lengths: Vec<HeadLength>,
    pub subset_sizes: Vec<usize>,
    pub feature_sets: Vec<FeatureSet>,
    /// Detector, hyperparameters, policy, default head, seed.
    pub base: PipelineConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            strategy: SweepStrategy::HeadLengths,
            head_lengths: [300, 360, 420, 480, 520]
                .into_iter()
                .map(HeadLength::Points)
                .chain([HeadLength::All])
                .collect(),
            subset_sizes: (2..=6).collect(),
            feature_sets: vec![FeatureSet::Sensors],
            base: PipelineConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub key: String,
    pub feature_set: FeatureSet,
    pub head: HeadLength,
    pub train_boards: Vec<String>,
    pub reports: Vec<EvalReport>,
    pub mean: MeanMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummaryRow {
    pub group: String,
    pub best_key: String,
    pub best_f1: Option<f64>,
    pub worst_key: String,
    pub worst_f1: Option<f64>,
    pub cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub config: SweepConfig,
    pub cells: Vec<SweepCell>,
    pub summary: Vec<SweepSummaryRow>,
}

struct CellSpec {
    key: String,
    group: String,
    fs: FeatureSet,
    head: HeadLength,
    train: Vec<String>,
    per_board_test: bool,
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    if k > n {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        let mut i = k;
        while i > 0 && idx[i - 1] == n - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return out;
        }
        idx[i - 1] += 1;
        for j in i..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

fn fs_name(fs: FeatureSet) -> &'static str {
    match fs {
        FeatureSet::Sensors => "sensors",
        FeatureSet::SensorsPlusRate => "sensors_plus_rate",
    }
}

fn cell_specs(cfg: &SweepConfig, ids: &[String]) -> Result<Vec<CellSpec>, HarnessError> {
    if cfg.feature_sets.is_empty() {
        return Err(HarnessError::InvalidConfig("feature_sets is empty".into()));
    }
    let mut specs = Vec::new();
    for &fs in &cfg.feature_sets {
        let f = fs_name(fs);
        match cfg.strategy {
            SweepStrategy::PerBoard => {
                for id in ids {
                    specs.push(CellSpec {
                        key: format!("{f}/board={id}"),
                        group: format!("{f}/per_board"),
                        fs,
                        head: cfg.base.head,
                        train: vec![id.clone()],
                        per_board_test: true,
                    });
                }
            }
            SweepStrategy::BoardSubsets => {
                if cfg.subset_sizes.is_empty() {
                    return Err(HarnessError::InvalidConfig("subset_sizes is empty".into()));
                }
                for &s in &cfg.subset_sizes {
                    if s == 0 || s > ids.len() {
                        return Err(HarnessError::InvalidConfig(format!(
                            "subset size {s} out of range for {} boards",
                            ids.len()
                        )));
                    }
                    for combo in combinations(ids.len(), s) {
                        let train: Vec<String> = combo.iter().map(|&i| ids[i].clone()).collect();
                        specs.push(CellSpec {
                            key: format!("{f}/size={s}/{{{}}}", train.join(",")),
                            group: format!("{f}/size={s}"),
                            fs,
                            head: cfg.base.head,
                            train,
                            per_board_test: false,
                        });
                    }
                }
            }
            SweepStrategy::HeadLengths => {
                if cfg.head_lengths.is_empty() {
                    return Err(HarnessError::InvalidConfig("head_lengths is empty".into()));
                }
                for &h in &cfg.head_lengths {
                    specs.push(CellSpec {
                        key: format!("{f}/head={}", h.label()),
                        group: format!("{f}/head={}", h.label()),
                        fs,
                        head: h,
                        train: ids.to_vec(),
                        per_board_test: false,
                    });
                }
            }
        }
    }
    Ok(specs)
}

fn run_cell(boards: &[Board], cfg: &SweepConfig, spec: &CellSpec) -> Result<SweepCell, HarnessError> {
    let base = &cfg.base;
    let ts = build_training_set_for(boards, Some(&spec.train), spec.head, base, spec.fs)?;
    let fitted = FittedDetector::fit(&ts.train, base.detector, &base.effective_params(), base.standardize)?;
    let mut reports = Vec::new();
    for set in &ts.eval {
        if spec.per_board_test && !spec.train.contains(&set.board_id) {
            continue;
        }
        let from = if spec.per_board_test { spec.head.take() } else { 0 };
        reports.push(evaluate_set(&fitted, set, base.policy, from)?.eval);
    }
    Ok(SweepCell {
        key: spec.key.clone(),
        feature_set: spec.fs,
        head: spec.head,
        train_boards: spec.train.clone(),
        mean: mean_metrics(reports.iter()),
        reports,
    })
}

/// Evaluates every cell of the configured strategy. Cells run in parallel;
/// the report lists them in a fixed order.
pub fn run_sweep(cfg: &SweepConfig, boards: &[Board]) -> Result<SweepReport, HarnessError> {
    cfg.base.validate()?;
    if boards.is_empty() {
        return Err(HarnessError::NoBoards);
    }
    let ids: Vec<String> = boards.iter().map(|b| b.id.clone()).collect();
    let specs = cell_specs(cfg, &ids)?;
    let cells = specs
        .par_iter()
        .map(|s| run_cell(boards, cfg, s))
        .collect::<Result<Vec<_>, _>>()?;

    let mut groups: BTreeMap<&str, Vec<&SweepCell>> = BTreeMap::new();
    let mut order: Vec<&str> = Vec::new();
    for (spec, cell) in specs.iter().zip(&cells) {
        if !groups.contains_key(spec.group.as_str()) {
            order.push(&spec.group);
        }
        groups.entry(&spec.group).or_default().push(cell);
    }
    let rank = |c: &&SweepCell| c.mean.f1.unwrap_or(f64::NEG_INFINITY);
    let summary = order
        .iter()
        .map(|g| {
            let members = &groups[g];
            let best = members
                .iter()
                .max_by(|a, b| rank(a).total_cmp(&rank(b)))
                .expect("non-empty");
            let worst = members
                .iter()
                .min_by(|a, b| rank(a).total_cmp(&rank(b)))
                .expect("non-empty");
            SweepSummaryRow {
                group: g.to_string(),
                best_key: best.key.clone(),
                best_f1: best.mean.f1,
                worst_key: worst.key.clone(),
                worst_f1: worst.mean.f1,
                cells: members.len(),
            }
        })
        .collect();
    Ok(SweepReport {
        config: cfg.clone(),
        cells,
        summary,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub model_kind: DetectorKind,
    pub mean: MeanMetrics,
    pub boards_saved: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub config: PipelineConfig,
    /// One row per (model, board), models in a fixed order.
    pub rows: Vec<EvalReport>,
    pub leads: Vec<LeadTimeReport>,
    pub models: Vec<ModelSummary>,
}

/// Trains all four detectors on the canonical training set and evaluates
/// each on every board.
pub fn compare_models(boards: &[Board], cfg: &PipelineConfig) -> Result<CompareReport, HarnessError> {
    cfg.validate()?;
    let ts = build_training_set(boards, cfg)?;
    let params = cfg.effective_params();
    let per_model = DetectorKind::ALL
        .par_iter()
        .map(|&kind| {
            let fitted = FittedDetector::fit(&ts.train, kind, &params, cfg.standardize)?;
            ts.eval
                .iter()
                .map(|e| evaluate_set(&fitted, e, cfg.policy, 0))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    let mut rows = Vec::new();
    let mut leads = Vec::new();
    let mut models = Vec::new();
    for (kind, results) in DetectorKind::ALL.iter().zip(per_model) {
        models.push(ModelSummary {
            model_kind: *kind,
            mean: mean_metrics(results.iter().map(|r| &r.eval)),
            boards_saved: results.iter().filter(|r| r.lead.saved).count(),
        });
        for r in results {
            rows.push(r.eval);
            leads.push(r.lead);
        }
    }
    Ok(CompareReport {
        config: cfg.clone(),
        rows,
        leads,
        models,
    })
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or("undef".into(), |v| format!("{v:.3}"))
}

/// Human-readable per-model averages.
pub fn format_compare(report: &CompareReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<14} {:>9} {:>9} {:>9} {:>6}",
        "model", "precision", "recall", "f1", "saved"
    );
    for m in &report.models {
        let _ = writeln!(
            out,
            "{:<14} {:>9} {:>9} {:>9} {:>6}",
            m.model_kind.name(),
            fmt_opt(m.mean.precision),
            fmt_opt(m.mean.recall),
            fmt_opt(m.mean.f1),
            m.boards_saved
        );
    }
    out
}

/// Human-readable per-board table with lead times.
pub fn format_pipeline(report: &PipelineReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<10} {:>9} {:>9} {:>9} {:>12} {:>12} {:>6}",
        "board", "precision", "recall", "f1", "lead_annot", "lead_death", "saved"
    );
    for b in &report.boards {
        let _ = writeln!(
            out,
            "{:<10} {:>9} {:>9} {:>9} {:>12} {:>12} {:>6}",
            b.lead.board_id,
            fmt_opt(b.eval.precision),
            fmt_opt(b.eval.recall),
            fmt_opt(b.eval.f1),
            b.lead.lead_vs_annotation.map_or("none".into(), format_hms),
            b.lead.lead_vs_death.map_or("none".into(), format_hms),
            b.lead.saved
        );
    }
    let _ = writeln!(
        out,
        "mean: precision {} recall {} f1 {}",
        fmt_opt(report.mean.precision),
        fmt_opt(report.mean.recall),
        fmt_opt(report.mean.f1)
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::telemetry::{Origin, TelemetryRecord, TelemetrySeries};
    use Label::{Anomaly as A, Normal as N};

    #[test]
    fn worked_example() {
        // 10 true anomalies, 8 flagged, 5 of them correct.
        let mut truth = vec![N; 20];
        truth[..10].iter_mut().for_each(|l| *l = A);
        let mut pred = vec![N; 20];
        pred[..5].iter_mut().for_each(|l| *l = A);
        pred[10..13].iter_mut().for_each(|l| *l = A);
        let r = precision_recall_f1(&pred, &truth).unwrap();
        assert_eq!(r.precision, Some(0.625));
        assert_eq!(r.recall, Some(0.5));
        assert_eq!((r.tp, r.fp, r.tn, r.fn_), (5, 3, 7, 5));
    }

    #[test]
    fn perfect_and_empty_retrieval() {
        let truth = vec![N, A, A, N];
        let r = precision_recall_f1(&truth, &truth).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (Some(1.0), Some(1.0), Some(1.0)));
        let r = precision_recall_f1(&[N; 4], &truth).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (None, Some(0.0), None));
        assert_eq!(
            precision_recall_f1(&[N], &truth),
            Err(HarnessError::LengthMismatch(1, 4))
        );
    }

    #[test]
    fn debounce_skips_isolated_spike() {
        let labels = [N, A, N, N, A, A, A, N];
        let ts: Vec<f64> = (0..8).map(f64::from).collect();
        let p3 = DetectionPolicy { debounce_m: 3 };
        assert_eq!(detection_time(&labels, &ts, p3).unwrap(), Some(4.0));
        let p1 = DetectionPolicy { debounce_m: 1 };
        assert_eq!(detection_time(&labels, &ts, p1).unwrap(), Some(1.0));
        assert_eq!(detection_time(&[N; 8], &ts, p3).unwrap(), None);
        assert!(detection_time(&labels, &ts[..3], p3).is_err());
        assert!(detection_time(&labels, &ts, DetectionPolicy { debounce_m: 0 }).is_err());
    }

    fn run_of(len_s: usize, dut_stop: f64) -> BoardRun {
        let recs = (0..=len_s)
            .map(|i| TelemetryRecord::new(i as f64, [35.0, 40.0, 1.0, 1.8, 1.35, 0.675, 3.3]))
            .collect();
        BoardRun {
            series: TelemetrySeries::new(recs, 1.0).unwrap(),
            radiation_rate: 1.0,
            dut_stop_time: Some(dut_stop),
            monitor_stop_time: Some(len_s as f64),
            origin: Origin::Simulated,
        }
    }

    #[test]
    fn lead_time_shapes() {
        // 2:00:11 run, annotation over the last 300 s.
        let dur = 2 * 3600 + 11;
        let run = run_of(dur, 6960.0);
        let ann = (dur - 300) as f64;
        let det = ann - (3600.0 + 43.0 * 60.0 + 53.0);
        let r = lead_time("0", &run, Some(det), ann).unwrap();
        assert_eq!(format_hms(r.lead_vs_annotation.unwrap()), "1:43:53");
        assert!(r.saved);

        // 0:27:28 run, detection 12 s after annotation start.
        let dur = 27 * 60 + 28;
        let run = run_of(dur, 1396.0);
        let ann = (dur - 300) as f64;
        let r = lead_time("2", &run, Some(ann + 12.0), ann).unwrap();
        assert_eq!(format_hms(r.lead_vs_annotation.unwrap()), "-0:00:12");
        assert!(r.lead_vs_death.unwrap() > 0.0 && r.saved);

        let r = lead_time("2", &run, Some(ann), ann).unwrap();
        assert_eq!(r.lead_vs_annotation, Some(0.0));

        let r = lead_time("2", &run, None, ann).unwrap();
        assert!(!r.saved && r.lead_vs_death.is_none());

        assert!(lead_time("2", &run, None, 1e9).is_err());
    }

    #[test]
    fn combination_counts() {
        let total: usize = (2..=6).map(|k| combinations(6, k).len()).sum();
        assert_eq!(total, 57);
        assert_eq!(combinations(4, 2)[0], vec![0, 1]);
        assert_eq!(combinations(4, 2).last().unwrap(), &vec![2, 3]);
    }

    #[test]
    fn mean_skips_undefined() {
        let a = EvalReport::from_counts(1, 1, 0, 0);
        let b = EvalReport::from_counts(0, 0, 5, 5);
        let m = mean_metrics([&a, &b]);
        assert_eq!(m.precision, Some(0.5));
        assert_eq!(m.undefined_precision, 1);
        assert_eq!(m.recall, Some(0.5));
        assert_eq!(m.undefined_f1, 1);
    }
}
