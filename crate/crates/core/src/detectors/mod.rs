//! Anomaly detectors. Each is trained once into an immutable model that
//! labels feature vectors as normal (0) or anomalous (1).

pub mod chart;
pub mod envelope;
pub mod kernel;
pub mod linalg;
pub mod lof;
pub mod ocsvm;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use chart::{train_control_chart, ChartParams, ControlChartModel};
pub use envelope::{fit_mcd, train_envelope, EllipticEnvelopeModel, EnvelopeParams, McdFit, McdOptions};
pub use kernel::{rbf_kernel, Kernel};
pub use lof::{lof_score, train_lof, LofModel, LofParams};
pub use ocsvm::{train_ocsvm, GammaRule, OcsvmModel, OcsvmParams};

use crate::telemetry::{FeatureMatrix, Label};

/// Current version of the serialized model format.
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum DetectorError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("degenerate training data: {0}")]
    DegenerateData(String),
    #[error("bad hyperparameter: {0}")]
    BadHyperparameter(String),
    #[error("covariance is singular even after regularization")]
    SingularCovariance,
    #[error("need at least 2 rows, got {0}")]
    TooFewRows(usize),
    #[error("LOF needs 1 <= k < n, got k={k}, n={n}")]
    BadK { k: usize, n: usize },
    #[error("model file: {0}")]
    Format(String),
}

pub(crate) fn check_dim(expected: usize, x: &[f64]) -> Result<(), DetectorError> {
    if x.len() != expected {
        return Err(DetectorError::DimensionMismatch { expected, got: x.len() });
    }
    Ok(())
}

/// Non-empty, rectangular, finite.
pub(crate) fn check_rows(rows: &[Vec<f64>]) -> Result<(), DetectorError> {
    let Some(first) = rows.first() else {
        return Err(DetectorError::TooFewRows(0));
    };
    let d = first.len();
    if d == 0 {
        return Err(DetectorError::DegenerateData("zero-width rows".into()));
    }
    for r in rows {
        check_dim(d, r)?;
        if r.iter().any(|v| !v.is_finite()) {
            return Err(DetectorError::DegenerateData("non-finite training value".into()));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKind {
    Ocsvm,
    Envelope,
    Lof,
    ControlChart,
}

impl DetectorKind {
    pub const ALL: [DetectorKind; 4] = [
        DetectorKind::Envelope,
        DetectorKind::Lof,
        DetectorKind::Ocsvm,
        DetectorKind::ControlChart,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DetectorKind::Ocsvm => "ocsvm",
            DetectorKind::Envelope => "envelope",
            DetectorKind::Lof => "lof",
            DetectorKind::ControlChart => "control_chart",
        }
    }
}

impl fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DetectorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ocsvm" => Ok(DetectorKind::Ocsvm),
            "envelope" | "elliptic_envelope" => Ok(DetectorKind::Envelope),
            "lof" => Ok(DetectorKind::Lof),
            "control_chart" | "chart" => Ok(DetectorKind::ControlChart),
            other => Err(format!("unknown detector '{other}'")),
        }
    }
}

/// Hyperparameters for every detector kind.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorParams {
    pub ocsvm: OcsvmParams,
    pub envelope: EnvelopeParams,
    pub lof: LofParams,
    pub chart: ChartParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DetectorModel {
    Ocsvm(OcsvmModel),
    Envelope(EllipticEnvelopeModel),
    Lof(LofModel),
    ControlChart(ControlChartModel),
}

impl DetectorModel {
    pub fn train(kind: DetectorKind, data: &FeatureMatrix, params: &DetectorParams) -> Result<Self, DetectorError> {
        let rows = &data.rows;
        Ok(match kind {
            DetectorKind::Ocsvm => DetectorModel::Ocsvm(train_ocsvm(rows, &params.ocsvm)?),
            DetectorKind::Envelope => DetectorModel::Envelope(train_envelope(rows, &params.envelope)?),
            DetectorKind::Lof => DetectorModel::Lof(train_lof(rows, &params.lof)?),
            DetectorKind::ControlChart => DetectorModel::ControlChart(train_control_chart(rows, &params.chart)?),
        })
    }

    pub fn kind(&self) -> DetectorKind {
        match self {
            DetectorModel::Ocsvm(_) => DetectorKind::Ocsvm,
            DetectorModel::Envelope(_) => DetectorKind::Envelope,
            DetectorModel::Lof(_) => DetectorKind::Lof,
            DetectorModel::ControlChart(_) => DetectorKind::ControlChart,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            DetectorModel::Ocsvm(m) => m.dim(),
            DetectorModel::Envelope(m) => m.dim(),
            DetectorModel::Lof(m) => m.dim(),
            DetectorModel::ControlChart(m) => m.dim(),
        }
    }

    /// Native score of each detector: OCSVM decision value (positive is
    /// normal), Mahalanobis distance, LOF, or largest channel |z|.
    pub fn score(&self, x: &[f64]) -> Result<f64, DetectorError> {
        check_dim(self.dim(), x)?;
        Ok(match self {
            DetectorModel::Ocsvm(m) => m.decision_unchecked(x),
            DetectorModel::Envelope(m) => m.mahalanobis_unchecked(x),
            DetectorModel::Lof(m) => m.score_unchecked(x),
            DetectorModel::ControlChart(m) => m.max_z(x),
        })
    }

    pub fn label(&self, x: &[f64]) -> Result<Label, DetectorError> {
        check_dim(self.dim(), x)?;
        let anomalous = match self {
            // f(x) = 0 is treated as anomalous.
            DetectorModel::Ocsvm(m) => !(m.decision_unchecked(x) > 0.0),
            DetectorModel::Envelope(m) => !(m.mahalanobis_unchecked(x) <= m.threshold),
            DetectorModel::Lof(m) => !(m.score_unchecked(x) <= m.threshold),
            DetectorModel::ControlChart(m) => m.is_anomaly_unchecked(x),
        };
        Ok(if anomalous { Label::Anomaly } else { Label::Normal })
    }

    /// Labels every row in input order. Rows are scored in parallel.
    pub fn predict_labels(&self, data: &FeatureMatrix) -> Result<Vec<Label>, DetectorError> {
        if !data.is_empty() && data.width() != self.dim() {
            return Err(DetectorError::DimensionMismatch {
                expected: self.dim(),
                got: data.width(),
            });
        }
        data.rows.par_iter().map(|r| self.label(r)).collect()
    }

    pub fn scores(&self, data: &FeatureMatrix) -> Result<Vec<f64>, DetectorError> {
        data.rows.par_iter().map(|r| self.score(r)).collect()
    }
}

/// Versioned on-disk model: the trained detector plus the feature scaler it
/// expects its inputs to pass through.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub feature_names: Vec<String>,
    pub scaler: Option<crate::telemetry::Scaler>,
    pub params: DetectorParams,
    pub model: DetectorModel,
}

impl ModelFile {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, DetectorError> {
        let mut file: ModelFile = serde_json::from_str(text).map_err(|e| DetectorError::Format(e.to_string()))?;
        if file.format_version != MODEL_FORMAT_VERSION {
            return Err(DetectorError::Format(format!(
                "unsupported model format version {}",
                file.format_version
            )));
        }
        if let DetectorModel::Envelope(m) = &mut file.model {
            m.refresh()?;
        }
        Ok(file)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> FeatureMatrix {
        let rows = (0..10)
            .flat_map(|i| (0..10).map(move |j| vec![f64::from(i) * 0.1, f64::from(j) * 0.1]))
            .collect();
        FeatureMatrix::from_rows(rows)
    }

    #[test]
    fn every_kind_trains_and_labels() {
        let data = grid();
        let params = DetectorParams::default();
        let far = FeatureMatrix::from_rows(vec![vec![50.0, -50.0]]);
        for kind in DetectorKind::ALL {
            let m = DetectorModel::train(kind, &data, &params).unwrap();
            assert_eq!(m.kind(), kind);
            assert_eq!(m.predict_labels(&far).unwrap(), vec![Label::Anomaly], "{kind}");
            let empty = FeatureMatrix {
                names: data.names.clone(),
                ..FeatureMatrix::default()
            };
            assert!(m.predict_labels(&empty).unwrap().is_empty());
            let wrong = FeatureMatrix::from_rows(vec![vec![1.0]]);
            assert!(m.predict_labels(&wrong).is_err());
        }
    }

    #[test]
    fn model_file_round_trip() {
        let data = grid();
        let params = DetectorParams::default();
        for kind in DetectorKind::ALL {
            let model = DetectorModel::train(kind, &data, &params).unwrap();
            let file = ModelFile {
                format_version: MODEL_FORMAT_VERSION,
                feature_names: data.names.clone(),
                scaler: None,
                params: params.clone(),
                model,
            };
            let back = ModelFile::from_json(&file.to_json()).unwrap();
            assert_eq!(back.model.scores(&data).unwrap(), file.model.scores(&data).unwrap());
        }
    }

    #[test]
    fn rejects_unknown_version() {
        let data = grid();
        let file = ModelFile {
            format_version: 99,
            feature_names: vec![],
            scaler: None,
            params: DetectorParams::default(),
            model: DetectorModel::train(DetectorKind::ControlChart, &data, &DetectorParams::default()).unwrap(),
        };
        assert!(matches!(
            ModelFile::from_json(&file.to_json()),
            Err(DetectorError::Format(_))
        ));
    }

    #[test]
    fn kind_parsing() {
        for k in DetectorKind::ALL {
            assert_eq!(k.name().parse::<DetectorKind>().unwrap(), k);
        }
        assert!("svm".parse::<DetectorKind>().is_err());
    }
}
