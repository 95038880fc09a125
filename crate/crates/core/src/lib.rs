//! Telemetry anomaly detection for predicting radiation-induced board
//! failure from voltage and temperature streams.
//!
//! * [`telemetry`]: data model, CSV I/O, trimming, annotation, features
//! * [`simulator`]: seeded synthetic irradiation runs
//! * [`detectors`]: one-class SVM, MCD elliptic envelope, LOF, control chart
//! * [`stats`]: per-channel ANOVA, effect sizes, Bonferroni post-hoc tests
//! * [`harness`]: metrics, debounced detection, lead times, strategy sweeps

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod detectors;
pub mod harness;
pub mod simulator;
pub mod stats;
pub mod telemetry;

pub use detectors::{DetectorKind, DetectorModel, DetectorParams};
pub use harness::{Board, PipelineConfig};
pub use telemetry::{BoardRun, ChannelId, FeatureMatrix, Label, TelemetrySeries};
