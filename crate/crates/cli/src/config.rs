//! Tool configuration: a JSON file overlaid with command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use radwatch::detectors::{DetectorKind, GammaRule};
use radwatch::harness::{FeatureSet, HeadLength, PipelineConfig, SweepConfig, SweepStrategy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToolConfig {
    pub pipeline: PipelineConfig,
    pub sweep: SweepSettings,
    pub out_dir: Option<PathBuf>,
}

impl Default for ToolConfig {
    fn default() -> Self {
        let s = SweepConfig::default();
        Self {
            pipeline: PipelineConfig::default(),
            sweep: SweepSettings {
                strategy: s.strategy,
                head_lengths: s.head_lengths,
                subset_sizes: s.subset_sizes,
                feature_sets: s.feature_sets,
            },
            out_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSettings {
    pub strategy: SweepStrategy,
    pub head_lengths: Vec<HeadLength>,
    pub subset_sizes: Vec<usize>,
    pub feature_sets: Vec<FeatureSet>,
}

impl ToolConfig {
    pub fn sweep_config(&self) -> SweepConfig {
        SweepConfig {
            strategy: self.sweep.strategy,
            head_lengths: self.sweep.head_lengths.clone(),
            subset_sizes: self.sweep.subset_sizes.clone(),
            feature_sets: self.sweep.feature_sets.clone(),
            base: self.pipeline.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.pipeline;
        p.validate()?;
        let o = &p.params.ocsvm;
        if !(o.nu > 0.0 && o.nu <= 1.0) {
            bail!("nu must be in (0, 1], got {}", o.nu);
        }
        if let GammaRule::Fixed(g) = o.gamma {
            if !(g > 0.0) {
                bail!("gamma must be positive, got {g}");
            }
        }
        let c = p.params.envelope.contamination;
        if !(c > 0.0 && c < 0.5) {
            bail!("contamination must be in (0, 0.5), got {c}");
        }
        if p.params.lof.k == 0 {
            bail!("LOF k must be >= 1");
        }
        if !(p.params.chart.k_sigma > 0.0) {
            bail!("k_sigma must be positive");
        }
        Ok(())
    }
}

fn parse_head(s: &str) -> Result<HeadLength, String> {
    if s == "all" {
        return Ok(HeadLength::All);
    }
    s.parse::<usize>()
        .map(HeadLength::Points)
        .map_err(|_| format!("expected a point count or 'all', got '{s}'"))
}

fn parse_feature_set(s: &str) -> Result<FeatureSet, String> {
    match s {
        "sensors" => Ok(FeatureSet::Sensors),
        "sensors_plus_rate" | "sensors+rate" => Ok(FeatureSet::SensorsPlusRate),
        _ => Err(format!("unknown feature set '{s}'")),
    }
}

fn parse_gamma(s: &str) -> Result<GammaRule, String> {
    match s {
        "scale" => Ok(GammaRule::Scale),
        "median" => Ok(GammaRule::Median),
        _ => s
            .parse::<f64>()
            .map(GammaRule::Fixed)
            .map_err(|_| format!("expected 'scale', 'median' or a number, got '{s}'")),
    }
}

fn parse_strategy(s: &str) -> Result<SweepStrategy, String> {
    match s {
        "per_board" => Ok(SweepStrategy::PerBoard),
        "board_subsets" => Ok(SweepStrategy::BoardSubsets),
        "head_lengths" => Ok(SweepStrategy::HeadLengths),
        _ => Err(format!("unknown strategy '{s}'")),
    }
}

/// Flags shared by every subcommand that trains or evaluates.
#[derive(Debug, Clone, Args, Default)]
pub struct ConfigArgs {
    /// JSON config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub detector: Option<DetectorKind>,
    #[arg(long)]
    pub nu: Option<f64>,
    /// `scale`, `median` or a positive number.
    #[arg(long, value_parser = parse_gamma)]
    pub gamma: Option<GammaRule>,
    #[arg(long)]
    pub contamination: Option<f64>,
    #[arg(long = "lof-k")]
    pub lof_k: Option<usize>,
    #[arg(long = "lof-threshold")]
    pub lof_threshold: Option<f64>,
    #[arg(long = "k-sigma")]
    pub k_sigma: Option<f64>,
    #[arg(long)]
    pub debounce: Option<usize>,
    /// Points annotated as anomalous at the end of each run.
    #[arg(long)]
    pub annotate: Option<usize>,
    /// Training head length per board, or `all`.
    #[arg(long, value_parser = parse_head)]
    pub head: Option<HeadLength>,
    #[arg(long = "feature-set", value_parser = parse_feature_set)]
    pub feature_set: Option<FeatureSet>,
    #[arg(long = "no-standardize")]
    pub no_standardize: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_parser = parse_strategy)]
    pub strategy: Option<SweepStrategy>,
}

impl ConfigArgs {
    pub fn resolve(&self, out: Option<&Path>) -> Result<ToolConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?
            }
            None => ToolConfig::default(),
        };
        let p = &mut cfg.pipeline;
        if let Some(d) = self.detector {
            p.detector = d;
        }
        if let Some(v) = self.nu {
            p.params.ocsvm.nu = v;
        }
        if let Some(v) = self.gamma {
            p.params.ocsvm.gamma = v;
        }
        if let Some(v) = self.contamination {
            p.params.envelope.contamination = v;
        }
        if let Some(v) = self.lof_k {
            p.params.lof.k = v;
        }
        if let Some(v) = self.lof_threshold {
            p.params.lof.threshold = v;
        }
        if let Some(v) = self.k_sigma {
            p.params.chart.k_sigma = v;
        }
        if let Some(v) = self.debounce {
            p.policy.debounce_m = v;
        }
        if let Some(v) = self.annotate {
            p.annotate_w = v;
        }
        if let Some(v) = self.head {
            p.head = v;
        }
        if let Some(v) = self.feature_set {
            p.feature_set = v;
        }
        if self.no_standardize {
            p.standardize = false;
        }
        if let Some(v) = self.seed {
            p.seed = v;
        }
        if let Some(v) = self.strategy {
            cfg.sweep.strategy = v;
        }
        if let Some(o) = out {
            cfg.out_dir = Some(o.to_path_buf());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
