// `!(x > 0.0)` guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;
mod manifest;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;

use radwatch::detectors::{ModelFile, MODEL_FORMAT_VERSION};
use radwatch::harness::{
    self, build_training_set, compare_models, format_compare, format_pipeline, plot_data_csv, run_pipeline, run_sweep,
    Board, EvalReport, FittedDetector,
};
use radwatch::simulator::{default_suite, simulate_suite, ScenarioSuite};
use radwatch::stats::{anova_by_channel, format_table};
use radwatch::telemetry::{BoardRun, RunMetadata, TelemetrySeries};

use config::{ConfigArgs, ToolConfig};
use manifest::{load_boards, load_run, read_manifest, write_dataset};

const DEFAULT_OUT: &str = "radwatch-out";

#[derive(Parser)]
#[command(
    name = "radwatch",
    version,
    about = "Radiation-induced board failure prediction from telemetry"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone)]
struct OutArg {
    /// Output directory.
    #[arg(long, env = "RADWATCH_OUT", default_value = DEFAULT_OUT)]
    out: PathBuf,
}

#[derive(clap::Args, Clone)]
struct ManifestArg {
    /// Run manifest (JSON) listing the boards.
    #[arg(long)]
    manifest: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a simulated suite: one CSV and sidecar per board plus a manifest.
    Simulate {
        /// Scenario suite JSON; defaults to the six reference rates.
        #[arg(long)]
        suite: Option<PathBuf>,
        /// Seed for the default suite.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "simulated")]
        dataset: String,
        #[command(flatten)]
        out: OutArg,
    },
    /// Drop records with a zero or undefined temperature.
    Trim {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Train the configured detector on the manifest's training heads.
    Train {
        #[command(flatten)]
        manifest: ManifestArg,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        out: OutArg,
        /// Model file; defaults to `<out>/model.json`.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Label every record of a CSV with a trained model.
    Score {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Sidecar metadata; required for models trained with the rate feature.
        #[arg(long)]
        meta: Option<PathBuf>,
        /// Output CSV; stdout when absent.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Full pipeline: train, score all boards, metrics, lead times, plot data.
    Evaluate {
        #[command(flatten)]
        manifest: ManifestArg,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        out: OutArg,
    },
    /// Evaluate one of the training strategies over all its cells.
    Sweep {
        #[command(flatten)]
        manifest: ManifestArg,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        out: OutArg,
    },
    /// Train all four detectors on the same data and compare them.
    Compare {
        #[command(flatten)]
        manifest: ManifestArg,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        out: OutArg,
    },
    /// Per-channel one-way ANOVA across radiation levels.
    Anova {
        #[command(flatten)]
        manifest: ManifestArg,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        /// Group runs by `rate` (runs at equal rates pooled) or by `board`.
        #[arg(long, default_value = "rate")]
        group_by: String,
        #[command(flatten)]
        out: OutArg,
    },
    /// Write only the per-board plot data (channels, annotation, model output).
    Plotdata {
        #[command(flatten)]
        manifest: ManifestArg,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        out: OutArg,
    },
}

/// Failure classes mapped to exit codes 2 and 1.
enum Failure {
    Usage(anyhow::Error),
    Data(anyhow::Error),
}

trait Classify<T> {
    fn usage(self) -> Result<T, Failure>;
    fn data(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn usage(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Usage(e.into()))
    }
    fn data(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Data(e.into()))
    }
}

#[derive(Serialize)]
struct ReportFile<'a, T> {
    tool_version: &'static str,
    tool_config: &'a ToolConfig,
    manifest: Option<String>,
    report: &'a T,
}

fn write_report<T: Serialize>(path: &Path, cfg: &ToolConfig, manifest: Option<&Path>, report: &T) -> Result<()> {
    let file = ReportFile {
        tool_version: env!("CARGO_PKG_VERSION"),
        tool_config: cfg,
        manifest: manifest.map(|p| p.display().to_string()),
        report,
    };
    fs::write(path, serde_json::to_string_pretty(&file)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn prepare_out(dir: &Path) -> Result<(), Failure> {
    if dir.exists() && !dir.is_dir() {
        return Err(Failure::Usage(anyhow!(
            "output path {} is not a directory",
            dir.display()
        )));
    }
    fs::create_dir_all(dir)
        .with_context(|| format!("creating output directory {}", dir.display()))
        .usage()
}

fn opt(x: Option<f64>) -> String {
    x.map_or(String::new(), |v| v.to_string())
}

fn eval_csv(rows: &[EvalReport]) -> String {
    let mut out = String::from("model,board_id,tp,fp,tn,fn,precision,recall,f1\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.model_kind.map_or("", |k| k.name()),
            r.board_id.as_deref().unwrap_or(""),
            r.tp,
            r.fp,
            r.tn,
            r.fn_,
            opt(r.precision),
            opt(r.recall),
            opt(r.f1)
        );
    }
    out
}

/// Manifest, resolved config and boards for the dataset subcommands.
fn setup(m: &ManifestArg, cfg: &ConfigArgs, out: &OutArg) -> Result<(Vec<Board>, ToolConfig), Failure> {
    let cfg = cfg.resolve(Some(&out.out)).usage()?;
    let manifest = read_manifest(&m.manifest).usage()?;
    let boards = load_boards(&m.manifest, &manifest).data()?;
    prepare_out(&out.out)?;
    Ok((boards, cfg))
}

fn save(path: PathBuf, text: String) -> Result<(), Failure> {
    fs::write(&path, text)
        .with_context(|| format!("writing {}", path.display()))
        .data()
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Simulate {
            suite,
            seed,
            dataset,
            out,
        } => {
            let suite: ScenarioSuite = match suite {
                Some(p) => {
                    let text = fs::read_to_string(&p)
                        .with_context(|| format!("reading suite {}", p.display()))
                        .usage()?;
                    serde_json::from_str(&text)
                        .with_context(|| format!("parsing suite {}", p.display()))
                        .usage()?
                }
                None => default_suite(seed),
            };
            suite.validate().usage()?;
            prepare_out(&out.out)?;
            let runs = simulate_suite(&suite).data()?;
            let boards: Vec<Board> = runs
                .into_iter()
                .enumerate()
                .map(|(i, run)| Board { id: i.to_string(), run })
                .collect();
            write_dataset(&out.out, &dataset, &boards).data()?;
            println!("wrote {} boards to {}", boards.len(), out.out.display());
        }
        Command::Trim { input, output } => {
            let text = fs::read_to_string(&input)
                .with_context(|| format!("reading {}", input.display()))
                .data()?;
            let series = TelemetrySeries::parse_csv(&text).data()?;
            let trimmed = series.trim_invalid();
            save(output, trimmed.to_csv())?;
            println!("kept {} of {} records", trimmed.len(), series.len());
        }
        Command::Train {
            manifest,
            cfg,
            out,
            model,
        } => {
            let (boards, cfg) = setup(&manifest, &cfg, &out)?;
            let p = &cfg.pipeline;
            let ts = build_training_set(&boards, p).data()?;
            let mut params = p.params.clone();
            params.envelope.mcd.seed = p.seed;
            let fitted = FittedDetector::fit(&ts.train, p.detector, &params, p.standardize).data()?;
            let file = ModelFile {
                format_version: MODEL_FORMAT_VERSION,
                feature_names: ts.train.names.clone(),
                scaler: fitted.scaler,
                params,
                model: fitted.model,
            };
            let path = model.unwrap_or_else(|| out.out.join("model.json"));
            save(path.clone(), file.to_json() + "\n")?;
            println!(
                "trained {} on {} rows -> {}",
                p.detector,
                ts.train.len(),
                path.display()
            );
        }
        Command::Score {
            model,
            input,
            meta,
            output,
        } => {
            let text = fs::read_to_string(&model)
                .with_context(|| format!("reading {}", model.display()))
                .usage()?;
            let file = ModelFile::from_json(&text).usage()?;
            let include_rate = file.feature_names.len() > radwatch::telemetry::NUM_CHANNELS;
            let run: BoardRun = match &meta {
                Some(m) => load_run(&input, m).data()?,
                None if include_rate => {
                    return Err(Failure::Usage(anyhow!("model uses the rate feature; pass --meta")));
                }
                None => {
                    let text = fs::read_to_string(&input)
                        .with_context(|| format!("reading {}", input.display()))
                        .data()?;
                    let meta = RunMetadata {
                        rate_gy_per_h: 0.0,
                        dut_stop_s: None,
                        monitor_stop_s: None,
                        origin: radwatch::telemetry::Origin::Measured,
                    };
                    BoardRun::new(TelemetrySeries::parse_csv(&text).data()?, &meta).data()?
                }
            };
            let run = run.trim_invalid();
            let features = run.to_features(include_rate);
            let fitted = FittedDetector {
                model: file.model,
                scaler: file.scaler,
            };
            let labels = fitted.predict(&features).data()?;
            let scaled = match &fitted.scaler {
                Some(s) => s.transform(&features).data()?,
                None => features,
            };
            let scores = fitted.model.scores(&scaled).data()?;
            let mut csv = String::from("time_s,score,label\n");
            for ((rec, s), l) in run.series.records().iter().zip(&scores).zip(&labels) {
                let _ = writeln!(csv, "{},{},{}", rec.timestamp, s, l.as_u8());
            }
            match output {
                Some(p) => save(p, csv)?,
                None => print!("{csv}"),
            }
        }
        Command::Evaluate { manifest, cfg, out } => {
            let (boards, cfg) = setup(&manifest, &cfg, &out)?;
            let (report, plot) = harness::run_pipeline_with_plot(&boards, &cfg.pipeline).data()?;
            write_report(&out.out.join("evaluate.json"), &cfg, Some(&manifest.manifest), &report).data()?;
            let rows: Vec<EvalReport> = report.boards.iter().map(|b| b.eval.clone()).collect();
            save(out.out.join("evaluate.csv"), eval_csv(&rows))?;
            save(out.out.join("plot_data.csv"), plot)?;
            print!("{}", format_pipeline(&report));
        }
        Command::Sweep { manifest, cfg, out } => {
            let (boards, cfg) = setup(&manifest, &cfg, &out)?;
            let report = run_sweep(&cfg.sweep_config(), &boards).data()?;
            write_report(&out.out.join("sweep.json"), &cfg, Some(&manifest.manifest), &report).data()?;
            let mut csv = String::from("cell,precision,recall,f1,undefined_f1\n");
            for c in &report.cells {
                let _ = writeln!(
                    csv,
                    "\"{}\",{},{},{},{}",
                    c.key,
                    opt(c.mean.precision),
                    opt(c.mean.recall),
                    opt(c.mean.f1),
                    c.mean.undefined_f1
                );
            }
            save(out.out.join("sweep.csv"), csv)?;
            for s in &report.summary {
                println!(
                    "{:<28} cells {:>3}  best {} ({})  worst {} ({})",
                    s.group,
                    s.cells,
                    opt(s.best_f1.map(|x| (x * 1000.0).round() / 1000.0)),
                    s.best_key,
                    opt(s.worst_f1.map(|x| (x * 1000.0).round() / 1000.0)),
                    s.worst_key
                );
            }
        }
        Command::Compare { manifest, cfg, out } => {
            let (boards, cfg) = setup(&manifest, &cfg, &out)?;
            let report = compare_models(&boards, &cfg.pipeline).data()?;
            write_report(&out.out.join("compare.json"), &cfg, Some(&manifest.manifest), &report).data()?;
            save(out.out.join("compare.csv"), eval_csv(&report.rows))?;
            print!("{}", format_compare(&report));
        }
        Command::Anova {
            manifest,
            alpha,
            group_by,
            out,
        } => {
            if !(alpha > 0.0 && alpha < 1.0) {
                return Err(Failure::Usage(anyhow!("alpha must be in (0, 1), got {alpha}")));
            }
            let m = read_manifest(&manifest.manifest).usage()?;
            let boards = load_boards(&manifest.manifest, &m).data()?;
            prepare_out(&out.out)?;
            let mut groups: Vec<(String, Vec<&BoardRun>)> = Vec::new();
            for b in &boards {
                let key = match group_by.as_str() {
                    "rate" => b.run.radiation_rate.to_string(),
                    "board" => b.id.clone(),
                    other => return Err(Failure::Usage(anyhow!("unknown grouping '{other}'"))),
                };
                match groups.iter_mut().find(|(k, _)| *k == key) {
                    Some((_, runs)) => runs.push(&b.run),
                    None => groups.push((key, vec![&b.run])),
                }
            }
            let reports = anova_by_channel(&groups, alpha).data()?;
            let cfg = ToolConfig {
                out_dir: Some(out.out.clone()),
                ..ToolConfig::default()
            };
            write_report(&out.out.join("anova.json"), &cfg, Some(&manifest.manifest), &reports).data()?;
            print!("{}", format_table(&reports));
        }
        Command::Plotdata { manifest, cfg, out } => {
            let (boards, cfg) = setup(&manifest, &cfg, &out)?;
            let report = run_pipeline(&boards, &cfg.pipeline).data()?;
            let ts = build_training_set(&boards, &cfg.pipeline).data()?;
            save(out.out.join("plot_data.csv"), plot_data_csv(&ts, &report.boards))?;
            println!("wrote {}", out.out.join("plot_data.csv").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Data(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
