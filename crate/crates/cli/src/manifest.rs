//! Run manifests: the list of (csv, sidecar) pairs that make up a dataset.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use radwatch::harness::Board;
use radwatch::telemetry::{BoardRun, RunMetadata, TelemetrySeries};

pub const MANIFEST_VERSION: &str = "radwatch-manifest/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    /// Relative paths resolve against the manifest's directory.
    pub csv: PathBuf,
    pub meta: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    /// Free-form dataset tag.
    pub dataset: String,
    pub boards: Vec<ManifestEntry>,
}

impl RunManifest {
    pub fn validate(&self) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            bail!("unsupported manifest version '{}'", self.version);
        }
        if self.boards.is_empty() {
            bail!("manifest lists no boards");
        }
        let mut seen = HashSet::new();
        for b in &self.boards {
            if !seen.insert(&b.id) {
                bail!("duplicate board id '{}'", b.id);
            }
        }
        Ok(())
    }
}

/// Reads and validates a manifest. Problems with the manifest itself are
/// usage errors; see [`load_boards`] for the data side.
pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    let text = fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
    let m: RunManifest = serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))?;
    m.validate()?;
    let base = path.parent().unwrap_or(Path::new("."));
    for b in &m.boards {
        for p in [&b.csv, &b.meta] {
            if !base.join(p).is_file() {
                bail!("board '{}': {} does not exist", b.id, base.join(p).display());
            }
        }
    }
    Ok(m)
}

pub fn load_run(csv: &Path, meta: &Path) -> Result<BoardRun> {
    let text = fs::read_to_string(csv).with_context(|| format!("reading {}", csv.display()))?;
    let series = TelemetrySeries::parse_csv(&text).with_context(|| format!("parsing {}", csv.display()))?;
    let meta_text = fs::read_to_string(meta).with_context(|| format!("reading {}", meta.display()))?;
    let meta: RunMetadata = serde_json::from_str(&meta_text).with_context(|| format!("parsing {}", meta.display()))?;
    Ok(BoardRun::new(series, &meta)?)
}

pub fn load_boards(manifest_path: &Path, m: &RunManifest) -> Result<Vec<Board>> {
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    m.boards
        .iter()
        .map(|e| {
            let run = load_run(&base.join(&e.csv), &base.join(&e.meta)).with_context(|| format!("board '{}'", e.id))?;
            Ok(Board { id: e.id.clone(), run })
        })
        .collect()
}

/// Writes one CSV and sidecar per board plus `manifest.json` into `dir`.
pub fn write_dataset(dir: &Path, dataset: &str, boards: &[Board]) -> Result<RunManifest> {
    let mut entries = Vec::new();
    for b in boards {
        let csv = PathBuf::from(format!("board_{}.csv", b.id));
        let meta = PathBuf::from(format!("board_{}.json", b.id));
        fs::write(dir.join(&csv), b.run.series.to_csv())?;
        fs::write(dir.join(&meta), serde_json::to_string_pretty(&b.run.metadata())? + "\n")?;
        entries.push(ManifestEntry {
            id: b.id.clone(),
            csv,
            meta,
        });
    }
    let m = RunManifest {
        version: MANIFEST_VERSION.into(),
        dataset: dataset.into(),
        boards: entries,
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&m)? + "\n")?;
    Ok(m)
}
