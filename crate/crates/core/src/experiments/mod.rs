//! Experiment orchestration: configs, runners, manifests and comparisons.

mod config;
mod manifest;
mod pca;
mod runners;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use config::{ExperimentConfig, Value};
pub use manifest::{compare_runs, config_hash, run, Comparison, ComparisonRow, FileEntry, Metric, RunManifest, MANIFEST_FILE};
pub use pca::{principal_components, Projection};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentId {
    #[serde(rename = "thm1-case1")]
    Thm1Case1,
    #[serde(rename = "thm1-case2")]
    Thm1Case2,
    MomentumAblation,
    NonwhitenedAblation,
    MatfacEquiv,
    MatcompGamma,
    DepthVsWidth,
    CompressedVsNarrow,
    CollapseGrid,
    CollapseEps,
    CollapseInitType,
    #[serde(rename = "thm2-bound")]
    Thm2Bound,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 12] = [
        ExperimentId::Thm1Case1,
        ExperimentId::Thm1Case2,
        ExperimentId::MomentumAblation,
        ExperimentId::NonwhitenedAblation,
        ExperimentId::MatfacEquiv,
        ExperimentId::MatcompGamma,
        ExperimentId::DepthVsWidth,
        ExperimentId::CompressedVsNarrow,
        ExperimentId::CollapseGrid,
        ExperimentId::CollapseEps,
        ExperimentId::CollapseInitType,
        ExperimentId::Thm2Bound,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentId::Thm1Case1 => "thm1-case1",
            ExperimentId::Thm1Case2 => "thm1-case2",
            ExperimentId::MomentumAblation => "momentum-ablation",
            ExperimentId::NonwhitenedAblation => "nonwhitened-ablation",
            ExperimentId::MatfacEquiv => "matfac-equiv",
            ExperimentId::MatcompGamma => "matcomp-gamma",
            ExperimentId::DepthVsWidth => "depth-vs-width",
            ExperimentId::CompressedVsNarrow => "compressed-vs-narrow",
            ExperimentId::CollapseGrid => "collapse-grid",
            ExperimentId::CollapseEps => "collapse-eps",
            ExperimentId::CollapseInitType => "collapse-init-type",
            ExperimentId::Thm2Bound => "thm2-bound",
        }
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| Error::arg(format!("unknown experiment `{s}`")))
    }
}

/// An assertion-grade check evaluated by a runner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub(crate) fn new(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        Check {
            name: name.to_string(),
            passed,
            detail: detail.into(),
        }
    }
}

/// One value of a sweep metric; `None` when the run did not converge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricPoint {
    pub key: String,
    pub value: Option<f64>,
}

/// Everything a runner produces before it is written to disk.
#[derive(Debug, Clone)]
pub struct Outcome {
    /// `(file name, contents)` pairs.
    pub files: Vec<(String, String)>,
    pub summary: serde_json::Value,
    pub metrics: Vec<(Metric, Vec<MetricPoint>)>,
    pub checks: Vec<Check>,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn file(&self, name: &str) -> Option<&str> {
        self.files.iter().find(|(n, _)| n == name).map(|(_, c)| c.as_str())
    }
}

/// Runs the experiment in memory. Errors carry the experiment id.
pub fn execute(cfg: &ExperimentConfig) -> Result<Outcome> {
    runners::dispatch(cfg).map_err(|e| Error::Experiment {
        id: cfg.id.to_string(),
        source: Box::new(e),
    })
}

/// Output root: `PLAB_OUT` when set, else `./plab-out`.
pub fn default_out_root() -> PathBuf {
    std::env::var_os("PLAB_OUT")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("plab-out"))
}

/// Per-run directory `<root>/<id>-seed<seed>`.
pub fn run_dir(root: &Path, cfg: &ExperimentConfig) -> PathBuf {
    root.join(format!("{}-seed{}", cfg.id, cfg.seed().0))
}

/// Runs the default configuration of `id` and returns its manifest; the
/// acceptance verdict is `manifest.passed`.
pub fn verify(id: ExperimentId, out_root: &Path) -> Result<RunManifest> {
    let cfg = ExperimentConfig::defaults(id);
    run(&cfg, &out_root.join(format!("verify-{id}")))
}

/// Drops timing columns (`wall_time`, `*_time`) from a CSV so that two runs
/// of one config can be compared byte for byte.
pub fn deterministic_payload(csv: &str) -> String {
    let mut lines = csv.lines();
    let Some(header) = lines.next() else {
        return String::new();
    };
    let keep: Vec<bool> = header.split(',').map(|h| !h.ends_with("time")).collect();
    let filter = |line: &str| {
        line.split(',')
            .zip(&keep)
            .filter(|(_, k)| **k)
            .map(|(c, _)| c)
            .collect::<Vec<_>>()
            .join(",")
    };
    let mut out = filter(header);
    out.push('\n');
    for line in lines {
        out.push_str(&filter(line));
        out.push('\n');
    }
    out
}
