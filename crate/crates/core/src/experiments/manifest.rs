use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{execute, Check, ExperimentConfig, ExperimentId, MetricPoint, Value};
use crate::error::{Error, Result};
use crate::tensor::io::fmt_f64;
use crate::tensor::RNG_ALGORITHM;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    ItersToConverge,
    TimeToConverge,
    FinalRecoveryError,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::ItersToConverge => "iters_to_converge",
            Metric::TimeToConverge => "time_to_converge",
            Metric::FinalRecoveryError => "final_recovery_error",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Metric::ItersToConverge, Metric::TimeToConverge, Metric::FinalRecoveryError]
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::arg(format!("unknown metric `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    /// Absent for the manifest itself.
    pub sha256: Option<String>,
    pub bytes: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub experiment: ExperimentId,
    pub config: BTreeMap<String, Value>,
    pub config_hash: String,
    pub seed: u64,
    pub rng_algorithm: String,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub files: Vec<FileEntry>,
    pub metrics: BTreeMap<Metric, Vec<MetricPoint>>,
    pub checks: Vec<Check>,
    pub passed: bool,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let path = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn sha256_hex(data: &[u8]) -> String {
    hex(&Sha256::digest(data))
}

/// Git-style content hash of the canonical config text:
/// `sha256("blob <len>\0" + text)`.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let text = cfg.to_text();
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", text.len()).as_bytes());
    h.update(text.as_bytes());
    hex(&h.finalize())
}

fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

/// Clears files left by an earlier run in `dir`; refuses directories holding
/// anything else.
fn prepare_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = dir.join(MANIFEST_FILE);
    if manifest.exists() {
        let old = RunManifest::load(&manifest)?;
        for f in old.files {
            let p = dir.join(&f.name);
            if p.is_file() {
                std::fs::remove_file(&p).map_err(|e| Error::io(&p, e))?;
            }
        }
    }
    let mut entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    if let Some(entry) = entries.next() {
        let name = entry.map_err(|e| Error::io(dir, e))?.file_name();
        return Err(Error::arg(format!(
            "output directory {} holds unrelated file {name:?}",
            dir.display()
        )));
    }
    Ok(())
}

/// Executes `cfg` and writes its CSVs, `summary.json`, `config.txt` and
/// `manifest.json` into `out_dir`.
pub fn run(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunManifest> {
    prepare_dir(out_dir)?;
    let started_unix = unix_now();
    let outcome = execute(cfg)?;
    let finished_unix = unix_now();

    let mut written: Vec<(String, Vec<u8>)> = outcome
        .files
        .iter()
        .map(|(n, c)| (n.clone(), c.clone().into_bytes()))
        .collect();
    let summary = serde_json::json!({
        "experiment": cfg.id,
        "summary": outcome.summary,
        "checks": outcome.checks,
        "passed": outcome.passed(),
    });
    written.push(("summary.json".into(), serde_json::to_vec_pretty(&summary)?));
    written.push(("config.txt".into(), cfg.to_text().into_bytes()));

    let mut files = Vec::new();
    for (name, bytes) in &written {
        let path = out_dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        files.push(FileEntry {
            name: name.clone(),
            sha256: Some(sha256_hex(bytes)),
            bytes: Some(bytes.len() as u64),
        });
    }
    files.push(FileEntry {
        name: MANIFEST_FILE.into(),
        sha256: None,
        bytes: None,
    });
    let manifest = RunManifest {
        experiment: cfg.id,
        config: cfg.params.clone(),
        config_hash: config_hash(cfg),
        seed: cfg.seed().0,
        rng_algorithm: RNG_ALGORITHM.into(),
        started_unix,
        finished_unix,
        files,
        metrics: outcome.metrics.iter().cloned().collect(),
        passed: outcome.passed(),
        checks: outcome.checks,
    };
    let path = out_dir.join(MANIFEST_FILE);
    std::fs::write(&path, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub key: String,
    pub a: Option<f64>,
    pub b: Option<f64>,
    /// `b − a` when both are defined.
    pub diff: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub metric: Metric,
    pub rows: Vec<ComparisonRow>,
    /// Monotonicity notes per sweep group, e.g. `b L3: decreasing, 0 inversions`.
    pub annotations: Vec<String>,
}

impl Comparison {
    pub fn to_csv(&self) -> String {
        let cell = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
        let mut out = String::from("key,a,b,diff\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{}\n", r.key, cell(r.a), cell(r.b), cell(r.diff)));
        }
        out
    }
}

/// Sweep keys look like `<group>-<setting>`; the group is everything before
/// the last dash.
fn group_of(key: &str) -> &str {
    key.rsplit_once('-').map(|(g, _)| g).unwrap_or("")
}

/// Counts increases along the sweep order (non-converged runs count as
/// increases).
fn inversions(values: &[Option<f64>]) -> usize {
    values
        .windows(2)
        .filter(|w| match (w[0], w[1]) {
            (Some(a), Some(b)) => b > a,
            (_, None) => true,
            (None, Some(_)) => false,
        })
        .count()
}

fn annotate(side: &str, points: &[MetricPoint], out: &mut Vec<String>) {
    let mut groups: Vec<(&str, Vec<Option<f64>>)> = Vec::new();
    for p in points {
        let g = group_of(&p.key);
        match groups.iter_mut().find(|(name, _)| *name == g) {
            Some((_, v)) => v.push(p.value),
            None => groups.push((g, vec![p.value])),
        }
    }
    for (g, v) in groups.iter().filter(|(_, v)| v.len() > 1) {
        let n = inversions(v);
        let shape = if n == 0 { "decreasing" } else { "not monotone" };
        let label = if g.is_empty() { side.to_string() } else { format!("{side} {g}") };
        out.push(format!("{label}: {shape}, {n} inversions"));
    }
}

/// Joins two manifests on the sweep keys of `metric`.
pub fn compare_runs(a: &RunManifest, b: &RunManifest, metric: Metric) -> Result<Comparison> {
    let get = |m: &RunManifest, side: &str| {
        m.metrics
            .get(&metric)
            .cloned()
            .ok_or_else(|| Error::Comparison(format!("run {side} ({}) has no `{metric}`", m.experiment)))
    };
    let (pa, pb) = (get(a, "a")?, get(b, "b")?);
    let mut keys: Vec<&str> = pa.iter().map(|p| p.key.as_str()).collect();
    for p in &pb {
        if !keys.contains(&p.key.as_str()) {
            keys.push(&p.key);
        }
    }
    let lookup = |pts: &[MetricPoint], k: &str| pts.iter().find(|p| p.key == k).and_then(|p| p.value);
    let rows = keys
        .iter()
        .map(|&k| {
            let (va, vb) = (lookup(&pa, k), lookup(&pb, k));
            ComparisonRow {
                key: k.to_string(),
                a: va,
                b: vb,
                diff: va.zip(vb).map(|(x, y)| y - x),
            }
        })
        .collect();
    let mut annotations = Vec::new();
    annotate("a", &pa, &mut annotations);
    annotate("b", &pb, &mut annotations);
    Ok(Comparison {
        metric,
        rows,
        annotations,
    })
}
