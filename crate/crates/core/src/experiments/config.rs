//! Flat `key = value` experiment configuration with per-experiment schemas.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ExperimentId;
use crate::error::{Error, Result};
use crate::tensor::io::fmt_f64;
use crate::tensor::Seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Int(u64),
    Real(f64),
    Ints(Vec<u64>),
    Reals(Vec<f64>),
    Word(String),
    Words(Vec<String>),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |v: Vec<String>| v.join(", ");
        match self {
            Value::Int(v) => write!(f, "{v}"),
            Value::Real(v) => write!(f, "{}", fmt_f64(*v)),
            Value::Ints(v) => write!(f, "{}", join(v.iter().map(u64::to_string).collect())),
            Value::Reals(v) => write!(f, "{}", join(v.iter().map(|x| fmt_f64(*x)).collect())),
            Value::Word(w) => write!(f, "{w}"),
            Value::Words(w) => write!(f, "{}", w.join(", ")),
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Kind {
    Int { min: u64 },
    Real { min: f64, max: f64, open_min: bool, open_max: bool },
    Ints { min: u64 },
    Reals { min: f64, open_min: bool },
    Words(&'static [&'static str]),
}

const POS: Kind = Kind::Real { min: 0.0, max: f64::INFINITY, open_min: true, open_max: true };
const NONNEG: Kind = Kind::Real { min: 0.0, max: f64::INFINITY, open_min: false, open_max: true };
const MOMENTUM: Kind = Kind::Real { min: 0.0, max: 1.0, open_min: false, open_max: true };
const FRACTION: Kind = Kind::Real { min: 0.0, max: 1.0, open_min: true, open_max: false };
const COUNT: Kind = Kind::Int { min: 1 };
const DEPTH: Kind = Kind::Int { min: 2 };
const ANY_INT: Kind = Kind::Int { min: 0 };
const ACTIVATIONS: &[&str] = &["linear", "relu"];
const INIT_KINDS: &[&str] = &["orthogonal", "normal", "uniform"];

struct Param {
    key: &'static str,
    kind: Kind,
    default: &'static str,
}

const fn p(key: &'static str, kind: Kind, default: &'static str) -> Param {
    Param { key, kind, default }
}

fn schema(id: ExperimentId) -> Vec<Param> {
    use ExperimentId::*;
    let mut s = match id {
        Thm1Case1 | MomentumAblation => vec![
            p("d", COUNT, "30"),
            p("r", COUNT, "3"),
            p("r_hat", COUNT, "3"),
            p("L", DEPTH, "3"),
            p("eps", POS, "1e-3"),
            p("eta", POS, "0.1"),
            p("lambda", NONNEG, "0"),
            p("mu", MOMENTUM, if id == MomentumAblation { "0.9" } else { "0" }),
            p("scale", POS, "0.1"),
            p("max_iters", COUNT, "2000"),
            p("loss_tol", POS, "1e-30"),
            p("snapshot_every", COUNT, "10"),
        ],
        Thm1Case2 => vec![
            p("d", COUNT, "30"),
            p("d_y", COUNT, "3"),
            p("L", DEPTH, "3"),
            p("eps", POS, "1e-3"),
            p("eta", POS, "0.1"),
            p("lambda", NONNEG, "0.1"),
            p("mu", MOMENTUM, "0"),
            p("scale", POS, "0.1"),
            p("max_iters", COUNT, "1000"),
            p("loss_tol", POS, "1e-30"),
            p("snapshot_every", COUNT, "10"),
        ],
        NonwhitenedAblation => vec![
            p("d", COUNT, "30"),
            p("d_y", COUNT, "3"),
            p("N", COUNT, "300"),
            p("L", DEPTH, "3"),
            p("eps", POS, "1e-3"),
            p("eta", POS, "1e-4"),
            p("lambda", NONNEG, "0"),
            p("scale", POS, "0.1"),
            p("max_iters", COUNT, "2000"),
            p("loss_tol", POS, "1e-30"),
            p("snapshot_every", COUNT, "20"),
        ],
        MatfacEquiv => vec![
            p("d", COUNT, "50"),
            p("r", COUNT, "4"),
            p("r_hat", COUNT, "4"),
            p("L", DEPTH, "3"),
            p("eps", POS, "1e-3"),
            p("eta", POS, "10"),
            p("gamma", NONNEG, "0"),
            p("scale", POS, "0.004"),
            p("max_iters", COUNT, "3000"),
            p("loss_tol", POS, "1e-10"),
            p("snapshot_every", COUNT, "10"),
        ],
        MatcompGamma => vec![
            p("d", COUNT, "100"),
            p("r", COUNT, "5"),
            p("r_hat", COUNT, "5"),
            p("L", DEPTH, "3"),
            p("eps", POS, "1e-3"),
            p("eta", POS, "0.1"),
            p("gamma", NONNEG, "0.01"),
            p("fraction", FRACTION, "0.2"),
            p("scale", POS, "0.1"),
            p("max_iters", COUNT, "300000"),
            p("loss_tol", POS, "1e-10"),
            p("log_every", COUNT, "1000"),
        ],
        DepthVsWidth => vec![
            p("d", COUNT, "50"),
            p("r", COUNT, "5"),
            p("widths", Kind::Ints { min: 1 }, "5, 10, 15, 20"),
            p("depths", Kind::Ints { min: 2 }, "2, 3"),
            p("eps", POS, "1e-3"),
            p("eta", POS, "0.1"),
            p("fraction", FRACTION, "0.3"),
            p("scale", POS, "0.1"),
            p("max_iters", COUNT, "300000"),
            p("loss_tol", POS, "1e-10"),
            p("log_every", COUNT, "1000"),
        ],
        CompressedVsNarrow => vec![
            p("d", COUNT, "100"),
            p("r", COUNT, "5"),
            p("r_hats", Kind::Ints { min: 1 }, "5, 10, 15, 20"),
            p("L", DEPTH, "3"),
            p("eps", POS, "1e-3"),
            p("eta", POS, "0.1"),
            p("gamma", NONNEG, "0.01"),
            p("fraction", FRACTION, "0.2"),
            p("scale", POS, "0.1"),
            p("max_iters", COUNT, "300000"),
            p("loss_tol", POS, "1e-10"),
            p("log_every", COUNT, "1000"),
        ],
        CollapseGrid => vec![
            p("K", Kind::Int { min: 2 }, "5"),
            p("n", COUNT, "10"),
            p("d", COUNT, "50"),
            p("depths", Kind::Ints { min: 2 }, "6, 8, 10"),
            p("activations", Kind::Words(ACTIVATIONS), "linear, relu"),
            p("eps", POS, "0.5"),
            p("eta", POS, "0.01"),
            p("max_iters", COUNT, "20000"),
            p("loss_tol", POS, "1e-8"),
        ],
        CollapseEps => vec![
            p("K", Kind::Int { min: 2 }, "5"),
            p("n", COUNT, "10"),
            p("d", COUNT, "50"),
            p("L", DEPTH, "4"),
            p("eps_list", Kind::Reals { min: 0.0, open_min: true }, "0.5, 0.25, 0.125"),
            p("eta", POS, "0.01"),
            p("max_iters", COUNT, "20000"),
            p("loss_tol", POS, "1e-8"),
        ],
        CollapseInitType => vec![
            p("K", Kind::Int { min: 2 }, "5"),
            p("n", COUNT, "10"),
            p("d", COUNT, "50"),
            p("L", DEPTH, "8"),
            p("inits", Kind::Words(INIT_KINDS), "orthogonal, normal, uniform"),
            p("eps", POS, "0.5"),
            p("eta", POS, "0.01"),
            p("max_iters", COUNT, "20000"),
            p("loss_tol", POS, "1e-8"),
        ],
        Thm2Bound => vec![
            p("K", Kind::Int { min: 2 }, "5"),
            p("n", COUNT, "10"),
            p("d", COUNT, "50"),
            p("L", DEPTH, "4"),
            p("eps", POS, "0.25"),
            p("eta", POS, "1e-3"),
            p("max_iters", COUNT, "200000"),
            p("loss_tol", POS, "1e-13"),
        ],
    };
    s.push(p("seed", ANY_INT, "0"));
    s
}

fn config_err(key: &str, msg: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_string(),
        msg: msg.into(),
    }
}

fn parse_value(key: &str, kind: Kind, raw: &str) -> Result<Value> {
    let raw = raw.trim();
    let int = |s: &str| -> Result<u64> {
        s.trim()
            .parse::<u64>()
            .map_err(|_| config_err(key, format!("`{s}` is not a nonnegative integer")))
    };
    let real = |s: &str| -> Result<f64> {
        s.trim()
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| config_err(key, format!("`{s}` is not a finite number")))
    };
    let items = || raw.split(',').map(str::trim).filter(|s| !s.is_empty());
    match kind {
        Kind::Int { min } => {
            let v = int(raw)?;
            if v < min {
                return Err(config_err(key, format!("must be at least {min}, got {v}")));
            }
            Ok(Value::Int(v))
        }
        Kind::Real { min, max, open_min, open_max } => {
            let v = real(raw)?;
            let low_ok = if open_min { v > min } else { v >= min };
            let high_ok = if open_max { v < max } else { v <= max };
            if !(low_ok && high_ok) {
                let (l, r) = (if open_min { '(' } else { '[' }, if open_max { ')' } else { ']' });
                return Err(config_err(key, format!("{v} is outside {l}{min}, {max}{r}")));
            }
            Ok(Value::Real(v))
        }
        Kind::Ints { min } => {
            let v = items().map(int).collect::<Result<Vec<_>>>()?;
            if v.is_empty() {
                return Err(config_err(key, "list is empty"));
            }
            if let Some(bad) = v.iter().find(|&&x| x < min) {
                return Err(config_err(key, format!("entries must be at least {min}, got {bad}")));
            }
            Ok(Value::Ints(v))
        }
        Kind::Reals { min, open_min } => {
            let v = items().map(real).collect::<Result<Vec<_>>>()?;
            if v.is_empty() {
                return Err(config_err(key, "list is empty"));
            }
            if let Some(bad) = v.iter().find(|&&x| if open_min { x <= min } else { x < min }) {
                return Err(config_err(key, format!("entry {bad} is out of range")));
            }
            Ok(Value::Reals(v))
        }
        Kind::Words(allowed) => {
            let v: Vec<String> = items().map(str::to_string).collect();
            if v.is_empty() {
                return Err(config_err(key, "list is empty"));
            }
            if let Some(bad) = v.iter().find(|w| !allowed.contains(&w.as_str())) {
                return Err(config_err(key, format!("`{bad}` is not one of {allowed:?}")));
            }
            Ok(Value::Words(v))
        }
    }
}

/// A validated experiment configuration: every schema key is present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub id: ExperimentId,
    pub params: BTreeMap<String, Value>,
}

impl ExperimentConfig {
    /// Defaults for `id`.
    pub fn defaults(id: ExperimentId) -> Self {
        Self::from_pairs(id, std::iter::empty::<(String, String)>()).expect("defaults satisfy the schema")
    }

    /// Builds a config from raw `(key, value)` overrides.
    pub fn from_pairs<I, K, V>(id: ExperimentId, pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        let spec = schema(id);
        let mut raw: BTreeMap<String, String> = BTreeMap::new();
        for (k, v) in pairs {
            let k = k.as_ref();
            if !spec.iter().any(|p| p.key == k) {
                return Err(config_err(k, format!("unknown key for {id}")));
            }
            raw.insert(k.to_string(), v.as_ref().to_string());
        }
        let mut params = BTreeMap::new();
        for prm in &spec {
            let text = raw.get(prm.key).map(String::as_str).unwrap_or(prm.default);
            params.insert(prm.key.to_string(), parse_value(prm.key, prm.kind, text)?);
        }
        let cfg = ExperimentConfig { id, params };
        cfg.cross_check()?;
        Ok(cfg)
    }

    /// Parses the flat format. The experiment comes from an `experiment` key,
    /// or from the file stem when the key is absent.
    pub fn parse(text: &str, fallback: Option<ExperimentId>) -> Result<Self> {
        let mut id = None;
        let mut pairs = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                config_err(line, format!("line {} is not `key = value`", lineno + 1))
            })?;
            let (k, v) = (k.trim(), v.trim());
            if k == "experiment" {
                id = Some(v.parse::<ExperimentId>().map_err(|_| config_err(k, format!("unknown experiment `{v}`")))?);
            } else {
                if pairs.iter().any(|(seen, _): &(String, String)| seen == k) {
                    return Err(config_err(k, "given more than once"));
                }
                pairs.push((k.to_string(), v.to_string()));
            }
        }
        let id = id
            .or(fallback)
            .ok_or_else(|| config_err("experiment", "missing and not implied by the file name"))?;
        Self::from_pairs(id, pairs)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let fallback = path
            .file_stem()
            .and_then(|s| s.to_str())
            .and_then(|s| s.parse::<ExperimentId>().ok());
        Self::parse(&text, fallback)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("experiment = {}\n", self.id);
        for prm in schema(self.id) {
            out.push_str(&format!("{} = {}\n", prm.key, self.params[prm.key]));
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    /// Replaces one parameter, revalidating the whole config.
    pub fn set(&self, key: &str, value: &str) -> Result<Self> {
        let mut pairs: Vec<(String, String)> = self
            .params
            .iter()
            .map(|(k, v)| (k.clone(), v.to_string()))
            .collect();
        match pairs.iter_mut().find(|(k, _)| k == key) {
            Some(slot) => slot.1 = value.to_string(),
            None => return Err(config_err(key, format!("unknown key for {}", self.id))),
        }
        Self::from_pairs(self.id, pairs)
    }

    fn get(&self, key: &str) -> Result<&Value> {
        self.params
            .get(key)
            .ok_or_else(|| config_err(key, format!("not a parameter of {}", self.id)))
    }

    pub fn int(&self, key: &str) -> Result<usize> {
        match self.get(key)? {
            Value::Int(v) => Ok(*v as usize),
            _ => Err(config_err(key, "not an integer parameter")),
        }
    }

    pub fn real(&self, key: &str) -> Result<f64> {
        match self.get(key)? {
            Value::Real(v) => Ok(*v),
            Value::Int(v) => Ok(*v as f64),
            _ => Err(config_err(key, "not a real parameter")),
        }
    }

    pub fn ints(&self, key: &str) -> Result<Vec<usize>> {
        match self.get(key)? {
            Value::Ints(v) => Ok(v.iter().map(|&x| x as usize).collect()),
            _ => Err(config_err(key, "not an integer list")),
        }
    }

    pub fn reals(&self, key: &str) -> Result<Vec<f64>> {
        match self.get(key)? {
            Value::Reals(v) => Ok(v.clone()),
            _ => Err(config_err(key, "not a real list")),
        }
    }

    pub fn words(&self, key: &str) -> Result<Vec<String>> {
        match self.get(key)? {
            Value::Words(v) => Ok(v.clone()),
            _ => Err(config_err(key, "not a word list")),
        }
    }

    pub fn seed(&self) -> Seed {
        Seed(self.int("seed").unwrap_or(0) as u64)
    }

    fn has(&self, key: &str) -> bool {
        self.params.contains_key(key)
    }

    /// Constraints spanning several keys; errors name the key to change.
    fn cross_check(&self) -> Result<()> {
        if self.has("r") && self.has("d") && self.int("r")? > self.int("d")? {
            return Err(config_err("r", "rank cannot exceed d"));
        }
        if self.has("r_hat") {
            let (d, rh) = (self.int("d")?, self.int("r_hat")?);
            if 2 * rh >= d {
                return Err(config_err("r_hat", format!("need 2*r_hat < d = {d}")));
            }
        }
        if self.has("r_hats") {
            let d = self.int("d")?;
            if self.ints("r_hats")?.iter().any(|&rh| 2 * rh >= d) {
                return Err(config_err("r_hats", format!("need 2*r_hat < d = {d}")));
            }
        }
        if self.has("d_y") && 2 * self.int("d_y")? >= self.int("d")? {
            return Err(config_err("d_y", "need 2*d_y < d"));
        }
        if self.has("N") && self.int("N")? < self.int("d")? {
            return Err(config_err("N", "need at least d samples"));
        }
        if self.has("lambda") && self.real("eta")? * self.real("lambda")? >= 1.0 {
            return Err(config_err("lambda", "eta * lambda must be below 1"));
        }
        if self.has("K") {
            let (k, n, d) = (self.int("K")?, self.int("n")?, self.int("d")?);
            if k * n > d {
                return Err(config_err("d", format!("need d >= K*n = {}", k * n)));
            }
            if d <= 2 * k {
                return Err(config_err("d", format!("need d > 2K = {}", 2 * k)));
            }
        }
        if self.has("widths") && self.ints("widths")?.iter().any(|&w| w > self.int("d").unwrap_or(0)) {
            return Err(config_err("widths", "widths cannot exceed d"));
        }
        Ok(())
    }
}
