//! Scenario configuration: flat `key = value` lines, `[section]` headers or
//! dotted keys, `#` comments.
//!
//! ```text
//! seed = 7
//! [params]
//! N = 1
//! c = 0.5
//! a = [0.5]
//! grid.n_y = 96
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::Mutex;

use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Value {
    Num(f64),
    Bool(bool),
    List(Vec<f64>),
    Str(String),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Num(v) => write!(f, "{v}"),
            Value::Bool(b) => write!(f, "{b}"),
            Value::Str(s) => write!(f, "\"{s}\""),
            Value::List(v) => {
                let parts: Vec<String> = v.iter().map(|x| x.to_string()).collect();
                write!(f, "[{}]", parts.join(", "))
            }
        }
    }
}

/// Every key the front end understands, with its section.
pub const KNOWN_KEYS: &[&str] = &[
    "subcommand",
    "seed",
    "out",
    "params.N",
    "params.c",
    "params.a",
    "grid.x_extent",
    "grid.y_extent",
    "grid.n_x",
    "grid.n_y",
    "solver.horizon",
    "solver.dt",
    "solver.scheme",
    "solver.time",
    "solver.stencil",
    "solver.outer",
    "solver.tolerance",
    "solver.max_iterations",
    "solver.rannacher_steps",
    "solver.snapshots",
    "datum.kind",
    "datum.center_x",
    "datum.center_y",
    "datum.width",
    "datum.amplitude",
    "datum.offset",
    "kernel.t",
    "kernel.source_x",
    "kernel.source_y",
    "kernel.form",
    "kernel.samples",
    "kernel.sources",
    "kernel.stride",
    "kernel.t_min",
    "kernel.t_max",
    "kernel.x_extent",
    "kernel.y_min",
    "kernel.y_max",
    "kernel.k_min",
    "kernel.k_max",
    "kernel.k_points",
    "kernel.lower_floor",
    "kernel.held_out_rtol",
    "harnack.solution",
    "harnack.source_x",
    "harnack.source_y",
    "harnack.pairs",
    "harnack.held_out",
    "harnack.t_min",
    "harnack.horizon",
    "harnack.x_extent",
    "harnack.y_min",
    "harnack.y_max",
    "harnack.c_max",
    "harnack.form",
    "harnack.held_out_rtol",
    "harnack.rel_floor",
    "harnack.exponent",
    "barrier.kappa",
    "barrier.alpha",
    "barrier.delta",
    "barrier.beta",
    "barrier.radius",
    "barrier.points",
    "barrier.layout",
    "volume.samples",
    "volume.r0",
    "volume.big_r0",
    "mc.t",
    "mc.paths",
    "mc.dt",
    "mc.source_x",
    "mc.source_y",
    "mc.min_hits",
    "mc.reflection",
    "mc.chunk",
    "mc.n_x",
    "mc.n_y",
];

/// Parsed configuration. Lookups record the effective value (including
/// defaults) for the run manifest.
#[derive(Debug, Default)]
pub struct Config {
    values: BTreeMap<String, Value>,
    effective: Mutex<BTreeMap<String, Value>>,
}

fn parse_value(raw: &str) -> Result<Value> {
    let raw = raw.trim();
    if raw.is_empty() {
        bail!("missing value");
    }
    if let Some(inner) = raw.strip_prefix('[') {
        let inner = inner.strip_suffix(']').ok_or_else(|| anyhow!("unterminated list `{raw}`"))?;
        let items = inner
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>().map_err(|_| anyhow!("list item `{s}` is not a number")))
            .collect::<Result<Vec<_>>>()?;
        return Ok(Value::List(items));
    }
    if let Some(inner) = raw.strip_prefix('"') {
        let inner = inner.strip_suffix('"').ok_or_else(|| anyhow!("unterminated string `{raw}`"))?;
        return Ok(Value::Str(inner.to_string()));
    }
    match raw {
        "true" => return Ok(Value::Bool(true)),
        "false" => return Ok(Value::Bool(false)),
        _ => {}
    }
    if let Ok(v) = raw.parse::<f64>() {
        return Ok(Value::Num(v));
    }
    Ok(Value::Str(raw.to_string()))
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        let mut section = String::new();
        let mut errors = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = match line.find('#') {
                Some(i) => &line[..i],
                None => line,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                match name.strip_suffix(']') {
                    Some(name) if !name.trim().is_empty() => section = name.trim().to_string(),
                    _ => errors.push(format!("line {}: malformed section header `{line}`", n + 1)),
                }
                continue;
            }
            let Some((key, raw)) = line.split_once('=') else {
                errors.push(format!("line {}: expected `key = value`, got `{line}`", n + 1));
                continue;
            };
            let key = key.trim();
            let full = if section.is_empty() || key.contains('.') { key.to_string() } else { format!("{section}.{key}") };
            match parse_value(raw) {
                Ok(v) => {
                    if values.insert(full.clone(), v).is_some() {
                        errors.push(format!("line {}: duplicate key `{full}`", n + 1));
                    }
                }
                Err(e) => errors.push(format!("line {}: {e}", n + 1)),
            }
        }
        let unknown: Vec<&String> = values.keys().filter(|k| !KNOWN_KEYS.contains(&k.as_str())).collect();
        if !unknown.is_empty() {
            errors.push(format!(
                "unknown keys: {}",
                unknown.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
            ));
        }
        if !errors.is_empty() {
            bail!("{}", errors.join("\n"));
        }
        Ok(Self { values, effective: Mutex::new(BTreeMap::new()) })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    /// Applies a `key=value` override.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment.split_once('=').ok_or_else(|| anyhow!("override `{assignment}` is not `key=value`"))?;
        let key = key.trim();
        if !KNOWN_KEYS.contains(&key) {
            bail!("unknown keys: {key}");
        }
        self.values.insert(key.to_string(), parse_value(raw)?);
        Ok(())
    }

    pub fn contains(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    fn record(&self, key: &str, v: Value) {
        self.effective.lock().expect("config lock").insert(key.to_string(), v);
    }

    /// The effective configuration: every value read so far, defaults included.
    pub fn effective(&self) -> BTreeMap<String, Value> {
        self.effective.lock().expect("config lock").clone()
    }

    /// Renders `values` in the flat dotted form accepted by [`Config::parse`].
    pub fn render(values: &BTreeMap<String, Value>) -> String {
        values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn raw(&self) -> &BTreeMap<String, Value> {
        &self.values
    }

    pub fn f64(&self, key: &str, default: f64) -> Result<f64> {
        let v = match self.values.get(key) {
            None => default,
            Some(Value::Num(v)) => *v,
            Some(other) => bail!("`{key}` must be a number, got {other}"),
        };
        self.record(key, Value::Num(v));
        Ok(v)
    }

    pub fn opt_f64(&self, key: &str) -> Result<Option<f64>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(_) => self.f64(key, 0.0).map(Some),
        }
    }

    pub fn usize(&self, key: &str, default: usize) -> Result<usize> {
        let v = self.f64(key, default as f64)?;
        if v < 0.0 || v.fract() != 0.0 || v > u32::MAX as f64 {
            bail!("`{key}` must be a non-negative integer, got {v}");
        }
        Ok(v as usize)
    }

    pub fn u64(&self, key: &str, default: u64) -> Result<u64> {
        let v = match self.values.get(key) {
            None => default,
            Some(Value::Num(v)) if *v >= 0.0 && v.fract() == 0.0 && *v < 9.007_199_254_740_992e15 => *v as u64,
            Some(other) => bail!("`{key}` must be a non-negative integer, got {other}"),
        };
        self.record(key, Value::Num(v as f64));
        Ok(v)
    }

    pub fn list(&self, key: &str, default: &[f64]) -> Result<Vec<f64>> {
        let v = match self.values.get(key) {
            None => default.to_vec(),
            Some(Value::List(v)) => v.clone(),
            Some(Value::Num(v)) => vec![*v],
            Some(other) => bail!("`{key}` must be a list of numbers, got {other}"),
        };
        self.record(key, Value::List(v.clone()));
        Ok(v)
    }

    pub fn string(&self, key: &str, default: &str) -> Result<String> {
        let v = match self.values.get(key) {
            None => default.to_string(),
            Some(Value::Str(s)) => s.clone(),
            Some(other) => bail!("`{key}` must be a string, got {other}"),
        };
        self.record(key, Value::Str(v.clone()));
        Ok(v)
    }

    /// A string restricted to `choices`.
    pub fn choice(&self, key: &str, default: &str, choices: &[&str]) -> Result<String> {
        let v = self.string(key, default)?;
        if !choices.contains(&v.as_str()) {
            bail!("`{key}` must be one of {}, got `{v}`", choices.join(", "));
        }
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_round_trips() {
        let cfg = Config::parse("seed = 3\n[params]\nN = 2\nc = -0.25\na = [0.1, 0.30000000000000004]\n[harnack]\nform = shared\n").unwrap();
        let again = Config::parse(&Config::render(cfg.raw())).unwrap();
        assert_eq!(again.raw(), cfg.raw());
    }

    #[test]
    fn sections_dotted_and_comments() {
        let cfg = Config::parse(
            "seed = 7 # trailing\n\n[params]\nN = 1\nc = 0.5\na = [0.5]\ngrid.n_y = 96\n[harnack]\nform = no_time_factor\nsolution = \"grid\"\n",
        )
        .unwrap();
        assert_eq!(cfg.u64("seed", 0).unwrap(), 7);
        assert_eq!(cfg.usize("params.N", 0).unwrap(), 1);
        assert_eq!(cfg.list("params.a", &[]).unwrap(), vec![0.5]);
        assert_eq!(cfg.usize("grid.n_y", 0).unwrap(), 96);
        assert_eq!(cfg.string("harnack.form", "shared").unwrap(), "no_time_factor");
        assert_eq!(cfg.string("harnack.solution", "kernel").unwrap(), "grid");
        assert_eq!(cfg.f64("params.c", 0.0).unwrap(), 0.5);
        assert_eq!(cfg.f64("kernel.t", 0.25).unwrap(), 0.25);
        assert!(cfg.effective().contains_key("kernel.t"));
    }

    #[test]
    fn unknown_keys_are_all_listed() {
        let err = Config::parse("[params]\nN = 1\nfoo = 2\n[grid]\nbar = 3\n").unwrap_err().to_string();
        assert!(err.contains("params.foo") && err.contains("grid.bar"), "{err}");
    }

    #[test]
    fn malformed_lines_and_types() {
        assert!(Config::parse("seed 7").is_err());
        assert!(Config::parse("[params\nN = 1").is_err());
        assert!(Config::parse("params.a = [0.5, x]").is_err());
        assert!(Config::parse("seed = 1\nseed = 2").is_err());
        let cfg = Config::parse("params.N = 1.5\nparams.c = \"big\"").unwrap();
        assert!(cfg.usize("params.N", 0).is_err());
        assert!(cfg.f64("params.c", 0.0).is_err());
        let cfg = Config::parse("solver.outer = sideways").unwrap();
        assert!(cfg.choice("solver.outer", "neumann", &["neumann", "dirichlet"]).is_err());
    }

    #[test]
    fn overrides() {
        let mut cfg = Config::parse("params.c = 1").unwrap();
        cfg.set("params.c=2").unwrap();
        assert_eq!(cfg.f64("params.c", 0.0).unwrap(), 2.0);
        assert!(cfg.set("params.zz=2").is_err());
        assert!(cfg.set("nonsense").is_err());
    }
}
