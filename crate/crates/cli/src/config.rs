//! Experiment configuration: a sectioned TOML document.
//!
//! ```toml
//! [experiment]
//! command = "overshoot"
//! beta = 0.3
//! dim = 3
//! horizon = 200
//! replicas = 10000
//! seed = 1
//!
//! [environment]
//! family = "gaussian"
//! mean = 0.0
//! stddev = 1.0
//!
//! [grids]
//! t = [2.0, 4.0, 8.0, 16.0]
//! p = [1.0, 1.5, 2.0]
//! ```
//!
//! `check-conditions` also reads `[battery.<label>]` tables, each an
//! environment written like `[environment]`. Omitted keys take per-command
//! defaults, and [`ExperimentConfig::canonical`] writes them all out.

use polymer_lab::EnvironmentSpec;
use serde::Deserialize;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;
use std::path::PathBuf;
use std::str::FromStr;
use toml::{Spanned, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Command {
    Simulate,
    Moments,
    Overshoot,
    CheckConditions,
    Decompose,
    Oracle,
}

impl Command {
    pub const ALL: [Command; 6] = [
        Command::Simulate,
        Command::Moments,
        Command::Overshoot,
        Command::CheckConditions,
        Command::Decompose,
        Command::Oracle,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Moments => "moments",
            Command::Overshoot => "overshoot",
            Command::CheckConditions => "check-conditions",
            Command::Decompose => "decompose",
            Command::Oracle => "oracle",
        }
    }

    /// Grid names the command reads.
    pub fn grid_names(self) -> &'static [&'static str] {
        match self {
            Command::Simulate => &["t"],
            Command::Moments => &["n", "p"],
            Command::Overshoot => &["t", "p"],
            Command::CheckConditions => &["a", "beta", "p"],
            Command::Decompose => &["k"],
            Command::Oracle => &[],
        }
    }

    fn default_replicas(self) -> u64 {
        match self {
            Command::Moments => 10_000,
            Command::Overshoot => 1_000,
            Command::Oracle => 50,
            _ => 1,
        }
    }
}

impl FromStr for Command {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Command::ALL.into_iter().find(|c| c.as_str() == s).ok_or_else(|| {
            let names: Vec<&str> = Command::ALL.iter().map(|c| c.as_str()).collect();
            format!("unknown command `{s}` (expected one of {})", names.join(", "))
        })
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Grids whose entries are integers.
const INTEGER_GRIDS: [&str; 2] = ["n", "k"];

/// Largest `(2d)^n` the oracle command will enumerate.
const ORACLE_MAX_PATHS: f64 = (1u64 << 24) as f64;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub command: Command,
    /// The `[environment]` section; optional only for `check-conditions`.
    pub spec: Option<EnvironmentSpec>,
    /// `[battery.<label>]` environments, sorted by label.
    pub battery: Vec<(String, EnvironmentSpec)>,
    pub beta: f64,
    pub dim: usize,
    pub horizon: usize,
    pub replicas: u64,
    pub seed: u64,
    pub grids: BTreeMap<String, Vec<f64>>,
    /// Wall-clock budget for `overshoot`; results then depend on timing.
    pub max_seconds: Option<f64>,
    pub a3: Option<f64>,
    pub c3: Option<f64>,
    pub output_dir: Option<PathBuf>,
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

/// Every problem found in one config, in line order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigErrors(pub Vec<ConfigError>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

type Table = BTreeMap<String, Spanned<Value>>;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDoc {
    experiment: Option<Spanned<Table>>,
    environment: Option<Spanned<Table>>,
    grids: Option<Spanned<Table>>,
    battery: Option<BTreeMap<String, Spanned<Table>>>,
}

struct Reader<'a> {
    text: &'a str,
    errors: Vec<ConfigError>,
}

impl<'a> Reader<'a> {
    fn line(&self, span: Range<usize>) -> usize {
        let end = span.start.min(self.text.len());
        self.text[..end].matches('\n').count() + 1
    }

    fn err(&mut self, line: usize, message: impl Into<String>) {
        self.errors.push(ConfigError {
            line,
            message: message.into(),
        });
    }

    fn number(&mut self, section: &str, key: &str, v: &Spanned<Value>) -> Option<f64> {
        let line = self.line(v.span());
        match v.get_ref() {
            Value::Float(x) if x.is_finite() => Some(*x),
            Value::Integer(i) => Some(*i as f64),
            Value::Float(x) => {
                self.err(line, format!("`{key}` in [{section}] must be finite, got {x}"));
                None
            }
            other => {
                self.err(line, format!("`{key}` in [{section}] must be a number, got a {}", other.type_str()));
                None
            }
        }
    }

    fn integer(&mut self, section: &str, key: &str, v: &Spanned<Value>, min: i64) -> Option<i64> {
        let line = self.line(v.span());
        match v.get_ref() {
            Value::Integer(i) if *i >= min => Some(*i),
            Value::Integer(i) => {
                self.err(line, format!("`{key}` in [{section}] must be >= {min}, got {i}"));
                None
            }
            other => {
                self.err(line, format!("`{key}` in [{section}] must be an integer, got a {}", other.type_str()));
                None
            }
        }
    }

    fn string(&mut self, section: &str, key: &str, v: &Spanned<Value>) -> Option<String> {
        match v.get_ref() {
            Value::String(s) => Some(s.clone()),
            other => {
                let line = self.line(v.span());
                self.err(line, format!("`{key}` in [{section}] must be a string, got a {}", other.type_str()));
                None
            }
        }
    }

    fn unknown_keys(&mut self, section: &str, table: &Table) {
        for (k, v) in table {
            let line = self.line(v.span());
            self.err(line, format!("unknown key `{k}` in [{section}]"));
        }
    }

    /// An environment from a family name plus numeric parameters.
    fn environment(&mut self, section: &str, line: usize, mut table: Table) -> Option<EnvironmentSpec> {
        let family = match table.remove("family") {
            Some(v) => self.string(section, "family", &v)?,
            None => {
                self.err(line, format!("missing key `family` in [{section}]"));
                return None;
            }
        };
        let mut params = BTreeMap::new();
        let mut lines = BTreeMap::new();
        let mut ok = true;
        for (k, v) in &table {
            lines.insert(k.clone(), self.line(v.span()));
            match self.number(section, k, v) {
                Some(x) => {
                    params.insert(k.clone(), x);
                }
                None => ok = false,
            }
        }
        if !ok {
            return None;
        }
        match EnvironmentSpec::from_params(&family, &params) {
            Ok(spec) => Some(spec),
            Err(msg) => {
                // point at the parameter the message names, if any
                let at = lines
                    .iter()
                    .find(|(k, _)| msg.contains(&format!("`{k}`")))
                    .map(|(_, &l)| l)
                    .unwrap_or(line);
                self.err(at, format!("[{section}]: {msg}"));
                None
            }
        }
    }
}

fn from_toml_error(text: &str, e: &toml::de::Error) -> ConfigError {
    let line = e
        .span()
        .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
        .unwrap_or(1);
    ConfigError {
        line,
        message: e.message().trim().to_string(),
    }
}

fn bare_key(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

/// Parses and validates a config whose `[experiment]` section names its command.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigErrors> {
    parse_config_as(text, None)
}

/// Like [`parse_config`], with the command supplied from outside. A command
/// in the file must then agree with it.
pub fn parse_config_as(text: &str, command: Option<Command>) -> Result<ExperimentConfig, ConfigErrors> {
    let doc: RawDoc = toml::from_str(text).map_err(|e| ConfigErrors(vec![from_toml_error(text, &e)]))?;
    let mut r = Reader { text, errors: Vec::new() };
    let split = |s: Option<Spanned<Table>>, r: &Reader| s.map(|s| (r.line(s.span()), s.into_inner()));
    let (exp_line, mut exp) = split(doc.experiment, &r).unwrap_or((1, Table::new()));
    let env_section = split(doc.environment, &r);
    let env_present = env_section.is_some();
    let present: Vec<String> = exp.keys().cloned().collect();
    let absent = |key: &str| !present.iter().any(|k| k == key);
    let grids_raw = split(doc.grids, &r).map(|(_, t)| t).unwrap_or_default();

    // command first: the defaults depend on it
    let file_command = exp.remove("command").and_then(|v| {
        let line = r.line(v.span());
        let s = r.string("experiment", "command", &v)?;
        match s.parse::<Command>() {
            Ok(c) => Some((c, line)),
            Err(msg) => {
                r.err(line, msg);
                None
            }
        }
    });
    let command = match (file_command, command) {
        (Some((c, line)), Some(given)) if c != given => {
            r.err(line, format!("config is for `{c}` but the command line asks for `{given}`"));
            given
        }
        (Some((c, _)), _) => c,
        (None, Some(given)) => given,
        (None, None) => {
            r.err(exp_line, "missing key `command` in [experiment]");
            return Err(ConfigErrors(r.errors));
        }
    };

    let num = |r: &mut Reader, exp: &mut Table, key: &str| -> Option<(f64, usize)> {
        let v = exp.remove(key)?;
        let line = r.line(v.span());
        r.number("experiment", key, &v).map(|x| (x, line))
    };
    let beta = num(&mut r, &mut exp, "beta");
    let max_seconds = num(&mut r, &mut exp, "max_seconds");
    let a3 = num(&mut r, &mut exp, "a3");
    let c3 = num(&mut r, &mut exp, "c3");
    let int = |r: &mut Reader, exp: &mut Table, key: &str, min: i64| -> Option<(i64, usize)> {
        let v = exp.remove(key)?;
        let line = r.line(v.span());
        r.integer("experiment", key, &v, min).map(|x| (x, line))
    };
    let dim = int(&mut r, &mut exp, "dim", 1);
    let horizon = int(&mut r, &mut exp, "horizon", 1);
    let replicas = int(&mut r, &mut exp, "replicas", 1);
    let seed = int(&mut r, &mut exp, "seed", 0);
    let workers = int(&mut r, &mut exp, "workers", 1);
    let output_dir = exp
        .remove("output_dir")
        .and_then(|v| r.string("experiment", "output_dir", &v))
        .map(PathBuf::from);
    r.unknown_keys("experiment", &exp);

    let spec = env_section.and_then(|(line, t)| r.environment("environment", line, t));
    let mut battery = Vec::new();
    for (label, t) in doc.battery.unwrap_or_default() {
        let line = r.line(t.span());
        if !bare_key(&label) {
            r.err(line, format!("battery label `{label}` must use letters, digits, `_` or `-`"));
            continue;
        }
        if let Some(s) = r.environment(&format!("battery.{label}"), line, t.into_inner()) {
            battery.push((label, s));
        }
    }

    // validation against the command
    let beta = match beta {
        Some((b, line)) => {
            if b < 0.0 {
                r.err(line, format!("`beta` in [experiment] must be >= 0, got {b}"));
            }
            for (label, s) in spec.iter().map(|s| ("environment", s)).chain(battery.iter().map(|(l, s)| (l.as_str(), s))) {
                if b > s.beta_max() && command != Command::CheckConditions {
                    r.err(line, format!("`beta` = {b} exceeds beta_max = {} of [{label}]", s.beta_max()));
                }
            }
            b
        }
        None => {
            if absent("beta") {
                r.err(exp_line, "missing key `beta` in [experiment]");
            }
            0.0
        }
    };
    if command == Command::CheckConditions {
        if !env_present && battery.is_empty() {
            r.err(1, "check-conditions needs an [environment] section or [battery.<label>] tables");
        }
    } else {
        if !env_present {
            r.err(1, "missing section [environment]");
        }
        if !battery.is_empty() {
            r.err(1, format!("[battery] tables are only read by check-conditions, not `{command}`"));
        }
    }
    let dim_v = dim.map(|(d, _)| d as usize).unwrap_or(1);
    if let Some((d, line)) = dim {
        if d > 4 {
            r.err(line, format!("`dim` in [experiment] must be in 1..=4, got {d}"));
        }
    }
    let horizon_v = match horizon {
        Some((h, _)) => h as usize,
        None if command == Command::CheckConditions => 1,
        None => {
            if absent("horizon") {
                r.err(exp_line, "missing key `horizon` in [experiment]");
            }
            1
        }
    };
    if command == Command::Oracle {
        let paths = ((2 * dim_v) as f64).powf(horizon_v as f64);
        if paths > ORACLE_MAX_PATHS {
            let line = horizon.map(|(_, l)| l).unwrap_or(exp_line);
            r.err(line, format!("oracle would enumerate (2*{dim_v})^{horizon_v} paths, more than {ORACLE_MAX_PATHS}"));
        }
    }
    if let Some((s, line)) = max_seconds {
        if !(s > 0.0) {
            r.err(line, format!("`max_seconds` in [experiment] must be > 0, got {s}"));
        }
    }
    if let Some((a, line)) = a3 {
        if !(a >= 1.0) {
            r.err(line, format!("`a3` in [experiment] must be >= 1, got {a}"));
        }
    }
    if let Some((c, line)) = c3 {
        if !(c > 0.0) {
            r.err(line, format!("`c3` in [experiment] must be > 0, got {c}"));
        }
    }
    if command != Command::Overshoot {
        for (key, v) in [("max_seconds", &max_seconds), ("a3", &a3), ("c3", &c3)] {
            if let Some((_, line)) = v {
                r.err(*line, format!("`{key}` is only read by overshoot, not `{command}`"));
            }
        }
    }

    // grids
    let allowed = command.grid_names();
    let mut grids = BTreeMap::new();
    for (name, v) in grids_raw {
        let line = r.line(v.span());
        if !allowed.contains(&name.as_str()) {
            r.err(line, format!("grid `{name}` is not read by `{command}` (expected one of: {})", allowed.join(", ")));
            continue;
        }
        let Value::Array(items) = v.get_ref() else {
            r.err(line, format!("grid `{name}` must be an array"));
            continue;
        };
        let integer = INTEGER_GRIDS.contains(&name.as_str());
        let mut out = Vec::with_capacity(items.len());
        for item in items {
            match (item, integer) {
                (Value::Integer(i), _) => out.push(*i as f64),
                (Value::Float(x), false) if x.is_finite() => out.push(*x),
                _ => {
                    let want = if integer { "integers" } else { "finite numbers" };
                    r.err(line, format!("grid `{name}` must hold {want}"));
                    out.clear();
                    break;
                }
            }
        }
        if out.is_empty() {
            if !items.is_empty() {
                continue;
            }
            r.err(line, format!("grid `{name}` is empty"));
            continue;
        }
        if out.windows(2).any(|w| w[1] <= w[0]) {
            r.err(line, format!("grid `{name}` must be strictly increasing"));
            continue;
        }
        let (lo, hi) = (out[0], out[out.len() - 1]);
        let bad = match name.as_str() {
            "t" => (lo <= 1.0).then(|| "entries must exceed 1".to_string()),
            "p" => (lo < 1.0 || hi > 2.0).then(|| "entries must lie in [1, 2]".to_string()),
            "n" => (lo < 1.0 || hi > horizon_v as f64).then(|| format!("entries must lie in 1..={horizon_v}")),
            "k" => (lo < 0.0 || hi > horizon_v as f64).then(|| format!("entries must lie in 0..={horizon_v}")),
            "a" => (lo <= 0.0).then(|| "entries must be positive".to_string()),
            "beta" => (lo < 0.0).then(|| "entries must be >= 0".to_string()),
            _ => None,
        };
        if let Some(msg) = bad {
            r.err(line, format!("grid `{name}`: {msg}"));
            continue;
        }
        grids.insert(name, out);
    }
    for name in allowed {
        if !grids.contains_key(*name) {
            grids.insert(name.to_string(), default_grid(command, name, beta, horizon_v));
        }
    }

    if !r.errors.is_empty() {
        let mut errors = r.errors;
        errors.sort_by_key(|e| e.line);
        return Err(ConfigErrors(errors));
    }
    Ok(ExperimentConfig {
        command,
        spec,
        battery,
        beta,
        dim: dim_v,
        horizon: horizon_v,
        replicas: replicas.map(|(n, _)| n as u64).unwrap_or_else(|| command.default_replicas()),
        seed: seed.map(|(s, _)| s as u64).unwrap_or(0),
        grids,
        max_seconds: max_seconds.map(|(s, _)| s),
        a3: a3.map(|(a, _)| a),
        c3: c3.map(|(c, _)| c),
        output_dir,
        workers: workers.map(|(w, _)| w as usize),
    })
}

fn default_grid(command: Command, name: &str, beta: f64, horizon: usize) -> Vec<f64> {
    match name {
        "t" => vec![2.0, 4.0, 8.0, 16.0],
        "p" if command == Command::Moments => vec![1.0, 2.0],
        "p" => vec![1.0, 1.5, 2.0],
        "n" => {
            let mut n: Vec<f64> = (1..=10).map(|i| ((horizon * i) as f64 / 10.0).ceil()).collect();
            n.dedup();
            n
        }
        "k" => (0..=horizon).map(|k| k as f64).collect(),
        "a" => (0..48).map(|i| 1.5 + 0.5 * i as f64).collect(),
        "beta" => vec![beta],
        _ => Vec::new(),
    }
}

/// Round-trip float text that is also a valid TOML float.
fn float(v: f64) -> String {
    format!("{v:?}")
}

fn write_env(out: &mut String, header: &str, spec: &EnvironmentSpec) {
    let (family, params) = spec.to_params();
    out.push_str(&format!("\n[{header}]\nfamily = \"{family}\"\n"));
    for (k, v) in params {
        out.push_str(&format!("{k} = {}\n", float(v)));
    }
}

impl ExperimentConfig {
    /// The config with every default written out, minus `workers` and
    /// `output_dir`. This is the text the config hash covers.
    pub fn canonical(&self) -> String {
        self.emit(false)
    }

    /// [`canonical`](Self::canonical) plus `workers` and `output_dir` when set.
    pub fn to_toml(&self) -> String {
        self.emit(true)
    }

    /// SHA-256 of the canonical text, hex encoded.
    pub fn hash(&self) -> String {
        Sha256::digest(self.canonical().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn grid(&self, name: &str) -> &[f64] {
        self.grids.get(name).map(Vec::as_slice).unwrap_or(&[])
    }

    /// An integer grid (`n`, `k`) as indices.
    pub fn int_grid(&self, name: &str) -> Vec<usize> {
        self.grid(name).iter().map(|&v| v as usize).collect()
    }

    fn emit(&self, runtime: bool) -> String {
        let mut out = String::from("[experiment]\n");
        out.push_str(&format!("command = \"{}\"\n", self.command));
        out.push_str(&format!("beta = {}\n", float(self.beta)));
        out.push_str(&format!("dim = {}\n", self.dim));
        out.push_str(&format!("horizon = {}\n", self.horizon));
        out.push_str(&format!("replicas = {}\n", self.replicas));
        out.push_str(&format!("seed = {}\n", self.seed));
        for (k, v) in [("max_seconds", self.max_seconds), ("a3", self.a3), ("c3", self.c3)] {
            if let Some(v) = v {
                out.push_str(&format!("{k} = {}\n", float(v)));
            }
        }
        if runtime {
            if let Some(w) = self.workers {
                out.push_str(&format!("workers = {w}\n"));
            }
            if let Some(d) = &self.output_dir {
                let s = Value::String(d.to_string_lossy().into_owned());
                out.push_str(&format!("output_dir = {s}\n"));
            }
        }
        if let Some(spec) = &self.spec {
            write_env(&mut out, "environment", spec);
        }
        if !self.grids.is_empty() {
            out.push_str("\n[grids]\n");
            for (name, values) in &self.grids {
                let items: Vec<String> = if INTEGER_GRIDS.contains(&name.as_str()) {
                    values.iter().map(|&v| format!("{}", v as i64)).collect()
                } else {
                    values.iter().map(|&v| float(v)).collect()
                };
                out.push_str(&format!("{name} = [{}]\n", items.join(", ")));
            }
        }
        for (label, spec) in &self.battery {
            write_env(&mut out, &format!("battery.{label}"), spec);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[experiment]\ncommand = \"simulate\"\nbeta = 0.3\ndim = 3\nhorizon = 50\nseed = 1\n\n[environment]\nfamily = \"gaussian\"\n";

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!(c.command, Command::Simulate);
        assert_eq!((c.beta, c.dim, c.horizon, c.seed, c.replicas), (0.3, 3, 50, 1, 1));
        assert_eq!(c.grid("t"), &[2.0, 4.0, 8.0, 16.0]);
        assert_eq!(c.spec, Some(EnvironmentSpec::gaussian(0.0, 1.0).unwrap()));
        let text = c.canonical();
        assert!(text.contains("stddev = 1.0"));
        assert!(text.contains("t = [2.0, 4.0, 8.0, 16.0]"));
    }

    #[test]
    fn canonical_form_round_trips() {
        let mut c = parse_config(MINIMAL).unwrap();
        c.workers = Some(3);
        c.output_dir = Some(PathBuf::from("out dir/\"x\""));
        let again = parse_config(&c.to_toml()).unwrap();
        assert_eq!(again, c);
        assert_eq!(again.canonical(), c.canonical());
        assert_eq!(again.hash(), c.hash());
    }

    #[test]
    fn negative_beta_names_the_field() {
        let text = MINIMAL.replace("beta = 0.3", "beta = -0.1");
        let e = parse_config(&text).unwrap_err();
        assert_eq!(e.0.len(), 1);
        assert_eq!(e.0[0].line, 3);
        assert!(e.0[0].message.contains("`beta`"), "{}", e.0[0].message);
    }

    #[test]
    fn runtime_keys_do_not_change_the_hash() {
        let a = parse_config(MINIMAL).unwrap();
        let b = parse_config(&MINIMAL.replace("seed = 1\n", "seed = 1\nworkers = 8\noutput_dir = \"x\"\n")).unwrap();
        assert_eq!(a.hash(), b.hash());
        let c = parse_config(&MINIMAL.replace("seed = 1", "seed = 2")).unwrap();
        assert_ne!(a.hash(), c.hash());
    }
}
