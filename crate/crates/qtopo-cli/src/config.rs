use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::experiments::{self, Experiment};

pub const OUT_DIR_ENV: &str = "QTOPO_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "qtopo-out";

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn err<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

#[derive(Clone, Copy, Debug)]
pub enum Kind {
    Uint,
    UintList,
    IntList,
    Float,
    Bool,
    Choice(&'static [&'static str]),
    ChoiceList(&'static [&'static str]),
}

#[derive(Debug)]
pub struct Param {
    pub name: &'static str,
    pub kind: Kind,
    /// TOML literal.
    pub default: &'static str,
    pub help: &'static str,
}

impl Kind {
    fn describe(&self) -> String {
        match self {
            Kind::Uint => "integer >= 0".into(),
            Kind::UintList => "list of integers >= 0".into(),
            Kind::IntList => "list of integers".into(),
            Kind::Float => "number".into(),
            Kind::Bool => "boolean".into(),
            Kind::Choice(c) => format!("one of {}", c.join("|")),
            Kind::ChoiceList(c) => format!("list drawn from {}", c.join("|")),
        }
    }

    /// Checks `v` and returns its normal form (scalars promoted to lists,
    /// integers to floats).
    fn normalize(&self, name: &str, v: Value) -> Result<Value, ConfigError> {
        let bad = || err(format!("parameter `{name}` must be a {}, got {v}", self.describe()));
        let uint = |x: &Value| matches!(x, Value::Integer(i) if *i >= 0);
        match self {
            Kind::Uint if uint(&v) => Ok(v),
            Kind::Float => match v {
                Value::Float(_) => Ok(v),
                Value::Integer(i) => Ok(Value::Float(i as f64)),
                _ => bad(),
            },
            Kind::Bool if v.is_bool() => Ok(v),
            Kind::Choice(c) => match &v {
                Value::String(s) if c.contains(&s.as_str()) => Ok(v),
                _ => bad(),
            },
            Kind::UintList | Kind::IntList | Kind::ChoiceList(_) => {
                let items = match v {
                    Value::Array(a) => a,
                    other => vec![other],
                };
                let ok = items.iter().all(|x| match self {
                    Kind::UintList => uint(x),
                    Kind::IntList => x.is_integer(),
                    Kind::ChoiceList(c) => x.as_str().is_some_and(|s| c.contains(&s)),
                    _ => unreachable!(),
                });
                if !ok || items.is_empty() {
                    return err(format!("parameter `{name}` must be a non-empty {}", self.describe()));
                }
                Ok(Value::Array(items))
            }
            _ => bad(),
        }
    }
}

/// Configuration file layout. Every field may also be given on the command line.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub experiment: Option<String>,
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    pub jobs: Option<usize>,
    #[serde(default)]
    pub params: Table,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))
    }
}

/// Command-line overrides; these win over the file.
#[derive(Debug, Default)]
pub struct Overrides {
    pub experiment: Option<String>,
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub params: Vec<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ExperimentConfig {
    pub experiment: String,
    pub seed: u64,
    pub output: PathBuf,
    pub jobs: usize,
    pub params: Table,
}

pub fn parse_assignment(s: &str) -> Result<(String, Value), ConfigError> {
    let Some((k, v)) = s.split_once('=') else {
        return err(format!("expected key=value, got `{s}`"));
    };
    let key = k.trim().to_string();
    let doc = format!("v = {}", v.trim());
    let value = match doc.parse::<Table>() {
        Ok(mut t) => t.remove("v").unwrap(),
        Err(_) => Value::String(v.trim().to_string()),
    };
    Ok((key, value))
}

pub fn lookup(name: &str) -> Result<&'static Experiment, ConfigError> {
    experiments::find(name).ok_or_else(|| {
        let names: Vec<&str> = experiments::ALL.iter().map(|e| e.name).collect();
        ConfigError(format!("unknown experiment `{name}`; available: {}", names.join(", ")))
    })
}

pub fn resolve(file: FileConfig, ov: Overrides) -> Result<ExperimentConfig, ConfigError> {
    let name = match ov.experiment.or(file.experiment) {
        Some(n) => n,
        None => return err("no experiment given"),
    };
    let exp = lookup(&name)?;
    let mut given = file.params;
    for a in &ov.params {
        let (k, v) = parse_assignment(a)?;
        given.insert(k, v);
    }
    for k in given.keys() {
        if !exp.params.iter().any(|p| p.name == k) {
            return err(format!("unknown parameter `{k}` for experiment `{name}`"));
        }
    }
    let mut params = Table::new();
    for p in exp.params {
        let raw = match given.remove(p.name) {
            Some(v) => v,
            None => default_value(p),
        };
        params.insert(p.name.to_string(), p.kind.normalize(p.name, raw)?);
    }
    let jobs = ov.jobs.or(file.jobs).unwrap_or(1);
    if jobs == 0 {
        return err("jobs must be at least 1");
    }
    let output = ov
        .output
        .or(file.output)
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
    Ok(ExperimentConfig { experiment: name, seed: ov.seed.or(file.seed).unwrap_or(0), output, jobs, params })
}

pub fn default_value(p: &Param) -> Value {
    let mut t: Table = format!("v = {}", p.default).parse().expect("parameter defaults are valid TOML");
    t.remove("v").unwrap()
}

pub fn kind_description(p: &Param) -> String {
    p.kind.describe()
}

/// Typed access to resolved parameters.
pub struct Params<'a>(pub &'a Table);

impl Params<'_> {
    fn get(&self, k: &str) -> &Value {
        self.0.get(k).unwrap_or_else(|| panic!("parameter `{k}` not declared"))
    }

    pub fn uint(&self, k: &str) -> usize {
        self.get(k).as_integer().unwrap() as usize
    }

    pub fn uints(&self, k: &str) -> Vec<usize> {
        self.get(k).as_array().unwrap().iter().map(|v| v.as_integer().unwrap() as usize).collect()
    }

    pub fn ints(&self, k: &str) -> Vec<i64> {
        self.get(k).as_array().unwrap().iter().map(|v| v.as_integer().unwrap()).collect()
    }

    pub fn float(&self, k: &str) -> f64 {
        self.get(k).as_float().unwrap()
    }

    pub fn flag(&self, k: &str) -> bool {
        self.get(k).as_bool().unwrap()
    }

    pub fn choice(&self, k: &str) -> &str {
        self.get(k).as_str().unwrap()
    }

    pub fn choices(&self, k: &str) -> Vec<String> {
        self.get(k).as_array().unwrap().iter().map(|v| v.as_str().unwrap().to_string()).collect()
    }
}
