use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde_json::{json, Map, Value};

use crate::config::{lookup, ConfigError, ExperimentConfig, Params};
use crate::experiments::{Experiment, Row, Status};

pub const EXIT_OK: u8 = 0;
pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_REGIME: u8 = 3;
pub const EXIT_VIOLATION: u8 = 4;

#[derive(Debug)]
pub enum RunError {
    Config(ConfigError),
    Library { point: usize, error: qtopo::Error },
    Io(String),
}

impl RunError {
    pub fn exit_code(&self) -> u8 {
        match self {
            RunError::Config(_) => EXIT_CONFIG,
            RunError::Library { error, .. } => match error {
                qtopo::Error::InvalidInput(_) | qtopo::Error::InvalidWindow(_) => EXIT_CONFIG,
                qtopo::Error::OutOfRegime(_) | qtopo::Error::TooLarge(_) | qtopo::Error::GridTooCoarse(_) => EXIT_REGIME,
                _ => EXIT_FAILURE,
            },
            RunError::Io(_) => EXIT_FAILURE,
        }
    }
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Config(e) => write!(f, "config error: {e}"),
            RunError::Library { point, error } => write!(f, "sweep point {point}: {error}"),
            RunError::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

fn io<E: std::fmt::Display>(path: &Path) -> impl FnOnce(E) -> RunError + '_ {
    move |e| RunError::Io(format!("{}: {e}", path.display()))
}

pub struct RunOutput {
    pub result: Value,
    pub status: Status,
    pub files: Vec<PathBuf>,
    pub resumed: usize,
}

impl RunOutput {
    pub fn exit_code(&self) -> u8 {
        match self.status {
            Status::Ok => EXIT_OK,
            Status::OutOfRegime(_) => EXIT_REGIME,
            Status::Violation(_) => EXIT_VIOLATION,
        }
    }
}

/// FNV-1a over the canonical JSON of the parts of the config that affect results.
pub fn config_key(cfg: &ExperimentConfig) -> String {
    let canon = json!({ "experiment": cfg.experiment, "seed": cfg.seed, "params": cfg.params }).to_string();
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in canon.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}

fn load_checkpoint(path: &Path, width: usize) -> Option<Vec<Row>> {
    let text = fs::read_to_string(path).ok()?;
    let rows: Vec<Row> = serde_json::from_str(&text).ok()?;
    rows.iter().all(|r| r.len() == width).then_some(rows)
}

fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), RunError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents).map_err(io(&tmp))?;
    fs::rename(&tmp, path).map_err(io(path))
}

fn run_points(exp: &Experiment, cfg: &ExperimentConfig, points: &[Value], ckdir: &Path) -> Result<(Vec<Vec<Row>>, usize), RunError> {
    let params = Params(&cfg.params);
    let slots: Vec<Mutex<Option<Result<(Vec<Row>, bool), RunError>>>> = points.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let work = || loop {
        let i = next.fetch_add(1, Ordering::SeqCst);
        if i >= points.len() {
            break;
        }
        let ck = ckdir.join(format!("point-{i:05}.json"));
        let out = match load_checkpoint(&ck, exp.columns.len()) {
            Some(rows) => Ok((rows, true)),
            None => match (exp.run)(&params, cfg.seed, &points[i]) {
                Ok(rows) => {
                    let text = serde_json::to_vec(&rows).expect("rows serialize");
                    write_atomic(&ck, &text).map(|_| (rows, false))
                }
                Err(error) => Err(RunError::Library { point: i, error }),
            },
        };
        *slots[i].lock().unwrap() = Some(out);
    };
    std::thread::scope(|s| {
        for _ in 0..cfg.jobs.min(points.len().max(1)) {
            s.spawn(work);
        }
    });
    let mut all = Vec::with_capacity(points.len());
    let mut resumed = 0;
    for slot in slots {
        let (rows, was_resumed) = slot.into_inner().unwrap().expect("every point visited")?;
        resumed += was_resumed as usize;
        all.push(rows);
    }
    Ok((all, resumed))
}

fn cell(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

pub fn csv_bytes(columns: &[&str], rows: &[Row]) -> Result<Vec<u8>, RunError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| RunError::Io(e.to_string());
    w.write_record(columns).map_err(csv_err)?;
    for r in rows {
        w.write_record(r.iter().map(cell)).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| RunError::Io(e.to_string()))
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput, RunError> {
    let exp = lookup(&cfg.experiment).map_err(RunError::Config)?;
    let params = Params(&cfg.params);
    let points = (exp.points)(&params);
    let key = config_key(cfg);
    let ckdir = cfg.output.join("checkpoints").join(format!("{}-{key}", exp.name));
    fs::create_dir_all(&ckdir).map_err(io(&ckdir))?;

    let (per_point, resumed) = run_points(exp, cfg, &points, &ckdir)?;
    let rows: Vec<Row> = per_point.into_iter().flatten().collect();
    let summary = (exp.summarize)(&params, &rows);

    let objects: Vec<Value> = rows
        .iter()
        .map(|r| Value::Object(exp.columns.iter().zip(r).map(|(c, v)| (c.to_string(), v.clone())).collect::<Map<_, _>>()))
        .collect();
    let (status_name, message) = match &summary.status {
        Status::Ok => ("ok", String::new()),
        Status::OutOfRegime(m) => ("out_of_regime", m.clone()),
        Status::Violation(m) => ("violation", m.clone()),
    };
    let result = json!({
        "experiment": exp.name,
        "seed": cfg.seed,
        "status": status_name,
        "message": message,
        "summary": summary.value,
        "rows": objects,
    });

    let csv_path = cfg.output.join(format!("{}.csv", exp.name));
    let json_path = cfg.output.join(format!("{}.json", exp.name));
    let manifest_path = cfg.output.join(format!("{}.manifest.json", exp.name));
    write_atomic(&csv_path, &csv_bytes(exp.columns, &rows)?)?;
    write_atomic(&json_path, serde_json::to_string_pretty(&result).unwrap().as_bytes())?;
    let out = RunOutput {
        result,
        status: summary.status,
        files: vec![csv_path.clone(), json_path.clone(), manifest_path.clone()],
        resumed,
    };
    let manifest = json!({
        "experiment": exp.name,
        "library_version": qtopo::VERSION,
        "cli_version": env!("CARGO_PKG_VERSION"),
        "config": cfg,
        "config_key": key,
        "points": points.len(),
        "resumed_points": resumed,
        "rows": rows.len(),
        "status": status_name,
        "exit_code": out.exit_code(),
        "files": { "csv": csv_path, "json": json_path, "checkpoints": ckdir },
    });
    write_atomic(&manifest_path, serde_json::to_string_pretty(&manifest).unwrap().as_bytes())?;
    Ok(out)
}
