//! Artifact directories: running, resuming, sweeping and summarizing.
//!
//! A run directory holds:
//!
//! | file              | content                                              |
//! |-------------------|------------------------------------------------------|
//! | `config.toml`     | resolved configuration                               |
//! | `reports.ndjson`  | header record, then one [`RoundReport`] per line     |
//! | `metrics.csv`     | scored-segment metrics                               |
//! | `costs.csv`       | per-round FLOP and byte ledger                       |
//! | `manifest.json`   | format versions and every behavioural flag in effect |
//! | `checkpoint.json` | state after the last checkpointed round              |
//!
//! Report records carry, in order: `round`, `scored`, `participants`,
//! `weights`, and `clients`; each client record carries `node`,
//! `participated`, `divergence`, `prediction`, `target`, `loss`, `flops`,
//! `bytes_up`, `bytes_down`.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cost::CostModel;
use crate::data::TrafficDataset;
use crate::error::{Error, Result};
use crate::gru::WIRE_VERSION;
use crate::sim::{summarize, Experiment, ExperimentConfig, RoundReport, RunMetrics, SimState};

pub const SCHEMA_VERSION: u32 = 1;
pub const REPORT_SCHEMA: &str = "refol.round-report";
pub const CONFIG_FILE: &str = "config.toml";
pub const REPORTS_FILE: &str = "reports.ndjson";
pub const METRICS_FILE: &str = "metrics.csv";
pub const COSTS_FILE: &str = "costs.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    /// Run clients of a round on the thread pool.
    pub parallel: bool,
    /// Replace an existing artifact directory.
    pub force: bool,
    /// Continue from the checkpoint in an existing directory.
    pub resume: bool,
    /// Rounds between checkpoints.
    pub checkpoint_every: usize,
    /// Stop after this many rounds in this invocation, leaving a checkpoint.
    pub max_rounds: Option<usize>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            parallel: true,
            force: false,
            resume: false,
            checkpoint_every: 25,
            max_rounds: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ReportHeader {
    schema: String,
    version: u32,
    nodes: usize,
    first_round: usize,
    last_round: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    reports_written: usize,
    complete: bool,
    state: SimState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    schema_version: u32,
    report_schema: String,
    wire_version: u32,
    package_version: String,
    config: ExperimentConfig,
    resolved: Resolved,
    conventions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Resolved {
    nodes: usize,
    first_round: usize,
    last_round: usize,
    first_scored_round: usize,
    select_count: usize,
    param_count: u64,
    bytes_per_transfer: u64,
}

/// Outcome of a `run` invocation.
#[derive(Debug, Clone, PartialEq)]
pub enum RunStatus {
    Complete(RunMetrics),
    /// Stopped early at the requested round budget; resumable.
    Paused { next_round: usize },
}

fn artifact(msg: impl Into<String>) -> Error {
    Error::Artifact(msg.into())
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(format!("writing {}", tmp.display()), e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(format!("renaming {}", tmp.display()), e))
}

fn json<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("plain data serializes")
}

fn conventions(exp: &Experiment) -> Vec<String> {
    let c = exp.config();
    vec![
        "rmse: mean over (node, round) of the per-window RMSE across the horizon".into(),
        format!("pooled_rmse reported: {}", c.pooled_rmse),
        format!(
            "intervals: prediction ± quantile_(1-alpha/2) of |residual| over the trailing {} horizon-1 residuals, alpha {}",
            c.interval_window, c.alpha
        ),
        format!("msis periodicity: {}", c.periodicity),
        "flops: per-window forward H·6hs(1+hs) + 2hs·F, backward twice forward, gate 7H; gate biases excluded".into(),
        format!("bytes: parameter count × {} per transfer direction", c.bytes_per_param),
        "models cross the wire as single-precision; the server keeps double precision".into(),
        "drift gate: each client's first executed round is a forced participation".into(),
        format!("hw update: {:?}", c.hw_update),
        format!("warmup: {:?}", c.warmup),
        format!("normalize: {}", c.normalize),
        format!("score all clients: {}", c.score_all_clients),
    ]
}

fn manifest(exp: &Experiment) -> Manifest {
    let cost = exp.cost();
    Manifest {
        schema_version: SCHEMA_VERSION,
        report_schema: REPORT_SCHEMA.into(),
        wire_version: WIRE_VERSION,
        package_version: env!("CARGO_PKG_VERSION").into(),
        config: exp.config().clone(),
        resolved: Resolved {
            nodes: exp.dataset().node_count(),
            first_round: exp.rounds().start,
            last_round: exp.rounds().end - 1,
            first_scored_round: exp.scored_rounds().start,
            select_count: exp.select_count(),
            param_count: cost.param_count(),
            bytes_per_transfer: cost.comm_bytes(),
        },
        conventions: conventions(exp),
    }
}

fn header(exp: &Experiment) -> ReportHeader {
    ReportHeader {
        schema: REPORT_SCHEMA.into(),
        version: SCHEMA_VERSION,
        nodes: exp.dataset().node_count(),
        first_round: exp.rounds().start,
        last_round: exp.rounds().end - 1,
    }
}

/// Reads a report stream, checking its header.
pub fn read_reports(path: &Path) -> Result<Vec<RoundReport>> {
    let file = File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    let mut lines = BufReader::new(file).lines();
    let first = lines
        .next()
        .ok_or_else(|| artifact(format!("{}: empty report file", path.display())))?
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let head: ReportHeader = serde_json::from_str(&first)
        .map_err(|e| artifact(format!("{}: bad header: {e}", path.display())))?;
    if head.schema != REPORT_SCHEMA || head.version != SCHEMA_VERSION {
        return Err(artifact(format!(
            "{}: unsupported report schema {} v{}",
            path.display(),
            head.schema,
            head.version
        )));
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let report = serde_json::from_str(&line)
            .map_err(|e| artifact(format!("{}: line {}: {e}", path.display(), i + 2)))?;
        out.push(report);
    }
    Ok(out)
}

fn csv_writer(path: &Path) -> Result<::csv::Writer<File>> {
    ::csv::Writer::from_path(path).map_err(|e| artifact(format!("{}: {e}", path.display())))
}

fn csv_err(path: &Path) -> impl Fn(::csv::Error) -> Error + '_ {
    move |e| artifact(format!("{}: {e}", path.display()))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

const METRICS_HEADER: [&str; 14] = [
    "schema_version",
    "run",
    "method",
    "forecast",
    "scored_rounds",
    "rmse",
    "mae",
    "pooled_rmse",
    "msis",
    "congested_rmse",
    "congested_mae",
    "participation_fraction",
    "total_flops",
    "total_bytes",
];

fn metrics_row(run: &str, m: &RunMetrics) -> Vec<String> {
    vec![
        SCHEMA_VERSION.to_string(),
        run.to_string(),
        m.method.clone(),
        m.forecast.to_string(),
        m.scored_rounds.to_string(),
        m.rmse.to_string(),
        m.mae.to_string(),
        opt(m.pooled_rmse),
        opt(m.msis),
        opt(m.congested_rmse),
        opt(m.congested_mae),
        m.participation_fraction.to_string(),
        m.total_flops.to_string(),
        m.total_bytes.to_string(),
    ]
}

/// Writes one metrics row per `(name, metrics)` pair as CSV.
pub fn write_metrics<W: Write>(writer: W, rows: &[(String, RunMetrics)]) -> Result<()> {
    let mut w = ::csv::Writer::from_writer(writer);
    let err = |e: ::csv::Error| artifact(format!("writing metrics: {e}"));
    w.write_record(METRICS_HEADER).map_err(err)?;
    for (name, m) in rows {
        w.write_record(metrics_row(name, m)).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io("writing metrics", e))
}

pub fn write_metrics_csv(path: &Path, rows: &[(String, RunMetrics)]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    write_metrics(BufWriter::new(file), rows)
}

fn write_costs_csv(path: &Path, reports: &[RoundReport]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record([
        "schema_version",
        "round",
        "scored",
        "participants",
        "flops",
        "bytes_up",
        "bytes_down",
        "cumulative_flops",
        "cumulative_bytes",
    ])
    .map_err(csv_err(path))?;
    let (mut flops, mut bytes) = (0u64, 0u64);
    for r in reports {
        let up: u64 = r.clients.iter().map(|c| c.bytes_up).sum();
        let down: u64 = r.clients.iter().map(|c| c.bytes_down).sum();
        flops += r.flops();
        bytes += up + down;
        w.write_record([
            SCHEMA_VERSION.to_string(),
            r.round.to_string(),
            r.scored.to_string(),
            r.participation().to_string(),
            r.flops().to_string(),
            up.to_string(),
            down.to_string(),
            flops.to_string(),
            bytes.to_string(),
        ])
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn run_name(dir: &Path) -> String {
    dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Recomputes metrics and costs of a run directory from its reports.
pub fn finalize(dir: &Path) -> Result<RunMetrics> {
    let config = ExperimentConfig::from_toml(
        &fs::read_to_string(dir.join(CONFIG_FILE))
            .map_err(|e| Error::io(format!("reading {}", dir.join(CONFIG_FILE).display()), e))?,
    )?;
    let reports = read_reports(&dir.join(REPORTS_FILE))?;
    let metrics = summarize(&reports, &config)?;
    write_metrics_csv(&dir.join(METRICS_FILE), &[(run_name(dir), metrics.clone())])?;
    write_costs_csv(&dir.join(COSTS_FILE), &reports)?;
    Ok(metrics)
}

fn save_checkpoint(dir: &Path, state: &SimState, reports_written: usize, complete: bool) -> Result<()> {
    let cp = Checkpoint {
        version: SCHEMA_VERSION,
        reports_written,
        complete,
        state: state.clone(),
    };
    write_atomic(&dir.join(CHECKPOINT_FILE), json(&cp).as_bytes())
}

fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let path = dir.join(CHECKPOINT_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let cp: Checkpoint =
        serde_json::from_str(&text).map_err(|e| artifact(format!("{}: {e}", path.display())))?;
    if cp.version != SCHEMA_VERSION {
        return Err(artifact(format!("{}: unsupported checkpoint version {}", path.display(), cp.version)));
    }
    Ok(cp)
}

/// Keeps the header and the first `count` report lines.
fn truncate_reports(path: &Path, count: usize) -> Result<()> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let kept: String = text.split_inclusive('\n').take(count + 1).collect();
    if kept.split_inclusive('\n').count() != count + 1 {
        return Err(artifact(format!(
            "{}: holds fewer reports than the checkpoint records",
            path.display()
        )));
    }
    fs::write(path, kept).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn dir_has_entries(dir: &Path) -> bool {
    fs::read_dir(dir).map(|mut d| d.next().is_some()).unwrap_or(false)
}

/// Runs `config` into `dir`, or continues it from its checkpoint.
pub fn run_to_dir(config: &ExperimentConfig, dir: &Path, options: &RunOptions) -> Result<RunStatus> {
    let resuming = options.resume && dir.join(CHECKPOINT_FILE).is_file();
    let config = if resuming {
        let path = dir.join(CONFIG_FILE);
        ExperimentConfig::from_toml(
            &fs::read_to_string(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?,
        )?
    } else {
        config.clone()
    };
    let exp = Experiment::new(config)?;
    if !resuming && dir_has_entries(dir) {
        if !options.force {
            return Err(artifact(format!(
                "artifact directory {} already exists; pass --force to overwrite or --resume to continue",
                dir.display()
            )));
        }
        fs::remove_dir_all(dir).map_err(|e| Error::io(format!("clearing {}", dir.display()), e))?;
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;

    let reports_path = dir.join(REPORTS_FILE);
    let (mut state, mut written) = if resuming {
        let cp = load_checkpoint(dir)?;
        truncate_reports(&reports_path, cp.reports_written)?;
        (cp.state, cp.reports_written)
    } else {
        write_atomic(&dir.join(CONFIG_FILE), exp.config().to_toml().as_bytes())?;
        let manifest = serde_json::to_string_pretty(&manifest(&exp)).expect("manifest serializes");
        write_atomic(&dir.join(MANIFEST_FILE), manifest.as_bytes())?;
        fs::write(&reports_path, format!("{}\n", json(&header(&exp))))
            .map_err(|e| Error::io(format!("writing {}", reports_path.display()), e))?;
        let state = exp.initial_state()?;
        save_checkpoint(dir, &state, 0, false)?;
        (state, 0)
    };

    let file = fs::OpenOptions::new()
        .append(true)
        .open(&reports_path)
        .map_err(|e| Error::io(format!("opening {}", reports_path.display()), e))?;
    let mut out = BufWriter::new(file);
    let flush = |out: &mut BufWriter<File>| {
        out.flush()
            .map_err(|e| Error::io(format!("writing {}", reports_path.display()), e))
    };
    let mut executed = 0;
    while !exp.is_finished(&state) {
        if options.max_rounds.is_some_and(|m| executed >= m) {
            flush(&mut out)?;
            save_checkpoint(dir, &state, written, false)?;
            return Ok(RunStatus::Paused {
                next_round: state.server.round,
            });
        }
        let report = exp.step(&mut state, options.parallel)?;
        writeln!(out, "{}", json(&report))
            .map_err(|e| Error::io(format!("writing {}", reports_path.display()), e))?;
        written += 1;
        executed += 1;
        if written % options.checkpoint_every.max(1) == 0 {
            flush(&mut out)?;
            save_checkpoint(dir, &state, written, false)?;
        }
    }
    flush(&mut out)?;
    save_checkpoint(dir, &state, written, true)?;
    Ok(RunStatus::Complete(finalize(dir)?))
}

/// One row of a sweep summary.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: String,
    pub metrics: RunMetrics,
}

fn write_sweep_summary(path: &Path, parameter: &str, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record([
        "schema_version",
        parameter,
        "rmse",
        "mae",
        "participation_fraction",
        "total_flops",
        "total_bytes",
    ])
    .map_err(csv_err(path))?;
    for r in rows {
        w.write_record([
            SCHEMA_VERSION.to_string(),
            r.value.clone(),
            r.metrics.rmse.to_string(),
            r.metrics.mae.to_string(),
            r.metrics.participation_fraction.to_string(),
            r.metrics.total_flops.to_string(),
            r.metrics.total_bytes.to_string(),
        ])
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Runs `base` once per value of `parameter` into `out/<parameter>=<value>`
/// and writes `out/summary.csv`. Every sub-run uses the base seed. On failure
/// the summary holds the completed runs.
pub fn sweep(
    base: &ExperimentConfig,
    parameter: &str,
    values: &[String],
    out: &Path,
    options: &RunOptions,
) -> Result<Vec<SweepRow>> {
    let mut configs = Vec::with_capacity(values.len());
    let mut problems = Vec::new();
    for v in values {
        let mut c = base.clone();
        match c.set_parameter(parameter, v) {
            Ok(()) => problems.extend(c.problems().into_iter().map(|p| format!("{parameter}={v}: {p}"))),
            Err(Error::Config(p)) => problems.extend(p),
            Err(e) => return Err(e),
        }
        configs.push(c);
    }
    if !problems.is_empty() {
        return Err(Error::Config(problems));
    }
    fs::create_dir_all(out).map_err(|e| Error::io(format!("creating {}", out.display()), e))?;
    let mut rows = Vec::new();
    let summary = out.join("summary.csv");
    for (v, c) in values.iter().zip(&configs) {
        let dir = out.join(format!("{parameter}={v}"));
        match run_to_dir(c, &dir, &RunOptions { max_rounds: None, ..*options }) {
            Ok(RunStatus::Complete(metrics)) => rows.push(SweepRow {
                value: v.clone(),
                metrics,
            }),
            Ok(RunStatus::Paused { .. }) => unreachable!("no round budget"),
            Err(e) => {
                write_sweep_summary(&summary, parameter, &rows)?;
                return Err(e);
            }
        }
    }
    write_sweep_summary(&summary, parameter, &rows)?;
    Ok(rows)
}

/// Metrics of several run directories, one row each.
pub fn metrics_for_runs(dirs: &[PathBuf]) -> Result<Vec<(String, RunMetrics)>> {
    dirs.iter()
        .map(|d| {
            let path = d.join(CONFIG_FILE);
            let config = ExperimentConfig::from_toml(
                &fs::read_to_string(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?,
            )?;
            let reports = read_reports(&d.join(REPORTS_FILE))?;
            Ok((run_name(d), summarize(&reports, &config)?))
        })
        .collect()
}

/// Analytic per-client costs as `(quantity, value)` rows.
pub fn cost_table(cost: &CostModel) -> Vec<(&'static str, u64)> {
    vec![
        ("param_count", cost.param_count()),
        ("forward_flops_per_window", cost.forward_flops()),
        ("backward_flops_per_window", cost.backward_flops()),
        ("training_flops_per_participation", cost.training_flops()),
        ("gate_flops_per_round", cost.kld_flops()),
        ("bytes_per_transfer", cost.comm_bytes()),
        ("bytes_per_participation", 2 * cost.comm_bytes()),
        ("encoder_decoder_bytes_per_client_round", cost.fedostc_comm_bytes()),
    ]
}

/// Writes `speeds.csv` (header `node_0,...`) and a dense 0/1 `adjacency.csv`.
pub fn export_dataset(dataset: &TrafficDataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let n = dataset.node_count();
    let speeds = dir.join("speeds.csv");
    let mut w = csv_writer(&speeds)?;
    w.write_record((0..n).map(|i| format!("node_{i}"))).map_err(csv_err(&speeds))?;
    for t in 1..=dataset.time_count() {
        w.write_record((0..n).map(|i| dataset.speed(t, i).to_string()))
            .map_err(csv_err(&speeds))?;
    }
    w.flush().map_err(|e| Error::io(format!("writing {}", speeds.display()), e))?;
    let adj = dir.join("adjacency.csv");
    let mut w = csv_writer(&adj)?;
    for i in 0..n {
        w.write_record((0..n).map(|j| if dataset.adjacency().get(i, j) { "1" } else { "0" }))
            .map_err(csv_err(&adj))?;
    }
    w.flush().map_err(|e| Error::io(format!("writing {}", adj.display()), e))
}
