use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use refol_core::cost::CostModel;
use refol_core::data::{synthesize_drift, SynthSpec, WindowSpec};
use refol_core::runner::{
    cost_table, export_dataset, metrics_for_runs, read_reports, run_to_dir, sweep, write_metrics, write_metrics_csv, RunOptions,
    RunStatus, CONFIG_FILE, REPORTS_FILE,
};
use refol_core::sim::{DatasetSource, ExperimentConfig};
use refol_core::Error;

/// Federated online traffic forecasting simulator.
#[derive(Debug, Parser)]
#[command(name = "refol", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one experiment into an artifact directory.
    Run {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        exec: Exec,
        /// Continue an interrupted run from its checkpoint.
        #[arg(long)]
        resume: bool,
        /// Stop after this many rounds, leaving a resumable checkpoint.
        #[arg(long)]
        max_rounds: Option<usize>,
    },
    /// Run one experiment per parameter value and summarize them.
    Sweep {
        config: PathBuf,
        /// One of threshold, conv_layers, forecast, epochs, learning_rate, hidden.
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        exec: Exec,
    },
    /// Compute metrics for finished run directories.
    Metrics {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// CSV destination; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print analytic per-client costs, and totals for any given runs.
    CostTable {
        /// Take model sizes from this config.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 128)]
        hidden: usize,
        #[arg(long, default_value_t = 12)]
        history: usize,
        #[arg(long, default_value_t = 1)]
        forecast: usize,
        #[arg(long, default_value_t = 5)]
        epochs: usize,
        #[arg(long, default_value_t = 4)]
        bytes_per_param: usize,
        runs: Vec<PathBuf>,
    },
    /// Write a synthetic dataset as CSV files.
    Synth {
        /// Use the synthetic dataset section of this config.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        nodes: Option<usize>,
        #[arg(long)]
        time_steps: Option<usize>,
        #[arg(long)]
        segment_length: Option<usize>,
        #[arg(long)]
        density: Option<f64>,
    },
}

#[derive(Debug, Args)]
struct Exec {
    /// Replace an existing artifact directory.
    #[arg(long)]
    force: bool,
    /// Run clients one at a time.
    #[arg(long)]
    serial: bool,
    #[arg(long, default_value_t = 25)]
    checkpoint_every: usize,
}

impl Exec {
    fn options(&self) -> RunOptions {
        RunOptions {
            parallel: !self.serial,
            force: self.force,
            checkpoint_every: self.checkpoint_every,
            ..RunOptions::default()
        }
    }
}

fn print_metrics(m: &refol_core::sim::RunMetrics) {
    println!(
        "{} F={} rounds={} rmse={:.6} mae={:.6} participation={:.4} flops={} bytes={}",
        m.method, m.forecast, m.scored_rounds, m.rmse, m.mae, m.participation_fraction, m.total_flops, m.total_bytes
    );
}

fn invalid(msg: String) -> Error {
    Error::Config(vec![msg])
}

fn execute(command: Command) -> Result<(), Error> {
    match command {
        Command::Run {
            config,
            out,
            exec,
            resume,
            max_rounds,
        } => {
            let cfg = ExperimentConfig::from_file(&config)?;
            let options = RunOptions {
                resume,
                max_rounds,
                ..exec.options()
            };
            match run_to_dir(&cfg, &out, &options)? {
                RunStatus::Complete(m) => print_metrics(&m),
                RunStatus::Paused { next_round } => {
                    println!("paused before round {next_round}; rerun with --resume to continue")
                }
            }
        }
        Command::Sweep {
            config,
            param,
            values,
            out,
            exec,
        } => {
            let cfg = ExperimentConfig::from_file(&config)?;
            for row in sweep(&cfg, &param, &values, &out, &exec.options())? {
                print!("{param}={} ", row.value);
                print_metrics(&row.metrics);
            }
        }
        Command::Metrics { runs, out } => {
            let rows = metrics_for_runs(&runs)?;
            match out {
                Some(path) => write_metrics_csv(&path, &rows)?,
                None => write_metrics(std::io::stdout().lock(), &rows)?,
            }
        }
        Command::CostTable {
            config,
            hidden,
            history,
            forecast,
            epochs,
            bytes_per_param,
            runs,
        } => {
            let cost = match config {
                Some(path) => {
                    let c = ExperimentConfig::from_file(&path)?;
                    CostModel::new(c.hidden, c.history, c.forecast, c.epochs).with_bytes_per_param(c.bytes_per_param)
                }
                None => CostModel::new(hidden, history, forecast, epochs).with_bytes_per_param(bytes_per_param),
            };
            if !cost.is_valid() {
                return Err(invalid("cost-table: all sizes must be positive".into()));
            }
            cost_summary(&cost, &runs)?;
        }
        Command::Synth {
            config,
            out,
            seed,
            nodes,
            time_steps,
            segment_length,
            density,
        } => {
            let (mut spec, window) = match config {
                Some(path) => {
                    let c = ExperimentConfig::from_file(&path)?;
                    match &c.dataset {
                        DatasetSource::Synthetic(s) => (s.clone(), c.window_spec()),
                        DatasetSource::Csv(_) => {
                            return Err(invalid(format!("{}: dataset is not synthetic", path.display())))
                        }
                    }
                }
                None => (SynthSpec::default(), WindowSpec::new(12, 1, 288)),
            };
            spec.seed = seed.unwrap_or(spec.seed);
            spec.nodes = nodes.unwrap_or(spec.nodes);
            spec.time_steps = time_steps.unwrap_or(spec.time_steps);
            spec.segment_length = segment_length.unwrap_or(spec.segment_length);
            spec.density = density.unwrap_or(spec.density);
            let data = synthesize_drift(&spec, window).map_err(|e| invalid(e.to_string()))?;
            export_dataset(&data, &out)?;
            println!("wrote {} nodes x {} steps to {}", data.node_count(), data.time_count(), out.display());
        }
    }
    Ok(())
}

fn cost_summary(cost: &CostModel, runs: &[PathBuf]) -> Result<(), Error> {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let w = |out: &mut std::io::StdoutLock, line: String| {
        writeln!(out, "{line}").map_err(|e| Error::Artifact(e.to_string()))
    };
    w(&mut out, "quantity,value".into())?;
    for (name, value) in cost_table(cost) {
        w(&mut out, format!("{name},{value}"))?;
    }
    if runs.is_empty() {
        return Ok(());
    }
    w(&mut out, String::new())?;
    w(
        &mut out,
        "run,method,scored_rounds,participation_fraction,total_flops,total_bytes,full_participation_bytes,encoder_decoder_bytes,communication_reduction"
            .into(),
    )?;
    for dir in runs {
        let config = ExperimentConfig::from_file(&dir.join(CONFIG_FILE))?;
        let reports = read_reports(&dir.join(REPORTS_FILE))?;
        let run_cost = CostModel::new(config.hidden, config.history, config.forecast, config.epochs)
            .with_bytes_per_param(config.bytes_per_param);
        let scored: Vec<_> = reports.iter().filter(|r| r.scored).collect();
        let slots: u64 = scored.iter().map(|r| r.clients.len() as u64).sum();
        let participations: u64 = scored.iter().map(|r| r.participation() as u64).sum();
        let flops: u64 = scored.iter().map(|r| r.flops()).sum();
        let bytes: u64 = scored.iter().map(|r| r.bytes()).sum();
        let full = slots * 2 * run_cost.comm_bytes();
        let encdec = slots * run_cost.fedostc_comm_bytes();
        let reduction = if full == 0 { 0.0 } else { 1.0 - bytes as f64 / full as f64 };
        let fraction = if slots == 0 { 0.0 } else { participations as f64 / slots as f64 };
        w(
            &mut out,
            format!(
                "{},{},{},{fraction},{flops},{bytes},{full},{encdec},{reduction}",
                name_of(dir),
                config.method.name(),
                scored.len()
            ),
        )?;
    }
    Ok(())
}

fn name_of(dir: &Path) -> String {
    dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
