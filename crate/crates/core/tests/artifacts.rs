use std::fs;
use std::path::PathBuf;

use refol_core::data::{load_csv, synthesize_drift, AdjacencyFormat, CsvOptions, SynthSpec};
use refol_core::runner::{
    export_dataset, metrics_for_runs, read_reports, run_to_dir, sweep, RunOptions, RunStatus, CONFIG_FILE, MANIFEST_FILE,
    REPORTS_FILE,
};
use refol_core::sim::{CsvSource, DatasetSource, ExperimentConfig, Method};
use refol_core::Error;

fn small(method: Method) -> ExperimentConfig {
    ExperimentConfig {
        dataset: DatasetSource::Synthetic(SynthSpec {
            seed: 7,
            nodes: 5,
            time_steps: 300,
            segment_length: 75,
            ..SynthSpec::default()
        }),
        method,
        hidden: 6,
        epochs: 2,
        periodicity: 12,
        ..ExperimentConfig::default()
    }
}

#[test]
fn csv_export_round_trips() {
    let config = small(Method::Refol);
    let DatasetSource::Synthetic(spec) = &config.dataset else { unreachable!() };
    let data = synthesize_drift(spec, config.window_spec()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    export_dataset(&data, dir.path()).unwrap();
    let back = load_csv(
        dir.path().join("speeds.csv"),
        dir.path().join("adjacency.csv"),
        CsvOptions {
            spec: config.window_spec(),
            header: true,
            adjacency_format: AdjacencyFormat::Dense,
        },
    )
    .unwrap();
    assert_eq!(back.node_count(), data.node_count());
    assert_eq!(back.time_count(), data.time_count());
    for n in 0..data.node_count() {
        assert_eq!(back.series(n), data.series(n));
        for m in 0..data.node_count() {
            assert_eq!(back.adjacency().get(n, m), data.adjacency().get(n, m));
        }
    }
}

#[test]
fn csv_config_runs_like_synthetic() {
    let synthetic = small(Method::Refol);
    let DatasetSource::Synthetic(spec) = &synthetic.dataset else { unreachable!() };
    let root = tempfile::tempdir().unwrap();
    export_dataset(&synthesize_drift(spec, synthetic.window_spec()).unwrap(), &root.path().join("data")).unwrap();
    let csv = ExperimentConfig {
        dataset: DatasetSource::Csv(CsvSource {
            speeds: "data/speeds.csv".into(),
            adjacency: "data/adjacency.csv".into(),
            header: true,
            adjacency_format: AdjacencyFormat::Dense,
        }),
        ..synthetic.clone()
    };
    let path = root.path().join("exp.toml");
    fs::write(&path, csv.to_toml()).unwrap();
    let loaded = ExperimentConfig::from_file(&path).unwrap();

    let a = run_to_dir(&synthetic, &root.path().join("a"), &RunOptions::default()).unwrap();
    let b = run_to_dir(&loaded, &root.path().join("b"), &RunOptions::default()).unwrap();
    let (RunStatus::Complete(a), RunStatus::Complete(b)) = (a, b) else { panic!("runs paused") };
    assert_eq!(a.rmse, b.rmse);
    assert_eq!(a.total_bytes, b.total_bytes);
}

#[test]
fn missing_adjacency_names_the_key() {
    let config = ExperimentConfig {
        dataset: DatasetSource::Csv(CsvSource {
            speeds: PathBuf::from("/nonexistent/speeds.csv"),
            adjacency: PathBuf::from("/nonexistent/adjacency.csv"),
            header: true,
            adjacency_format: AdjacencyFormat::Dense,
        }),
        ..ExperimentConfig::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let err = run_to_dir(&config, &dir.path().join("run"), &RunOptions::default()).unwrap_err();
    assert!(err.is_validation());
    let text = err.to_string();
    assert!(text.contains("dataset.csv.adjacency"), "{text}");
    assert!(text.contains("dataset.csv.speeds"), "{text}");
    assert!(!dir.path().join("run").exists());
}

#[test]
fn validation_lists_every_problem() {
    let config = ExperimentConfig {
        epochs: 0,
        hidden: 0,
        alpha: 2.0,
        ..small(Method::Refol)
    };
    let Err(Error::Config(problems)) = config.validate() else { panic!("expected config error") };
    assert_eq!(problems.len(), 3, "{problems:?}");
}

#[test]
fn run_emits_artifacts_and_refuses_overwrite() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let config = small(Method::Refol);
    let RunStatus::Complete(m) = run_to_dir(&config, &out, &RunOptions::default()).unwrap() else { panic!() };
    for f in [CONFIG_FILE, REPORTS_FILE, MANIFEST_FILE, "metrics.csv", "costs.csv"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let reports = read_reports(&out.join(REPORTS_FILE)).unwrap();
    assert_eq!(reports.iter().filter(|r| r.scored).count(), m.scored_rounds);
    let before = fs::read(out.join(REPORTS_FILE)).unwrap();

    let err = run_to_dir(&config, &out, &RunOptions::default()).unwrap_err();
    assert!(!err.is_validation());
    assert_eq!(fs::read(out.join(REPORTS_FILE)).unwrap(), before);

    let forced = RunOptions {
        force: true,
        ..RunOptions::default()
    };
    run_to_dir(&config, &out, &forced).unwrap();
    assert_eq!(fs::read(out.join(REPORTS_FILE)).unwrap(), before);

    let rows = metrics_for_runs(&[out]).unwrap();
    assert_eq!(rows[0].1, m);
}

#[test]
fn resume_continues_from_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let config = small(Method::Vanilla);
    run_to_dir(&config, &dir.path().join("whole"), &RunOptions::default()).unwrap();

    let part = dir.path().join("part");
    let mut budget = RunOptions {
        max_rounds: Some(40),
        checkpoint_every: 7,
        ..RunOptions::default()
    };
    let RunStatus::Paused { next_round } = run_to_dir(&config, &part, &budget).unwrap() else { panic!("did not pause") };
    budget.resume = true;
    while let RunStatus::Paused { next_round: n } = run_to_dir(&config, &part, &budget).unwrap() {
        assert!(n > next_round);
    }
    assert_eq!(
        fs::read(dir.path().join("whole").join(REPORTS_FILE)).unwrap(),
        fs::read(part.join(REPORTS_FILE)).unwrap()
    );
}

#[test]
fn threshold_sweep_writes_summary() {
    let dir = tempfile::tempdir().unwrap();
    let values: Vec<String> = ["0", "1e-4", "3e-4", "6e-4"].iter().map(|s| s.to_string()).collect();
    let rows = sweep(&small(Method::Refol), "threshold", &values, dir.path(), &RunOptions::default()).unwrap();
    assert_eq!(rows.len(), 4);
    for v in &values {
        assert!(dir.path().join(format!("threshold={v}")).join(REPORTS_FILE).is_file());
    }
    assert_eq!(rows[0].metrics.participation_fraction, 1.0);
    assert!(rows.windows(2).all(|w| w[1].metrics.participation_fraction <= w[0].metrics.participation_fraction));
    let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 5);
    assert!(summary.starts_with("schema_version,threshold,rmse"));
}

#[test]
fn sweep_rejects_unknown_parameter_before_running() {
    let dir = tempfile::tempdir().unwrap();
    let err = sweep(&small(Method::Refol), "momentum", &["1".into()], dir.path(), &RunOptions::default()).unwrap_err();
    assert!(err.is_validation());
    assert!(!dir.path().join("summary.csv").exists());
}
