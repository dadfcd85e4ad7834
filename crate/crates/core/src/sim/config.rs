//! Experiment configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{load_csv, synthesize_drift, AdjacencyFormat, CsvOptions, SynthSpec, TrafficDataset, WindowSpec};
use crate::drift::HwUpdate;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Drift-gated participation with graph-weighted aggregation.
    Refol,
    /// Random client selection with plain averaging.
    Vanilla,
    /// Each client trains once on its first window and never again.
    FrozenLocal,
    /// Drift-gated local training without any communication.
    LocalOl,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Refol => "refol",
            Method::Vanilla => "vanilla",
            Method::FrozenLocal => "frozen-local",
            Method::LocalOl => "local-ol",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Warmup {
    /// Run the online loop over the train and validation rounds before scoring.
    TrainPartition,
    /// Start the loop at the first test round.
    None,
}

/// Number of clients selected per round by the vanilla method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SelectCount {
    Fixed(usize),
    /// The mean per-round participant count of the drift-gated method on the
    /// same data and threshold, rounded.
    Auto(AutoTag),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoTag {
    Auto,
}

impl SelectCount {
    pub const AUTO: SelectCount = SelectCount::Auto(AutoTag::Auto);
}

/// How the vanilla server combines uploads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum VanillaAggregation {
    Average,
    Graph { layers: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSource {
    pub speeds: PathBuf,
    pub adjacency: PathBuf,
    #[serde(default = "yes")]
    pub header: bool,
    #[serde(default)]
    pub adjacency_format: AdjacencyFormat,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetSource {
    Synthetic(SynthSpec),
    Csv(CsvSource),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub method: Method,
    /// Participation threshold on the window divergence.
    pub threshold: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub hidden: usize,
    pub history: usize,
    pub forecast: usize,
    /// Steps per seasonal cycle, used by the interval score.
    pub periodicity: usize,
    pub conv_layers: usize,
    pub seed: u64,
    pub split: [f64; 3],
    pub hw_update: HwUpdate,
    pub warmup: Warmup,
    /// Per-node z-scoring of model inputs and targets, fitted on pre-test rows.
    pub normalize: bool,
    pub pooled_rmse: bool,
    pub bytes_per_param: usize,
    pub alpha: f64,
    /// Trailing residuals used for prediction intervals.
    pub interval_window: usize,
    pub select_count: SelectCount,
    pub vanilla_aggregation: VanillaAggregation,
    /// Score predictions of clients that skipped the round.
    pub score_all_clients: bool,
    /// Speed at or below which a step counts as congested, for sliced metrics.
    pub congestion_threshold: Option<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSource::Synthetic(SynthSpec::default()),
            method: Method::Refol,
            threshold: 3e-4,
            learning_rate: 1e-3,
            epochs: 5,
            hidden: 128,
            history: 12,
            forecast: 1,
            periodicity: 288,
            conv_layers: 2,
            seed: 0,
            split: [0.7, 0.1, 0.2],
            hw_update: HwUpdate::InputWindow,
            warmup: Warmup::TrainPartition,
            normalize: false,
            pooled_rmse: false,
            bytes_per_param: 4,
            alpha: 0.05,
            interval_window: 100,
            select_count: SelectCount::AUTO,
            vanilla_aggregation: VanillaAggregation::Average,
            score_all_clients: true,
            congestion_threshold: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(vec![e.message().to_string()]))
    }

    /// Reads a config file; relative dataset paths resolve against its directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let mut config = Self::from_toml(&text)?;
        if let DatasetSource::Csv(csv) = &mut config.dataset {
            let base = path.parent().unwrap_or(Path::new("."));
            for p in [&mut csv.speeds, &mut csv.adjacency] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    pub fn window_spec(&self) -> WindowSpec {
        WindowSpec::new(self.history, self.forecast, self.periodicity)
    }

    /// Every problem found, not just the first.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut check = |ok: bool, msg: String| {
            if !ok {
                out.push(msg);
            }
        };
        check(
            self.threshold >= 0.0,
            format!("threshold: must be a nonnegative number, got {}", self.threshold),
        );
        check(
            self.learning_rate.is_finite() && self.learning_rate >= 0.0,
            format!("learning_rate: must be finite and nonnegative, got {}", self.learning_rate),
        );
        check(self.epochs >= 1, "epochs: must be at least 1".into());
        check(self.hidden >= 1, "hidden: must be at least 1".into());
        check(self.history >= 1, "history: must be at least 1".into());
        check(self.forecast >= 1, "forecast: must be at least 1".into());
        check(self.periodicity >= 1, "periodicity: must be at least 1".into());
        check(
            self.split.iter().all(|r| r.is_finite() && *r >= 0.0) && self.split[2] > 0.0,
            format!("split: components must be nonnegative with a positive test share, got {:?}", self.split),
        );
        check(self.bytes_per_param >= 1, "bytes_per_param: must be at least 1".into());
        check(
            self.alpha > 0.0 && self.alpha < 1.0,
            format!("alpha: must lie in (0, 1), got {}", self.alpha),
        );
        check(self.interval_window >= 1, "interval_window: must be at least 1".into());
        check(
            self.hw_update != HwUpdate::ForecastWindow || self.forecast == self.history,
            format!(
                "hw_update: forecast-window requires forecast == history, got {} and {}",
                self.forecast, self.history
            ),
        );
        if let SelectCount::Fixed(n) = self.select_count {
            check(n >= 1, "select_count: must be at least 1".into());
            if let DatasetSource::Synthetic(s) = &self.dataset {
                check(
                    n <= s.nodes,
                    format!("select_count: {n} exceeds the {} dataset nodes", s.nodes),
                );
            }
        }
        if let Some(c) = self.congestion_threshold {
            check(c.is_finite(), "congestion_threshold: must be finite".into());
        }
        match &self.dataset {
            DatasetSource::Synthetic(s) => {
                check(s.nodes >= 1, "dataset.synthetic.nodes: must be at least 1".into());
                check(s.segment_length >= 1, "dataset.synthetic.segment_length: must be at least 1".into());
                check(
                    s.time_steps > self.history + self.forecast,
                    format!(
                        "dataset.synthetic.time_steps: {} leaves no admissible rounds for history {} and forecast {}",
                        s.time_steps, self.history, self.forecast
                    ),
                );
                check(
                    (0.0..=1.0).contains(&s.density),
                    format!("dataset.synthetic.density: must lie in [0, 1], got {}", s.density),
                );
                check(
                    s.noise_std >= 0.0 && s.level_low <= s.level_high,
                    "dataset.synthetic: noise_std must be nonnegative and level_low <= level_high".into(),
                );
            }
            DatasetSource::Csv(c) => {
                check(
                    c.speeds.is_file(),
                    format!("dataset.csv.speeds: file not found: {}", c.speeds.display()),
                );
                check(
                    c.adjacency.is_file(),
                    format!("dataset.csv.adjacency: file not found: {}", c.adjacency.display()),
                );
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    pub fn load_dataset(&self) -> Result<TrafficDataset> {
        let spec = self.window_spec();
        Ok(match &self.dataset {
            DatasetSource::Synthetic(s) => synthesize_drift(s, spec)?,
            DatasetSource::Csv(c) => load_csv(
                &c.speeds,
                &c.adjacency,
                CsvOptions {
                    spec,
                    header: c.header,
                    adjacency_format: c.adjacency_format,
                },
            )?,
        })
    }

    /// Sets one sweepable parameter from its textual value.
    pub fn set_parameter(&mut self, name: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Error::Config(vec![format!("{name}: cannot parse {value:?} as {what}")]);
        match name {
            "threshold" | "Q" => self.threshold = value.parse().map_err(|_| bad("a number"))?,
            "learning_rate" | "lr" => self.learning_rate = value.parse().map_err(|_| bad("a number"))?,
            "conv_layers" => self.conv_layers = value.parse().map_err(|_| bad("an integer"))?,
            "forecast" | "F" => self.forecast = value.parse().map_err(|_| bad("an integer"))?,
            "epochs" | "E" => self.epochs = value.parse().map_err(|_| bad("an integer"))?,
            "hidden" | "hs" => self.hidden = value.parse().map_err(|_| bad("an integer"))?,
            other => {
                return Err(Error::Config(vec![format!(
                    "sweep parameter {other:?} is not one of threshold, conv_layers, forecast, epochs, learning_rate, hidden"
                )]))
            }
        }
        Ok(())
    }
}
