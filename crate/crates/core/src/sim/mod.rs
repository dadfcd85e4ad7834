//! Round loop driving clients and server for every method.

pub mod config;
mod round;
mod summary;

use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use self::config::{
    AutoTag, CsvSource, DatasetSource, ExperimentConfig, Method, SelectCount, VanillaAggregation, Warmup,
};
pub use self::round::{
    frozen_client_step, local_client_step, local_round, refol_client_step, refol_round, transmit,
    vanilla_client_step, vanilla_round, ClientOutcome, ClientRecord, ClientState, RoundReport, ServerState,
    StepContext,
};
pub use self::summary::{error_table, summarize, RunMetrics};
use crate::cost::CostModel;
use crate::data::{NodeScaler, RoundSplit, TrafficDataset};
use crate::drift::{participation_schedule, DivergenceLog, HwUpdate};
use crate::error::{Error, Result};
use crate::gru::ModelParams;

/// Seed offset separating the selection stream from model initialization.
const SELECTION_STREAM: u64 = 0x5e1e_c7ed;

/// Complete mutable state between rounds; serializable for checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub server: ServerState,
    pub clients: Vec<ClientState>,
}

/// A validated experiment bound to its dataset.
#[derive(Debug, Clone)]
pub struct Experiment {
    config: ExperimentConfig,
    dataset: TrafficDataset,
    split: RoundSplit,
    rounds: Range<usize>,
    scaler: NodeScaler,
    cost: CostModel,
    select_count: usize,
}

/// Replays the drift gate over `rounds` for every client, without models.
pub fn replay_participation(
    dataset: &TrafficDataset,
    rounds: Range<usize>,
    threshold: f64,
    mode: HwUpdate,
) -> Result<(Vec<Vec<bool>>, DivergenceLog)> {
    let per_client: Vec<(Vec<Vec<bool>>, DivergenceLog)> = (0..dataset.node_count())
        .into_par_iter()
        .map(|node| {
            let windows = rounds
                .clone()
                .map(|t| dataset.window(node, t).map(|w| (w.input, w.target)))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            Ok(participation_schedule(&[windows], threshold, mode)?)
        })
        .collect::<Result<_>>()?;
    let mut flags = Vec::with_capacity(per_client.len());
    let mut log = DivergenceLog::default();
    for (f, l) in per_client {
        flags.extend(f);
        log.entries.extend(l.entries);
    }
    Ok((flags, log))
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let dataset = config.load_dataset()?;
        Self::with_dataset(config, dataset)
    }

    /// Binds `config` to an already loaded dataset; the config's dataset
    /// source is kept only as metadata.
    pub fn with_dataset(config: ExperimentConfig, dataset: TrafficDataset) -> Result<Self> {
        let mut problems = config.problems();
        if dataset.spec() != config.window_spec() {
            problems.push(format!(
                "dataset windowing {:?} differs from the configured {:?}",
                dataset.spec(),
                config.window_spec()
            ));
        }
        if let SelectCount::Fixed(n) = config.select_count {
            if n > dataset.node_count() {
                problems.push(format!(
                    "select_count: {n} exceeds the {} dataset nodes",
                    dataset.node_count()
                ));
            }
        }
        if !problems.is_empty() {
            return Err(Error::Config(problems));
        }
        let split = dataset.split_rounds(config.split)?;
        let rounds = match config.warmup {
            Warmup::TrainPartition => split.train.start..split.test.end,
            Warmup::None => split.test.clone(),
        };
        let scaler = if config.normalize {
            dataset.fit_scaler(split.test.start)
        } else {
            NodeScaler::identity(dataset.node_count())
        };
        let cost = CostModel::new(config.hidden, config.history, config.forecast, config.epochs)
            .with_bytes_per_param(config.bytes_per_param);
        let mut exp = Self {
            config,
            dataset,
            split,
            rounds,
            scaler,
            cost,
            select_count: 0,
        };
        exp.select_count = exp.resolve_select_count()?;
        Ok(exp)
    }

    fn resolve_select_count(&self) -> Result<usize> {
        let n = self.dataset.node_count();
        match (self.config.method, self.config.select_count) {
            (Method::Vanilla, SelectCount::Fixed(k)) => Ok(k),
            (Method::Vanilla, SelectCount::Auto(_)) => {
                let (flags, _) = replay_participation(
                    &self.dataset,
                    self.rounds.clone(),
                    self.config.threshold,
                    self.config.hw_update,
                )?;
                let offset = self.split.test.start - self.rounds.start;
                let scored = self.split.test.len();
                let total: usize = flags.iter().map(|f| f[offset..].iter().filter(|b| **b).count()).sum();
                let mean = total as f64 / scored as f64;
                Ok((mean.round() as usize).clamp(1, n))
            }
            _ => Ok(n),
        }
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn dataset(&self) -> &TrafficDataset {
        &self.dataset
    }

    pub fn split(&self) -> &RoundSplit {
        &self.split
    }

    /// Every round the loop executes, warm-up included.
    pub fn rounds(&self) -> Range<usize> {
        self.rounds.clone()
    }

    pub fn scored_rounds(&self) -> Range<usize> {
        self.split.test.clone()
    }

    pub fn cost(&self) -> CostModel {
        self.cost
    }

    pub fn scaler(&self) -> &NodeScaler {
        &self.scaler
    }

    /// Clients selected per vanilla round; the node count for other methods.
    pub fn select_count(&self) -> usize {
        self.select_count
    }

    pub fn initial_state(&self) -> Result<SimState> {
        let w1 = ModelParams::init(self.config.seed, self.config.hidden, self.config.forecast)?;
        let clients = (0..self.dataset.node_count())
            .map(|n| ClientState::new(n, w1.clone()))
            .collect();
        Ok(SimState {
            server: ServerState {
                global_model: w1,
                round: self.rounds.start,
                rng_seed: self.config.seed ^ SELECTION_STREAM,
                rng_word_pos: 0,
            },
            clients,
        })
    }

    pub fn is_finished(&self, state: &SimState) -> bool {
        state.server.round >= self.rounds.end
    }

    /// Executes the next round and advances `state`.
    pub fn step(&self, state: &mut SimState, parallel: bool) -> Result<RoundReport> {
        if self.is_finished(state) {
            return Err(Error::Artifact(format!("round {} is past the last round", state.server.round)));
        }
        let ctx = StepContext {
            learning_rate: self.config.learning_rate,
            epochs: self.config.epochs,
            threshold: self.config.threshold,
            hw_update: self.config.hw_update,
            cost: self.cost,
            scaler: &self.scaler,
        };
        let (server, clients, mut report) = match self.config.method {
            Method::Refol => refol_round(
                &state.server,
                &state.clients,
                &self.dataset,
                &ctx,
                self.config.conv_layers,
                parallel,
            )?,
            Method::Vanilla => vanilla_round(
                &state.server,
                &state.clients,
                &self.dataset,
                &ctx,
                self.select_count,
                self.config.vanilla_aggregation,
                parallel,
            )?,
            Method::FrozenLocal => local_round(&state.server, &state.clients, &self.dataset, &ctx, true, parallel)?,
            Method::LocalOl => local_round(&state.server, &state.clients, &self.dataset, &ctx, false, parallel)?,
        };
        report.scored = self.split.test.contains(&report.round);
        state.server = server;
        state.clients = clients;
        Ok(report)
    }

    /// Runs every remaining round from a fresh state.
    pub fn run(&self, parallel: bool) -> Result<(SimState, Vec<RoundReport>)> {
        let mut state = self.initial_state()?;
        let mut reports = Vec::with_capacity(self.rounds.len());
        while !self.is_finished(&state) {
            reports.push(self.step(&mut state, parallel)?);
        }
        Ok((state, reports))
    }
}

/// Validates `config`, loads its dataset and runs it to completion.
pub fn run_experiment(config: ExperimentConfig) -> Result<Vec<RoundReport>> {
    Ok(Experiment::new(config)?.run(true)?.1)
}
