//! Client steps and single-round server logic for every method.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::VanillaAggregation;
use crate::aggregate::{aggregate, average, ParticipantGraph};
use crate::cost::CostModel;
use crate::data::{NodeScaler, TrafficDataset, Window};
use crate::drift::{DriftState, HwUpdate};
use crate::error::Result;
use crate::gru::{deserialize, mse_loss, ogd_update, predict, serialize, ModelParams};

/// Per-client state carried across rounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientState {
    pub node_index: usize,
    pub local_model: ModelParams,
    /// `None` until the forced first participation.
    pub drift: Option<DriftState>,
    pub participation_count: usize,
    pub rounds_seen: usize,
}

impl ClientState {
    pub fn new(node_index: usize, initial: ModelParams) -> Self {
        Self {
            node_index,
            local_model: initial,
            drift: None,
            participation_count: 0,
            rounds_seen: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerState {
    pub global_model: ModelParams,
    /// Next round to execute.
    pub round: usize,
    pub rng_seed: u64,
    /// Position of the selection stream, so a restored run continues it.
    pub rng_word_pos: u64,
}

/// One client's outcome within a round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientRecord {
    pub node: usize,
    pub participated: bool,
    /// `None` when the gate was not evaluated (bootstrap or ungated method).
    pub divergence: Option<f64>,
    /// In speed units.
    pub prediction: Vec<f64>,
    pub target: Vec<f64>,
    /// Squared error of the prediction in model units, before any update.
    pub loss: f64,
    pub flops: u64,
    pub bytes_up: u64,
    pub bytes_down: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    /// False for warm-up rounds that precede the evaluation segment.
    pub scored: bool,
    /// Nodes whose uploads were aggregated, ascending.
    pub participants: Vec<usize>,
    /// Aggregation weights over `participants` plus the previous global model.
    pub weights: Option<Vec<f64>>,
    pub clients: Vec<ClientRecord>,
}

impl RoundReport {
    pub fn bytes(&self) -> u64 {
        self.clients.iter().map(|c| c.bytes_up + c.bytes_down).sum()
    }

    pub fn flops(&self) -> u64 {
        self.clients.iter().map(|c| c.flops).sum()
    }

    pub fn participation(&self) -> usize {
        self.clients.iter().filter(|c| c.participated).count()
    }
}

/// Round-invariant settings shared by every client step.
#[derive(Debug, Clone, Copy)]
pub struct StepContext<'a> {
    pub learning_rate: f64,
    pub epochs: usize,
    pub threshold: f64,
    pub hw_update: HwUpdate,
    pub cost: CostModel,
    pub scaler: &'a NodeScaler,
}

pub struct ClientOutcome {
    pub state: ClientState,
    pub record: ClientRecord,
    pub upload: Option<ModelParams>,
}

/// What a model sees after crossing the wire.
pub fn transmit(model: &ModelParams) -> ModelParams {
    deserialize(&serialize(model)).expect("freshly serialized payload decodes")
}

struct Prepared {
    input: Vec<f64>,
    target: Vec<f64>,
}

fn prepare(window: &Window, ctx: &StepContext) -> Prepared {
    Prepared {
        input: ctx.scaler.encode(window.node, &window.input),
        target: ctx.scaler.encode(window.node, &window.target),
    }
}

fn forecast(model: &ModelParams, window: &Window, p: &Prepared, ctx: &StepContext) -> Result<(Vec<f64>, f64)> {
    let scaled = predict(model, &p.input)?;
    let loss = mse_loss(&scaled, &p.target)?;
    Ok((ctx.scaler.decode(window.node, &scaled), loss))
}

fn committed(window: &Window, mode: HwUpdate) -> &[f64] {
    match mode {
        HwUpdate::InputWindow => &window.input,
        HwUpdate::ForecastWindow => &window.target,
    }
}

fn record(window: &Window, participated: bool, divergence: Option<f64>, prediction: Vec<f64>, loss: f64) -> ClientRecord {
    ClientRecord {
        node: window.node,
        participated,
        divergence,
        prediction,
        target: window.target.clone(),
        loss,
        flops: 0,
        bytes_up: 0,
        bytes_down: 0,
    }
}

/// Gate decision: `(participate, divergence, gate flops)`.
fn gate(client: &ClientState, window: &Window, ctx: &StepContext) -> Result<(bool, Option<f64>, u64)> {
    match &client.drift {
        None => Ok((true, None, 0)),
        Some(d) => {
            let (go, dv) = d.should_participate(&window.input)?;
            Ok((go, Some(dv), ctx.cost.kld_flops()))
        }
    }
}

fn commit_drift(state: &mut ClientState, window: &Window, ctx: &StepContext) -> Result<()> {
    let hw = committed(window, ctx.hw_update);
    match &mut state.drift {
        None => state.drift = Some(DriftState::bootstrap(hw, window.round, ctx.threshold)?),
        Some(d) => d.commit_update(hw, window.round),
    }
    Ok(())
}

/// Drift-gated step: a participant downloads, predicts, trains and uploads;
/// anyone else predicts with its stored model and stays silent.
pub fn refol_client_step(
    client: &ClientState,
    server_model: &ModelParams,
    window: &Window,
    ctx: &StepContext,
) -> Result<ClientOutcome> {
    let (go, divergence, gate_flops) = gate(client, window, ctx)?;
    let p = prepare(window, ctx);
    let mut state = client.clone();
    state.rounds_seen += 1;
    if !go {
        let (prediction, loss) = forecast(&client.local_model, window, &p, ctx)?;
        let mut rec = record(window, false, divergence, prediction, loss);
        rec.flops = gate_flops + ctx.cost.forward_flops();
        return Ok(ClientOutcome {
            state,
            record: rec,
            upload: None,
        });
    }
    let (prediction, loss) = forecast(server_model, window, &p, ctx)?;
    state.local_model = ogd_update(server_model, &p.input, &p.target, ctx.learning_rate, ctx.epochs)?;
    commit_drift(&mut state, window, ctx)?;
    state.participation_count += 1;
    let mut rec = record(window, true, divergence, prediction, loss);
    rec.flops = gate_flops + ctx.cost.forward_flops() + ctx.cost.training_flops();
    rec.bytes_down = ctx.cost.comm_bytes();
    rec.bytes_up = ctx.cost.comm_bytes();
    let upload = Some(transmit(&state.local_model));
    Ok(ClientOutcome {
        state,
        record: rec,
        upload,
    })
}

/// Selected clients always download, train and upload; the rest predict with
/// their last model.
pub fn vanilla_client_step(
    client: &ClientState,
    server_model: &ModelParams,
    window: &Window,
    selected: bool,
    ctx: &StepContext,
) -> Result<ClientOutcome> {
    let p = prepare(window, ctx);
    let mut state = client.clone();
    state.rounds_seen += 1;
    if !selected {
        let (prediction, loss) = forecast(&client.local_model, window, &p, ctx)?;
        let mut rec = record(window, false, None, prediction, loss);
        rec.flops = ctx.cost.forward_flops();
        return Ok(ClientOutcome {
            state,
            record: rec,
            upload: None,
        });
    }
    let (prediction, loss) = forecast(server_model, window, &p, ctx)?;
    state.local_model = ogd_update(server_model, &p.input, &p.target, ctx.learning_rate, ctx.epochs)?;
    state.participation_count += 1;
    let mut rec = record(window, true, None, prediction, loss);
    rec.flops = ctx.cost.forward_flops() + ctx.cost.training_flops();
    rec.bytes_down = ctx.cost.comm_bytes();
    rec.bytes_up = ctx.cost.comm_bytes();
    let upload = Some(transmit(&state.local_model));
    Ok(ClientOutcome {
        state,
        record: rec,
        upload,
    })
}

/// Trains once on the first window after downloading the initial model, then
/// only predicts.
pub fn frozen_client_step(client: &ClientState, window: &Window, ctx: &StepContext) -> Result<ClientOutcome> {
    let p = prepare(window, ctx);
    let mut state = client.clone();
    state.rounds_seen += 1;
    let (prediction, loss) = forecast(&client.local_model, window, &p, ctx)?;
    let first = client.rounds_seen == 0;
    let mut rec = record(window, first, None, prediction, loss);
    rec.flops = ctx.cost.forward_flops();
    if first {
        state.local_model = ogd_update(&client.local_model, &p.input, &p.target, ctx.learning_rate, ctx.epochs)?;
        state.participation_count += 1;
        rec.flops += ctx.cost.training_flops();
        rec.bytes_down = ctx.cost.comm_bytes();
    }
    Ok(ClientOutcome {
        state,
        record: rec,
        upload: None,
    })
}

/// Drift-gated training on the client's own model, without communication
/// after the initial download.
pub fn local_client_step(client: &ClientState, window: &Window, ctx: &StepContext) -> Result<ClientOutcome> {
    let (go, divergence, gate_flops) = gate(client, window, ctx)?;
    let p = prepare(window, ctx);
    let mut state = client.clone();
    state.rounds_seen += 1;
    let (prediction, loss) = forecast(&client.local_model, window, &p, ctx)?;
    let mut rec = record(window, go, divergence, prediction, loss);
    rec.flops = gate_flops + ctx.cost.forward_flops();
    if go {
        state.local_model = ogd_update(&client.local_model, &p.input, &p.target, ctx.learning_rate, ctx.epochs)?;
        commit_drift(&mut state, window, ctx)?;
        state.participation_count += 1;
        rec.flops += ctx.cost.training_flops();
        if client.rounds_seen == 0 {
            rec.bytes_down = ctx.cost.comm_bytes();
        }
    }
    Ok(ClientOutcome {
        state,
        record: rec,
        upload: None,
    })
}

fn run_clients<F>(clients: &[ClientState], parallel: bool, step: F) -> Result<Vec<ClientOutcome>>
where
    F: Fn(&ClientState) -> Result<ClientOutcome> + Sync + Send,
{
    if parallel {
        clients.par_iter().map(step).collect()
    } else {
        clients.iter().map(step).collect()
    }
}

fn window_of(dataset: &TrafficDataset, client: &ClientState, round: usize) -> Result<Window> {
    Ok(dataset.window(client.node_index, round)?)
}

type RoundResult = (ServerState, Vec<ClientState>, RoundReport);

fn finish(
    server: &ServerState,
    global_model: ModelParams,
    outcomes: Vec<ClientOutcome>,
    participants: Vec<usize>,
    weights: Option<Vec<f64>>,
) -> RoundResult {
    let mut states = Vec::with_capacity(outcomes.len());
    let mut records = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        states.push(o.state);
        records.push(o.record);
    }
    let next = ServerState {
        global_model,
        round: server.round + 1,
        ..server.clone()
    };
    let report = RoundReport {
        round: server.round,
        scored: true,
        participants,
        weights,
        clients: records,
    };
    (next, states, report)
}

fn uploads(outcomes: &[ClientOutcome]) -> (Vec<usize>, Vec<ModelParams>) {
    outcomes
        .iter()
        .filter_map(|o| o.upload.as_ref().map(|u| (o.record.node, u.clone())))
        .unzip()
}

fn graph_aggregate(
    dataset: &TrafficDataset,
    global: &ModelParams,
    ids: &[usize],
    locals: &[ModelParams],
    layers: usize,
) -> Result<(ModelParams, Vec<f64>)> {
    let graph = ParticipantGraph::build(dataset.adjacency(), ids)?;
    let weights = graph.aggregation_weights_k(layers);
    let next = aggregate(global, locals, &weights)?;
    Ok((next, weights.0))
}

/// Executes round `server.round` of the drift-gated method.
pub fn refol_round(
    server: &ServerState,
    clients: &[ClientState],
    dataset: &TrafficDataset,
    ctx: &StepContext,
    layers: usize,
    parallel: bool,
) -> Result<RoundResult> {
    let download = transmit(&server.global_model);
    let outcomes = run_clients(clients, parallel, |c| {
        refol_client_step(c, &download, &window_of(dataset, c, server.round)?, ctx)
    })?;
    let (ids, locals) = uploads(&outcomes);
    if ids.is_empty() {
        return Ok(finish(server, server.global_model.clone(), outcomes, ids, None));
    }
    let (next, weights) = graph_aggregate(dataset, &server.global_model, &ids, &locals, layers)?;
    Ok(finish(server, next, outcomes, ids, Some(weights)))
}

/// Executes one round with `select_count` clients drawn uniformly without
/// replacement from the server's seeded stream.
pub fn vanilla_round(
    server: &ServerState,
    clients: &[ClientState],
    dataset: &TrafficDataset,
    ctx: &StepContext,
    select_count: usize,
    aggregation: VanillaAggregation,
    parallel: bool,
) -> Result<RoundResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(server.rng_seed);
    rng.set_word_pos(server.rng_word_pos as u128);
    let mut selected = vec![false; clients.len()];
    for i in sample(&mut rng, clients.len(), select_count.min(clients.len())).iter() {
        selected[i] = true;
    }
    let word_pos = rng.get_word_pos() as u64;
    let download = transmit(&server.global_model);
    let outcomes = run_clients(clients, parallel, |c| {
        let window = window_of(dataset, c, server.round)?;
        vanilla_client_step(c, &download, &window, selected[c.node_index], ctx)
    })?;
    let (ids, locals) = uploads(&outcomes);
    let server = ServerState {
        rng_word_pos: word_pos,
        ..server.clone()
    };
    if ids.is_empty() {
        return Ok(finish(&server, server.global_model.clone(), outcomes, ids, None));
    }
    let (next, weights) = match aggregation {
        VanillaAggregation::Average => {
            let w = vec![1.0 / ids.len() as f64; ids.len()];
            (average(&locals)?, w)
        }
        VanillaAggregation::Graph { layers } => graph_aggregate(dataset, &server.global_model, &ids, &locals, layers)?,
    };
    Ok(finish(&server, next, outcomes, ids, Some(weights)))
}

/// Executes one round of a method without server aggregation.
pub fn local_round(
    server: &ServerState,
    clients: &[ClientState],
    dataset: &TrafficDataset,
    ctx: &StepContext,
    frozen: bool,
    parallel: bool,
) -> Result<RoundResult> {
    let outcomes = run_clients(clients, parallel, |c| {
        let window = window_of(dataset, c, server.round)?;
        if frozen {
            frozen_client_step(c, &window, ctx)
        } else {
            local_client_step(c, &window, ctx)
        }
    })?;
    Ok(finish(server, server.global_model.clone(), outcomes, Vec::new(), None))
}
