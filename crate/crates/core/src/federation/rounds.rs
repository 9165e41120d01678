use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::aggregate::{aggregate, Aggregator, ClientUpdate};
use super::partition::{ClientShard, Partition};
use super::transport::Transport;
use crate::error::{Error, Result};
use crate::models::MatchPlan;
use crate::nn::{Network, OptState, ParamSet};
use crate::par::{self, Exec};
use crate::seed;
use crate::train::{early_stop, evaluate, train_epoch, FrameInputs, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoundConfig {
    pub n_clients: usize,
    pub local_epochs: usize,
    /// Upper bound on rounds; `None` matches the centralized epoch budget.
    pub total_rounds: Option<usize>,
    pub aggregator: Aggregator,
    pub partition: Partition,
    pub transport: Transport,
    /// Clients keep their SGD momentum from one round to the next instead
    /// of restarting from zero velocity.
    pub client_momentum: bool,
}

impl Default for RoundConfig {
    fn default() -> Self {
        Self {
            n_clients: 5,
            local_epochs: 1,
            total_rounds: None,
            aggregator: Aggregator::FedAvg,
            partition: Partition::Iid,
            transport: Transport::InProcess,
            client_momentum: true,
        }
    }
}

impl RoundConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_clients < 2 || self.local_epochs == 0 {
            return Err(Error::Config(format!("invalid federation settings {self:?}")));
        }
        if let Partition::Dirichlet { alpha } = self.partition {
            if !(alpha > 0.0) {
                return Err(Error::Config(format!("dirichlet alpha must be positive, got {alpha}")));
            }
        }
        Ok(())
    }

    /// Rounds giving the same number of gradient epochs as `max_epochs` centralized epochs.
    pub fn rounds(&self, max_epochs: usize) -> usize {
        self.total_rounds.unwrap_or(max_epochs / self.local_epochs)
    }
}

/// Runs `local_epochs` epochs of SGD over the shard, starting from an exact
/// copy of the global parameters with fresh momentum. The learning rate
/// follows the cumulative epoch count `first_epoch + e`.
#[allow(clippy::too_many_arguments)]
pub fn local_train(
    net: &Network,
    global: &ParamSet<f32>,
    inputs: &FrameInputs,
    shard: &ClientShard,
    labels: &[usize],
    cfg: &TrainConfig,
    local_epochs: usize,
    first_epoch: usize,
    seed: u64,
    exec: Exec,
) -> Result<ClientUpdate> {
    let opt = OptState::new(cfg.sgd, global);
    Ok(local_train_from(net, global, opt, inputs, shard, labels, cfg, local_epochs, first_epoch, seed, exec)?.0)
}

/// [`local_train`] continuing from an existing optimizer state; returns the
/// update and the state after the last step.
#[allow(clippy::too_many_arguments)]
pub fn local_train_from(
    net: &Network,
    global: &ParamSet<f32>,
    mut opt: OptState<f32>,
    inputs: &FrameInputs,
    shard: &ClientShard,
    labels: &[usize],
    cfg: &TrainConfig,
    local_epochs: usize,
    first_epoch: usize,
    seed: u64,
    exec: Exec,
) -> Result<(ClientUpdate, OptState<f32>)> {
    if shard.frames.is_empty() {
        return Err(Error::Contract(format!("client {} has an empty shard", shard.client_id)));
    }
    let start = Instant::now();
    let mut params = global.clone();
    let client_seed = seed::derive(seed, "client", shard.client_id as u64);
    let mut loss = 0.0;
    for e in 0..local_epochs {
        loss = train_epoch(net, &mut params, &mut opt, inputs, &shard.frames, labels, cfg.batch_size, first_epoch + e, client_seed, exec)?;
    }
    let update = ClientUpdate {
        client_id: shard.client_id,
        params,
        n_k: shard.n_k(),
        train_time_s: start.elapsed().as_secs_f64(),
        local_epochs,
        train_loss: loss,
    };
    Ok((update, opt))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientRecord {
    pub client_id: usize,
    pub n_k: usize,
    pub train_time_s: f64,
    pub train_loss: f64,
}

/// One line of the round history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub aggregator: Aggregator,
    pub clients: Vec<ClientRecord>,
    pub lr: f64,
    pub aggregate_time_s: f64,
    pub round_time_s: f64,
    pub cumulative_time_s: f64,
    pub val_loss: f64,
    pub val_frame_accuracy: f64,
}

#[derive(Clone, Debug)]
pub struct FedOutcome {
    /// Global parameters from the best validation round.
    pub params: ParamSet<f32>,
    pub history: Vec<RoundRecord>,
    pub best_round: usize,
    pub rounds_run: usize,
    pub early_stopped: bool,
    /// Sum of round wall times (client training, transport, aggregation).
    pub train_time_s: f64,
}

/// Synchronous federated training: each round broadcasts the global model,
/// trains all clients concurrently, collects the updates and aggregates.
/// Early stopping follows the validation loss of the global model after
/// each round, as in centralized training.
#[allow(clippy::too_many_arguments)]
pub fn run_federated_training(
    net: &Network,
    init: &ParamSet<f32>,
    plan: &MatchPlan,
    inputs: &FrameInputs,
    labels: &[usize],
    shards: &[ClientShard],
    val_idx: &[usize],
    round_cfg: &RoundConfig,
    train_cfg: &TrainConfig,
    seed: u64,
    exec: Exec,
) -> Result<FedOutcome> {
    round_cfg.validate()?;
    train_cfg.validate()?;
    let rounds = round_cfg.rounds(train_cfg.max_epochs);
    let mut global = init.clone();
    let mut best = init.clone();
    let mut history = Vec::new();
    let mut losses = Vec::new();
    let (mut best_round, mut early_stopped, mut elapsed) = (0, false, 0.0);
    let mut states: Vec<OptState<f32>> = shards.iter().map(|_| OptState::new(train_cfg.sgd, init)).collect();
    for round in 0..rounds {
        let t0 = Instant::now();
        let first_epoch = round * round_cfg.local_epochs;
        let round_seed = seed::derive(seed, "round", round as u64);
        let results = par::map_range(exec, shards.len(), |k| -> Result<(ClientUpdate, OptState<f32>)> {
            let shard = &shards[k];
            let received = round_cfg.transport.transfer(&global)?;
            let opt = if round_cfg.client_momentum { states[k].clone() } else { OptState::new(train_cfg.sgd, init) };
            let (mut u, opt) = local_train_from(net, &received, opt, inputs, shard, labels, train_cfg, round_cfg.local_epochs, first_epoch, round_seed, Exec::Sequential)
                .map_err(|e| Error::Divergence(format!("round {round}, client {}: {e}", shard.client_id)))?;
            u.params = round_cfg.transport.transfer(&u.params)?;
            Ok((u, opt))
        });
        let mut updates = Vec::with_capacity(shards.len());
        for (k, r) in results.into_iter().enumerate() {
            let (u, opt) = r?;
            states[k] = opt;
            updates.push(u);
        }
        let t_agg = Instant::now();
        global = aggregate(round_cfg.aggregator, &updates, plan)?;
        let aggregate_time_s = t_agg.elapsed().as_secs_f64();
        let round_time_s = t0.elapsed().as_secs_f64();
        elapsed += round_time_s;
        let (val_loss, preds) = evaluate(net, &global, inputs, val_idx, labels, exec)?;
        let correct = preds.iter().zip(val_idx).filter(|(p, &i)| **p == labels[i]).count();
        history.push(RoundRecord {
            round,
            aggregator: round_cfg.aggregator,
            clients: updates
                .iter()
                .map(|u| ClientRecord { client_id: u.client_id, n_k: u.n_k, train_time_s: u.train_time_s, train_loss: u.train_loss })
                .collect(),
            lr: crate::nn::lr_at_epoch(&train_cfg.sgd, first_epoch),
            aggregate_time_s,
            round_time_s,
            cumulative_time_s: elapsed,
            val_loss,
            val_frame_accuracy: correct as f64 / val_idx.len() as f64,
        });
        losses.push(val_loss);
        let d = early_stop(&losses, train_cfg.patience, train_cfg.min_delta)?;
        if d.best_epoch == round {
            best = global.clone();
        }
        best_round = d.best_epoch;
        if d.stop {
            early_stopped = true;
            break;
        }
    }
    Ok(FedOutcome { params: best, rounds_run: history.len(), history, best_round, early_stopped, train_time_s: elapsed })
}

/// Writes one JSON object per round.
pub fn write_history_jsonl(history: &[RoundRecord], mut out: impl Write) -> Result<()> {
    for r in history {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
