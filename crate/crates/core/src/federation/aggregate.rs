use serde::{Deserialize, Serialize};

use super::assignment::solve_assignment;
use crate::error::{Error, Result};
use crate::models::{permute_group, unit_vectors, MatchPlan};
use crate::nn::{ParamSet, Tensor};

/// A client's model after local training.
#[derive(Clone, Debug, PartialEq)]
pub struct ClientUpdate {
    pub client_id: usize,
    pub params: ParamSet<f32>,
    pub n_k: usize,
    pub train_time_s: f64,
    pub local_epochs: usize,
    pub train_loss: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregator {
    FedAvg,
    FedMa,
}

impl Aggregator {
    pub fn as_str(self) -> &'static str {
        match self {
            Aggregator::FedAvg => "fedavg",
            Aggregator::FedMa => "fedma",
        }
    }
}

fn check_updates(updates: &[ClientUpdate]) -> Result<()> {
    let first = updates.first().ok_or_else(|| Error::Contract("aggregation needs at least one client update".into()))?;
    for u in updates {
        if u.n_k == 0 {
            return Err(Error::Contract(format!("client {} reports no samples", u.client_id)));
        }
        first.params.check_compatible(&u.params).map_err(|e| Error::Shape(format!("client {}: {e}", u.client_id)))?;
    }
    Ok(())
}

fn weights(updates: &[ClientUpdate]) -> Vec<f64> {
    let total: f64 = updates.iter().map(|u| u.n_k as f64).sum();
    updates.iter().map(|u| u.n_k as f64 / total).collect()
}

/// Sample-weighted elementwise mean of all client tensors, accumulated in f64.
pub fn fedavg_aggregate(updates: &[ClientUpdate]) -> Result<ParamSet<f32>> {
    check_updates(updates)?;
    let w = weights(updates);
    let mut out = updates[0].params.clone();
    for i in 0..out.len() {
        let mut acc = vec![0.0f64; out.layer(i).tensor.len()];
        for (u, &wk) in updates.iter().zip(&w) {
            for (a, &x) in acc.iter_mut().zip(u.params.layer(i).tensor.data()) {
                *a += wk * x as f64;
            }
        }
        let dims = out.layer(i).tensor.dims().to_vec();
        out.layer_mut(i).tensor = Tensor::new(dims, acc.into_iter().map(|a| a as f32).collect())?;
    }
    Ok(out)
}

/// Result of matching one layer's neurons across clients.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerMatch {
    /// Row `i` is the weighted mean of the rows matched to anchor slot `i`.
    pub averaged: Vec<Vec<f64>>,
    /// `perms[k][i]` is the neuron of client `k` placed in slot `i`.
    pub perms: Vec<Vec<usize>>,
    pub anchor: usize,
}

/// Index of the largest client (first on ties).
pub fn anchor_client(sizes: &[usize]) -> usize {
    let mut best = 0;
    for (k, &n) in sizes.iter().enumerate() {
        if n > sizes[best] {
            best = k;
        }
    }
    best
}

/// Aligns every client's neurons to the anchor client's by minimum total
/// squared distance, then averages aligned rows by sample weight.
pub fn fedma_match_layer(clients: &[Vec<Vec<f64>>], sizes: &[usize]) -> Result<LayerMatch> {
    if clients.is_empty() || clients.len() != sizes.len() {
        return Err(Error::Shape(format!("{} clients with {} sizes", clients.len(), sizes.len())));
    }
    let m = clients[0].len();
    let len = clients[0].first().map_or(0, Vec::len);
    for (k, c) in clients.iter().enumerate() {
        if c.len() != m || c.iter().any(|r| r.len() != len) {
            return Err(Error::Shape(format!("client {k} has {} neurons, expected {m} of length {len}", c.len())));
        }
    }
    let anchor = anchor_client(sizes);
    let total: f64 = sizes.iter().map(|&n| n as f64).sum();
    let mut perms = Vec::with_capacity(clients.len());
    for (k, c) in clients.iter().enumerate() {
        if k == anchor {
            perms.push((0..m).collect());
            continue;
        }
        let cost: Vec<Vec<f64>> = clients[anchor]
            .iter()
            .map(|a| c.iter().map(|b| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()).collect())
            .collect();
        perms.push(solve_assignment(&cost)?);
    }
    let mut averaged = vec![vec![0.0; len]; m];
    for (k, c) in clients.iter().enumerate() {
        let w = sizes[k] as f64 / total;
        for (i, row) in averaged.iter_mut().enumerate() {
            for (a, x) in row.iter_mut().zip(&c[perms[k][i]]) {
                *a += w * x;
            }
        }
    }
    Ok(LayerMatch { averaged, perms, anchor })
}

/// Matched averaging: walks the permutation groups input → output, aligns
/// each client's units of a trainable group to the anchor client (moving the
/// matching rows of producers and columns of consumers), then averages the
/// aligned models like FedAvg. Frozen groups are left in place.
pub fn fedma_aggregate(updates: &[ClientUpdate], plan: &MatchPlan) -> Result<ParamSet<f32>> {
    check_updates(updates)?;
    let sizes: Vec<usize> = updates.iter().map(|u| u.n_k).collect();
    let mut aligned: Vec<ClientUpdate> = updates.to_vec();
    let mut done = vec![false; plan.groups.len()];
    for (g, group) in plan.groups.iter().enumerate() {
        if !group.is_trainable(&aligned[0].params) {
            done[g] = true;
            continue;
        }
        let rows: Vec<Vec<Vec<f64>>> = aligned.iter().map(|u| unit_vectors(&u.params, group, |h| done[h])).collect();
        let matched = fedma_match_layer(&rows, &sizes).map_err(|e| Error::Shape(format!("group '{}': {e}", group.name)))?;
        for (u, perm) in aligned.iter_mut().zip(&matched.perms) {
            if perm.iter().enumerate().any(|(i, &p)| i != p) {
                permute_group(&mut u.params, group, perm)?;
            }
        }
        done[g] = true;
    }
    fedavg_aggregate(&aligned)
}

/// Dispatches on `aggregator`.
pub fn aggregate(aggregator: Aggregator, updates: &[ClientUpdate], plan: &MatchPlan) -> Result<ParamSet<f32>> {
    match aggregator {
        Aggregator::FedAvg => fedavg_aggregate(updates),
        Aggregator::FedMa => fedma_aggregate(updates, plan),
    }
}
