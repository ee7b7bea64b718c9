//! Client bookkeeping and sample-weighted model averaging.

use serde::Serialize;
use thiserror::Error;

use crate::dataset::ClientShard;
use crate::nn::ParamSet;
use crate::seed;
use crate::tensor::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FederationError {
    #[error("nothing to aggregate")]
    EmptyInput,
    #[error("{sets} parameter sets but {counts} sample counts")]
    LengthMismatch { sets: usize, counts: usize },
    #[error("parameter sets differ in structure")]
    StructureMismatch,
    #[error("sample counts sum to zero")]
    ZeroTotalWeight,
    #[error("no clients to sample from")]
    EmptyPopulation,
    #[error("client fraction must be in (0, 1], got {0}")]
    InvalidFraction(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientState {
    pub client_id: usize,
    pub shard: ClientShard,
    pub params: ParamSet,
}

impl ClientState {
    pub fn n_c(&self) -> usize {
        self.shard.n_c()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalModel {
    pub params: ParamSet,
    pub round: usize,
}

/// Normalized aggregation coefficients `n_c / sum(n)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregationWeights(Vec<f64>);

impl AggregationWeights {
    pub fn from_counts(counts: &[usize]) -> Result<Self, FederationError> {
        if counts.is_empty() {
            return Err(FederationError::EmptyInput);
        }
        let total: usize = counts.iter().sum();
        if total == 0 {
            return Err(FederationError::ZeroTotalWeight);
        }
        Ok(Self(counts.iter().map(|&n| n as f64 / total as f64).collect()))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Sample-weighted average `sum_c (n_c / sum_k n_k) * theta_c`.
///
/// Accumulates in `f64` as `theta_0 + sum_c w_c (theta_c - theta_0)`, which is
/// exact when every input is identical. Summation follows input order; use
/// [`fedavg_by_client`] for an order fixed by client id.
pub fn fedavg<T: Scalar>(param_sets: &[&ParamSet<T>], sample_counts: &[usize]) -> Result<ParamSet<T>, FederationError> {
    if param_sets.len() != sample_counts.len() {
        return Err(FederationError::LengthMismatch {
            sets: param_sets.len(),
            counts: sample_counts.len(),
        });
    }
    let weights = AggregationWeights::from_counts(sample_counts)?;
    let reference = param_sets[0];
    if param_sets.iter().any(|p| !p.same_structure(reference)) {
        return Err(FederationError::StructureMismatch);
    }
    let mut out = reference.clone();
    let mut acc: Vec<f64> = Vec::new();
    for (t, dst) in out.tensors_mut().enumerate() {
        acc.clear();
        acc.resize(dst.len(), 0.0);
        let base = reference.tensors().nth(t).unwrap().data();
        for (set, &w) in param_sets.iter().zip(weights.as_slice()).skip(1) {
            let src = set.tensors().nth(t).unwrap().data();
            for ((a, &s), &b) in acc.iter_mut().zip(src).zip(base) {
                *a += w * (s.as_f64() - b.as_f64());
            }
        }
        for ((d, &a), &b) in dst.data_mut().iter_mut().zip(&acc).zip(base) {
            *d = T::of_f64(b.as_f64() + a);
        }
    }
    Ok(out)
}

/// [`fedavg`] over `(client_id, params, n_c)` with summation in ascending client id.
pub fn fedavg_by_client<T: Scalar>(updates: &[(usize, &ParamSet<T>, usize)]) -> Result<ParamSet<T>, FederationError> {
    let mut sorted: Vec<_> = updates.to_vec();
    sorted.sort_by_key(|u| u.0);
    let sets: Vec<&ParamSet<T>> = sorted.iter().map(|u| u.1).collect();
    let counts: Vec<usize> = sorted.iter().map(|u| u.2).collect();
    fedavg(&sets, &counts)
}

/// Two-tier FedAvg: members of each group are averaged first, then the group
/// models are averaged with weights equal to their sample totals. `group[i]`
/// is the group of `updates[i]`; groups without members are skipped.
pub fn fedavg_grouped<T: Scalar>(
    updates: &[(usize, &ParamSet<T>, usize)],
    group: &[usize],
) -> Result<ParamSet<T>, FederationError> {
    if updates.len() != group.len() {
        return Err(FederationError::LengthMismatch {
            sets: updates.len(),
            counts: group.len(),
        });
    }
    let num_groups = group.iter().max().map_or(0, |g| g + 1);
    let mut edge: Vec<(usize, ParamSet<T>, usize)> = Vec::with_capacity(num_groups);
    for g in 0..num_groups {
        let members: Vec<(usize, &ParamSet<T>, usize)> = updates
            .iter()
            .zip(group)
            .filter(|(_, &gi)| gi == g)
            .map(|(u, _)| *u)
            .collect();
        if members.is_empty() {
            continue;
        }
        let total = members.iter().map(|m| m.2).sum();
        edge.push((g, fedavg_by_client(&members)?, total));
    }
    let top: Vec<(usize, &ParamSet<T>, usize)> = edge.iter().map(|(g, p, n)| (*g, p, *n)).collect();
    fedavg_by_client(&top)
}

/// Number of participants for a fraction: `ceil(fraction * count)`, at least 1.
pub fn participants(count: usize, fraction: f64) -> usize {
    // tolerate representation error, e.g. 0.3 * 10 = 3.0000000000000004
    let k = (fraction * count as f64 - 1e-9).ceil() as usize;
    k.clamp(1, count.max(1))
}

/// Uniform sample without replacement of `ceil(fraction * n)` clients,
/// returned in their original order. Deterministic per `(seed, round)`.
pub fn sample_clients<C: Clone>(clients: &[C], fraction: f64, seed: u64, round: usize) -> Result<Vec<C>, FederationError> {
    if clients.is_empty() {
        return Err(FederationError::EmptyPopulation);
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(FederationError::InvalidFraction(fraction));
    }
    let k = participants(clients.len(), fraction);
    if k == clients.len() {
        return Ok(clients.to_vec());
    }
    let mut rng = seed::rng(seed, &[seed::CLIENT_SAMPLE, round as u64]);
    let mut picked = rand::seq::index::sample(&mut rng, clients.len(), k).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| clients[i].clone()).collect())
}

/// Replaces every client's parameters with a copy of the global model.
pub fn broadcast(global: &GlobalModel, mut clients: Vec<ClientState>) -> Result<Vec<ClientState>, FederationError> {
    if clients.iter().any(|c| !c.params.same_structure(&global.params)) {
        return Err(FederationError::StructureMismatch);
    }
    for c in &mut clients {
        c.params = global.params.clone();
    }
    Ok(clients)
}
