use super::{check_setup, train_clients, Federation, OrchestratorError, RoundClock, RunOutcome, TopologyConfig};
use crate::dataset::ClientShard;
use crate::federation::{fedavg_by_client, sample_clients, GlobalModel};
use crate::nn::ParamSet;

/// Simulated all-reduce: every peer receives all updates and computes the
/// aggregate itself. Returns one copy per peer.
pub(crate) fn all_reduce(updates: &[(usize, &ParamSet, usize)]) -> Result<Vec<ParamSet>, OrchestratorError> {
    updates
        .iter()
        .map(|_| fedavg_by_client(updates).map_err(Into::into))
        .collect()
}

/// Aggregated (decentralized) FL: a seeded subset of clients trains from the
/// current model each round and the peers all-reduce their updates.
pub fn run_afl(config: &TopologyConfig, fed: &Federation<'_>) -> Result<RunOutcome, OrchestratorError> {
    check_setup(config, fed)?;
    let population: Vec<&ClientShard> = fed.shards.iter().collect();
    let mut global = GlobalModel {
        params: fed.init.clone(),
        round: 0,
    };
    let mut clock = RoundClock::new(config.paradigm);
    for round in 1..=config.rounds {
        let sampled = sample_clients(&population, config.client_fraction, config.seed, round)?;
        if sampled.is_empty() {
            return Err(OrchestratorError::EmptyRoundSample(round));
        }
        clock.begin()?;
        let updates = train_clients(config, fed, &global.params, &sampled, round)?;
        let exchanged: Vec<(usize, &ParamSet, usize)> = sampled
            .iter()
            .zip(&updates)
            .map(|(s, p)| (s.client_id, p, s.n_c()))
            .collect();
        let mut peers = all_reduce(&exchanged)?;
        if peers.windows(2).any(|w| w[0] != w[1]) {
            return Err(OrchestratorError::AllReduceDiverged);
        }
        global = GlobalModel {
            params: peers.swap_remove(0),
            round,
        };
        clock.end(fed, &global, &sampled)?;
    }
    Ok(clock.finish(global))
}
