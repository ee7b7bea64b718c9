use rand::seq::SliceRandom;

use super::{check_setup, train_client, CflMode, Federation, OrchestratorError, RoundClock, RunOutcome, TopologyConfig};
use crate::dataset::ClientShard;
use crate::federation::{fedavg, GlobalModel};
use crate::seed;

/// Client visiting order of one round.
pub(crate) fn visiting_order<'a>(config: &TopologyConfig, shards: &'a [ClientShard], round: usize) -> Vec<&'a ClientShard> {
    let mut order: Vec<&ClientShard> = shards.iter().collect();
    order.shuffle(&mut seed::rng(config.client_order_seed, &[seed::CLIENT_ORDER, round as u64]));
    order
}

/// Continual (decentralized) FL: the model travels through the clients in a
/// seeded order each round, each client continuing from its predecessor.
pub fn run_cfl(config: &TopologyConfig, fed: &Federation<'_>) -> Result<RunOutcome, OrchestratorError> {
    check_setup(config, fed)?;
    let mut global = GlobalModel {
        params: fed.init.clone(),
        round: 0,
    };
    let mut clock = RoundClock::new(config.paradigm);
    for round in 1..=config.rounds {
        let order = visiting_order(config, fed.shards, round);
        clock.begin()?;
        let mut current = global.params.clone();
        let mut seen = 0;
        for shard in &order {
            let (trained, _) = train_client(config, fed, &current, shard, round)?;
            current = match config.cfl_mode {
                CflMode::ModelPassing => trained,
                CflMode::IncrementalAverage => {
                    let merged = fedavg(&[&current, &trained], &[seen, shard.n_c()])?;
                    seen += shard.n_c();
                    merged
                }
            };
        }
        global = GlobalModel { params: current, round };
        clock.end(fed, &global, &order)?;
    }
    Ok(clock.finish(global))
}
