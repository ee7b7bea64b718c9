use super::{check_setup, train_clients, Federation, OrchestratorError, RoundClock, RunOutcome, TopologyConfig};
use crate::dataset::ClientShard;
use crate::federation::{fedavg_grouped, GlobalModel};
use crate::nn::ParamSet;

/// Edge group of a client: round-robin by client id.
pub fn group_of(client_id: usize, num_groups: usize) -> usize {
    client_id % num_groups
}

/// Hierarchical FL: clients train from the global model, each edge group
/// averages its members, and the server averages the group models weighted by
/// group sample totals.
pub fn run_hfl(config: &TopologyConfig, fed: &Federation<'_>) -> Result<RunOutcome, OrchestratorError> {
    check_setup(config, fed)?;
    let shards: Vec<&ClientShard> = fed.shards.iter().collect();
    let mut global = GlobalModel {
        params: fed.init.clone(),
        round: 0,
    };
    let mut clock = RoundClock::new(config.paradigm);
    for round in 1..=config.rounds {
        clock.begin()?;
        let updates = train_clients(config, fed, &global.params, &shards, round)?;

        let members: Vec<(usize, &ParamSet, usize)> = shards
            .iter()
            .zip(&updates)
            .map(|(s, p)| (s.client_id, p, s.n_c()))
            .collect();
        let groups: Vec<usize> = shards.iter().map(|s| group_of(s.client_id, config.num_groups)).collect();
        global = GlobalModel {
            params: fedavg_grouped(&members, &groups)?,
            round,
        };
        clock.end(fed, &global, &shards)?;
    }
    Ok(clock.finish(global))
}

#[cfg(test)]
mod tests {
    use super::super::testkit::*;
    use super::super::{run_afl, Paradigm};
    use super::*;

    #[test]
    fn one_group_equals_full_afl() {
        let fx = Fixture::new(60, 6);
        let hfl = TopologyConfig { num_groups: 1, ..config(Paradigm::Hfl, 6) };
        let afl = TopologyConfig { client_fraction: 1.0, ..config(Paradigm::Afl, 6) };
        let a = run_hfl(&hfl, &fx.fed()).unwrap();
        let b = run_afl(&afl, &fx.fed()).unwrap();
        for (x, y) in a.global.params.values().zip(b.global.params.values()) {
            assert!((x - y).abs() <= 1e-6);
        }
    }

    #[test]
    fn log_per_round() {
        let fx = Fixture::new(40, 4);
        let cfg = TopologyConfig { rounds: 3, num_groups: 3, ..config(Paradigm::Hfl, 4) };
        assert_eq!(run_hfl(&cfg, &fx.fed()).unwrap().logs.len(), 3);
    }

    #[test]
    fn round_robin_groups() {
        assert_eq!((0..5).map(|c| group_of(c, 2)).collect::<Vec<_>>(), vec![0, 1, 0, 1, 0]);
    }
}
