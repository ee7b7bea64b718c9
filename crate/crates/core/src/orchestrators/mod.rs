//! Round-based federated training protocols.
//!
//! All three protocols share the same skeleton: a round does local training
//! plus aggregation (timed, and summed into the build time), then the new
//! global model is scored on the participating shards and the test set
//! (untimed).

mod afl;
mod cfl;
mod hfl;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{ClientShard, Dataset};
use crate::federation::{FederationError, GlobalModel};
use crate::metrics::{self, ConfusionMatrix, MetricsError, Stopwatch};
use crate::nn::{self, ModelArch, NnError, ParamSet, TrainOptions, TrainReport};
use crate::seed;
use crate::tensor::Tensor;

pub use afl::run_afl;
pub use cfl::run_cfl;
pub use hfl::{group_of, run_hfl};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OrchestratorError {
    #[error("invalid topology: {0}")]
    InvalidConfig(String),
    #[error("cannot form {groups} groups from {clients} clients")]
    InvalidGrouping { groups: usize, clients: usize },
    #[error("round {0} sampled no clients")]
    EmptyRoundSample(usize),
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("{shards} shards for {clients} configured clients")]
    ShardCountMismatch { shards: usize, clients: usize },
    #[error("all-reduce produced diverging peer models")]
    AllReduceDiverged,
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Federation(#[from] FederationError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Paradigm {
    Hfl,
    Afl,
    Cfl,
}

impl Paradigm {
    pub const ALL: [Paradigm; 3] = [Paradigm::Hfl, Paradigm::Afl, Paradigm::Cfl];

    pub fn key(self) -> &'static str {
        match self {
            Paradigm::Hfl => "hfl",
            Paradigm::Afl => "afl",
            Paradigm::Cfl => "cfl",
        }
    }

    /// Display name used in tables and plots.
    pub fn title(self) -> &'static str {
        match self {
            Paradigm::Hfl => "Hierarchical FL",
            Paradigm::Afl => "Aggregated FL",
            Paradigm::Cfl => "Continual FL",
        }
    }
}

impl fmt::Display for Paradigm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Paradigm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "hfl" => Ok(Paradigm::Hfl),
            "afl" => Ok(Paradigm::Afl),
            "cfl" => Ok(Paradigm::Cfl),
            other => Err(format!("unknown paradigm `{other}` (expected hfl | afl | cfl)")),
        }
    }
}

/// How continual FL folds each client's result into the global model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CflMode {
    /// The model is handed from client to client; the last one's output is global.
    #[default]
    ModelPassing,
    /// Each client trains from the running global model, which then becomes
    /// the sample-weighted running mean of the clients visited so far.
    IncrementalAverage,
}

impl FromStr for CflMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "model-passing" => Ok(CflMode::ModelPassing),
            "incremental-average" => Ok(CflMode::IncrementalAverage),
            other => Err(format!("unknown CFL mode `{other}` (expected model-passing | incremental-average)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyConfig {
    pub paradigm: Paradigm,
    pub num_clients: usize,
    /// HFL edge aggregators.
    pub num_groups: usize,
    /// AFL participation per round.
    pub client_fraction: f64,
    /// CFL visiting-order seed.
    pub client_order_seed: u64,
    pub cfl_mode: CflMode,
    pub rounds: usize,
    pub local_epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl TopologyConfig {
    pub fn new(paradigm: Paradigm) -> Self {
        Self {
            paradigm,
            num_clients: 10,
            num_groups: 2,
            client_fraction: 0.5,
            client_order_seed: 0,
            cfl_mode: CflMode::ModelPassing,
            rounds: 10,
            local_epochs: 2,
            lr: 0.01,
            batch_size: 32,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), OrchestratorError> {
        let fail = |m: String| Err(OrchestratorError::InvalidConfig(m));
        if self.num_clients == 0 {
            return fail("num_clients must be at least 1".into());
        }
        if self.rounds == 0 {
            return fail("rounds must be at least 1".into());
        }
        if self.local_epochs == 0 {
            return fail("local_epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return fail(format!("lr must be finite and non-negative, got {}", self.lr));
        }
        if !(self.client_fraction > 0.0 && self.client_fraction <= 1.0) {
            return fail(format!("client_fraction must be in (0, 1], got {}", self.client_fraction));
        }
        if self.paradigm == Paradigm::Hfl && (self.num_groups == 0 || self.num_groups > self.num_clients) {
            return Err(OrchestratorError::InvalidGrouping {
                groups: self.num_groups,
                clients: self.num_clients,
            });
        }
        Ok(())
    }

    pub fn train_options(&self) -> TrainOptions {
        TrainOptions {
            epochs: self.local_epochs,
            lr: self.lr,
            batch_size: self.batch_size,
        }
    }
}

/// Everything a protocol run reads: the model, the data and the starting point.
#[derive(Debug, Clone, Copy)]
pub struct Federation<'a> {
    pub arch: &'a ModelArch,
    pub train: &'a Dataset,
    pub shards: &'a [ClientShard],
    pub test: &'a Dataset,
    pub init: &'a ParamSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: usize,
    pub paradigm: Paradigm,
    pub train_accuracy: f64,
    pub train_loss: f64,
    pub test_accuracy: f64,
    /// Wall-clock seconds of local training plus aggregation.
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub global: GlobalModel,
    pub logs: Vec<RoundLog>,
    /// Accumulated over the same segments as the per-round timings.
    pub build_time_s: f64,
}

/// Prediction results over a dataset.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub confusion: ConfusionMatrix,
    pub mean_loss: f64,
    /// Wall-clock seconds of the prediction pass alone.
    pub seconds: f64,
}

const EVAL_CHUNK: usize = 256;

/// Scores `params` on `indices` of `data` (all samples when `None`).
pub fn evaluate(
    arch: &ModelArch,
    params: &ParamSet,
    data: &Dataset,
    indices: Option<&[usize]>,
) -> Result<Evaluation, OrchestratorError> {
    let all: Vec<usize>;
    let indices = match indices {
        Some(ix) => ix,
        None => {
            all = (0..data.len()).collect();
            &all
        }
    };
    if indices.is_empty() {
        return Err(OrchestratorError::EmptyTestSet);
    }
    let batches: Vec<(Tensor<f32>, Vec<u8>)> = indices
        .chunks(EVAL_CHUNK)
        .map(|chunk| nn::gather_batch(data, chunk))
        .collect();
    let start = Instant::now();
    let logits = batches
        .iter()
        .map(|(images, _)| nn::forward(arch, params, images))
        .collect::<Result<Vec<_>, _>>()?;
    let seconds = start.elapsed().as_secs_f64();

    let mut confusion = ConfusionMatrix::default();
    let mut loss_sum = 0.0;
    for (l, (_, labels)) in logits.iter().zip(&batches) {
        confusion.merge(&metrics::confusion(&nn::argmax_rows(l), labels)?);
        loss_sum += nn::mean_loss(l, labels) * labels.len() as f64;
    }
    Ok(Evaluation {
        confusion,
        mean_loss: loss_sum / indices.len() as f64,
        seconds,
    })
}

/// Test accuracy of a model and the seconds spent predicting.
pub fn evaluate_round(arch: &ModelArch, model: &GlobalModel, test: &Dataset) -> Result<(f64, f64), OrchestratorError> {
    let eval = evaluate(arch, &model.params, test, None)?;
    Ok((metrics::accuracy(&eval.confusion)?, eval.seconds))
}

/// Dispatches to the protocol named in `config`.
pub fn run(config: &TopologyConfig, fed: &Federation<'_>) -> Result<RunOutcome, OrchestratorError> {
    match config.paradigm {
        Paradigm::Hfl => run_hfl(config, fed),
        Paradigm::Afl => run_afl(config, fed),
        Paradigm::Cfl => run_cfl(config, fed),
    }
}

fn check_setup(config: &TopologyConfig, fed: &Federation<'_>) -> Result<(), OrchestratorError> {
    config.validate()?;
    if fed.shards.len() != config.num_clients {
        return Err(OrchestratorError::ShardCountMismatch {
            shards: fed.shards.len(),
            clients: config.num_clients,
        });
    }
    if fed.test.is_empty() {
        return Err(OrchestratorError::EmptyTestSet);
    }
    if !fed.init.matches_arch(fed.arch) {
        return Err(NnError::StructureMismatch.into());
    }
    Ok(())
}

/// Seed of one client's local training in one round; shared by all protocols.
fn local_seed(config: &TopologyConfig, round: usize, client_id: usize) -> u64 {
    seed::derive(config.seed, &[seed::LOCAL_TRAIN, round as u64, client_id as u64])
}

fn train_client(
    config: &TopologyConfig,
    fed: &Federation<'_>,
    start: &ParamSet,
    shard: &ClientShard,
    round: usize,
) -> Result<(ParamSet, TrainReport), OrchestratorError> {
    Ok(nn::train_local(
        fed.arch,
        start,
        fed.train,
        &shard.indices,
        &config.train_options(),
        local_seed(config, round, shard.client_id),
    )?)
}

/// Trains the listed clients from the same starting model, in parallel.
/// Results come back in input order.
fn train_clients(
    config: &TopologyConfig,
    fed: &Federation<'_>,
    start: &ParamSet,
    shards: &[&ClientShard],
    round: usize,
) -> Result<Vec<ParamSet>, OrchestratorError> {
    shards
        .par_iter()
        .map(|shard| train_client(config, fed, start, shard, round).map(|(p, _)| p))
        .collect()
}

/// Round bookkeeping shared by the protocols.
struct RoundClock {
    paradigm: Paradigm,
    build: Stopwatch,
    logs: Vec<RoundLog>,
    round_start: Option<Instant>,
}

impl RoundClock {
    fn new(paradigm: Paradigm) -> Self {
        Self {
            paradigm,
            build: Stopwatch::new(),
            logs: Vec::new(),
            round_start: None,
        }
    }

    fn begin(&mut self) -> Result<(), OrchestratorError> {
        self.build.start()?;
        self.round_start = Some(Instant::now());
        Ok(())
    }

    /// Closes the timed segment and scores the new global model.
    fn end(
        &mut self,
        fed: &Federation<'_>,
        global: &GlobalModel,
        participants: &[&ClientShard],
    ) -> Result<(), OrchestratorError> {
        let seconds = self.round_start.take().map_or(0.0, |t| t.elapsed().as_secs_f64());
        self.build.stop()?;
        let mut seen: Vec<usize> = participants.iter().flat_map(|s| s.indices.iter().copied()).collect();
        seen.sort_unstable();
        let train = evaluate(fed.arch, &global.params, fed.train, Some(&seen))?;
        let (test_accuracy, _) = evaluate_round(fed.arch, global, fed.test)?;
        self.logs.push(RoundLog {
            round: global.round,
            paradigm: self.paradigm,
            train_accuracy: metrics::accuracy(&train.confusion)?,
            train_loss: train.mean_loss,
            test_accuracy,
            seconds,
        });
        Ok(())
    }

    fn finish(self, global: GlobalModel) -> RunOutcome {
        RunOutcome {
            global,
            logs: self.logs,
            build_time_s: self.build.seconds(),
        }
    }
}

#[cfg(test)]
pub(crate) mod testkit {
    use super::*;
    use crate::dataset::{partition_iid, synthetic};
    use crate::nn::{default_arch, init_params};

    pub struct Fixture {
        pub arch: ModelArch,
        pub train: Dataset,
        pub shards: Vec<ClientShard>,
        pub test: Dataset,
        pub init: ParamSet,
    }

    impl Fixture {
        pub fn new(samples: usize, clients: usize) -> Self {
            let train = synthetic((0..samples).map(|i| (i % 10) as u8).collect());
            let test = synthetic((0..20).map(|i| (i % 10) as u8).collect());
            let arch = default_arch();
            Self {
                shards: partition_iid(&train, clients, 1).unwrap(),
                init: init_params(&arch, 1),
                arch,
                train,
                test,
            }
        }

        pub fn fed(&self) -> Federation<'_> {
            Federation {
                arch: &self.arch,
                train: &self.train,
                shards: &self.shards,
                test: &self.test,
                init: &self.init,
            }
        }
    }

    pub fn config(paradigm: Paradigm, clients: usize) -> TopologyConfig {
        TopologyConfig {
            num_clients: clients,
            rounds: 2,
            local_epochs: 1,
            batch_size: 8,
            ..TopologyConfig::new(paradigm)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::testkit::*;
    use super::*;

    #[test]
    fn validation_rules() {
        assert!(TopologyConfig::new(Paradigm::Hfl).validate().is_ok());
        let bad = TopologyConfig { rounds: 0, ..TopologyConfig::new(Paradigm::Afl) };
        assert!(matches!(bad.validate(), Err(OrchestratorError::InvalidConfig(_))));
        let bad = TopologyConfig { client_fraction: 1.5, ..TopologyConfig::new(Paradigm::Afl) };
        assert!(bad.validate().is_err());
        let bad = TopologyConfig { num_groups: 11, ..TopologyConfig::new(Paradigm::Hfl) };
        assert_eq!(bad.validate(), Err(OrchestratorError::InvalidGrouping { groups: 11, clients: 10 }));
        // groups only matter for HFL
        let ok = TopologyConfig { num_groups: 0, ..TopologyConfig::new(Paradigm::Cfl) };
        assert!(ok.validate().is_ok());
    }

    #[test]
    fn shard_count_checked() {
        let fx = Fixture::new(40, 4);
        let cfg = config(Paradigm::Afl, 5);
        assert!(matches!(run(&cfg, &fx.fed()), Err(OrchestratorError::ShardCountMismatch { .. })));
    }

    #[test]
    fn evaluate_examples() {
        let fx = Fixture::new(20, 2);
        // a zero model predicts class 0 for everything: accuracy 0.1 on a balanced set
        let zero = GlobalModel { params: ParamSet::zeros(&fx.arch), round: 0 };
        let (acc, secs) = evaluate_round(&fx.arch, &zero, &fx.test).unwrap();
        assert_eq!(acc, 0.1);
        assert!(secs > 0.0);
        // a bias-only model that always answers the one label present is perfect
        let mut params = ParamSet::zeros(&fx.arch);
        params.entries_mut()[3].bias.data_mut()[4] = 1.0;
        let fours = fx.test.subset(&[4, 14]);
        let perfect = GlobalModel { params, round: 0 };
        assert_eq!(evaluate_round(&fx.arch, &perfect, &fours).unwrap().0, 1.0);
        let empty = fx.test.subset(&[]);
        assert_eq!(evaluate_round(&fx.arch, &perfect, &empty), Err(OrchestratorError::EmptyTestSet));
    }

    #[test]
    fn build_time_matches_rounds() {
        let fx = Fixture::new(40, 4);
        for p in Paradigm::ALL {
            let out = run(&config(p, 4), &fx.fed()).unwrap();
            let sum: f64 = out.logs.iter().map(|l| l.seconds).sum();
            assert!((out.build_time_s - sum).abs() <= 0.01 * out.build_time_s + 1e-4, "{p}");
            let rounds: Vec<usize> = out.logs.iter().map(|l| l.round).collect();
            assert_eq!(rounds, vec![1, 2]);
            assert_eq!(out.global.round, 2);
            for l in &out.logs {
                assert!((0.0..=1.0).contains(&l.train_accuracy) && (0.0..=1.0).contains(&l.test_accuracy));
                assert!(l.train_loss >= 0.0);
            }
        }
    }

    #[test]
    fn zero_lr_keeps_initial_model() {
        let fx = Fixture::new(40, 4);
        for p in Paradigm::ALL {
            for mode in [CflMode::ModelPassing, CflMode::IncrementalAverage] {
                let cfg = TopologyConfig { lr: 0.0, rounds: 3, cfl_mode: mode, ..config(p, 4) };
                let out = run(&cfg, &fx.fed()).unwrap();
                assert_eq!(out.global.params.content_hash(), fx.init.content_hash(), "{p} {mode:?}");
                assert!(out.logs.windows(2).all(|w| w[0].test_accuracy == w[1].test_accuracy));
            }
        }
    }
}
