//! Paradigm-comparison experiments: configuration, execution and output files.

pub mod config;
pub mod emit;
pub mod svg;

use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::{self, ClientShard, DataError, Dataset, DatasetName};
use crate::metrics::{self, ConfusionMatrix, MetricsReport};
use crate::nn::{self, default_arch, ModelArch, ParamSet};
use crate::orchestrators::{self, Federation, OrchestratorError, Paradigm, RoundLog, TopologyConfig};

pub use config::{load_config, load_config_with, ConfigError, DatasetFiles, ExperimentConfig, Overrides};
pub use emit::{emit_all, emit_confusion, emit_curves_and_plots, emit_tables, read_bundle, EmitError};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("{paradigm}: {source}")]
    Paradigm {
        paradigm: Paradigm,
        #[source]
        source: OrchestratorError,
    },
    #[error(transparent)]
    Emit(#[from] EmitError),
}

impl ExperimentError {
    /// Process exit code: 2 config, 3 data, 4 anything at run time.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) => 2,
            ExperimentError::Data(_) => 3,
            _ => 4,
        }
    }
}

/// Data after capping, validation split and partitioning; shared by all paradigms.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: Dataset,
    pub validation: Option<Dataset>,
    pub test: Dataset,
    pub shards: Vec<ClientShard>,
}

impl Prepared {
    /// SHA-256 over every shard's client id and indices.
    pub fn shard_hash(&self) -> String {
        let mut h = Sha256::new();
        for s in &self.shards {
            h.update((s.client_id as u64).to_le_bytes());
            h.update((s.indices.len() as u64).to_le_bytes());
            for &i in &s.indices {
                h.update((i as u64).to_le_bytes());
            }
        }
        config::hex(&h.finalize())
    }
}

/// Loads the data files and derives the experiment's splits and shards.
pub fn prepare(config: &ExperimentConfig) -> Result<Prepared, DataError> {
    let f = &config.files;
    let train = dataset::load_idx_pair(&f.train_images, &f.train_labels, config.dataset)?;
    let test = dataset::load_idx_pair(&f.test_images, &f.test_labels, config.dataset)?;
    let train = dataset::stratified_subset(&train, config.train_cap, config.seed);
    let test = dataset::stratified_subset(&test, config.test_cap, config.seed);
    let (train, validation) = if config.validation_fraction > 0.0 {
        let (t, v) = dataset::split_validation(&train, config.validation_fraction, config.seed)?;
        (t, Some(v))
    } else {
        (train, None)
    };
    let shards = dataset::partition_iid(&train, config.num_clients, config.seed)?;
    Ok(Prepared {
        train,
        validation,
        test,
        shards,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParadigmResult {
    pub paradigm: Paradigm,
    pub topology: TopologyConfig,
    /// Accuracy of the final model on the participants of the last round.
    pub train_accuracy: f64,
    pub validation_accuracy: Option<f64>,
    pub report: MetricsReport,
    pub confusion: ConfusionMatrix,
    pub rounds: Vec<RoundLog>,
    /// Hashes of the inputs this paradigm started from; equal across a run.
    pub init_params_hash: String,
    pub shard_hash: String,
    pub params_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub created_unix_s: u64,
    pub config_hash: String,
    pub shard_hash: String,
    pub init_params_hash: String,
    pub arch: String,
    pub num_params: usize,
    pub dataset: DatasetName,
    pub seed: u64,
    pub train_samples: usize,
    pub validation_samples: usize,
    pub test_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsBundle {
    pub manifest: Manifest,
    pub results: Vec<ParadigmResult>,
    /// Canonical text of the config that produced the bundle.
    pub config: String,
}

impl ResultsBundle {
    pub fn get(&self, paradigm: Paradigm) -> Option<&ParadigmResult> {
        self.results.iter().find(|r| r.paradigm == paradigm)
    }
}

/// Trains and scores one paradigm on prepared data.
pub fn run_paradigm(
    config: &ExperimentConfig,
    paradigm: Paradigm,
    arch: &ModelArch,
    data: &Prepared,
    init: &ParamSet,
) -> Result<(ParadigmResult, ParamSet), OrchestratorError> {
    let topology = config.topology(paradigm);
    let fed = Federation {
        arch,
        train: &data.train,
        shards: &data.shards,
        test: &data.test,
        init,
    };
    let outcome = orchestrators::run(&topology, &fed)?;
    let params = outcome.global.params;
    let final_eval = orchestrators::evaluate(arch, &params, &data.test, None)?;
    let report = MetricsReport::from_confusion(&final_eval.confusion, outcome.build_time_s, final_eval.seconds)?;
    let validation_accuracy = match &data.validation {
        Some(v) => Some(metrics::accuracy(&orchestrators::evaluate(arch, &params, v, None)?.confusion)?),
        None => None,
    };
    let result = ParadigmResult {
        paradigm,
        train_accuracy: outcome.logs.last().map_or(0.0, |l| l.train_accuracy),
        validation_accuracy,
        report,
        confusion: final_eval.confusion,
        rounds: outcome.logs,
        init_params_hash: init.content_hash(),
        shard_hash: data.shard_hash(),
        params_hash: params.content_hash(),
        topology,
    };
    Ok((result, params))
}

/// Runs every configured paradigm from the same shards and initial model.
/// `on_done` sees each paradigm's result and final parameters as it finishes.
pub fn run_experiment_with(
    config: &ExperimentConfig,
    mut on_done: impl FnMut(&ParadigmResult, &ParamSet),
) -> Result<ResultsBundle, ExperimentError> {
    config.validate()?;
    let data = prepare(config)?;
    let arch = default_arch();
    let init: ParamSet = nn::init_params(&arch, config.seed);
    let mut results = Vec::with_capacity(config.paradigms.len());
    for &paradigm in &config.paradigms {
        let (result, params) = run_paradigm(config, paradigm, &arch, &data, &init)
            .map_err(|source| ExperimentError::Paradigm { paradigm, source })?;
        on_done(&result, &params);
        results.push(result);
    }
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        created_unix_s: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs()),
        config_hash: config.hash(),
        shard_hash: data.shard_hash(),
        init_params_hash: init.content_hash(),
        arch: arch.describe(),
        num_params: arch.num_params(),
        dataset: config.dataset,
        seed: config.seed,
        train_samples: data.train.len(),
        validation_samples: data.validation.as_ref().map_or(0, Dataset::len),
        test_samples: data.test.len(),
    };
    Ok(ResultsBundle {
        manifest,
        results,
        config: config.dump(),
    })
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ResultsBundle, ExperimentError> {
    run_experiment_with(config, |_, _| {})
}
