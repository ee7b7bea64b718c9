//! Experiment configuration files.
//!
//! The format is TOML restricted to a fixed set of keys; see the README for
//! the grammar. Relative paths resolve against the config file's directory.

use std::env;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;
use toml::{Table, Value};

use crate::dataset::DatasetName;
use crate::orchestrators::{CflMode, Paradigm, TopologyConfig};

/// Environment variable holding a directory of `<dataset>/` folders.
pub const DATA_DIR_ENV: &str = "FEDTOPO_DATA_DIR";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid value for `{key}`: {message}")]
    Validation { key: String, message: String },
    #[error("`{key}`: file not found: {path}")]
    MissingFile { key: String, path: String },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

fn invalid(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Validation {
        key: key.to_string(),
        message: message.into(),
    }
}

/// The four IDX files of a dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetFiles {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
}

const FILE_KEYS: [&str; 4] = ["train_images", "train_labels", "test_images", "test_labels"];
const STANDARD_NAMES: [&str; 4] = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
];

impl DatasetFiles {
    fn get(&self, i: usize) -> &Path {
        [&self.train_images, &self.train_labels, &self.test_images, &self.test_labels][i]
    }

    /// Standard file names under `dir`, preferring gzipped copies.
    pub fn in_dir(dir: &Path) -> Option<Self> {
        let find = |stem: &str| {
            [format!("{stem}.gz"), stem.to_string()]
                .into_iter()
                .map(|name| dir.join(name))
                .find(|p| p.is_file())
        };
        Some(Self {
            train_images: find(STANDARD_NAMES[0])?,
            train_labels: find(STANDARD_NAMES[1])?,
            test_images: find(STANDARD_NAMES[2])?,
            test_labels: find(STANDARD_NAMES[3])?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub paradigms: Vec<Paradigm>,
    /// Share of the (capped) training set held out for validation; 0 disables.
    pub validation_fraction: f64,

    pub dataset: DatasetName,
    pub files: DatasetFiles,
    pub train_cap: usize,
    pub test_cap: usize,

    pub num_clients: usize,
    pub rounds: usize,
    pub local_epochs: usize,
    pub lr: f64,
    pub batch_size: usize,

    pub num_groups: usize,
    pub client_fraction: f64,
    pub cfl_mode: CflMode,
    /// Defaults to `seed` when unset.
    pub client_order_seed: Option<u64>,
}

pub const DEFAULT_TRAIN_CAP: usize = 6000;
pub const DEFAULT_TEST_CAP: usize = 1000;
pub const DEFAULT_VALIDATION_FRACTION: f64 = 0.1;
pub const DEFAULT_OUTPUT_DIR: &str = "runs/latest";

impl ExperimentConfig {
    /// Documented defaults around the given data files.
    pub fn with_files(dataset: DatasetName, files: DatasetFiles) -> Self {
        let t = TopologyConfig::new(Paradigm::Cfl);
        Self {
            seed: t.seed,
            output_dir: PathBuf::from(DEFAULT_OUTPUT_DIR),
            paradigms: Paradigm::ALL.to_vec(),
            validation_fraction: DEFAULT_VALIDATION_FRACTION,
            dataset,
            files,
            train_cap: DEFAULT_TRAIN_CAP,
            test_cap: DEFAULT_TEST_CAP,
            num_clients: t.num_clients,
            rounds: t.rounds,
            local_epochs: t.local_epochs,
            lr: t.lr,
            batch_size: t.batch_size,
            num_groups: t.num_groups,
            client_fraction: t.client_fraction,
            cfl_mode: t.cfl_mode,
            client_order_seed: None,
        }
    }

    /// Protocol settings for one paradigm of this experiment.
    pub fn topology(&self, paradigm: Paradigm) -> TopologyConfig {
        TopologyConfig {
            paradigm,
            num_clients: self.num_clients,
            num_groups: self.num_groups,
            client_fraction: self.client_fraction,
            client_order_seed: self.client_order_seed.unwrap_or(self.seed),
            cfl_mode: self.cfl_mode,
            rounds: self.rounds,
            local_epochs: self.local_epochs,
            lr: self.lr,
            batch_size: self.batch_size,
            seed: self.seed,
        }
    }

    /// Checks every field; run before use when a config is built in code.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.paradigms.is_empty() {
            return Err(invalid("paradigms", "at least one paradigm is required"));
        }
        for (i, p) in self.paradigms.iter().enumerate() {
            if self.paradigms[..i].contains(p) {
                return Err(invalid("paradigms", format!("`{p}` is listed twice")));
            }
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(invalid("validation_fraction", "must be in [0, 1)"));
        }
        if self.train_cap == 0 {
            return Err(invalid("dataset.train_cap", "must be at least 1"));
        }
        if self.test_cap == 0 {
            return Err(invalid("dataset.test_cap", "must be at least 1"));
        }
        let checks: [(&str, bool, &str); 8] = [
            ("training.num_clients", self.num_clients >= 1, "must be at least 1"),
            ("training.rounds", self.rounds >= 1, "must be at least 1"),
            ("training.local_epochs", self.local_epochs >= 1, "must be at least 1"),
            ("training.batch_size", self.batch_size >= 1, "must be at least 1"),
            ("training.lr", self.lr.is_finite() && self.lr >= 0.0, "must be finite and non-negative"),
            ("hfl.num_groups", self.num_groups >= 1, "must be at least 1"),
            (
                "hfl.num_groups",
                self.num_groups <= self.num_clients,
                "cannot exceed training.num_clients",
            ),
            (
                "afl.client_fraction",
                self.client_fraction > 0.0 && self.client_fraction <= 1.0,
                "must be in (0, 1]",
            ),
        ];
        if let Some((key, _, msg)) = checks.iter().find(|c| !c.1) {
            return Err(invalid(key, *msg));
        }
        for p in &self.paradigms {
            self.topology(*p)
                .validate()
                .map_err(|e| invalid("training", e.to_string()))?;
        }
        for (i, key) in FILE_KEYS.iter().enumerate() {
            let path = self.files.get(i);
            if !path.is_file() {
                return Err(ConfigError::MissingFile {
                    key: format!("dataset.{key}"),
                    path: path.display().to_string(),
                });
            }
        }
        Ok(())
    }

    /// Canonical TOML text with every key spelled out.
    pub fn dump(&self) -> String {
        let mut top = Table::new();
        top.insert("seed".into(), seed_value(self.seed));
        top.insert("output_dir".into(), path_value(&self.output_dir));
        top.insert("validation_fraction".into(), Value::Float(self.validation_fraction));
        top.insert(
            "paradigms".into(),
            Value::Array(self.paradigms.iter().map(|p| Value::String(p.key().into())).collect()),
        );
        top.insert("partition".into(), Value::String("iid".into()));

        let mut dataset = Table::new();
        dataset.insert("name".into(), Value::String(self.dataset.as_str().into()));
        for (i, key) in FILE_KEYS.iter().enumerate() {
            dataset.insert((*key).into(), path_value(self.files.get(i)));
        }
        dataset.insert("train_cap".into(), Value::Integer(self.train_cap as i64));
        dataset.insert("test_cap".into(), Value::Integer(self.test_cap as i64));
        top.insert("dataset".into(), Value::Table(dataset));

        let mut training = Table::new();
        training.insert("num_clients".into(), Value::Integer(self.num_clients as i64));
        training.insert("rounds".into(), Value::Integer(self.rounds as i64));
        training.insert("local_epochs".into(), Value::Integer(self.local_epochs as i64));
        training.insert("lr".into(), Value::Float(self.lr));
        training.insert("batch_size".into(), Value::Integer(self.batch_size as i64));
        top.insert("training".into(), Value::Table(training));

        let mut hfl = Table::new();
        hfl.insert("num_groups".into(), Value::Integer(self.num_groups as i64));
        top.insert("hfl".into(), Value::Table(hfl));
        let mut afl = Table::new();
        afl.insert("client_fraction".into(), Value::Float(self.client_fraction));
        top.insert("afl".into(), Value::Table(afl));
        let mut cfl = Table::new();
        let mode = match self.cfl_mode {
            CflMode::ModelPassing => "model-passing",
            CflMode::IncrementalAverage => "incremental-average",
        };
        cfl.insert("mode".into(), Value::String(mode.into()));
        if let Some(s) = self.client_order_seed {
            cfl.insert("client_order_seed".into(), seed_value(s));
        }
        top.insert("cfl".into(), Value::Table(cfl));

        toml::to_string(&top).expect("plain tables always serialize")
    }

    /// SHA-256 of [`dump`](Self::dump), hex encoded.
    pub fn hash(&self) -> String {
        hex(&Sha256::digest(self.dump().as_bytes()))
    }

    /// Parses config text; relative paths resolve against `base`.
    pub fn from_toml_str(text: &str, base: &Path, origin: &str) -> Result<Self, ConfigError> {
        parse_table(&parse_text(text, origin)?, base)
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    /// Also selects the `FEDTOPO_DATA_DIR` subfolder when no paths are given.
    pub dataset: Option<DatasetName>,
}

/// Reads, parses and validates a config file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    load_config_with(path, &Overrides::default())
}

pub fn load_config_with(path: &Path, overrides: &Overrides) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let origin = path.display().to_string();
    let mut top = parse_text(&text, &origin)?;
    if let Some(seed) = overrides.seed {
        top.insert("seed".into(), seed_value(seed));
    }
    if let Some(name) = overrides.dataset {
        let ds = top
            .entry("dataset")
            .or_insert_with(|| Value::Table(Table::new()));
        if let Value::Table(t) = ds {
            t.insert("name".into(), Value::String(name.as_str().into()));
        }
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let config = parse_table(&top, base)?;
    config.validate()?;
    Ok(config)
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn parse_text(text: &str, origin: &str) -> Result<Table, ConfigError> {
    text.parse().map_err(|e: toml::de::Error| {
        let (line, column) = e.span().map_or((1, 1), |s| line_col(text, s.start));
        ConfigError::Parse {
            path: origin.to_string(),
            line,
            column,
            message: e.message().to_string(),
        }
    })
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

fn seed_value(seed: u64) -> Value {
    match i64::try_from(seed) {
        Ok(v) => Value::Integer(v),
        Err(_) => Value::String(seed.to_string()),
    }
}

fn path_value(p: &Path) -> Value {
    Value::String(p.to_string_lossy().into_owned())
}

const TOP_KEYS: [&str; 10] = [
    "seed",
    "output_dir",
    "validation_fraction",
    "paradigms",
    "partition",
    "dataset",
    "training",
    "hfl",
    "afl",
    "cfl",
];
const SECTION_KEYS: [(&str, &[&str]); 5] = [
    (
        "dataset",
        &["name", "dir", "train_images", "train_labels", "test_images", "test_labels", "train_cap", "test_cap"],
    ),
    ("training", &["num_clients", "rounds", "local_epochs", "lr", "batch_size"]),
    ("hfl", &["num_groups"]),
    ("afl", &["client_fraction"]),
    ("cfl", &["mode", "client_order_seed"]),
];

/// Typed accessors over one table, with dotted key names for errors.
struct Section<'a> {
    prefix: &'static str,
    table: Option<&'a Table>,
}

impl<'a> Section<'a> {
    fn key(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    fn raw(&self, name: &str) -> Option<&'a Value> {
        self.table.and_then(|t| t.get(name))
    }

    fn usize(&self, name: &str, default: usize) -> Result<usize, ConfigError> {
        match self.raw(name) {
            None => Ok(default),
            Some(Value::Integer(v)) => usize::try_from(*v).map_err(|_| invalid(&self.key(name), "must be non-negative")),
            Some(_) => Err(invalid(&self.key(name), "expected an integer")),
        }
    }

    fn f64(&self, name: &str, default: f64) -> Result<f64, ConfigError> {
        match self.raw(name) {
            None => Ok(default),
            Some(Value::Float(v)) => Ok(*v),
            Some(Value::Integer(v)) => Ok(*v as f64),
            Some(_) => Err(invalid(&self.key(name), "expected a number")),
        }
    }

    fn seed(&self, name: &str) -> Result<Option<u64>, ConfigError> {
        match self.raw(name) {
            None => Ok(None),
            Some(Value::Integer(v)) => u64::try_from(*v)
                .map(Some)
                .map_err(|_| invalid(&self.key(name), "must be non-negative")),
            Some(Value::String(s)) => s
                .parse()
                .map(Some)
                .map_err(|_| invalid(&self.key(name), "expected an unsigned 64-bit integer")),
            Some(_) => Err(invalid(&self.key(name), "expected an integer")),
        }
    }

    fn str(&self, name: &str) -> Result<Option<&'a str>, ConfigError> {
        match self.raw(name) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s)),
            Some(_) => Err(invalid(&self.key(name), "expected a string")),
        }
    }
}

fn section<'a>(top: &'a Table, name: &'static str) -> Result<Section<'a>, ConfigError> {
    match top.get(name) {
        None => Ok(Section { prefix: name, table: None }),
        Some(Value::Table(t)) => Ok(Section { prefix: name, table: Some(t) }),
        Some(_) => Err(invalid(name, "expected a [section]")),
    }
}

fn check_known(top: &Table) -> Result<(), ConfigError> {
    for key in top.keys() {
        if !TOP_KEYS.contains(&key.as_str()) {
            return Err(invalid(key, "unknown key"));
        }
    }
    for (name, allowed) in SECTION_KEYS {
        if let Some(Value::Table(t)) = top.get(name) {
            if let Some(key) = t.keys().find(|k| !allowed.contains(&k.as_str())) {
                return Err(invalid(&format!("{name}.{key}"), "unknown key"));
            }
        }
    }
    Ok(())
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn dataset_files(ds: &Section<'_>, name: DatasetName, base: &Path) -> Result<DatasetFiles, ConfigError> {
    let fallback = match ds.str("dir")? {
        Some(dir) => Some(resolve(base, dir)),
        None => env::var_os(DATA_DIR_ENV).map(|d| PathBuf::from(d).join(name.as_str())),
    };
    let from_dir = fallback.as_deref().and_then(DatasetFiles::in_dir);
    let mut paths = Vec::with_capacity(4);
    for (i, key) in FILE_KEYS.iter().enumerate() {
        let path = match (ds.str(key)?, &from_dir) {
            (Some(p), _) => resolve(base, p),
            (None, Some(found)) => found.get(i).to_path_buf(),
            (None, None) => {
                let hint = match &fallback {
                    Some(dir) => dir.join(STANDARD_NAMES[i]).display().to_string(),
                    None => format!("(not set; use dataset.{key}, dataset.dir or {DATA_DIR_ENV})"),
                };
                return Err(ConfigError::MissingFile {
                    key: ds.key(key),
                    path: hint,
                });
            }
        };
        paths.push(path);
    }
    let mut it = paths.into_iter();
    let mut next = || it.next().expect("four paths");
    Ok(DatasetFiles {
        train_images: next(),
        train_labels: next(),
        test_images: next(),
        test_labels: next(),
    })
}

fn parse_table(top: &Table, base: &Path) -> Result<ExperimentConfig, ConfigError> {
    check_known(top)?;
    let root = Section { prefix: "", table: Some(top) };

    if let Some(p) = root.str("partition")? {
        if p != "iid" {
            return Err(invalid("partition", format!("`{p}` is not supported; only \"iid\" is implemented")));
        }
    }

    let ds = section(top, "dataset")?;
    let name = match ds.str("name")? {
        None => DatasetName::Mnist,
        Some(s) => s.parse().map_err(|e: String| invalid("dataset.name", e))?,
    };
    let files = dataset_files(&ds, name, base)?;
    let mut c = ExperimentConfig::with_files(name, files);

    c.seed = root.seed("seed")?.unwrap_or(c.seed);
    if let Some(dir) = root.str("output_dir")? {
        c.output_dir = resolve(base, dir);
    } else {
        c.output_dir = base.join(&c.output_dir);
    }
    c.validation_fraction = root.f64("validation_fraction", c.validation_fraction)?;
    match top.get("paradigms") {
        None => {}
        Some(Value::Array(items)) => {
            c.paradigms = items
                .iter()
                .map(|v| match v {
                    Value::String(s) => s.parse().map_err(|e: String| invalid("paradigms", e)),
                    _ => Err(invalid("paradigms", "expected strings")),
                })
                .collect::<Result<_, _>>()?;
        }
        Some(_) => return Err(invalid("paradigms", "expected an array of strings")),
    }

    c.train_cap = ds.usize("train_cap", c.train_cap)?;
    c.test_cap = ds.usize("test_cap", c.test_cap)?;

    let tr = section(top, "training")?;
    c.num_clients = tr.usize("num_clients", c.num_clients)?;
    c.rounds = tr.usize("rounds", c.rounds)?;
    c.local_epochs = tr.usize("local_epochs", c.local_epochs)?;
    c.lr = tr.f64("lr", c.lr)?;
    c.batch_size = tr.usize("batch_size", c.batch_size)?;

    c.num_groups = section(top, "hfl")?.usize("num_groups", c.num_groups)?;
    c.client_fraction = section(top, "afl")?.f64("client_fraction", c.client_fraction)?;
    let cfl = section(top, "cfl")?;
    if let Some(mode) = cfl.str("mode")? {
        c.cfl_mode = mode.parse().map_err(|e: String| invalid("cfl.mode", e))?;
    }
    c.client_order_seed = cfl.seed("client_order_seed")?;
    Ok(c)
}
