//! `fedtopo`: run and inspect federated-learning paradigm comparisons.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fedtopo_core::dataset::{self, IdxHeader, NUM_CLASSES};
use fedtopo_core::experiment::{self, ExperimentError, Overrides, ResultsBundle};
use fedtopo_core::{default_arch, DatasetName};

#[derive(Parser)]
#[command(name = "fedtopo", version, about = "Federated learning paradigm simulator (HFL, AFL, CFL)")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// Experiment config file (TOML).
    #[arg(value_name = "CONFIG", required_unless_present = "config_flag")]
    config: Option<PathBuf>,
    #[arg(long = "config", value_name = "PATH", conflicts_with = "config")]
    config_flag: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// mnist | fashion-mnist
    #[arg(long)]
    dataset: Option<DatasetName>,
}

impl ConfigArgs {
    fn load(&self) -> Result<experiment::ExperimentConfig, ExperimentError> {
        let path = self
            .config
            .as_ref()
            .or(self.config_flag.as_ref())
            .expect("clap enforces a config path");
        let overrides = Overrides {
            seed: self.seed,
            dataset: self.dataset,
        };
        Ok(experiment::load_config_with(path, &overrides)?)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train every configured paradigm and write tables, curves and plots.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output directory; defaults to the config's output_dir.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads for client training, 0 = one per core.
        #[arg(long, default_value_t = 0)]
        threads: usize,
    },
    /// Print the header and a summary of an IDX file.
    InspectData { idx_file: PathBuf },
    /// Print each client's class histogram for a config's partition.
    PartitionPreview {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Print the tables of a finished run directory.
    Report { bundle_dir: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, out, threads } => run(&config, out, threads),
        Command::InspectData { idx_file } => inspect(&idx_file),
        Command::PartitionPreview { config } => preview(&config),
        Command::Report { bundle_dir } => report(&bundle_dir),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(args: &ConfigArgs, out: Option<PathBuf>, threads: usize) -> Result<(), ExperimentError> {
    let config = args.load()?;
    if threads > 0 {
        // only fails if a global pool already exists, in which case it is kept
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    let dir = out.unwrap_or_else(|| config.output_dir.clone());
    let arch = default_arch();
    let mut save_error = None;
    let bundle = experiment::run_experiment_with(&config, |r, params| {
        println!(
            "{:<16} test acc {:.4}  build {:.2}s  classify {:.3}s",
            r.paradigm.title(),
            r.report.accuracy,
            r.report.build_time_s,
            r.report.classification_time_s
        );
        let path = dir.join("models").join(format!("{}.params", r.paradigm.key()));
        let write = std::fs::create_dir_all(path.parent().expect("has parent"))
            .and_then(|_| std::fs::write(&path, params.to_bytes(&arch)));
        if let Err(e) = write {
            save_error.get_or_insert(experiment::EmitError::Io {
                path: path.display().to_string(),
                message: e.to_string(),
            });
        }
    })?;
    if let Some(e) = save_error {
        return Err(e.into());
    }
    experiment::emit_all(&bundle, &dir)?;
    print!("{}", summary(&bundle));
    println!("wrote {}", dir.display());
    Ok(())
}

fn inspect(path: &Path) -> Result<(), ExperimentError> {
    let bytes = std::fs::read(path).map_err(|e| dataset::DataError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let bytes = dataset::idx::maybe_decompress(&bytes)?;
    let header = IdxHeader::parse(&bytes)?;
    println!("file   {}", path.display());
    println!("magic  0x{:08x}", header.magic);
    match header.dims.as_slice() {
        [count, rows, cols] => {
            let set = dataset::parse_idx_images_with(&bytes, false)?;
            let mean = set.pixels.iter().map(|&p| f64::from(p)).sum::<f64>() / set.pixels.len().max(1) as f64;
            println!("kind   images");
            println!("count  {count}");
            println!("size   {rows}x{cols}");
            println!("mean   {mean:.2} (of 255)");
        }
        [count] => {
            let set = dataset::parse_idx_labels(&bytes)?;
            let mut hist = [0usize; NUM_CLASSES];
            for &l in &set.labels {
                hist[l as usize] += 1;
            }
            println!("kind   labels");
            println!("count  {count}");
            for (k, n) in hist.iter().enumerate() {
                println!("class {k}  {n}");
            }
        }
        _ => unreachable!("IdxHeader only accepts 1 or 3 dimensions"),
    }
    Ok(())
}

fn preview(args: &ConfigArgs) -> Result<(), ExperimentError> {
    let config = args.load()?;
    let data = experiment::prepare(&config)?;
    let mut out = String::from("client      n");
    for k in 0..NUM_CLASSES {
        let _ = write!(out, "{k:>6}");
    }
    out.push('\n');
    let mut totals = [0usize; NUM_CLASSES];
    for shard in &data.shards {
        let counts = data.train.class_counts(shard.indices.iter().copied());
        let _ = write!(out, "{:>6} {:>6}", shard.client_id, shard.n_c());
        for (k, c) in counts.iter().enumerate() {
            totals[k] += c;
            let _ = write!(out, "{c:>6}");
        }
        out.push('\n');
    }
    let _ = write!(out, "{:>6} {:>6}", "all", data.train.len());
    for t in totals {
        let _ = write!(out, "{t:>6}");
    }
    out.push('\n');
    print!("{out}");
    println!("shard hash {}", data.shard_hash());
    Ok(())
}

fn report(dir: &Path) -> Result<(), ExperimentError> {
    let bundle = experiment::read_bundle(dir)?;
    let m = &bundle.manifest;
    println!("dataset      {}", m.dataset);
    println!("seed         {}", m.seed);
    println!("config hash  {}", m.config_hash);
    println!("shard hash   {}", m.shard_hash);
    println!("init hash    {}", m.init_params_hash);
    print!("{}", summary(&bundle));
    Ok(())
}

fn summary(bundle: &ResultsBundle) -> String {
    let mut out = format!(
        "\n{:<16} {:>9} {:>9} {:>9} {:>9} {:>9} {:>10} {:>10}\n",
        "environment", "train", "test", "precision", "recall", "f1", "build_s", "classify_s"
    );
    for r in &bundle.results {
        let rep = &r.report;
        let _ = writeln!(
            out,
            "{:<16} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>10.2} {:>10.3}",
            r.paradigm.title(),
            r.train_accuracy,
            rep.accuracy,
            rep.macro_precision,
            rep.macro_recall,
            rep.macro_f1,
            rep.build_time_s,
            rep.classification_time_s
        );
    }
    out
}
