//! Acceptance gate: one pass/fail line per criterion on stderr, then a single
//! assertion that all of them passed.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use fedtopo_core::dataset::{self, ClientShard, Dataset, DatasetName, IdxHeader, LabelSet, RawImageSet};
use fedtopo_core::experiment::{self, emit, DatasetFiles, ExperimentConfig, Prepared};
use fedtopo_core::federation::{fedavg, fedavg_grouped};
use fedtopo_core::metrics;
use fedtopo_core::nn::{self, default_arch, init_params, ParamSet};
use fedtopo_core::orchestrators::{run_afl, Federation, Paradigm, TopologyConfig};
use fedtopo_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist")
}

fn default_config() -> ExperimentConfig {
    let files = DatasetFiles::in_dir(&data_dir()).expect("bundled MNIST files");
    ExperimentConfig::with_files(DatasetName::Mnist, files)
}

fn random_batch<R: Rng>(rng: &mut R, n: usize) -> (Tensor<f64>, Vec<u8>) {
    let pixels = (0..n * 784).map(|_| rng.gen::<f64>()).collect();
    let labels = (0..n).map(|_| rng.gen_range(0..10u8)).collect();
    (Tensor::from_vec(&[n, 28, 28, 1], pixels).unwrap(), labels)
}

fn coord(p: &mut ParamSet<f64>, entry: usize, bias: bool, i: usize) -> &mut f64 {
    let e = &mut p.entries_mut()[entry];
    let t = if bias { &mut e.bias } else { &mut e.weight };
    &mut t.data_mut()[i]
}

// 1. Backprop against central differences in f64.
fn gradient_check() -> Outcome {
    const STEP: f64 = 1e-5;
    const REL_TOL: f64 = 1e-3;
    // both sides this small means a dead unit; their difference is rounding noise
    const ABS_FLOOR: f64 = 1e-8;
    let start = Instant::now();
    let arch = default_arch();
    let specs = arch.param_specs();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut checked, mut passed) = (0usize, 0usize);
    for b in 0..20 {
        let params: ParamSet<f64> = init_params(&arch, 1000 + b);
        let (batch, labels) = random_batch(&mut rng, 4);
        let (_, grads) = nn::loss_and_grad(&arch, &params, &batch, &labels).map_err(|e| e.to_string())?;
        let acts = nn::activations(&arch, &params, &batch).map_err(|e| e.to_string())?;
        let mut probe = params.clone();
        for (e, spec) in specs.iter().enumerate() {
            let input = &acts[spec.layer];
            let loss = |p: &ParamSet<f64>| nn::mean_loss(&nn::forward_from(&arch, p, spec.layer, input).unwrap(), &labels);
            for bias in [false, true] {
                let g = &grads.entries()[e];
                let analytic_all = if bias { g.bias.data() } else { g.weight.data() };
                for (i, &analytic) in analytic_all.iter().enumerate() {
                    let orig = *coord(&mut probe, e, bias, i);
                    *coord(&mut probe, e, bias, i) = orig + STEP;
                    let up = loss(&probe);
                    *coord(&mut probe, e, bias, i) = orig - STEP;
                    let down = loss(&probe);
                    *coord(&mut probe, e, bias, i) = orig;
                    let numeric = (up - down) / (2.0 * STEP);
                    let diff = (analytic - numeric).abs();
                    checked += 1;
                    if diff <= REL_TOL * analytic.abs().max(numeric.abs()) || diff <= ABS_FLOOR {
                        passed += 1;
                    }
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let share = passed as f64 / checked as f64;
    let detail = format!("{passed}/{checked} coordinates within 1e-3 ({:.3}%), {secs:.1}s", share * 100.0);
    if share >= 0.99 && secs < 60.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_f64_params(arch: &nn::ModelArch, rng: &mut ChaCha8Rng) -> ParamSet<f64> {
    let mut p: ParamSet<f64> = init_params(arch, rng.gen());
    for t in p.tensors_mut() {
        for v in t.data_mut() {
            *v += rng.gen_range(-1.0..1.0);
        }
    }
    p
}

// 2. FedAvg against a scalar loop, and grouped against flat aggregation.
fn fedavg_oracle() -> Outcome {
    let arch = default_arch();
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut worst_flat = 0.0f64;
    for _ in 0..100 {
        let k = rng.gen_range(1..=8);
        let sets: Vec<ParamSet<f64>> = (0..k).map(|_| random_f64_params(&arch, &mut rng)).collect();
        let counts: Vec<usize> = (0..k).map(|_| rng.gen_range(1..=5000)).collect();
        let refs: Vec<&ParamSet<f64>> = sets.iter().collect();
        let avg = fedavg(&refs, &counts).map_err(|e| e.to_string())?;
        let values: Vec<Vec<f64>> = sets.iter().map(|s| s.values().collect()).collect();
        let total: f64 = counts.iter().map(|&n| n as f64).sum();
        for (j, got) in avg.values().enumerate() {
            let mut want = 0.0;
            for c in 0..k {
                want += counts[c] as f64 * values[c][j];
            }
            want /= total;
            worst_flat = worst_flat.max((got - want).abs());
        }
    }
    let mut worst_grouped = 0.0f64;
    for _ in 0..50 {
        let k = rng.gen_range(2..=10);
        let sets: Vec<ParamSet<f64>> = (0..k).map(|_| random_f64_params(&arch, &mut rng)).collect();
        let counts: Vec<usize> = (0..k).map(|_| rng.gen_range(1..=5000)).collect();
        let num_groups = rng.gen_range(1..=k);
        let groups: Vec<usize> = (0..k).map(|_| rng.gen_range(0..num_groups)).collect();
        let updates: Vec<(usize, &ParamSet<f64>, usize)> = (0..k).map(|c| (c, &sets[c], counts[c])).collect();
        let grouped = fedavg_grouped(&updates, &groups).map_err(|e| e.to_string())?;
        let refs: Vec<&ParamSet<f64>> = sets.iter().collect();
        let flat = fedavg(&refs, &counts).map_err(|e| e.to_string())?;
        for (a, b) in grouped.values().zip(flat.values()) {
            worst_grouped = worst_grouped.max((a - b).abs());
        }
    }
    let detail = format!("max |flat - loop| {worst_flat:.2e} (tol 1e-9), max |grouped - flat| {worst_grouped:.2e} (tol 1e-6)");
    if worst_flat <= 1e-9 && worst_grouped <= 1e-6 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_dataset(rng: &mut ChaCha8Rng, n: usize) -> Dataset {
    Dataset {
        name: DatasetName::Mnist,
        images: Tensor::from_vec(&[n, 28, 28, 1], (0..n * 784).map(|_| rng.gen::<f32>()).collect()).unwrap(),
        labels: (0..n).map(|_| rng.gen_range(0..10u8)).collect(),
    }
}

// 3. One AFL round of full-batch local steps equals one pooled SGD step.
fn fedsgd_equivalence() -> Outcome {
    let arch = default_arch();
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut worst = 0.0f64;
    for trial in 0..10 {
        let clients = rng.gen_range(2..=5);
        let per = rng.gen_range(2..=8);
        let data = random_dataset(&mut rng, clients * per);
        let shards: Vec<ClientShard> = (0..clients)
            .map(|c| ClientShard {
                client_id: c,
                indices: (c * per..(c + 1) * per).collect(),
            })
            .collect();
        let init: ParamSet = init_params(&arch, 300 + trial);
        let lr = 0.05;
        let config = TopologyConfig {
            num_clients: clients,
            client_fraction: 1.0,
            rounds: 1,
            local_epochs: 1,
            lr,
            batch_size: per,
            seed: trial,
            ..TopologyConfig::new(Paradigm::Afl)
        };
        let fed = Federation {
            arch: &arch,
            train: &data,
            shards: &shards,
            test: &data,
            init: &init,
        };
        let afl = run_afl(&config, &fed).map_err(|e| e.to_string())?;
        let (_, grads) = nn::loss_and_grad(&arch, &init, &data.images, &data.labels).map_err(|e| e.to_string())?;
        let central = nn::sgd_step(&init, &grads, lr).map_err(|e| e.to_string())?;
        for (a, b) in afl.global.params.values().zip(central.values()) {
            worst = worst.max(f64::from((a - b).abs()));
        }
    }
    let detail = format!("max coordinate gap {worst:.2e} over 10 trials (tol 1e-5)");
    if worst <= 1e-5 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// 4. Metrics against direct counting over the raw vectors.
fn metrics_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    for case in 0..1000 {
        let n = rng.gen_range(1..=300);
        // restrict the alphabet sometimes so that some classes are absent
        let classes = if case % 3 == 0 { rng.gen_range(1..=10) } else { 10 };
        let labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..classes)).collect();
        let preds: Vec<u8> = (0..n)
            .map(|i| if rng.gen_bool(0.6) { labels[i] } else { rng.gen_range(0..10) })
            .collect();

        let m = metrics::confusion(&preds, &labels).map_err(|e| e.to_string())?;
        let correct = preds.iter().zip(&labels).filter(|(p, t)| p == t).count();
        let want_acc = correct as f64 / n as f64;
        let mut want_p = [0.0; 10];
        let mut want_r = [None; 10];
        let mut want_f = [None; 10];
        for k in 0..10u8 {
            let tp = preds.iter().zip(&labels).filter(|&(&p, &t)| p == k && t == k).count();
            let predicted = preds.iter().filter(|&&p| p == k).count();
            let actual = labels.iter().filter(|&&t| t == k).count();
            let p = if predicted == 0 { 0.0 } else { tp as f64 / predicted as f64 };
            want_p[k as usize] = p;
            if actual > 0 {
                let r = tp as f64 / actual as f64;
                want_r[k as usize] = Some(r);
                want_f[k as usize] = Some(if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) });
            }
        }
        let mean = |xs: &[Option<f64>]| {
            let d: Vec<f64> = xs.iter().flatten().copied().collect();
            d.iter().sum::<f64>() / d.len() as f64
        };
        let precision = metrics::precision(&m);
        let recall = metrics::recall(&m);
        let f1 = metrics::f1(&m);
        let ok = metrics::accuracy(&m).map_err(|e| e.to_string())? == want_acc
            && precision.per_class == want_p
            && precision.macro_avg == want_p.iter().sum::<f64>() / 10.0
            && recall.per_class == want_r
            && recall.macro_avg == mean(&want_r)
            && f1.per_class == want_f
            && f1.macro_avg == mean(&want_f);
        if !ok {
            return Err(format!("mismatch on case {case} (n = {n})"));
        }
    }
    Ok("1000 random vectors match exactly".into())
}

// 5. Official header bytes, synthetic round trips and the bundled files.
fn idx_golden() -> Outcome {
    // `xxd -l 16 train-images-idx3-ubyte` of the official distribution
    let header = [0x00, 0x00, 0x08, 0x03, 0x00, 0x00, 0xea, 0x60, 0x00, 0x00, 0x00, 0x1c, 0x00, 0x00, 0x00, 0x1c];
    let h = IdxHeader::parse(&header).map_err(|e| e.to_string())?;
    if h.magic != 0x0000_0803 || h.dims != [60000, 28, 28] {
        return Err(format!("official header parsed as {h:?}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    for _ in 0..50 {
        let count = rng.gen_range(0..5);
        let set = RawImageSet {
            count,
            rows: 28,
            cols: 28,
            pixels: (0..count * 784).map(|_| rng.gen()).collect(),
        };
        let bytes = dataset::write_idx_images(&set);
        if dataset::parse_idx_images(&bytes).map_err(|e| e.to_string())? != set {
            return Err("image round trip changed the data".into());
        }
        let labels = LabelSet {
            count,
            labels: (0..count).map(|_| rng.gen_range(0..10)).collect(),
        };
        let bytes = dataset::write_idx_labels(&labels);
        if dataset::parse_idx_labels(&bytes).map_err(|e| e.to_string())? != labels {
            return Err("label round trip changed the data".into());
        }
    }
    let files = DatasetFiles::in_dir(&data_dir()).ok_or("bundled MNIST files missing")?;
    let train = dataset::load_idx_pair(&files.train_images, &files.train_labels, DatasetName::Mnist).map_err(|e| e.to_string())?;
    let test = dataset::load_idx_pair(&files.test_images, &files.test_labels, DatasetName::Mnist).map_err(|e| e.to_string())?;
    Ok(format!(
        "header 0x803/60000/28/28, 50 round trips, bundled files {} + {} samples",
        train.len(),
        test.len()
    ))
}

fn run_default(tag: &str) -> Result<(experiment::ResultsBundle, f64, PathBuf), String> {
    let start = Instant::now();
    let bundle = experiment::run_experiment(&default_config()).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let dir = std::env::temp_dir().join(format!("fedtopo-acceptance-{}-{tag}", std::process::id()));
    emit::emit_all(&bundle, &dir).map_err(|e| e.to_string())?;
    Ok((bundle, secs, dir))
}

// 6. Desk-scale default run.
fn desk_scale(bundle: &experiment::ResultsBundle, secs: f64) -> Outcome {
    let acc = |p| bundle.get(p).map(|r| r.report.accuracy).unwrap_or(f64::NAN);
    let (hfl, afl, cfl) = (acc(Paradigm::Hfl), acc(Paradigm::Afl), acc(Paradigm::Cfl));
    let order = if afl >= hfl { "AFL >= HFL" } else { "AFL < HFL" };
    let detail = format!(
        "test acc HFL {hfl:.4} AFL {afl:.4} CFL {cfl:.4}; {order} (reported only); {secs:.0}s total (budget 600s)"
    );
    if cfl >= 0.85 && cfl >= hfl && secs < 600.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn drop_timing_columns(csv: &str) -> String {
    csv.lines()
        .map(|l| l.split(',').take(4).collect::<Vec<_>>().join(","))
        .collect::<Vec<_>>()
        .join("\n")
}

// 7. Same config twice gives the same CSV bytes.
fn determinism(a: &Path, b: &Path) -> Outcome {
    let read = |dir: &Path, f: &str| std::fs::read(dir.join(f)).map_err(|e| format!("{f}: {e}"));
    let mut exact = vec!["tables/results_metrics.csv".to_string(), "curves/curves.csv".to_string()];
    for p in Paradigm::ALL {
        exact.push(format!("confusion/{}.csv", p.key()));
    }
    for f in &exact {
        if read(a, f)? != read(b, f)? {
            return Err(format!("{f} differs"));
        }
    }
    let t = "tables/results_accuracy_time.csv";
    let (x, y) = (String::from_utf8_lossy(&read(a, t)?).into_owned(), String::from_utf8_lossy(&read(b, t)?).into_owned());
    if drop_timing_columns(&x) != drop_timing_columns(&y) {
        return Err(format!("{t} accuracy columns differ"));
    }
    Ok(format!(
        "{} CSVs byte-identical; accuracy/time table identical outside its two wall-clock columns",
        exact.len()
    ))
}

// 8. Zero learning rate leaves every paradigm at the initial model.
fn zero_lr() -> Outcome {
    let mut config = default_config();
    config.lr = 0.0;
    config.rounds = 3;
    config.train_cap = 600;
    config.test_cap = 200;
    let data: Prepared = experiment::prepare(&config).map_err(|e| e.to_string())?;
    let arch = default_arch();
    let init: ParamSet = init_params(&arch, config.seed);
    for p in Paradigm::ALL {
        let (result, params) = experiment::run_paradigm(&config, p, &arch, &data, &init).map_err(|e| e.to_string())?;
        let same = params.values().zip(init.values()).all(|(a, b)| a.to_bits() == b.to_bits());
        if !same {
            return Err(format!("{p} moved the parameters"));
        }
        let first = result.rounds[0].test_accuracy;
        if result.rounds.iter().any(|r| r.test_accuracy != first) {
            return Err(format!("{p} test accuracy changed across rounds"));
        }
    }
    Ok("HFL, AFL and CFL return the initial parameters bitwise; test accuracy flat over 3 rounds".into())
}

fn line(text: &str) {
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "{text}");
}

#[test]
fn acceptance() {
    let mut results: Vec<(&str, Outcome)> = vec![
        ("1 gradient check", gradient_check()),
        ("2 fedavg oracle", fedavg_oracle()),
        ("3 fedsgd equivalence", fedsgd_equivalence()),
        ("4 metrics oracle", metrics_oracle()),
        ("5 idx golden", idx_golden()),
    ];
    let runs = run_default("a").and_then(|a| run_default("b").map(|b| (a, b)));
    match &runs {
        Ok(((bundle, secs, dir_a), (_, _, dir_b))) => {
            results.push(("6 desk-scale training", desk_scale(bundle, *secs)));
            results.push(("7 determinism", determinism(dir_a, dir_b)));
        }
        Err(e) => {
            results.push(("6 desk-scale training", Err(e.clone())));
            results.push(("7 determinism", Err(e.clone())));
        }
    }
    results.push(("8 zero learning rate", zero_lr()));
    if let Ok(((_, _, a), (_, _, b))) = &runs {
        let _ = std::fs::remove_dir_all(a);
        let _ = std::fs::remove_dir_all(b);
    }

    line("");
    for (name, outcome) in &results {
        match outcome {
            Ok(d) => line(&format!("PASS  criterion {name}: {d}")),
            Err(d) => line(&format!("FAIL  criterion {name}: {d}")),
        }
    }
    let failed: Vec<&str> = results.iter().filter(|r| r.1.is_err()).map(|r| r.0).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
