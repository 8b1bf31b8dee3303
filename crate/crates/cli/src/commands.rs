//! The four subcommands: gen, train, analyze, sweep.
//!
//! stdout carries only machine-parsable `key=value` result lines; human
//! diagnostics go to stderr. Exit codes: 0 success, 1 partial sweep
//! failure, 2 usage/config error, 3 numerical abort.

use crate::args::Flags;
use crate::manifest::{hash_file, RunManifest};
use mme_core::analysis::{covariance_spectrum, divergence_report, entropy_curve_csv};
use mme_core::data::{
    generate, read_dataset, write_dataset, Shift, ShiftTaskSpec, SsdaDataset, TaskKind,
};
use mme_core::model::{HeadKind, ModelParams};
use mme_core::trainer::{train, Method, MetricsRecord, TrainConfig, TrainError, TrainOutcome};
use serde::Serialize;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub type CmdResult = Result<(), (i32, String)>;

fn usage(message: impl Into<String>) -> (i32, String) {
    (2, message.into())
}

fn io_err(context: &str, e: impl std::fmt::Display) -> (i32, String) {
    (2, format!("{context}: {e}"))
}

// ── gen ──────────────────────────────────────────────────────────────

pub fn cmd_gen(args: &[String]) -> CmdResult {
    let flags = Flags::parse(args, &[]).map_err(usage)?;
    flags
        .check_known(&[
            "task", "k", "dim", "angle", "shift", "noise", "n-source", "n-target", "shots", "seed",
            "out",
        ])
        .map_err(usage)?;

    let task = match flags.get("task").unwrap_or("gauss-shift") {
        "gauss-shift" => TaskKind::GaussShift,
        "two-moons-shift" => TaskKind::TwoMoonsShift,
        other => return Err(usage(format!("unknown task {other:?}"))),
    };
    let defaults = ShiftTaskSpec::default_gauss(0);
    let spec = ShiftTaskSpec {
        task,
        num_classes: flags
            .parse_or(
                "k",
                if task == TaskKind::TwoMoonsShift {
                    2
                } else {
                    defaults.num_classes
                },
            )
            .map_err(usage)?,
        dim: flags.parse_or("dim", defaults.dim).map_err(usage)?,
        n_source_per_class: flags
            .parse_or("n-source", defaults.n_source_per_class)
            .map_err(usage)?,
        n_target_per_class: flags
            .parse_or("n-target", defaults.n_target_per_class)
            .map_err(usage)?,
        rotation_angle: flags
            .parse_or("angle", defaults.rotation_angle)
            .map_err(usage)?,
        shift: Shift::Magnitude(
            flags
                .parse_or(
                    "shift",
                    match defaults.shift {
                        Shift::Magnitude(m) => m,
                        _ => 1.5,
                    },
                )
                .map_err(usage)?,
        ),
        noise_sigma: flags
            .parse_or("noise", defaults.noise_sigma)
            .map_err(usage)?,
        shots: flags.parse_or("shots", defaults.shots).map_err(usage)?,
        seed: flags.parse_or("seed", 0).map_err(usage)?,
    };

    let out = PathBuf::from(flags.require("out").map_err(usage)?);
    fs::create_dir_all(&out).map_err(|e| io_err("creating --out", e))?;

    let dataset = generate(&spec).map_err(|e| (2, e.to_string()))?;
    let data_path = out.join("dataset.csv");
    write_dataset(&dataset, &data_path).map_err(|e| (2, e.to_string()))?;
    let spec_json = serde_json::to_string_pretty(&spec).expect("spec serializes");
    fs::write(out.join("spec.json"), spec_json).map_err(|e| io_err("writing spec.json", e))?;

    println!("dataset={}", data_path.display());
    Ok(())
}

// ── train ────────────────────────────────────────────────────────────

#[derive(Debug, Serialize)]
struct Summary<'a> {
    config: &'a TrainConfig,
    best_val: f64,
    test_at_best: f64,
    iters_run: usize,
    wall_time_ms: u128,
}

pub struct TrainedRun {
    pub run_dir: PathBuf,
    pub outcome: TrainOutcome,
}

const TRAIN_FLAGS: &[&str] = &[
    "data",
    "method",
    "head",
    "lambda",
    "temp",
    "shots",
    "seed",
    "out",
    "lr0",
    "momentum",
    "batch-size",
    "max-iters",
    "eval-every",
    "patience",
    "anneal-alpha",
    "anneal-beta",
    "feat-dim",
    "hidden",
    "domain-hidden",
    "normalize-weights",
    "head-lr-scale",
];

pub fn train_config_from_flags(flags: &Flags) -> Result<TrainConfig, (i32, String)> {
    let method = match flags.get("method") {
        None => Method::Mme,
        Some(raw) => Method::parse(raw).ok_or_else(|| {
            usage(format!(
                "unknown method {raw:?} (expected s+t, ent, dann, or mme)"
            ))
        })?,
    };
    let head = match flags.get("head").unwrap_or("cosine") {
        "cosine" => HeadKind::Cosine,
        "linear" => HeadKind::Linear,
        other => return Err(usage(format!("unknown head {other:?}"))),
    };
    let mut config = TrainConfig::new(method, flags.parse_or("seed", 0).map_err(usage)?);
    config.head = head;
    config.lambda = flags.parse_or("lambda", config.lambda).map_err(usage)?;
    config.temperature = flags.parse_or("temp", config.temperature).map_err(usage)?;
    config.lr0 = flags.parse_or("lr0", config.lr0).map_err(usage)?;
    config.head_lr_scale = flags
        .parse_or("head-lr-scale", config.head_lr_scale)
        .map_err(usage)?;
    config.momentum = flags.parse_or("momentum", config.momentum).map_err(usage)?;
    config.batch_size = flags
        .parse_or("batch-size", config.batch_size)
        .map_err(usage)?;
    config.max_iters = flags
        .parse_or("max-iters", config.max_iters)
        .map_err(usage)?;
    config.eval_every = flags
        .parse_or("eval-every", config.eval_every)
        .map_err(usage)?;
    config.patience = flags.parse_or("patience", config.patience).map_err(usage)?;
    config.anneal_alpha = flags
        .parse_or("anneal-alpha", config.anneal_alpha)
        .map_err(usage)?;
    config.anneal_beta = flags
        .parse_or("anneal-beta", config.anneal_beta)
        .map_err(usage)?;
    config.feat_dim = flags.parse_or("feat-dim", config.feat_dim).map_err(usage)?;
    config.domain_hidden_dim = flags
        .parse_or("domain-hidden", config.domain_hidden_dim)
        .map_err(usage)?;
    config.normalize_weights = flags.switch("normalize-weights");
    if let Some(hidden) = flags.get("hidden") {
        config.hidden_dims = hidden
            .split(',')
            .map(|part| {
                part.trim()
                    .parse()
                    .map_err(|_| usage(format!("bad --hidden {hidden:?}")))
            })
            .collect::<Result<Vec<usize>, _>>()?;
    }
    Ok(config)
}

fn load_dataset(path: &Path) -> Result<SsdaDataset, (i32, String)> {
    if !path.exists() {
        return Err(usage(format!("dataset {} does not exist", path.display())));
    }
    read_dataset(path).map_err(|e| (2, e.to_string()))
}

/// Run one training job and write its artifacts. Shared by train and sweep.
pub fn run_training(
    data_path: &Path,
    out_root: &Path,
    config: &TrainConfig,
    shots_check: Option<usize>,
) -> Result<TrainedRun, (i32, String)> {
    let dataset = load_dataset(data_path)?;
    if let Some(shots) = shots_check {
        if dataset.shots() != shots {
            return Err(usage(format!(
                "--shots {shots} does not match the dataset ({} per class)",
                dataset.shots()
            )));
        }
    }
    let run_id = format!(
        "{}-{}-s{}-seed{}",
        config.method,
        config.head,
        dataset.shots(),
        config.seed
    );
    let run_dir = out_root.join(&run_id);
    fs::create_dir_all(&run_dir).map_err(|e| io_err("creating run dir", e))?;

    let started = Instant::now();
    let outcome = match train(&dataset, config) {
        Ok(outcome) => outcome,
        Err(TrainError::NonFinite { iter, records }) => {
            // Leave the partial trajectory behind for postmortems.
            let _ = write_metrics(&run_dir, &records);
            return Err((3, format!("non-finite loss at iteration {iter}; aborting")));
        }
        Err(e) => return Err((2, e.to_string())),
    };
    let wall_time_ms = started.elapsed().as_millis();

    let metrics_path = write_metrics(&run_dir, &outcome.records)
        .map_err(|e| io_err("writing metrics.jsonl", e))?;
    let summary = Summary {
        config,
        best_val: outcome.best_val,
        test_at_best: outcome.test_at_best,
        iters_run: outcome.iters_run,
        wall_time_ms,
    };
    let summary_path = run_dir.join("summary.json");
    fs::write(
        &summary_path,
        serde_json::to_string_pretty(&summary).expect("summary serializes"),
    )
    .map_err(|e| io_err("writing summary.json", e))?;
    let checkpoint_path = run_dir.join("model.json");
    fs::write(&checkpoint_path, outcome.model.to_json())
        .map_err(|e| io_err("writing model.json", e))?;

    let manifest = RunManifest {
        run_id,
        config: config.clone(),
        dataset_path: data_path.display().to_string(),
        dataset_hash: hash_file(data_path).map_err(|e| io_err("hashing dataset", e))?,
        metrics_path: metrics_path.display().to_string(),
        summary_path: summary_path.display().to_string(),
        checkpoint_path: checkpoint_path.display().to_string(),
    };
    fs::write(
        run_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )
    .map_err(|e| io_err("writing manifest.json", e))?;

    Ok(TrainedRun { run_dir, outcome })
}

fn write_metrics(run_dir: &Path, records: &[MetricsRecord]) -> std::io::Result<PathBuf> {
    let path = run_dir.join("metrics.jsonl");
    let mut out = String::new();
    for record in records {
        out.push_str(&serde_json::to_string(record).expect("record serializes"));
        out.push('\n');
    }
    fs::write(&path, out)?;
    Ok(path)
}

pub fn cmd_train(args: &[String]) -> CmdResult {
    let flags = Flags::parse(args, &["normalize-weights"]).map_err(usage)?;
    flags.check_known(TRAIN_FLAGS).map_err(usage)?;
    let config = train_config_from_flags(&flags)?;
    let data_path = PathBuf::from(flags.require("data").map_err(usage)?);
    let out_root = PathBuf::from(flags.require("out").map_err(usage)?);
    let shots_check = match flags.get("shots") {
        None => None,
        Some(raw) => Some(
            raw.parse()
                .map_err(|_| usage(format!("bad --shots {raw:?}")))?,
        ),
    };
    let run = run_training(&data_path, &out_root, &config, shots_check)?;
    println!("run_dir={}", run.run_dir.display());
    println!("test_acc={}", run.outcome.test_at_best);
    Ok(())
}

// ── analyze ──────────────────────────────────────────────────────────

fn load_checkpoint(path: &Path) -> Result<ModelParams, (i32, String)> {
    if !path.exists() {
        return Err(usage(format!(
            "checkpoint {} does not exist",
            path.display()
        )));
    }
    let raw = fs::read_to_string(path).map_err(|e| io_err("reading checkpoint", e))?;
    ModelParams::from_json(&raw).map_err(|e| (2, format!("parsing checkpoint: {e}")))
}

fn rows(v: &[f64], dim: usize) -> Vec<Vec<f64>> {
    v.chunks(dim).map(|c| c.to_vec()).collect()
}

pub fn cmd_analyze(args: &[String]) -> CmdResult {
    let flags = Flags::parse(args, &[]).map_err(usage)?;
    flags
        .check_known(&["what", "run", "checkpoint", "data", "out", "seed"])
        .map_err(usage)?;
    let what = flags.require("what").map_err(usage)?;

    match what {
        "entropy" => {
            let run_dir = PathBuf::from(flags.require("run").map_err(usage)?);
            let metrics_path = run_dir.join("metrics.jsonl");
            if !metrics_path.exists() {
                return Err(usage(format!("{} does not exist", metrics_path.display())));
            }
            let raw =
                fs::read_to_string(&metrics_path).map_err(|e| io_err("reading metrics", e))?;
            let records: Vec<MetricsRecord> = raw
                .lines()
                .filter(|l| !l.is_empty())
                .map(serde_json::from_str)
                .collect::<Result<_, _>>()
                .map_err(|e| (2, format!("parsing metrics.jsonl: {e}")))?;
            let out_dir = flags.get("out").map(PathBuf::from).unwrap_or(run_dir);
            fs::create_dir_all(&out_dir).map_err(|e| io_err("creating --out", e))?;
            let path = out_dir.join("entropy_curve.csv");
            fs::write(&path, entropy_curve_csv(&records))
                .map_err(|e| io_err("writing curve", e))?;
            println!("{}", path.display());
            Ok(())
        }
        "eig" | "adist" | "hdiv" => {
            let checkpoint_path = PathBuf::from(flags.require("checkpoint").map_err(usage)?);
            let model = load_checkpoint(&checkpoint_path)?;
            let data_path = PathBuf::from(flags.require("data").map_err(usage)?);
            let dataset = load_dataset(&data_path)?;
            let out_dir = flags
                .get("out")
                .map(PathBuf::from)
                .or_else(|| checkpoint_path.parent().map(Path::to_path_buf))
                .unwrap_or_else(|| PathBuf::from("."));
            fs::create_dir_all(&out_dir).map_err(|e| io_err("creating --out", e))?;

            let n_unlabeled = dataset.target_unlabeled.len();
            let flat_unlabeled: Vec<f64> =
                dataset.target_unlabeled.iter().flatten().copied().collect();
            let target_feats = model
                .extract_features(&flat_unlabeled, n_unlabeled)
                .map_err(|e| (2, e.to_string()))?;

            if what == "eig" {
                let report = covariance_spectrum(&rows(&target_feats, model.dims.feat_dim))
                    .map_err(|e| (2, e.to_string()))?;
                let path = out_dir.join("spectrum.json");
                fs::write(
                    &path,
                    serde_json::to_string_pretty(&report).expect("report serializes"),
                )
                .map_err(|e| io_err("writing spectrum", e))?;
                println!("{}", path.display());
                return Ok(());
            }

            let n_source = dataset.source_labeled.len();
            let flat_source: Vec<f64> = dataset
                .source_labeled
                .iter()
                .flat_map(|e| e.x.iter().copied())
                .collect();
            let source_feats = model
                .extract_features(&flat_source, n_source)
                .map_err(|e| (2, e.to_string()))?;
            let source_probs = model
                .predict_proba(&flat_source, n_source)
                .map_err(|e| (2, e.to_string()))?;
            let target_probs = model
                .predict_proba(&flat_unlabeled, n_unlabeled)
                .map_err(|e| (2, e.to_string()))?;
            let seed = flags.parse_or("seed", 0).map_err(usage)?;
            let report = divergence_report(
                &source_probs,
                &target_probs,
                dataset.num_classes,
                &rows(&source_feats, model.dims.feat_dim),
                &rows(&target_feats, model.dims.feat_dim),
                seed,
            )
            .map_err(|e| (2, e.to_string()))?;
            let path = out_dir.join(format!("{what}.json"));
            fs::write(
                &path,
                serde_json::to_string_pretty(&report).expect("report serializes"),
            )
            .map_err(|e| io_err("writing report", e))?;
            println!("{}", path.display());
            Ok(())
        }
        other => Err(usage(format!("unknown --what {other:?}"))),
    }
}

// ── sweep ────────────────────────────────────────────────────────────

fn sweep_threads() -> usize {
    if let Ok(raw) = std::env::var("MME_LAB_THREADS") {
        if let Ok(n) = raw.parse::<usize>() {
            return n.max(1);
        }
    }
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
}

pub fn cmd_sweep(args: &[String]) -> CmdResult {
    let flags = Flags::parse(args, &["normalize-weights"]).map_err(usage)?;
    let mut known: Vec<&str> = TRAIN_FLAGS.to_vec();
    known.extend_from_slice(&["param", "values", "seeds"]);
    flags.check_known(&known).map_err(usage)?;

    let param = flags.get("param").unwrap_or("lambda").to_string();
    if !["lambda", "temp", "lr0"].contains(&param.as_str()) {
        return Err(usage(format!("unsupported sweep parameter {param:?}")));
    }
    let values_raw = flags.require("values").map_err(usage)?;
    let values: Vec<f64> = values_raw
        .split(',')
        .map(|part| {
            part.trim()
                .parse()
                .map_err(|_| usage(format!("bad --values {values_raw:?}")))
        })
        .collect::<Result<_, _>>()?;
    if values.is_empty() {
        return Err(usage("--values must not be empty"));
    }
    let num_seeds: u64 = flags.parse_or("seeds", 1u64).map_err(usage)?;
    if num_seeds == 0 {
        return Err(usage("--seeds must be positive"));
    }
    let base_config = train_config_from_flags(&flags)?;
    let data_path = PathBuf::from(flags.require("data").map_err(usage)?);
    let out_root = PathBuf::from(flags.require("out").map_err(usage)?);
    fs::create_dir_all(&out_root).map_err(|e| io_err("creating --out", e))?;

    struct Job {
        value: f64,
        seed: u64,
        config: TrainConfig,
        out_dir: PathBuf,
    }
    let mut jobs = Vec::new();
    for &value in &values {
        for seed in 0..num_seeds {
            let mut config = base_config.clone();
            config.seed = seed;
            match param.as_str() {
                "lambda" => config.lambda = value,
                "temp" => config.temperature = value,
                _ => config.lr0 = value,
            }
            jobs.push(Job {
                value,
                seed,
                config,
                out_dir: out_root.join(format!("{param}-{value}")),
            });
        }
    }

    let results: Vec<std::sync::Mutex<Option<Result<(f64, f64), String>>>> =
        jobs.iter().map(|_| std::sync::Mutex::new(None)).collect();
    let next = std::sync::atomic::AtomicUsize::new(0);
    let workers = sweep_threads().min(jobs.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if idx >= jobs.len() {
                    break;
                }
                let job = &jobs[idx];
                let outcome = run_training(&data_path, &job.out_dir, &job.config, None)
                    .map(|run| (run.outcome.best_val, run.outcome.test_at_best))
                    .map_err(|(_, message)| message);
                *results[idx].lock().unwrap() = Some(outcome);
            });
        }
    });

    let mut csv = format!("{param},seed,val_acc,test_acc\n");
    let mut any_failed = false;
    for (job, slot) in jobs.iter().zip(&results) {
        let outcome = slot.lock().unwrap().take().expect("every job ran");
        match outcome {
            Ok((val, test)) => {
                csv.push_str(&format!("{},{},{},{}\n", job.value, job.seed, val, test));
            }
            Err(message) => {
                any_failed = true;
                eprintln!(
                    "sweep child ({param}={}, seed={}) failed: {message}",
                    job.value, job.seed
                );
                csv.push_str(&format!("{},{},nan,nan\n", job.value, job.seed));
            }
        }
    }
    let csv_path = out_root.join("sweep.csv");
    fs::write(&csv_path, csv).map_err(|e| io_err("writing sweep.csv", e))?;
    println!("sweep={}", csv_path.display());
    if any_failed {
        Err((1, "one or more sweep children failed".to_string()))
    } else {
        Ok(())
    }
}
