//! Subcommand drivers behind the `psu` binary. Each writes `report.json` and
//! `metrics.csv` (and `model.bin` for training) into the output directory;
//! every artifact carries the seed and config hash.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use crate::bench::{sparsity_report, time_forward, BenchScenario, BuildInfo, RunReport, SparsityReport};
use crate::config::RunConfig;
use crate::error::{PsuError, Result};
use crate::kernel::Real;
use crate::net::{
    generate_dataset, ingest_spike_csv, load_model, save_model, train, EpochMetrics, Network,
    SyntheticDataset,
};
use crate::verify::{run_suite, VerifyOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Run the kernel and gradient self-checks.
    Verify,
    /// Train a network and save `model.bin`.
    Train,
    /// Time parallel kernels against step-serial LIF.
    Bench,
    /// Per-layer firing rates of a saved model.
    Stats,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Self::Verify => "verify",
            Self::Train => "train",
            Self::Bench => "bench",
            Self::Stats => "stats",
        }
    }
}

#[derive(Clone, Debug, Parser)]
#[command(name = "psu", version, about = "Parallel spiking unit kernels, training and benchmarks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory, created if absent.
    #[arg(long, global = true, default_value = "psu-out")]
    pub out: PathBuf,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[arg(long, global = true, value_parser = ["32", "64"])]
    pub precision: Option<String>,
    /// `key=value` or `section.key=value`; applied after everything else.
    #[arg(long = "override", global = true, value_name = "K=V")]
    pub overrides: Vec<String>,
}

impl Cli {
    /// File, then flags, then overrides.
    pub fn resolve_config(&self) -> Result<RunConfig> {
        let mut all = Vec::new();
        if let Some(s) = self.seed {
            all.push(format!("run.seed={s}"));
        }
        if let Some(w) = self.workers {
            all.push(format!("run.workers={w}"));
        }
        if let Some(p) = &self.precision {
            all.push(format!("run.precision={p}"));
        }
        all.extend(self.overrides.iter().cloned());
        RunConfig::load(self.config.as_deref(), &all)
    }
}

/// What a successful (non-erroring) run produced.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub passed: bool,
    pub summary: Vec<String>,
    pub out_dir: PathBuf,
}

pub fn exit_code(result: &Result<Outcome>) -> i32 {
    match result {
        Ok(o) if o.passed => EXIT_OK,
        Ok(_) => EXIT_CHECK_FAILED,
        Err(e) => error_exit_code(e),
    }
}

pub fn error_exit_code(err: &PsuError) -> i32 {
    match err {
        PsuError::Io { .. } | PsuError::Parse { .. } | PsuError::Format { .. } => EXIT_IO,
        PsuError::Divergence { .. } => EXIT_CHECK_FAILED,
        PsuError::Domain(_)
        | PsuError::Shape(_)
        | PsuError::NotCausal { .. }
        | PsuError::InvalidValue(_)
        | PsuError::Unsupported(_)
        | PsuError::Config(_) => EXIT_CONFIG,
    }
}

pub fn run(cli: &Cli) -> Result<Outcome> {
    let cfg = cli.resolve_config()?;
    execute(cli.command, &cfg, &cli.out)
}

pub fn execute(command: Command, cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    fs::create_dir_all(out).map_err(|e| PsuError::io(out, e))?;
    match command {
        Command::Verify => run_verify(cfg, out),
        Command::Train => match cfg.run.precision {
            64 => run_train::<f64>(cfg, out),
            _ => run_train::<f32>(cfg, out),
        },
        Command::Bench => match cfg.run.precision {
            64 => run_bench::<f64>(cfg, out),
            _ => run_bench::<f32>(cfg, out),
        },
        Command::Stats => match cfg.run.precision {
            64 => run_stats::<f64>(cfg, out),
            _ => run_stats::<f32>(cfg, out),
        },
    }
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| PsuError::io(path, e))
}

fn write_report(out: &Path, command: Command, cfg: &RunConfig, body: impl Serialize) -> Result<()> {
    let doc = json!({
        "command": command.name(),
        "seed": cfg.run.seed,
        "config_hash": cfg.hash_hex(),
        "config": cfg,
        "result": body,
    });
    let text = serde_json::to_string_pretty(&doc).expect("report serializes");
    write(&out.join("report.json"), &text)
}

fn outcome(out: &Path, passed: bool, summary: Vec<String>) -> Outcome {
    Outcome {
        passed,
        summary,
        out_dir: out.to_path_buf(),
    }
}

pub fn run_verify(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let neuron = cfg.neuron_config()?;
    let opts = VerifyOptions {
        trials: cfg.verify.trials,
        width: cfg.verify.width.max(1),
        gradient_instances: cfg.verify.gradient_instances,
        seed: cfg.run.seed,
        surrogate: cfg.surrogate_config(),
    };
    let report = run_suite(&neuron, &opts)?;
    let hash = cfg.hash_hex();
    let mut csv = String::from("check,passed,trials,metric,threshold,seed,config_hash\n");
    let mut summary = Vec::new();
    for c in &report.checks {
        csv.push_str(&format!(
            "{},{},{},{:e},{:e},{},{}\n",
            c.name, c.passed, c.trials, c.metric, c.threshold, cfg.run.seed, hash
        ));
        summary.push(format!(
            "{} {}: {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        ));
    }
    write(&out.join("metrics.csv"), &csv)?;
    write_report(out, Command::Verify, cfg, json!({ "passed": report.passed(), "verify": report }))?;
    Ok(outcome(out, report.passed(), summary))
}

/// Training and test sets from CSV files or the configured generator.
pub fn load_datasets(cfg: &RunConfig) -> Result<(SyntheticDataset, Option<SyntheticDataset>)> {
    match &cfg.data.csv {
        Some(path) => {
            let train = ingest_spike_csv(path)?;
            let test = cfg.data.test_csv.as_ref().map(ingest_spike_csv).transpose()?;
            Ok((train, test))
        }
        None => {
            let h = cfg.neuron.horizon;
            let train = generate_dataset(cfg.data.generator, cfg.run.seed, cfg.data.samples, h)?;
            let test = if cfg.data.test_samples > 0 {
                Some(generate_dataset(
                    cfg.data.generator,
                    cfg.run.seed.wrapping_add(1),
                    cfg.data.test_samples,
                    h,
                )?)
            } else {
                None
            };
            Ok((train, test))
        }
    }
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| PsuError::Config(format!("thread pool: {e}")))
}

fn metrics_csv(history: &[EpochMetrics], seed: u64, hash: &str) -> String {
    let mut csv = String::from("epoch,loss,train_accuracy,test_accuracy,seed,config_hash\n");
    for m in history {
        csv.push_str(&format!(
            "{},{:e},{},{},{},{}\n",
            m.epoch,
            m.loss,
            m.train_accuracy,
            m.test_accuracy.map_or(String::new(), |a| a.to_string()),
            seed,
            hash
        ));
    }
    csv
}

pub fn run_train<F: Real>(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let (train_set, test_set) = load_datasets(cfg)?;
    let mut neuron = cfg.neuron_config()?;
    // Spike CSV files fix their own horizon.
    neuron.horizon = train_set.horizon;
    let mut widths = vec![train_set.width];
    widths.extend(&cfg.model.hidden);
    widths.push(train_set.num_classes);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.run.seed);
    let mut net: Network<F> = Network::dense(
        neuron,
        &widths,
        cfg.model.neuron,
        cfg.model.decode,
        cfg.model.init_gain,
        &mut rng,
    )?;
    let tcfg = cfg.train_config();
    let history = pool(cfg.run.workers)?.install(|| train(&mut net, &train_set, test_set.as_ref(), &tcfg))?;
    let hash = cfg.hash_hex();
    save_model(out.join("model.bin"), &net, cfg.run.seed, cfg.hash_bytes())?;
    write(&out.join("metrics.csv"), &metrics_csv(&history, cfg.run.seed, &hash))?;
    let sparsity = sparsity_report(&net, &train_set, tcfg.batch_size)?;
    let last = history.last();
    write_report(
        out,
        Command::Train,
        cfg,
        json!({
            "widths": widths,
            "horizon": neuron.horizon,
            "dataset": train_set.source,
            "epochs": history,
            "kernel_parameters": net.kernel_parameter_counts(),
            "train_sparsity": sparsity,
        }),
    )?;
    let summary = last
        .map(|m| {
            vec![format!(
                "epoch {} loss {:.4} train acc {:.3}{}",
                m.epoch,
                m.loss,
                m.train_accuracy,
                m.test_accuracy.map_or(String::new(), |a| format!(" test acc {a:.3}"))
            )]
        })
        .unwrap_or_default();
    Ok(outcome(out, true, summary))
}

pub fn run_bench<F: Real>(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let mut scenarios = Vec::new();
    let mut summary = Vec::new();
    for &neuron in &cfg.bench.neurons {
        for &horizon in &cfg.bench.horizons {
            let scenario = BenchScenario {
                neuron,
                horizon,
                widths: cfg.bench.widths.clone(),
                batch: cfg.bench.batch,
                repetitions: cfg.bench.repetitions,
                warmup: cfg.bench.warmup,
                seed: cfg.run.seed,
                parallel: cfg.bench.parallel,
                workers: cfg.run.workers,
                tau: cfg.neuron.tau,
                v_th: cfg.neuron.v_th,
                time_train_step: cfg.bench.train_step,
            };
            let report = time_forward::<F>(&scenario)?;
            summary.push(format!(
                "{neuron} T={horizon}: serial {:.3e}s, kernel {:.3e}s, ratio {:.2}",
                report.baseline.median_s, report.kernel.median_s, report.ratio
            ));
            scenarios.push(report);
        }
    }
    let report = RunReport {
        seed: cfg.run.seed,
        config_hash: cfg.hash_hex(),
        build: BuildInfo::current(cfg.run.precision),
        scenarios,
    };
    write(&out.join("metrics.csv"), &report.to_csv())?;
    write_report(out, Command::Bench, cfg, &report)?;
    Ok(outcome(out, true, summary))
}

pub fn sparsity_csv(report: &SparsityReport, seed: u64, hash: &str) -> String {
    let mut csv = String::from("layer,rate,spikes,slots,seed,config_hash\n");
    for (l, (rate, c)) in report.layer_rates.iter().zip(&report.layer_counts).enumerate() {
        csv.push_str(&format!("{l},{rate},{},{},{seed},{hash}\n", c.spikes, c.slots));
    }
    let pooled = report.layer_counts.iter().fold((0, 0), |(s, n), c| (s + c.spikes, n + c.slots));
    csv.push_str(&format!(
        "ensemble,{},{},{},{seed},{hash}\n",
        report.ensemble_rate, pooled.0, pooled.1
    ));
    csv
}

pub fn run_stats<F: Real>(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let model_path = cfg.stats.model.clone().unwrap_or_else(|| out.join("model.bin"));
    let file = load_model(&model_path)?;
    let model: Network<F> = file.network.cast();
    let (train_set, test_set) = load_datasets(&RunConfig {
        neuron: crate::config::NeuronSection {
            horizon: model.config().horizon,
            ..cfg.neuron.clone()
        },
        ..cfg.clone()
    })?;
    let data = test_set.unwrap_or(train_set);
    let report = sparsity_report(&model, &data, cfg.train.batch_size)?;
    let hash = cfg.hash_hex();
    write(&out.join("metrics.csv"), &sparsity_csv(&report, cfg.run.seed, &hash))?;
    write_report(
        out,
        Command::Stats,
        cfg,
        json!({
            "model": model_path,
            "model_seed": file.seed,
            "model_config_hash": hex::encode(file.config_hash),
            "dataset": data.source,
            "samples": data.len(),
            "sparsity": report,
        }),
    )?;
    let mut summary: Vec<String> = report
        .layer_rates
        .iter()
        .enumerate()
        .map(|(l, r)| format!("layer {l}: firing rate {r:.4}"))
        .collect();
    summary.push(format!("ensemble: firing rate {:.4}", report.ensemble_rate));
    Ok(outcome(out, true, summary))
}
