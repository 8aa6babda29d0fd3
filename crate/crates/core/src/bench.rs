//! Wall-clock comparison of the parallel kernels against step-serial LIF
//! simulation, and firing-rate (sparsity) statistics.
//!
//! The baseline is [`Network::forward_step_serial`]: soft-reset LIF neurons,
//! one time step at a time through every layer, same weights, precision and
//! layout as the parallel path. Timings are medians over measured runs after
//! warmup, with baseline and kernel runs interleaved.

use std::time::Instant;

use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{PsuError, Result};
use crate::grad::SurrogateConfig;
use crate::kernel::{NeuronConfig, Real};
use crate::net::{loss_and_grad, DecodeMode, LossKind, Network, NeuronKind, SyntheticDataset};

/// Horizons swept by default in speed-ratio runs.
pub const DEFAULT_HORIZONS: [usize; 5] = [4, 8, 16, 32, 64];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchScenario {
    pub neuron: NeuronKind,
    pub horizon: usize,
    /// `[input, hidden..., output]`; every transition is a spiking layer.
    pub widths: Vec<usize>,
    pub batch: usize,
    pub repetitions: usize,
    pub warmup: usize,
    pub seed: u64,
    /// Split the batch across `workers` threads instead of running single-threaded.
    pub parallel: bool,
    pub workers: usize,
    pub tau: f64,
    pub v_th: f64,
    /// Also time one forward+backward step of the parallel kernel.
    pub time_train_step: bool,
}

impl BenchScenario {
    pub fn new(neuron: NeuronKind, horizon: usize, widths: Vec<usize>) -> Self {
        Self {
            neuron,
            horizon,
            widths,
            batch: 1,
            repetitions: 10,
            warmup: 2,
            seed: 0,
            parallel: false,
            workers: 1,
            tau: 2.0,
            v_th: 1.0,
            time_train_step: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.repetitions < 5 {
            return Err(PsuError::Config(format!(
                "repetitions must be >= 5, got {}",
                self.repetitions
            )));
        }
        if self.warmup < 1 {
            return Err(PsuError::Config("warmup must be >= 1".into()));
        }
        if self.widths.len() < 2 || self.widths.contains(&0) {
            return Err(PsuError::Config(
                "widths need an input and at least one positive layer width".into(),
            ));
        }
        if self.batch == 0 {
            return Err(PsuError::Config("batch must be >= 1".into()));
        }
        if self.parallel && self.workers == 0 {
            return Err(PsuError::Config("parallel mode needs at least one worker".into()));
        }
        NeuronConfig::new(self.tau, self.v_th, Default::default(), self.horizon)?;
        Ok(())
    }
}

/// Median and interquartile range over measured runs, in seconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingStats {
    pub median_s: f64,
    pub iqr_s: f64,
    pub runs: usize,
}

impl TimingStats {
    pub fn from_samples(samples: &[f64]) -> Self {
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        Self {
            median_s: quantile(&sorted, 0.5),
            iqr_s: quantile(&sorted, 0.75) - quantile(&sorted, 0.25),
            runs: sorted.len(),
        }
    }
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub neuron: NeuronKind,
    pub horizon: usize,
    pub depth: usize,
    pub widths: Vec<usize>,
    pub batch: usize,
    /// `single` or `parallel:<workers>`; ratios never mix modes.
    pub mode: String,
    pub warmup: usize,
    pub baseline: TimingStats,
    pub kernel: TimingStats,
    /// `baseline.median_s / kernel.median_s`.
    pub ratio: f64,
    pub baseline_firing_rates: Vec<f64>,
    pub kernel_firing_rates: Vec<f64>,
    /// Coarse forward+backward timing of the parallel kernel (no serial counterpart).
    pub train_step: Option<TimingStats>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BuildInfo {
    pub package: String,
    pub version: String,
    pub optimized: bool,
    pub precision_bits: u32,
}

impl BuildInfo {
    pub fn current(precision_bits: u32) -> Self {
        Self {
            package: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            optimized: !cfg!(debug_assertions),
            precision_bits,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub config_hash: String,
    pub build: BuildInfo,
    pub scenarios: Vec<ScenarioReport>,
}

impl RunReport {
    pub const CSV_HEADER: &'static str = "neuron,horizon,depth,batch,mode,baseline_median_s,baseline_iqr_s,kernel_median_s,kernel_iqr_s,ratio,baseline_mean_rate,kernel_mean_rate,train_step_median_s,seed,config_hash";

    /// One row per scenario.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        let mean = |v: &[f64]| {
            if v.is_empty() {
                0.0
            } else {
                v.iter().sum::<f64>() / v.len() as f64
            }
        };
        for s in &self.scenarios {
            out.push_str(&format!(
                "{},{},{},{},{},{:e},{:e},{:e},{:e},{},{},{},{},{},{}\n",
                s.neuron,
                s.horizon,
                s.depth,
                s.batch,
                s.mode,
                s.baseline.median_s,
                s.baseline.iqr_s,
                s.kernel.median_s,
                s.kernel.iqr_s,
                s.ratio,
                mean(&s.baseline_firing_rates),
                mean(&s.kernel_firing_rates),
                s.train_step.as_ref().map_or(String::new(), |t| format!("{:e}", t.median_s)),
                self.seed,
                self.config_hash
            ));
        }
        out
    }
}

/// Gaussian input currents `[T, batch * width]`.
pub fn gaussian_currents<F: Real>(
    horizon: usize,
    cols: usize,
    mean: f64,
    std: f64,
    rng: &mut impl Rng,
) -> Array2<F> {
    let normal = Normal::new(mean, std).expect("std must be finite and >= 0");
    Array2::from_shape_simple_fn((horizon, cols), || F::of(normal.sample(rng)))
}

fn time_once(f: &mut impl FnMut()) -> f64 {
    let start = Instant::now();
    f();
    start.elapsed().as_secs_f64()
}

/// Runs `f` on batch shards, concurrently in `parallel` mode.
fn sharded<F: Real, T: Send>(
    x: &Array2<F>,
    batch: usize,
    in_width: usize,
    shards: usize,
    f: impl Fn(Array2<F>, usize) -> T + Sync,
) -> Vec<T> {
    let per = batch.div_ceil(shards);
    let ranges: Vec<(usize, usize)> = (0..batch)
        .step_by(per.max(1))
        .map(|lo| (lo, (lo + per).min(batch)))
        .collect();
    ranges
        .par_iter()
        .map(|&(lo, hi)| {
            let part = x.slice(s![.., lo * in_width..hi * in_width]).to_owned();
            f(part, hi - lo)
        })
        .collect()
}

/// Times the step-serial LIF baseline against the scenario's kernel on
/// identical weights and inputs.
pub fn time_forward<F: Real>(scenario: &BenchScenario) -> Result<ScenarioReport> {
    scenario.validate()?;
    let cfg = NeuronConfig::new(scenario.tau, scenario.v_th, Default::default(), scenario.horizon)?;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let base: Network<F> = Network::dense(
        cfg,
        &scenario.widths,
        NeuronKind::Psu,
        DecodeMode::RateSum,
        2.0,
        &mut rng,
    )?;
    let net = base.with_neuron(scenario.neuron);
    let in_width = scenario.widths[0];
    let batch = scenario.batch;
    let x: Array2<F> = gaussian_currents(scenario.horizon, batch * in_width, 0.5, 1.0, &mut rng);
    let depth = net.layers().len();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(if scenario.parallel { scenario.workers } else { 1 })
        .build()
        .map_err(|e| PsuError::Config(format!("thread pool: {e}")))?;
    let shards = if scenario.parallel { scenario.workers } else { 1 };

    let run_baseline = || -> Result<Vec<usize>> {
        let parts = sharded(&x, batch, in_width, shards, |part, b| {
            base.forward_step_serial(part.view(), b).map(|(_, c)| c)
        });
        let mut counts = vec![0; depth];
        for p in parts {
            for (acc, c) in counts.iter_mut().zip(p?) {
                *acc += c;
            }
        }
        Ok(counts)
    };
    let self_compare = scenario.neuron == NeuronKind::Lif;
    let run_kernel = || -> Result<Vec<usize>> {
        if self_compare {
            return run_baseline();
        }
        let parts = sharded(&x, batch, in_width, shards, |part, b| {
            net.forward(part.view(), b).map(|out| {
                out.layers
                    .iter()
                    .map(|l| l.spikes().iter().filter(|s| **s == F::one()).count())
                    .collect::<Vec<_>>()
            })
        });
        let mut counts = vec![0; depth];
        for p in parts {
            for (acc, c) in counts.iter_mut().zip(p?) {
                *acc += c;
            }
        }
        Ok(counts)
    };

    let (baseline_samples, kernel_samples, baseline_counts, kernel_counts) =
        pool.install(|| -> Result<_> {
            let mut baseline_counts = Vec::new();
            let mut kernel_counts = Vec::new();
            for _ in 0..scenario.warmup {
                baseline_counts = run_baseline()?;
                kernel_counts = run_kernel()?;
            }
            let mut b = Vec::with_capacity(scenario.repetitions);
            let mut k = Vec::with_capacity(scenario.repetitions);
            let mut err = None;
            for _ in 0..scenario.repetitions {
                b.push(time_once(&mut || {
                    if let Err(e) = run_baseline() {
                        err = Some(e);
                    }
                }));
                k.push(time_once(&mut || {
                    if let Err(e) = run_kernel() {
                        err = Some(e);
                    }
                }));
            }
            if let Some(e) = err {
                return Err(e);
            }
            Ok((b, k, baseline_counts, kernel_counts))
        })?;

    let train_step = if scenario.time_train_step && scenario.neuron != NeuronKind::Lif {
        let labels: Vec<usize> = (0..batch).map(|i| i % net.num_classes()).collect();
        let surrogate = SurrogateConfig::atan();
        let mut samples = Vec::with_capacity(scenario.repetitions);
        let step = || -> Result<()> {
            let out = net.forward(x.view(), batch)?;
            let (_, d) = loss_and_grad(LossKind::CrossEntropy, out.scores.view(), &labels);
            net.backward(x.view(), &out, d.view(), &surrogate)?;
            Ok(())
        };
        step()?;
        for _ in 0..scenario.repetitions {
            let start = Instant::now();
            step()?;
            samples.push(start.elapsed().as_secs_f64());
        }
        Some(TimingStats::from_samples(&samples))
    } else {
        None
    };

    let rates = |counts: &[usize]| -> Vec<f64> {
        net.layers()
            .iter()
            .zip(counts)
            .map(|(l, &c)| c as f64 / (scenario.horizon * batch * l.out_width()) as f64)
            .collect()
    };
    let baseline = TimingStats::from_samples(&baseline_samples);
    let kernel = TimingStats::from_samples(&kernel_samples);
    Ok(ScenarioReport {
        neuron: scenario.neuron,
        horizon: scenario.horizon,
        depth,
        widths: scenario.widths.clone(),
        batch,
        mode: if scenario.parallel {
            format!("parallel:{}", scenario.workers)
        } else {
            "single".to_string()
        },
        warmup: scenario.warmup,
        ratio: baseline.median_s / kernel.median_s,
        baseline,
        kernel,
        baseline_firing_rates: rates(&baseline_counts),
        kernel_firing_rates: rates(&kernel_counts),
        train_step,
    })
}

/// Spike and slot counts; pooling counts keeps rates independent of sharding.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FiringStats {
    pub spikes: u64,
    pub slots: u64,
}

impl FiringStats {
    pub fn from_spikes<F: Real>(spikes: &Array2<F>) -> Self {
        Self {
            spikes: spikes.iter().filter(|s| **s == F::one()).count() as u64,
            slots: spikes.len() as u64,
        }
    }

    pub fn merge(self, other: Self) -> Self {
        Self {
            spikes: self.spikes + other.spikes,
            slots: self.slots + other.slots,
        }
    }

    pub fn rate(&self) -> f64 {
        if self.slots == 0 {
            0.0
        } else {
            self.spikes as f64 / self.slots as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparsityReport {
    pub layer_rates: Vec<f64>,
    /// Pooled rate over every layer, neuron and step.
    pub ensemble_rate: f64,
    pub layer_counts: Vec<FiringStats>,
}

impl SparsityReport {
    pub fn from_counts(layer_counts: Vec<FiringStats>) -> Self {
        let pooled = layer_counts
            .iter()
            .fold(FiringStats::default(), |a, b| a.merge(*b));
        Self {
            layer_rates: layer_counts.iter().map(FiringStats::rate).collect(),
            ensemble_rate: pooled.rate(),
            layer_counts,
        }
    }

    /// Combines reports computed on disjoint shards of a dataset.
    pub fn pool(reports: &[SparsityReport]) -> Self {
        let layers = reports.first().map_or(0, |r| r.layer_counts.len());
        let counts = (0..layers)
            .map(|l| {
                reports
                    .iter()
                    .fold(FiringStats::default(), |a, r| a.merge(r.layer_counts[l]))
            })
            .collect();
        Self::from_counts(counts)
    }
}

/// Per-layer firing rates of `model` over every sample of `dataset`.
pub fn sparsity_report<F: Real>(
    model: &Network<F>,
    dataset: &SyntheticDataset,
    batch_size: usize,
) -> Result<SparsityReport> {
    let mut counts = vec![FiringStats::default(); model.layers().len()];
    let indices: Vec<usize> = (0..dataset.len()).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let (x, _) = dataset.batch::<F>(chunk);
        let out = model.forward(x.view(), chunk.len())?;
        for (acc, layer) in counts.iter_mut().zip(&out.layers) {
            *acc = acc.merge(FiringStats::from_spikes(layer.spikes()));
        }
    }
    Ok(SparsityReport::from_counts(counts))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_and_stats() {
        let stats = TimingStats::from_samples(&[5.0, 1.0, 3.0, 2.0, 4.0]);
        assert_eq!(stats.median_s, 3.0);
        assert_eq!(stats.iqr_s, 2.0);
        assert_eq!(stats.runs, 5);
    }

    #[test]
    fn scenario_validation() {
        let mut s = BenchScenario::new(NeuronKind::Psu, 4, vec![8, 8]);
        assert!(s.validate().is_ok());
        s.repetitions = 4;
        assert!(s.validate().is_err());
        s.repetitions = 5;
        s.warmup = 0;
        assert!(s.validate().is_err());
        s.warmup = 1;
        s.horizon = 0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn firing_stats_pool() {
        let a = FiringStats { spikes: 3, slots: 10 };
        let b = FiringStats { spikes: 1, slots: 30 };
        assert_eq!(a.merge(b).rate(), 0.1);
        assert_eq!(FiringStats::default().rate(), 0.0);
    }
}
