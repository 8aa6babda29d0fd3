use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use psu_core::bench::{
    gaussian_currents, sparsity_report, time_forward, BenchScenario, RunReport, BuildInfo,
    SparsityReport,
};
use psu_core::kernel::NeuronConfig;
use psu_core::net::{generate_dataset, DatasetKind, DecodeMode, Network, NeuronKind, SyntheticDataset};

fn small(neuron: NeuronKind, horizon: usize) -> BenchScenario {
    BenchScenario {
        repetitions: 7,
        warmup: 1,
        ..BenchScenario::new(neuron, horizon, vec![32, 32, 32])
    }
}

#[test]
fn self_comparison_ratio_is_near_one() {
    let report = time_forward::<f32>(&small(NeuronKind::Lif, 16)).unwrap();
    assert!(report.ratio > 0.5 && report.ratio < 2.0, "ratio {}", report.ratio);
    assert_eq!(report.baseline_firing_rates, report.kernel_firing_rates);
}

#[test]
fn reports_carry_every_measured_run() {
    for neuron in NeuronKind::ALL {
        let report = time_forward::<f64>(&small(neuron, 4)).unwrap();
        assert_eq!(report.baseline.runs, 7);
        assert_eq!(report.kernel.runs, 7);
        assert!(report.ratio > 0.0);
        assert_eq!(report.depth, 2);
        for r in report.baseline_firing_rates.iter().chain(&report.kernel_firing_rates) {
            assert!((0.0..=1.0).contains(r));
        }
    }
    let mut bad = small(NeuronKind::Psu, 4);
    bad.repetitions = 3;
    assert!(time_forward::<f32>(&bad).is_err());
}

#[test]
fn csv_has_one_row_per_scenario() {
    let scenarios = [4, 8]
        .into_iter()
        .flat_map(|t| [NeuronKind::Psu, NeuronKind::Rpsu].map(|n| time_forward::<f32>(&small(n, t)).unwrap()))
        .collect();
    let report = RunReport {
        seed: 3,
        config_hash: "00112233aabbccdd".into(),
        build: BuildInfo::current(32),
        scenarios,
    };
    let csv = report.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], RunReport::CSV_HEADER);
    assert_eq!(lines.len(), 5);
    assert!(lines[1..].iter().all(|l| l.ends_with(",3,00112233aabbccdd")));
}

#[test]
fn parallel_mode_shards_the_batch() {
    let scenario = BenchScenario {
        batch: 4,
        parallel: true,
        workers: 2,
        ..small(NeuronKind::Ipsu, 8)
    };
    let report = time_forward::<f32>(&scenario).unwrap();
    assert_eq!(report.mode, "parallel:2");
    let single = time_forward::<f32>(&BenchScenario { parallel: false, ..scenario }).unwrap();
    assert_eq!(report.kernel_firing_rates, single.kernel_firing_rates);
}

/// Timing-sensitive; run with `--ignored` on an otherwise idle machine.
#[test]
#[ignore]
fn deeper_stacks_gain_at_least_as_much() {
    let shallow = BenchScenario {
        repetitions: 10,
        ..BenchScenario::new(NeuronKind::Psu, 64, vec![512; 3])
    };
    let deep = BenchScenario {
        widths: vec![512; 9],
        ..shallow.clone()
    };
    let s = time_forward::<f32>(&shallow).unwrap();
    let d = time_forward::<f32>(&deep).unwrap();
    assert!(d.ratio >= s.ratio, "deep {} < shallow {}", d.ratio, s.ratio);
}

fn net(kind: NeuronKind, seed: u64) -> Network<f64> {
    let cfg = NeuronConfig::with_horizon(16).unwrap();
    Network::dense(cfg, &[8, 24, 24, 2], kind, DecodeMode::RateSum, 2.0, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

#[test]
fn silent_inputs_give_zero_rates() {
    let mut data = generate_dataset(DatasetKind::PoissonRate, 0, 10, 16).unwrap();
    for s in &mut data.samples {
        s.fill(0.0);
    }
    for kind in [NeuronKind::Psu, NeuronKind::Ipsu, NeuronKind::Rpsu, NeuronKind::Lif] {
        let report = sparsity_report(&net(kind, 1), &data, 4).unwrap();
        assert!(report.layer_rates.iter().all(|r| *r == 0.0));
        assert_eq!(report.ensemble_rate, 0.0);
    }
}

#[test]
fn rates_are_invariant_to_batch_partitioning() {
    let data = generate_dataset(DatasetKind::PoissonRate, 4, 30, 16).unwrap();
    let model = net(NeuronKind::Rpsu, 2);
    let whole = sparsity_report(&model, &data, 30).unwrap();
    for batch_size in [1, 7, 16] {
        assert_eq!(sparsity_report(&model, &data, batch_size).unwrap(), whole);
    }
    let shard = |lo: usize, hi: usize| SyntheticDataset {
        samples: data.samples[lo..hi].to_vec(),
        labels: data.labels[lo..hi].to_vec(),
        ..data.clone()
    };
    let parts: Vec<SparsityReport> = [(0, 11), (11, 12), (12, 30)]
        .iter()
        .map(|&(lo, hi)| sparsity_report(&model, &shard(lo, hi), 5).unwrap())
        .collect();
    assert_eq!(SparsityReport::pool(&parts), whole);
    assert!(whole.layer_rates.iter().all(|r| (0.0..=1.0).contains(r)));
}

#[test]
fn psu_fires_less_than_lif_on_gaussian_currents() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let x: Array2<f64> = gaussian_currents(16, 16 * 8, 0.5, 1.0, &mut rng);
    let mut data = generate_dataset(DatasetKind::PoissonRate, 0, 16, 16).unwrap();
    for (k, s) in data.samples.iter_mut().enumerate() {
        s.assign(&x.slice(ndarray::s![.., k * 8..(k + 1) * 8]));
    }
    let psu = net(NeuronKind::Psu, 8);
    let lif = psu.with_neuron(NeuronKind::Lif);
    let p = sparsity_report(&psu, &data, 8).unwrap();
    let l = sparsity_report(&lif, &data, 8).unwrap();
    let slots: u64 = p.layer_counts.iter().map(|c| c.slots).sum();
    assert!(slots >= 10_000);
    assert!(p.ensemble_rate <= l.ensemble_rate, "psu {} lif {}", p.ensemble_rate, l.ensemble_rate);
}
