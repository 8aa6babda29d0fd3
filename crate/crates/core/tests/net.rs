use ndarray::{array, Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use psu_core::kernel::{build_leak_matrix, NeuronConfig};
use psu_core::net::{
    argmax_rows, decode_output, generate_dataset, load_model, save_model, train, DatasetKind,
    DecodeMode, LayerSpec, LossKind, Network, NeuronKind, OptimizerKind, SynapseSpec, TrainConfig,
    MODEL_MAGIC,
};
use psu_core::PsuError;

fn dense(kind: NeuronKind, decode: DecodeMode, t: usize, widths: &[usize], seed: u64) -> Network<f64> {
    let cfg = NeuronConfig::with_horizon(t).unwrap();
    Network::dense(cfg, widths, kind, decode, 2.0, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

#[test]
fn decode_examples() {
    let silent = Array2::<f64>::zeros((5, 6));
    assert_eq!(decode_output(silent.view(), 2, DecodeMode::RateSum), Array2::<f64>::zeros((2, 3)));
    assert_eq!(decode_output(silent.view(), 2, DecodeMode::LastMembrane), Array2::<f64>::zeros((2, 3)));

    // Batch of one, class 2 spikes every step.
    let mut out = Array2::<f64>::zeros((4, 3));
    out.column_mut(2).fill(1.0);
    let scores = decode_output(out.view(), 1, DecodeMode::RateSum);
    assert_eq!(scores, array![[0.0, 0.0, 4.0]]);
    assert_eq!(argmax_rows(scores.view()), vec![2]);

    let membrane = array![[9.0, 0.0, 0.0, 0.0], [0.5, -1.0, 2.0, 3.0]];
    assert_eq!(decode_output(membrane.view(), 2, DecodeMode::LastMembrane), array![[0.5, -1.0], [2.0, 3.0]]);
}

#[test]
fn membrane_readout_integrates_without_spiking_or_resetting() {
    let t = 10;
    let batch = 3;
    let net = dense(NeuronKind::Ipsu, DecodeMode::LastMembrane, t, &[4, 6, 2], 1);
    let readout = net.readout().expect("membrane decoding uses a readout synapse");
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = Array2::from_shape_fn((t, batch * 4), |_| rng.random_range(0.0..4.0));
    let out = net.forward(x.view(), batch).unwrap();
    let hidden = out.layers.last().unwrap().spikes().clone();
    assert!(hidden.iter().any(|v| *v == 1.0), "hidden layer should fire for this input");

    // Independent reference: project every (step, sample) row, then leak.
    let rows = hidden.into_shape_with_order((t * batch, 6)).unwrap();
    let current = readout.forward(rows.view()).into_shape_with_order((t, batch * 2)).unwrap();
    let a = build_leak_matrix::<f64>(2.0, t).unwrap();
    let expected = a.entries().dot(&current);
    let membrane = out.readout_membrane.as_ref().unwrap();
    for (p, q) in membrane.iter().zip(expected.iter()) {
        assert!((p - q).abs() < 1e-12);
    }
    let last: Array1<f64> = expected.row(t - 1).to_owned();
    let scores = last.into_shape_with_order((batch, 2)).unwrap();
    assert_eq!(out.scores, scores);
    assert_eq!(out.layers.len(), 1, "the readout is not a spiking layer");
}

#[test]
fn learnable_kernels_stay_causal_through_training() {
    let data = generate_dataset(DatasetKind::LongLagRecall, 3, 64, 12).unwrap();
    for kind in [NeuronKind::Ipsu, NeuronKind::Rpsu] {
        let mut net = dense(kind, DecodeMode::LastMembrane, 12, &[4, 8, 8, 2], 4);
        let before = net.clone();
        let cfg = TrainConfig {
            learning_rate: 5e-2,
            epochs: 4,
            batch_size: 16,
            ..Default::default()
        };
        train(&mut net, &data, None, &cfg).unwrap();
        let mut moved = false;
        for (layer, old) in net.layers().iter().zip(before.layers()) {
            let k = layer.kernel().unwrap().entries();
            for ((i, j), v) in k.indexed_iter() {
                if j > i {
                    assert_eq!(*v, 0.0, "{kind} kernel entry ({i},{j}) left the mask");
                }
            }
            moved |= k != old.kernel().unwrap().entries();
        }
        assert!(moved, "{kind} kernels should be updated");
    }
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let data = generate_dataset(DatasetKind::TemporalXor, 5, 48, 16).unwrap();
    for optimizer in [OptimizerKind::Sgd, OptimizerKind::AdamW] {
        let mut net = dense(NeuronKind::Rpsu, DecodeMode::RateSum, 16, &[2, 8, 2], 6);
        let before = net.clone();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            optimizer,
            epochs: 3,
            batch_size: 16,
            ..Default::default()
        };
        let history = train(&mut net, &data, None, &cfg).unwrap();
        assert_eq!(net, before);
        for m in &history {
            assert_eq!(m.train_accuracy, history[0].train_accuracy);
            assert!((m.loss - history[0].loss).abs() < 1e-12);
        }
    }
}

#[test]
fn training_is_bitwise_deterministic_in_f64() {
    let data = generate_dataset(DatasetKind::PoissonRate, 8, 64, 16).unwrap();
    let test = generate_dataset(DatasetKind::PoissonRate, 9, 32, 16).unwrap();
    let run = || {
        let mut net = dense(NeuronKind::Ipsu, DecodeMode::RateSum, 16, &[8, 12, 2], 10);
        let cfg = TrainConfig {
            loss: LossKind::MeanSquaredError,
            learning_rate: 1e-2,
            epochs: 4,
            batch_size: 10,
            seed: 77,
            ..Default::default()
        };
        let h = train(&mut net, &data, Some(&test), &cfg).unwrap();
        (h, net)
    };
    let (h1, n1) = run();
    let (h2, n2) = run();
    assert_eq!(h1, h2);
    assert_eq!(n1, n2);
}

#[test]
fn kernel_parameter_counts_follow_horizon() {
    for t in [1, 3, 16] {
        for (kind, expected) in [
            (NeuronKind::Psu, 0),
            (NeuronKind::Ipsu, t * (t + 1) / 2),
            (NeuronKind::Rpsu, t * (t + 1) / 2),
        ] {
            let net = dense(kind, DecodeMode::RateSum, t, &[2, 3, 3, 2], 0);
            assert_eq!(net.kernel_parameter_counts(), vec![expected; 3]);
        }
    }
}

#[test]
fn temporal_convolution_network_learns_rates() {
    let t = 16;
    let cfg = NeuronConfig::with_horizon(t).unwrap();
    let layers = [LayerSpec {
        synapse: SynapseSpec::Conv1d {
            channels_in: 1,
            channels_out: 2,
            length: 8,
            kernel_size: 3,
        },
        neuron: NeuronKind::Ipsu,
    }];
    let readout = SynapseSpec::Dense {
        in_width: 16,
        out_width: 2,
    };
    let mut net: Network<f32> =
        Network::from_specs(cfg, &layers, Some(readout), 2.0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert_eq!(net.decode_mode(), DecodeMode::LastMembrane);
    let data = generate_dataset(DatasetKind::PoissonRate, 12, 128, t).unwrap();
    let cfg = TrainConfig {
        learning_rate: 1e-2,
        epochs: 30,
        batch_size: 16,
        ..Default::default()
    };
    let history = train(&mut net, &data, None, &cfg).unwrap();
    let last = history.last().unwrap();
    assert!(last.loss < history[0].loss);
    assert!(last.train_accuracy >= 0.9, "accuracy {}", last.train_accuracy);
}

/// Plain logistic regression by full-batch gradient descent.
fn logistic_accuracy(features: &[Vec<f64>], labels: &[usize], epochs: usize) -> f64 {
    let d = features[0].len();
    let mut w = vec![0.0; d + 1];
    for _ in 0..epochs {
        let mut grad = vec![0.0; d + 1];
        for (f, &y) in features.iter().zip(labels) {
            let z: f64 = w[d] + f.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
            let err = 1.0 / (1.0 + (-z).exp()) - y as f64;
            for k in 0..d {
                grad[k] += err * f[k];
            }
            grad[d] += err;
        }
        for k in 0..=d {
            w[k] -= 0.05 * grad[k] / features.len() as f64;
        }
    }
    let correct = features
        .iter()
        .zip(labels)
        .filter(|(f, &y)| {
            let z: f64 = w[d] + f.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
            (z >= 0.0) as usize == y
        })
        .count();
    correct as f64 / labels.len() as f64
}

#[test]
fn temporal_xor_needs_one_hidden_layer() {
    let t = 16;
    let data = generate_dataset(DatasetKind::TemporalXor, 21, 400, t).unwrap();
    let a = build_leak_matrix::<f64>(2.0, t).unwrap();
    let integrated: Vec<Array2<f64>> = data.samples.iter().map(|x| a.entries().dot(x)).collect();

    // Linear readout of the integrated currents alone cannot express XOR.
    let raw: Vec<Vec<f64>> = integrated.iter().map(|u| u.iter().copied().collect()).collect();
    let linear = logistic_accuracy(&raw, &data.labels, 2000);
    assert!(linear < 0.8, "raw features separated XOR at {linear}");

    // One thresholded hidden unit per step (weights [1, 1], threshold 3)
    // detects coincident pulses; the classes become linearly separable.
    let hidden: Vec<Vec<f64>> = integrated
        .iter()
        .map(|u| u.rows().into_iter().map(|r| ((r[0] + r[1]) >= 3.0) as u8 as f64).collect())
        .collect();
    let separated = logistic_accuracy(&hidden, &data.labels, 2000);
    assert!(separated >= 0.95, "hidden features reached only {separated}");
}

#[test]
fn model_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut net = dense(NeuronKind::Ipsu, DecodeMode::LastMembrane, 8, &[4, 5, 2], 3);
    let data = generate_dataset(DatasetKind::LongLagRecall, 1, 32, 8).unwrap();
    let cfg = TrainConfig { epochs: 2, batch_size: 8, learning_rate: 1e-2, ..Default::default() };
    train(&mut net, &data, None, &cfg).unwrap();
    let path = dir.path().join("model.bin");
    let hash = *b"\x01\x23\x45\x67\x89\xab\xcd\xef";
    save_model(&path, &net, 42, hash).unwrap();
    let file = load_model(&path).unwrap();
    assert_eq!(file.network, net);
    assert_eq!(file.seed, 42);
    assert_eq!(file.config_hash, hash);

    let small: Network<f32> = dense(NeuronKind::Rpsu, DecodeMode::RateSum, 4, &[3, 4, 2], 9).cast();
    save_model(&path, &small, 0, [0; 8]).unwrap();
    assert_eq!(load_model(&path).unwrap().network.cast::<f32>(), small);
}

#[test]
fn damaged_model_files_report_offsets() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.bin");
    let net = dense(NeuronKind::Psu, DecodeMode::RateSum, 4, &[3, 4, 2], 9);
    save_model(&path, &net, 0, [0; 8]).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..8], MODEL_MAGIC);

    std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
    assert!(matches!(load_model(&path), Err(PsuError::Format { .. })));

    let mut bad = bytes.clone();
    bad[0] = b'X';
    std::fs::write(&path, &bad).unwrap();
    match load_model(&path) {
        Err(PsuError::Format { offset, .. }) => assert_eq!(offset, 0),
        other => panic!("expected a format error, got {other:?}"),
    }
    assert!(matches!(load_model(dir.path().join("absent.bin")), Err(PsuError::Io { .. })));
}
