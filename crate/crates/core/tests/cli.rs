use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use psu_core::bench::sparsity_report;
use psu_core::cli::load_datasets;
use psu_core::config::RunConfig;
use psu_core::net::{generate_dataset, load_model, write_spike_csv, DatasetKind};

fn psu(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_psu"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn report(out: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap()
}

const QUICK_TRAIN: [&str; 6] = [
    "--override",
    "epochs=3",
    "--override",
    "samples=64",
    "--override",
    "test_samples=32",
];

#[test]
fn verify_defaults_pass_and_record_seed_and_hash() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("nested/verify");
    let o = psu(&out, &["verify", "--seed", "5"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let r = report(&out);
    assert_eq!(r["seed"], 5);
    assert_eq!(r["result"]["passed"], true);
    let hash = r["config_hash"].as_str().unwrap().to_string();
    assert_eq!(hash.len(), 16);
    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 6);
    assert!(csv.lines().skip(1).all(|l| l.ends_with(&format!(",5,{hash}"))));
    let stdout = String::from_utf8_lossy(&o.stdout);
    for name in ["matrix_construction", "no_spike_equivalence", "parallel_serial_agreement", "causality", "gradient_check"] {
        assert!(stdout.contains(&format!("PASS {name}")), "{stdout}");
    }
}

#[test]
fn verify_rejects_out_of_domain_tau() {
    let dir = tempfile::tempdir().unwrap();
    let o = psu(dir.path(), &["verify", "--override", "tau=0.5"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("tau"));
}

#[test]
fn verify_degenerate_horizon() {
    let dir = tempfile::tempdir().unwrap();
    let o = psu(dir.path(), &["verify", "--override", "horizon=1"]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("PASS degenerate_horizon"));
}

#[test]
fn configuration_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "[neuron]\ntau = 2.5\nmystery = 1\n").unwrap();
    let o = psu(dir.path(), &["verify", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("mystery"));
    assert_eq!(code(&psu(dir.path(), &["verify", "--override", "no_such_key=3"])), 2);
    assert_eq!(code(&psu(dir.path(), &["verify", "--override", "width=3"])), 2);
    // LIF layers have no backward pass.
    assert_eq!(code(&psu(dir.path(), &["train", "--override", "model.neuron=\"lif\""])), 2);
    let missing = dir.path().join("missing.toml");
    assert_eq!(code(&psu(dir.path(), &["verify", "--config", missing.to_str().unwrap()])), 3);
}

#[test]
fn config_file_values_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "[run]\nseed = 9\n[neuron]\nhorizon = 4\n[verify]\ntrials = 20\n").unwrap();
    let out = dir.path().join("o");
    let o = psu(&out, &["verify", "--config", cfg.to_str().unwrap(), "--override", "verify.trials=25"]);
    assert_eq!(code(&o), 0);
    let r = report(&out);
    assert_eq!(r["seed"], 9);
    assert_eq!(r["config"]["neuron"]["horizon"], 4);
    assert_eq!(r["config"]["verify"]["trials"], 25);
}

#[test]
fn bench_writes_two_rows_per_neuron_kind() {
    let dir = tempfile::tempdir().unwrap();
    let o = psu(
        dir.path(),
        &[
            "bench",
            "--override", "horizons=[4, 64]",
            "--override", "widths=[16, 16]",
            "--override", "repetitions=5",
            "--override", "neurons=[\"psu\", \"ipsu\", \"rpsu\", \"lif\"]",
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    for kind in ["psu", "ipsu", "rpsu", "lif"] {
        assert_eq!(csv.lines().filter(|l| l.starts_with(&format!("{kind},"))).count(), 2);
    }
    assert_eq!(report(dir.path())["result"]["scenarios"].as_array().unwrap().len(), 8);
}

#[test]
fn training_twice_with_one_seed_is_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let mut args = vec!["train", "--seed", "3", "--precision", "64"];
        args.extend(QUICK_TRAIN);
        assert_eq!(code(&psu(out, &args)), 0);
    }
    for file in ["metrics.csv", "model.bin", "report.json"] {
        assert_eq!(fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap(), "{file}");
    }
    let model = load_model(a.join("model.bin")).unwrap();
    assert_eq!(model.seed, 3);
    assert_eq!(hex::encode(model.config_hash), report(&a)["config_hash"].as_str().unwrap());
}

#[test]
fn stats_match_in_process_sparsity_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let mut args = vec!["train", "--precision", "64", "--override", "model.neuron=\"ipsu\""];
    args.extend(QUICK_TRAIN);
    assert_eq!(code(&psu(out, &args)), 0);
    let mut args = vec!["stats", "--precision", "64"];
    args.extend(QUICK_TRAIN);
    let o = psu(out, &args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let cfg = RunConfig::load(None, &["epochs=3".into(), "samples=64".into(), "test_samples=32".into(), "precision=64".into()]).unwrap();
    let (_, test) = load_datasets(&cfg).unwrap();
    let model = load_model(out.join("model.bin")).unwrap().network;
    let expected = sparsity_report(&model, &test.unwrap(), cfg.train.batch_size).unwrap();
    let reported: psu_core::bench::SparsityReport =
        serde_json::from_value(report(out)["result"]["sparsity"].clone()).unwrap();
    assert_eq!(reported, expected);
    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + expected.layer_rates.len() + 1);
}

#[test]
fn training_from_spike_csv() {
    let dir = tempfile::tempdir().unwrap();
    let train_csv = dir.path().join("train.csv");
    write_spike_csv(&generate_dataset(DatasetKind::PoissonRate, 1, 24, 10).unwrap(), &train_csv).unwrap();
    let ov = format!("data.csv=\"{}\"", train_csv.display());
    let out = dir.path().join("run");
    let o = psu(&out, &["train", "--override", &ov, "--override", "epochs=2"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(report(&out)["result"]["horizon"], 10);

    let missing = format!("data.csv=\"{}\"", dir.path().join("absent.csv").display());
    assert_eq!(code(&psu(&out, &["train", "--override", &missing])), 3);

    let broken = dir.path().join("broken.csv");
    fs::write(&broken, "label,t,c0,c1\n0,0,1.0,2.0\n0,1,1.0\n").unwrap();
    let ov = format!("data.csv=\"{}\"", broken.display());
    let o = psu(&out, &["train", "--override", &ov]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("broken.csv:3:"), "{}", String::from_utf8_lossy(&o.stderr));
}
