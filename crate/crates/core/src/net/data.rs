//! Synthetic classification tasks and the spike-CSV loader.
//!
//! Generative rules (currents are injected directly at every step):
//!
//! * `TemporalXor`: 2 channels. Each channel carries one 2-step pulse of
//!   amplitude 3, either in the early window (starting at `T/8` or `T/8 + 1`)
//!   or in the late window (starting at `5T/8` or `5T/8 + 1`). The label is
//!   the XOR of the two channels' early/late bits: 0 when the pulses coincide
//!   in the same window, 1 when they fall in different windows.
//! * `LongLagRecall`: 4 channels. A single cue pulse of amplitude 3 arrives
//!   at step 0 or 1 on channel `label` (0 or 1); channels 2 and 3 carry
//!   distractor pulses with probability 0.1 per step from step 3 onwards.
//!   The answer must be read out at the final step.
//! * `PoissonRate`: 8 channels of Bernoulli events (amplitude 1) with an
//!   expected 5 (label 0) or 20 (label 1) events per channel over the horizon.
//!
//! All generators add Gaussian noise of standard deviation 0.05 except
//! `PoissonRate`, alternate labels so every dataset is class-balanced, and are
//! fully determined by their seed.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{PsuError, Result};
use crate::kernel::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    TemporalXor,
    LongLagRecall,
    PoissonRate,
}

impl DatasetKind {
    pub fn channels(self) -> usize {
        match self {
            Self::TemporalXor => 2,
            Self::LongLagRecall => 4,
            Self::PoissonRate => 8,
        }
    }

    pub fn default_horizon(self) -> usize {
        match self {
            Self::TemporalXor => 16,
            Self::LongLagRecall => 32,
            Self::PoissonRate => 16,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::TemporalXor => "temporal_xor",
            Self::LongLagRecall => "long_lag_recall",
            Self::PoissonRate => "poisson_rate",
        }
    }
}

/// Expected events per channel over the horizon for the two `PoissonRate` classes.
pub const POISSON_RATES: [f64; 2] = [5.0, 20.0];
const PULSE: f64 = 3.0;
const NOISE_STD: f64 = 0.05;

/// Labeled `[T, width]` current samples.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticDataset {
    pub horizon: usize,
    pub width: usize,
    pub num_classes: usize,
    pub samples: Vec<Array2<f64>>,
    pub labels: Vec<usize>,
    /// Generator name (or `csv:<path>`) and seed, for provenance.
    pub source: String,
    pub seed: Option<u64>,
}

impl SyntheticDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Stacks the selected samples into a time-major `[T, batch * width]` block.
    pub fn batch<F: Real>(&self, indices: &[usize]) -> (Array2<F>, Vec<usize>) {
        let b = indices.len();
        let mut x = Array2::zeros((self.horizon, b * self.width));
        for (slot, &idx) in indices.iter().enumerate() {
            let sample = &self.samples[idx];
            for t in 0..self.horizon {
                for c in 0..self.width {
                    x[[t, slot * self.width + c]] = F::of(sample[[t, c]]);
                }
            }
        }
        (x, indices.iter().map(|&i| self.labels[i]).collect())
    }
}

/// Deterministic, class-balanced synthetic dataset.
pub fn generate_dataset(
    kind: DatasetKind,
    seed: u64,
    samples: usize,
    horizon: usize,
) -> Result<SyntheticDataset> {
    let min_horizon = match kind {
        DatasetKind::TemporalXor => 8,
        DatasetKind::LongLagRecall => 4,
        DatasetKind::PoissonRate => 1,
    };
    if horizon < min_horizon {
        return Err(PsuError::Config(format!(
            "{} needs a horizon of at least {min_horizon}, got {horizon}",
            kind.name()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, NOISE_STD).expect("valid std");
    let width = kind.channels();
    let mut out = Vec::with_capacity(samples);
    let mut labels = Vec::with_capacity(samples);
    for i in 0..samples {
        let label = i % 2;
        let mut x = Array2::<f64>::zeros((horizon, width));
        match kind {
            DatasetKind::TemporalXor => {
                let first: usize = rng.random_range(0..2);
                let bits = [first, first ^ label];
                let windows = [horizon / 8, 5 * horizon / 8];
                for (c, &bit) in bits.iter().enumerate() {
                    let onset = windows[bit] + rng.random_range(0..2);
                    for t in onset..(onset + 2).min(horizon) {
                        x[[t, c]] += PULSE;
                    }
                }
            }
            DatasetKind::LongLagRecall => {
                let cue_step = rng.random_range(0..2);
                x[[cue_step, label]] += PULSE;
                for t in 3..horizon {
                    for c in 2..4 {
                        if rng.random_bool(0.1) {
                            x[[t, c]] += PULSE;
                        }
                    }
                }
            }
            DatasetKind::PoissonRate => {
                let p = (POISSON_RATES[label] / horizon as f64).min(1.0);
                x.mapv_inplace(|_| if rng.random_bool(p) { 1.0 } else { 0.0 });
            }
        }
        if kind != DatasetKind::PoissonRate {
            x.mapv_inplace(|v| v + noise.sample(&mut rng));
        }
        out.push(x);
        labels.push(label);
    }
    // Shuffle sample order without touching the balanced label multiset.
    let mut order: Vec<usize> = (0..samples).collect();
    order.shuffle(&mut rng);
    let samples_out = order.iter().map(|&i| out[i].clone()).collect();
    let labels_out = order.iter().map(|&i| labels[i]).collect();
    Ok(SyntheticDataset {
        horizon,
        width,
        num_classes: 2,
        samples: samples_out,
        labels: labels_out,
        source: kind.name().to_string(),
        seed: Some(seed),
    })
}

/// Reads the spike-CSV format: header `label,t,c0,...,c{W-1}`, one row per
/// time step, samples separated by blank lines, label on the first row of
/// each block (later rows may leave it empty or repeat it).
pub fn ingest_spike_csv(path: impl AsRef<Path>) -> Result<SyntheticDataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| PsuError::io(path, e))?;
    parse_spike_csv(&text, path)
}

pub(crate) fn parse_spike_csv(text: &str, path: &Path) -> Result<SyntheticDataset> {
    let err = |line: usize, message: String| PsuError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let header = loop {
        match lines.next() {
            None => {
                return Ok(SyntheticDataset {
                    horizon: 0,
                    width: 0,
                    num_classes: 0,
                    samples: Vec::new(),
                    labels: Vec::new(),
                    source: format!("csv:{}", path.display()),
                    seed: None,
                })
            }
            Some((_, "")) => continue,
            Some(h) => break h,
        }
    };
    let (header_line, header_text) = header;
    let columns: Vec<&str> = header_text.split(',').map(str::trim).collect();
    if columns.len() < 3 || columns[0] != "label" || columns[1] != "t" {
        return Err(err(
            header_line,
            "header must be `label,t,c0,...`".to_string(),
        ));
    }
    for (k, name) in columns[2..].iter().enumerate() {
        if *name != format!("c{k}") {
            return Err(err(
                header_line,
                format!("expected column `c{k}`, found `{name}`"),
            ));
        }
    }
    let width = columns.len() - 2;

    let mut samples: Vec<Array2<f64>> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    let mut rows: Vec<f64> = Vec::new();
    let mut steps = 0usize;
    let mut label: Option<usize> = None;
    let mut horizon: Option<usize> = None;
    let mut block_start = 0usize;

    let mut finish = |rows: &mut Vec<f64>,
                      steps: &mut usize,
                      label: &mut Option<usize>,
                      line: usize|
     -> Result<()> {
        if *steps == 0 {
            return Ok(());
        }
        match horizon {
            None => horizon = Some(*steps),
            Some(h) if h != *steps => {
                return Err(err(
                    line,
                    format!("sample has {} steps, earlier samples have {h}", *steps),
                ))
            }
            _ => {}
        }
        samples.push(
            Array2::from_shape_vec((*steps, width), std::mem::take(rows)).expect("row-major"),
        );
        labels.push(label.take().expect("label set on first row"));
        *steps = 0;
        Ok(())
    };

    for (line_no, line) in lines {
        if line.is_empty() {
            finish(&mut rows, &mut steps, &mut label, block_start)?;
            continue;
        }
        if steps == 0 {
            block_start = line_no;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != width + 2 {
            return Err(err(
                line_no,
                format!("expected {} columns, found {}", width + 2, fields.len()),
            ));
        }
        let row_label = if fields[0].is_empty() {
            None
        } else {
            Some(fields[0].parse::<usize>().map_err(|_| {
                err(line_no, format!("unknown label `{}` (expected a non-negative integer)", fields[0]))
            })?)
        };
        match (steps, row_label, label) {
            (0, None, _) => {
                return Err(err(line_no, "first row of a sample must carry its label".into()))
            }
            (0, Some(l), _) => label = Some(l),
            (_, Some(l), Some(cur)) if l != cur => {
                return Err(err(
                    line_no,
                    format!("label {l} conflicts with sample label {cur}"),
                ))
            }
            _ => {}
        }
        let t: usize = fields[1]
            .parse()
            .map_err(|_| err(line_no, format!("invalid time step `{}`", fields[1])))?;
        if t != steps {
            return Err(err(line_no, format!("expected time step {steps}, found {t}")));
        }
        for f in &fields[2..] {
            let v: f64 = f
                .parse()
                .map_err(|_| err(line_no, format!("invalid current `{f}`")))?;
            if !v.is_finite() {
                return Err(err(line_no, format!("non-finite current `{f}`")));
            }
            rows.push(v);
        }
        steps += 1;
    }
    let last_line = text.lines().count();
    finish(&mut rows, &mut steps, &mut label, last_line.max(block_start))?;

    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    Ok(SyntheticDataset {
        horizon: horizon.unwrap_or(0),
        width,
        num_classes,
        samples,
        labels,
        source: format!("csv:{}", path.display()),
        seed: None,
    })
}

/// Writes a dataset in the format [`ingest_spike_csv`] reads.
pub fn write_spike_csv(dataset: &SyntheticDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("label,t");
    for c in 0..dataset.width {
        out.push_str(&format!(",c{c}"));
    }
    out.push('\n');
    for (k, (sample, label)) in dataset.samples.iter().zip(&dataset.labels).enumerate() {
        if k > 0 {
            out.push('\n');
        }
        for (t, row) in sample.outer_iter().enumerate() {
            if t == 0 {
                out.push_str(&label.to_string());
            }
            out.push_str(&format!(",{t}"));
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
    }
    fs::write(path, out).map_err(|e| PsuError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generators_are_balanced_and_deterministic() {
        for kind in [DatasetKind::TemporalXor, DatasetKind::LongLagRecall, DatasetKind::PoissonRate] {
            let a = generate_dataset(kind, 0, 100, kind.default_horizon()).unwrap();
            assert_eq!(a.class_counts(), vec![50, 50]);
            assert_eq!(a.width, kind.channels());
            let b = generate_dataset(kind, 0, 100, kind.default_horizon()).unwrap();
            assert_eq!(a, b);
            let c = generate_dataset(kind, 1, 100, kind.default_horizon()).unwrap();
            assert_ne!(a.samples, c.samples);
        }
    }

    #[test]
    fn poisson_rates_are_ordered() {
        let d = generate_dataset(DatasetKind::PoissonRate, 3, 400, 32).unwrap();
        let mut totals = [0.0f64; 2];
        for (x, &l) in d.samples.iter().zip(&d.labels) {
            totals[l] += x.sum() / d.width as f64;
        }
        let means = [totals[0] / 200.0, totals[1] / 200.0];
        assert!(means[0] < means[1]);
        assert!((means[0] - 5.0).abs() < 1.0 && (means[1] - 20.0).abs() < 2.0);
    }

    #[test]
    fn temporal_xor_follows_its_rule() {
        let d = generate_dataset(DatasetKind::TemporalXor, 7, 50, 16).unwrap();
        for (x, &label) in d.samples.iter().zip(&d.labels) {
            let late = |c: usize| (8..16).any(|t| x[[t, c]] > 1.5);
            assert_eq!(label, (late(0) as usize) ^ (late(1) as usize));
        }
    }

    #[test]
    fn csv_round_trip_and_empty_file() {
        let dir = tempfile::tempdir().unwrap();
        let empty = dir.path().join("empty.csv");
        fs::write(&empty, "").unwrap();
        let d = ingest_spike_csv(&empty).unwrap();
        assert!(d.is_empty());

        let one = dir.path().join("one.csv");
        fs::write(&one, "label,t,c0,c1\n1,0,0.5,1.0\n,1,0.0,2.5\n").unwrap();
        let d = ingest_spike_csv(&one).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.labels, vec![1]);
        assert_eq!(d.samples[0], ndarray::array![[0.5, 1.0], [0.0, 2.5]]);

        let src = generate_dataset(DatasetKind::LongLagRecall, 2, 6, 8).unwrap();
        let path = dir.path().join("rt.csv");
        write_spike_csv(&src, &path).unwrap();
        let back = ingest_spike_csv(&path).unwrap();
        assert_eq!(back.samples, src.samples);
        assert_eq!(back.labels, src.labels);
    }

    #[test]
    fn csv_errors_name_the_line() {
        let cases = [
            ("label,t,c0,c1\n0,0,1.0\n", 2, "columns"),
            ("label,t,c0\n0,0,1.0\n0,1,x\n", 3, "invalid current"),
            ("label,t,c0\n-1,0,1.0\n", 2, "unknown label"),
            ("label,t,c0\n0,0,1.0\n0,1,1.0\n\n1,0,1.0\n", 5, "steps"),
            ("label,t,c0\n0,1,1.0\n", 2, "time step"),
            ("lbl,t,c0\n", 1, "header"),
        ];
        for (text, line, needle) in cases {
            let e = parse_spike_csv(text, Path::new("x.csv")).unwrap_err();
            match &e {
                PsuError::Parse { line: l, message, .. } => {
                    assert_eq!(*l, line, "{text:?}: {e}");
                    assert!(message.contains(needle), "{message}");
                }
                other => panic!("unexpected {other}"),
            }
        }
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            ingest_spike_csv("/definitely/not/here.csv"),
            Err(PsuError::Io { .. })
        ));
    }
}
