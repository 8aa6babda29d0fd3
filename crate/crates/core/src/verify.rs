//! Self-check suite run by `psu verify`. Every property is evaluated in f64
//! on random instances at the configured horizon and width.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::grad::{
    finite_difference_oracle, psu_backward, relative_error, smoothed_forward, SurrogateConfig,
};
use crate::kernel::{
    apply_causal_mask, build_leak_matrix, build_reset_matrix, heaviside, is_lower_triangular,
    lif_forward_serial, psu_forward_serial, variant_forward, CurrentTensor, KernelRole,
    NeuronConfig, ResetMode,
};

/// Parallel outputs closer than this to the threshold are skipped in the
/// agreement check, where rounding may legitimately flip a spike.
pub const BOUNDARY_GUARD: f64 = 1e-6;
pub const MATRIX_TOL: f64 = 1e-12;
pub const NO_SPIKE_TOL: f64 = 1e-10;
pub const GRADIENT_TOL: f64 = 1e-4;

#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub trials: usize,
    /// Worst observed error (or violation count) for the property.
    pub metric: f64,
    pub threshold: f64,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct VerifyReport {
    pub horizon: usize,
    pub width: usize,
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&str> {
        self.checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.name.as_str())
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct VerifyOptions {
    pub trials: usize,
    pub width: usize,
    pub gradient_instances: usize,
    pub seed: u64,
    pub surrogate: SurrogateConfig,
}

pub fn run_suite(cfg: &NeuronConfig, opts: &VerifyOptions) -> Result<VerifyReport> {
    cfg.validate()?;
    let cfg = NeuronConfig {
        reset_mode: ResetMode::Soft,
        ..*cfg
    };
    let mut checks = vec![
        matrix_construction(&cfg)?,
        no_spike_equivalence(&cfg, opts)?,
        parallel_serial_agreement(&cfg, opts)?,
        causality(&cfg, opts)?,
        gradient_check(&cfg, opts)?,
    ];
    if cfg.horizon == 1 {
        checks.push(degenerate_horizon(&cfg, opts)?);
    }
    Ok(VerifyReport {
        horizon: cfg.horizon,
        width: opts.width,
        checks,
    })
}

fn check(name: &str, trials: usize, metric: f64, threshold: f64, passed: bool, detail: String) -> CheckResult {
    CheckResult {
        name: name.to_string(),
        passed,
        trials,
        metric,
        threshold,
        detail,
    }
}

/// Columns of A and B against impulse responses stepped through the recurrence.
fn matrix_construction(cfg: &NeuronConfig) -> Result<CheckResult> {
    let t_len = cfg.horizon;
    let a = build_leak_matrix::<f64>(cfg.tau, t_len)?;
    let b = build_reset_matrix::<f64>(cfg.tau, cfg.v_th, t_len)?;
    let mut worst: f64 = 0.0;
    for j in 0..t_len {
        // Unit current at step j, no threshold reachable.
        let mut membrane = 0.0;
        // Potential lost to one soft reset at step j.
        let mut loss = 0.0;
        for i in 0..t_len {
            let input = if i == j { 1.0 } else { 0.0 };
            membrane += (input - membrane) / cfg.tau;
            if i > j {
                loss -= loss / cfg.tau;
            }
            let expected_b = if i > j { loss } else { 0.0 };
            worst = worst
                .max((a.entries()[[i, j]] - membrane).abs())
                .max((b.entries()[[i, j]] - expected_b).abs());
            if i == j {
                loss = cfg.v_th;
            }
        }
    }
    let strict = (0..t_len).all(|i| b.entries()[[i, i]] == 0.0);
    let shape_ok = is_lower_triangular(a.view()) && is_lower_triangular(b.view()) && strict;
    Ok(check(
        "matrix_construction",
        t_len,
        worst,
        MATRIX_TOL,
        worst < MATRIX_TOL && shape_ok,
        format!("max column deviation {worst:.3e}, triangular structure ok: {shape_ok}"),
    ))
}

/// Below threshold the serial LIF trace must equal `A·I`.
fn no_spike_equivalence(cfg: &NeuronConfig, opts: &VerifyOptions) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x01);
    let a = build_leak_matrix::<f64>(cfg.tau, cfg.horizon)?;
    let mut worst: f64 = 0.0;
    let mut fired = 0;
    for _ in 0..opts.trials {
        // Rows of A sum to < 1, so |I| < 0.9·v_th keeps |V| below threshold.
        let current = random_current(&mut rng, cfg.horizon, opts.width, -0.9 * cfg.v_th, 0.9 * cfg.v_th)?;
        let (spikes, trace) = lif_forward_serial(cfg, &current)?;
        fired += spikes.count();
        let expected = a.entries().dot(&current.view());
        worst = worst.max(max_abs_diff(&trace.view().to_owned(), &expected));
    }
    Ok(check(
        "no_spike_equivalence",
        opts.trials,
        worst,
        NO_SPIKE_TOL,
        worst < NO_SPIKE_TOL && fired == 0,
        format!("max |V_serial - A·I| {worst:.3e}, spikes emitted {fired}"),
    ))
}

fn random_kernels(
    rng: &mut ChaCha8Rng,
    analytic: &Array2<f64>,
    role: Option<KernelRole>,
) -> (Array2<f64>, Array2<f64>) {
    let t = analytic.nrows();
    let perturbed = apply_causal_mask(&Array2::from_shape_fn((t, t), |(i, j)| {
        analytic[[i, j]] + rng.random_range(-0.3..0.3)
    }));
    match role {
        None => (analytic.clone(), analytic.clone()),
        Some(KernelRole::InputAware) => (perturbed, analytic.clone()),
        Some(KernelRole::ResetAware) => (analytic.clone(), perturbed),
    }
}

const ROLES: [Option<KernelRole>; 3] = [None, Some(KernelRole::InputAware), Some(KernelRole::ResetAware)];

fn role_name(role: Option<KernelRole>) -> &'static str {
    match role {
        None => "psu",
        Some(KernelRole::InputAware) => "ipsu",
        Some(KernelRole::ResetAware) => "rpsu",
    }
}

/// Parallel and step-serial evaluations must emit identical spikes.
fn parallel_serial_agreement(cfg: &NeuronConfig, opts: &VerifyOptions) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x02);
    let a = build_leak_matrix::<f64>(cfg.tau, cfg.horizon)?;
    let b = build_reset_matrix::<f64>(cfg.tau, cfg.v_th, cfg.horizon)?;
    let (mut compared, mut skipped, mut mismatched) = (0usize, 0usize, 0usize);
    for trial in 0..opts.trials {
        let role = ROLES[trial % ROLES.len()];
        let (a_i, a_r) = random_kernels(&mut rng, a.entries(), role);
        let current = random_current(&mut rng, cfg.horizon, opts.width, -cfg.v_th, 4.0 * cfg.v_th)?;
        let (sp, vp) = variant_forward(cfg, a_i.view(), a_r.view(), &b, &current)?;
        if vp.view().iter().any(|v| (v - cfg.v_th).abs() <= BOUNDARY_GUARD) {
            skipped += 1;
            continue;
        }
        let (ss, _) = psu_forward_serial(cfg, a_i.view(), a_r.view(), &b, &current)?;
        compared += 1;
        if sp.view() != ss.view() {
            mismatched += 1;
        }
    }
    Ok(check(
        "parallel_serial_agreement",
        compared,
        mismatched as f64,
        0.0,
        mismatched == 0 && compared > 0,
        format!("{compared} compared, {skipped} skipped by boundary guard, {mismatched} mismatched"),
    ))
}

/// Perturbing step `t0` must leave every output before `t0` bit-identical.
fn causality(cfg: &NeuronConfig, opts: &VerifyOptions) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x03);
    let a = build_leak_matrix::<f64>(cfg.tau, cfg.horizon)?;
    let b = build_reset_matrix::<f64>(cfg.tau, cfg.v_th, cfg.horizon)?;
    let mut violations = 0usize;
    let mut per_role = [0usize; 3];
    for trial in 0..opts.trials {
        let slot = trial % ROLES.len();
        let role = ROLES[slot];
        let (a_i, a_r) = random_kernels(&mut rng, a.entries(), role);
        let current = random_current(&mut rng, cfg.horizon, opts.width, -cfg.v_th, 4.0 * cfg.v_th)?;
        let t0 = rng.random_range(0..cfg.horizon);
        let mut bumped = current.view().to_owned();
        for v in bumped.row_mut(t0).iter_mut() {
            *v += rng.random_range(0.5..5.0);
        }
        let bumped = CurrentTensor::new(bumped)?;
        let (s0, v0) = variant_forward(cfg, a_i.view(), a_r.view(), &b, &current)?;
        let (s1, v1) = variant_forward(cfg, a_i.view(), a_r.view(), &b, &bumped)?;
        for t in 0..t0 {
            if s0.view().row(t) != s1.view().row(t) || v0.view().row(t) != v1.view().row(t) {
                violations += 1;
                per_role[slot] += 1;
                break;
            }
        }
    }
    Ok(check(
        "causality",
        opts.trials,
        violations as f64,
        0.0,
        violations == 0,
        format!(
            "violations psu={} ipsu={} rpsu={}",
            per_role[0], per_role[1], per_role[2]
        ),
    ))
}

/// Analytic gradients against central differences of the smoothed forward.
fn gradient_check(cfg: &NeuronConfig, opts: &VerifyOptions) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x04);
    let t = cfg.horizon;
    let n = opts.width.clamp(1, 3);
    let a = build_leak_matrix::<f64>(cfg.tau, t)?;
    let b = build_reset_matrix::<f64>(cfg.tau, cfg.v_th, t)?;
    let mut worst: f64 = 0.0;
    let mut upper_nonzero = 0usize;
    let mut worst_role = "";
    for k in 0..opts.gradient_instances {
        let role = ROLES[k % ROLES.len()];
        let (a_i, a_r) = random_kernels(&mut rng, a.entries(), role);
        let x: Vec<f64> = (0..t * n).map(|_| rng.random_range(-cfg.v_th..4.0 * cfg.v_th)).collect();
        let up = Array2::from_shape_fn((t, n), |_| rng.random_range(-1.0..1.0));
        let current = CurrentTensor::from_shape_vec(t, n, x.clone())?;
        let g = psu_backward(cfg, a_i.view(), a_r.view(), &b, &current, up.view(), &opts.surrogate, role)?;
        let loss = |a_i: &Array2<f64>, a_r: &Array2<f64>, x: &[f64]| -> f64 {
            let c = CurrentTensor::from_shape_vec(t, n, x.to_vec()).expect("shape fixed");
            let s = smoothed_forward(cfg, a_i.view(), a_r.view(), &b, &c, &opts.surrogate)
                .expect("validated inputs");
            (&s * &up).sum()
        };
        let fd = finite_difference_oracle(|p| loss(&a_i, &a_r, p), &x, 1e-4);
        let mut err = relative_error(&fd, g.d_input.as_slice().expect("standard layout"));
        if let (Some(r), Some(dk)) = (role, g.d_kernel.as_ref()) {
            let lower: Vec<(usize, usize)> = (0..t).flat_map(|i| (0..=i).map(move |j| (i, j))).collect();
            let base = if r == KernelRole::InputAware { &a_i } else { &a_r };
            let params: Vec<f64> = lower.iter().map(|&(i, j)| base[[i, j]]).collect();
            let fd_k = finite_difference_oracle(
                |p| {
                    let mut m = Array2::zeros((t, t));
                    for (&(i, j), v) in lower.iter().zip(p) {
                        m[[i, j]] = *v;
                    }
                    match r {
                        KernelRole::InputAware => loss(&m, &a_r, &x),
                        KernelRole::ResetAware => loss(&a_i, &m, &x),
                    }
                },
                &params,
                1e-4,
            );
            let analytic: Vec<f64> = lower.iter().map(|&(i, j)| dk[[i, j]]).collect();
            err = err.max(relative_error(&fd_k, &analytic));
            upper_nonzero += dk
                .indexed_iter()
                .filter(|((i, j), v)| j > i && **v != 0.0)
                .count();
        }
        if err > worst {
            worst = err;
            worst_role = role_name(role);
        }
    }
    Ok(check(
        "gradient_check",
        opts.gradient_instances,
        worst,
        GRADIENT_TOL,
        worst < GRADIENT_TOL && upper_nonzero == 0,
        format!("max relative error {worst:.3e} ({worst_role}), nonzero upper-triangle entries {upper_nonzero}"),
    ))
}

/// At `T = 1`: `A = [1/τ]`, `B = [0]`, and spikes are `Θ(I/τ − v_th)`.
fn degenerate_horizon(cfg: &NeuronConfig, opts: &VerifyOptions) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x05);
    let a = build_leak_matrix::<f64>(cfg.tau, 1)?;
    let b = build_reset_matrix::<f64>(cfg.tau, cfg.v_th, 1)?;
    let mut worst = (a.entries()[[0, 0]] - 1.0 / cfg.tau).abs() + b.entries()[[0, 0]].abs();
    let mut mismatched = 0;
    for trial in 0..opts.trials {
        let role = ROLES[trial % ROLES.len()];
        let (a_i, a_r) = random_kernels(&mut rng, a.entries(), role);
        let current = random_current(&mut rng, 1, opts.width, -cfg.v_th, 4.0 * cfg.v_th)?;
        let (s, v) = variant_forward(cfg, a_i.view(), a_r.view(), &b, &current)?;
        for (k, &x) in current.view().row(0).iter().enumerate() {
            let expected = a_i[[0, 0]] * x;
            worst = worst.max((v.view()[[0, k]] - expected).abs());
            if s.view()[[0, k]] != heaviside(expected - cfg.v_th) {
                mismatched += 1;
            }
        }
    }
    Ok(check(
        "degenerate_horizon",
        opts.trials,
        worst,
        MATRIX_TOL,
        worst < MATRIX_TOL && mismatched == 0,
        format!("max deviation {worst:.3e}, spike mismatches {mismatched}"),
    ))
}

fn random_current(rng: &mut ChaCha8Rng, t: usize, n: usize, lo: f64, hi: f64) -> Result<CurrentTensor<f64>> {
    CurrentTensor::new(Array2::from_shape_fn((t, n), |_| rng.random_range(lo..hi)))
}

fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
