use ndarray::{Array1, Array2, ArrayView2, Zip};

use super::{
    check_lower_triangular, CurrentTensor, LeakMatrix, MembraneTrace, NeuronConfig, Real,
    ResetMatrix, ResetMode, SpikeTensor,
};
use crate::error::{PsuError, Result};

/// Step function with `heaviside(0) = 1`.
#[inline]
pub fn heaviside<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one()
    } else {
        F::zero()
    }
}

#[inline]
pub fn sigmoid<F: Real>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

/// Intermediates of a parallel PSU-family forward pass, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache<F> {
    /// `A_I · I`
    pub u_input: Array2<F>,
    /// `A_R · I`; `None` when `A_R` is the same operator as `A_I`.
    pub u_reset: Option<Array2<F>>,
    /// `σ(A_R · I)`
    pub estimate: Array2<F>,
    pub membrane: Array2<F>,
    pub spikes: Array2<F>,
}

impl<F: Real> ForwardCache<F> {
    pub fn u_reset(&self) -> &Array2<F> {
        self.u_reset.as_ref().unwrap_or(&self.u_input)
    }
}

fn check_current<F: Real>(cfg: &NeuronConfig, current: &CurrentTensor<F>) -> Result<()> {
    if current.horizon() != cfg.horizon {
        return Err(PsuError::Shape(format!(
            "current has {} steps, config horizon is {}",
            current.horizon(),
            cfg.horizon
        )));
    }
    Ok(())
}

fn check_square<F: Real>(name: &str, m: ArrayView2<'_, F>, horizon: usize) -> Result<()> {
    if m.dim() != (horizon, horizon) {
        return Err(PsuError::Shape(format!(
            "{name} is [{}, {}], expected [{horizon}, {horizon}]",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

/// One soft/hard-reset LIF update over a row of neurons. `membrane` carries the
/// post-reset state in and out; `trace` receives the pre-reset potential.
#[inline]
pub(crate) fn lif_step<F: Real>(
    membrane: &mut [F],
    input: &[F],
    spikes: &mut [F],
    mut trace: Option<&mut [F]>,
    inv_tau: F,
    v_th: F,
    reset: ResetMode,
) {
    for n in 0..membrane.len() {
        let v = membrane[n] + (input[n] - membrane[n]) * inv_tau;
        if let Some(tr) = trace.as_deref_mut() {
            tr[n] = v;
        }
        let s = heaviside(v - v_th);
        spikes[n] = s;
        membrane[n] = match reset {
            ResetMode::Soft => v - v_th * s,
            ResetMode::Hard => v * (F::one() - s),
        };
    }
}

/// Reference LIF neuron, one step at a time from `V[0] = 0`.
///
/// Returns the spikes and the membrane potential at each step before reset.
pub fn lif_forward_serial<F: Real>(
    cfg: &NeuronConfig,
    current: &CurrentTensor<F>,
) -> Result<(SpikeTensor<F>, MembraneTrace<F>)> {
    cfg.validate()?;
    check_current(cfg, current)?;
    let (t_len, width) = (current.horizon(), current.width());
    let inv_tau = F::of(1.0 / cfg.tau);
    let v_th = F::of(cfg.v_th);
    let mut state = vec![F::zero(); width];
    let mut spikes = Array2::zeros((t_len, width));
    let mut trace = Array2::zeros((t_len, width));
    let input = current.view();
    for t in 0..t_len {
        let row = input.row(t).to_vec();
        let mut s_row = spikes.row_mut(t);
        let mut v_row = trace.row_mut(t);
        lif_step(
            &mut state,
            &row,
            s_row.as_slice_mut().expect("standard layout"),
            Some(v_row.as_slice_mut().expect("standard layout")),
            inv_tau,
            v_th,
            cfg.reset_mode,
        );
    }
    Ok((
        SpikeTensor::from_binary(spikes),
        MembraneTrace::from_array(trace),
    ))
}

/// Unchecked parallel pass: `V = A_I·I − B·σ(A_R·I)`, `S = Θ(V − v_th)`.
pub(crate) fn parallel_forward<F: Real>(
    v_th: F,
    a_input: ArrayView2<'_, F>,
    a_reset: Option<ArrayView2<'_, F>>,
    reset: ArrayView2<'_, F>,
    current: ArrayView2<'_, F>,
) -> ForwardCache<F> {
    let u_input = a_input.dot(&current);
    let u_reset = a_reset.map(|a| a.dot(&current));
    let estimate = u_reset.as_ref().unwrap_or(&u_input).mapv(sigmoid);
    let mut membrane = reset.dot(&estimate);
    Zip::from(&mut membrane)
        .and(&u_input)
        .for_each(|v, &u| *v = u - *v);
    let spikes = membrane.mapv(|v| heaviside(v - v_th));
    ForwardCache {
        u_input,
        u_reset,
        estimate,
        membrane,
        spikes,
    }
}

/// Parallel spiking unit: all `T` steps from three matrix products, no step-to-step dependence.
pub fn psu_forward<F: Real>(
    cfg: &NeuronConfig,
    leak: &LeakMatrix<F>,
    reset: &ResetMatrix<F>,
    current: &CurrentTensor<F>,
) -> Result<(SpikeTensor<F>, MembraneTrace<F>)> {
    cfg.validate()?;
    check_current(cfg, current)?;
    check_square("leak matrix", leak.view(), cfg.horizon)?;
    check_square("reset matrix", reset.view(), cfg.horizon)?;
    let cache = parallel_forward(
        F::of(cfg.v_th),
        leak.view(),
        None,
        reset.view(),
        current.view(),
    );
    Ok((
        SpikeTensor::from_binary(cache.spikes),
        MembraneTrace::from_array(cache.membrane),
    ))
}

/// IPSU/RPSU forward with separate input-branch and reset-branch kernels.
///
/// IPSU passes its learnable kernel as `a_input` and the analytic leak matrix
/// as `a_reset`; RPSU does the reverse.
pub fn variant_forward<F: Real>(
    cfg: &NeuronConfig,
    a_input: ArrayView2<'_, F>,
    a_reset: ArrayView2<'_, F>,
    reset: &ResetMatrix<F>,
    current: &CurrentTensor<F>,
) -> Result<(SpikeTensor<F>, MembraneTrace<F>)> {
    let cache = checked_variant(cfg, a_input, a_reset, reset.view(), current)?;
    Ok((
        SpikeTensor::from_binary(cache.spikes),
        MembraneTrace::from_array(cache.membrane),
    ))
}

pub(crate) fn checked_variant<F: Real>(
    cfg: &NeuronConfig,
    a_input: ArrayView2<'_, F>,
    a_reset: ArrayView2<'_, F>,
    reset: ArrayView2<'_, F>,
    current: &CurrentTensor<F>,
) -> Result<ForwardCache<F>> {
    cfg.validate()?;
    check_current(cfg, current)?;
    check_square("input kernel", a_input, cfg.horizon)?;
    check_square("reset kernel", a_reset, cfg.horizon)?;
    check_square("reset matrix", reset, cfg.horizon)?;
    check_lower_triangular(a_input)?;
    check_lower_triangular(a_reset)?;
    Ok(parallel_forward(
        F::of(cfg.v_th),
        a_input,
        Some(a_reset),
        reset,
        current.view(),
    ))
}

/// Step-serial evaluation of the PSU family for inference.
///
/// Step `t` reads only kernel rows `<= t` and inputs `I[0..=t]`; the spike
/// estimates of earlier steps are the only carried state.
pub fn psu_forward_serial<F: Real>(
    cfg: &NeuronConfig,
    a_input: ArrayView2<'_, F>,
    a_reset: ArrayView2<'_, F>,
    reset: &ResetMatrix<F>,
    current: &CurrentTensor<F>,
) -> Result<(SpikeTensor<F>, MembraneTrace<F>)> {
    cfg.validate()?;
    check_current(cfg, current)?;
    let t_len = cfg.horizon;
    check_square("input kernel", a_input, t_len)?;
    check_square("reset kernel", a_reset, t_len)?;
    check_square("reset matrix", reset.view(), t_len)?;
    check_lower_triangular(a_input)?;
    check_lower_triangular(a_reset)?;

    let width = current.width();
    let v_th = F::of(cfg.v_th);
    let input = current.view();
    let b = reset.view();
    let mut estimates: Array2<F> = Array2::zeros((t_len, width));
    let mut spikes = Array2::zeros((t_len, width));
    let mut trace = Array2::zeros((t_len, width));
    let mut integrated = Array1::zeros(width);
    let mut estimate_in = Array1::zeros(width);
    let mut reset_loss = Array1::zeros(width);

    for t in 0..t_len {
        integrated.fill(F::zero());
        estimate_in.fill(F::zero());
        reset_loss.fill(F::zero());
        for j in 0..=t {
            integrated.scaled_add(a_input[[t, j]], &input.row(j));
            estimate_in.scaled_add(a_reset[[t, j]], &input.row(j));
        }
        for j in 0..t {
            reset_loss.scaled_add(b[[t, j]], &estimates.row(j));
        }
        estimates.row_mut(t).assign(&estimate_in.mapv(sigmoid));
        let mut v_row = trace.row_mut(t);
        Zip::from(&mut v_row)
            .and(&integrated)
            .and(&reset_loss)
            .for_each(|v, &u, &r| *v = u - r);
        spikes
            .row_mut(t)
            .assign(&v_row.mapv(|v| heaviside(v - v_th)));
    }
    Ok((
        SpikeTensor::from_binary(spikes),
        MembraneTrace::from_array(trace),
    ))
}
