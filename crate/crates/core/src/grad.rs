//! Surrogate spike derivatives and hand-written reverse-mode gradients for
//! the PSU family, plus a central-difference oracle to check them.
//!
//! The forward pass keeps the hard step `Θ`; backward substitutes the
//! surrogate derivative evaluated at the same pre-activation `V − v_th`.

use ndarray::{Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{PsuError, Result};
use crate::kernel::{
    apply_causal_mask, CurrentTensor, ForwardCache, KernelRole, NeuronConfig, Real, ResetMatrix,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurrogateKind {
    Atan,
    PiecewiseLinear,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurrogateConfig {
    pub kind: SurrogateKind,
    pub width: f64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self::atan()
    }
}

impl SurrogateConfig {
    pub fn new(kind: SurrogateKind, width: f64) -> Result<Self> {
        if !(width.is_finite() && width > 0.0) {
            return Err(PsuError::Domain(format!(
                "surrogate width must be finite and > 0, got {width}"
            )));
        }
        Ok(Self { kind, width })
    }

    pub fn atan() -> Self {
        Self {
            kind: SurrogateKind::Atan,
            width: 2.0,
        }
    }

    pub fn piecewise_linear() -> Self {
        Self {
            kind: SurrogateKind::PiecewiseLinear,
            width: 1.0,
        }
    }

    /// Smooth step whose derivative is [`surrogate_derivative`].
    pub fn primitive<F: Real>(&self, x: F) -> F {
        let w = F::of(self.width);
        let half = F::of(0.5);
        match self.kind {
            SurrogateKind::Atan => {
                let pi = F::of(std::f64::consts::PI);
                (pi * w * x * half).atan() / pi + half
            }
            SurrogateKind::PiecewiseLinear => {
                if x <= -w {
                    F::zero()
                } else if x < F::zero() {
                    (x + w) * (x + w) / (F::of(2.0) * w * w)
                } else if x < w {
                    F::one() - (w - x) * (w - x) / (F::of(2.0) * w * w)
                } else {
                    F::one()
                }
            }
        }
    }
}

/// Atan: `w / (2 (1 + (π w x / 2)²))`; piecewise linear: `max(0, 1 − |x|/w) / w`.
pub fn surrogate_derivative<F: Real>(cfg: &SurrogateConfig, x: F) -> F {
    let w = F::of(cfg.width);
    match cfg.kind {
        SurrogateKind::Atan => {
            let z = F::of(std::f64::consts::FRAC_PI_2) * w * x;
            w / (F::of(2.0) * (F::one() + z * z))
        }
        SurrogateKind::PiecewiseLinear => (F::one() - x.abs() / w).max(F::zero()) / w,
    }
}

/// Gradients of a scalar loss with respect to the input current and, when a
/// kernel is learnable, that kernel (masked to its lower triangle).
#[derive(Clone, Debug, PartialEq)]
pub struct GradientBundle<F> {
    pub d_input: Array2<F>,
    pub d_kernel: Option<Array2<F>>,
}

/// Reverse pass for `S = Θ(A_I·I − B·σ(A_R·I) − v_th)`.
///
/// `learnable` selects which kernel gradient is returned: `InputAware`
/// yields `∂L/∂A_I`, `ResetAware` yields `∂L/∂A_R`, `None` (plain PSU) skips it.
#[allow(clippy::too_many_arguments)]
pub fn psu_backward<F: Real>(
    cfg: &NeuronConfig,
    a_input: ArrayView2<'_, F>,
    a_reset: ArrayView2<'_, F>,
    reset: &ResetMatrix<F>,
    current: &CurrentTensor<F>,
    upstream: ArrayView2<'_, F>,
    surrogate: &SurrogateConfig,
    learnable: Option<KernelRole>,
) -> Result<GradientBundle<F>> {
    let cache = crate::kernel::forward::checked_variant(cfg, a_input, a_reset, reset.view(), current)?;
    if upstream.dim() != cache.membrane.dim() {
        return Err(PsuError::Shape(format!(
            "upstream gradient is {:?}, forward output is {:?}",
            upstream.dim(),
            cache.membrane.dim()
        )));
    }
    Ok(backward_from_cache(
        &cache,
        F::of(cfg.v_th),
        a_input,
        a_reset,
        reset.view(),
        current.view(),
        upstream,
        surrogate,
        learnable,
    ))
}

/// Unchecked core of [`psu_backward`] reusing forward intermediates.
#[allow(clippy::too_many_arguments)]
pub(crate) fn backward_from_cache<F: Real>(
    cache: &ForwardCache<F>,
    v_th: F,
    a_input: ArrayView2<'_, F>,
    a_reset: ArrayView2<'_, F>,
    reset: ArrayView2<'_, F>,
    current: ArrayView2<'_, F>,
    upstream: ArrayView2<'_, F>,
    surrogate: &SurrogateConfig,
    learnable: Option<KernelRole>,
) -> GradientBundle<F> {
    let mut g = Array2::zeros(cache.membrane.dim());
    Zip::from(&mut g)
        .and(&upstream)
        .and(&cache.membrane)
        .for_each(|g, &up, &v| *g = up * surrogate_derivative(surrogate, v - v_th));

    // Gradient reaching A_R·I through the sigmoid estimate: σ'(U_R) ⊙ (Bᵀ·G).
    let mut h = reset.t().dot(&g);
    Zip::from(&mut h)
        .and(&cache.estimate)
        .for_each(|h, &e| *h = *h * e * (F::one() - e));

    let mut d_input = a_input.t().dot(&g);
    d_input = d_input - a_reset.t().dot(&h);

    let d_kernel = learnable.map(|role| match role {
        KernelRole::InputAware => apply_causal_mask(&g.dot(&current.t())),
        KernelRole::ResetAware => apply_causal_mask(&h.dot(&current.t()).mapv(|v| -v)),
    });
    GradientBundle { d_input, d_kernel }
}

/// Forward pass with `Θ` replaced by the surrogate's smooth primitive. This is
/// the function whose exact gradient [`psu_backward`] computes.
pub fn smoothed_forward<F: Real>(
    cfg: &NeuronConfig,
    a_input: ArrayView2<'_, F>,
    a_reset: ArrayView2<'_, F>,
    reset: &ResetMatrix<F>,
    current: &CurrentTensor<F>,
    surrogate: &SurrogateConfig,
) -> Result<Array2<F>> {
    let cache = crate::kernel::forward::checked_variant(cfg, a_input, a_reset, reset.view(), current)?;
    let v_th = F::of(cfg.v_th);
    Ok(cache.membrane.mapv(|v| surrogate.primitive(v - v_th)))
}

/// Central differences `(f(x + h) − f(x − h)) / 2h` for every coordinate of `params`.
pub fn finite_difference_oracle(
    mut f: impl FnMut(&[f64]) -> f64,
    params: &[f64],
    step: f64,
) -> Vec<f64> {
    let mut probe = params.to_vec();
    (0..params.len())
        .map(|k| {
            let x = params[k];
            probe[k] = x + step;
            let plus = f(&probe);
            probe[k] = x - step;
            let minus = f(&probe);
            probe[k] = x;
            (plus - minus) / (2.0 * step)
        })
        .collect()
}

/// Norm-wise relative error `‖a − b‖ / max(‖a‖, ‖b‖)`; zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "relative_error needs equal lengths");
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let scale = a
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}
