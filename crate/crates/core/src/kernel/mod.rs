//! Leak/reset operators and forward passes for LIF, PSU, IPSU and RPSU neurons.
//!
//! All tensors are time-major `[T, N]`: row `t` holds every neuron's value at
//! step `t`, with `N` flattening batch and neuron dimensions. The parallel
//! forms reduce to `[T, T] x [T, N]` matrix products.

pub(crate) mod forward;
mod matrix;
mod tensor;

use std::fmt::{Debug, Display};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::{Deserialize, Serialize};

use crate::error::{PsuError, Result};

pub use forward::{
    lif_forward_serial, psu_forward, psu_forward_serial, sigmoid, variant_forward, heaviside,
    ForwardCache,
};
pub use matrix::{
    apply_causal_mask, build_leak_matrix, build_reset_matrix, check_lower_triangular,
    is_lower_triangular, KernelRole, LeakMatrix, LearnableKernel, ResetMatrix,
};
pub use tensor::{firing_rate, CurrentTensor, MembraneTrace, SpikeTensor};

/// Floating-point element type the kernels are generic over (`f32` or `f64`).
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + LinalgScalar
    + ScalarOperand
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`; infallible for finite inputs.
    fn of(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("f64 converts to every Real type")
    }

    fn as_f64(self) -> f64 {
        <Self as ToPrimitive>::to_f64(&self).expect("Real converts to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ResetMode {
    Hard,
    #[default]
    Soft,
}

/// Hyperparameters shared by every neuron kernel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeuronConfig {
    pub tau: f64,
    pub v_th: f64,
    pub reset_mode: ResetMode,
    pub horizon: usize,
}

impl Default for NeuronConfig {
    fn default() -> Self {
        Self {
            tau: 2.0,
            v_th: 1.0,
            reset_mode: ResetMode::Soft,
            horizon: 8,
        }
    }
}

impl NeuronConfig {
    pub fn new(tau: f64, v_th: f64, reset_mode: ResetMode, horizon: usize) -> Result<Self> {
        let cfg = Self {
            tau,
            v_th,
            reset_mode,
            horizon,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Soft-reset configuration with the given horizon and default `tau`/`v_th`.
    pub fn with_horizon(horizon: usize) -> Result<Self> {
        Self::new(2.0, 1.0, ResetMode::Soft, horizon)
    }

    pub fn validate(&self) -> Result<()> {
        check_tau(self.tau)?;
        check_horizon(self.horizon)?;
        if !(self.v_th.is_finite() && self.v_th > 0.0) {
            return Err(PsuError::Domain(format!(
                "v_th must be finite and > 0, got {}",
                self.v_th
            )));
        }
        Ok(())
    }

    /// Per-step retention factor `1 - 1/tau`.
    pub fn decay(&self) -> f64 {
        1.0 - 1.0 / self.tau
    }
}

pub(crate) fn check_tau(tau: f64) -> Result<()> {
    if tau.is_finite() && tau > 1.0 {
        Ok(())
    } else {
        Err(PsuError::Domain(format!("tau must be finite and > 1, got {tau}")))
    }
}

pub(crate) fn check_horizon(horizon: usize) -> Result<()> {
    if horizon >= 1 {
        Ok(())
    } else {
        Err(PsuError::Domain("horizon must be at least 1".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_rejects_bad_parameters() {
        assert!(NeuronConfig::new(1.0, 1.0, ResetMode::Soft, 4).is_err());
        assert!(NeuronConfig::new(0.5, 1.0, ResetMode::Soft, 4).is_err());
        assert!(NeuronConfig::new(-2.0, 1.0, ResetMode::Soft, 4).is_err());
        assert!(NeuronConfig::new(2.0, 0.0, ResetMode::Soft, 4).is_err());
        assert!(NeuronConfig::new(2.0, f64::INFINITY, ResetMode::Soft, 4).is_err());
        assert!(NeuronConfig::new(2.0, 1.0, ResetMode::Soft, 0).is_err());
        assert!(NeuronConfig::new(1.0001, 0.1, ResetMode::Hard, 1).is_ok());
    }

    #[test]
    fn defaults() {
        let cfg = NeuronConfig::default();
        assert_eq!(cfg.tau, 2.0);
        assert_eq!(cfg.v_th, 1.0);
        assert_eq!(cfg.reset_mode, ResetMode::Soft);
        assert_eq!(cfg.decay(), 0.5);
    }
}
