use ndarray::{Array2, Array3, ArrayD, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PsuError, Result};
use crate::kernel::Real;

/// Shape of a layer's synaptic projection `I = W·X`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SynapseSpec {
    Dense {
        in_width: usize,
        out_width: usize,
    },
    /// Same-padded 1-D convolution over a `[channels, length]` feature row,
    /// applied independently at every time step.
    Conv1d {
        channels_in: usize,
        channels_out: usize,
        length: usize,
        kernel_size: usize,
    },
}

impl SynapseSpec {
    pub fn in_width(&self) -> usize {
        match *self {
            Self::Dense { in_width, .. } => in_width,
            Self::Conv1d {
                channels_in,
                length,
                ..
            } => channels_in * length,
        }
    }

    pub fn out_width(&self) -> usize {
        match *self {
            Self::Dense { out_width, .. } => out_width,
            Self::Conv1d {
                channels_out,
                length,
                ..
            } => channels_out * length,
        }
    }

    pub(crate) fn weight_shape(&self) -> Vec<usize> {
        match *self {
            Self::Dense {
                in_width,
                out_width,
            } => vec![out_width, in_width],
            Self::Conv1d {
                channels_in,
                channels_out,
                kernel_size,
                ..
            } => vec![channels_out, channels_in, kernel_size],
        }
    }

    fn fan_in(&self) -> usize {
        match *self {
            Self::Dense { in_width, .. } => in_width,
            Self::Conv1d {
                channels_in,
                kernel_size,
                ..
            } => channels_in * kernel_size,
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::Dense {
                in_width,
                out_width,
            } => in_width > 0 && out_width > 0,
            Self::Conv1d {
                channels_in,
                channels_out,
                length,
                kernel_size,
            } => {
                channels_in > 0
                    && channels_out > 0
                    && length > 0
                    && kernel_size > 0
                    && kernel_size % 2 == 1
            }
        };
        if ok {
            Ok(())
        } else {
            Err(PsuError::Config(format!(
                "invalid synapse {self:?} (sizes must be positive, conv kernels odd)"
            )))
        }
    }
}

/// Synaptic weights. Dense weights are `[out, in]`; convolution weights are
/// `[channels_out, channels_in, kernel_size]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Synapse<F> {
    spec: SynapseSpec,
    weight: ArrayD<F>,
}

impl<F: Real> Synapse<F> {
    /// Uniform fan-in scaled init in `[-gain/sqrt(fan_in), gain/sqrt(fan_in)]`.
    pub fn init(spec: SynapseSpec, gain: f64, rng: &mut impl Rng) -> Result<Self> {
        spec.validate()?;
        let bound = gain / (spec.fan_in() as f64).sqrt();
        let weight = ArrayD::from_shape_simple_fn(spec.weight_shape(), || {
            F::of(rng.random_range(-bound..=bound))
        });
        Ok(Self { spec, weight })
    }

    pub fn from_weight(spec: SynapseSpec, weight: ArrayD<F>) -> Result<Self> {
        spec.validate()?;
        if weight.shape() != spec.weight_shape().as_slice() {
            return Err(PsuError::Shape(format!(
                "weight shape {:?} does not match {spec:?}",
                weight.shape()
            )));
        }
        if weight.iter().any(|w| !w.is_finite()) {
            return Err(PsuError::InvalidValue("non-finite synaptic weight".into()));
        }
        Ok(Self { spec, weight })
    }

    pub fn spec(&self) -> SynapseSpec {
        self.spec
    }

    pub fn weight(&self) -> &ArrayD<F> {
        &self.weight
    }

    pub(crate) fn weight_mut(&mut self) -> &mut ArrayD<F> {
        &mut self.weight
    }

    fn dense_weight(&self) -> ArrayView2<'_, F> {
        self.weight
            .view()
            .into_dimensionality()
            .expect("dense weight is 2-D")
    }

    /// `x` is `[rows, in_width]`; returns `[rows, out_width]`.
    pub fn forward(&self, x: ArrayView2<'_, F>) -> Array2<F> {
        match self.spec {
            SynapseSpec::Dense { .. } => x.dot(&self.dense_weight().t()),
            SynapseSpec::Conv1d {
                channels_in,
                channels_out,
                length,
                kernel_size,
            } => {
                let w: Array3<F> = self
                    .weight
                    .clone()
                    .into_dimensionality()
                    .expect("conv weight is 3-D");
                let pad = kernel_size / 2;
                let mut out = Array2::zeros((x.nrows(), channels_out * length));
                for (row, mut out_row) in x.outer_iter().zip(out.outer_iter_mut()) {
                    for co in 0..channels_out {
                        for l in 0..length {
                            let mut acc = F::zero();
                            for ci in 0..channels_in {
                                for k in 0..kernel_size {
                                    let pos = l + k;
                                    if pos < pad || pos - pad >= length {
                                        continue;
                                    }
                                    acc = acc + w[[co, ci, k]] * row[ci * length + pos - pad];
                                }
                            }
                            out_row[co * length + l] = acc;
                        }
                    }
                }
                out
            }
        }
    }

    /// Returns `(∂L/∂W, ∂L/∂x)` given the forward input and `∂L/∂out`.
    pub fn backward(&self, x: ArrayView2<'_, F>, d_out: ArrayView2<'_, F>) -> (ArrayD<F>, Array2<F>) {
        match self.spec {
            SynapseSpec::Dense { .. } => {
                let d_w = d_out.t().dot(&x).into_dyn();
                let d_x = d_out.dot(&self.dense_weight());
                (d_w, d_x)
            }
            SynapseSpec::Conv1d {
                channels_in,
                channels_out,
                length,
                kernel_size,
            } => {
                let w: Array3<F> = self
                    .weight
                    .clone()
                    .into_dimensionality()
                    .expect("conv weight is 3-D");
                let pad = kernel_size / 2;
                let mut d_w = Array3::<F>::zeros((channels_out, channels_in, kernel_size));
                let mut d_x = Array2::zeros(x.raw_dim());
                for ((row, d_row), mut dx_row) in x
                    .outer_iter()
                    .zip(d_out.outer_iter())
                    .zip(d_x.outer_iter_mut())
                {
                    for co in 0..channels_out {
                        for l in 0..length {
                            let g = d_row[co * length + l];
                            if g == F::zero() {
                                continue;
                            }
                            for ci in 0..channels_in {
                                for k in 0..kernel_size {
                                    let pos = l + k;
                                    if pos < pad || pos - pad >= length {
                                        continue;
                                    }
                                    let idx = ci * length + pos - pad;
                                    d_w[[co, ci, k]] = d_w[[co, ci, k]] + g * row[idx];
                                    dx_row[idx] = dx_row[idx] + g * w[[co, ci, k]];
                                }
                            }
                        }
                    }
                }
                (d_w.into_dyn(), d_x)
            }
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.weight.len()
    }
}
