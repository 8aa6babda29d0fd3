use ndarray::{Array1, Array2, ArrayD, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::synapse::{Synapse, SynapseSpec};
use crate::error::{PsuError, Result};
use crate::grad::{backward_from_cache, SurrogateConfig};
use crate::kernel::forward::{lif_step, parallel_forward};
use crate::kernel::{
    build_leak_matrix, build_reset_matrix, lif_forward_serial, CurrentTensor, ForwardCache,
    KernelRole, LeakMatrix, LearnableKernel, NeuronConfig, Real, ResetMatrix, ResetMode,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NeuronKind {
    Lif,
    Psu,
    Ipsu,
    Rpsu,
}

impl NeuronKind {
    pub const ALL: [NeuronKind; 4] = [Self::Lif, Self::Psu, Self::Ipsu, Self::Rpsu];

    pub fn learnable_role(self) -> Option<KernelRole> {
        match self {
            Self::Ipsu => Some(KernelRole::InputAware),
            Self::Rpsu => Some(KernelRole::ResetAware),
            Self::Lif | Self::Psu => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Lif => "lif",
            Self::Psu => "psu",
            Self::Ipsu => "ipsu",
            Self::Rpsu => "rpsu",
        }
    }
}

impl std::fmt::Display for NeuronKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for NeuronKind {
    type Err = PsuError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lif" => Ok(Self::Lif),
            "psu" => Ok(Self::Psu),
            "ipsu" => Ok(Self::Ipsu),
            "rpsu" => Ok(Self::Rpsu),
            other => Err(PsuError::Config(format!("unknown neuron kind `{other}`"))),
        }
    }
}

/// How the final layer's activity over `T` steps becomes class scores.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeMode {
    /// Spike count of each output neuron.
    RateSum,
    /// Membrane of a non-spiking readout (infinite threshold, no reset) at the last step.
    LastMembrane,
}

/// `outputs` is `[T, batch * classes]`; returns `[batch, classes]`.
pub fn decode_output<F: Real>(outputs: ArrayView2<'_, F>, batch: usize, mode: DecodeMode) -> Array2<F> {
    let t_len = outputs.nrows();
    let classes = outputs.ncols().checked_div(batch).unwrap_or(0);
    let flat: Array1<F> = match mode {
        DecodeMode::RateSum => outputs.sum_axis(Axis(0)),
        DecodeMode::LastMembrane if t_len > 0 => outputs.row(t_len - 1).to_owned(),
        DecodeMode::LastMembrane => Array1::zeros(outputs.ncols()),
    };
    flat.into_shape_with_order((batch, classes))
        .expect("outputs width is batch * classes")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub synapse: SynapseSpec,
    pub neuron: NeuronKind,
}

/// A spiking layer: synaptic projection followed by a neuron population.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer<F> {
    pub(crate) synapse: Synapse<F>,
    pub(crate) neuron: NeuronKind,
    pub(crate) kernel: Option<LearnableKernel<F>>,
}

impl<F: Real> Layer<F> {
    /// IPSU/RPSU layers start with their kernel equal to the analytic leak matrix.
    pub fn new(synapse: Synapse<F>, neuron: NeuronKind, leak: &LeakMatrix<F>) -> Self {
        let kernel = neuron
            .learnable_role()
            .map(|role| LearnableKernel::from_leak(leak, role));
        Self {
            synapse,
            neuron,
            kernel,
        }
    }

    pub fn synapse(&self) -> &Synapse<F> {
        &self.synapse
    }

    pub fn neuron(&self) -> NeuronKind {
        self.neuron
    }

    pub fn kernel(&self) -> Option<&LearnableKernel<F>> {
        self.kernel.as_ref()
    }

    pub fn in_width(&self) -> usize {
        self.synapse.spec().in_width()
    }

    pub fn out_width(&self) -> usize {
        self.synapse.spec().out_width()
    }
}

/// Per-layer state retained by [`Network::forward`].
#[derive(Clone, Debug)]
pub enum LayerState<F> {
    Parallel(Box<ForwardCache<F>>),
    Serial { spikes: Array2<F> },
}

#[derive(Clone, Debug)]
pub struct LayerTrace<F> {
    /// Synaptic current `[T, batch * out]`.
    pub current: Array2<F>,
    pub state: LayerState<F>,
}

impl<F: Real> LayerTrace<F> {
    pub fn spikes(&self) -> &Array2<F> {
        match &self.state {
            LayerState::Parallel(cache) => &cache.spikes,
            LayerState::Serial { spikes } => spikes,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ForwardOutput<F> {
    pub batch: usize,
    pub layers: Vec<LayerTrace<F>>,
    /// Readout membrane `[T, batch * classes]` when decoding `LastMembrane`.
    pub readout_membrane: Option<Array2<F>>,
    pub scores: Array2<F>,
}

#[derive(Clone, Debug)]
pub struct LayerGradient<F> {
    pub weight: ArrayD<F>,
    pub kernel: Option<Array2<F>>,
}

#[derive(Clone, Debug)]
pub struct Gradients<F> {
    pub layers: Vec<LayerGradient<F>>,
    pub readout: Option<ArrayD<F>>,
}

/// Which optimizer group a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum ParamGroup {
    Weight,
    Kernel,
}

/// Feed-forward stack of spiking layers with an optional membrane readout.
#[derive(Clone, Debug, PartialEq)]
pub struct Network<F> {
    config: NeuronConfig,
    leak: LeakMatrix<F>,
    reset: ResetMatrix<F>,
    layers: Vec<Layer<F>>,
    readout: Option<Synapse<F>>,
}

impl<F: Real> Network<F> {
    pub fn new(
        config: NeuronConfig,
        layers: Vec<Layer<F>>,
        readout: Option<Synapse<F>>,
    ) -> Result<Self> {
        config.validate()?;
        if config.reset_mode != ResetMode::Soft {
            return Err(PsuError::Unsupported(
                "networks use soft reset; the parallel form is not defined for hard reset".into(),
            ));
        }
        if layers.is_empty() {
            return Err(PsuError::Config("a network needs at least one spiking layer".into()));
        }
        let mut width = layers[0].in_width();
        for (idx, layer) in layers.iter().enumerate() {
            if layer.in_width() != width {
                return Err(PsuError::Shape(format!(
                    "layer {idx} expects {} inputs, previous layer emits {width}",
                    layer.in_width()
                )));
            }
            if let Some(k) = &layer.kernel {
                if k.horizon() != config.horizon {
                    return Err(PsuError::Shape(format!(
                        "layer {idx} kernel horizon {} differs from network horizon {}",
                        k.horizon(),
                        config.horizon
                    )));
                }
            }
            if layer.neuron.learnable_role() != layer.kernel.as_ref().map(|k| k.role()) {
                return Err(PsuError::Config(format!(
                    "layer {idx}: {} neurons need a matching learnable kernel",
                    layer.neuron
                )));
            }
            width = layer.out_width();
        }
        if let Some(r) = &readout {
            if r.spec().in_width() != width {
                return Err(PsuError::Shape(format!(
                    "readout expects {} inputs, last layer emits {width}",
                    r.spec().in_width()
                )));
            }
        }
        let leak = build_leak_matrix(config.tau, config.horizon)?;
        let reset = build_reset_matrix(config.tau, config.v_th, config.horizon)?;
        Ok(Self {
            config,
            leak,
            reset,
            layers,
            readout,
        })
    }

    /// Builds a dense stack from `widths = [input, hidden..., classes]`.
    ///
    /// With `RateSum` every transition is a spiking layer; with `LastMembrane`
    /// the final transition is the non-spiking readout.
    pub fn dense(
        config: NeuronConfig,
        widths: &[usize],
        neuron: NeuronKind,
        decode: DecodeMode,
        gain: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if widths.len() < 2 {
            return Err(PsuError::Config(
                "need at least input and output widths".into(),
            ));
        }
        let specs: Vec<SynapseSpec> = widths
            .windows(2)
            .map(|w| SynapseSpec::Dense {
                in_width: w[0],
                out_width: w[1],
            })
            .collect();
        let (spiking, readout) = match decode {
            DecodeMode::RateSum => (&specs[..], None),
            DecodeMode::LastMembrane => {
                if specs.len() < 2 {
                    return Err(PsuError::Config(
                        "a membrane readout needs at least one hidden layer".into(),
                    ));
                }
                (&specs[..specs.len() - 1], specs.last().copied())
            }
        };
        let layer_specs: Vec<LayerSpec> = spiking
            .iter()
            .map(|&synapse| LayerSpec { synapse, neuron })
            .collect();
        Self::from_specs(config, &layer_specs, readout, gain, rng)
    }

    pub fn from_specs(
        config: NeuronConfig,
        layers: &[LayerSpec],
        readout: Option<SynapseSpec>,
        gain: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        config.validate()?;
        let leak = build_leak_matrix(config.tau, config.horizon)?;
        let layers = layers
            .iter()
            .map(|spec| Ok(Layer::new(Synapse::init(spec.synapse, gain, rng)?, spec.neuron, &leak)))
            .collect::<Result<Vec<_>>>()?;
        let readout = readout
            .map(|spec| Synapse::init(spec, gain, rng))
            .transpose()?;
        Self::new(config, layers, readout)
    }

    pub fn config(&self) -> &NeuronConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Layer<F>] {
        &self.layers
    }

    pub fn readout(&self) -> Option<&Synapse<F>> {
        self.readout.as_ref()
    }

    pub fn leak(&self) -> &LeakMatrix<F> {
        &self.leak
    }

    pub fn decode_mode(&self) -> DecodeMode {
        if self.readout.is_some() {
            DecodeMode::LastMembrane
        } else {
            DecodeMode::RateSum
        }
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].in_width()
    }

    pub fn num_classes(&self) -> usize {
        match &self.readout {
            Some(r) => r.spec().out_width(),
            None => self.layers.last().map(Layer::out_width).unwrap_or(0),
        }
    }

    /// Learnable kernel entries per spiking layer (`T(T+1)/2` for IPSU/RPSU, else 0).
    pub fn kernel_parameter_counts(&self) -> Vec<usize> {
        self.layers
            .iter()
            .map(|l| l.kernel.as_ref().map_or(0, LearnableKernel::free_parameters))
            .collect()
    }

    /// Same weights with every spiking layer switched to `neuron`.
    pub fn with_neuron(&self, neuron: NeuronKind) -> Self {
        let mut out = self.clone();
        for layer in &mut out.layers {
            layer.neuron = neuron;
            layer.kernel = neuron
                .learnable_role()
                .map(|role| LearnableKernel::from_leak(&self.leak, role));
        }
        out
    }

    /// Converts every parameter to another precision.
    pub fn cast<G: Real>(&self) -> Network<G> {
        let cast_synapse = |s: &Synapse<F>| {
            Synapse::from_weight(s.spec(), s.weight().mapv(|w| G::of(w.as_f64())))
                .expect("shape and finiteness preserved")
        };
        let layers = self
            .layers
            .iter()
            .map(|l| Layer {
                synapse: cast_synapse(&l.synapse),
                neuron: l.neuron,
                kernel: l.kernel.as_ref().map(|k| {
                    LearnableKernel::from_entries(k.entries().mapv(|v| G::of(v.as_f64())), k.role())
                        .expect("square kernel")
                }),
            })
            .collect();
        Network::new(self.config, layers, self.readout.as_ref().map(cast_synapse))
            .expect("validated network stays valid")
    }

    fn check_input(&self, x: ArrayView2<'_, F>, batch: usize) -> Result<()> {
        if x.nrows() != self.config.horizon || x.ncols() != batch * self.input_width() {
            return Err(PsuError::Shape(format!(
                "network input is [{}, {}], expected [{}, {} x {}]",
                x.nrows(),
                x.ncols(),
                self.config.horizon,
                batch,
                self.input_width()
            )));
        }
        Ok(())
    }

    fn kernels_for<'a>(&'a self, layer: &'a Layer<F>) -> (ArrayView2<'a, F>, Option<ArrayView2<'a, F>>) {
        let leak = self.leak.view();
        match (layer.neuron, &layer.kernel) {
            (NeuronKind::Ipsu, Some(k)) => (k.view(), Some(leak)),
            (NeuronKind::Rpsu, Some(k)) => (leak, Some(k.view())),
            _ => (leak, None),
        }
    }

    /// Applies the synapse to `[T, batch * in]`, returning `[T, batch * out]`.
    fn project(synapse: &Synapse<F>, x: ArrayView2<'_, F>, batch: usize) -> Array2<F> {
        let spec = synapse.spec();
        let t_len = x.nrows();
        let flat = x
            .into_shape_with_order((t_len * batch, spec.in_width()))
            .expect("time-major input is contiguous");
        synapse
            .forward(flat)
            .into_shape_with_order((t_len, batch * spec.out_width()))
            .expect("projection output is contiguous")
    }

    /// Layer-by-layer parallel forward over all `T` steps. `x` is `[T, batch * input_width]`.
    pub fn forward(&self, x: ArrayView2<'_, F>, batch: usize) -> Result<ForwardOutput<F>> {
        self.check_input(x, batch)?;
        let x = x.as_standard_layout();
        let v_th = F::of(self.config.v_th);
        let mut traces: Vec<LayerTrace<F>> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let input = traces.last().map_or(x.view(), |t| t.spikes().view());
            let current = Self::project(&layer.synapse, input, batch);
            let state = match layer.neuron {
                NeuronKind::Lif => {
                    let (spikes, _) =
                        lif_forward_serial(&self.config, &CurrentTensor::new(current.clone())?)?;
                    LayerState::Serial {
                        spikes: spikes.into_inner(),
                    }
                }
                _ => {
                    let (a_input, a_reset) = self.kernels_for(layer);
                    LayerState::Parallel(Box::new(parallel_forward(
                        v_th,
                        a_input,
                        a_reset,
                        self.reset.view(),
                        current.view(),
                    )))
                }
            };
            traces.push(LayerTrace { current, state });
        }
        let last = traces.last().expect("non-empty").spikes();
        let (scores, readout_membrane) = match &self.readout {
            Some(readout) => {
                let membrane = self.leak.view().dot(&Self::project(readout, last.view(), batch));
                let scores = decode_output(membrane.view(), batch, DecodeMode::LastMembrane);
                (scores, Some(membrane))
            }
            None => (decode_output(last.view(), batch, DecodeMode::RateSum), None),
        };
        Ok(ForwardOutput {
            batch,
            layers: traces,
            readout_membrane,
            scores,
        })
    }

    /// Conventional step-by-step simulation with soft-reset LIF neurons in every
    /// spiking layer: at each step every layer runs its synaptic product and
    /// neuron update before the next step starts. Returns class scores and the
    /// spike count of each layer.
    pub fn forward_step_serial(&self, x: ArrayView2<'_, F>, batch: usize) -> Result<(Array2<F>, Vec<usize>)> {
        self.check_input(x, batch)?;
        let inv_tau = F::of(1.0 / self.config.tau);
        let v_th = F::of(self.config.v_th);
        let mut membranes: Vec<Vec<F>> = self
            .layers
            .iter()
            .map(|l| vec![F::zero(); batch * l.out_width()])
            .collect();
        let mut spikes: Vec<Array2<F>> = self
            .layers
            .iter()
            .map(|l| Array2::zeros((batch, l.out_width())))
            .collect();
        let mut counts = vec![0usize; self.layers.len()];
        let classes = self.num_classes();
        let mut rate = Array2::<F>::zeros((batch, classes));
        let mut readout_v = Array2::<F>::zeros((batch, classes));

        for t in 0..x.nrows() {
            let row = x.row(t).to_owned();
            let input = row
                .into_shape_with_order((batch, self.input_width()))
                .expect("row is batch * input_width");
            for (idx, layer) in self.layers.iter().enumerate() {
                let current = if idx == 0 {
                    layer.synapse.forward(input.view())
                } else {
                    layer.synapse.forward(spikes[idx - 1].view())
                };
                let out = spikes[idx].as_slice_mut().expect("standard layout");
                lif_step(
                    &mut membranes[idx],
                    current.as_slice().expect("standard layout"),
                    out,
                    None,
                    inv_tau,
                    v_th,
                    ResetMode::Soft,
                );
                counts[idx] += out.iter().filter(|s| **s == F::one()).count();
            }
            let last = spikes.last().expect("non-empty");
            match &self.readout {
                Some(readout) => {
                    let current = readout.forward(last.view());
                    readout_v.zip_mut_with(&current, |v, &i| *v = *v + (i - *v) * inv_tau);
                }
                None => rate.zip_mut_with(last, |r, &s| *r = *r + s),
            }
        }
        let scores = if self.readout.is_some() { readout_v } else { rate };
        Ok((scores, counts))
    }

    /// Reverse pass through the whole stack given `∂L/∂scores` (`[batch, classes]`).
    pub fn backward(
        &self,
        x: ArrayView2<'_, F>,
        output: &ForwardOutput<F>,
        d_scores: ArrayView2<'_, F>,
        surrogate: &SurrogateConfig,
    ) -> Result<Gradients<F>> {
        let batch = output.batch;
        self.check_input(x, batch)?;
        let x = x.as_standard_layout();
        let t_len = self.config.horizon;
        let classes = self.num_classes();
        if d_scores.dim() != (batch, classes) {
            return Err(PsuError::Shape(format!(
                "score gradient is {:?}, expected ({batch}, {classes})",
                d_scores.dim()
            )));
        }
        let d_flat = d_scores
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order(batch * classes)
            .expect("contiguous");
        let last_spikes = output.layers.last().expect("non-empty").spikes();

        let (mut d_spikes, readout_grad) = match &self.readout {
            Some(readout) => {
                // Only the last membrane row is scored: ∂L/∂I[j] = A[T-1][j] · ∂L/∂score.
                let leak_row = self.leak.view().row(t_len - 1).to_owned();
                let mut d_current = Array2::zeros((t_len, batch * classes));
                for (j, mut row) in d_current.outer_iter_mut().enumerate() {
                    row.assign(&d_flat.mapv(|g| g * leak_row[j]));
                }
                let spec = readout.spec();
                let flat_in = last_spikes
                    .view()
                    .into_shape_with_order((t_len * batch, spec.in_width()))
                    .expect("contiguous");
                let flat_d = d_current
                    .into_shape_with_order((t_len * batch, spec.out_width()))
                    .expect("contiguous");
                let (d_w, d_x) = readout.backward(flat_in, flat_d.view());
                let d_x = d_x
                    .into_shape_with_order((t_len, batch * spec.in_width()))
                    .expect("contiguous");
                (d_x, Some(d_w))
            }
            None => {
                let mut d = Array2::zeros((t_len, batch * classes));
                for mut row in d.outer_iter_mut() {
                    row.assign(&d_flat);
                }
                (d, None)
            }
        };

        let v_th = F::of(self.config.v_th);
        let mut layer_grads = Vec::with_capacity(self.layers.len());
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let trace = &output.layers[idx];
            let cache = match &trace.state {
                LayerState::Parallel(cache) => cache.as_ref(),
                LayerState::Serial { .. } => {
                    return Err(PsuError::Unsupported(
                        "gradients through serial LIF layers".into(),
                    ))
                }
            };
            let (a_input, a_reset) = self.kernels_for(layer);
            let bundle = backward_from_cache(
                cache,
                v_th,
                a_input,
                a_reset.unwrap_or(a_input),
                self.reset.view(),
                trace.current.view(),
                d_spikes.view(),
                surrogate,
                layer.neuron.learnable_role(),
            );
            let input = if idx == 0 {
                x.view()
            } else {
                output.layers[idx - 1].spikes().view()
            };
            let spec = layer.synapse.spec();
            let flat_in = input
                .into_shape_with_order((t_len * batch, spec.in_width()))
                .expect("contiguous");
            let flat_d = bundle
                .d_input
                .into_shape_with_order((t_len * batch, spec.out_width()))
                .expect("contiguous");
            let (d_w, d_x) = layer.synapse.backward(flat_in, flat_d.view());
            d_spikes = d_x
                .into_shape_with_order((t_len, batch * spec.in_width()))
                .expect("contiguous");
            layer_grads.push(LayerGradient {
                weight: d_w,
                kernel: bundle.d_kernel,
            });
        }
        layer_grads.reverse();
        Ok(Gradients {
            layers: layer_grads,
            readout: readout_grad,
        })
    }

    /// Visits every parameter with its gradient in a fixed order, then restores
    /// the causal mask on learnable kernels.
    pub(crate) fn update_params(
        &mut self,
        grads: &Gradients<F>,
        mut f: impl FnMut(usize, ParamGroup, &mut [F], &[F]),
    ) {
        let mut slot = 0;
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            f(
                slot,
                ParamGroup::Weight,
                layer.synapse.weight_mut().as_slice_mut().expect("standard layout"),
                g.weight.as_slice().expect("standard layout"),
            );
            slot += 1;
            if let (Some(kernel), Some(dk)) = (layer.kernel.as_mut(), g.kernel.as_ref()) {
                f(
                    slot,
                    ParamGroup::Kernel,
                    kernel.entries_mut().as_slice_mut().expect("standard layout"),
                    dk.as_slice().expect("standard layout"),
                );
                kernel.enforce_mask();
            }
            slot += 1;
        }
        if let (Some(readout), Some(g)) = (self.readout.as_mut(), grads.readout.as_ref()) {
            f(
                slot,
                ParamGroup::Weight,
                readout.weight_mut().as_slice_mut().expect("standard layout"),
                g.as_slice().expect("standard layout"),
            );
        }
    }

    /// Argmax class per sample (first index wins ties).
    pub fn predict(&self, x: ArrayView2<'_, F>, batch: usize) -> Result<Vec<usize>> {
        Ok(argmax_rows(self.forward(x, batch)?.scores.view()))
    }
}

pub fn argmax_rows<F: Real>(scores: ArrayView2<'_, F>) -> Vec<usize> {
    scores
        .outer_iter()
        .map(|row| {
            let mut best = 0;
            for (k, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}
