//! A small trainable spiking network: dense and temporal-convolution layers
//! around PSU-family neurons, losses, optimizers, datasets and model files.

mod data;
mod io;
mod model;
mod synapse;
mod train;

pub use data::{
    generate_dataset, ingest_spike_csv, write_spike_csv, DatasetKind, SyntheticDataset,
    POISSON_RATES,
};
pub use io::{load_model, save_model, ModelFile, MODEL_MAGIC, MODEL_VERSION};
pub use model::{
    argmax_rows, decode_output, DecodeMode, ForwardOutput, Gradients, Layer, LayerGradient,
    LayerSpec, LayerState, LayerTrace, Network, NeuronKind,
};
pub use synapse::{Synapse, SynapseSpec};
pub use train::{evaluate, loss_and_grad, train, EpochMetrics, LossKind, OptimizerKind, TrainConfig};
