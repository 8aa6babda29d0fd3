//! Flat binary model file (`model.bin`), all integers and floats little-endian:
//!
//! ```text
//! magic        8 bytes   "PSUMODEL"
//! version      u32       1
//! seed         u64
//! config_hash  8 bytes   first 8 bytes of the SHA-256 of the run config
//! tau          f64
//! v_th         f64
//! horizon      u32
//! layers       u32       number of spiking layers
//! has_readout  u8
//! per layer:   neuron u8 (0 lif, 1 psu, 2 ipsu, 3 rpsu), synapse descriptor,
//!              has_kernel u8
//! readout:     synapse descriptor (only if has_readout = 1)
//! payload:     per layer the weight tensor, then the T x T kernel if present,
//!              then the readout weight; every value a row-major f64
//! ```
//!
//! A synapse descriptor is a `u8` tag (0 dense, 1 conv1d) followed by four
//! `u32` dimensions: `in, out, 0, 0` for dense, `channels_in, channels_out,
//! length, kernel_size` for conv1d.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayD};

use super::model::{Layer, Network, NeuronKind};
use super::synapse::{Synapse, SynapseSpec};
use crate::error::{PsuError, Result};
use crate::kernel::{is_lower_triangular, LearnableKernel, NeuronConfig, Real, ResetMode};

pub const MODEL_MAGIC: &[u8; 8] = b"PSUMODEL";
pub const MODEL_VERSION: u32 = 1;

/// A decoded model file.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelFile {
    pub network: Network<f64>,
    pub seed: u64,
    pub config_hash: [u8; 8],
}

fn neuron_code(kind: NeuronKind) -> u8 {
    match kind {
        NeuronKind::Lif => 0,
        NeuronKind::Psu => 1,
        NeuronKind::Ipsu => 2,
        NeuronKind::Rpsu => 3,
    }
}

fn put_synapse(buf: &mut Vec<u8>, spec: SynapseSpec) {
    let (tag, dims) = match spec {
        SynapseSpec::Dense {
            in_width,
            out_width,
        } => (0u8, [in_width, out_width, 0, 0]),
        SynapseSpec::Conv1d {
            channels_in,
            channels_out,
            length,
            kernel_size,
        } => (1u8, [channels_in, channels_out, length, kernel_size]),
    };
    buf.push(tag);
    for d in dims {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
}

pub fn save_model<F: Real>(
    path: impl AsRef<Path>,
    net: &Network<F>,
    seed: u64,
    config_hash: [u8; 8],
) -> Result<()> {
    let path = path.as_ref();
    let cfg = net.config();
    let mut buf = Vec::new();
    buf.extend_from_slice(MODEL_MAGIC);
    buf.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    buf.extend_from_slice(&seed.to_le_bytes());
    buf.extend_from_slice(&config_hash);
    buf.extend_from_slice(&cfg.tau.to_le_bytes());
    buf.extend_from_slice(&cfg.v_th.to_le_bytes());
    buf.extend_from_slice(&(cfg.horizon as u32).to_le_bytes());
    buf.extend_from_slice(&(net.layers().len() as u32).to_le_bytes());
    buf.push(net.readout().is_some() as u8);
    for layer in net.layers() {
        buf.push(neuron_code(layer.neuron()));
        put_synapse(&mut buf, layer.synapse().spec());
        buf.push(layer.kernel().is_some() as u8);
    }
    if let Some(r) = net.readout() {
        put_synapse(&mut buf, r.spec());
    }
    let mut put_values = |values: &mut dyn Iterator<Item = F>| {
        for v in values {
            buf.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    };
    for layer in net.layers() {
        put_values(&mut layer.synapse().weight().iter().copied());
        if let Some(k) = layer.kernel() {
            put_values(&mut k.entries().iter().copied());
        }
    }
    if let Some(r) = net.readout() {
        put_values(&mut r.weight().iter().copied());
    }
    fs::write(path, buf).map_err(|e| PsuError::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    offset: usize,
    path: PathBuf,
}

impl Reader<'_> {
    fn fail<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(PsuError::Format {
            path: self.path.clone(),
            offset: self.offset,
            message: message.into(),
        })
    }

    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        match self.bytes.get(self.offset..self.offset + N) {
            Some(s) => {
                self.offset += N;
                Ok(s.try_into().expect("slice of length N"))
            }
            None => self.fail("unexpected end of file"),
        }
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take::<1>()?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take()?) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take()?))
    }

    fn synapse(&mut self) -> Result<SynapseSpec> {
        let tag = self.u8()?;
        let d = [self.u32()?, self.u32()?, self.u32()?, self.u32()?];
        let spec = match tag {
            0 => SynapseSpec::Dense {
                in_width: d[0],
                out_width: d[1],
            },
            1 => SynapseSpec::Conv1d {
                channels_in: d[0],
                channels_out: d[1],
                length: d[2],
                kernel_size: d[3],
            },
            other => return self.fail(format!("unknown synapse tag {other}")),
        };
        if spec.validate().is_err() {
            return self.fail(format!("invalid synapse descriptor {spec:?}"));
        }
        Ok(spec)
    }

    fn values(&mut self, shape: Vec<usize>) -> Result<ArrayD<f64>> {
        let n: usize = shape.iter().product();
        let values = (0..n).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        Ok(ArrayD::from_shape_vec(shape, values).expect("length matches shape"))
    }
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelFile> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| PsuError::io(path, e))?;
    let mut r = Reader {
        bytes: &bytes,
        offset: 0,
        path: path.to_path_buf(),
    };
    if &r.take::<8>()? != MODEL_MAGIC {
        r.offset = 0;
        return r.fail("bad magic, not a model file");
    }
    let version = r.u32()? as u32;
    if version != MODEL_VERSION {
        return r.fail(format!("unsupported version {version}"));
    }
    let seed = u64::from_le_bytes(r.take()?);
    let config_hash = r.take::<8>()?;
    let tau = r.f64()?;
    let v_th = r.f64()?;
    let horizon = r.u32()?;
    let config = match NeuronConfig::new(tau, v_th, ResetMode::Soft, horizon) {
        Ok(c) => c,
        Err(e) => return r.fail(e.to_string()),
    };
    let layer_count = r.u32()?;
    let has_readout = r.u8()? == 1;
    let mut headers = Vec::with_capacity(layer_count);
    for _ in 0..layer_count {
        let neuron = match r.u8()? {
            0 => NeuronKind::Lif,
            1 => NeuronKind::Psu,
            2 => NeuronKind::Ipsu,
            3 => NeuronKind::Rpsu,
            other => return r.fail(format!("unknown neuron code {other}")),
        };
        let spec = r.synapse()?;
        let has_kernel = r.u8()? == 1;
        if has_kernel != neuron.learnable_role().is_some() {
            return r.fail(format!("{neuron} layer has inconsistent kernel flag"));
        }
        headers.push((neuron, spec, has_kernel));
    }
    let readout_spec = if has_readout { Some(r.synapse()?) } else { None };

    let mut layers = Vec::with_capacity(layer_count);
    for (neuron, spec, has_kernel) in headers {
        let weight = r.values(spec.weight_shape())?;
        let synapse = match Synapse::from_weight(spec, weight) {
            Ok(s) => s,
            Err(e) => return r.fail(e.to_string()),
        };
        let kernel = if has_kernel {
            let entries: Array2<f64> = r
                .values(vec![horizon, horizon])?
                .into_dimensionality()
                .expect("2-D");
            if !is_lower_triangular(entries.view()) {
                return r.fail("learnable kernel is not lower triangular");
            }
            let role = neuron.learnable_role().expect("checked above");
            Some(LearnableKernel::from_entries(entries, role)?)
        } else {
            None
        };
        layers.push(Layer {
            synapse,
            neuron,
            kernel,
        });
    }
    let readout = match readout_spec {
        Some(spec) => {
            let weight = r.values(spec.weight_shape())?;
            Some(Synapse::from_weight(spec, weight)?)
        }
        None => None,
    };
    if r.offset != bytes.len() {
        return r.fail("trailing bytes after payload");
    }
    let network = match Network::new(config, layers, readout) {
        Ok(n) => n,
        Err(e) => return r.fail(e.to_string()),
    };
    Ok(ModelFile {
        network,
        seed,
        config_hash,
    })
}
