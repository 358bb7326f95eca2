//! Generators mapping Brownian noise to synthetic series: the Logsig-RNN and
//! an LSTM baseline. Both run on the [`Tape`](crate::autodiff::Tape) so the
//! same code serves sampling and training.
//!
//! A generator starts at time 0 and emits one point per output stamp
//! `t_1 < ... < t_N`; the noise must be sampled on a grid containing them
//! (see [`NoiseSource::fine_grid`]).

mod logsig_rnn;
mod lstm;
mod noise;

use std::fs;
use std::path::Path as FsPath;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Mat, Tape, Var};
use crate::error::{Error, Result};
use crate::fsio::write_atomic;
use crate::path::Path;
use crate::rng::stream_rng;

pub use logsig_rnn::LogsigRnnConfig;
pub use lstm::LstmConfig;
pub use noise::NoiseSource;

const MAGIC: &[u8; 4] = b"SWGM";
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    LogsigRnn(LogsigRnnConfig),
    Lstm(LstmConfig),
}

impl Architecture {
    pub fn noise_dim(&self) -> usize {
        match self {
            Architecture::LogsigRnn(c) => c.noise_dim,
            Architecture::Lstm(c) => c.noise_dim,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Architecture::LogsigRnn(c) => c.output_dim,
            Architecture::Lstm(c) => c.output_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Architecture::LogsigRnn(c) => c.validate(),
            Architecture::Lstm(c) => c.validate(),
        }
    }

    fn layout(&self) -> Vec<(&'static str, usize, usize, f64)> {
        match self {
            Architecture::LogsigRnn(c) => c.layout(),
            Architecture::Lstm(c) => c.layout(),
        }
    }
}

/// Noise turned into per-stamp network inputs.
#[derive(Debug, Clone)]
pub struct PreparedNoise {
    /// One `(samples, input width)` matrix per output stamp.
    pub inputs: Vec<Mat>,
    /// Stamps that close a coarse interval (Logsig-RNN only).
    pub resets: Vec<bool>,
}

impl PreparedNoise {
    pub fn samples(&self) -> usize {
        self.inputs.first().map_or(0, |m| m.nrows())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorModel {
    arch: Architecture,
    params: Vec<Mat>,
}

impl GeneratorModel {
    /// Weights uniform in `±1/sqrt(fan_in)`.
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let params = arch
            .layout()
            .into_iter()
            .enumerate()
            .map(|(i, (_, r, c, bound))| {
                let mut rng = stream_rng(seed, i as u64);
                Mat::from_shape_simple_fn((r, c), || rng.random_range(-bound..bound))
            })
            .collect();
        Ok(Self { arch, params })
    }

    pub fn zeros(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        let params = arch.layout().into_iter().map(|(_, r, c, _)| Mat::zeros((r, c))).collect();
        Ok(Self { arch, params })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn param_names(&self) -> Vec<&'static str> {
        self.arch.layout().into_iter().map(|(n, ..)| n).collect()
    }

    pub fn params(&self) -> &[Mat] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Mat] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.iter().map(Mat::len).sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.params.iter().flat_map(|m| m.iter().copied()).collect()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::shape(format!("{} values for {} parameters", flat.len(), self.n_params())));
        }
        let mut it = flat.iter();
        for m in &mut self.params {
            m.iter_mut().for_each(|v| *v = *it.next().expect("length checked"));
        }
        Ok(())
    }

    pub fn noise_dim(&self) -> usize {
        self.arch.noise_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.arch.output_dim()
    }

    pub fn prepare(&self, noise: &[Path], stamps: &[f64]) -> Result<PreparedNoise> {
        noise::check_stamps(stamps)?;
        if noise.is_empty() {
            return Err(Error::domain("empty noise batch"));
        }
        match &self.arch {
            Architecture::LogsigRnn(c) => {
                let resets = c.anchors(stamps)?;
                let inputs = c.window_logsigs(noise, stamps, &resets)?;
                Ok(PreparedNoise { inputs, resets })
            }
            Architecture::Lstm(c) => {
                Ok(PreparedNoise { inputs: c.increments(noise, stamps)?, resets: vec![false; stamps.len()] })
            }
        }
    }

    /// Records the forward pass on `tape` with `params` standing for the
    /// weights. Returns one `(samples, output_dim)` node per stamp.
    pub fn forward_tape(&self, tape: &mut Tape, params: &[Var], prep: &PreparedNoise) -> Result<Vec<Var>> {
        for (v, m) in params.iter().zip(&self.params) {
            if tape.shape(*v) != m.dim() {
                return Err(Error::shape(format!("parameter node {:?} vs weight {:?}", tape.shape(*v), m.dim())));
            }
        }
        match &self.arch {
            Architecture::LogsigRnn(c) => c.forward(tape, params, &prep.inputs, &prep.resets),
            Architecture::Lstm(c) => c.forward(tape, params, &prep.inputs),
        }
    }

    /// Plain forward pass; one output path per noise path.
    pub fn generate(&self, noise: &[Path], stamps: &[f64]) -> Result<Vec<Path>> {
        let prep = self.prepare(noise, stamps)?;
        let mut tape = Tape::new();
        let params: Vec<Var> = self.params.iter().map(|m| tape.constant(m.clone())).collect();
        let outs = self.forward_tape(&mut tape, &params, &prep)?;
        let e = self.output_dim();
        (0..noise.len())
            .map(|b| {
                let mut values = Vec::with_capacity(stamps.len() * e);
                for o in &outs {
                    values.extend(tape.value(*o).row(b).iter());
                }
                Path::from_flat(stamps.to_vec(), e, values)
            })
            .collect()
    }

    /// Samples `n` noise paths from `src` and generates from them.
    pub fn sample(&self, src: &NoiseSource, n: usize, stamps: &[f64]) -> Result<Vec<Path>> {
        if src.noise_dim != self.noise_dim() {
            return Err(Error::config(format!(
                "noise source has {} channels, model expects {}",
                src.noise_dim,
                self.noise_dim()
            )));
        }
        self.generate(&src.sample(n, stamps)?, stamps)
    }

    /// Binary model file: magic, version, architecture JSON, then the
    /// parameters as little-endian `f64`.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&ModelHeader { architecture: self.arch.clone(), n_params: self.n_params() })?;
        let mut out = Vec::with_capacity(16 + header.len() + 8 * self.n_params());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&MODEL_FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for v in self.flat_params() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::IncompatibleModel(msg.to_string());
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(bad("not a model file"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != MODEL_FORMAT_VERSION {
            return Err(Error::IncompatibleModel(format!("model format v{version}, expected v{MODEL_FORMAT_VERSION}")));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let header = bytes.get(12..12 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: ModelHeader =
            serde_json::from_slice(header).map_err(|e| Error::IncompatibleModel(format!("bad header: {e}")))?;
        let mut model = Self::zeros(header.architecture).map_err(|e| Error::IncompatibleModel(e.to_string()))?;
        let body = &bytes[12 + hlen..];
        if header.n_params != model.n_params() || body.len() != 8 * model.n_params() {
            return Err(Error::IncompatibleModel(format!(
                "architecture needs {} parameters, file holds {} bytes",
                model.n_params(),
                body.len()
            )));
        }
        let flat: Vec<f64> =
            body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        model.set_flat_params(&flat)?;
        Ok(model)
    }

    pub fn save(&self, path: &FsPath) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &FsPath) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Loads a model and checks it has the expected architecture.
    pub fn load_expecting(path: &FsPath, expected: &Architecture) -> Result<Self> {
        let model = Self::load(path)?;
        if &model.arch != expected {
            return Err(Error::IncompatibleModel(format!(
                "file holds {:?}, expected {:?}",
                model.arch, expected
            )));
        }
        Ok(model)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    architecture: Architecture,
    n_params: usize,
}
