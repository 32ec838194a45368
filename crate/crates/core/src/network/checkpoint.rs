//! Binary checkpoint with a JSON sidecar.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! "HFMC"                      4 bytes
//! format version              u32
//! spatial dimension           u32 (2 or 3)
//! hidden layers               u32
//! hidden width                u32
//! activation                  u32 (0 = sin, 1 = tanh)
//! normalised coordinates n    u32
//! scale[n], shift[n]          f64 each
//! Re mode, Re value           u8 (0 = fixed, 1 = trainable), f64
//! Pec mode, Pec value         u8, f64
//! parameter count             u64
//! parameters                  f64 each
//! ```
//!
//! A trainable flow number stores its logarithm, a fixed one its value.
//! The sidecar `<path>.json` repeats the header in readable form.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Activation, InputNormalization, Mlp, MlpArchitecture, MlpParams, SpatialDim};
use crate::error::{HfmError, Result};
use crate::physics::{FlowParam, FlowParams};

pub const MAGIC: &[u8; 4] = b"HFMC";
pub const FORMAT_VERSION: u32 = 1;

/// Trained network plus the flow numbers it was trained with.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub mlp: Mlp,
    pub flow: FlowParams,
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    magic: String,
    version: u32,
    architecture: MlpArchitecture,
    normalization: InputNormalization,
    flow: FlowParams,
    reynolds: f64,
    peclet: f64,
    param_count: usize,
}

/// `<path>.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn put_flow(buf: &mut Vec<u8>, p: &FlowParam) {
    match *p {
        FlowParam::Fixed { value } => {
            buf.push(0);
            buf.extend_from_slice(&value.to_le_bytes());
        }
        FlowParam::Trainable { log_value } => {
            buf.push(1);
            buf.extend_from_slice(&log_value.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(HfmError::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn flow(&mut self) -> Result<FlowParam> {
        let mode = self.u8()?;
        let v = self.f64()?;
        match mode {
            0 => FlowParam::fixed(v).map_err(|e| HfmError::Checkpoint(e.to_string())),
            1 if v.is_finite() => Ok(FlowParam::Trainable { log_value: v }),
            _ => Err(HfmError::Checkpoint(format!("invalid flow parameter record ({mode}, {v})"))),
        }
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let arch = &self.mlp.arch;
        let norm = &self.mlp.normalization;
        let params = self.mlp.params.as_slice();
        let mut buf = Vec::with_capacity(64 + 16 * norm.len() + 8 * params.len());
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(arch.dim.n() as u32).to_le_bytes());
        buf.extend_from_slice(&(arch.hidden_layers as u32).to_le_bytes());
        buf.extend_from_slice(&(arch.hidden_width as u32).to_le_bytes());
        let act: u32 = match arch.activation {
            Activation::Sin => 0,
            Activation::Tanh => 1,
        };
        buf.extend_from_slice(&act.to_le_bytes());
        buf.extend_from_slice(&(norm.len() as u32).to_le_bytes());
        for v in norm.scale.iter().chain(&norm.shift) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        put_flow(&mut buf, &self.flow.re);
        put_flow(&mut buf, &self.flow.pec);
        buf.extend_from_slice(&(params.len() as u64).to_le_bytes());
        for v in params {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(HfmError::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(HfmError::Checkpoint(format!("unsupported format version {version}")));
        }
        let dim = SpatialDim::from_n(r.u32()? as usize)
            .ok_or_else(|| HfmError::Checkpoint("invalid spatial dimension".into()))?;
        let hidden_layers = r.u32()? as usize;
        let hidden_width = r.u32()? as usize;
        let activation = match r.u32()? {
            0 => Activation::Sin,
            1 => Activation::Tanh,
            a => return Err(HfmError::Checkpoint(format!("unknown activation {a}"))),
        };
        let arch = MlpArchitecture {
            dim,
            hidden_layers,
            hidden_width,
            activation,
        };
        arch.validate()
            .map_err(|e| HfmError::Checkpoint(e.to_string()))?;
        let n = r.u32()? as usize;
        if n != arch.input_arity() {
            return Err(HfmError::Checkpoint(format!("normalization has {n} coordinates")));
        }
        let scale = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let shift = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let re = r.flow()?;
        let pec = r.flow()?;
        let count = r.u64()? as usize;
        if count != arch.param_count() {
            return Err(HfmError::Checkpoint(format!(
                "parameter count {count} does not match architecture ({})",
                arch.param_count()
            )));
        }
        let flat = (0..count).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        if r.pos != bytes.len() {
            return Err(HfmError::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let params = MlpParams::from_flat(&arch, flat)?;
        Ok(Self {
            mlp: Mlp::new(arch, params, InputNormalization { scale, shift })?,
            flow: FlowParams { re, pec },
        })
    }

    /// Writes the binary file and its sidecar. Each file is written to a
    /// temporary name first and renamed, so an existing checkpoint is never
    /// left half-written.
    pub fn write(&self, path: &Path) -> Result<()> {
        let sidecar = Sidecar {
            magic: "HFMC".into(),
            version: FORMAT_VERSION,
            architecture: self.mlp.arch,
            normalization: self.mlp.normalization.clone(),
            flow: self.flow,
            reynolds: self.flow.re.value(),
            peclet: self.flow.pec.value(),
            param_count: self.mlp.params.len(),
        };
        let json = serde_json::to_string_pretty(&sidecar).expect("sidecar serialises");
        write_atomic(path, &self.to_bytes())?;
        write_atomic(&sidecar_path(path), json.as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| HfmError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| HfmError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| HfmError::io(path, e))
}
