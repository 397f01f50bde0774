//! Binary parameter checkpoints.
//!
//! Layout (all integers `u64`, all values `f64`, little-endian):
//! magic `SHRPCKPT`, `u32` version, model config, parameter count, then per
//! parameter its name (length + UTF-8), rank, dims and row-major values.
//! A trailing section optionally stores the optimiser velocity, the number
//! of completed epochs and the best accuracy so far so training can resume.

use std::fs;
use std::path::Path;

use super::model::{ModelConfig, Param, Params};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"SHRPCKPT";
const VERSION: u32 = 1;

/// Optimiser state saved next to the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub epochs_done: usize,
    /// Best held-out accuracy reached so far (selects the best checkpoint).
    pub best_accuracy: f64,
    pub velocity: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub params: Params,
    pub state: Option<TrainState>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.0.extend_from_slice(&VERSION.to_le_bytes());
        let cfg = &self.params.config;
        w.u64(cfg.channels.len());
        cfg.channels.iter().for_each(|&c| w.u64(c));
        w.u64(cfg.input_size.0);
        w.u64(cfg.input_size.1);
        w.u64(cfg.input_channels);
        w.u64(cfg.classes);
        w.u64(cfg.kernel_size);
        w.u64(cfg.multi_label as usize);
        w.u64(self.params.tensors.len());
        for p in &self.params.tensors {
            w.u64(p.name.len());
            w.0.extend_from_slice(p.name.as_bytes());
            w.u64(p.value.shape().len());
            p.value.shape().iter().for_each(|&d| w.u64(d));
            w.f64s(p.value.data());
        }
        match &self.state {
            None => w.0.push(0),
            Some(s) => {
                w.0.push(1);
                w.u64(s.epochs_done);
                w.f64s(&[s.best_accuracy]);
                w.u64(s.velocity.len());
                for v in &s.velocity {
                    w.u64(v.len());
                    w.f64s(v);
                }
            }
        }
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Data("not a checkpoint file (bad magic)".into()));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::Data(format!("unsupported checkpoint version {version}")));
        }
        let blocks = r.len()?;
        let channels = (0..blocks).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        let config = ModelConfig {
            channels,
            input_size: (r.u64()?, r.u64()?),
            input_channels: r.u64()?,
            classes: r.u64()?,
            kernel_size: r.u64()?,
            multi_label: r.u64()? != 0,
        };
        config.validate()?;
        let count = r.len()?;
        let expected = config.param_shapes();
        if count != expected.len() {
            return Err(Error::Data(format!("checkpoint holds {count} tensors, config implies {}", expected.len())));
        }
        let mut tensors = Vec::with_capacity(count);
        for (name_expected, shape_expected) in expected {
            let len = r.len()?;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| Error::Data("parameter name is not UTF-8".into()))?;
            let rank = r.len()?;
            let shape = (0..rank).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
            if name != name_expected || shape != shape_expected {
                return Err(Error::Data(format!(
                    "parameter {name} {shape:?} does not match config ({name_expected} {shape_expected:?})"
                )));
            }
            let values = r.f64s(shape.iter().product())?;
            tensors.push(Param {
                name,
                value: Tensor::new(shape, values)?,
            });
        }
        let params = Params { config, tensors };
        let state = match r.take(1)?[0] {
            0 => None,
            1 => {
                let epochs_done = r.u64()?;
                let best_accuracy = r.f64s(1)?[0];
                let n = r.len()?;
                let mut velocity = Vec::with_capacity(n);
                for p in params.tensors.iter().take(n) {
                    let len = r.len()?;
                    if len != p.value.numel() {
                        return Err(Error::Data(format!("velocity for {} has {len} values", p.name)));
                    }
                    velocity.push(r.f64s(len)?);
                }
                if velocity.len() != params.tensors.len() {
                    return Err(Error::Data("velocity count does not match parameters".into()));
                }
                Some(TrainState {
                    epochs_done,
                    best_accuracy,
                    velocity,
                })
            }
            other => return Err(Error::Data(format!("bad state flag {other}"))),
        };
        if r.pos != bytes.len() {
            return Err(Error::Data(format!("{} trailing bytes in checkpoint", bytes.len() - r.pos)));
        }
        Ok(Checkpoint { params, state })
    }
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    fs::write(path, checkpoint.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes).map_err(|e| match e {
        Error::Data(msg) => Error::Data(format!("{}: {msg}", path.display())),
        other => other,
    })
}

struct Writer(Vec<u8>);

impl Writer {
    fn u64(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u64).to_le_bytes());
    }

    fn f64s(&mut self, vs: &[f64]) {
        vs.iter().for_each(|v| self.0.extend_from_slice(&v.to_le_bytes()));
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Data("checkpoint truncated".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| Error::Data(format!("value {v} too large")))
    }

    /// A length field; bounded by the remaining bytes so corrupt files cannot
    /// trigger huge allocations.
    fn len(&mut self) -> Result<usize> {
        let v = self.u64()?;
        if v > self.bytes.len() - self.pos {
            return Err(Error::Data(format!("length {v} exceeds remaining checkpoint bytes")));
        }
        Ok(v)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Data("size overflow".into()))?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
}
