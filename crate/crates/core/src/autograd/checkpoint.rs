//! Versioned checkpoint container.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic        4 bytes  "MSCK"
//! version      u32      currently 1
//! hyper_len    u32      byte length of the hyperparameter record
//! hyper        UTF-8    one `key=value` line per entry, keys sorted
//! step         u64      training iterations completed
//! n_params     u32
//! n_params x:
//!   name_len   u16
//!   name       UTF-8
//!   trainable  u8       0 or 1
//!   ndim       u8       always 2 (vectors are stored as n x 1)
//!   dims       ndim x u32
//!   dtype      u8       1 = float32, 2 = float64
//!   data       product(dims) values of dtype, row-major
//! has_adam     u8       0 or 1
//! if has_adam:
//!   adam_step  u64
//!   lr, beta1, beta2, epsilon    4 x f64
//!   per parameter, in the order above: first moment then second moment,
//!   each product(dims) x f64
//! ```
//!
//! Readers accept both dtypes; the writer emits float64 unless asked for float32.

use std::collections::BTreeMap;
use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

use super::{Adam, AdamState, ParamStore};
use crate::matrix::Matrix;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"MSCK";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("missing hyperparameter `{0}`")]
    MissingHyper(String),
    #[error("invalid hyperparameter `{key}`: {value}")]
    BadHyper { key: String, value: String },
}

fn malformed(msg: impl Into<String>) -> CheckpointError {
    CheckpointError::Malformed(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    Float32,
    #[default]
    Float64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub hyper: BTreeMap<String, String>,
    pub step: u64,
    pub params: ParamStore,
    pub optimizer: Option<Adam>,
}

impl Checkpoint {
    pub fn new(params: ParamStore) -> Self {
        Self {
            hyper: BTreeMap::new(),
            step: 0,
            params,
            optimizer: None,
        }
    }

    pub fn hyper_str(&self, key: &str) -> Result<&str, CheckpointError> {
        self.hyper
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| CheckpointError::MissingHyper(key.to_string()))
    }

    pub fn hyper_parse<T: std::str::FromStr>(&self, key: &str) -> Result<T, CheckpointError> {
        let v = self.hyper_str(key)?;
        v.parse().map_err(|_| CheckpointError::BadHyper {
            key: key.to_string(),
            value: v.to_string(),
        })
    }

    pub fn to_bytes(&self, precision: Precision) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out, precision).expect("writing to a Vec cannot fail");
        out
    }

    pub fn write_to<W: Write>(&self, mut w: W, precision: Precision) -> io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        let mut hyper = String::new();
        for (k, v) in &self.hyper {
            assert!(!k.contains(['=', '\n']) && !v.contains('\n'), "hyperparameter `{k}` is not encodable");
            hyper.push_str(k);
            hyper.push('=');
            hyper.push_str(v);
            hyper.push('\n');
        }
        w.write_all(&(hyper.len() as u32).to_le_bytes())?;
        w.write_all(hyper.as_bytes())?;
        w.write_all(&self.step.to_le_bytes())?;
        w.write_all(&(self.params.len() as u32).to_le_bytes())?;
        for (_, p) in self.params.iter() {
            w.write_all(&(p.name.len() as u16).to_le_bytes())?;
            w.write_all(p.name.as_bytes())?;
            w.write_all(&[u8::from(p.trainable), 2])?;
            w.write_all(&(p.value.rows() as u32).to_le_bytes())?;
            w.write_all(&(p.value.cols() as u32).to_le_bytes())?;
            match precision {
                Precision::Float32 => {
                    w.write_all(&[1])?;
                    for &v in p.value.as_slice() {
                        w.write_all(&(v as f32).to_le_bytes())?;
                    }
                }
                Precision::Float64 => {
                    w.write_all(&[2])?;
                    write_f64s(&mut w, p.value.as_slice())?;
                }
            }
        }
        match &self.optimizer {
            None => w.write_all(&[0])?,
            Some(adam) => {
                w.write_all(&[1])?;
                w.write_all(&adam.state.step.to_le_bytes())?;
                write_f64s(&mut w, &[adam.learning_rate, adam.beta1, adam.beta2, adam.epsilon])?;
                for (m, v) in adam.state.first.iter().zip(&adam.state.second) {
                    write_f64s(&mut w, m.as_slice())?;
                    write_f64s(&mut w, v.as_slice())?;
                }
            }
        }
        Ok(())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version(version));
        }
        let hyper_len = r.u32()? as usize;
        let text = std::str::from_utf8(r.take(hyper_len)?).map_err(|_| malformed("hyperparameters are not UTF-8"))?;
        let mut hyper = BTreeMap::new();
        for line in text.lines() {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| malformed(format!("hyperparameter line without '=': {line}")))?;
            hyper.insert(k.to_string(), v.to_string());
        }
        let step = r.u64()?;
        let n = r.u32()? as usize;
        let mut params = ParamStore::new();
        for _ in 0..n {
            let name_len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| malformed("parameter name is not UTF-8"))?
                .to_string();
            let trainable = r.u8()? != 0;
            let ndim = r.u8()? as usize;
            let dims: Vec<usize> = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<_, _>>()?;
            let (rows, cols) = match dims.as_slice() {
                [n] => (*n, 1),
                [r0, c0] => (*r0, *c0),
                _ => return Err(malformed(format!("parameter `{name}` has {ndim} dimensions"))),
            };
            let count = rows * cols;
            let data = match r.u8()? {
                1 => r
                    .take(count * 4)?
                    .chunks_exact(4)
                    .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
                    .collect(),
                2 => r.f64s(count)?,
                d => return Err(malformed(format!("parameter `{name}` has unknown dtype {d}"))),
            };
            let id = params
                .add(name.clone(), Matrix::from_vec(rows, cols, data))
                .map_err(|e| malformed(e.to_string()))?;
            params.get_mut(id).trainable = trainable;
        }
        let optimizer = match r.u8()? {
            0 => None,
            1 => {
                let adam_step = r.u64()?;
                let h = r.f64s(4)?;
                let mut state = AdamState::zeros_like(&params);
                state.step = adam_step;
                for i in 0..params.len() {
                    let count = state.first[i].as_slice().len();
                    state.first[i].as_mut_slice().copy_from_slice(&r.f64s(count)?);
                    state.second[i].as_mut_slice().copy_from_slice(&r.f64s(count)?);
                }
                Some(Adam {
                    learning_rate: h[0],
                    beta1: h[1],
                    beta2: h[2],
                    epsilon: h[3],
                    state,
                })
            }
            f => return Err(malformed(format!("bad optimizer flag {f}"))),
        };
        if r.pos != bytes.len() {
            return Err(malformed(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self {
            hyper,
            step,
            params,
            optimizer,
        })
    }
}

fn write_f64s<W: Write>(w: &mut W, values: &[f64]) -> io::Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 8);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            malformed(format!("truncated at byte {} (wanted {n} more)", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, CheckpointError> {
        Ok(self
            .take(n * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<(), CheckpointError> {
    let path = path.as_ref();
    let io_err = |source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut file = io::BufWriter::new(std::fs::File::create(path).map_err(io_err)?);
    ckpt.write_to(&mut file, Precision::Float64).map_err(io_err)?;
    file.flush().map_err(io_err)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, CheckpointError> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })?;
    Checkpoint::from_bytes(&bytes)
}
