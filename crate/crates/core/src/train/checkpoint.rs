//! Binary training checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "HCNETCKP" | version u32
//! config: len u32 | utf-8 model config text
//! epoch u64
//! rng: seed [u8; 32] | word_pos u128 | stream u64
//! params: count u32, then per parameter
//!     name_len u32 | name | rank u32 | dims u64 x rank | values f32 x product(dims)
//! optimizer: kind u8 | step u64 | count u32, then per buffer len u64 | values f32 x len
//! ```

use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use super::optim::{Optimizer, OptimizerConfig, OptimizerKind};
use super::trainer::TrainState;
use crate::error::{Error, ParseErrorKind, Result};
use crate::model::{build_model, ModelConfig};
use crate::tensor::{Real, Tensor};

pub const MAGIC: &[u8; 8] = b"HCNETCKP";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub word_pos: u128,
    pub stream: u64,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            word_pos: rng.get_word_pos(),
            stream: rng.get_stream(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamRecord {
    pub name: String,
    pub dims: Vec<usize>,
    pub values: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    /// Completed epochs.
    pub epoch: u64,
    pub rng: RngState,
    pub params: Vec<ParamRecord>,
    pub optimizer_kind: OptimizerKind,
    pub optimizer_step: u64,
    pub optimizer_buffers: Vec<Vec<f32>>,
}

impl Checkpoint {
    pub fn capture<T: Real>(state: &TrainState<T>) -> Self {
        let store = &state.model.store;
        let params = store
            .iter()
            .map(|(name, t)| ParamRecord {
                name: name.to_string(),
                dims: t.shape().to_vec(),
                values: t.data().iter().map(|v| v.to_f32().unwrap_or(f32::NAN)).collect(),
            })
            .collect();
        Self {
            config: state.model.config().clone(),
            epoch: state.epoch,
            rng: RngState::capture(&state.rng),
            params,
            optimizer_kind: state.optimizer.config().kind,
            optimizer_step: state.optimizer.steps_taken(),
            optimizer_buffers: state
                .optimizer
                .buffers()
                .map(|b| b.iter().map(|v| v.to_f32().unwrap_or(f32::NAN)).collect())
                .collect(),
        }
    }

    /// Rebuilds a training state, checking every parameter name and shape
    /// against a freshly built model of the stored config.
    pub fn restore<T: Real>(&self, optimizer: OptimizerConfig) -> Result<TrainState<T>> {
        let mut model = build_model::<T>(&self.config, 0)?;
        if model.store.len() != self.params.len() {
            return Err(Error::shape(
                "checkpoint",
                format!("{} parameters stored, config defines {}", self.params.len(), model.store.len()),
            ));
        }
        let ids: Vec<_> = model.store.ids().collect();
        for (id, rec) in ids.into_iter().zip(&self.params) {
            let name = model.store.name(id);
            let shape = model.store.get(id).shape();
            if name != rec.name || shape != rec.dims.as_slice() {
                return Err(Error::shape(
                    "checkpoint",
                    format!("parameter {:?} {:?} does not match config's {name:?} {shape:?}", rec.name, rec.dims),
                ));
            }
            let values = rec.values.iter().map(|&v| T::of(v as f64)).collect();
            *model.store.get_mut(id) = Tensor::new(rec.dims.clone(), values)?.with_requires_grad(true);
        }
        if optimizer.kind != self.optimizer_kind {
            return Err(Error::Config(format!(
                "checkpoint holds {} state, run asks for {}",
                self.optimizer_kind, optimizer.kind
            )));
        }
        let buffers = self
            .optimizer_buffers
            .iter()
            .map(|b| b.iter().map(|&v| T::of(v as f64)).collect())
            .collect();
        let opt = Optimizer::from_parts(optimizer, self.optimizer_step, buffers)?;
        opt.check_layout(&model.store)?;
        Ok(TrainState {
            model,
            optimizer: opt,
            rng: self.rng.restore(),
            epoch: self.epoch,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend(VERSION.to_le_bytes());
        let text = self.config.to_text();
        out.extend((text.len() as u32).to_le_bytes());
        out.extend(text.as_bytes());
        out.extend(self.epoch.to_le_bytes());
        out.extend(self.rng.seed);
        out.extend(self.rng.word_pos.to_le_bytes());
        out.extend(self.rng.stream.to_le_bytes());
        out.extend((self.params.len() as u32).to_le_bytes());
        for p in &self.params {
            out.extend((p.name.len() as u32).to_le_bytes());
            out.extend(p.name.as_bytes());
            out.extend((p.dims.len() as u32).to_le_bytes());
            for &d in &p.dims {
                out.extend((d as u64).to_le_bytes());
            }
            for v in &p.values {
                out.extend(v.to_le_bytes());
            }
        }
        out.push(self.optimizer_kind.code());
        out.extend(self.optimizer_step.to_le_bytes());
        out.extend((self.optimizer_buffers.len() as u32).to_le_bytes());
        for b in &self.optimizer_buffers {
            out.extend((b.len() as u64).to_le_bytes());
            for v in b {
                out.extend(v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path };
        if r.take(8)? != MAGIC {
            return Err(r.err_at(0, ParseErrorKind::BadMagic, "not a checkpoint"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(r.err_at(8, ParseErrorKind::Malformed, format!("unsupported version {version}")));
        }
        let len = r.u32()? as usize;
        let at = r.pos;
        let text = std::str::from_utf8(r.take(len)?)
            .map_err(|_| r.err_at(at, ParseErrorKind::Malformed, "config is not utf-8"))?;
        let config = ModelConfig::parse(text)
            .map_err(|e| r.err_at(at, ParseErrorKind::Malformed, format!("config: {e}")))?;
        let epoch = r.u64()?;
        let mut seed = [0u8; 32];
        seed.copy_from_slice(r.take(32)?);
        let word_pos = u128::from_le_bytes(r.take(16)?.try_into().expect("16 bytes"));
        let stream = r.u64()?;
        let count = r.u32()? as usize;
        let mut params = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let n = r.u32()? as usize;
            let at = r.pos;
            let name = std::str::from_utf8(r.take(n)?)
                .map_err(|_| r.err_at(at, ParseErrorKind::Malformed, "parameter name is not utf-8"))?
                .to_string();
            let rank = r.u32()? as usize;
            let dims = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let len = dims
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| r.err_at(r.pos, ParseErrorKind::Malformed, "parameter extent overflows"))?;
            let values = r.f32s(len)?;
            params.push(ParamRecord { name, dims, values });
        }
        let at = r.pos;
        let optimizer_kind = OptimizerKind::from_code(r.take(1)?[0])
            .ok_or_else(|| r.err_at(at, ParseErrorKind::Malformed, "unknown optimizer kind"))?;
        let optimizer_step = r.u64()?;
        let nbuf = r.u32()? as usize;
        let mut optimizer_buffers = Vec::with_capacity(nbuf.min(1 << 16));
        for _ in 0..nbuf {
            let len = r.u64()? as usize;
            optimizer_buffers.push(r.f32s(len)?);
        }
        if r.pos != bytes.len() {
            return Err(r.err_at(r.pos, ParseErrorKind::Malformed, "trailing bytes"));
        }
        Ok(Self {
            config,
            epoch,
            rng: RngState { seed, word_pos, stream },
            params,
            optimizer_kind,
            optimizer_step,
            optimizer_buffers,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn err_at(&self, offset: usize, kind: ParseErrorKind, detail: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            offset: offset as u64,
            kind,
            detail: detail.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(self.err_at(
                self.bytes.len(),
                ParseErrorKind::Truncated,
                format!("needed {n} bytes at offset {}", self.pos),
            )),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| {
            self.err_at(self.pos, ParseErrorKind::Malformed, "buffer length overflows")
        })?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }
}
