//! Binary checkpoints.
//!
//! Layout (all integers and floats little-endian):
//!
//! | field | encoding |
//! |---|---|
//! | magic | 8 bytes `CDLNETCK` |
//! | format version | u32 |
//! | model config | u32 K, M, filter size, stride, C; u8 task, threshold, adaptive |
//! | train config | f64 σ_lo, σ_hi; u32 batch; f64 lr0, decay; u32 decay interval, max epochs; f64 backtrack factor; u32 crop; u8 loss; u64 seed; u32 val interval |
//! | progress | u64 epoch; f64 lr; u32 backtracks; u64 ADAM step |
//! | validation history | u64 count, then f64 values |
//! | parameters | per array in `param_slices` order: u64 length, f64 values |
//! | ADAM moments | first moments, then second moments, same framing |
//!
//! Parameter order is, per layer, `A`, `B`, `τ₀`, `τ₁`, and finally `D`.

use std::io::{Read, Write};
use std::path::Path;

use crate::config::TrainConfig;
use crate::error::{shape, Error, Result};
use crate::grad::LossKind;
use crate::model::{init_params, ModelConfig, ModelParams, Task, ThresholdMode};
use crate::train::AdamState;

pub const MAGIC: &[u8; 8] = b"CDLNETCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointRecord {
    pub model: ModelParams,
    pub adam: AdamState,
    /// Epochs completed when this state was saved.
    pub epoch: usize,
    pub lr: f64,
    pub val_history: Vec<f64>,
    pub backtracks: u32,
    pub train: TrainConfig,
}

impl CheckpointRecord {
    pub fn new(model: ModelParams, adam: AdamState, train: TrainConfig) -> Self {
        Self { model, adam, epoch: 0, lr: train.lr0, val_history: Vec::new(), backtracks: 0, train }
    }

    /// A record for an untrained model with default training settings.
    pub fn fresh(config: ModelConfig, seed: u64) -> Result<Self> {
        let model = init_params(config, seed)?;
        let adam = AdamState::new(&model);
        Ok(Self::new(model, adam, TrainConfig { seed, ..TrainConfig::default() }))
    }
}

struct Writer<W: Write>(W);

impl<W: Write> Writer<W> {
    fn u8(&mut self, v: u8) -> Result<()> {
        Ok(self.0.write_all(&[v])?)
    }
    fn u32(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| Error::InvalidArgument(format!("{v} does not fit in u32")))?;
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }
    fn u64(&mut self, v: u64) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }
    fn f64(&mut self, v: f64) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }
    fn array(&mut self, values: &[f64]) -> Result<()> {
        self.u64(values.len() as u64)?;
        for &v in values {
            self.f64(v)?;
        }
        Ok(())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Corrupt(format!("truncated checkpoint at byte {}", self.pos)));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn array_into(&mut self, dst: &mut [f64], what: &str) -> Result<()> {
        let len = self.u64()? as usize;
        if len != dst.len() {
            return Err(shape(format!("{what}: stored length {len}, config implies {}", dst.len())));
        }
        for v in dst.iter_mut() {
            *v = self.f64()?;
        }
        Ok(())
    }
}

fn task_code(t: Task) -> u8 {
    match t {
        Task::Denoise => 0,
        Task::Jdd => 1,
    }
}

fn threshold_code(t: ThresholdMode) -> u8 {
    match t {
        ThresholdMode::Soft => 0,
        ThresholdMode::Block => 1,
    }
}

fn loss_code(l: LossKind) -> u8 {
    match l {
        LossKind::Mse => 0,
        LossKind::McSure => 1,
    }
}

fn enum_err(what: &str, v: u8) -> Error {
    Error::Corrupt(format!("unknown {what} code {v}"))
}

pub fn write_checkpoint<W: Write>(rec: &CheckpointRecord, out: W) -> Result<()> {
    if !rec.adam.matches(&rec.model) {
        return Err(shape("optimizer state does not match the parameters"));
    }
    let mut w = Writer(out);
    w.0.write_all(MAGIC)?;
    w.u32(FORMAT_VERSION as usize)?;
    let m = &rec.model.config;
    for v in [m.unrollings, m.subbands, m.filter_size, m.stride, m.channels] {
        w.u32(v)?;
    }
    w.u8(task_code(m.task))?;
    w.u8(threshold_code(m.threshold))?;
    w.u8(m.adaptive as u8)?;
    let t = &rec.train;
    w.f64(t.sigma_lo)?;
    w.f64(t.sigma_hi)?;
    w.u32(t.batch_size)?;
    w.f64(t.lr0)?;
    w.f64(t.lr_decay)?;
    w.u32(t.lr_decay_every)?;
    w.u32(t.max_epochs)?;
    w.f64(t.backtrack_factor)?;
    w.u32(t.crop_size)?;
    w.u8(loss_code(t.loss))?;
    w.u64(t.seed)?;
    w.u32(t.val_every)?;
    w.u64(rec.epoch as u64)?;
    w.f64(rec.lr)?;
    w.u32(rec.backtracks as usize)?;
    w.u64(rec.adam.step)?;
    w.array(&rec.val_history)?;
    for s in rec.model.param_slices() {
        w.array(s)?;
    }
    for s in rec.adam.m.iter().chain(&rec.adam.v) {
        w.array(s)?;
    }
    w.0.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<CheckpointRecord> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    parse(&bytes)
}

fn parse(bytes: &[u8]) -> Result<CheckpointRecord> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(MAGIC.len()).map_err(|_| Error::Version("not a checkpoint (too short)".into()))?;
    if magic != MAGIC {
        return Err(Error::Version("not a checkpoint (bad magic bytes)".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION as usize {
        return Err(Error::Version(format!("format version {version}, expected {FORMAT_VERSION}")));
    }
    let dims: Vec<usize> = (0..5).map(|_| r.u32()).collect::<Result<_>>()?;
    let task = match r.u8()? {
        0 => Task::Denoise,
        1 => Task::Jdd,
        v => return Err(enum_err("task", v)),
    };
    let threshold = match r.u8()? {
        0 => ThresholdMode::Soft,
        1 => ThresholdMode::Block,
        v => return Err(enum_err("threshold", v)),
    };
    let adaptive = match r.u8()? {
        0 => false,
        1 => true,
        v => return Err(enum_err("adaptive flag", v)),
    };
    let config = ModelConfig {
        unrollings: dims[0],
        subbands: dims[1],
        filter_size: dims[2],
        stride: dims[3],
        channels: dims[4],
        task,
        threshold,
        adaptive,
    };
    config.validate().map_err(|e| Error::Corrupt(format!("stored model config is invalid: {e}")))?;
    let sigma_lo = r.f64()?;
    let sigma_hi = r.f64()?;
    let batch_size = r.u32()?;
    let lr0 = r.f64()?;
    let lr_decay = r.f64()?;
    let lr_decay_every = r.u32()?;
    let max_epochs = r.u32()?;
    let backtrack_factor = r.f64()?;
    let crop_size = r.u32()?;
    let loss = match r.u8()? {
        0 => LossKind::Mse,
        1 => LossKind::McSure,
        v => return Err(enum_err("loss", v)),
    };
    let seed = r.u64()?;
    let val_every = r.u32()?;
    let train = TrainConfig {
        sigma_lo,
        sigma_hi,
        batch_size,
        lr0,
        lr_decay,
        lr_decay_every,
        max_epochs,
        backtrack_factor,
        crop_size,
        loss,
        seed,
        val_every,
    };
    let epoch = r.u64()? as usize;
    let lr = r.f64()?;
    let backtracks = r.u32()? as u32;
    let step = r.u64()?;
    let n_hist = r.u64()? as usize;
    if n_hist > bytes.len() / 8 {
        return Err(Error::Corrupt(format!("validation history length {n_hist} exceeds file size")));
    }
    let val_history = (0..n_hist).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    // Shapes come from the stored config; a zero-initialized model is the template.
    let mut model = zero_model(config)?;
    let names = model.param_names();
    for (s, name) in model.param_slices_mut().into_iter().zip(&names) {
        r.array_into(s, name)?;
    }
    let mut adam = AdamState::new(&model);
    adam.step = step;
    for (k, s) in adam.m.iter_mut().chain(adam.v.iter_mut()).enumerate() {
        r.array_into(s, &format!("moment {}", names[k % names.len()]))?;
    }
    if r.pos != bytes.len() {
        return Err(Error::Corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(CheckpointRecord { model, adam, epoch, lr, val_history, backtracks, train })
}

fn zero_model(config: ModelConfig) -> Result<ModelParams> {
    let mut model = init_params(ModelConfig { unrollings: 1, ..config }, 0)?;
    let mut layer = model.layers.pop().expect("one layer");
    for bank in [&mut layer.a, &mut layer.b] {
        bank.scale(0.0);
    }
    model.dict.scale(0.0);
    model.layers = vec![layer; config.unrollings];
    model.config = config;
    Ok(model)
}

pub fn save_checkpoint(rec: &CheckpointRecord, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path.as_ref())?;
    write_checkpoint(rec, std::io::BufWriter::new(file))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<CheckpointRecord> {
    let bytes = std::fs::read(path.as_ref())?;
    parse(&bytes)
}

/// Loads a checkpoint and checks that it was written for `expected`.
pub fn load_checkpoint_for(path: impl AsRef<Path>, expected: &ModelConfig) -> Result<CheckpointRecord> {
    let rec = load_checkpoint(path)?;
    if rec.model.config != *expected {
        return Err(shape(format!(
            "checkpoint holds K={} M={} filter={} s={} C={}, expected K={} M={} filter={} s={} C={}",
            rec.model.config.unrollings,
            rec.model.config.subbands,
            rec.model.config.filter_size,
            rec.model.config.stride,
            rec.model.config.channels,
            expected.unrollings,
            expected.subbands,
            expected.filter_size,
            expected.stride,
            expected.channels
        )));
    }
    Ok(rec)
}
