//! Binary policy checkpoint: fixed header, little-endian f64 arrays for the
//! weights and Adam moments, trailing CRC-32 of everything before it.
//!
//! ```text
//! magic[8] version:u32 d:u32 hidden:u32 batch:u32 max_epochs:u32 schedule:u32
//! step:u64 planned:u64 lr:f64 warmup:f64 beta1:f64 beta2:f64 eps:f64
//! w1[hidden*3d] w2[hidden] m[n] v[n] crc32:u32
//! ```

use alloc::vec::Vec;

use crate::policy::{LrSchedule, OptimizerState, PolicyParams};

pub const MAGIC: &[u8; 8] = b"RSELPOL\0";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 * 6 + 8 * 7;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CheckpointError {
    #[error("not a policy checkpoint (bad magic)")]
    BadMagic,
    #[error("checkpoint version {found} is incompatible with supported version {VERSION}")]
    Incompatible { found: u32 },
    #[error("checkpoint checksum mismatch (file truncated or corrupt)")]
    Checksum,
    #[error("checkpoint body has unexpected length")]
    Length,
    #[error("unknown learning-rate schedule code {0}")]
    UnknownSchedule(u32),
    #[error("policy input dimension {0} is not 3·d")]
    InputNotTriple(usize),
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, vs: &[f64]) {
        vs.iter().for_each(|&v| self.f64(v));
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N], CheckpointError> {
        let bytes = self.buf.get(self.at..self.at + N).ok_or(CheckpointError::Length)?;
        self.at += N;
        Ok(bytes.try_into().expect("slice length checked"))
    }
    fn u32(&mut self) -> Result<u32, CheckpointError> {
        self.take().map(u32::from_le_bytes)
    }
    fn u64(&mut self) -> Result<u64, CheckpointError> {
        self.take().map(u64::from_le_bytes)
    }
    fn f64(&mut self) -> Result<f64, CheckpointError> {
        self.take().map(f64::from_le_bytes)
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, CheckpointError> {
        (0..n).map(|_| self.f64()).collect()
    }
}

pub fn encode(params: &PolicyParams, opt: &OptimizerState) -> Result<Vec<u8>, CheckpointError> {
    let input = params.input_dim();
    if input % 3 != 0 {
        return Err(CheckpointError::InputNotTriple(input));
    }
    let mut w = Writer(Vec::with_capacity(HEADER_LEN + 8 * 3 * params.num_params() + 4));
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION);
    w.u32((input / 3) as u32);
    w.u32(params.hidden_dim() as u32);
    w.u32(opt.batch_size);
    w.u32(opt.max_epochs);
    w.u32(match opt.schedule {
        LrSchedule::Constant => 0,
        LrSchedule::Linear => 1,
    });
    w.u64(opt.step);
    w.u64(opt.planned_updates);
    for v in [opt.learning_rate, opt.warmup_fraction, opt.beta1, opt.beta2, opt.eps] {
        w.f64(v);
    }
    w.f64s(params.w1());
    w.f64s(params.w2());
    w.f64s(&opt.first_moment);
    w.f64s(&opt.second_moment);
    let crc = crc32fast::hash(&w.0);
    w.u32(crc);
    Ok(w.0)
}

pub fn decode(bytes: &[u8]) -> Result<(PolicyParams, OptimizerState), CheckpointError> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut r = Reader { buf: bytes, at: MAGIC.len() };
    let version = r.u32().map_err(|_| CheckpointError::Checksum)?;
    if version != VERSION {
        return Err(CheckpointError::Incompatible { found: version });
    }
    if bytes.len() < HEADER_LEN + 4 {
        return Err(CheckpointError::Checksum);
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(CheckpointError::Checksum);
    }
    let mut r = Reader { buf: body, at: MAGIC.len() + 4 };
    let d = r.u32()? as usize;
    let hidden = r.u32()? as usize;
    let batch_size = r.u32()?;
    let max_epochs = r.u32()?;
    let schedule = match r.u32()? {
        0 => LrSchedule::Constant,
        1 => LrSchedule::Linear,
        code => return Err(CheckpointError::UnknownSchedule(code)),
    };
    let step = r.u64()?;
    let planned_updates = r.u64()?;
    let learning_rate = r.f64()?;
    let warmup_fraction = r.f64()?;
    let beta1 = r.f64()?;
    let beta2 = r.f64()?;
    let eps = r.f64()?;
    let input = 3 * d;
    let n = hidden * input + hidden;
    if body.len() != HEADER_LEN + 8 * 3 * n {
        return Err(CheckpointError::Length);
    }
    let w1 = r.f64s(hidden * input)?;
    let w2 = r.f64s(hidden)?;
    let first_moment = r.f64s(n)?;
    let second_moment = r.f64s(n)?;
    let params = PolicyParams::from_parts(input, hidden, w1, w2).map_err(|_| CheckpointError::Length)?;
    let opt = OptimizerState {
        first_moment,
        second_moment,
        step,
        learning_rate,
        warmup_fraction,
        batch_size,
        max_epochs,
        planned_updates,
        schedule,
        beta1,
        beta2,
        eps,
    };
    Ok((params, opt))
}
