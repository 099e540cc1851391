//! Binary checkpoint container.
//!
//! Layout (little-endian): magic `LFV1`, u32 version, u32 entry count, then
//! per entry a u32-length utf-8 name, u32 rank, u64 extents and f64 payload;
//! then the trailer with the config text, step, optimizer scalars, lexico
//! scalars and rng position.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::lexico::{ConstraintFloor, LexicoState, Mode};
use crate::optim::{AdamState, Optimizer};
use crate::rng::RngState;

pub const MAGIC: &[u8; 4] = b"LFV1";
pub const VERSION: u32 = 1;

/// One named array. Extents may be zero (e.g. an empty history).
#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config_text: String,
    pub step: u64,
    /// Model parameters in canonical order.
    pub params: Vec<Entry>,
    pub optimizer: Optimizer,
    pub lexico: LexicoState,
    pub rng: RngState,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn entry(&mut self, name: &str, shape: &[usize], data: &[f64]) {
        self.str(name);
        self.u32(shape.len() as u32);
        for &e in shape {
            self.u64(e as u64);
        }
        for &x in data {
            self.f64(x);
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("name is not utf-8".into()))
    }
    fn entry(&mut self) -> Result<Entry> {
        let name = self.str()?;
        let rank = self.u32()? as usize;
        let shape = (0..rank).map(|_| self.u64().map(|e| e as usize)).collect::<Result<Vec<_>>>()?;
        let numel = shape.iter().try_fold(1usize, |acc, &e| acc.checked_mul(e));
        let numel = numel.filter(|&n| n <= self.bytes.len() / 8).ok_or_else(|| Error::Checkpoint(format!("entry {name} too large")))?;
        let data = (0..numel).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        Ok(Entry { name, shape, data })
    }
}

const OPTIM_M: &str = "optimizer.m";
const OPTIM_V: &str = "optimizer.v";
const LAMBDA_HISTORY: &str = "lexico.lambda_history";
const SKIPPED: &str = "lexico.skipped";

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(VERSION);
        let extra = 2 + if matches!(self.optimizer, Optimizer::Adam(_)) { 2 } else { 0 };
        w.u32((self.params.len() + extra) as u32);
        for e in &self.params {
            w.entry(&e.name, &e.shape, &e.data);
        }
        if let Optimizer::Adam(st) = &self.optimizer {
            w.entry(OPTIM_M, &[st.m.len()], &st.m);
            w.entry(OPTIM_V, &[st.v.len()], &st.v);
        }
        let hist = &self.lexico.lambda_history;
        w.entry(LAMBDA_HISTORY, &[hist.len()], hist);
        let skipped: Vec<f64> = self.lexico.skipped.iter().map(|&s| s as f64).collect();
        w.entry(SKIPPED, &[skipped.len()], &skipped);

        w.str(&self.config_text);
        w.u64(self.step);
        match &self.optimizer {
            Optimizer::Sgd => w.u8(0),
            Optimizer::Adam(st) => {
                w.u8(1);
                w.f64(st.beta1);
                w.f64(st.beta2);
                w.f64(st.eps);
                w.u64(st.t);
            }
        }
        let lx = &self.lexico;
        match lx.mode {
            Mode::Lexico => w.u8(0),
            Mode::FixedLambda(l) => {
                w.u8(1);
                w.f64(l);
            }
            Mode::Separate => w.u8(2),
        }
        match lx.floor {
            ConstraintFloor::Fixed(c) => {
                w.u8(0);
                w.f64(c);
            }
            ConstraintFloor::RunningMin => w.u8(1),
        }
        w.f64(lx.step_size);
        w.u64(lx.iteration as u64);
        match lx.best_flow {
            None => w.u8(0),
            Some(b) => {
                w.u8(1);
                w.f64(b);
            }
        }
        w.0.extend_from_slice(&self.rng.seed);
        w.u64(self.rng.stream);
        w.0.extend_from_slice(&self.rng.word_pos.to_le_bytes());
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let count = r.u32()? as usize;
        let mut params = Vec::new();
        let (mut m, mut v, mut hist, mut skipped) = (None, None, None, None);
        for _ in 0..count {
            let e = r.entry()?;
            match e.name.as_str() {
                OPTIM_M => m = Some(e.data),
                OPTIM_V => v = Some(e.data),
                LAMBDA_HISTORY => hist = Some(e.data),
                SKIPPED => skipped = Some(e.data),
                _ => params.push(e),
            }
        }
        let missing = |what: &str| Error::Checkpoint(format!("missing {what}"));

        let config_text = r.str()?;
        let step = r.u64()?;
        let optimizer = match r.u8()? {
            0 => Optimizer::Sgd,
            1 => Optimizer::Adam(AdamState {
                beta1: r.f64()?,
                beta2: r.f64()?,
                eps: r.f64()?,
                t: r.u64()?,
                m: m.ok_or_else(|| missing(OPTIM_M))?,
                v: v.ok_or_else(|| missing(OPTIM_V))?,
            }),
            k => return Err(Error::Checkpoint(format!("unknown optimizer tag {k}"))),
        };
        let mode = match r.u8()? {
            0 => Mode::Lexico,
            1 => Mode::FixedLambda(r.f64()?),
            2 => Mode::Separate,
            k => return Err(Error::Checkpoint(format!("unknown mode tag {k}"))),
        };
        let floor = match r.u8()? {
            0 => ConstraintFloor::Fixed(r.f64()?),
            1 => ConstraintFloor::RunningMin,
            k => return Err(Error::Checkpoint(format!("unknown floor tag {k}"))),
        };
        let step_size = r.f64()?;
        let iteration = r.u64()? as usize;
        let best_flow = match r.u8()? {
            0 => None,
            _ => Some(r.f64()?),
        };
        let lexico = LexicoState {
            mode,
            step_size,
            iteration,
            floor,
            best_flow,
            lambda_history: hist.ok_or_else(|| missing(LAMBDA_HISTORY))?,
            skipped: skipped.ok_or_else(|| missing(SKIPPED))?.iter().map(|&s| s as usize).collect(),
        };
        let seed: [u8; 32] = r.take(32)?.try_into().unwrap();
        let stream = r.u64()?;
        let word_pos = u128::from_le_bytes(r.take(16)?.try_into().unwrap());
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint { config_text, step, params, optimizer, lexico, rng: RngState { seed, stream, word_pos } })
    }

    /// Writes to a temporary sibling and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).and_then(|_| f.sync_all()).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
