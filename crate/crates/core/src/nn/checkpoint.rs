//! Binary checkpoint container.
//!
//! Layout (all integers little endian):
//!
//! ```text
//! magic  b"SQCK"
//! u32    format version (1)
//! u32    input_size        f64 dropout_rate
//! u32    #seq labels, then (u32 len, utf8) each
//! u32    #plane labels, then (u32 len, utf8) each
//! u32    #learnable slots, then (u64 len, f64 LE xs) each
//! u32    #state slots (BN running stats), same encoding
//! u8     adam present; if 1: f64 beta1, beta2, eps; u64 step;
//!        first and second moment slot arrays (same encoding as learnable)
//! u64    epoch counter
//! u64    rng seed (all stochastic streams re-derive from seed + epoch)
//! u8     best present; if 1: f64 best_val_loss_sum, u64 best_epoch
//! ```
//!
//! Round-trips are bit-exact: f64 payloads are stored as raw IEEE-754 bits.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::adam::AdamState;
use crate::nn::model::{ModelParams, NetConfig};

const MAGIC: &[u8; 4] = b"SQCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub adam: Option<AdamState>,
    pub epoch: u64,
    pub seed: u64,
    pub best: Option<(f64, u64)>,
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }
    fn slot(&mut self, s: &[f64]) {
        self.u64(s.len() as u64);
        for &v in s {
            self.f64(v);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::CorruptCheckpoint("truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
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
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::CorruptCheckpoint("non-utf8 label".into()))
    }
    fn slot(&mut self) -> Result<Vec<f64>> {
        let n = self.u64()? as usize;
        let bytes = self.take(n * 8)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn encode(ck: &Checkpoint) -> Vec<u8> {
    let mut w = Writer { buf: Vec::new() };
    w.buf.extend_from_slice(MAGIC);
    w.u32(VERSION);
    w.u32(ck.params.cfg.input_size as u32);
    w.f64(ck.params.cfg.dropout_rate);
    w.u32(ck.params.seq_labels.len() as u32);
    for s in &ck.params.seq_labels {
        w.str(s);
    }
    w.u32(ck.params.plane_labels.len() as u32);
    for s in &ck.params.plane_labels {
        w.str(s);
    }
    let learnable = ck.params.learnable_slots();
    w.u32(learnable.len() as u32);
    for s in learnable {
        w.slot(s);
    }
    let state = ck.params.state_slots();
    w.u32(state.len() as u32);
    for s in state {
        w.slot(s);
    }
    match &ck.adam {
        Some(a) => {
            w.u8(1);
            w.f64(a.beta1);
            w.f64(a.beta2);
            w.f64(a.epsilon);
            w.u64(a.step);
            for s in &a.first_moment {
                w.slot(s);
            }
            for s in &a.second_moment {
                w.slot(s);
            }
        }
        None => w.u8(0),
    }
    w.u64(ck.epoch);
    w.u64(ck.seed);
    match ck.best {
        Some((loss, epoch)) => {
            w.u8(1);
            w.f64(loss);
            w.u64(epoch);
        }
        None => w.u8(0),
    }
    w.buf
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::CorruptCheckpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::VersionMismatch(format!(
            "format version {version}, expected {VERSION}"
        )));
    }
    let input_size = r.u32()? as usize;
    let dropout_rate = r.f64()?;
    let cfg = NetConfig {
        input_size,
        dropout_rate,
    };
    let mut params = ModelParams::zeros(cfg)
        .map_err(|e| Error::CorruptCheckpoint(format!("bad config: {e}")))?;

    let n_seq = r.u32()? as usize;
    let seq_labels: Vec<String> = (0..n_seq).map(|_| r.str()).collect::<Result<_>>()?;
    let n_plane = r.u32()? as usize;
    let plane_labels: Vec<String> = (0..n_plane).map(|_| r.str()).collect::<Result<_>>()?;
    if seq_labels != params.seq_labels || plane_labels != params.plane_labels {
        return Err(Error::VersionMismatch(
            "checkpoint label table does not match this build's taxonomy".into(),
        ));
    }

    let n_learnable = r.u32()? as usize;
    {
        let mut slots = params.learnable_slots_mut();
        if n_learnable != slots.len() {
            return Err(Error::CorruptCheckpoint("learnable slot count".into()));
        }
        for s in slots.iter_mut() {
            let data = r.slot()?;
            if data.len() != s.len() {
                return Err(Error::CorruptCheckpoint("learnable slot shape".into()));
            }
            **s = data;
        }
    }
    let n_state = r.u32()? as usize;
    {
        let mut slots = params.state_slots_mut();
        if n_state != slots.len() {
            return Err(Error::CorruptCheckpoint("state slot count".into()));
        }
        for s in slots.iter_mut() {
            let data = r.slot()?;
            if data.len() != s.len() {
                return Err(Error::CorruptCheckpoint("state slot shape".into()));
            }
            **s = data;
        }
    }
    let adam = if r.u8()? == 1 {
        let beta1 = r.f64()?;
        let beta2 = r.f64()?;
        let epsilon = r.f64()?;
        let step = r.u64()?;
        let first_moment: Vec<Vec<f64>> =
            (0..n_learnable).map(|_| r.slot()).collect::<Result<_>>()?;
        let second_moment: Vec<Vec<f64>> =
            (0..n_learnable).map(|_| r.slot()).collect::<Result<_>>()?;
        Some(AdamState {
            beta1,
            beta2,
            epsilon,
            step,
            first_moment,
            second_moment,
        })
    } else {
        None
    };
    let epoch = r.u64()?;
    let seed = r.u64()?;
    let best = if r.u8()? == 1 {
        let loss = r.f64()?;
        let e = r.u64()?;
        Some((loss, e))
    } else {
        None
    };
    if r.pos != bytes.len() {
        return Err(Error::CorruptCheckpoint("trailing bytes".into()));
    }
    Ok(Checkpoint {
        params,
        adam,
        epoch,
        seed,
        best,
    })
}

/// Atomic write: temp file in the same directory, then rename.
pub fn save(ck: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = encode(ck);
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("ckpt")
    ));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .map_err(|e| Error::io(path, e))?
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
