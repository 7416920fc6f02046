//! Little-endian checkpoint format.
//!
//! ```text
//! magic "GMNC" | version u32 | model config (u32 len + key=value text) | modality table
//! tensor count u32 | per tensor: name (u16 len + utf8) | rank u8 | dims u32 x rank | f32 data
//! trainer flag u8 | if 1: train config (u32 len + text) | epochs done u64 | adam step u64
//!                        | first moments, second moments (f32, tensor order)
//!                        | step losses (u64 count + f64) | epoch losses (u64 count + f64)
//! ```

use std::fs;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use super::config::{KeyValues, ModelConfig};
use super::params::ParameterStore;
use crate::error::{Error, Result};
use crate::scene::{read_table, write_table};
use crate::tensor::{AdamState, Tensor};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"GMNC";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Optimizer progress needed to continue a run exactly where it stopped.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    /// Resolved training configuration as `key=value` lines.
    pub train_config: String,
    pub epochs_done: usize,
    pub adam: AdamState<f32>,
    pub step_losses: Vec<f64>,
    pub epoch_losses: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub store: ParameterStore<f32>,
    pub train: Option<TrainState>,
}

pub fn config_text(entries: &[(&str, String)]) -> String {
    entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

fn write_text<W: Write>(w: &mut W, s: &str) -> io::Result<()> {
    w.write_u32::<LE>(s.len() as u32)?;
    w.write_all(s.as_bytes())
}

fn read_text<R: Read>(r: &mut R) -> Result<String> {
    let n = r.read_u32::<LE>().map_err(eof("config"))? as usize;
    if n > 1 << 20 {
        return Err(Error::Data(format!("config block of {n} bytes")));
    }
    let mut b = vec![0u8; n];
    r.read_exact(&mut b).map_err(eof("config"))?;
    String::from_utf8(b).map_err(|_| Error::Data("config block is not utf-8".into()))
}

fn eof(what: &'static str) -> impl Fn(io::Error) -> Error {
    move |e| match e.kind() {
        io::ErrorKind::UnexpectedEof => Error::Truncated { what: what.into() },
        _ => Error::Io(e),
    }
}

fn write_f32s<W: Write>(w: &mut W, v: &[f32]) -> io::Result<()> {
    v.iter().try_for_each(|x| w.write_f32::<LE>(*x))
}

fn write_f64s<W: Write>(w: &mut W, v: &[f64]) -> io::Result<()> {
    w.write_u64::<LE>(v.len() as u64)?;
    v.iter().try_for_each(|x| w.write_f64::<LE>(*x))
}

fn read_f64s<R: Read>(r: &mut R) -> Result<Vec<f64>> {
    let n = r.read_u64::<LE>().map_err(eof("trainer state"))? as usize;
    if n > 1 << 28 {
        return Err(Error::Data(format!("loss trace of {n} entries")));
    }
    let mut v = vec![0f64; n];
    r.read_f64_into::<LE>(&mut v).map_err(eof("trainer state"))?;
    Ok(v)
}

pub fn parse_model_config(text: &str) -> Result<ModelConfig> {
    let mut cfg = ModelConfig::default();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Data(format!("bad config line {line:?}")))?;
        if !cfg.set(k.trim(), v)? {
            return Err(Error::Data(format!("unknown model key {k:?} in checkpoint")));
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn write_checkpoint_to<W: Write>(w: &mut W, ck: &Checkpoint) -> Result<()> {
    let s = &ck.store;
    w.write_all(&CHECKPOINT_MAGIC)?;
    w.write_u32::<LE>(CHECKPOINT_VERSION)?;
    write_text(w, &config_text(&s.config.entries()))?;
    write_table(w, &s.table)?;
    w.write_u32::<LE>(s.tensors.len() as u32)?;
    for (name, t) in s.layout.names.iter().zip(&s.tensors) {
        w.write_u16::<LE>(name.len() as u16)?;
        w.write_all(name.as_bytes())?;
        w.write_u8(t.shape().len() as u8)?;
        for d in t.shape() {
            w.write_u32::<LE>(*d as u32)?;
        }
        write_f32s(w, t.data())?;
    }
    match &ck.train {
        None => w.write_u8(0)?,
        Some(ts) => {
            w.write_u8(1)?;
            write_text(w, &ts.train_config)?;
            w.write_u64::<LE>(ts.epochs_done as u64)?;
            w.write_u64::<LE>(ts.adam.step)?;
            for m in ts.adam.m.iter().chain(&ts.adam.v) {
                write_f32s(w, m)?;
            }
            write_f64s(w, &ts.step_losses)?;
            write_f64s(w, &ts.epoch_losses)?;
        }
    }
    Ok(())
}

pub fn read_checkpoint_from<R: Read>(r: &mut R) -> Result<Checkpoint> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(eof("header"))?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic { expected: CHECKPOINT_MAGIC, found: magic });
    }
    let version = r.read_u32::<LE>().map_err(eof("header"))?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version { expected: CHECKPOINT_VERSION, found: version });
    }
    let config = parse_model_config(&read_text(r)?)?;
    let table = read_table(r)?;
    let n = r.read_u32::<LE>().map_err(eof("tensors"))? as usize;
    let expected = super::params::Layout::new(&config, &table)?;
    if n != expected.len() {
        return Err(Error::Data(format!("checkpoint has {n} tensors, layout needs {}", expected.len())));
    }
    let mut tensors = Vec::with_capacity(n);
    for (i, want) in expected.names.iter().enumerate() {
        let len = r.read_u16::<LE>().map_err(eof("tensors"))? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(eof("tensors"))?;
        if name != want.as_bytes() {
            return Err(Error::Data(format!("tensor {i} is {:?}, expected {want}", String::from_utf8_lossy(&name))));
        }
        let rank = r.read_u8().map_err(eof("tensors"))? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.read_u32::<LE>().map_err(eof("tensors"))? as usize);
        }
        if shape != expected.shapes[i] {
            return Err(Error::Data(format!("tensor {want} has shape {shape:?}, expected {:?}", expected.shapes[i])));
        }
        let mut data = vec![0f32; shape.iter().product()];
        r.read_f32_into::<LE>(&mut data).map_err(eof("tensors"))?;
        tensors.push(Tensor::new(shape, data)?);
    }
    let store = ParameterStore::from_tensors(&config, &table, tensors)?;
    let train = match r.read_u8().map_err(eof("trainer flag"))? {
        0 => None,
        1 => {
            let train_config = read_text(r)?;
            let epochs_done = r.read_u64::<LE>().map_err(eof("trainer state"))? as usize;
            let step = r.read_u64::<LE>().map_err(eof("trainer state"))?;
            let mut adam = AdamState::new(&store.tensors);
            adam.step = step;
            for m in adam.m.iter_mut().chain(adam.v.iter_mut()) {
                r.read_f32_into::<LE>(m).map_err(eof("trainer state"))?;
            }
            let step_losses = read_f64s(r)?;
            let epoch_losses = read_f64s(r)?;
            Some(TrainState { train_config, epochs_done, adam, step_losses, epoch_losses })
        }
        f => return Err(Error::Data(format!("bad trainer flag {f}"))),
    };
    Ok(Checkpoint { store, train })
}

pub fn write_checkpoint(path: impl AsRef<Path>, ck: &Checkpoint) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    write_checkpoint_to(&mut w, ck)?;
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    read_checkpoint_from(&mut BufReader::new(fs::File::open(path)?))
}
