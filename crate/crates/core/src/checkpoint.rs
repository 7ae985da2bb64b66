//! Binary checkpoints: a JSON header followed by raw little-endian `f64`
//! blobs, so parameters round-trip bit for bit.
//!
//! Layout: magic, `u32` version, `u64` header length, header, then the
//! parameters, the lexical resources and the optimizer moments in header
//! order.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use empathy_nn::{NoamSchedule, OptimizerState, ParameterStore, Tensor};
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::corpus::{IdfTable, Vocabulary};
use crate::error::{Error, Result};
use crate::model::{Model, Resources};

const MAGIC: &[u8; 8] = b"EMPATHY\0";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct OptimizerHeader {
    model_dim: usize,
    warmup: u64,
    factor: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    moments: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    vocab: Vocabulary,
    params: Vec<TensorEntry>,
    resource_len: usize,
    optimizer: Option<OptimizerHeader>,
}

/// A model plus, when saved during training, its optimizer state.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub optimizer: Option<OptimizerState>,
}

fn write_f64s<W: Write>(w: &mut W, data: &[f64]) -> std::io::Result<()> {
    for x in data {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; n * 8];
    r.read_exact(&mut bytes)
        .map_err(|e| Error::Checkpoint(format!("truncated data: {e}")))?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

pub fn save(path: impl AsRef<Path>, model: &Model, optimizer: Option<&OptimizerState>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_to(&mut w, model, optimizer).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_to<W: Write>(w: &mut W, model: &Model, optimizer: Option<&OptimizerState>) -> std::io::Result<()> {
    let entries = |it: &mut dyn Iterator<Item = (&str, &Tensor)>| -> Vec<TensorEntry> {
        it.map(|(n, t)| TensorEntry {
            name: n.to_string(),
            shape: t.shape().to_vec(),
        })
        .collect()
    };
    let header = Header {
        config: model.config.clone(),
        vocab: model.vocab.clone(),
        params: entries(&mut model.store.iter().map(|(n, p)| (n, &p.value))),
        resource_len: model.vocab.len(),
        optimizer: optimizer.map(|o| OptimizerHeader {
            model_dim: o.schedule.model_dim,
            warmup: o.schedule.warmup,
            factor: o.schedule.factor,
            beta1: o.beta1,
            beta2: o.beta2,
            eps: o.eps,
            step: o.step,
            moments: entries(&mut o.first_moment.iter().map(|(n, t)| (n.as_str(), t))),
        }),
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for (_, p) in model.store.iter() {
        write_f64s(w, p.value.data())?;
    }
    let res = &model.resources;
    let n = model.vocab.len();
    let vad: Vec<f64> = (0..n).flat_map(|i| {
        let (v, a, d) = res.vad(i);
        [v, a, d]
    }).collect();
    write_f64s(w, &vad)?;
    write_f64s(w, &(0..n).map(|i| res.idf.get(i)).collect::<Vec<_>>())?;
    write_f64s(w, &(0..n).map(|i| res.freqs.get(i).copied().unwrap_or(0.0)).collect::<Vec<_>>())?;
    if let Some(o) = optimizer {
        for t in o.first_moment.values() {
            write_f64s(w, t.data())?;
        }
        for name in o.first_moment.keys() {
            let t = o.second_moment.get(name).expect("moments share keys");
            write_f64s(w, t.data())?;
        }
    }
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_from(&mut BufReader::new(file))
}

pub fn read_from<R: Read>(r: &mut R) -> Result<Checkpoint> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| bad("file too short"))?;
    if &magic != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word).map_err(|_| bad("file too short"))?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len).map_err(|_| bad("file too short"))?;
    let mut json = vec![0u8; u64::from_le_bytes(len) as usize];
    r.read_exact(&mut json).map_err(|_| bad("truncated header"))?;
    let header: Header =
        serde_json::from_slice(&json).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;

    let mut store = ParameterStore::new();
    for e in &header.params {
        let n = e.shape.iter().product();
        store.register(e.name.clone(), Tensor::new(&e.shape, read_f64s(r, n)?)?)?;
    }
    let n = header.resource_len;
    let vad_flat = read_f64s(r, 3 * n)?;
    let resources = Resources {
        vad: vad_flat.chunks_exact(3).map(|c| (c[0], c[1], c[2])).collect(),
        idf: IdfTable::from_weights(read_f64s(r, n)?),
        freqs: read_f64s(r, n)?,
    };
    let optimizer = match header.optimizer {
        Some(o) => {
            let mut first = BTreeMap::new();
            let mut second = BTreeMap::new();
            for e in &o.moments {
                let n = e.shape.iter().product();
                first.insert(e.name.clone(), Tensor::new(&e.shape, read_f64s(r, n)?)?);
            }
            for e in &o.moments {
                let n = e.shape.iter().product();
                second.insert(e.name.clone(), Tensor::new(&e.shape, read_f64s(r, n)?)?);
            }
            let mut schedule = NoamSchedule::new(o.model_dim, o.warmup);
            schedule.factor = o.factor;
            Some(OptimizerState {
                schedule,
                beta1: o.beta1,
                beta2: o.beta2,
                eps: o.eps,
                step: o.step,
                first_moment: first,
                second_moment: second,
            })
        }
        None => None,
    };
    let model = Model::from_parts(header.config, header.vocab, resources, store)?;
    Ok(Checkpoint { model, optimizer })
}
