//! Checkpoint container: one JSON header line, then little-endian `f64`
//! arrays in header order.
//!
//! ```text
//! {"format":"biaslab-checkpoint","version":1,"head":"softmax","seed":7,
//!  "tensors":[{"name":"layer0.weight","shape":[8,4]},...],
//!  "adapters":[{"layer":0,"rank":2,"frozen_base":true}]}\n
//! <8-byte LE f64> ...
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;

use super::{Head, Layer, LoraAdapter, ModelError, ModelParams, ParamId, Result};

const FORMAT: &str = "biaslab-checkpoint";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct AdapterEntry {
    layer: usize,
    rank: usize,
    frozen_base: bool,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    head: Head,
    seed: u64,
    tensors: Vec<TensorEntry>,
    adapters: Vec<AdapterEntry>,
}

pub fn write_checkpoint<W: Write>(model: &ModelParams, mut out: W) -> Result<()> {
    let ids = model.param_ids();
    let header = Header {
        format: FORMAT.into(),
        version: VERSION,
        head: model.head(),
        seed: model.seed(),
        tensors: ids
            .iter()
            .map(|&id| TensorEntry {
                name: id.name(),
                shape: model.param(id).shape().to_vec(),
            })
            .collect(),
        adapters: model
            .adapters()
            .iter()
            .map(|(&layer, a)| AdapterEntry {
                layer,
                rank: a.rank,
                frozen_base: a.frozen_base,
            })
            .collect(),
    };
    let line = serde_json::to_string(&header).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    out.write_all(line.as_bytes())?;
    out.write_all(b"\n")?;
    for id in ids {
        for v in model.param(id).data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

fn parse_name(name: &str) -> Option<ParamId> {
    let rest = name.strip_prefix("layer")?;
    let (idx, kind) = rest.split_once('.')?;
    let i: usize = idx.parse().ok()?;
    match kind {
        "weight" => Some(ParamId::Weight(i)),
        "bias" => Some(ParamId::Bias(i)),
        "lora_a" => Some(ParamId::LoraA(i)),
        "lora_b" => Some(ParamId::LoraB(i)),
        _ => None,
    }
}

pub fn read_checkpoint<R: Read>(input: R) -> Result<ModelParams> {
    let mut reader = BufReader::new(input);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    let header: Header =
        serde_json::from_str(line.trim_end()).map_err(|e| ModelError::Checkpoint(format!("bad header: {e}")))?;
    if header.format != FORMAT || header.version != VERSION {
        return Err(ModelError::Checkpoint(format!(
            "unsupported container {} v{}",
            header.format, header.version
        )));
    }

    let mut tensors: BTreeMap<ParamId, Tensor> = BTreeMap::new();
    let mut buf = [0u8; 8];
    for entry in &header.tensors {
        let id = parse_name(&entry.name)
            .ok_or_else(|| ModelError::Checkpoint(format!("unknown tensor name {}", entry.name)))?;
        let n: usize = entry.shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            reader
                .read_exact(&mut buf)
                .map_err(|_| ModelError::Checkpoint(format!("truncated data for {}", entry.name)))?;
            data.push(f64::from_le_bytes(buf));
        }
        tensors.insert(id, Tensor::new(&entry.shape, data)?);
    }
    let mut rest = Vec::new();
    reader.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(ModelError::Checkpoint(format!("{} trailing bytes", rest.len())));
    }

    let n_layers = tensors
        .keys()
        .filter(|id| matches!(id, ParamId::Weight(_)))
        .count();
    let mut take = |id: ParamId| {
        tensors
            .remove(&id)
            .ok_or_else(|| ModelError::Checkpoint(format!("missing tensor {}", id.name())))
    };
    let mut layers = Vec::with_capacity(n_layers);
    for i in 0..n_layers {
        layers.push(Layer {
            weight: take(ParamId::Weight(i))?,
            bias: take(ParamId::Bias(i))?,
        });
    }
    let mut adapters = BTreeMap::new();
    for a in &header.adapters {
        adapters.insert(
            a.layer,
            LoraAdapter {
                a: take(ParamId::LoraA(a.layer))?,
                b: take(ParamId::LoraB(a.layer))?,
                rank: a.rank,
                frozen_base: a.frozen_base,
            },
        );
    }
    if let Some(id) = tensors.keys().next() {
        return Err(ModelError::Checkpoint(format!("unexpected tensor {}", id.name())));
    }
    ModelParams::from_parts(layers, header.head, adapters, header.seed)
}

pub fn save_checkpoint(model: &ModelParams, path: &Path) -> Result<()> {
    write_checkpoint(model, BufWriter::new(File::create(path)?))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    read_checkpoint(File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_model;

    #[test]
    fn header_is_json_line() {
        let m = init_model(&[3, 2], Head::Softmax, 5).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&m, &mut buf).unwrap();
        let nl = buf.iter().position(|&b| b == b'\n').unwrap();
        let v: serde_json::Value = serde_json::from_slice(&buf[..nl]).unwrap();
        assert_eq!(v["head"], "softmax");
        assert_eq!(v["seed"], 5);
        assert_eq!(v["tensors"][0]["shape"], serde_json::json!([2, 3]));
        assert_eq!(buf.len() - nl - 1, 8 * (6 + 2));
    }

    #[test]
    fn truncated_payload_rejected() {
        let m = init_model(&[3, 2], Head::Softmax, 5).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&m, &mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(read_checkpoint(buf.as_slice()).is_err());
    }

    #[test]
    fn adapters_survive_round_trip() {
        let m = init_model(&[4, 3, 2], Head::Softmax, 5)
            .unwrap()
            .attach_lora(&[0], 2, 1)
            .unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&m, &mut buf).unwrap();
        assert_eq!(read_checkpoint(buf.as_slice()).unwrap(), m);
    }
}
