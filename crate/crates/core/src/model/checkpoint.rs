//! Binary checkpoint container.
//!
//! Layout: 8-byte magic `CGCKPT\0\0`, `u32` format version, `u64` header
//! length, a JSON header (config, vocabulary, tag label sets, parameter names
//! and shapes), then every parameter as little-endian `f32` in header order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::transformer::{TagLabels, Transformer};
use super::vocab::Vocabulary;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"CGCKPT\0\0";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    vocab: Vocabulary,
    tags: Option<TagLabels>,
    params: Vec<(String, Vec<usize>)>,
}

pub fn write_checkpoint<W: Write>(model: &Transformer<f32>, mut w: W) -> Result<()> {
    let header = Header {
        config: model.config().clone(),
        vocab: model.vocab().clone(),
        tags: model.tag_labels().cloned(),
        params: model
            .params()
            .iter()
            .map(|(_, n, t)| (n.to_string(), t.shape().to_vec()))
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    let mut buf = Vec::new();
    for (_, _, t) in model.params().iter() {
        buf.clear();
        buf.extend(t.data().iter().flat_map(|v| v.to_le_bytes()));
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Transformer<f32>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let mut json = vec![0u8; u64::from_le_bytes(len) as usize];
    r.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json)?;
    let mut model = Transformer::new(header.config, header.vocab, header.tags, 0)?;
    if header.params.len() != model.params().len() {
        return Err(Error::Checkpoint(format!(
            "expected {} tensors, header lists {}",
            model.params().len(),
            header.params.len()
        )));
    }
    for (name, shape) in header.params {
        let id = model
            .params()
            .id(&name)
            .ok_or_else(|| Error::Checkpoint(format!("unexpected tensor {name}")))?;
        if model.params().get(id).shape() != shape.as_slice() {
            return Err(Error::Checkpoint(format!("shape mismatch for {name}")));
        }
        let n: usize = shape.iter().product();
        let mut bytes = vec![0u8; n * 4];
        r.read_exact(&mut bytes)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        *model.params_mut().get_mut(id) = Tensor::new(shape, data)?;
    }
    Ok(model)
}

pub fn save(model: &Transformer<f32>, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(f);
    write_checkpoint(model, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Transformer<f32>> {
    let f = std::fs::File::open(path)?;
    read_checkpoint(std::io::BufReader::new(f))
}
