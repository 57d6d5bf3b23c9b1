//! Binary checkpoint format.
//!
//! Layout: the 8-byte magic `BIOCMPS1`, a little-endian `u64` header length,
//! a JSON header with the model config and the ordered list of parameter
//! names, shapes and trainable flags, then every parameter's values as
//! little-endian `f64` in header order. Values are stored as raw bits, so a
//! save/load round trip is bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BioCompass, ModelConfig};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"BIOCMPS1";

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    trainable: bool,
}

pub fn save_checkpoint(model: &BioCompass, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(model, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<BioCompass> {
    read_checkpoint(&mut BufReader::new(File::open(path)?))
}

pub fn write_checkpoint(model: &BioCompass, w: &mut impl Write) -> Result<()> {
    let header = Header {
        config: model.config().clone(),
        tensors: model
            .params()
            .iter()
            .map(|(_, p)| TensorEntry {
                name: p.name.clone(),
                shape: p.tensor.shape().to_vec(),
                trainable: p.trainable,
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(MAGIC)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for (_, p) in model.params().iter() {
        for v in p.tensor.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<BioCompass> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic bytes".into()));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len) as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json)?;

    // Rebuild the parameter layout from the config, then overwrite values.
    let mut model = BioCompass::new(header.config, 0)?;
    if model.params().len() != header.tensors.len() {
        return Err(Error::Checkpoint(format!(
            "config implies {} tensors, checkpoint has {}",
            model.params().len(),
            header.tensors.len()
        )));
    }
    for entry in header.tensors {
        let id = model
            .params()
            .find(&entry.name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown tensor `{}`", entry.name)))?;
        let n: usize = entry.shape.iter().product();
        let mut data = Vec::with_capacity(n);
        let mut buf = [0u8; 8];
        for _ in 0..n {
            r.read_exact(&mut buf)?;
            data.push(f64::from_le_bytes(buf));
        }
        let tensor = Tensor::new(entry.shape, data)?;
        model.set_param(id, tensor)?;
        model.params_mut().set_trainable(id, entry.trainable);
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Checkpoint("trailing bytes after tensor data".into()));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Pooling, TrainMode};

    #[test]
    fn round_trip_is_bit_exact() {
        let mut cfg = ModelConfig::new(6, 2, 1, 1, 3);
        cfg.encoder.pooling = Pooling::Attention;
        cfg.encoder.hidden_dims = vec![4];
        cfg.classifier_hidden = Some(5);
        let mut model = BioCompass::new(cfg, 17).unwrap();
        model.set_mode(TrainMode::Pft);
        let mut buf = Vec::new();
        write_checkpoint(&model, &mut buf).unwrap();
        let loaded = read_checkpoint(&mut buf.as_slice()).unwrap();
        assert_eq!(loaded, model);
        let bits = |m: &BioCompass| m.params().flat_values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&loaded), bits(&model));
    }

    #[test]
    fn rejects_truncated_and_foreign_files() {
        let model = BioCompass::new(ModelConfig::new(3, 1, 1, 1, 1), 1).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&model, &mut buf).unwrap();
        assert!(read_checkpoint(&mut &buf[..buf.len() - 3]).is_err());
        assert!(read_checkpoint(&mut &b"NOTACKPT........"[..]).is_err());
    }
}
