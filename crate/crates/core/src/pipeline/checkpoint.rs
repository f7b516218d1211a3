//! Binary checkpoints: `AGNN`, a little-endian `u32` version, then named
//! tensor records. Model hyper-parameters are stored as extra one-element
//! records under `config.*`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::encoder::EncoderConfig;
use crate::engine::Tensor;
use crate::error::{Error, Result};
use crate::graph::GraphConfig;
use crate::model::{Model, ModelConfig, ModelParams};

pub const MAGIC: &[u8; 4] = b"AGNN";
pub const VERSION: u32 = 1;

fn config_records(c: &ModelConfig) -> Vec<(&'static str, f64)> {
    vec![
        ("config.downsample", c.encoder.downsample as f64),
        ("config.channels", c.encoder.channels as f64),
        ("config.hidden", c.encoder.hidden as f64),
        ("config.readout_hidden", c.readout_hidden as f64),
        ("config.k_iters", c.graph.k_iters as f64),
        ("config.gated", if c.graph.gated { 1.0 } else { 0.0 }),
    ]
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("checkpoint field fits in u32").to_le_bytes());
}

fn put_record(out: &mut Vec<u8>, name: &str, t: &Tensor) {
    put_u32(out, name.len());
    out.extend_from_slice(name.as_bytes());
    put_u32(out, t.rank());
    for &d in t.shape() {
        put_u32(out, d);
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_checkpoint(model: &Model) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    out.extend_from_slice(&VERSION.to_le_bytes());
    for (name, v) in config_records(&model.config) {
        put_record(&mut out, name, &Tensor::full(&[1], v));
    }
    for (name, t) in model.params.named() {
        put_record(&mut out, &name, t);
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn fail(&self, detail: impl Into<String>) -> Error {
        Error::Format {
            kind: "checkpoint",
            position: self.pos,
            detail: detail.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.fail(format!("truncated: need {n} more bytes")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    fn record(&mut self) -> Result<(String, Tensor)> {
        let len = self.u32()?;
        let name = String::from_utf8(self.take(len)?.to_vec()).map_err(|_| self.fail("record name is not UTF-8"))?;
        let rank = self.u32()?;
        if rank == 0 || rank > crate::engine::MAX_RANK {
            return Err(self.fail(format!("record {name:?} has unsupported rank {rank}")));
        }
        let shape = (0..rank).map(|_| self.u32()).collect::<Result<Vec<_>>>()?;
        let count = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let count = count
            .filter(|&c| c.checked_mul(8).is_some_and(|b| b <= self.bytes.len() - self.pos))
            .ok_or_else(|| self.fail(format!("record {name:?} payload exceeds the file")))?;
        let data = self
            .take(count * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let at = self.pos;
        let t = Tensor::new(&shape, data).map_err(|e| Error::Format {
            kind: "checkpoint",
            position: at,
            detail: e.to_string(),
        })?;
        Ok((name, t))
    }
}

fn config_value(records: &mut BTreeMap<String, Tensor>, name: &str) -> Result<usize> {
    let t = records
        .remove(name)
        .ok_or_else(|| Error::CheckpointMismatch(format!("missing record {name}")))?;
    let v = match t.data() {
        [v] if v.fract() == 0.0 && *v >= 0.0 => *v as usize,
        _ => return Err(Error::CheckpointMismatch(format!("{name} must hold one non-negative integer"))),
    };
    Ok(v)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4).ok() != Some(&MAGIC[..]) {
        r.pos = 0;
        return Err(r.fail("bad magic"));
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(r.fail(format!("unsupported version {version}")));
    }
    let mut records = BTreeMap::new();
    while r.pos < bytes.len() {
        let start = r.pos;
        let (name, t) = r.record()?;
        if records.insert(name.clone(), t).is_some() {
            r.pos = start;
            return Err(r.fail(format!("duplicate record {name:?}")));
        }
    }
    let config = ModelConfig {
        encoder: EncoderConfig {
            downsample: config_value(&mut records, "config.downsample")?,
            channels: config_value(&mut records, "config.channels")?,
            hidden: config_value(&mut records, "config.hidden")?,
        },
        readout_hidden: config_value(&mut records, "config.readout_hidden")?,
        graph: GraphConfig {
            k_iters: config_value(&mut records, "config.k_iters")?,
            gated: config_value(&mut records, "config.gated")? != 0,
        },
    };
    config.validate().map_err(|e| Error::CheckpointMismatch(e.to_string()))?;
    let template = ModelParams::init(&config, 0)?;
    let params = template.try_map(|g, field, expected| {
        let name = format!("{}.{field}", g.prefix());
        let t = records
            .remove(&name)
            .ok_or_else(|| Error::CheckpointMismatch(format!("missing tensor {name}")))?;
        if t.shape() != expected.shape() {
            return Err(Error::CheckpointMismatch(format!(
                "{name} has shape {:?}, model expects {:?}",
                t.shape(),
                expected.shape()
            )));
        }
        Ok(t)
    })?;
    if let Some(extra) = records.keys().next() {
        return Err(Error::CheckpointMismatch(format!("unexpected record {extra}")));
    }
    Ok(Model { config, params })
}

pub fn save_checkpoint(path: &Path, model: &Model) -> Result<()> {
    fs::write(path, encode_checkpoint(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::Missing(path.to_path_buf()),
        _ => Error::io(path, e),
    })?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Model {
        let mut c = ModelConfig::default();
        c.encoder.channels = 4;
        c.encoder.hidden = 3;
        c.readout_hidden = 2;
        Model::init(c, 5).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let m = small();
        let bytes = encode_checkpoint(&m);
        assert_eq!(&bytes[..4], b"AGNN");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(decode_checkpoint(&bytes).unwrap(), m);
    }

    #[test]
    fn rejects_corruption() {
        let m = small();
        let bytes = encode_checkpoint(&m);
        assert!(matches!(decode_checkpoint(&bytes[..bytes.len() - 3]), Err(Error::Format { .. })));
        assert!(matches!(decode_checkpoint(b"NOPE\x01\0\0\0"), Err(Error::Format { position: 0, .. })));

        let mut other = m.clone();
        other.params.agnn.w_c = Tensor::zeros(&[3, 3]);
        assert!(matches!(
            decode_checkpoint(&encode_checkpoint(&other)),
            Err(Error::CheckpointMismatch(_))
        ));
    }
}
