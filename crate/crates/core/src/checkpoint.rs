//! Binary checkpoints: model config, every parameter tensor, optional optimizer state.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic "HSYOLOCK" | version u32 | config_len u32 | config text (key=value lines)
//! tensor_count u32 | per tensor: name_len u32, name, rank u32, extents u32 * rank, f32 values
//! has_optimizer u8 | [step u64 | tensor_count moments m | tensor_count moments v]
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Detector, ModelConfig};
use crate::tensor::Tensor;
use crate::train::AdamState;

pub const MAGIC: &[u8; 8] = b"HSYOLOCK";
pub const VERSION: u32 = 1;

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }

    fn bytes(&mut self, b: &[u8]) {
        self.u32(b.len());
        self.0.extend_from_slice(b);
    }

    fn values(&mut self, t: &Tensor) {
        for v in t.data() {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }

    fn tensor(&mut self, name: &str, t: &Tensor) {
        self.bytes(name.as_bytes());
        self.u32(t.rank());
        for &e in t.shape() {
            self.u32(e);
        }
        self.values(t);
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            corrupt(format!(
                "truncated: needed {n} bytes at offset {}, {} remain",
                self.pos,
                self.bytes.len() - self.pos
            ))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| corrupt("name is not UTF-8"))
    }

    fn values(&mut self, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let raw = self.take(n.checked_mul(4).ok_or_else(|| corrupt("tensor too large"))?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Tensor::new(shape, data)
    }

    fn tensor(&mut self) -> Result<(String, Tensor)> {
        let name = self.string()?;
        let rank = self.u32()?;
        if rank > 8 {
            return Err(corrupt(format!("tensor {name} has implausible rank {rank}")));
        }
        let shape = (0..rank).map(|_| self.u32()).collect::<Result<Vec<_>>>()?;
        Ok((name, self.values(&shape)?))
    }
}

pub fn encode_checkpoint(model: &Detector, optimizer: Option<&AdamState>) -> Vec<u8> {
    let mut w = Writer(MAGIC.to_vec());
    w.u32(VERSION as usize);
    w.bytes(model.config().to_kv().as_bytes());
    let params = model.params();
    w.u32(params.len());
    for (name, p) in &params {
        w.tensor(name, &p.value);
    }
    match optimizer {
        None => w.0.push(0),
        Some(st) => {
            w.0.push(1);
            w.0.extend_from_slice(&st.step.to_le_bytes());
            for t in st.m.iter().chain(&st.v) {
                w.values(t);
            }
        }
    }
    w.0
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(Detector, Option<AdamState>)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len()).ok() != Some(MAGIC.as_slice()) {
        return Err(corrupt("not a checkpoint (bad magic)"));
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(corrupt(format!("unsupported checkpoint version {version}")));
    }
    let config_text = r.string()?;
    let config = ModelConfig::from_kv(&config_text)?;
    let mut model = Detector::zeros(config)?;

    let count = r.u32()?;
    let mut params = model.params_mut();
    if count != params.len() {
        return Err(corrupt(format!(
            "checkpoint holds {count} tensors, model expects {}",
            params.len()
        )));
    }
    for (name, p) in params.iter_mut() {
        let (stored, t) = r.tensor()?;
        if &stored != name {
            return Err(corrupt(format!("expected tensor {name}, found {stored}")));
        }
        if t.shape() != p.value.shape() {
            return Err(corrupt(format!(
                "tensor {name} has shape {:?}, model expects {:?}",
                t.shape(),
                p.value.shape()
            )));
        }
        p.value = t;
    }
    let shapes: Vec<Vec<usize>> = params.iter().map(|(_, p)| p.value.shape().to_vec()).collect();
    drop(params);

    let optimizer = match r.take(1)?[0] {
        0 => None,
        1 => {
            let step = r.u64()?;
            let m = shapes.iter().map(|s| r.values(s)).collect::<Result<Vec<_>>>()?;
            let v = shapes.iter().map(|s| r.values(s)).collect::<Result<Vec<_>>>()?;
            Some(AdamState { step, m, v })
        }
        other => return Err(corrupt(format!("bad optimizer flag {other}"))),
    };
    if r.pos != bytes.len() {
        return Err(corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok((model, optimizer))
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &Detector, optimizer: Option<&AdamState>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_checkpoint(model, optimizer)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Detector, Option<AdamState>)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes).map_err(|e| match e {
        Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Detector {
        Detector::build(ModelConfig::for_resolution(32, 32), 3).unwrap()
    }

    #[test]
    fn round_trip_bytes() {
        let m = small();
        let mut st = AdamState::for_model(&m);
        st.step = 5;
        st.m[0].fill(0.25);
        let bytes = encode_checkpoint(&m, Some(&st));
        let (m2, st2) = decode_checkpoint(&bytes).unwrap();
        assert_eq!(st2.as_ref(), Some(&st));
        assert_eq!(encode_checkpoint(&m2, st2.as_ref()), bytes);

        let bare = encode_checkpoint(&m, None);
        let (m3, none) = decode_checkpoint(&bare).unwrap();
        assert!(none.is_none());
        assert_eq!(encode_checkpoint(&m3, None), bare);
    }

    #[test]
    fn corrupt_inputs_rejected() {
        let bytes = encode_checkpoint(&small(), None);
        assert!(decode_checkpoint(&bytes[..bytes.len() - 3]).is_err());
        assert!(decode_checkpoint(b"NOTACKPT").is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_checkpoint(&extra).is_err());
    }
}
