//! Binary checkpoint format (little-endian):
//!
//! ```text
//! magic "SPUMECKP" | version u32 | epoch u64 | tau f64 | activation u8
//! n_layers u32 | per layer: in u32, out u32, weights f64*, biases f64*
//! head tag u8 (0 none, 1 linear, 2 cosine)
//! [n_classes u32, dim u32, weights f64*, biases f64*]
//! ```
//!
//! Floats are stored as raw bits, so save -> load -> save is bit-identical.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::extractor::{Activation, ExtractorParams, Layer};
use crate::model::head::{HeadKind, LinearHead};

const MAGIC: &[u8; 8] = b"SPUMECKP";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ExtractorParams,
    pub tau: f64,
    pub epoch: usize,
    pub head: Option<(HeadKind, LinearHead)>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(format!("truncated at byte {}", self.pos)),
        }
    }

    fn u8(&mut self) -> std::result::Result<u8, String> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> std::result::Result<f64, String> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> std::result::Result<Vec<f64>, String> {
        (0..n).map(|_| self.f64()).collect()
    }
}

fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.epoch as u64).to_le_bytes());
        out.extend_from_slice(&self.tau.to_le_bytes());
        out.push(self.params.activation().code());
        out.extend_from_slice(&(self.params.layers().len() as u32).to_le_bytes());
        for layer in self.params.layers() {
            out.extend_from_slice(&(layer.in_dim as u32).to_le_bytes());
            out.extend_from_slice(&(layer.out_dim as u32).to_le_bytes());
            put_f64s(&mut out, &layer.weight);
            put_f64s(&mut out, &layer.bias);
        }
        match &self.head {
            None => out.push(0),
            Some((kind, head)) => {
                out.push(match kind {
                    HeadKind::Linear => 1,
                    HeadKind::Cosine => 2,
                });
                out.extend_from_slice(&(head.n_classes as u32).to_le_bytes());
                out.extend_from_slice(&(head.dim as u32).to_le_bytes());
                put_f64s(&mut out, &head.weight);
                put_f64s(&mut out, &head.bias);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err("not a checkpoint file".into());
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(format!("unsupported checkpoint version {version}"));
        }
        let epoch = r.u64()? as usize;
        let tau = r.f64()?;
        let activation = Activation::from_code(r.u8()?).ok_or("unknown activation code")?;
        let n_layers = r.u32()? as usize;
        let mut layers = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let in_dim = r.u32()? as usize;
            let out_dim = r.u32()? as usize;
            let weight = r.f64s(in_dim * out_dim)?;
            let bias = r.f64s(out_dim)?;
            layers.push(Layer::new(in_dim, out_dim, weight, bias).map_err(|e| e.to_string())?);
        }
        let params = ExtractorParams::new(layers, activation).map_err(|e| e.to_string())?;
        let head = match r.u8()? {
            0 => None,
            tag @ (1 | 2) => {
                let n_classes = r.u32()? as usize;
                let dim = r.u32()? as usize;
                let weight = r.f64s(n_classes * dim)?;
                let bias = r.f64s(n_classes)?;
                let kind = if tag == 1 { HeadKind::Linear } else { HeadKind::Cosine };
                let head = LinearHead::new(n_classes, dim, weight, bias).map_err(|e| e.to_string())?;
                Some((kind, head))
            }
            other => return Err(format!("unknown head tag {other}")),
        };
        if r.pos != bytes.len() {
            return Err(format!("{} trailing bytes", bytes.len() - r.pos));
        }
        Ok(Self {
            params,
            tau,
            epoch,
            head,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|m| Error::parse(path, 0, m))
    }
}
