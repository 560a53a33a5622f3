//! Binary model checkpoints.
//!
//! Layout (all integers little-endian):
//!   magic "SGMPCKPT", u32 version, u64 seed,
//!   4 x u64 dims (feature_dim, hidden, num_classes, num_predicates),
//!   vocab (two length-prefixed string lists),
//!   u64 tensor count, then per tensor: name, u64 rank, shape, f64 values.
//! Floats are stored as raw bits, so save/load round-trips bit-exactly.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::VocabMeta;
use crate::model::{ModelDims, ModelParams};

const MAGIC: &[u8; 8] = b"SGMPCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub seed: u64,
    pub dims: ModelDims,
    pub vocab: VocabMeta,
    pub params: ModelParams,
}

fn w_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn w_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn w_str(out: &mut Vec<u8>, s: &str) {
    w_u64(out, s.len() as u64);
    out.extend_from_slice(s.as_bytes());
}

fn w_str_list(out: &mut Vec<u8>, names: &[String]) {
    w_u64(out, names.len() as u64);
    for n in names {
        w_str(out, n);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Validation(format!(
                "checkpoint truncated at byte {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| Error::Validation(format!("length {v} overflows usize")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.usize()?;
        let bytes = self.take(n)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| Error::Validation("checkpoint string is not UTF-8".to_string()))
    }

    fn str_list(&mut self) -> Result<Vec<String>> {
        let n = self.usize()?;
        (0..n).map(|_| self.string()).collect()
    }
}

pub fn encode(ck: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    w_u32(&mut out, VERSION);
    w_u64(&mut out, ck.seed);
    for d in [
        ck.dims.feature_dim,
        ck.dims.hidden,
        ck.dims.num_classes,
        ck.dims.num_predicates,
    ] {
        w_u64(&mut out, d as u64);
    }
    w_str_list(&mut out, &ck.vocab.class_names);
    w_str_list(&mut out, &ck.vocab.predicate_names);
    let tensors = ck.params.tensors();
    w_u64(&mut out, tensors.len() as u64);
    for t in tensors {
        w_str(&mut out, &t.name);
        w_u64(&mut out, t.shape.len() as u64);
        for &d in &t.shape {
            w_u64(&mut out, d as u64);
        }
        for &v in &t.values {
            w_u64(&mut out, v.to_bits());
        }
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic = r.take(8)?;
    if magic != MAGIC {
        return Err(Error::Validation(
            "not a model checkpoint (bad magic)".to_string(),
        ));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Validation(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let seed = r.u64()?;
    let dims = ModelDims {
        feature_dim: r.usize()?,
        hidden: r.usize()?,
        num_classes: r.usize()?,
        num_predicates: r.usize()?,
    };
    let vocab = VocabMeta {
        class_names: r.str_list()?,
        predicate_names: r.str_list()?,
    };
    vocab.validate()?;
    if vocab.num_classes() != dims.num_classes || vocab.num_predicates() != dims.num_predicates {
        return Err(Error::Validation(format!(
            "vocab sizes ({}, {}) disagree with dims ({}, {})",
            vocab.num_classes(),
            vocab.num_predicates(),
            dims.num_classes,
            dims.num_predicates
        )));
    }

    let mut params = ModelParams::zeros(dims);
    let count = r.usize()?;
    {
        let tensors = params.tensors_mut();
        if count != tensors.len() {
            return Err(Error::Validation(format!(
                "checkpoint has {count} tensors, expected {}",
                tensors.len()
            )));
        }
        for t in tensors {
            let name = r.string()?;
            if name != t.name {
                return Err(Error::Validation(format!(
                    "tensor order mismatch: found {name:?}, expected {:?}",
                    t.name
                )));
            }
            let rank = r.usize()?;
            let shape: Vec<usize> = (0..rank).map(|_| r.usize()).collect::<Result<_>>()?;
            if shape != t.shape {
                return Err(Error::Validation(format!(
                    "tensor {name:?} has shape {shape:?}, expected {:?}",
                    t.shape
                )));
            }
            for v in t.values.iter_mut() {
                *v = f64::from_bits(r.u64()?);
                if !v.is_finite() {
                    return Err(Error::Validation(format!(
                        "tensor {name:?} contains a non-finite value"
                    )));
                }
            }
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Validation(format!(
            "{} trailing bytes after checkpoint payload",
            bytes.len() - r.pos
        )));
    }
    Ok(Checkpoint {
        seed,
        dims,
        vocab,
        params,
    })
}

pub fn save(ck: &Checkpoint, path: &Path) -> Result<()> {
    let io_err = |e: std::io::Error| Error::Io {
        path: path.to_path_buf(),
        source: e,
    };
    let mut f = std::fs::File::create(path).map_err(io_err)?;
    f.write_all(&encode(ck)).map_err(io_err)
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let io_err = |e: std::io::Error| Error::Io {
        path: path.to_path_buf(),
        source: e,
    };
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .map_err(io_err)?
        .read_to_end(&mut bytes)
        .map_err(io_err)?;
    decode(&bytes)
}
