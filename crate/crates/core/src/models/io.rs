//! Binary model files: `DRSM` magic, u16 version, length-prefixed
//! architecture descriptor, named little-endian f32 parameters, CRC32.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::graph::ModelGraph;

pub const MAGIC: &[u8; 4] = b"DRSM";
pub const FORMAT_VERSION: u16 = 1;

pub fn encode_model(model: &ModelGraph) -> Vec<u8> {
    let mut body = Vec::new();
    body.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let desc = model.descriptor();
    body.extend_from_slice(&(desc.len() as u32).to_le_bytes());
    body.extend_from_slice(desc.as_bytes());
    for (name, t) in model.weights().iter() {
        body.extend_from_slice(&(name.len() as u32).to_le_bytes());
        body.extend_from_slice(name.as_bytes());
        body.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            body.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            body.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&body);
    let mut out = Vec::with_capacity(body.len() + 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&body);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format("model file is truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn string(&mut self) -> Result<&'a str> {
        let n = self.u32()? as usize;
        std::str::from_utf8(self.take(n)?).map_err(|_| Error::Format("name is not UTF-8".into()))
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<ModelGraph> {
    if bytes.len() < MAGIC.len() + 2 + 4 {
        return Err(Error::Format("model file is truncated".into()));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Format("bad magic; not a model file".into()));
    }
    let (body, crc) = bytes[4..].split_at(bytes.len() - 8);
    if crc32fast::hash(body) != u32::from_le_bytes(crc.try_into().expect("4 bytes")) {
        return Err(Error::Format("checksum mismatch".into()));
    }
    let mut r = Reader { buf: body, pos: 0 };
    let version = u16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported format version {version}")));
    }
    let mut model = ModelGraph::from_descriptor(r.string()?)?;
    let names: Vec<String> = model.weights().iter().map(|(n, _)| n.to_string()).collect();
    for expected in names {
        let name = r.string()?;
        if name != expected {
            return Err(Error::Format(format!(
                "parameter {name:?} found where {expected:?} was expected"
            )));
        }
        let rank = r.u32()? as usize;
        if rank == 0 || rank > 4 {
            return Err(Error::Format(format!("{name}: invalid rank {rank}")));
        }
        let shape = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        let raw = r.take(len.checked_mul(4).ok_or_else(|| Error::Format("extent overflow".into()))?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let t = Tensor::new(&shape, data).map_err(|e| Error::Format(format!("{name}: {e}")))?;
        model
            .set_param(&expected, t)
            .map_err(|e| Error::Format(e.to_string()))?;
    }
    if r.pos != body.len() {
        return Err(Error::Format("trailing bytes after the last parameter".into()));
    }
    Ok(model)
}

/// Writes via a temporary sibling file and a rename, so readers never see a
/// partial checkpoint.
pub fn save_model(model: &ModelGraph, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, encode_model(model)).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<ModelGraph> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Loads a model and refuses it unless its architecture matches `expected`.
pub fn load_model_matching(path: &Path, expected: &ModelGraph) -> Result<ModelGraph> {
    let model = load_model(path)?;
    if model.descriptor() != expected.descriptor() {
        return Err(Error::Format(format!(
            "{}: architecture does not match the expected model",
            path.display()
        )));
    }
    Ok(model)
}
