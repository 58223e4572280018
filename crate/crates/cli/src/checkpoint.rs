//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//! `b"TMCK"`, version `u32`, kind `u8` (0 model, 1 converter), descriptor
//! length `u32` and UTF-8 descriptor, parameter count `u32`; then per
//! parameter in declaration order: name length `u32`, name, rank `u32`,
//! dimensions `u64` each, and the values as `f64`.

use std::path::Path;

use transmat::models::{build_converter, build_model, Converter, ConverterSpec, Model, ModelSpec};
use transmat::nn::ParamStore;
use transmat::Tensor;

use crate::error::{read, write, CliError, CliResult};

pub const MAGIC: &[u8; 4] = b"TMCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Model,
    Converter,
}

fn encode(kind: Kind, descriptor: &str, params: &ParamStore) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(match kind {
        Kind::Model => 0,
        Kind::Converter => 1,
    });
    out.extend_from_slice(&(descriptor.len() as u32).to_le_bytes());
    out.extend_from_slice(descriptor.as_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params.iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.value.shape().len() as u32).to_le_bytes());
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    b: &'a [u8],
    at: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> CliResult<&[u8]> {
        let s = self.b.get(self.at..self.at + n).ok_or_else(|| CliError::Format("checkpoint: truncated".into()))?;
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self) -> CliResult<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> CliResult<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn text(&mut self) -> CliResult<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| CliError::Format("checkpoint: bad UTF-8".into()))
    }
}

/// Decodes a checkpoint into its kind, descriptor and named tensors.
fn decode(b: &[u8]) -> CliResult<(Kind, String, Vec<(String, Tensor)>)> {
    let mut r = Reader { b, at: 0 };
    if r.take(4)? != MAGIC {
        return Err(CliError::Format("checkpoint: bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(CliError::Format(format!("checkpoint: unsupported version {version}")));
    }
    let kind = match r.take(1)?[0] {
        0 => Kind::Model,
        1 => Kind::Converter,
        k => return Err(CliError::Format(format!("checkpoint: unknown kind {k}"))),
    };
    let descriptor = r.text()?;
    let count = r.u32()? as usize;
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        let name = r.text()?;
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<CliResult<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = r.take(n.checked_mul(8).ok_or_else(|| CliError::Format("checkpoint: oversized tensor".into()))?)?;
        let data = raw.chunks(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        params.push((name, Tensor::new(&shape, data)?));
    }
    if r.at != b.len() {
        return Err(CliError::Format("checkpoint: trailing bytes".into()));
    }
    Ok((kind, descriptor, params))
}

/// Copies decoded tensors into a freshly built store, checking names and shapes.
fn fill(store: &mut ParamStore, params: Vec<(String, Tensor)>) -> CliResult<()> {
    if params.len() != store.len() {
        return Err(CliError::Format(format!("checkpoint: {} parameters, architecture has {}", params.len(), store.len())));
    }
    for ((name, value), p) in params.into_iter().zip(store.iter_mut()) {
        if name != p.name || value.shape() != p.value.shape() {
            return Err(CliError::Format(format!(
                "checkpoint: `{name}` {:?} does not match `{}` {:?}",
                value.shape(),
                p.name,
                p.value.shape()
            )));
        }
        p.value = value;
    }
    Ok(())
}

pub fn encode_model(m: &Model) -> Vec<u8> {
    encode(Kind::Model, &m.spec.to_string(), &m.params)
}

pub fn encode_converter(c: &Converter) -> Vec<u8> {
    encode(Kind::Converter, &c.spec.to_string(), &c.params)
}

pub fn decode_model(b: &[u8]) -> CliResult<Model> {
    let (kind, descriptor, params) = decode(b)?;
    if kind != Kind::Model {
        return Err(CliError::Format("checkpoint holds a converter, not a model".into()));
    }
    let mut m = build_model(&ModelSpec::parse(&descriptor)?, 0)?;
    fill(&mut m.params, params)?;
    Ok(m)
}

pub fn decode_converter(b: &[u8]) -> CliResult<Converter> {
    let (kind, descriptor, params) = decode(b)?;
    if kind != Kind::Converter {
        return Err(CliError::Format("checkpoint holds a model, not a converter".into()));
    }
    let mut c = build_converter(&ConverterSpec::parse(&descriptor)?, 0)?;
    fill(&mut c.params, params)?;
    Ok(c)
}

pub fn save_model(path: &Path, m: &Model) -> CliResult<()> {
    write(path, &encode_model(m))
}

pub fn load_model(path: &Path) -> CliResult<Model> {
    decode_model(&read(path)?).map_err(|e| CliError::Format(format!("{}: {e}", path.display())))
}

pub fn save_converter(path: &Path, c: &Converter) -> CliResult<()> {
    write(path, &encode_converter(c))
}

pub fn load_converter(path: &Path) -> CliResult<Converter> {
    decode_converter(&read(path)?).map_err(|e| CliError::Format(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn models_and_converters_round_trip() {
        for spec in [ModelSpec::toy_tagger(), ModelSpec::digit_classifier(16)] {
            let m = build_model(&spec, 3).unwrap();
            assert_eq!(decode_model(&encode_model(&m)).unwrap(), m);
        }
        let c = build_converter(&ConverterSpec::sequence(2), 3).unwrap();
        assert_eq!(decode_converter(&encode_converter(&c)).unwrap(), c);
    }

    #[test]
    fn corrupt_checkpoints_are_rejected() {
        let m = build_model(&ModelSpec::toy_tagger(), 3).unwrap();
        let bytes = encode_model(&m);
        assert!(decode_model(&bytes[..bytes.len() - 3]).is_err());
        assert!(decode_converter(&bytes).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_model(&bad).is_err());
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(decode_model(&longer).is_err());
    }
}
