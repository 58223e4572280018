//! IDX files as distributed with MNIST: big-endian magic and dimensions
//! followed by an unsigned-byte payload.

use std::path::Path;

use transmat::data::ImageDataset;
use transmat::Tensor;

use crate::error::{read, CliError, CliResult};

pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const IMAGE_MAGIC: u32 = 0x0000_0803;
/// Unsigned-byte payload type; the low byte of the magic holds the rank.
const UBYTE: u32 = 0x0000_0800;

/// Decoded IDX contents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Idx {
    pub dims: Vec<usize>,
    pub bytes: Vec<u8>,
}

fn be_u32(b: &[u8], at: usize) -> Option<u32> {
    b.get(at..at + 4).map(|s| u32::from_be_bytes([s[0], s[1], s[2], s[3]]))
}

/// Parses an unsigned-byte IDX file. Truncated or oversized payloads are errors.
pub fn parse_idx(b: &[u8]) -> CliResult<Idx> {
    let magic = be_u32(b, 0).ok_or_else(|| CliError::Format("idx: missing magic".into()))?;
    if magic & 0xffff_ff00 != UBYTE || magic & 0xff == 0 {
        return Err(CliError::Format(format!("idx: bad magic {magic:#010x}")));
    }
    let ndim = (magic & 0xff) as usize;
    let mut dims = Vec::with_capacity(ndim);
    for i in 0..ndim {
        let d = be_u32(b, 4 + 4 * i).ok_or_else(|| CliError::Format("idx: truncated header".into()))?;
        dims.push(d as usize);
    }
    let start = 4 + 4 * ndim;
    let n: usize = dims.iter().product();
    let payload = &b[start..];
    if payload.len() != n {
        return Err(CliError::Format(format!("idx: payload has {} bytes, dimensions need {n}", payload.len())));
    }
    Ok(Idx { dims, bytes: payload.to_vec() })
}

/// `[n, h, w]` images rescaled to `[0, 1]`.
pub fn images_from_idx(idx: &Idx) -> CliResult<Tensor> {
    if idx.dims.len() != 3 {
        return Err(CliError::Format(format!("idx: images need 3 dimensions, got {:?}", idx.dims)));
    }
    let data = idx.bytes.iter().map(|&v| f64::from(v) / 255.0).collect();
    Ok(Tensor::new(&idx.dims, data)?)
}

pub fn labels_from_idx(idx: &Idx) -> CliResult<Vec<usize>> {
    if idx.dims.len() != 1 {
        return Err(CliError::Format(format!("idx: labels need 1 dimension, got {:?}", idx.dims)));
    }
    Ok(idx.bytes.iter().map(|&v| usize::from(v)).collect())
}

pub fn read_idx(path: &Path) -> CliResult<Idx> {
    parse_idx(&read(path)?).map_err(|e| CliError::Format(format!("{}: {e}", path.display())))
}

/// Encodes an unsigned-byte payload with the given dimensions.
pub fn encode_idx(dims: &[usize], bytes: &[u8]) -> Vec<u8> {
    let magic = UBYTE | dims.len() as u32;
    let mut out = magic.to_be_bytes().to_vec();
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(bytes);
    out
}

/// Loads an image file and its label file as one dataset.
pub fn read_image_dataset(images: &Path, labels: &Path, domain: &str) -> CliResult<ImageDataset> {
    let x = images_from_idx(&read_idx(images)?)?;
    let y = labels_from_idx(&read_idx(labels)?)?;
    Ok(ImageDataset::from_tensor(&x, y, domain)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_header_arithmetic() {
        let bytes = encode_idx(&[2, 28, 28], &[255; 1568]);
        assert_eq!(&bytes[..4], &[0, 0, 8, 3]);
        let t = images_from_idx(&parse_idx(&bytes).unwrap()).unwrap();
        assert_eq!(t.shape(), &[2, 28, 28]);
        assert!(t.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn label_file() {
        let bytes = encode_idx(&[10], &[0, 1, 2, 3, 4, 5, 6, 7, 8, 9]);
        assert_eq!(&bytes[..4], &[0, 0, 8, 1]);
        assert_eq!(labels_from_idx(&parse_idx(&bytes).unwrap()).unwrap(), (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn truncated_and_bad_magic() {
        let bytes = encode_idx(&[2, 28, 28], &[0; 1568]);
        assert!(parse_idx(&bytes[..bytes.len() - 1]).is_err());
        assert!(parse_idx(&bytes[..10]).is_err());
        let mut bad = bytes.clone();
        bad[2] = 9;
        assert!(parse_idx(&bad).is_err());
    }
}
