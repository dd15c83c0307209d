//! SDT1 tensor files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"SDT1" | rank: u32 | extents: rank x u64 | payload: numel x f32
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const TENSOR_MAGIC: [u8; 4] = *b"SDT1";

const CHUNK: usize = 1 << 16;

pub fn write_tensor(path: &Path, tensor: &Tensor<f32>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    encode_tensor(&mut w, tensor).map_err(|e| with_path(e, path))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: &Path) -> Result<Tensor<f32>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&mut BufReader::new(file)).map_err(|e| with_path(e, path))
}

pub fn encode_tensor(w: &mut impl Write, tensor: &Tensor<f32>) -> Result<()> {
    w.write_all(&TENSOR_MAGIC).map_err(io_err)?;
    write_shape_and_payload(w, tensor)
}

pub fn decode_tensor(r: &mut impl Read) -> Result<Tensor<f32>> {
    let mut magic = [0u8; 4];
    read_exact(r, &mut magic, "magic")?;
    if magic != TENSOR_MAGIC {
        return Err(Error::BadMagic {
            expected: TENSOR_MAGIC,
            found: magic,
        });
    }
    read_shape_and_payload(r)
}

/// `rank: u32 | extents: u64... | payload: f32...`, shared with checkpoints.
pub(crate) fn write_shape_and_payload(w: &mut impl Write, tensor: &Tensor<f32>) -> Result<()> {
    if tensor.shape().contains(&0) {
        return Err(Error::ZeroExtent(tensor.shape().to_vec()));
    }
    w.write_all(&(tensor.rank() as u32).to_le_bytes()).map_err(io_err)?;
    for &e in tensor.shape() {
        w.write_all(&(e as u64).to_le_bytes()).map_err(io_err)?;
    }
    let mut buf = Vec::with_capacity(4 * CHUNK.min(tensor.numel()));
    for chunk in tensor.data().chunks(CHUNK) {
        buf.clear();
        for v in chunk {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf).map_err(io_err)?;
    }
    Ok(())
}

pub(crate) fn read_shape_and_payload(r: &mut impl Read) -> Result<Tensor<f32>> {
    let rank = read_u32(r, "rank")? as usize;
    if rank > 16 {
        return Err(Error::Malformed(format!("tensor rank {rank} exceeds 16")));
    }
    let mut extents = Vec::with_capacity(rank);
    for _ in 0..rank {
        extents.push(read_u64(r, "extents")?);
    }
    let numel = extents
        .iter()
        .try_fold(1u64, |acc, &e| acc.checked_mul(e))
        .and_then(|n| n.checked_mul(4).map(|_| n))
        .and_then(|n| usize::try_from(n).ok())
        .ok_or_else(|| Error::ExtentOverflow(extents.clone()))?;
    let shape: Vec<usize> = extents.iter().map(|&e| e as usize).collect();
    if shape.contains(&0) {
        return Err(Error::ZeroExtent(shape));
    }
    // grow incrementally so a corrupt header cannot force a huge allocation
    let mut data = Vec::with_capacity(numel.min(CHUNK));
    let mut buf = vec![0u8; 4 * CHUNK];
    let mut remaining = numel;
    while remaining > 0 {
        let n = remaining.min(CHUNK);
        read_exact(r, &mut buf[..4 * n], "payload")?;
        data.extend(buf[..4 * n].chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])));
        remaining -= n;
    }
    Tensor::new(shape, data)
}

pub(crate) fn read_exact(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        ErrorKind::UnexpectedEof => Error::Truncated(format!("unexpected end of data while reading {what}")),
        _ => io_err(e),
    })
}

pub(crate) fn read_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64(r: &mut impl Read, what: &str) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, what)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn io_err(e: std::io::Error) -> Error {
    Error::io("<stream>", e)
}

pub(crate) fn with_path(e: Error, path: &Path) -> Error {
    match e {
        Error::Io { source, .. } => Error::io(path, source),
        Error::Truncated(msg) => Error::Truncated(format!("{}: {msg}", path.display())),
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn encoded(t: &Tensor<f32>) -> Vec<u8> {
        let mut buf = Vec::new();
        encode_tensor(&mut buf, t).unwrap();
        buf
    }

    #[test]
    fn file_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.sdt");
        let t = Tensor::new(vec![4, 3], (0..12).map(|i| (i as f32 * 0.37).sin() * 1e3).collect()).unwrap();
        write_tensor(&path, &t).unwrap();
        let back = read_tensor(&path).unwrap();
        assert_eq!(back.shape(), t.shape());
        assert!(back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn header_layout() {
        let t = Tensor::new(vec![2, 1], vec![1.0, -2.0]).unwrap();
        let b = encoded(&t);
        assert_eq!(&b[..4], b"SDT1");
        assert_eq!(&b[4..8], &2u32.to_le_bytes());
        assert_eq!(&b[8..16], &2u64.to_le_bytes());
        assert_eq!(&b[16..24], &1u64.to_le_bytes());
        assert_eq!(&b[24..28], &1.0f32.to_le_bytes());
        assert_eq!(&b[28..32], &(-2.0f32).to_le_bytes());
        assert_eq!(b.len(), 32);
    }

    #[test]
    fn corrupted_magic() {
        let mut b = encoded(&Tensor::vector(vec![1.0]));
        b[0] = b'X';
        assert!(matches!(decode_tensor(&mut b.as_slice()), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn truncated_payload() {
        let b = encoded(&Tensor::vector(vec![1.0, 2.0, 3.0]));
        let cut = &b[..b.len() - 2];
        assert!(matches!(decode_tensor(&mut &cut[..]), Err(Error::Truncated(_))));
        assert!(matches!(decode_tensor(&mut &b[..6]), Err(Error::Truncated(_))));
    }

    #[test]
    fn extent_overflow() {
        let mut b = Vec::new();
        b.extend_from_slice(b"SDT1");
        b.extend_from_slice(&3u32.to_le_bytes());
        for _ in 0..3 {
            b.extend_from_slice(&(u64::MAX / 3).to_le_bytes());
        }
        assert!(matches!(decode_tensor(&mut b.as_slice()), Err(Error::ExtentOverflow(_))));
    }

    #[test]
    fn zero_extent_rejected_on_write() {
        let t = Tensor::<f32>::new(vec![3, 0], vec![]).unwrap();
        let mut buf = Vec::new();
        assert!(matches!(encode_tensor(&mut buf, &t), Err(Error::ZeroExtent(_))));
    }

    proptest! {
        #[test]
        fn round_trip_any_bits(shape in proptest::collection::vec(1usize..5, 0..4), seed in any::<u32>()) {
            let n: usize = shape.iter().product();
            let data: Vec<f32> = (0..n).map(|i| f32::from_bits(seed.wrapping_mul(2654435761).wrapping_add(i as u32 * 97))).collect();
            let t = Tensor::new(shape, data).unwrap();
            let back = decode_tensor(&mut encoded(&t).as_slice()).unwrap();
            prop_assert_eq!(back.shape(), t.shape());
            prop_assert!(back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }
}
