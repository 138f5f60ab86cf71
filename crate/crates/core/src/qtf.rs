//! QTF1 binary tensor files.
//!
//! Layout: 4-byte magic `QTF1`; 1 byte dtype code (0 = f64, 1 = i8,
//! 2 = i32); 1 byte rank; rank × u32 little-endian dims; u64 little-endian
//! scale count; scales as f64 little-endian; payload row-major
//! little-endian. Real tensors carry zero scales.

use crate::error::{Error, Result};
use crate::tensor::{
    expected_scale_count, BitWidth, Granularity, IntData, QuantizedTensor, RealTensor,
};
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"QTF1";

const DTYPE_F64: u8 = 0;
const DTYPE_I8: u8 = 1;
const DTYPE_I32: u8 = 2;

/// Either kind of tensor a QTF1 file can hold.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorFile {
    Real(RealTensor),
    Quantized(QuantizedTensor),
}

fn write_header(w: &mut impl Write, dtype: u8, shape: &[usize], scales: &[f64]) -> Result<()> {
    if shape.len() > u8::MAX as usize {
        return Err(Error::Format("rank exceeds one byte".into()));
    }
    w.write_all(MAGIC)?;
    w.write_all(&[dtype, shape.len() as u8])?;
    for &dim in shape {
        let d = u32::try_from(dim).map_err(|_| Error::Format("dimension exceeds u32".into()))?;
        w.write_all(&d.to_le_bytes())?;
    }
    w.write_all(&(scales.len() as u64).to_le_bytes())?;
    for &s in scales {
        w.write_all(&s.to_le_bytes())?;
    }
    Ok(())
}

/// Serialize a tensor into QTF1 bytes.
pub fn to_bytes(t: &TensorFile) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    match t {
        TensorFile::Real(r) => {
            write_header(&mut out, DTYPE_F64, &r.shape, &[])?;
            for &v in &r.data {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        TensorFile::Quantized(q) => {
            q.validate()?;
            match &q.data {
                IntData::I8(v) => {
                    write_header(&mut out, DTYPE_I8, &q.shape, &q.scales)?;
                    // i8 → u8 is a bijection on bytes.
                    out.extend(v.iter().map(|&x| x as u8));
                }
                IntData::I32(v) => {
                    write_header(&mut out, DTYPE_I32, &q.shape, &q.scales)?;
                    for &x in v {
                        out.write_all(&x.to_le_bytes())?;
                    }
                }
            }
        }
    }
    Ok(out)
}

fn take<'a>(buf: &mut &'a [u8], n: usize, what: &str) -> Result<&'a [u8]> {
    if buf.len() < n {
        return Err(Error::Format(format!("truncated file while reading {what}")));
    }
    let (head, tail) = buf.split_at(n);
    *buf = tail;
    Ok(head)
}

/// Infer granularity from the scale count. Ambiguities (e.g. a single head)
/// resolve to the coarsest compatible granularity.
fn infer_granularity(shape: &[usize], scale_count: usize) -> Result<Granularity> {
    for g in [
        Granularity::PerTensor,
        Granularity::PerHead,
        Granularity::PerToken,
    ] {
        if expected_scale_count(shape, g) == scale_count {
            return Ok(g);
        }
    }
    Err(Error::Format(format!(
        "scale count {scale_count} matches no granularity for shape {shape:?}"
    )))
}

/// Parse QTF1 bytes.
pub fn from_bytes(mut buf: &[u8]) -> Result<TensorFile> {
    let magic = take(&mut buf, 4, "magic")?;
    if magic != MAGIC {
        return Err(Error::Format("bad magic (want QTF1)".into()));
    }
    let head = take(&mut buf, 2, "dtype/rank")?;
    let (dtype, rank) = (head[0], head[1] as usize);
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let b = take(&mut buf, 4, "dims")?;
        shape.push(u32::from_le_bytes(b.try_into().unwrap()) as usize);
    }
    let b = take(&mut buf, 8, "scale count")?;
    let scale_count = u64::from_le_bytes(b.try_into().unwrap()) as usize;
    let mut scales = Vec::with_capacity(scale_count);
    for _ in 0..scale_count {
        let b = take(&mut buf, 8, "scales")?;
        scales.push(f64::from_le_bytes(b.try_into().unwrap()));
    }
    let numel: usize = shape.iter().product();
    match dtype {
        DTYPE_F64 => {
            if scale_count != 0 {
                return Err(Error::Format("real tensors carry zero scales".into()));
            }
            let raw = take(&mut buf, numel * 8, "payload")?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            Ok(TensorFile::Real(RealTensor::new(data, shape)?))
        }
        DTYPE_I8 => {
            let raw = take(&mut buf, numel, "payload")?;
            let g = infer_granularity(&shape, scale_count)?;
            Ok(TensorFile::Quantized(QuantizedTensor::new(
                IntData::I8(raw.iter().map(|&b| b as i8).collect()),
                BitWidth::Int8,
                scales,
                g,
                shape,
            )?))
        }
        DTYPE_I32 => {
            let raw = take(&mut buf, numel * 4, "payload")?;
            let data = raw
                .chunks_exact(4)
                .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let g = infer_granularity(&shape, scale_count)?;
            Ok(TensorFile::Quantized(QuantizedTensor::new(
                IntData::I32(data),
                BitWidth::Int32,
                scales,
                g,
                shape,
            )?))
        }
        other => Err(Error::Format(format!("unknown dtype code {other}"))),
    }
}

pub fn write_file(path: impl AsRef<Path>, t: &TensorFile) -> Result<()> {
    let bytes = to_bytes(t)?;
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn read_file(path: impl AsRef<Path>) -> Result<TensorFile> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    from_bytes(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn real_tensor_round_trip() {
        let t = TensorFile::Real(RealTensor::new(vec![1.5, -2.25, 0.0, 3.125], vec![2, 2]).unwrap());
        let bytes = to_bytes(&t).unwrap();
        assert_eq!(&bytes[..4], MAGIC);
        assert_eq!(bytes[4], DTYPE_F64);
        assert_eq!(bytes[5], 2);
        assert_eq!(from_bytes(&bytes).unwrap(), t);
    }

    #[test]
    fn quantized_i8_round_trip_per_head() {
        let q = QuantizedTensor::new(
            IntData::I8((0..24).map(|i| i as i8 - 12).collect()),
            BitWidth::Int8,
            vec![0.5, 0.25, 0.125],
            Granularity::PerHead,
            vec![1, 3, 2, 4],
        )
        .unwrap();
        let bytes = to_bytes(&TensorFile::Quantized(q.clone())).unwrap();
        match from_bytes(&bytes).unwrap() {
            TensorFile::Quantized(got) => {
                assert_eq!(got, q);
                assert_eq!(got.granularity, Granularity::PerHead);
            }
            _ => panic!("wrong variant"),
        }
    }

    #[test]
    fn quantized_i32_round_trip() {
        let q = QuantizedTensor::new(
            IntData::I32(vec![-70000, 0, 70000, 123456]),
            BitWidth::Int32,
            vec![1e-3],
            Granularity::PerTensor,
            vec![2, 2],
        )
        .unwrap();
        let bytes = to_bytes(&TensorFile::Quantized(q.clone())).unwrap();
        assert_eq!(from_bytes(&bytes).unwrap(), TensorFile::Quantized(q));
    }

    #[test]
    fn rejects_corrupt_input() {
        assert!(from_bytes(b"QTF2aaaaaaaa").is_err());
        assert!(from_bytes(b"QT").is_err());
        let t = TensorFile::Real(RealTensor::new(vec![1.0; 4], vec![4]).unwrap());
        let mut bytes = to_bytes(&t).unwrap();
        bytes.truncate(bytes.len() - 3);
        assert!(from_bytes(&bytes).is_err());
    }

    #[test]
    fn byte_layout_is_stable() {
        // One scale, rank 1, two i8 elements: fully pinned layout.
        let q = QuantizedTensor::new(
            IntData::I8(vec![-1, 2]),
            BitWidth::Int8,
            vec![1.0],
            Granularity::PerTensor,
            vec![2],
        )
        .unwrap();
        let bytes = to_bytes(&TensorFile::Quantized(q)).unwrap();
        let mut want = Vec::new();
        want.extend_from_slice(b"QTF1");
        want.push(1); // dtype i8
        want.push(1); // rank
        want.extend_from_slice(&2u32.to_le_bytes());
        want.extend_from_slice(&1u64.to_le_bytes());
        want.extend_from_slice(&1.0f64.to_le_bytes());
        want.extend_from_slice(&[0xff, 0x02]);
        assert_eq!(bytes, want);
    }

    #[test]
    fn file_round_trip() {
        let dir = std::env::temp_dir().join(format!("qtf_test_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("t.qtf");
        let t = TensorFile::Real(RealTensor::new(vec![0.25; 6], vec![2, 3]).unwrap());
        write_file(&path, &t).unwrap();
        assert_eq!(read_file(&path).unwrap(), t);
        std::fs::remove_dir_all(&dir).ok();
    }
}
