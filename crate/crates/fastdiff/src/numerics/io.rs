//! Tensor serialization: the FDT1 record format.
//!
//! Layout, all integers little-endian:
//!   magic  b"FDT1"
//!   dtype  u8 (1 = f32, 2 = f64)
//!   rank   u32
//!   extent u64 × rank
//!   data   raw IEEE-754 little-endian values, row-major

use std::io::{Read, Write};

use crate::error::{Error, Result};

use super::scalar::{DType, Scalar};
use super::tensor::Tensor;

pub const TENSOR_MAGIC: &[u8; 4] = b"FDT1";

pub fn write_tensor<T: Scalar, W: Write>(out: &mut W, t: &Tensor<T>) -> Result<()> {
    out.write_all(TENSOR_MAGIC)?;
    out.write_all(&[T::DTYPE.code()])?;
    out.write_all(&(t.rank() as u32).to_le_bytes())?;
    for &e in t.shape() {
        out.write_all(&(e as u64).to_le_bytes())?;
    }
    out.write_all(&t.to_bytes())?;
    Ok(())
}

fn read_exact_vec<R: Read>(r: &mut R, n: usize) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

/// Read the header and return (dtype, shape), leaving `r` at the data bytes.
fn read_header<R: Read>(r: &mut R) -> Result<(DType, Vec<usize>)> {
    let magic = read_exact_vec(r, 4)?;
    if magic != TENSOR_MAGIC {
        return Err(Error::Checkpoint(format!(
            "bad tensor magic {magic:02x?}, expected {TENSOR_MAGIC:02x?}"
        )));
    }
    let code = read_exact_vec(r, 1)?[0];
    let dtype = DType::from_code(code)
        .ok_or_else(|| Error::Checkpoint(format!("unknown dtype code {code}")))?;
    let rank = u32::from_le_bytes(read_exact_vec(r, 4)?.try_into().unwrap()) as usize;
    if rank > 8 {
        return Err(Error::Checkpoint(format!("implausible tensor rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let e = u64::from_le_bytes(read_exact_vec(r, 8)?.try_into().unwrap());
        shape.push(e as usize);
    }
    Ok((dtype, shape))
}

pub fn read_tensor<T: Scalar, R: Read>(r: &mut R) -> Result<Tensor<T>> {
    let (dtype, shape) = read_header(r)?;
    if dtype != T::DTYPE {
        return Err(Error::Checkpoint(format!(
            "dtype mismatch: record holds {dtype:?}, caller expects {:?}",
            T::DTYPE
        )));
    }
    let n: usize = shape.iter().product();
    let raw = read_exact_vec(r, n * dtype.size_bytes())?;
    let width = dtype.size_bytes();
    let data: Vec<T> = raw.chunks_exact(width).map(T::read_le).collect();
    Tensor::from_vec(&shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RandomSource;
    use proptest::prelude::*;

    #[test]
    fn roundtrip_f32_and_f64() {
        let mut rs = RandomSource::new(17);
        let a: Tensor<f32> = rs.gaussian(&[2, 3, 4]);
        let b: Tensor<f64> = rs.gaussian(&[5]);
        let mut buf = Vec::new();
        write_tensor(&mut buf, &a).unwrap();
        write_tensor(&mut buf, &b).unwrap();
        let mut cur = std::io::Cursor::new(buf);
        let a2: Tensor<f32> = read_tensor(&mut cur).unwrap();
        let b2: Tensor<f64> = read_tensor(&mut cur).unwrap();
        assert_eq!(a.to_bytes(), a2.to_bytes());
        assert_eq!(b.to_bytes(), b2.to_bytes());
    }

    #[test]
    fn dtype_mismatch_is_detected() {
        let t: Tensor<f32> = Tensor::zeros(&[2]);
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        let mut cur = std::io::Cursor::new(buf);
        assert!(read_tensor::<f64, _>(&mut cur).is_err());
    }

    #[test]
    fn bad_magic_is_rejected() {
        let mut cur = std::io::Cursor::new(b"XXXX\x01\x00\x00\x00\x00".to_vec());
        assert!(read_tensor::<f32, _>(&mut cur).is_err());
    }

    proptest! {
        #[test]
        fn roundtrip_preserves_bits(values in proptest::collection::vec(-1e6f32..1e6, 1..64)) {
            let t = Tensor::from_vec(&[values.len()], values).unwrap();
            let mut buf = Vec::new();
            write_tensor(&mut buf, &t).unwrap();
            let back: Tensor<f32> = read_tensor(&mut std::io::Cursor::new(buf)).unwrap();
            prop_assert_eq!(t.to_bytes(), back.to_bytes());
            prop_assert_eq!(t.shape(), back.shape());
        }
    }
}
