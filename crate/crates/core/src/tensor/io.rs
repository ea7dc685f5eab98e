//! Tensor dump format: an 8-byte little-endian header length, a JSON header
//! `{"dtype": "f32" | "f64", "shape": [..]}`, then the row-major payload in
//! little-endian byte order.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{numel, DType, Result, Scalar, Tensor, TensorError};

#[derive(Debug, Serialize, Deserialize)]
struct DumpHeader {
    dtype: DType,
    shape: Vec<usize>,
}

fn fmt_err(e: impl std::fmt::Display) -> TensorError {
    TensorError::Format(e.to_string())
}

pub fn write_tensor<T: Scalar, W: Write>(out: &mut W, t: &Tensor<T>) -> Result<()> {
    let header = serde_json::to_vec(&DumpHeader {
        dtype: T::DTYPE,
        shape: t.shape().to_vec(),
    })
    .map_err(fmt_err)?;
    let mut payload = Vec::with_capacity(t.numel() * T::DTYPE.size_of());
    for &v in t.data() {
        v.write_le(&mut payload);
    }
    out.write_all(&(header.len() as u64).to_le_bytes()).map_err(fmt_err)?;
    out.write_all(&header).map_err(fmt_err)?;
    out.write_all(&payload).map_err(fmt_err)?;
    Ok(())
}

pub fn read_tensor<T: Scalar, R: Read>(input: &mut R) -> Result<Tensor<T>> {
    let mut len = [0u8; 8];
    input.read_exact(&mut len).map_err(fmt_err)?;
    let len = u64::from_le_bytes(len) as usize;
    let mut header = vec![0u8; len];
    input.read_exact(&mut header).map_err(fmt_err)?;
    let header: DumpHeader = serde_json::from_slice(&header).map_err(fmt_err)?;
    if header.dtype != T::DTYPE {
        return Err(TensorError::Format(format!(
            "stored dtype {} but {} requested",
            header.dtype,
            T::DTYPE
        )));
    }
    let size = T::DTYPE.size_of();
    let mut payload = vec![0u8; numel(&header.shape) * size];
    input.read_exact(&mut payload).map_err(fmt_err)?;
    let data = payload.chunks_exact(size).map(T::read_le).collect();
    Tensor::new(header.shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn dump_round_trip(shape in prop::collection::vec(1usize..5, 0..4), seed in any::<u64>()) {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let t = Tensor::<f32>::randn(shape, 1.0, &mut rng);
            let mut buf = Vec::new();
            write_tensor(&mut buf, &t).unwrap();
            let back: Tensor<f32> = read_tensor(&mut buf.as_slice()).unwrap();
            prop_assert_eq!(back, t);
        }
    }

    #[test]
    fn header_is_json_and_dtype_checked() {
        let t = Tensor::<f64>::from_slice64(&[2], &[1.0, -2.0]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        let len = u64::from_le_bytes(buf[..8].try_into().unwrap()) as usize;
        let header = std::str::from_utf8(&buf[8..8 + len]).unwrap();
        assert_eq!(header, r#"{"dtype":"f64","shape":[2]}"#);
        assert_eq!(buf.len(), 8 + len + 16);
        assert!(read_tensor::<f32, _>(&mut buf.as_slice()).is_err());
    }
}
