//! `NWTS` weight container.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "NWTS" | u32 version (1) | u32 layer_count
//! per layer: u32 rows | u32 cols | u8 activation | rows*cols f64 (row-major) | rows f64
//! extension bytes (owner-defined, may be empty)
//! ```

use std::io::{Read, Write};

use super::layer::{Activation, Layer};
use crate::error::{Error, Result};

pub const NWTS_MAGIC: &[u8; 4] = b"NWTS";
pub const NWTS_VERSION: u32 = 1;

pub fn write_nwts<W: Write>(w: &mut W, layers: &[Layer], extension: &[u8]) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(NWTS_MAGIC);
    buf.extend_from_slice(&NWTS_VERSION.to_le_bytes());
    buf.extend_from_slice(&(layers.len() as u32).to_le_bytes());
    for layer in layers {
        buf.extend_from_slice(&(layer.rows() as u32).to_le_bytes());
        buf.extend_from_slice(&(layer.cols() as u32).to_le_bytes());
        buf.push(layer.activation().code());
        for v in layer.weights().iter().chain(layer.biases()) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf.extend_from_slice(extension);
    w.write_all(&buf)?;
    Ok(())
}

pub fn encode_nwts(layers: &[Layer], extension: &[u8]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_nwts(&mut buf, layers, extension).expect("writing to a Vec cannot fail");
    buf
}

/// Reads the layer list and returns any trailing extension bytes.
pub fn read_nwts<R: Read>(r: &mut R) -> Result<(Vec<Layer>, Vec<u8>)> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    decode_nwts(&bytes)
}

pub fn decode_nwts(bytes: &[u8]) -> Result<(Vec<Layer>, Vec<u8>)> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4)? != NWTS_MAGIC {
        return Err(Error::format("bad NWTS magic"));
    }
    let version = cur.u32()?;
    if version != NWTS_VERSION {
        return Err(Error::format(format!("unsupported NWTS version {version}")));
    }
    let count = cur.u32()? as usize;
    let mut layers = Vec::with_capacity(count.min(1024));
    for i in 0..count {
        let rows = cur.u32()? as usize;
        let cols = cur.u32()? as usize;
        let activation = Activation::from_code(cur.u8()?)?;
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::format(format!("layer {i} size overflows")))?;
        let weights = cur.f64s(n)?;
        let biases = cur.f64s(rows)?;
        let layer = Layer::new(rows, cols, weights, biases, activation)
            .map_err(|e| Error::format(format!("layer {i}: {e}")))?;
        layers.push(layer);
    }
    Ok((layers, bytes[cur.pos..].to_vec()))
}

/// Little-endian reader over a byte slice with truncation checks.
pub(crate) struct Cursor<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
}

impl<'a> Cursor<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::format(format!("truncated input at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::format("length overflow"))?,
        )?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exact_byte_layout() {
        let layer = Layer::new(1, 2, vec![1.5, -2.0], vec![0.25], Activation::Sigmoid).unwrap();
        let bytes = encode_nwts(&[layer], &[9, 9]);
        let mut expected = Vec::new();
        expected.extend_from_slice(b"NWTS");
        expected.extend_from_slice(&[1, 0, 0, 0]);
        expected.extend_from_slice(&[1, 0, 0, 0]);
        expected.extend_from_slice(&[1, 0, 0, 0]);
        expected.extend_from_slice(&[2, 0, 0, 0]);
        expected.push(2);
        expected.extend_from_slice(&1.5f64.to_le_bytes());
        expected.extend_from_slice(&(-2.0f64).to_le_bytes());
        expected.extend_from_slice(&0.25f64.to_le_bytes());
        expected.extend_from_slice(&[9, 9]);
        assert_eq!(bytes, expected);
    }

    #[test]
    fn rejects_corruption() {
        let layer = Layer::zeros(2, 2, Activation::Relu);
        let mut bytes = encode_nwts(&[layer], &[]);
        assert!(matches!(decode_nwts(&bytes[..bytes.len() - 1]), Err(Error::Format(_))));
        bytes[12 + 8] = 5; // activation code
        assert!(matches!(decode_nwts(&bytes), Err(Error::Format(_))));
        bytes[0] = b'X';
        assert!(matches!(decode_nwts(&bytes), Err(Error::Format(_))));
    }

    proptest! {
        #[test]
        fn round_trips_bit_exactly(
            rows in 1usize..5, cols in 1usize..5, code in 0u8..3,
            vals in proptest::collection::vec(-1e6f64..1e6, 30),
            ext in proptest::collection::vec(any::<u8>(), 0..12)
        ) {
            let weights = vals[..rows * cols].to_vec();
            let biases = vals[25..25 + rows].to_vec();
            let layer = Layer::new(rows, cols, weights, biases,
                Activation::from_code(code).unwrap()).unwrap();
            let bytes = encode_nwts(std::slice::from_ref(&layer), &ext);
            let (layers, rest) = decode_nwts(&bytes).unwrap();
            prop_assert_eq!(&layers[0], &layer);
            prop_assert_eq!(rest, ext);
        }
    }
}
