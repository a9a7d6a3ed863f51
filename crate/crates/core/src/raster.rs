//! `ELAS1` raster codec.
//!
//! A raster is a one-line ASCII header `ELAS1 <rows> <cols>\n` followed by
//! `rows * cols` little-endian `f32` values in row-major order. Frames,
//! displacement fields, strain images, mode vectors and network weights all
//! use it.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

pub const MAGIC: &str = "ELAS1";

/// Header line for a `rows x cols` raster, including the trailing newline.
pub fn header(rows: usize, cols: usize) -> String {
    format!("{MAGIC} {rows} {cols}\n")
}

pub fn encode(array: &Array2<f32>) -> Result<Vec<u8>> {
    let (rows, cols) = array.dim();
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidArgument(format!(
            "raster must be at least 1x1, got {rows}x{cols}"
        )));
    }
    let head = header(rows, cols);
    let mut bytes = Vec::with_capacity(head.len() + rows * cols * 4);
    bytes.extend_from_slice(head.as_bytes());
    for ((row, col), v) in array.indexed_iter() {
        if !v.is_finite() {
            return Err(Error::NonFinite { row, col });
        }
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    Ok(bytes)
}

pub fn decode(bytes: &[u8]) -> Result<Array2<f32>> {
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::MalformedHeader("missing newline".into()))?;
    let line = std::str::from_utf8(&bytes[..newline])
        .map_err(|_| Error::MalformedHeader("header is not ASCII".into()))?;
    let mut parts = line.split(' ');
    if parts.next() != Some(MAGIC) {
        return Err(Error::MalformedHeader(format!("bad magic in {line:?}")));
    }
    let mut dim = |name: &str| -> Result<usize> {
        parts
            .next()
            .and_then(|s| s.parse::<usize>().ok())
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::MalformedHeader(format!("bad {name} in {line:?}")))
    };
    let rows = dim("rows")?;
    let cols = dim("cols")?;
    if parts.next().is_some() {
        return Err(Error::MalformedHeader(format!("trailing fields in {line:?}")));
    }

    let payload = &bytes[newline + 1..];
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::MalformedHeader("dimensions overflow".into()))?;
    if payload.len() < expected {
        return Err(Error::Truncated {
            expected,
            found: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(Error::MalformedHeader(format!(
            "{} trailing bytes after payload",
            payload.len() - expected
        )));
    }

    let mut data = Vec::with_capacity(rows * cols);
    for (k, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        if !v.is_finite() {
            return Err(Error::NonFinite {
                row: k / cols,
                col: k % cols,
            });
        }
        data.push(v);
    }
    Ok(Array2::from_shape_vec((rows, cols), data).expect("length checked above"))
}

pub fn write_raster(path: impl AsRef<Path>, array: &Array2<f32>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(array)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_raster(path: impl AsRef<Path>) -> Result<Array2<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Writes an `f64` array, narrowing each value to `f32`.
pub fn write_raster_f64(path: impl AsRef<Path>, array: &Array2<f64>) -> Result<()> {
    write_raster(path, &array.mapv(|v| v as f32))
}

pub fn read_raster_f64(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    Ok(read_raster(path)?.mapv(f64::from))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn small_round_trip() {
        let a = array![[0.0f32, 1.0, 2.0], [3.0, 4.0, 5.0]];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.elas");
        write_raster(&path, &a).unwrap();
        assert_eq!(read_raster(&path).unwrap(), a);
    }

    #[test]
    fn truncated_payload() {
        let mut bytes = header(2, 2).into_bytes();
        for v in [1.0f32, 2.0, 3.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        assert!(matches!(
            decode(&bytes),
            Err(Error::Truncated {
                expected: 16,
                found: 12
            })
        ));
    }

    #[test]
    fn full_frame_file_size() {
        let a = Array2::<f32>::from_shape_fn((2304, 384), |(i, j)| (i * 384 + j) as f32 * 1e-3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("frame.elas");
        write_raster(&path, &a).unwrap();
        let expected = "ELAS1 2304 384\n".len() + 2304 * 384 * 4;
        assert_eq!(std::fs::metadata(&path).unwrap().len() as usize, expected);
        assert_eq!(read_raster(&path).unwrap(), a);
    }

    #[test]
    fn malformed_headers() {
        for bad in [
            &b"ELAS2 1 1\n\0\0\0\0"[..],
            b"ELAS1 0 1\n",
            b"ELAS1 x 1\n\0\0\0\0",
            b"ELAS1 1 1 1\n\0\0\0\0",
            b"ELAS1 1 1",
        ] {
            assert!(matches!(decode(bad), Err(Error::MalformedHeader(_))), "{bad:?}");
        }
    }

    #[test]
    fn non_finite_rejected_both_ways() {
        let a = array![[1.0f32, f32::NAN]];
        assert!(matches!(encode(&a), Err(Error::NonFinite { row: 0, col: 1 })));
        let mut bytes = header(1, 2).into_bytes();
        bytes.extend_from_slice(&1.0f32.to_le_bytes());
        bytes.extend_from_slice(&f32::INFINITY.to_le_bytes());
        assert!(matches!(decode(&bytes), Err(Error::NonFinite { row: 0, col: 1 })));
    }

    proptest! {
        #[test]
        fn round_trip_is_identity(
            rows in 1usize..12,
            cols in 1usize..12,
            seed in proptest::collection::vec(-1e30f32..1e30, 144),
        ) {
            let a = Array2::from_shape_fn((rows, cols), |(i, j)| seed[i * 12 + j]);
            let back = decode(&encode(&a).unwrap()).unwrap();
            prop_assert_eq!(
                back.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                a.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }
    }
}
