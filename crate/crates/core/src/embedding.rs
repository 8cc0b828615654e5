//! Row-keyed dense embedding matrices and their binary container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "VNEL" | u32 version = 1 | u32 row_count | u32 dim
//! row_count x (u16 key_len | key bytes, UTF-8)
//! row_count * dim x f32
//! ```

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::ArrayView2;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"VNEL";
pub const FORMAT_VERSION: u32 = 1;

/// Rows whose L2 norm is within this distance of 1 count as unit vectors.
pub const NORM_TOLERANCE: f32 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    data: Vec<f32>,
    dim: usize,
    keys: Vec<String>,
    normalized: bool,
}

impl EmbeddingMatrix {
    pub fn new(keys: Vec<String>, dim: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != keys.len() * dim {
            return Err(Error::DimMismatch {
                expected: keys.len() * dim,
                actual: data.len(),
            });
        }
        Ok(Self {
            data,
            dim,
            keys,
            normalized: false,
        })
    }

    /// Assembles a matrix from `(key, row)` pairs; every row must have length `dim`.
    pub fn from_rows(dim: usize, rows: impl IntoIterator<Item = (String, Vec<f32>)>) -> Result<Self> {
        let mut keys = Vec::new();
        let mut data = Vec::new();
        for (k, row) in rows {
            if row.len() != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    actual: row.len(),
                });
            }
            keys.push(k);
            data.extend_from_slice(&row);
        }
        Ok(Self {
            data,
            dim,
            keys,
            normalized: false,
        })
    }

    pub fn row_count(&self) -> usize {
        self.keys.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn keys(&self) -> &[String] {
        &self.keys
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.keys
            .iter()
            .map(String::as_str)
            .zip(self.data.chunks_exact(self.dim.max(1)))
    }

    pub fn view(&self) -> ArrayView2<'_, f32> {
        ArrayView2::from_shape((self.row_count(), self.dim), &self.data)
            .expect("shape invariant holds")
    }

    pub fn key_positions(&self) -> HashMap<&str, usize> {
        self.keys
            .iter()
            .enumerate()
            .map(|(i, k)| (k.as_str(), i))
            .collect()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Sets the normalized flag after checking every row is a unit vector.
    pub fn certify_normalized(&mut self) -> Result<()> {
        for (i, (_, row)) in self.rows().enumerate() {
            let norm = row.iter().map(|v| f64::from(*v).powi(2)).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > f64::from(NORM_TOLERANCE) {
                return Err(Error::Contract(format!(
                    "row {i} ({}) has norm {norm}",
                    self.keys[i]
                )));
            }
        }
        self.normalized = true;
        Ok(())
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        let rows = u32::try_from(self.row_count()).map_err(|_| invalid("too many rows"))?;
        let dim = u32::try_from(self.dim).map_err(|_| invalid("dim too large"))?;
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&rows.to_le_bytes())?;
        w.write_all(&dim.to_le_bytes())?;
        for k in &self.keys {
            let len = u16::try_from(k.len()).map_err(|_| invalid("key longer than 65535 bytes"))?;
            w.write_all(&len.to_le_bytes())?;
            w.write_all(k.as_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.dim * 4 * 1024);
        for chunk in self.data.chunks(self.dim.max(1) * 1024) {
            buf.clear();
            for v in chunk {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format(format!("bad magic {magic:?}")));
        }
        let version = read_u32(r)?;
        if version != FORMAT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let rows = read_u32(r)? as usize;
        let dim = read_u32(r)? as usize;
        let mut keys = Vec::with_capacity(rows.min(1 << 20));
        for _ in 0..rows {
            let mut len = [0u8; 2];
            read_exact(r, &mut len)?;
            let mut key = vec![0u8; u16::from_le_bytes(len) as usize];
            read_exact(r, &mut key)?;
            keys.push(String::from_utf8(key).map_err(|_| Error::Format("key is not UTF-8".into()))?);
        }
        let total = rows
            .checked_mul(dim)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Format("matrix size overflows".into()))?;
        let mut bytes = Vec::new();
        r.take(total as u64)
            .read_to_end(&mut bytes)
            .map_err(|e| Error::Format(e.to_string()))?;
        if bytes.len() != total {
            return Err(Error::Format(format!(
                "truncated data: expected {total} bytes, found {}",
                bytes.len()
            )));
        }
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing).map_err(|e| Error::Format(e.to_string()))? != 0 {
            return Err(Error::Format("trailing bytes after matrix".into()));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        Self::new(keys, dim, data)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(&mut BufReader::new(file))
    }
}

fn invalid(msg: &str) -> std::io::Error {
    std::io::Error::new(std::io::ErrorKind::InvalidInput, msg.to_string())
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| Error::Format(format!("truncated header: {e}")))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> EmbeddingMatrix {
        EmbeddingMatrix::from_rows(
            2,
            vec![("Q1".to_string(), vec![1.0, -0.5]), ("é".to_string(), vec![0.25, 3.0])],
        )
        .unwrap()
    }

    #[test]
    fn header_layout_is_fixed() {
        let mut buf = Vec::new();
        sample().write_to(&mut buf).unwrap();
        assert_eq!(&buf[0..4], b"VNEL");
        assert_eq!(&buf[4..8], &[1, 0, 0, 0]);
        assert_eq!(&buf[8..12], &[2, 0, 0, 0]);
        assert_eq!(&buf[12..16], &[2, 0, 0, 0]);
        assert_eq!(&buf[16..18], &[2, 0]);
        assert_eq!(&buf[18..20], b"Q1");
        assert_eq!(&buf[20..22], &[2, 0]);
        assert_eq!(&buf[22..24], "é".as_bytes());
        assert_eq!(&buf[24..28], &1.0f32.to_le_bytes());
        assert_eq!(buf.len(), 24 + 4 * 4);
    }

    #[test]
    fn corrupt_inputs() {
        let mut buf = Vec::new();
        sample().write_to(&mut buf).unwrap();

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(EmbeddingMatrix::read_from(&mut bad.as_slice()), Err(Error::Format(_))));

        let mut v2 = buf.clone();
        v2[4] = 2;
        assert!(matches!(
            EmbeddingMatrix::read_from(&mut v2.as_slice()),
            Err(Error::Version { found: 2, expected: 1 })
        ));

        let short = &buf[..buf.len() - 1];
        assert!(EmbeddingMatrix::read_from(&mut &short[..]).is_err());

        let mut long = buf.clone();
        long.push(0);
        assert!(EmbeddingMatrix::read_from(&mut long.as_slice()).is_err());
    }

    #[test]
    fn rows_must_match_dim() {
        assert!(EmbeddingMatrix::from_rows(3, vec![("a".into(), vec![1.0])]).is_err());
        assert!(EmbeddingMatrix::new(vec!["a".into()], 2, vec![1.0]).is_err());
    }

    #[test]
    fn certify_checks_norms() {
        let mut m = sample();
        assert!(m.certify_normalized().is_err());
        let mut unit = EmbeddingMatrix::from_rows(2, vec![("a".into(), vec![0.6, 0.8])]).unwrap();
        unit.certify_normalized().unwrap();
        assert!(unit.is_normalized());
    }

    proptest! {
        #[test]
        fn roundtrip_preserves_bits(
            rows in prop::collection::vec(("[a-zA-Z0-9_é]{0,12}", prop::collection::vec(any::<u32>(), 3)), 0..20)
        ) {
            let m = EmbeddingMatrix::from_rows(
                3,
                rows.into_iter().map(|(k, bits)| (k, bits.into_iter().map(f32::from_bits).collect())),
            ).unwrap();
            let mut a = Vec::new();
            m.write_to(&mut a).unwrap();
            let back = EmbeddingMatrix::read_from(&mut a.as_slice()).unwrap();
            let mut b = Vec::new();
            back.write_to(&mut b).unwrap();
            prop_assert_eq!(a, b);
            prop_assert_eq!(back.keys(), m.keys());
        }
    }
}
