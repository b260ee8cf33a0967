//! Embedding bank file: 8-byte magic, two little-endian u64 dims, then the
//! row-major float32 payload. Row i always belongs to sample id i.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

pub const BANK_MAGIC: &[u8; 8] = b"GPSBANK1";
const HEADER_LEN: usize = 8 + 8 + 8;

/// Write an N x D matrix. Values are stored at float32 precision.
pub fn save_bank(path: impl AsRef<Path>, embeddings: &Array2<f64>) -> Result<()> {
    let (n, d) = embeddings.dim();
    if n == 0 || d == 0 {
        return Err(Error::Format("bank must have N >= 1 and D >= 1".into()));
    }
    if let Some(((i, j), v)) = embeddings.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::Format(format!("non-finite value {v} at row {i} col {j}")));
    }
    let mut bytes = Vec::with_capacity(HEADER_LEN + n * d * 4);
    bytes.extend_from_slice(BANK_MAGIC);
    bytes.extend_from_slice(&(n as u64).to_le_bytes());
    bytes.extend_from_slice(&(d as u64).to_le_bytes());
    for v in embeddings.iter() {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

/// Read a bank written by [`save_bank`]. The payload length must match the
/// header exactly.
pub fn load_bank(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    let bytes = fs::read(path.as_ref())?;
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!("file too short for header: {} bytes", bytes.len())));
    }
    if &bytes[..8] != BANK_MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let d = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
    if n == 0 || d == 0 {
        return Err(Error::Format("header declares an empty matrix".into()));
    }
    let payload = n
        .checked_mul(d)
        .and_then(|nd| nd.checked_mul(4))
        .ok_or_else(|| Error::Format("header dimensions overflow".into()))?;
    let expected = HEADER_LEN as u64 + payload;
    if bytes.len() as u64 != expected {
        return Err(Error::Format(format!(
            "payload length mismatch: expected {expected} bytes, found {}",
            bytes.len()
        )));
    }
    let (n, d) = (n as usize, d as usize);
    let mut values = Vec::with_capacity(n * d);
    for chunk in bytes[HEADER_LEN..].chunks_exact(4) {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::Format(format!("non-finite value {v} in payload")));
        }
        values.push(v as f64);
    }
    Array2::from_shape_vec((n, d), values).map_err(|e| Error::Format(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn zeros_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("z.bank");
        let m = Array2::<f64>::zeros((3, 2));
        save_bank(&path, &m).unwrap();
        assert_eq!(load_bank(&path).unwrap(), m);
    }

    #[test]
    fn truncated_payload_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.bank");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(BANK_MAGIC);
        bytes.extend_from_slice(&1u64.to_le_bytes());
        bytes.extend_from_slice(&2u64.to_le_bytes());
        bytes.extend_from_slice(&[0u8; 5]);
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(load_bank(&path), Err(Error::Format(_))));
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bank");
        let mut bytes = b"NOTABANK".to_vec();
        bytes.extend_from_slice(&1u64.to_le_bytes());
        bytes.extend_from_slice(&1u64.to_le_bytes());
        bytes.extend_from_slice(&0f32.to_le_bytes());
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(load_bank(&path), Err(Error::Format(_))));
    }

    #[test]
    fn non_finite_rejected_on_save() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = Array2::<f64>::zeros((2, 2));
        m[[1, 0]] = f64::NAN;
        assert!(matches!(save_bank(dir.path().join("n.bank"), &m), Err(Error::Format(_))));
    }

    #[test]
    fn random_round_trip_is_exact_at_f32() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.bank");
        let mut rng = crate::rng::stream(42, 0, 0, 0);
        let m = Array2::from_shape_fn((100, 8), |_| rng.random::<f64>() * 4.0 - 2.0);
        save_bank(&path, &m).unwrap();
        let back = load_bank(&path).unwrap();
        let max_diff = m
            .iter()
            .zip(back.iter())
            .map(|(a, b)| ((*a as f32) as f64 - b).abs())
            .fold(0.0f64, f64::max);
        assert_eq!(max_diff, 0.0);
    }
}
