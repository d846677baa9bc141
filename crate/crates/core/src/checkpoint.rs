//! Single-file tensor checkpoints.
//!
//! Layout: 8-byte magic, little-endian `u64` header length, a JSON header
//! listing `{name, shape, offset}` per tensor, then the row-major
//! little-endian `f64` payloads. Offsets count bytes from the start of the
//! payload section.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"GDATNSR1";

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: [usize; 2],
    offset: usize,
}

pub fn encode(tensors: &[(String, &Array2<f64>)]) -> Vec<u8> {
    let mut entries = Vec::with_capacity(tensors.len());
    let mut payload = Vec::new();
    for (name, t) in tensors {
        entries.push(Entry {
            name: name.clone(),
            shape: [t.nrows(), t.ncols()],
            offset: payload.len(),
        });
        for v in t.iter() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let header = serde_json::to_vec(&entries).expect("entries serialize");
    let mut out = Vec::with_capacity(16 + header.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    out
}

pub fn decode(bytes: &[u8]) -> Result<Vec<(String, Array2<f64>)>> {
    let bad = |what: &str| Error::Format(format!("checkpoint: {what}"));
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("missing magic"));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let header_end = 16usize
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| bad("truncated header"))?;
    let entries: Vec<Entry> =
        serde_json::from_slice(&bytes[16..header_end]).map_err(|e| bad(&format!("header: {e}")))?;
    let payload = &bytes[header_end..];
    entries
        .into_iter()
        .map(|e| {
            let count = e.shape[0] * e.shape[1];
            let span = e.offset..e.offset + 8 * count;
            let raw = payload
                .get(span)
                .ok_or_else(|| bad(&format!("truncated tensor {}", e.name)))?;
            let values: Vec<f64> = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let t = Array2::from_shape_vec((e.shape[0], e.shape[1]), values)
                .expect("count matches shape");
            Ok((e.name, t))
        })
        .collect()
}

pub fn save(path: impl AsRef<Path>, tensors: &[(String, &Array2<f64>)]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(tensors)).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<Vec<(String, Array2<f64>)>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip(shapes in prop::collection::vec((0usize..5, 0usize..5), 0..4), seed in any::<u64>()) {
            let tensors: Vec<(String, Array2<f64>)> = shapes
                .iter()
                .enumerate()
                .map(|(k, &(r, c))| {
                    let t = Array2::from_shape_fn((r, c), |(i, j)| {
                        f64::from_bits(seed.wrapping_mul(31 + (i * 7 + j) as u64) >> 2)
                    });
                    (format!("t{k}"), t)
                })
                .collect();
            let refs: Vec<(String, &Array2<f64>)> = tensors.iter().map(|(n, t)| (n.clone(), t)).collect();
            let back = decode(&encode(&refs)).unwrap();
            prop_assert_eq!(back.len(), tensors.len());
            for ((n0, t0), (n1, t1)) in tensors.iter().zip(&back) {
                prop_assert_eq!(n0, n1);
                prop_assert_eq!(t0.dim(), t1.dim());
                prop_assert!(t0.iter().zip(t1.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
            }
        }
    }

    #[test]
    fn rejects_garbage() {
        assert!(decode(b"nope").is_err());
        let t = Array2::<f64>::zeros((2, 2));
        let mut bytes = encode(&[("x".into(), &t)]);
        bytes.truncate(bytes.len() - 3);
        assert!(decode(&bytes).is_err());
    }
}
