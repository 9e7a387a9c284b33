use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::embedding::EmbeddingVector;

pub const ADAPTER_MAGIC: &[u8; 4] = b"WKAD";

/// Linear map applied to raw query embeddings, followed by
/// re-normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearAdapter {
    d_out: usize,
    d_in: usize,
    /// Row-major `d_out x d_in`.
    weights: Vec<f64>,
}

impl LinearAdapter {
    pub fn identity(dims: usize) -> Self {
        let mut weights = vec![0.0; dims * dims];
        for i in 0..dims {
            weights[i * dims + i] = 1.0;
        }
        Self {
            d_out: dims,
            d_in: dims,
            weights,
        }
    }

    pub fn from_weights(d_out: usize, d_in: usize, weights: Vec<f64>) -> Result<Self, TrainError> {
        if weights.len() != d_out * d_in || d_out == 0 || d_in == 0 {
            return Err(TrainError::AdapterFormat(format!(
                "{} weights do not form a {d_out}x{d_in} matrix",
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(TrainError::AdapterFormat("non-finite weight".into()));
        }
        Ok(Self { d_out, d_in, weights })
    }

    pub fn d_out(&self) -> usize {
        self.d_out
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    /// `W x`, without normalization.
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.d_in)
            .map(|row| row.iter().zip(x).map(|(w, v)| w * v).sum())
            .collect()
    }

    /// `normalize(W x)`.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>, TrainError> {
        if x.len() != self.d_in {
            return Err(TrainError::Dims {
                expected: self.d_in,
                got: x.len(),
            });
        }
        let u = self.project(x);
        let n = u.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n == 0.0 || !n.is_finite() {
            return Err(TrainError::Domain("adapter output is degenerate".into()));
        }
        Ok(u.into_iter().map(|v| v / n).collect())
    }

    pub fn apply_vector(&self, v: &EmbeddingVector) -> Result<EmbeddingVector, TrainError> {
        let out = self.apply(&v.to_f64())?;
        EmbeddingVector::normalized(&out).map_err(TrainError::Domain)
    }

    /// `WKAD` | d_out u32 | d_in u32 | row-major f32 weights, little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 4 * self.weights.len());
        out.extend_from_slice(ADAPTER_MAGIC);
        out.extend_from_slice(&(self.d_out as u32).to_le_bytes());
        out.extend_from_slice(&(self.d_in as u32).to_le_bytes());
        for w in &self.weights {
            out.extend_from_slice(&(*w as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TrainError> {
        if bytes.len() < 12 || &bytes[..4] != ADAPTER_MAGIC {
            return Err(TrainError::AdapterFormat("bad header".into()));
        }
        let d_out = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
        let d_in = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let body = &bytes[12..];
        if Some(body.len()) != d_out.checked_mul(d_in).and_then(|n| n.checked_mul(4)) {
            return Err(TrainError::AdapterFormat("weight block has the wrong length".into()));
        }
        let weights = body
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect();
        Self::from_weights(d_out, d_in, weights)
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_preserves_direction() {
        let a = LinearAdapter::identity(3);
        let out = a.apply(&[3.0, 0.0, 4.0]).unwrap();
        assert_eq!(out, vec![0.6, 0.0, 0.8]);
    }

    #[test]
    fn bytes_round_trip_at_f32_precision() {
        let a = LinearAdapter::from_weights(2, 3, vec![0.5, -1.25, 2.0, 0.0, 1.0, 3.5]).unwrap();
        let b = LinearAdapter::from_bytes(&a.to_bytes()).unwrap();
        assert_eq!(a, b);
        assert!(LinearAdapter::from_bytes(b"WKAD\x01\0\0\0\x01\0\0\0").is_err());
        assert!(LinearAdapter::from_bytes(b"XXXX").is_err());
    }
}
