//! Symmetric absmax int8 weight quantization.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::lm::params::{Mat, ParamKind};
use crate::lm::ModelParams;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    #[default]
    PerRow,
    PerTensor,
}

/// Int8 codes with one positive scale per row.
///
/// Under per-tensor granularity every row carries the same scale.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedMatrix {
    q: Array2<i8>,
    scales: Vec<f64>,
}

fn quantize_row(row: impl Iterator<Item = f64>, absmax: f64) -> (Vec<i8>, f64) {
    if absmax == 0.0 {
        return (row.map(|_| 0).collect(), 1.0);
    }
    // w * 127 / absmax avoids the inexact 1/127 and keeps exact half-way
    // cases (0.5 * 127 = 63.5) exact before rounding.
    let codes = row
        .map(|w| (w * 127.0 / absmax).round().clamp(-127.0, 127.0) as i8)
        .collect();
    (codes, absmax / 127.0)
}

/// Quantizes with per-row scales.
pub fn quantize_int8(w: &Mat) -> QuantizedMatrix {
    quantize_int8_with(w, Granularity::PerRow)
}

pub fn quantize_int8_with(w: &Mat, granularity: Granularity) -> QuantizedMatrix {
    let (rows, cols) = w.dim();
    let tensor_absmax = w.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    let mut q = Array2::<i8>::zeros((rows, cols));
    let mut scales = Vec::with_capacity(rows);
    for (i, row) in w.rows().into_iter().enumerate() {
        let absmax = match granularity {
            Granularity::PerRow => row.iter().fold(0.0_f64, |m, x| m.max(x.abs())),
            Granularity::PerTensor => tensor_absmax,
        };
        let (codes, scale) = quantize_row(row.iter().copied(), absmax);
        q.row_mut(i).assign(&ndarray::Array1::from(codes));
        scales.push(scale);
    }
    QuantizedMatrix { q, scales }
}

impl QuantizedMatrix {
    pub fn codes(&self) -> &Array2<i8> {
        &self.q
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn dim(&self) -> (usize, usize) {
        self.q.dim()
    }

    pub fn dequantize(&self) -> Mat {
        let mut out = Array2::zeros(self.q.raw_dim());
        for ((i, j), v) in out.indexed_iter_mut() {
            *v = f64::from(self.q[[i, j]]) * self.scales[i];
        }
        out
    }

    /// Storage footprint: one byte per code plus the scales as f32.
    pub fn storage_bytes(&self) -> usize {
        self.q.len() + 4 * self.scales.len()
    }
}

/// Int8 copies of a model's frozen linear weights.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedWeights {
    pub entries: Vec<(String, QuantizedMatrix)>,
}

impl QuantizedWeights {
    /// Quantizes every linear weight matrix (embeddings, norms and biases stay
    /// full precision).
    pub fn from_params(params: &ModelParams, granularity: Granularity) -> Self {
        let entries = params
            .tensors()
            .into_iter()
            .filter(|(_, kind, _)| *kind == ParamKind::Weight)
            .map(|(name, _, m)| (name, quantize_int8_with(m, granularity)))
            .collect();
        Self { entries }
    }

    /// Overwrites the matching weights in `params` with dequantized values.
    pub fn load_into(&self, params: &mut ModelParams) {
        let mut tensors = params.tensors_mut();
        for (name, qm) in &self.entries {
            if let Some((_, _, m)) = tensors.iter_mut().find(|(n, _, _)| n == name) {
                **m = qm.dequantize();
            }
        }
    }

    pub fn storage_bytes(&self) -> usize {
        self.entries.iter().map(|(_, q)| q.storage_bytes()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn hand_row() {
        let qm = quantize_int8(&array![[0.5, -1.0, 0.25]]);
        assert_eq!(qm.codes().row(0).to_vec(), [64, -127, 32]);
        assert_eq!(qm.scales()[0], 1.0 / 127.0);
        let dq = qm.dequantize();
        let expected = [0.5039, -1.0, 0.2520];
        for (a, b) in dq.iter().zip(expected) {
            assert!((a - b).abs() < 5e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn zero_row() {
        let qm = quantize_int8(&array![[0.0, 0.0], [1.0, -0.5]]);
        assert_eq!(qm.scales()[0], 1.0);
        assert_eq!(qm.codes().row(0).to_vec(), [0, 0]);
        assert!(qm.dequantize().row(0).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn per_tensor_shares_scale() {
        let qm = quantize_int8_with(&array![[0.5, 0.1], [2.0, -1.0]], Granularity::PerTensor);
        assert_eq!(qm.scales()[0], qm.scales()[1]);
        assert_eq!(qm.codes()[[1, 0]], 127);
        assert_eq!(qm.codes()[[0, 0]], 32);
    }

    #[test]
    fn odd_symmetry() {
        let w = array![[0.5, -0.25, 0.125, 0.3], [-7.0, 3.5, 0.0, 1.75]];
        let pos = quantize_int8(&w);
        let neg = quantize_int8(&(-&w));
        assert_eq!(neg.codes(), &pos.codes().mapv(|x| -x));
    }
}
