use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major matrix; one row per difficulty bucket, one column per template.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid_input("ragged matrix rows"));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn get_mut(&mut self, r: usize, c: usize) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn add_scaled(&mut self, other: &Matrix, scale: f64) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, k: f64) {
        for v in &mut self.data {
            *v *= k;
        }
    }

    /// Coordinates of non-finite entries.
    pub fn non_finite(&self) -> Vec<(usize, usize)> {
        self.data
            .iter()
            .enumerate()
            .filter(|(_, v)| !v.is_finite())
            .map(|(i, _)| (i / self.cols, i % self.cols))
            .collect()
    }
}

/// Gradients share the logits' layout.
pub type Gradient = Matrix;

/// Softmax policy over response templates, conditioned on difficulty bucket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub logits: Matrix,
}

impl PolicyParams {
    pub fn uniform(num_buckets: usize, num_templates: usize) -> Self {
        Self {
            logits: Matrix::zeros(num_buckets, num_templates),
        }
    }

    pub fn new(logits: Matrix) -> Result<Self> {
        let bad = logits.non_finite();
        if !bad.is_empty() {
            return Err(Error::Numeric {
                message: "policy logits must be finite".into(),
                coords: bad,
            });
        }
        Ok(Self { logits })
    }

    pub fn num_buckets(&self) -> usize {
        self.logits.rows()
    }

    pub fn num_templates(&self) -> usize {
        self.logits.cols()
    }

    pub fn probs(&self, bucket: usize) -> Vec<f64> {
        softmax(self.logits.row(bucket))
    }

    pub fn prob(&self, bucket: usize, template: usize) -> f64 {
        self.probs(bucket)[template]
    }

    /// All rows' probabilities, materialized once per snapshot.
    pub fn prob_table(&self) -> Matrix {
        let mut m = Matrix::zeros(self.num_buckets(), self.num_templates());
        for b in 0..self.num_buckets() {
            m.row_mut(b).copy_from_slice(&self.probs(b));
        }
        m
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Inverse-CDF draw from a probability vector.
pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding can leave acc a hair below 1; fall back to the last non-zero entry.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one(logits in proptest::collection::vec(-30.0f64..30.0, 1..12)) {
            let p = softmax(&logits);
            let total: f64 = p.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn categorical_frequencies() {
        let probs = [0.1, 0.6, 0.3];
        let mut rng = stream(1, Purpose::Misc, 0, 0);
        let mut counts = [0usize; 3];
        for _ in 0..20_000 {
            counts[sample_categorical(&probs, &mut rng)] += 1;
        }
        for (c, p) in counts.iter().zip(probs) {
            assert!((*c as f64 / 20_000.0 - p).abs() < 0.02);
        }
    }

    #[test]
    fn non_finite_reported() {
        let mut m = Matrix::zeros(2, 3);
        *m.get_mut(1, 2) = f64::NAN;
        assert_eq!(m.non_finite(), vec![(1, 2)]);
        assert!(PolicyParams::new(m).is_err());
    }
}
