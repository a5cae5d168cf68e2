use rayon::prelude::*;

use crate::stats::{sigmoid, softplus};

/// Rows per gradient chunk. Chunks are reduced in index order, so results do
/// not depend on the thread count.
const CHUNK: usize = 2048;

/// Mean cross-entropy of a sparse binary design plus `lambda / 2 * |w|^2`.
///
/// Parameters are laid out as `[w_0 .. w_{width-1}, intercept]`; the
/// intercept is not penalized.
pub struct LogisticObjective {
    rows: Vec<Vec<u32>>,
    labels: Vec<f64>,
    width: usize,
    lambda: f64,
}

impl LogisticObjective {
    pub fn new(rows: Vec<Vec<u32>>, labels: Vec<bool>, width: usize, lambda: f64) -> Self {
        assert_eq!(rows.len(), labels.len());
        debug_assert!(rows.iter().flatten().all(|&c| (c as usize) < width));
        LogisticObjective {
            rows,
            labels: labels.into_iter().map(|l| f64::from(u8::from(l))).collect(),
            width,
            lambda,
        }
    }

    pub fn n_params(&self) -> usize {
        self.width + 1
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    fn margin(&self, theta: &[f64], row: &[u32]) -> f64 {
        let mut z = theta[self.width];
        for &c in row {
            z += theta[c as usize];
        }
        z
    }

    fn penalty(&self, theta: &[f64]) -> f64 {
        0.5 * self.lambda * theta[..self.width].iter().map(|w| w * w).sum::<f64>()
    }

    /// Mean cross-entropy without the penalty.
    pub fn data_loss(&self, theta: &[f64]) -> f64 {
        let parts: Vec<f64> = self
            .rows
            .par_chunks(CHUNK)
            .zip(self.labels.par_chunks(CHUNK))
            .map(|(rows, labels)| {
                rows.iter()
                    .zip(labels)
                    .map(|(r, y)| {
                        let z = self.margin(theta, r);
                        softplus(z) - y * z
                    })
                    .sum()
            })
            .collect();
        parts.iter().sum::<f64>() / self.rows.len().max(1) as f64
    }

    pub fn value(&self, theta: &[f64]) -> f64 {
        self.data_loss(theta) + self.penalty(theta)
    }

    pub fn value_and_gradient(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let n = self.rows.len().max(1) as f64;
        let parts: Vec<(f64, Vec<f64>)> = self
            .rows
            .par_chunks(CHUNK)
            .zip(self.labels.par_chunks(CHUNK))
            .map(|(rows, labels)| {
                let mut grad = vec![0.0; self.width + 1];
                let mut loss = 0.0;
                for (r, y) in rows.iter().zip(labels) {
                    let z = self.margin(theta, r);
                    loss += softplus(z) - y * z;
                    let residual = sigmoid(z) - y;
                    for &c in r {
                        grad[c as usize] += residual;
                    }
                    grad[self.width] += residual;
                }
                (loss, grad)
            })
            .collect();
        let mut loss = 0.0;
        let mut grad = vec![0.0; self.width + 1];
        for (l, g) in parts {
            loss += l;
            for (a, b) in grad.iter_mut().zip(g) {
                *a += b;
            }
        }
        for g in &mut grad {
            *g /= n;
        }
        for (g, w) in grad[..self.width].iter_mut().zip(theta) {
            *g += self.lambda * w;
        }
        (loss / n + self.penalty(theta), grad)
    }
}
