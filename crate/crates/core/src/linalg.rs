//! Small dense/banded solvers used by the least-squares routines.

use crate::error::{Error, Result};

/// Symmetric positive definite matrix stored as its lower band.
#[derive(Clone, Debug)]
pub(crate) struct BandedSpd {
    n: usize,
    bw: usize,
    // row i holds columns i-bw+1 ..= i, at offset (i - j)
    data: Vec<f64>,
}

impl BandedSpd {
    pub fn zeros(n: usize, bw: usize) -> Self {
        BandedSpd {
            n,
            bw,
            data: vec![0.0; n * bw],
        }
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i >= j && i - j < self.bw);
        self.data[i * self.bw + (i - j)] += v;
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.data[i * self.bw]).collect()
    }

    pub fn add_diagonal(&mut self, d: &[f64]) {
        for (i, v) in d.iter().enumerate() {
            self.data[i * self.bw] += v;
        }
    }

    /// In-place Cholesky factorization followed by two triangular solves.
    pub fn solve(mut self, rhs: &[f64]) -> Result<Vec<f64>> {
        let (n, bw) = (self.n, self.bw);
        for i in 0..n {
            let jmin = i.saturating_sub(bw - 1);
            for j in jmin..=i {
                let kmin = jmin.max(j.saturating_sub(bw - 1));
                let mut sum = self.data[i * bw + (i - j)];
                for k in kmin..j {
                    sum -= self.data[i * bw + (i - k)] * self.data[j * bw + (j - k)];
                }
                if i == j {
                    if sum <= 0.0 || !sum.is_finite() {
                        return Err(Error::invalid("normal matrix is not positive definite"));
                    }
                    self.data[i * bw] = sum.sqrt();
                } else {
                    self.data[i * bw + (i - j)] = sum / self.data[j * bw];
                }
            }
        }
        let mut y = rhs.to_vec();
        for i in 0..n {
            let jmin = i.saturating_sub(bw - 1);
            let mut s = y[i];
            for j in jmin..i {
                s -= self.data[i * bw + (i - j)] * y[j];
            }
            y[i] = s / self.data[i * bw];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            let jmax = (i + bw).min(n);
            for j in (i + 1)..jmax {
                s -= self.data[j * bw + (j - i)] * y[j];
            }
            y[i] = s / self.data[i * bw];
        }
        Ok(y)
    }
}
