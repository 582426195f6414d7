//! Symmetric banded matrices and their Cholesky factorization.

use nalgebra::{DMatrix, DVector};

/// Symmetric `n × n` matrix with `A[i][j] = 0` whenever `|i − j| > bandwidth`,
/// stored as its lower band column by column.
#[derive(Clone, Debug, PartialEq)]
pub struct BandedMatrix {
    n: usize,
    bandwidth: usize,
    data: Vec<f64>,
}

impl BandedMatrix {
    pub fn zeros(n: usize, bandwidth: usize) -> Self {
        let bandwidth = bandwidth.min(n.saturating_sub(1));
        Self {
            n,
            bandwidth,
            data: vec![0.0; n * (bandwidth + 1)],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    fn slot(&self, i: usize, j: usize) -> usize {
        j * (self.bandwidth + 1) + (i - j)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if i - j > self.bandwidth {
            0.0
        } else {
            self.data[self.slot(i, j)]
        }
    }

    /// Adds `v` to both `A[i][j]` and `A[j][i]` (once on the diagonal).
    ///
    /// Panics if the entry lies outside the band.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        assert!(
            i - j <= self.bandwidth,
            "entry ({i}, {j}) outside bandwidth {}",
            self.bandwidth
        );
        let s = self.slot(i, j);
        self.data[s] += v;
    }

    /// Adds a symmetric dense block whose row/column `p` maps to global index `indices[p]`.
    pub fn add_block(&mut self, indices: &[usize], block: &DMatrix<f64>) {
        for (p, &gi) in indices.iter().enumerate() {
            for (q, &gj) in indices.iter().enumerate() {
                if gi > gj || (gi == gj && p == q) {
                    self.add(gi, gj, block[(p, q)]);
                }
            }
        }
    }

    pub fn add_diagonal(&mut self, v: f64) {
        for j in 0..self.n {
            let s = self.slot(j, j);
            self.data[s] += v;
        }
    }

    /// Elementwise sum with a matrix of the same size; the result has the wider band.
    pub fn add_matrix(&mut self, other: &BandedMatrix) {
        assert_eq!(self.n, other.n, "dimension mismatch");
        if other.bandwidth > self.bandwidth {
            let mut wide = BandedMatrix::zeros(self.n, other.bandwidth);
            wide.add_matrix(self);
            *self = wide;
        }
        for j in 0..other.n {
            for i in j..=(j + other.bandwidth).min(other.n - 1) {
                let v = other.data[other.slot(i, j)];
                let s = self.slot(i, j);
                self.data[s] += v;
            }
        }
    }

    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.n, "dimension mismatch");
        let mut y = DVector::zeros(self.n);
        for j in 0..self.n {
            y[j] += self.data[self.slot(j, j)] * x[j];
            for i in (j + 1)..=(j + self.bandwidth).min(self.n - 1) {
                let a = self.data[self.slot(i, j)];
                y[i] += a * x[j];
                y[j] += a * x[i];
            }
        }
        y
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }

    /// `L Lᵀ` factorization, or `None` unless the matrix is numerically positive definite.
    pub fn cholesky(&self) -> Option<BandedCholesky> {
        let bw = self.bandwidth;
        let mut l = self.clone();
        for j in 0..self.n {
            let lo = j.saturating_sub(bw);
            let mut d = l.data[l.slot(j, j)];
            let scale = d.abs();
            for k in lo..j {
                let v = l.data[l.slot(j, k)];
                d -= v * v;
            }
            if !(d > 1e-13 * scale) || !d.is_finite() {
                return None;
            }
            let d = d.sqrt();
            let sjj = l.slot(j, j);
            l.data[sjj] = d;
            for i in (j + 1)..=(j + bw).min(self.n - 1) {
                let mut s = l.data[l.slot(i, j)];
                for k in i.saturating_sub(bw)..j {
                    s -= l.data[l.slot(i, k)] * l.data[l.slot(j, k)];
                }
                let sij = l.slot(i, j);
                l.data[sij] = s / d;
            }
        }
        Some(BandedCholesky { factor: l })
    }
}

/// Lower-triangular banded factor `L` with `A = L Lᵀ`.
#[derive(Clone, Debug)]
pub struct BandedCholesky {
    factor: BandedMatrix,
}

impl BandedCholesky {
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let l = &self.factor;
        let (n, bw) = (l.n, l.bandwidth);
        assert_eq!(b.len(), n, "dimension mismatch");
        let mut y = b.clone();
        for i in 0..n {
            let mut s = y[i];
            for k in i.saturating_sub(bw)..i {
                s -= l.data[l.slot(i, k)] * y[k];
            }
            y[i] = s / l.data[l.slot(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..=(i + bw).min(n - 1) {
                s -= l.data[l.slot(k, i)] * y[k];
            }
            y[i] = s / l.data[l.slot(i, i)];
        }
        y
    }
}
