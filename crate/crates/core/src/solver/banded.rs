//! Symmetric banded matrices and their Cholesky factorization.

/// Lower band of a symmetric `n x n` matrix with half-bandwidth `b`.
/// Row `i` stores columns `i - b ..= i` contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct BandedMatrix {
    n: usize,
    b: usize,
    data: Vec<f64>,
}

impl BandedMatrix {
    pub fn zeros(n: usize, b: usize) -> Self {
        BandedMatrix {
            n,
            b,
            data: vec![0.0; n * (b + 1)],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.b
    }

    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.b, "({i}, {j}) outside band {}", self.b);
        i * (self.b + 1) + (j + self.b - i)
    }

    /// Entry `(i, j)`; zero outside the band.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if i - j > self.b {
            0.0
        } else {
            self.data[self.idx(i, j)]
        }
    }

    /// Add `v` to `(i, j)` (and by symmetry `(j, i)`).
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.data[self.idx(i, i)]).collect()
    }

    pub fn add_diagonal(&mut self, d: &[f64]) {
        for (i, v) in d.iter().enumerate() {
            self.add(i, i, *v);
        }
    }

    /// `y = A x`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            let lo = i.saturating_sub(self.b);
            for j in lo..i {
                let a = self.data[self.idx(i, j)];
                y[i] += a * x[j];
                y[j] += a * x[i];
            }
            y[i] += self.data[self.idx(i, i)] * x[i];
        }
        y
    }

    /// In-place `A = L L^T`; `None` if `A` is not positive definite.
    pub fn cholesky(mut self) -> Option<BandedCholesky> {
        let (n, b) = (self.n, self.b);
        let w = b + 1;
        for i in 0..n {
            let lo = i.saturating_sub(b);
            for j in lo..=i {
                // Σ_k L[i][k] L[j][k] for k in max(lo, j - b)..j; both rows
                // store those columns contiguously.
                let k0 = lo.max(j.saturating_sub(b));
                let mut s = self.data[i * w + (j + b - i)];
                if k0 < j {
                    let ri = i * w + (k0 + b - i);
                    let rj = j * w + (k0 + b - j);
                    let len = j - k0;
                    let (a, c) = (&self.data[ri..ri + len], &self.data[rj..rj + len]);
                    s -= a.iter().zip(c).map(|(x, y)| x * y).sum::<f64>();
                }
                if i == j {
                    if !(s > 0.0) || !s.is_finite() {
                        return None;
                    }
                    self.data[i * w + b] = s.sqrt();
                } else {
                    self.data[i * w + (j + b - i)] = s / self.data[j * w + b];
                }
            }
        }
        Some(BandedCholesky { l: self })
    }
}

#[derive(Debug, Clone)]
pub struct BandedCholesky {
    l: BandedMatrix,
}

impl BandedCholesky {
    /// Solve `A x = rhs`.
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let (n, b) = (self.l.n, self.l.b);
        let w = b + 1;
        let d = &self.l.data;
        let mut y = rhs.to_vec();
        for i in 0..n {
            let lo = i.saturating_sub(b);
            let mut s = y[i];
            for k in lo..i {
                s -= d[i * w + (k + b - i)] * y[k];
            }
            y[i] = s / d[i * w + b];
        }
        for i in (0..n).rev() {
            let v = y[i] / d[i * w + b];
            y[i] = v;
            let lo = i.saturating_sub(b);
            for k in lo..i {
                y[k] -= d[i * w + (k + b - i)] * v;
            }
        }
        y
    }
}
