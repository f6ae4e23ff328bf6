//! Small dense symmetric linear solves used by the local fits.
//!
//! Matrices here are tiny (basis-sized), so a hand-rolled Cholesky beats a
//! general-purpose library in the per-observation hot loop.

/// Symmetric positive definite matrix stored row-major.
#[derive(Debug, Clone)]
pub struct SymMatrix {
    pub n: usize,
    pub data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(n: usize) -> Self {
        SymMatrix { n, data: vec![0.0; n * n] }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] += v;
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.at(i, i)).sum()
    }

    /// Add `r` to every diagonal entry.
    pub fn add_ridge(&mut self, r: f64) {
        for i in 0..self.n {
            self.data[i * self.n + i] += r;
        }
    }

    /// In-place lower Cholesky factor. Returns false if the matrix is not
    /// numerically positive definite.
    fn cholesky(&self, lower: &mut [f64]) -> bool {
        let n = self.n;
        lower.copy_from_slice(&self.data);
        for j in 0..n {
            let mut d = lower[j * n + j];
            for k in 0..j {
                let l = lower[j * n + k];
                d -= l * l;
            }
            if d <= 0.0 || !d.is_finite() {
                return false;
            }
            let d = d.sqrt();
            lower[j * n + j] = d;
            for i in (j + 1)..n {
                let mut s = lower[i * n + j];
                for k in 0..j {
                    s -= lower[i * n + k] * lower[j * n + k];
                }
                lower[i * n + j] = s / d;
            }
        }
        true
    }

    /// Solve `A x = b` by Cholesky, without ridge. None if not SPD.
    pub fn solve(&self, b: &[f64]) -> Option<Vec<f64>> {
        let n = self.n;
        let mut lower = vec![0.0; n * n];
        if !self.cholesky(&mut lower) {
            return None;
        }
        let mut x = b.to_vec();
        // Forward substitution L y = b.
        for i in 0..n {
            let mut s = x[i];
            for k in 0..i {
                s -= lower[i * n + k] * x[k];
            }
            x[i] = s / lower[i * n + i];
        }
        // Back substitution L' x = y.
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in (i + 1)..n {
                s -= lower[k * n + i] * x[k];
            }
            x[i] = s / lower[i * n + i];
        }
        Some(x)
    }

    /// Solve `A x = b`, escalating a diagonal ridge until the factorization
    /// succeeds. Returns the solution and the ridge that was applied (0.0 on
    /// a clean solve).
    pub fn solve_ridged(&self, b: &[f64], base_ridge: f64) -> (Vec<f64>, f64) {
        if let Some(x) = self.solve(b) {
            return (x, 0.0);
        }
        let scale = (self.trace().abs() / self.n as f64).max(1e-300);
        let mut ridge = base_ridge.max(1e-12) * scale;
        let mut work = self.clone();
        loop {
            work.data.copy_from_slice(&self.data);
            work.add_ridge(ridge);
            if let Some(x) = work.solve(b) {
                return (x, ridge);
            }
            ridge *= 10.0;
            if !ridge.is_finite() {
                // Matrix contained non-finite entries; surface a zero vector
                // rather than looping forever. Callers flag these points.
                return (vec![0.0; self.n], f64::INFINITY);
            }
        }
    }
}
