//! Shared oracles for the integration suites: a dense LU solver independent
//! of the production tridiagonal path, and small helpers.

/// Dense linear solve with partial pivoting.  Deliberately naive; this is the
/// oracle the fast solvers are checked against.
pub fn dense_solve(a: &[Vec<f64>], rhs: &[f64]) -> Vec<f64> {
    let n = rhs.len();
    let mut m: Vec<Vec<f64>> = a.iter().map(|row| row.clone()).collect();
    let mut b = rhs.to_vec();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| m[i][col].abs().partial_cmp(&m[j][col].abs()).unwrap())
            .unwrap();
        m.swap(col, piv);
        b.swap(col, piv);
        assert!(m[col][col] != 0.0, "singular oracle matrix");
        for row in col + 1..n {
            let f = m[row][col] / m[col][col];
            for k in col..n {
                m[row][k] -= f * m[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut s = b[row];
        for k in row + 1..n {
            s -= m[row][k] * x[k];
        }
        x[row] = s / m[row][row];
    }
    x
}

/// Dense matrix of a periodic tridiagonal system (banded plus corners).
pub fn cyclic_dense(a: &[f64], b: &[f64], c: &[f64]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut m = vec![vec![0.0; n]; n];
    for i in 0..n {
        m[i][i] = a[i];
        m[i][(i + 1) % n] += b[i];
        m[i][(i + n - 1) % n] += c[i];
    }
    m
}

/// Deterministic xorshift-style generator for test data.
pub struct TestRng(pub u64);

impl TestRng {
    pub fn next_f64(&mut self) -> f64 {
        self.0 = self
            .0
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        ((self.0 >> 11) as f64) / ((1u64 << 53) as f64)
    }

    /// Uniform in [-0.5, 0.5).
    pub fn centered(&mut self) -> f64 {
        self.next_f64() - 0.5
    }
}
