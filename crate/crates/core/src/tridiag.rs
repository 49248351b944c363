//! Direct solvers for the one-dimensional tridiagonal systems produced by the
//! direction-split fluid stepper.
//!
//! Three layers:
//!
//! * [`ThomasFactors`] - plain LU sweep for non-periodic systems;
//! * [`CyclicFactorization`] - periodic systems via a rank-one
//!   (Sherman-Morrison) correction of a Thomas solve;
//! * [`SchurFactorization`] - a periodic system split into per-subdomain
//!   blocks `B_p` plus a small interface system `S = C - F B^{-1} E`, which is
//!   itself periodic tridiagonal of size `P`.
//!
//! All matrices this crate generates are strictly diagonally dominant, which
//! is asserted at factorization time; a zero pivot therefore signals a caller
//! bug rather than an expected failure mode.
//!
//! The Schur path is phase-structured (`block_eliminate` /
//! `solve_interface` / `block_correct`) so the distributed runtime can run the
//! same arithmetic with the gather/scatter steps replaced by messages.  Only
//! three scalars per block travel to the per-line master and two come back.

use crate::error::{Error, Result};

/// Periodic (cyclic) tridiagonal matrix in banded form.
///
/// Row `i` holds `c[i]` on column `i-1 (mod N)`, `a[i]` on the diagonal and
/// `b[i]` on column `i+1 (mod N)`; the corner couplings are `c[0]` (top-right)
/// and `b[N-1]` (bottom-left).
#[derive(Debug, Clone, PartialEq)]
pub struct CyclicTridiagMatrix {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

impl CyclicTridiagMatrix {
    pub fn new(a: Vec<f64>, b: Vec<f64>, c: Vec<f64>) -> Self {
        assert_eq!(a.len(), b.len());
        assert_eq!(a.len(), c.len());
        CyclicTridiagMatrix { a, b, c }
    }

    /// Constant-coefficient system, the only kind the fluid stepper builds.
    pub fn constant(n: usize, a: f64, b: f64, c: f64) -> Self {
        CyclicTridiagMatrix {
            a: vec![a; n],
            b: vec![b; n],
            c: vec![c; n],
        }
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    /// Strict row diagonal dominance, `|a_i| > |b_i| + |c_i|`.
    pub fn is_diagonally_dominant(&self) -> bool {
        (0..self.len()).all(|i| self.a[i].abs() > self.b[i].abs() + self.c[i].abs())
    }

    /// Matrix-vector product, used by residual checks and reassembly oracles.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n = self.len();
        assert_eq!(x.len(), n);
        (0..n)
            .map(|i| {
                self.c[i] * x[(i + n - 1) % n] + self.a[i] * x[i] + self.b[i] * x[(i + 1) % n]
            })
            .collect()
    }
}

/// `||M x - rhs||_inf / ||rhs||_inf`.
pub fn relative_residual(m: &CyclicTridiagMatrix, x: &[f64], rhs: &[f64]) -> f64 {
    let mx = m.apply(x);
    let num = mx
        .iter()
        .zip(rhs)
        .map(|(p, q)| (p - q).abs())
        .fold(0.0, f64::max);
    let den = rhs.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

/// Precomputed forward-elimination factors of a non-periodic tridiagonal
/// matrix, reusable across many right-hand sides.
#[derive(Debug, Clone)]
pub struct ThomasFactors {
    /// Modified pivots.
    d: Vec<f64>,
    /// Row multipliers, `w[i]` applies to row `i-1`; `w[0]` unused.
    w: Vec<f64>,
    /// Super-diagonal, kept for back substitution (`b[i]` couples `i` to `i+1`).
    b: Vec<f64>,
}

impl ThomasFactors {
    /// Factorize `diag a` (len n), `super b` (len n-1), `sub c` (len n-1,
    /// `c[i]` couples row `i+1` to `i`).
    pub fn new(a: &[f64], b: &[f64], c: &[f64]) -> Result<Self> {
        let n = a.len();
        assert!(n >= 1);
        assert_eq!(b.len(), n - 1);
        assert_eq!(c.len(), n - 1);
        let mut d = vec![0.0; n];
        let mut w = vec![0.0; n];
        d[0] = a[0];
        if d[0] == 0.0 {
            return Err(Error::Numerical("zero pivot in Thomas factorization".into()));
        }
        for i in 1..n {
            w[i] = c[i - 1] / d[i - 1];
            d[i] = a[i] - w[i] * b[i - 1];
            if d[i] == 0.0 {
                return Err(Error::Numerical(format!("zero pivot at row {i}")));
            }
        }
        Ok(ThomasFactors {
            d,
            w,
            b: b.to_vec(),
        })
    }

    pub fn len(&self) -> usize {
        self.d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d.is_empty()
    }

    /// Solve in place.
    pub fn solve_into(&self, rhs: &mut [f64]) {
        let n = self.d.len();
        assert_eq!(rhs.len(), n);
        for i in 1..n {
            rhs[i] -= self.w[i] * rhs[i - 1];
        }
        rhs[n - 1] /= self.d[n - 1];
        for i in (0..n - 1).rev() {
            rhs[i] = (rhs[i] - self.b[i] * rhs[i + 1]) / self.d[i];
        }
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let mut x = rhs.to_vec();
        self.solve_into(&mut x);
        x
    }
}

/// One-shot non-periodic Thomas solve.
pub fn thomas_solve(a: &[f64], b: &[f64], c: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    Ok(ThomasFactors::new(a, b, c)?.solve(rhs))
}

/// Reusable factorization of a periodic tridiagonal matrix.
///
/// For `n >= 3` the corner couplings are removed with a rank-one update and
/// the corrected system is solved by Thomas plus a Sherman-Morrison step;
/// `n <= 2` fall back to closed forms.
#[derive(Debug, Clone)]
pub struct CyclicFactorization {
    n: usize,
    kind: CyclicKind,
}

#[derive(Debug, Clone)]
enum CyclicKind {
    /// 1x1: all three couplings act on the single unknown.
    Single { inv: f64 },
    /// 2x2 dense inverse (band and corner entries alias and accumulate).
    Dense2 { inv: [f64; 4] },
    ShermanMorrison {
        thomas: ThomasFactors,
        /// `q = A'^{-1} u`.
        q: Vec<f64>,
        /// `v = e_0 + (c_0 / gamma) e_{n-1}`.
        v_last: f64,
        /// `1 + v . q`.
        denom: f64,
    },
}

impl CyclicFactorization {
    pub fn new(m: &CyclicTridiagMatrix) -> Result<Self> {
        let n = m.len();
        assert!(
            m.is_diagonally_dominant(),
            "periodic tridiagonal system must be strictly diagonally dominant"
        );
        match n {
            0 => Err(Error::Numerical("empty system".into())),
            1 => {
                let t = m.a[0] + m.b[0] + m.c[0];
                if t == 0.0 {
                    return Err(Error::Numerical("singular 1x1 periodic system".into()));
                }
                Ok(CyclicFactorization {
                    n,
                    kind: CyclicKind::Single { inv: 1.0 / t },
                })
            }
            2 => {
                // Row 0: a0 x0 + (b0 + c0) x1;  row 1: (b1 + c1) x0 + a1 x1.
                let (p, q) = (m.a[0], m.b[0] + m.c[0]);
                let (r, s) = (m.b[1] + m.c[1], m.a[1]);
                let det = p * s - q * r;
                if det == 0.0 {
                    return Err(Error::Numerical("singular 2x2 periodic system".into()));
                }
                Ok(CyclicFactorization {
                    n,
                    kind: CyclicKind::Dense2 {
                        inv: [s / det, -q / det, -r / det, p / det],
                    },
                })
            }
            _ => {
                let gamma = -m.a[0];
                let mut a = m.a.clone();
                a[0] -= gamma;
                a[n - 1] -= m.b[n - 1] * m.c[0] / gamma;
                let b = m.b[..n - 1].to_vec();
                let c = m.c[1..].to_vec();
                let thomas = ThomasFactors::new(&a, &b, &c)?;
                let mut u = vec![0.0; n];
                u[0] = gamma;
                u[n - 1] = m.b[n - 1];
                let q = thomas.solve(&u);
                let v_last = m.c[0] / gamma;
                let denom = 1.0 + q[0] + v_last * q[n - 1];
                if denom == 0.0 {
                    return Err(Error::Numerical("singular Sherman-Morrison update".into()));
                }
                Ok(CyclicFactorization {
                    n,
                    kind: CyclicKind::ShermanMorrison {
                        thomas,
                        q,
                        v_last,
                        denom,
                    },
                })
            }
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn solve_into(&self, rhs: &mut [f64]) {
        assert_eq!(rhs.len(), self.n);
        match &self.kind {
            CyclicKind::Single { inv } => rhs[0] *= inv,
            CyclicKind::Dense2 { inv } => {
                let (r0, r1) = (rhs[0], rhs[1]);
                rhs[0] = inv[0] * r0 + inv[1] * r1;
                rhs[1] = inv[2] * r0 + inv[3] * r1;
            }
            CyclicKind::ShermanMorrison {
                thomas,
                q,
                v_last,
                denom,
            } => {
                thomas.solve_into(rhs);
                let vy = rhs[0] + v_last * rhs[self.n - 1];
                let factor = vy / denom;
                for (x, qi) in rhs.iter_mut().zip(q) {
                    *x -= factor * qi;
                }
            }
        }
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let mut x = rhs.to_vec();
        self.solve_into(&mut x);
        x
    }
}

/// Direct serial solve of a periodic tridiagonal system; the oracle for the
/// distributed path.
pub fn cyclic_solve_serial(m: &CyclicTridiagMatrix, rhs: &[f64]) -> Result<Vec<f64>> {
    Ok(CyclicFactorization::new(m)?.solve(rhs))
}

/// The three scalars each block contributes to the interface right-hand side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockScalars {
    /// First entry of `f* = B_p^{-1} f_p`.
    pub f_first: f64,
    /// Last entry of `f*`.
    pub f_last: f64,
    /// Right-hand side at the block's interface row.
    pub g: f64,
}

struct SchurBlock {
    thomas: ThomasFactors,
    /// `B_p^{-1} (c_first e_first)`: couples the block to `y_{p-1}`.
    col_left: Vec<f64>,
    /// `B_p^{-1} (b_last e_last)`: couples the block to `y_p`.
    col_right: Vec<f64>,
}

/// Schur-complement factorization of a periodic tridiagonal matrix split into
/// `P` contiguous blocks.
///
/// The last row of each block is moved to the interface set, so the interface
/// system has size `P` and is itself periodic tridiagonal.  Everything here is
/// precomputed once per (coefficients, partition) pair and reused for every
/// right-hand side.
pub struct SchurFactorization {
    /// Block boundaries, length `P + 1`, `starts[0] == 0`,
    /// `starts[P] == n`.
    starts: Vec<usize>,
    blocks: Vec<SchurBlock>,
    interface: CyclicFactorization,
    /// Interface-row couplings, indexed by block: `(c[I_p], b[I_p])`.
    iface_coeff: Vec<(f64, f64)>,
}

impl SchurFactorization {
    /// Factorize `m` over the given block boundaries.
    ///
    /// Requires at least two blocks, each of size at least two.
    pub fn new(m: &CyclicTridiagMatrix, starts: &[usize]) -> Result<Self> {
        let n = m.len();
        let p = starts.len().saturating_sub(1);
        if p < 2 {
            return Err(Error::Config(format!(
                "Schur factorization needs >= 2 blocks, got {p}"
            )));
        }
        if starts[0] != 0 || starts[p] != n {
            return Err(Error::Config("block boundaries must cover [0, n)".into()));
        }
        for w in starts.windows(2) {
            if w[1] <= w[0] + 1 {
                return Err(Error::Config(format!(
                    "degenerate block [{}, {}): need size >= 2",
                    w[0], w[1]
                )));
            }
        }
        assert!(
            m.is_diagonally_dominant(),
            "periodic tridiagonal system must be strictly diagonally dominant"
        );

        let mut blocks = Vec::with_capacity(p);
        let mut s_diag = Vec::with_capacity(p);
        let mut s_super = Vec::with_capacity(p);
        let mut s_sub = Vec::with_capacity(p);
        let mut iface_coeff = Vec::with_capacity(p);

        for bp in 0..p {
            let s = starts[bp];
            let iface = starts[bp + 1] - 1;
            let m_int = iface - s; // interior size, >= 1
            let a: Vec<f64> = m.a[s..iface].to_vec();
            let bb: Vec<f64> = m.b[s..iface - 1].to_vec();
            let cc: Vec<f64> = m.c[s + 1..iface].to_vec();
            let thomas = ThomasFactors::new(&a, &bb, &cc)?;

            let mut e_left = vec![0.0; m_int];
            e_left[0] = m.c[s];
            let col_left = thomas.solve(&e_left);

            let mut e_right = vec![0.0; m_int];
            e_right[m_int - 1] = m.b[iface - 1];
            let col_right = thomas.solve(&e_right);

            blocks.push(SchurBlock {
                thomas,
                col_left,
                col_right,
            });
            iface_coeff.push((m.c[iface], m.b[iface]));
        }

        // Assemble S = C - F B^{-1} E row by row.  Row p touches columns
        // p-1, p, p+1 (mod P); for P = 2 the off-diagonal entries alias and
        // the cyclic solver accumulates them.
        for bp in 0..p {
            let iface = starts[bp + 1] - 1;
            let (c_i, b_i) = iface_coeff[bp];
            let next = (bp + 1) % p;
            let diag = m.a[iface]
                - c_i * blocks[bp].col_right.last().unwrap()
                - b_i * blocks[next].col_left.first().unwrap();
            s_diag.push(diag);
            s_super.push(-b_i * blocks[next].col_right.first().unwrap());
            s_sub.push(-c_i * blocks[bp].col_left.last().unwrap());
        }
        let s = CyclicTridiagMatrix::new(s_diag, s_super, s_sub);
        assert!(
            s.is_diagonally_dominant(),
            "Schur complement lost diagonal dominance"
        );
        let interface = CyclicFactorization::new(&s)?;

        Ok(SchurFactorization {
            starts: starts.to_vec(),
            blocks,
            interface,
            iface_coeff,
        })
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn len(&self) -> usize {
        *self.starts.last().unwrap()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Global row range of block `p` (interface row included as the last row).
    pub fn block_range(&self, p: usize) -> (usize, usize) {
        (self.starts[p], self.starts[p + 1])
    }

    /// Phase 1 (per block, local): eliminate the interior, producing
    /// `f* = B_p^{-1} f_p` and the scalars sent to the line master.
    ///
    /// `rhs_block` covers the whole block including its interface row.
    pub fn block_eliminate(&self, p: usize, rhs_block: &[f64]) -> (Vec<f64>, BlockScalars) {
        let (s, e) = self.block_range(p);
        assert_eq!(rhs_block.len(), e - s);
        let g = rhs_block[e - s - 1];
        let mut f_star = rhs_block[..e - s - 1].to_vec();
        self.blocks[p].thomas.solve_into(&mut f_star);
        let scalars = BlockScalars {
            f_first: f_star[0],
            f_last: *f_star.last().unwrap(),
            g,
        };
        (f_star, scalars)
    }

    /// Phase 2 (on the line master): solve `S y = g - F f*` from the gathered
    /// scalars, one triple per block.
    pub fn solve_interface(&self, gathered: &[BlockScalars]) -> Vec<f64> {
        let p = self.num_blocks();
        assert_eq!(gathered.len(), p);
        let mut rhs: Vec<f64> = (0..p)
            .map(|bp| {
                let (c_i, b_i) = self.iface_coeff[bp];
                gathered[bp].g
                    - c_i * gathered[bp].f_last
                    - b_i * gathered[(bp + 1) % p].f_first
            })
            .collect();
        self.interface.solve_into(&mut rhs);
        rhs
    }

    /// Phase 3 (per block, local): correct the interior solution with the two
    /// interface values bounding this block and append the block's own
    /// interface unknown.
    pub fn block_correct(&self, p: usize, mut f_star: Vec<f64>, y_prev: f64, y_p: f64) -> Vec<f64> {
        let blk = &self.blocks[p];
        for ((x, l), r) in f_star.iter_mut().zip(&blk.col_left).zip(&blk.col_right) {
            *x -= y_prev * l + y_p * r;
        }
        f_star.push(y_p);
        f_star
    }

    /// Full in-process solve over per-block right-hand sides; the arithmetic
    /// the distributed path performs, with the messages short-circuited.
    pub fn solve_blocks(&self, rhs_blocks: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let p = self.num_blocks();
        assert_eq!(rhs_blocks.len(), p);
        let mut f_stars = Vec::with_capacity(p);
        let mut gathered = Vec::with_capacity(p);
        for bp in 0..p {
            let (f_star, sc) = self.block_eliminate(bp, &rhs_blocks[bp]);
            f_stars.push(f_star);
            gathered.push(sc);
        }
        let y = self.solve_interface(&gathered);
        f_stars
            .into_iter()
            .enumerate()
            .map(|(bp, f_star)| {
                let y_prev = y[(bp + p - 1) % p];
                self.block_correct(bp, f_star, y_prev, y[bp])
            })
            .collect()
    }
}

/// Factorize a periodic tridiagonal matrix over block boundaries
/// (`starts.len() == P + 1`).
pub fn schur_factorize(m: &CyclicTridiagMatrix, starts: &[usize]) -> Result<SchurFactorization> {
    SchurFactorization::new(m, starts)
}

/// Solve a partitioned periodic tridiagonal system.
///
/// With a single block there are no interface unknowns and the solve
/// delegates to [`cyclic_solve_serial`] exactly.
pub fn schur_solve(
    m: &CyclicTridiagMatrix,
    starts: &[usize],
    rhs_blocks: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>> {
    if starts.len() == 2 {
        let rhs = rhs_blocks.concat();
        return Ok(vec![cyclic_solve_serial(m, &rhs)?]);
    }
    Ok(schur_factorize(m, starts)?.solve_blocks(rhs_blocks))
}

/// Round-robin assignment of line masters within a worker row.
pub fn line_master(line_index: usize, row_size: usize) -> usize {
    line_index % row_size
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thomas_identity() {
        let a = vec![1.0; 5];
        let b = vec![0.0; 4];
        let c = vec![0.0; 4];
        let rhs = vec![3.0, -1.0, 0.5, 2.0, 7.0];
        assert_eq!(thomas_solve(&a, &b, &c, &rhs).unwrap(), rhs);
    }

    #[test]
    fn thomas_recovers_all_ones() {
        // rhs constructed as row sums so the exact solution is all ones.
        let a = vec![4.0, 5.0, 6.0, 4.5];
        let b = vec![-1.0, -1.5, -0.5];
        let c = vec![-2.0, -1.0, -1.0];
        let rhs = vec![4.0 - 1.0, 5.0 - 1.5 - 2.0, 6.0 - 0.5 - 1.0, 4.5 - 1.0];
        let x = thomas_solve(&a, &b, &c, &rhs).unwrap();
        for v in x {
            assert!((v - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn cyclic_identity_and_constant() {
        let m = CyclicTridiagMatrix::constant(6, 1.0, 0.0, 0.0);
        let rhs = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        assert_eq!(cyclic_solve_serial(&m, &rhs).unwrap(), rhs);

        // Constant coefficients with constant rhs give a constant solution.
        let m = CyclicTridiagMatrix::constant(8, 4.0, -1.0, -0.5);
        let rhs = vec![5.0; 8];
        let x = cyclic_solve_serial(&m, &rhs).unwrap();
        for v in x {
            assert!((v - 5.0 / (4.0 - 1.0 - 0.5)).abs() < 1e-13);
        }
    }

    #[test]
    fn cyclic_residual_small() {
        let m = CyclicTridiagMatrix::new(
            vec![3.0, 4.0, 5.0, 3.5, 4.2, 6.0],
            vec![-1.0, 1.2, -0.7, 0.3, -1.1, 0.9],
            vec![0.8, -1.3, 1.1, -0.2, 0.5, -1.4],
        );
        let rhs = vec![1.0, -2.0, 0.5, 3.0, -1.5, 0.25];
        let x = cyclic_solve_serial(&m, &rhs).unwrap();
        assert!(relative_residual(&m, &x, &rhs) < 1e-13);
    }

    #[test]
    fn cyclic_small_sizes() {
        let m = CyclicTridiagMatrix::new(vec![4.0, 5.0], vec![-1.0, 0.5], vec![0.5, -1.0]);
        let rhs = vec![2.0, 3.0];
        let x = cyclic_solve_serial(&m, &rhs).unwrap();
        assert!(relative_residual(&m, &x, &rhs) < 1e-14);

        let m3 = CyclicTridiagMatrix::new(
            vec![4.0, 5.0, 6.0],
            vec![-1.0, 0.5, 1.0],
            vec![0.5, -1.0, 2.0],
        );
        let rhs3 = vec![2.0, 3.0, -1.0];
        let x3 = cyclic_solve_serial(&m3, &rhs3).unwrap();
        assert!(relative_residual(&m3, &x3, &rhs3) < 1e-14);
    }

    #[test]
    fn schur_matches_serial_simple() {
        let m = CyclicTridiagMatrix::constant(8, 4.0, -1.0, -1.0);
        let rhs: Vec<f64> = (0..8).map(|i| (i as f64).sin() + 0.3).collect();
        let serial = cyclic_solve_serial(&m, &rhs).unwrap();
        for starts in [vec![0usize, 4, 8], vec![0, 2, 4, 6, 8]] {
            let blocks: Vec<Vec<f64>> = starts
                .windows(2)
                .map(|w| rhs[w[0]..w[1]].to_vec())
                .collect();
            let sol = schur_solve(&m, &starts, &blocks).unwrap();
            let flat: Vec<f64> = sol.concat();
            for (p, q) in flat.iter().zip(&serial) {
                assert!((p - q).abs() < 1e-12, "{p} vs {q}");
            }
        }
    }

    #[test]
    fn schur_constructed_all_ones() {
        // rhs = M * ones => solution is ones for any partition.
        let m = CyclicTridiagMatrix::new(
            vec![5.0, 4.0, 6.0, 4.4, 5.5, 4.8, 6.1, 5.2],
            vec![-1.0, 1.2, -0.7, 0.3, -1.1, 0.9, -0.8, 1.0],
            vec![0.8, -1.3, 1.1, -0.2, 0.5, -1.4, 0.6, -0.9],
        );
        let ones = vec![1.0; 8];
        let rhs = m.apply(&ones);
        for starts in [vec![0usize, 4, 8], vec![0, 2, 4, 6, 8]] {
            let blocks: Vec<Vec<f64>> = starts
                .windows(2)
                .map(|w| rhs[w[0]..w[1]].to_vec())
                .collect();
            let sol = schur_solve(&m, &starts, &blocks).unwrap();
            for v in sol.concat() {
                assert!((v - 1.0).abs() < 1e-12, "got {v}");
            }
        }
    }

    #[test]
    fn schur_single_block_delegates_to_serial() {
        let m = CyclicTridiagMatrix::constant(8, 4.0, -1.0, -1.0);
        let rhs: Vec<f64> = (0..8).map(|i| i as f64 - 3.5).collect();
        let serial = cyclic_solve_serial(&m, &rhs).unwrap();
        let sol = schur_solve(&m, &[0, 8], &[rhs.clone()]).unwrap();
        assert_eq!(sol[0], serial);
    }

    #[test]
    fn schur_rejects_degenerate_blocks() {
        let m = CyclicTridiagMatrix::constant(8, 4.0, -1.0, -1.0);
        assert!(schur_factorize(&m, &[0, 1, 8]).is_err());
        assert!(schur_factorize(&m, &[0, 4, 7]).is_err());
    }

    #[test]
    fn gm_viscous_matrix_schur_is_dominant() {
        // The constant-coefficient matrix the viscous sweep produces;
        // dominance of S is asserted inside the factorization.
        let n = 16;
        let kappa_h2 = 3.7; // mu dt / (2 rho h^2), arbitrary positive
        let m = CyclicTridiagMatrix::constant(n, 1.0 + 2.0 * kappa_h2, -kappa_h2, -kappa_h2);
        for p in [2usize, 4, 8] {
            let starts: Vec<usize> = (0..=p).map(|q| q * n / p).collect();
            let fact = schur_factorize(&m, &starts).unwrap();
            assert_eq!(fact.num_blocks(), p);
        }
    }

    #[test]
    fn round_robin_masters_are_even() {
        let mut counts = [0usize; 4];
        for line in 0..8 {
            counts[line_master(line, 4)] += 1;
        }
        assert_eq!(counts, [2, 2, 2, 2]);
    }
}
