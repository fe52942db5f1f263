//! Symmetric block-tridiagonal matrices: block LDLᵀ factorization, solves and
//! inertia (eigenvalue sign counts) by Sylvester's law, plus a one-row bordered
//! extension handled through its Schur complement.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Eigenvalue sign counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Inertia {
    pub negative: usize,
    pub zero: usize,
    pub positive: usize,
}

/// Relative pivot size below which the block factorization is abandoned in favour
/// of a dense eigen-decomposition.
const PIVOT_TOL: f64 = 1e-13;

#[derive(Debug, Clone, PartialEq)]
pub struct BlockTridiag {
    diag: Vec<DMatrix<f64>>,
    // upper[i] is block (i, i+1); block (i+1, i) is its transpose
    upper: Vec<DMatrix<f64>>,
}

impl BlockTridiag {
    pub fn new(diag: Vec<DMatrix<f64>>, upper: Vec<DMatrix<f64>>) -> Self {
        assert!(!diag.is_empty(), "empty block matrix");
        assert_eq!(upper.len() + 1, diag.len(), "block count mismatch");
        BlockTridiag { diag, upper }
    }

    pub fn zeros(blocks: usize, block_size: usize) -> Self {
        BlockTridiag::new(
            vec![DMatrix::zeros(block_size, block_size); blocks],
            vec![DMatrix::zeros(block_size, block_size); blocks.saturating_sub(1)],
        )
    }

    pub fn blocks(&self) -> usize {
        self.diag.len()
    }

    pub fn block_size(&self) -> usize {
        self.diag[0].nrows()
    }

    pub fn dim(&self) -> usize {
        self.blocks() * self.block_size()
    }

    pub fn diag_block(&self, i: usize) -> &DMatrix<f64> {
        &self.diag[i]
    }

    pub fn upper_block(&self, i: usize) -> &DMatrix<f64> {
        &self.upper[i]
    }

    pub fn diag_block_mut(&mut self, i: usize) -> &mut DMatrix<f64> {
        &mut self.diag[i]
    }

    pub fn upper_block_mut(&mut self, i: usize) -> &mut DMatrix<f64> {
        &mut self.upper[i]
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.block_size();
        let mut m = DMatrix::zeros(self.dim(), self.dim());
        for (i, d) in self.diag.iter().enumerate() {
            m.view_mut((i * n, i * n), (n, n)).copy_from(d);
        }
        for (i, u) in self.upper.iter().enumerate() {
            m.view_mut((i * n, (i + 1) * n), (n, n)).copy_from(u);
            m.view_mut(((i + 1) * n, i * n), (n, n))
                .copy_from(&u.transpose());
        }
        m
    }

    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        let n = self.block_size();
        let mut y = DVector::zeros(self.dim());
        for i in 0..self.blocks() {
            let mut yi = &self.diag[i] * x.rows(i * n, n);
            if i + 1 < self.blocks() {
                yi += &self.upper[i] * x.rows((i + 1) * n, n);
            }
            if i > 0 {
                yi += self.upper[i - 1].tr_mul(&x.rows((i - 1) * n, n));
            }
            y.rows_mut(i * n, n).copy_from(&yi);
        }
        y
    }

    /// Max absolute row sum; bounds the spectral radius.
    pub fn norm_inf(&self) -> f64 {
        let n = self.block_size();
        let mut best: f64 = 0.0;
        for i in 0..self.blocks() {
            for r in 0..n {
                let mut s: f64 = self.diag[i].row(r).iter().map(|v| v.abs()).sum();
                if i + 1 < self.blocks() {
                    s += self.upper[i].row(r).iter().map(|v| v.abs()).sum::<f64>();
                }
                if i > 0 {
                    s += self.upper[i - 1]
                        .column(r)
                        .iter()
                        .map(|v| v.abs())
                        .sum::<f64>();
                }
                best = best.max(s);
            }
        }
        best
    }

    /// `self + a * other` for matrices with the same block layout.
    pub fn add_scaled(&self, a: f64, other: &BlockTridiag) -> BlockTridiag {
        assert_eq!(self.blocks(), other.blocks());
        BlockTridiag {
            diag: self
                .diag
                .iter()
                .zip(&other.diag)
                .map(|(x, y)| x + y * a)
                .collect(),
            upper: self
                .upper
                .iter()
                .zip(&other.upper)
                .map(|(x, y)| x + y * a)
                .collect(),
        }
    }

    /// `self + shift * I`.
    pub fn shifted(&self, shift: f64) -> BlockTridiag {
        let n = self.block_size();
        BlockTridiag {
            diag: self
                .diag
                .iter()
                .map(|d| d + DMatrix::identity(n, n) * shift)
                .collect(),
            upper: self.upper.clone(),
        }
    }

    /// Block LDLᵀ of `self + shift * I`. Fails on a near-singular pivot.
    pub fn factor(&self, shift: f64) -> Result<BlockLdl> {
        let n = self.block_size();
        let scale = self.norm_inf().max(shift.abs()).max(f64::MIN_POSITIVE);
        let mut d_inv = Vec::with_capacity(self.blocks());
        let mut lower = Vec::with_capacity(self.blocks().saturating_sub(1));
        let mut inertia = Inertia::default();
        let mut pivot = &self.diag[0] + DMatrix::identity(n, n) * shift;
        for i in 0..self.blocks() {
            let eig = SymmetricEigen::new(pivot.clone());
            let mut inv_vals = DVector::zeros(n);
            for (k, &lam) in eig.eigenvalues.iter().enumerate() {
                if !lam.is_finite() {
                    return Err(Error::NonFinite("pivot eigenvalue".into()));
                }
                if lam.abs() <= PIVOT_TOL * scale {
                    return Err(Error::Singular(format!("pivot block {i} is near-singular")));
                }
                if lam < 0.0 {
                    inertia.negative += 1;
                } else {
                    inertia.positive += 1;
                }
                inv_vals[k] = 1.0 / lam;
            }
            let dinv = &eig.eigenvectors
                * DMatrix::from_diagonal(&inv_vals)
                * eig.eigenvectors.transpose();
            if i + 1 < self.blocks() {
                // L_{i+1,i} = A_{i+1,i} D_i^{-1}
                let l = self.upper[i].tr_mul(&dinv);
                pivot = &self.diag[i + 1] + DMatrix::identity(n, n) * shift - &l * &self.upper[i];
                lower.push(l);
            }
            d_inv.push(dinv);
        }
        Ok(BlockLdl {
            d_inv,
            lower,
            upper: self.upper.clone(),
            inertia,
        })
    }

    /// Number of eigenvalues strictly below `lambda`.
    pub fn count_below(&self, lambda: f64) -> usize {
        match self.factor(-lambda) {
            Ok(f) => f.inertia.negative,
            Err(_) => dense_count_below(&self.to_dense(), lambda),
        }
    }

    /// Inertia with eigenvalues in `[-eps, eps]` counted as zero.
    pub fn inertia(&self, eps: f64) -> Inertia {
        let neg = self.count_below(-eps);
        let below_pos = if eps > 0.0 {
            self.count_below(eps)
        } else {
            neg
        };
        Inertia {
            negative: neg,
            zero: below_pos - neg,
            positive: self.dim() - below_pos,
        }
    }

    pub fn solve(&self, rhs: &DVector<f64>, shift: f64) -> Result<DVector<f64>> {
        match self.factor(shift) {
            Ok(f) => Ok(f.solve(rhs)),
            Err(Error::Singular(_)) => {
                let m = self.to_dense() + DMatrix::identity(self.dim(), self.dim()) * shift;
                dense_solve(m, rhs)
            }
            Err(e) => Err(e),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BlockLdl {
    d_inv: Vec<DMatrix<f64>>,
    lower: Vec<DMatrix<f64>>,
    upper: Vec<DMatrix<f64>>,
    pub inertia: Inertia,
}

impl BlockLdl {
    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let n = self.d_inv[0].nrows();
        let nb = self.d_inv.len();
        let mut z: Vec<DVector<f64>> = Vec::with_capacity(nb);
        for i in 0..nb {
            let mut zi = rhs.rows(i * n, n).into_owned();
            if i > 0 {
                zi -= &self.lower[i - 1] * &z[i - 1];
            }
            z.push(zi);
        }
        let mut x = DVector::zeros(nb * n);
        let mut next: Option<DVector<f64>> = None;
        for i in (0..nb).rev() {
            let mut xi = &self.d_inv[i] * &z[i];
            if let Some(xn) = &next {
                xi -= &self.d_inv[i] * (&self.upper[i] * xn);
            }
            x.rows_mut(i * n, n).copy_from(&xi);
            next = Some(xi);
        }
        x
    }
}

pub fn dense_count_below(m: &DMatrix<f64>, lambda: f64) -> usize {
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .filter(|&&v| v < lambda)
        .count()
}

/// Inertia by full symmetric eigen-decomposition.
pub fn dense_inertia(m: &DMatrix<f64>, eps: f64) -> Inertia {
    let eig = SymmetricEigen::new(m.clone());
    let mut out = Inertia::default();
    for &v in eig.eigenvalues.iter() {
        if v < -eps {
            out.negative += 1;
        } else if v <= eps {
            out.zero += 1;
        } else {
            out.positive += 1;
        }
    }
    out
}

pub fn dense_solve(m: DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let x = m
        .lu()
        .solve(rhs)
        .ok_or_else(|| Error::Singular("dense system is singular".into()))?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("dense solve".into()));
    }
    Ok(x)
}

/// Symmetric matrix `[[A, b], [bᵀ, c]]` with block-tridiagonal `A`.
#[derive(Debug, Clone)]
pub struct Bordered {
    pub a: BlockTridiag,
    pub b: DVector<f64>,
    pub c: f64,
}

impl Bordered {
    pub fn dim(&self) -> usize {
        self.a.dim() + 1
    }

    pub fn norm_inf(&self) -> f64 {
        let bmax = self.b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        (self.a.norm_inf() + bmax).max(self.c.abs() + self.b.iter().map(|v| v.abs()).sum::<f64>())
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let m = self.a.dim();
        let mut d = DMatrix::zeros(m + 1, m + 1);
        d.view_mut((0, 0), (m, m)).copy_from(&self.a.to_dense());
        d.view_mut((0, m), (m, 1)).copy_from(&self.b);
        d.view_mut((m, 0), (1, m)).copy_from(&self.b.transpose());
        d[(m, m)] = self.c;
        d
    }

    /// Number of eigenvalues strictly below `lambda`, by the Haynsworth inertia
    /// additivity `In(K) = In(A) + In(S)` with Schur complement `S`.
    pub fn count_below(&self, lambda: f64) -> usize {
        let scale = self.norm_inf().max(f64::MIN_POSITIVE);
        if let Ok(f) = self.a.factor(-lambda) {
            let y = f.solve(&self.b);
            let s = self.c - lambda - self.b.dot(&y);
            if s.is_finite() && s.abs() > PIVOT_TOL * scale {
                return f.inertia.negative + usize::from(s < 0.0);
            }
        }
        dense_count_below(&self.to_dense(), lambda)
    }

    pub fn inertia(&self, eps: f64) -> Inertia {
        let neg = self.count_below(-eps);
        let below_pos = if eps > 0.0 {
            self.count_below(eps)
        } else {
            neg
        };
        Inertia {
            negative: neg,
            zero: below_pos - neg,
            positive: self.dim() - below_pos,
        }
    }

    /// Solves `(K + shift I) [x; t] = [rx; rt]`.
    pub fn solve(&self, rx: &DVector<f64>, rt: f64, shift: f64) -> Result<(DVector<f64>, f64)> {
        let scale = self.norm_inf().max(f64::MIN_POSITIVE);
        if let Ok(f) = self.a.factor(shift) {
            let y = f.solve(&self.b);
            let z = f.solve(rx);
            let s = self.c + shift - self.b.dot(&y);
            if s.is_finite() && s.abs() > PIVOT_TOL * scale {
                let t = (rt - self.b.dot(&z)) / s;
                let x = z - y * t;
                return Ok((x, t));
            }
        }
        let m = self.dim();
        let mut rhs = DVector::zeros(m);
        rhs.rows_mut(0, m - 1).copy_from(rx);
        rhs[m - 1] = rt;
        let sol = dense_solve(self.to_dense() + DMatrix::identity(m, m) * shift, &rhs)?;
        Ok((sol.rows(0, m - 1).into_owned(), sol[m - 1]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tridiag(rng: &mut ChaCha8Rng, blocks: usize, n: usize) -> BlockTridiag {
        let mut sym = |shift: f64| {
            let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            (&m + m.transpose()) * 0.5 + DMatrix::identity(n, n) * shift
        };
        let diag = (0..blocks).map(|_| sym(0.3)).collect();
        let upper = (0..blocks - 1)
            .map(|_| DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0)))
            .collect();
        BlockTridiag::new(diag, upper)
    }

    #[test]
    fn factorized_inertia_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in 1..4 {
            for _ in 0..20 {
                let a = random_tridiag(&mut rng, 9, n);
                let dense = dense_inertia(&a.to_dense(), 0.0);
                assert_eq!(a.inertia(0.0), dense);
            }
        }
    }

    #[test]
    fn solve_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_tridiag(&mut rng, 12, 2);
        let x = DVector::from_fn(a.dim(), |i, _| (i as f64).sin());
        let b = a.mul_vec(&x);
        let y = a.solve(&b, 0.0).unwrap();
        assert!((y - &x).norm() < 1e-9 * x.norm());
        assert!((a.to_dense() * &x - b).norm() < 1e-12);
    }

    #[test]
    fn bordered_inertia_and_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let a = random_tridiag(&mut rng, 7, 2);
            let b = DVector::from_fn(a.dim(), |_, _| rng.random_range(-1.0..1.0));
            let k = Bordered {
                a,
                b,
                c: rng.random_range(-2.0..2.0),
            };
            assert_eq!(k.inertia(0.0), dense_inertia(&k.to_dense(), 0.0));
            let rx = DVector::from_fn(k.dim() - 1, |i, _| i as f64);
            let (x, t) = k.solve(&rx, 1.0, 0.0).unwrap();
            let mut full = DVector::zeros(k.dim());
            full.rows_mut(0, k.dim() - 1).copy_from(&x);
            full[k.dim() - 1] = t;
            let r = k.to_dense() * full;
            assert!((r.rows(0, k.dim() - 1) - rx).norm() < 1e-8);
            assert!((r[k.dim() - 1] - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn singular_pivot_falls_back() {
        // First pivot exactly zero; the matrix itself is non-singular.
        let a = BlockTridiag::new(
            vec![
                DMatrix::from_element(1, 1, 0.0),
                DMatrix::from_element(1, 1, 1.0),
            ],
            vec![DMatrix::from_element(1, 1, 1.0)],
        );
        assert!(a.factor(0.0).is_err());
        assert_eq!(
            a.inertia(0.0),
            Inertia {
                negative: 1,
                zero: 0,
                positive: 1
            }
        );
        let x = a.solve(&DVector::from_vec(vec![1.0, 2.0]), 0.0).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 1.0).abs() < 1e-12);
    }
}
