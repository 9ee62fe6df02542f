//! Dense reference linear algebra used to certify spectral approximation
//! claims on small instances.
//!
//! Everything here is cubic and capped at [`ORACLE_MAX_DIM`] scalar rows.

use crate::block_core::{BlockSparseMatrix, BlockVector};
use crate::error::{Error, Result};
use crate::linalg::{self, C64, ZERO};

/// Largest scalar dimension `n * r` the oracle accepts.
pub const ORACLE_MAX_DIM: usize = 3000;

/// Dense Hermitian matrix of scalar dimension `dim = n * r`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseHermitian {
    dim: usize,
    r: usize,
    a: Vec<C64>,
}

fn check_dim(dim: usize) -> Result<()> {
    if dim > ORACLE_MAX_DIM {
        return Err(Error::SizeLimit {
            what: "oracle dimension",
            size: dim,
            limit: ORACLE_MAX_DIM,
        });
    }
    Ok(())
}

impl DenseHermitian {
    /// Wrap a dense matrix, rejecting inputs that are not Hermitian to
    /// `1e-12` relative and storing the symmetrized average.
    pub fn new(dim: usize, r: usize, a: Vec<C64>) -> Result<Self> {
        check_dim(dim)?;
        if a.len() != dim * dim || r == 0 || !dim.is_multiple_of(r) {
            return Err(Error::Dimension {
                expected: dim * dim,
                got: a.len(),
            });
        }
        let scale = a.iter().map(|z| z.norm()).fold(0.0, f64::max);
        for i in 0..dim {
            for j in 0..=i {
                if (a[i * dim + j] - a[j * dim + i].conj()).norm() > 1e-12 * scale.max(1e-300) {
                    return Err(Error::InvalidInput(format!("matrix is not Hermitian at ({i}, {j})")));
                }
            }
        }
        Ok(Self::symmetrized(dim, r, a))
    }

    /// Wrap `(a + a^*)/2` without checking.
    pub fn symmetrized(dim: usize, r: usize, mut a: Vec<C64>) -> Self {
        for i in 0..dim {
            a[i * dim + i].im = 0.0;
            for j in 0..i {
                let v = (a[i * dim + j] + a[j * dim + i].conj()) * 0.5;
                a[i * dim + j] = v;
                a[j * dim + i] = v.conj();
            }
        }
        DenseHermitian { dim, r, a }
    }

    pub fn zeros(n: usize, r: usize) -> Self {
        DenseHermitian {
            dim: n * r,
            r,
            a: vec![ZERO; n * r * n * r],
        }
    }

    pub fn identity(n: usize, r: usize) -> Self {
        DenseHermitian {
            dim: n * r,
            r,
            a: linalg::identity(n * r),
        }
    }

    pub fn from_sparse(m: &BlockSparseMatrix) -> Result<Self> {
        let r = m.r();
        let dim = m.n() * r;
        check_dim(dim)?;
        let mut a = vec![ZERO; dim * dim];
        for i in 0..m.n() {
            for (j, b) in m.row(i) {
                for p in 0..r {
                    for q in 0..r {
                        a[(i * r + p) * dim + j * r + q] = b[p * r + q];
                    }
                }
            }
        }
        Ok(DenseHermitian { dim, r, a })
    }

    /// Materialize a Hermitian linear operator by applying it to the unit
    /// vectors. The result is symmetrized; [`dense_operator_raw`] keeps the
    /// raw columns for symmetry checks.
    pub fn from_operator(n: usize, r: usize, f: impl FnMut(&BlockVector) -> Result<BlockVector>) -> Result<Self> {
        let a = dense_operator_raw(n, r, f)?;
        Ok(Self::symmetrized(n * r, r, a))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn n_blocks(&self) -> usize {
        self.dim / self.r
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.a
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.a[i * self.dim + j]
    }

    fn scalar_index(&self, blocks: &[usize]) -> Vec<usize> {
        let r = self.r;
        blocks.iter().flat_map(|&b| (0..r).map(move |p| b * r + p)).collect()
    }

    /// Dense `M[rows, cols]` over block index lists (not necessarily Hermitian).
    pub fn block_select(&self, rows: &[usize], cols: &[usize]) -> Vec<C64> {
        let ri = self.scalar_index(rows);
        let ci = self.scalar_index(cols);
        let mut out = Vec::with_capacity(ri.len() * ci.len());
        for &i in &ri {
            for &j in &ci {
                out.push(self.a[i * self.dim + j]);
            }
        }
        out
    }

    pub fn principal(&self, blocks: &[usize]) -> DenseHermitian {
        let d = blocks.len() * self.r;
        DenseHermitian {
            dim: d,
            r: self.r,
            a: self.block_select(blocks, blocks),
        }
    }

    pub fn add(&self, o: &DenseHermitian) -> DenseHermitian {
        DenseHermitian {
            dim: self.dim,
            r: self.r,
            a: self.a.iter().zip(&o.a).map(|(x, y)| x + y).collect(),
        }
    }

    pub fn sub(&self, o: &DenseHermitian) -> DenseHermitian {
        DenseHermitian {
            dim: self.dim,
            r: self.r,
            a: self.a.iter().zip(&o.a).map(|(x, y)| x - y).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> DenseHermitian {
        DenseHermitian {
            dim: self.dim,
            r: self.r,
            a: self.a.iter().map(|x| x * s).collect(),
        }
    }

    /// `self * o * self`, which is Hermitian whenever both factors are.
    pub fn sandwich(&self, o: &DenseHermitian) -> DenseHermitian {
        let d = self.dim;
        let t = linalg::matmul(d, d, d, &self.a, &o.a);
        let s = linalg::matmul(d, d, d, &t, &self.a);
        Self::symmetrized(d, self.r, s)
    }

    /// `self^k` for a positive integer power.
    pub fn pow(&self, k: u32) -> DenseHermitian {
        let d = self.dim;
        let mut acc = self.a.clone();
        for _ in 1..k {
            acc = linalg::matmul(d, d, d, &acc, &self.a);
        }
        Self::symmetrized(d, self.r, acc)
    }

    pub fn matvec(&self, x: &[C64]) -> Vec<C64> {
        let d = self.dim;
        (0..d)
            .map(|i| linalg::dot_plain(&self.a[i * d..(i + 1) * d], x))
            .collect()
    }

    /// Largest absolute eigenvalue.
    pub fn norm(&self) -> f64 {
        let ev = self.eigenvalues();
        ev.iter().map(|x| x.abs()).fold(0.0, f64::max)
    }

    /// Eigenvalues, ascending.
    pub fn eigenvalues(&self) -> Vec<f64> {
        linalg::eigvalsh(self.dim, &self.a)
    }

    /// Eigenvalues (ascending) and column eigenvectors.
    pub fn eigh(&self) -> (Vec<f64>, Vec<C64>) {
        linalg::jacobi_eigh(self.dim, &self.a)
    }

    /// Dense inverse through Cholesky.
    pub fn inverse(&self) -> Result<DenseHermitian> {
        let ch = linalg::Cholesky::factor(self.dim, &self.a, 1e-14)?;
        let d = self.dim;
        let mut inv = vec![ZERO; d * d];
        let mut e = vec![ZERO; d];
        for j in 0..d {
            e.iter_mut().for_each(|z| *z = ZERO);
            e[j] = C64::new(1.0, 0.0);
            let col = ch.solve(&e);
            for i in 0..d {
                inv[i * d + j] = col[i];
            }
        }
        Ok(Self::symmetrized(d, self.r, inv))
    }

    /// Moore–Penrose pseudoinverse, dropping eigenvalues below
    /// `1e-10 * lambda_max` in magnitude.
    pub fn pseudoinverse(&self) -> DenseHermitian {
        let (ev, v) = self.eigh();
        let d = self.dim;
        let top = ev.iter().map(|x| x.abs()).fold(0.0, f64::max);
        let mut out = vec![ZERO; d * d];
        for (k, &l) in ev.iter().enumerate() {
            if l.abs() <= 1e-10 * top {
                continue;
            }
            let s = 1.0 / l;
            for i in 0..d {
                let vik = v[i * d + k] * s;
                for j in 0..d {
                    out[i * d + j] += vik * v[j * d + k].conj();
                }
            }
        }
        Self::symmetrized(d, self.r, out)
    }

    /// Orthonormal basis (columns, `dim x k` row-major) of the eigenvectors
    /// with eigenvalue magnitude below `rel * lambda_max`.
    pub fn null_basis(&self, rel: f64) -> (usize, Vec<C64>) {
        let (ev, v) = self.eigh();
        let d = self.dim;
        let top = ev.iter().map(|x| x.abs()).fold(0.0, f64::max);
        let ks: Vec<usize> = (0..d).filter(|&k| ev[k].abs() <= rel * top).collect();
        let mut out = vec![ZERO; d * ks.len()];
        for i in 0..d {
            for (c, &k) in ks.iter().enumerate() {
                out[i * ks.len() + c] = v[i * d + k];
            }
        }
        (ks.len(), out)
    }

    /// `self + s * N N^*` for a `dim x k` basis `N`.
    pub fn add_projector(&self, s: f64, k: usize, basis: &[C64]) -> DenseHermitian {
        let d = self.dim;
        let mut a = self.a.clone();
        for i in 0..d {
            for j in 0..d {
                let mut acc = ZERO;
                for c in 0..k {
                    acc += basis[i * k + c] * basis[j * k + c].conj();
                }
                a[i * d + j] += acc * s;
            }
        }
        Self::symmetrized(d, self.r, a)
    }
}

/// Apply `f` to every unit vector and collect the columns (row-major).
pub fn dense_operator_raw(
    n: usize,
    r: usize,
    mut f: impl FnMut(&BlockVector) -> Result<BlockVector>,
) -> Result<Vec<C64>> {
    let d = n * r;
    check_dim(d)?;
    let mut a = vec![ZERO; d * d];
    let mut e = BlockVector::zeros(n, r);
    for j in 0..d {
        e.data[j] = C64::new(1.0, 0.0);
        let col = f(&e)?;
        e.data[j] = ZERO;
        if col.data.len() != d {
            return Err(Error::Dimension {
                expected: d,
                got: col.data.len(),
            });
        }
        for i in 0..d {
            a[i * d + j] = col.data[i];
        }
    }
    Ok(a)
}

/// `M[C,C] - M[C,F] M[F,F]^{-1} M[F,C]`, where `F` lists block indices and
/// `C` is the complement in increasing order.
pub fn dense_schur(m: &DenseHermitian, f: &[usize]) -> Result<DenseHermitian> {
    let nb = m.n_blocks();
    let mut in_f = vec![false; nb];
    for &i in f {
        if i >= nb {
            return Err(Error::Dimension { expected: nb, got: i });
        }
        in_f[i] = true;
    }
    let c: Vec<usize> = (0..nb).filter(|&i| !in_f[i]).collect();
    if f.is_empty() {
        return Ok(m.clone());
    }
    let mff = m.principal(f);
    let ch = linalg::Cholesky::factor(mff.dim, &mff.a, 1e-12)
        .map_err(|e| Error::Singular(format!("M[F,F] is not positive definite: {e}")))?;
    let dc = c.len() * m.r;
    let df = mff.dim;
    let mfc = m.block_select(f, &c);
    let mut out = m.block_select(&c, &c);
    // columns of M[F,F]^{-1} M[F,C]
    let mut col = vec![ZERO; df];
    let mut sol = vec![ZERO; df * dc];
    for j in 0..dc {
        for i in 0..df {
            col[i] = mfc[i * dc + j];
        }
        let x = ch.solve(&col);
        for i in 0..df {
            sol[i * dc + j] = x[i];
        }
    }
    // out -= M[C,F] * sol, with M[C,F] = M[F,C]^*
    for i in 0..dc {
        for j in 0..dc {
            let mut acc = ZERO;
            for k in 0..df {
                acc += mfc[k * dc + i].conj() * sol[k * dc + j];
            }
            out[i * dc + j] -= acc;
        }
    }
    Ok(DenseHermitian::symmetrized(dc, m.r, out))
}

/// Generalized eigenvalues of the pencil `(A, B)` with `B` positive definite.
pub fn pencil_eigenvalues(a: &DenseHermitian, b: &DenseHermitian) -> Result<Vec<f64>> {
    if a.dim != b.dim {
        return Err(Error::Dimension {
            expected: b.dim,
            got: a.dim,
        });
    }
    let l = linalg::cholesky_lower(b.dim, &b.a).map_err(|e| Error::InvalidInput(format!("second argument: {e}")))?;
    let c = linalg::congruence_inv(b.dim, &l, &a.a);
    let c = DenseHermitian::symmetrized(b.dim, b.r, c);
    Ok(c.eigenvalues())
}

/// Values of [`approx_epsilon`] below this are roundoff of the dense pencil
/// and reported as exactly zero.
pub const EPSILON_FLOOR: f64 = 1e-12;

/// Smallest `eps` with `e^{-eps} B <= A <= e^{eps} B`.
pub fn approx_epsilon(a: &DenseHermitian, b: &DenseHermitian) -> Result<f64> {
    let ev = pencil_eigenvalues(a, b)?;
    if ev.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::InvalidInput("first argument is not positive definite".into()));
    }
    let e = ev.iter().map(|l| l.ln().abs()).fold(0.0, f64::max);
    Ok(if e < EPSILON_FLOOR { 0.0 } else { e })
}

/// [`approx_epsilon`] restricted to the range of `B`, for PSD pairs sharing
/// a null space. The null space is taken from `B` (eigenvalues below
/// `1e-10 * lambda_max`) and replaced by the identity in both matrices.
pub fn approx_epsilon_on_range(a: &DenseHermitian, b: &DenseHermitian) -> Result<f64> {
    let (k, basis) = b.null_basis(1e-10);
    if k == 0 {
        return approx_epsilon(a, b);
    }
    let s = b.norm();
    // A must annihilate the same subspace, otherwise no finite eps exists.
    let an = a.norm();
    for c in 0..k {
        let v: Vec<C64> = (0..a.dim).map(|i| basis[i * k + c]).collect();
        let av = a.matvec(&v);
        if linalg::vec_norm(&av) > 1e-8 * an.max(s) {
            return Ok(f64::INFINITY);
        }
    }
    approx_epsilon(&a.add_projector(s, k, &basis), &b.add_projector(s, k, &basis))
}

/// `A <= B` in the Loewner order, up to `tol * ||B||`.
pub fn loewner_leq(a: &DenseHermitian, b: &DenseHermitian, tol: f64) -> bool {
    let diff = b.sub(a);
    let lo = diff.eigenvalues().first().copied().unwrap_or(0.0);
    lo >= -tol * b.norm()
}

/// Smallest eigenvalue above `1e-10 * lambda_max`.
pub fn min_nonzero_eig(m: &DenseHermitian) -> Result<f64> {
    let ev = m.eigenvalues();
    let top = ev.last().copied().unwrap_or(0.0);
    if !(top > 0.0) {
        return Err(Error::Degenerate("matrix has no positive eigenvalue".into()));
    }
    Ok(ev
        .into_iter()
        .find(|&l| l > 1e-10 * top)
        .expect("top eigenvalue qualifies"))
}

/// Finite condition number `lambda_max / min_nonzero_eig`.
pub fn condition_number(m: &DenseHermitian) -> Result<f64> {
    let ev = m.eigenvalues();
    let top = ev.last().copied().unwrap_or(0.0);
    let mu = min_nonzero_eig(m)?;
    Ok(top / mu)
}

/// Solve `M x = b` with pivoted dense Cholesky.
pub fn dense_solve(m: &DenseHermitian, b: &[C64]) -> Result<Vec<C64>> {
    if b.len() != m.dim {
        return Err(Error::Dimension {
            expected: m.dim,
            got: b.len(),
        });
    }
    let ch = linalg::Cholesky::factor(m.dim, &m.a, 1e-14)?;
    Ok(ch.solve(b))
}
