//! Schur complement chains as approximate inverses, iterative refinement,
//! and wrappers for singular systems.
//!
//! A chain stores, per level, the matrix `M^(i-1)`, the split `F_i / C_i`,
//! and a Jacobi operator `Z^(i)` for `M^(i-1)[F_i,F_i]`; the last Schur
//! complement is solved densely.

use crate::block_core::{BlockSparseMatrix, BlockVector, RectBlockMatrix};
use crate::error::{Error, Result};
use crate::jacobi::JacobiOperator;
use crate::linalg::{self, C64, ZERO};

/// Default bound on the number of blocks left for the dense terminal solve.
pub const DEFAULT_TERMINAL_SIZE: usize = 1000;

/// Largest scalar dimension accepted by the dense terminal factorization.
pub const TERMINAL_MAX_DIM: usize = 8192;

/// Anything that maps block vectors to block vectors linearly.
pub trait LinearOperator {
    /// Number of block rows.
    fn n(&self) -> usize;
    fn r(&self) -> usize;
    fn apply(&self, b: &BlockVector) -> Result<BlockVector>;

    fn check(&self, b: &BlockVector) -> Result<()> {
        if b.n != self.n() || b.r != self.r() {
            return Err(Error::Dimension {
                expected: self.n() * self.r(),
                got: b.n * b.r,
            });
        }
        Ok(())
    }
}

impl LinearOperator for BlockSparseMatrix {
    fn n(&self) -> usize {
        BlockSparseMatrix::n(self)
    }
    fn r(&self) -> usize {
        BlockSparseMatrix::r(self)
    }
    fn apply(&self, b: &BlockVector) -> Result<BlockVector> {
        self.matvec(b)
    }
}

impl LinearOperator for JacobiOperator {
    fn n(&self) -> usize {
        JacobiOperator::n(self)
    }
    fn r(&self) -> usize {
        JacobiOperator::r(self)
    }
    fn apply(&self, b: &BlockVector) -> Result<BlockVector> {
        JacobiOperator::apply(self, b)
    }
}

/// Exact solver through a pivoted dense Cholesky factorization.
#[derive(Clone, Debug)]
pub struct DenseCholeskySolver {
    n: usize,
    r: usize,
    chol: linalg::Cholesky,
}

impl DenseCholeskySolver {
    pub fn new(m: &BlockSparseMatrix) -> Result<Self> {
        let (n, r) = (m.n(), m.r());
        let dim = n * r;
        if dim > TERMINAL_MAX_DIM {
            return Err(Error::SizeLimit {
                what: "dense factorization dimension",
                size: dim,
                limit: TERMINAL_MAX_DIM,
            });
        }
        let mut a = vec![ZERO; dim * dim];
        for i in 0..n {
            for (j, b) in m.row(i) {
                for p in 0..r {
                    for q in 0..r {
                        a[(i * r + p) * dim + j * r + q] = b[p * r + q];
                    }
                }
            }
        }
        let chol = linalg::Cholesky::factor(dim, &a, 1e-14)?;
        Ok(DenseCholeskySolver { n, r, chol })
    }

    pub fn factor(&self) -> &linalg::Cholesky {
        &self.chol
    }
}

impl LinearOperator for DenseCholeskySolver {
    fn n(&self) -> usize {
        self.n
    }
    fn r(&self) -> usize {
        self.r
    }
    fn apply(&self, b: &BlockVector) -> Result<BlockVector> {
        self.check(b)?;
        Ok(BlockVector {
            n: self.n,
            r: self.r,
            data: if self.n == 0 {
                Vec::new()
            } else {
                self.chol.solve(&b.data)
            },
        })
    }
}

/// One elimination level of a chain.
#[derive(Clone, Debug)]
pub struct ChainLevel {
    /// `M^(i-1)` over the level's index set.
    pub m: BlockSparseMatrix,
    /// Eliminated indices (local to the level), increasing.
    pub f: Vec<usize>,
    /// Kept indices (local to the level), increasing.
    pub c: Vec<usize>,
    pub z: JacobiOperator,
    pub epsilon: f64,
    /// Original row label of every local index.
    pub labels: Vec<usize>,
    m_fc: RectBlockMatrix,
}

impl ChainLevel {
    pub fn new(
        m: BlockSparseMatrix,
        f: Vec<usize>,
        z: JacobiOperator,
        epsilon: f64,
        labels: Vec<usize>,
    ) -> Result<Self> {
        let n = m.n();
        let mut in_f = vec![false; n];
        for &i in &f {
            if i >= n || in_f[i] {
                return Err(Error::InvalidInput(format!("bad eliminated index {i}")));
            }
            in_f[i] = true;
        }
        if z.n() != f.len() || z.r() != m.r() || labels.len() != n {
            return Err(Error::InvalidInput("chain level parts disagree in size".into()));
        }
        let c: Vec<usize> = (0..n).filter(|&i| !in_f[i]).collect();
        let m_fc = m.rect_submatrix(&f, &c);
        Ok(ChainLevel {
            m,
            f,
            c,
            z,
            epsilon,
            labels,
            m_fc,
        })
    }

    pub fn m_fc(&self) -> &RectBlockMatrix {
        &self.m_fc
    }

    /// Original labels of the eliminated rows.
    pub fn global_f(&self) -> Vec<usize> {
        self.f.iter().map(|&i| self.labels[i]).collect()
    }
}

/// Sequence of levels plus the dense terminal solve.
#[derive(Clone, Debug)]
pub struct SchurComplementChain {
    pub levels: Vec<ChainLevel>,
    /// Final Schur complement `M^(d)`.
    pub terminal_matrix: BlockSparseMatrix,
    pub terminal_labels: Vec<usize>,
    terminal: DenseCholeskySolver,
}

impl SchurComplementChain {
    pub fn new(
        levels: Vec<ChainLevel>,
        terminal_matrix: BlockSparseMatrix,
        terminal_labels: Vec<usize>,
    ) -> Result<Self> {
        for w in levels.windows(2) {
            if w[0].c.len() != w[1].m.n() {
                return Err(Error::InvalidInput("chain levels do not nest".into()));
            }
        }
        if let Some(last) = levels.last() {
            if last.c.len() != terminal_matrix.n() {
                return Err(Error::InvalidInput("terminal size does not match last level".into()));
            }
        }
        let terminal = DenseCholeskySolver::new(&terminal_matrix)?;
        Ok(SchurComplementChain {
            levels,
            terminal_matrix,
            terminal_labels,
            terminal,
        })
    }

    /// A chain with no elimination: just the dense solve.
    pub fn dense(m: BlockSparseMatrix) -> Result<Self> {
        let labels = (0..m.n()).collect();
        Self::new(Vec::new(), m, labels)
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    /// Stored blocks over all level matrices and the terminal matrix.
    pub fn nnz_blocks(&self) -> usize {
        self.levels.iter().map(|l| l.m.nnz_blocks()).sum::<usize>() + self.terminal_matrix.nnz_blocks()
    }
}

impl LinearOperator for SchurComplementChain {
    fn n(&self) -> usize {
        self.levels.first().map(|l| l.m.n()).unwrap_or(self.terminal_matrix.n())
    }
    fn r(&self) -> usize {
        self.terminal_matrix.r()
    }
    fn apply(&self, b: &BlockVector) -> Result<BlockVector> {
        apply_chain(self, b)
    }
}

/// Forward sweep, dense terminal solve, backward sweep.
pub fn apply_chain(chain: &SchurComplementChain, b: &BlockVector) -> Result<BlockVector> {
    chain.check(b)?;
    let mut cur = b.clone();
    let mut xf_all = Vec::with_capacity(chain.levels.len());
    for lvl in &chain.levels {
        let bf = cur.gather(&lvl.f);
        let xf = lvl.z.apply(&bf)?;
        let bc = cur.gather(&lvl.c);
        let t = lvl.m_fc.matvec_adjoint(&xf);
        cur = bc.sub(&t);
        xf_all.push(xf);
    }
    let mut x = chain.terminal.apply(&cur)?;
    for (lvl, mut xf) in chain.levels.iter().zip(xf_all).rev() {
        let t = lvl.m_fc.matvec(&x);
        let zt = lvl.z.apply(&t)?;
        xf.axpy(C64::new(-1.0, 0.0), &zt);
        let mut full = BlockVector::zeros(lvl.m.n(), x.r);
        full.scatter(&lvl.f, &xf);
        full.scatter(&lvl.c, &x);
        x = full;
    }
    Ok(x)
}

/// `sum_i 2 eps_i`, the chain's guaranteed approximation quality.
pub fn chain_error_bound(chain: &SchurComplementChain) -> f64 {
    chain.levels.iter().map(|l| 2.0 * l.epsilon).sum()
}

/// Outcome of an iterative solve.
#[derive(Clone, Debug)]
pub struct RefineResult {
    pub x: BlockVector,
    pub iterations: usize,
    /// Relative residual `||b - M x|| / ||b||` after each iteration.
    pub history: Vec<f64>,
}

fn residual(m: &dyn LinearOperator, b: &BlockVector, x: &BlockVector) -> Result<BlockVector> {
    Ok(b.sub(&m.apply(x)?))
}

/// Preconditioned Richardson iteration `x <- x + W (b - M x)` from `x = 0`.
pub fn refine(
    solver: &dyn LinearOperator,
    m: &dyn LinearOperator,
    b: &BlockVector,
    tol: f64,
    max_iters: usize,
) -> Result<RefineResult> {
    m.check(b)?;
    let bn = b.norm();
    let mut x = BlockVector::zeros(b.n, b.r);
    let mut history = Vec::new();
    if bn == 0.0 {
        return Ok(RefineResult {
            x,
            iterations: 0,
            history,
        });
    }
    let mut res = b.clone();
    for it in 1..=max_iters {
        let dx = solver.apply(&res)?;
        x.axpy(C64::new(1.0, 0.0), &dx);
        res = residual(m, b, &x)?;
        let rel = res.norm() / bn;
        history.push(rel);
        if rel <= tol {
            return Ok(RefineResult {
                x,
                iterations: it,
                history,
            });
        }
        if !rel.is_finite() || rel > 1e8 {
            return Err(Error::Divergence {
                iterations: it,
                last: rel,
                history,
            });
        }
    }
    let last = history.last().copied().unwrap_or(f64::NAN);
    Err(Error::Divergence {
        iterations: max_iters,
        last,
        history,
    })
}

/// Preconditioned conjugate gradients with preconditioner `solver`.
pub fn pcg(
    solver: &dyn LinearOperator,
    m: &dyn LinearOperator,
    b: &BlockVector,
    tol: f64,
    max_iters: usize,
) -> Result<RefineResult> {
    pcg_inner(solver, m, b, max_iters, |res, _| res <= tol)
}

fn pcg_inner(
    solver: &dyn LinearOperator,
    m: &dyn LinearOperator,
    b: &BlockVector,
    max_iters: usize,
    mut done: impl FnMut(f64, f64) -> bool,
) -> Result<RefineResult> {
    m.check(b)?;
    let bn = b.norm();
    let mut x = BlockVector::zeros(b.n, b.r);
    let mut history = Vec::new();
    if bn == 0.0 {
        return Ok(RefineResult {
            x,
            iterations: 0,
            history,
        });
    }
    let mut res = b.clone();
    let mut z = solver.apply(&res)?;
    let rz0 = linalg::dot(&res.data, &z.data).re;
    let mut rz = rz0;
    let mut p = z.clone();
    for it in 1..=max_iters {
        let mp = m.apply(&p)?;
        let pmp = linalg::dot(&p.data, &mp.data).re;
        if !(pmp > 0.0) {
            let last = history.last().copied().unwrap_or(1.0);
            return Err(Error::Divergence {
                iterations: it,
                last,
                history,
            });
        }
        let a = rz / pmp;
        x.axpy(C64::new(a, 0.0), &p);
        res.axpy(C64::new(-a, 0.0), &mp);
        let rel = res.norm() / bn;
        history.push(rel);
        z = solver.apply(&res)?;
        let rz_new = linalg::dot(&res.data, &z.data).re;
        if done(rel, (rz_new / rz0).max(0.0).sqrt()) {
            return Ok(RefineResult {
                x,
                iterations: it,
                history,
            });
        }
        let beta = rz_new / rz;
        rz = rz_new;
        for (pi, zi) in p.data.iter_mut().zip(&z.data) {
            *pi = zi + *pi * beta;
        }
    }
    let last = history.last().copied().unwrap_or(f64::NAN);
    Err(Error::Divergence {
        iterations: max_iters,
        last,
        history,
    })
}

/// A preconditioned CG solve wrapped as an operator: `apply(b)` runs CG on
/// `m` until the preconditioned residual `sqrt(r^* W r)` falls below `tol`
/// times its initial value.
pub struct IterativeSolver<'a> {
    pub m: &'a BlockSparseMatrix,
    pub precond: &'a dyn LinearOperator,
    pub tol: f64,
    pub max_iters: usize,
}

impl LinearOperator for IterativeSolver<'_> {
    fn n(&self) -> usize {
        self.m.n()
    }
    fn r(&self) -> usize {
        self.m.r()
    }
    fn apply(&self, b: &BlockVector) -> Result<BlockVector> {
        let tol = self.tol;
        pcg_inner(self.precond, self.m, b, self.max_iters, |_, pres| pres <= tol).map(|r| r.x)
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps < 0.5) {
        return Err(Error::InvalidParameter(format!(
            "epsilon must lie in (0, 1/2), got {eps}"
        )));
    }
    Ok(())
}

/// Approximate solve of a possibly singular system `M x = b` (with `b` in
/// the range of `M`) through the regularized matrix `M + eps mu I`, where
/// `mu` lower-bounds the nonzero eigenvalues of `M`.
///
/// `factory` receives the regularized matrix and returns a preconditioner
/// for it; CG then drives the preconditioned residual down by `eps / 4`, so
/// the returned vector is within `M'`-norm relative error about `eps / 4`
/// of `(M + eps mu I)^{-1} b`.
pub fn solve_regularized<F>(
    m: &BlockSparseMatrix,
    b: &BlockVector,
    eps: f64,
    mu: f64,
    factory: F,
) -> Result<BlockVector>
where
    F: FnOnce(&BlockSparseMatrix) -> Result<Box<dyn LinearOperator>>,
{
    check_eps(eps)?;
    if !(mu > 0.0) {
        return Err(Error::InvalidParameter(format!("mu must be positive, got {mu}")));
    }
    m.check(b)?;
    if b.norm() == 0.0 {
        return Ok(BlockVector::zeros(b.n, b.r));
    }
    let mp = m.pad_identity(eps * mu);
    let w = factory(&mp)?;
    let solver = IterativeSolver {
        m: &mp,
        precond: w.as_ref(),
        tol: eps / 4.0,
        max_iters: 10_000,
    };
    solver.apply(b)
}

/// Accuracy `eps / (56 kappa^3)` the shifted solver must reach for
/// [`pseudo_apply`].
pub fn pseudo_delta(eps: f64, kappa: f64) -> Result<f64> {
    check_eps(eps)?;
    if !(kappa >= 1.0) || !kappa.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "condition number must be >= 1, got {kappa}"
        )));
    }
    let delta = eps / (56.0 * kappa.powi(3));
    if delta < 1e-14 {
        return Err(Error::InvalidParameter(format!(
            "required solver accuracy {delta:e} is below double precision (kappa {kappa:e} too large for eps {eps})"
        )));
    }
    Ok(delta)
}

/// `M Z Z Z M b`, an approximation of `M^+ b` when `Z` approximates
/// `(M + eps mu I)^{-1}` to accuracy [`pseudo_delta`].
pub fn pseudo_apply(
    m: &BlockSparseMatrix,
    z: &dyn LinearOperator,
    b: &BlockVector,
    eps: f64,
    kappa: f64,
) -> Result<BlockVector> {
    pseudo_delta(eps, kappa)?;
    m.check(b)?;
    let mut v = m.matvec(b)?;
    for _ in 0..3 {
        v = z.apply(&v)?;
    }
    m.matvec(&v)
}
