//! Jacobi iteration for `alpha`-bDD blocks: the splitting `M_FF = X + L` and
//! the truncated Neumann series `Z = sum_{i<=k} X^{-1} (-L X^{-1})^i`.

use crate::block_core::{Block, BlockDiagonalMatrix, BlockSparseMatrix, BlockVector, MatrixBuilder};
use crate::error::{Error, Result};
use crate::linalg::{self, ONE};

/// Contraction factor of `X^{-1} L` for 4-bDD inputs.
pub const BETA: f64 = 0.5;

/// Split `M = X + L`, where `L` keeps the off-diagonal blocks and puts
/// `I * sum_j ||M_ij||` on the diagonal, and `X` is the block-diagonal rest.
pub fn split_alpha_bdd(m: &BlockSparseMatrix) -> (BlockDiagonalMatrix, BlockSparseMatrix) {
    let n = m.n();
    let r = m.r();
    let mut lb = MatrixBuilder::new(n, r);
    let mut diag = Vec::with_capacity(n);
    for i in 0..n {
        let s = m.offdiag_norm_sum(i);
        for (j, b) in m.row(i) {
            if j != i {
                lb.add(i, j, b);
            }
        }
        if s > 0.0 {
            lb.add_diag_scalar(i, s);
        }
        diag.push(m.diag_block(i).sub(&Block::scalar(r, s)));
    }
    (BlockDiagonalMatrix { n, r, diag }, lb.build())
}

/// Smallest odd `k >= log2(3 / eps)`.
pub fn jacobi_steps(eps: f64) -> Result<usize> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::InvalidParameter(format!("epsilon must be positive, got {eps}")));
    }
    let t = (3.0 / eps).log2();
    let mut k = if t <= 1.0 { 1 } else { (t - 1e-12).ceil() as usize };
    if k % 2 == 0 {
        k += 1;
    }
    Ok(k)
}

/// `delta = beta^k (1+beta) / (1 - beta^{k+1})` for `beta = 1/2`.
pub fn series_delta(k: usize) -> f64 {
    let bk = BETA.powi(k as i32);
    bk * (1.0 + BETA) / (1.0 - bk * BETA)
}

/// The implicit operator `Z^(k)` for a splitting `X + L`.
#[derive(Clone, Debug)]
pub struct JacobiOperator {
    pub x: BlockDiagonalMatrix,
    pub l: BlockSparseMatrix,
    pub k: usize,
    pub epsilon: f64,
    xinv: Vec<Block>,
}

impl JacobiOperator {
    /// Build from `M_FF` with `k = jacobi_steps(epsilon)`.
    pub fn new(m_ff: &BlockSparseMatrix, epsilon: f64) -> Result<Self> {
        let k = jacobi_steps(epsilon)?;
        Self::with_steps(m_ff, k, epsilon)
    }

    /// Build from `M_FF` with an explicit step count.
    pub fn with_steps(m_ff: &BlockSparseMatrix, k: usize, epsilon: f64) -> Result<Self> {
        let (x, l) = split_alpha_bdd(m_ff);
        Self::from_parts(x, l, k, epsilon)
    }

    pub fn from_parts(x: BlockDiagonalMatrix, l: BlockSparseMatrix, k: usize, epsilon: f64) -> Result<Self> {
        let r = x.r;
        let xinv = x
            .diag
            .iter()
            .enumerate()
            .map(|(i, d)| {
                linalg::herm_inv(r, d.as_slice())
                    .map(|v| Block::from_vec_unchecked(r, v))
                    .map_err(|_| Error::Precondition {
                        row: i,
                        msg: "diagonal part of the Jacobi splitting is not positive definite".into(),
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(JacobiOperator { x, l, k, epsilon, xinv })
    }

    pub fn n(&self) -> usize {
        self.x.n
    }

    pub fn r(&self) -> usize {
        self.x.r
    }

    /// Inverse diagonal blocks `X_ii^{-1}`.
    pub fn x_inverse(&self) -> &[Block] {
        &self.xinv
    }

    fn xinv_apply(&self, v: &BlockVector) -> BlockVector {
        let r = self.r();
        let mut out = BlockVector::zeros(v.n, r);
        for i in 0..v.n {
            linalg::gemv_acc(r, ONE, self.xinv[i].as_slice(), v.block(i), out.block_mut(i));
        }
        out
    }

    /// `Z^(k) b` through `x <- X^{-1}(b - L x)`, starting from `X^{-1} b`.
    pub fn apply(&self, b: &BlockVector) -> Result<BlockVector> {
        if b.n != self.n() || b.r != self.r() {
            return Err(Error::Dimension {
                expected: self.n() * self.r(),
                got: b.n * b.r,
            });
        }
        let mut x = self.xinv_apply(b);
        for _ in 0..self.k {
            let lx = self.l.matvec_unchecked(&x);
            x = self.xinv_apply(&b.sub(&lx));
        }
        Ok(x)
    }
}
