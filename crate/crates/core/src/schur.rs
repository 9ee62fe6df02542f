//! Spectral vertex sparsification: approximate Schur complements onto
//! `C = V \ F` when `M[F,F]` is `alpha`-bDD.
//!
//! Each squaring round replaces `M` by a matrix with the same Schur
//! complement whose `[F,F]` block is far more diagonally dominant; the dense
//! parts of that matrix are product demand cliques, which are sparsified.
//! Once `[F,F]` is dominant enough, one step of a random walk inside `F`
//! makes it block-diagonal, and the final elimination is exact up to one
//! more layer of cliques.

use crate::block_core::{bdd_ratio, is_bdd, Block, BlockSparseMatrix, BlockVector, MatrixBuilder};
use crate::clique::{add_bipartite_clique, add_clique, BlockDemandVector, CliqueMode};
use crate::error::{Error, Result};
use crate::linalg::{self, C64, ONE};
use crate::rng;

/// Extra squaring rounds allowed when the measured dominance after the
/// scheduled rounds is still below target.
pub const EXTRA_ROUNDS: usize = 8;

/// Parameters of [`approx_schur`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SchurParams {
    pub alpha: f64,
    pub epsilon: f64,
    /// Scheduled squaring rounds.
    pub d_iters: usize,
    pub mode: CliqueMode,
    pub seed: u64,
}

impl SchurParams {
    pub fn new(alpha: f64, epsilon: f64, seed: u64) -> Result<Self> {
        if !(alpha >= 4.0) {
            return Err(Error::InvalidParameter(format!("alpha must be >= 4, got {alpha}")));
        }
        if !(epsilon > 0.0 && epsilon <= 0.5) {
            return Err(Error::InvalidParameter(format!(
                "epsilon must lie in (0, 1/2], got {epsilon}"
            )));
        }
        Ok(SchurParams {
            alpha,
            epsilon,
            d_iters: squaring_rounds(alpha, epsilon),
            mode: CliqueMode::Auto,
            seed,
        })
    }

    pub fn with_mode(mut self, mode: CliqueMode) -> Self {
        self.mode = mode;
        self
    }
}

/// `ceil(2 log2 log_{alpha/2}(4 / eps))`, at least 1.
pub fn squaring_rounds(alpha: f64, eps: f64) -> usize {
    let inner = (4.0 / eps).ln() / (alpha / 2.0).ln();
    let d = 2.0 * inner.log2();
    if d.is_finite() && d > 1.0 {
        (d - 1e-12).ceil() as usize
    } else {
        1
    }
}

/// Sorted complement of `f` in `0..n`, with a membership mask.
pub fn complement(n: usize, f: &[usize]) -> Result<(Vec<usize>, Vec<bool>)> {
    let mut in_f = vec![false; n];
    for &i in f {
        if i >= n {
            return Err(Error::Dimension { expected: n, got: i });
        }
        if in_f[i] {
            return Err(Error::InvalidInput(format!("index {i} repeated in F")));
        }
        in_f[i] = true;
    }
    Ok(((0..n).filter(|&i| !in_f[i]).collect(), in_f))
}

fn require_bdd(m: &BlockSparseMatrix) -> Result<()> {
    let rep = is_bdd(m);
    if let Some(row) = rep.worst_row {
        return Err(Error::Precondition {
            row,
            msg: "matrix is not block diagonally dominant".into(),
        });
    }
    Ok(())
}

fn require_alpha(m: &BlockSparseMatrix, f: &[usize], alpha: f64) -> Result<()> {
    if alpha.is_infinite() {
        let sub = m.principal(f);
        return match (0..sub.n()).find(|&i| sub.degree(i) > 1) {
            Some(i) => Err(Error::Precondition {
                row: f[i],
                msg: "M[F,F] is not block-diagonal".into(),
            }),
            None => Ok(()),
        };
    }
    let sub = m.principal(f);
    for i in 0..sub.n() {
        let lam = sub.diag_block(i).min_eig();
        let off = sub.offdiag_norm_sum(i);
        let need = (1.0 + alpha) * off;
        if lam < need - 1e-10 * lam.abs().max(need) {
            return Err(Error::Precondition {
                row: f[i],
                msg: format!("M[F,F] is not {alpha}-bDD"),
            });
        }
    }
    Ok(())
}

/// Column `j` of `m` below/above the diagonal: `(i, M_ij)` for `i != j`.
fn column(m: &BlockSparseMatrix, j: usize) -> impl Iterator<Item = (usize, Block)> + '_ {
    let r = m.r();
    m.row(j)
        .filter(move |(i, _)| *i != j)
        .map(move |(i, b)| (i, Block::from_vec_unchecked(r, linalg::adjoint(r, b))))
}

fn inv_sqrt(b: &Block, row: usize) -> Result<Block> {
    linalg::herm_inv_sqrt(b.r(), b.as_slice())
        .map(|v| Block::from_vec_unchecked(b.r(), v))
        .map_err(|_| Error::Precondition {
            row,
            msg: "diagonal block is not positive definite".into(),
        })
}

/// Subtract `coef * (v_i v_i^* + I ||v_i|| (S - ||v_i||))` from every
/// diagonal block in the support of `v`, where `S = sum_k ||v_k||`. Together
/// with the clique `coef * L_{G(v)}` this reproduces `-coef * v v^*`.
fn subtract_outer_diag(b: &mut MatrixBuilder, v: &BlockDemandVector, coef: f64) {
    let w = v.norms();
    let s: f64 = w.iter().sum();
    for (k, (i, vi)) in v.entries.iter().enumerate() {
        let mut blk = vi.mul_adj(vi).scale(-coef).into_vec();
        let d = -coef * w[k] * (s - w[k]);
        for t in 0..v.r {
            blk[t * v.r + t] += C64::new(d, 0.0);
        }
        b.add(*i, *i, &blk);
    }
}

/// One squaring round: returns `M1` on the full index set with
/// `Sc(M1, F) ~ Sc(M, F)` and `M1[F,F]` roughly `alpha^2/2`-bDD.
pub fn schur_square(m: &BlockSparseMatrix, f: &[usize], eps: f64, seed: u64) -> Result<BlockSparseMatrix> {
    schur_square_with(m, f, eps, seed, CliqueMode::Auto)
}

pub fn schur_square_with(
    m: &BlockSparseMatrix,
    f: &[usize],
    eps: f64,
    seed: u64,
    mode: CliqueMode,
) -> Result<BlockSparseMatrix> {
    if !(eps > 0.0 && eps < 0.5) {
        return Err(Error::InvalidParameter(format!(
            "epsilon must lie in (0, 1/2), got {eps}"
        )));
    }
    require_bdd(m)?;
    require_alpha(m, f, 4.0)?;
    square_unchecked(m, f, eps, seed, mode)
}

fn square_unchecked(
    m: &BlockSparseMatrix,
    f: &[usize],
    eps: f64,
    seed: u64,
    mode: CliqueMode,
) -> Result<BlockSparseMatrix> {
    let n = m.n();
    let r = m.r();
    let (_, in_f) = complement(n, f)?;
    let mut b = MatrixBuilder::new(n, r);
    // explicit part: 1/2 [[D, M_FC], [M_CF, 2 M_CC]]
    for i in 0..n {
        for (k, blk) in m.row(i) {
            match (in_f[i], in_f[k]) {
                (true, true) if i == k => {
                    let h: Vec<C64> = blk.iter().map(|x| x * 0.5).collect();
                    b.add(i, i, &h);
                }
                (true, true) => {}
                (false, false) => b.add(i, k, blk),
                _ => {
                    let h: Vec<C64> = blk.iter().map(|x| x * 0.5).collect();
                    b.add(i, k, &h);
                }
            }
        }
    }
    for (t, &j) in f.iter().enumerate() {
        let dj = inv_sqrt(&m.diag_block(j), j)?;
        // f_i = -M_ij D_jj^{-1/2}; its F part is d_F, minus its C part is d_C
        let mut fv = Vec::new();
        let mut dfv = Vec::new();
        let mut dcv = Vec::new();
        for (i, mij) in column(m, j) {
            let v = mij.mul(&dj).scale(-1.0);
            if in_f[i] {
                dfv.push((i, v.clone()));
            } else {
                dcv.push((i, v.scale(-1.0)));
            }
            fv.push((i, v));
        }
        if fv.is_empty() {
            continue;
        }
        let fvec = BlockDemandVector::new(n, r, fv)?;
        subtract_outer_diag(&mut b, &fvec, 0.5);
        let s = rng::derive(seed, t as u64);
        add_clique(
            &mut b,
            &BlockDemandVector::new(n, r, dfv)?,
            0.5,
            eps,
            rng::derive(s, 1),
            mode,
        )?;
        add_clique(
            &mut b,
            &BlockDemandVector::new(n, r, dcv)?,
            0.5,
            eps,
            rng::derive(s, 2),
            mode,
        )?;
        add_bipartite_clique(&mut b, &fvec, &in_f, 0.5, eps, rng::derive(s, 3), mode)?;
    }
    Ok(b.build())
}

/// The splitting `M[F,F] = X + D - A` used by [`last_step`], and the
/// operator `Z = 1/2 X^{-1} + 1/2 X^{-1} (X-D+A) X^{-1} (X-D+A) X^{-1}`.
#[derive(Clone, Debug)]
pub struct LastStepOperator {
    xinv: Vec<Block>,
    /// `X - D + A` on the `F` index space.
    xda: BlockSparseMatrix,
}

fn x_factor(alpha: f64) -> f64 {
    if alpha.is_infinite() {
        1.0
    } else {
        alpha / (alpha + 1.0)
    }
}

/// `num / (alpha + 1) * b` with one rounding per entry, so dyadic inputs
/// stay exact; `alpha = inf` gives `b` itself.
fn scale_over(b: &Block, num: f64, alpha: f64) -> Block {
    if alpha.is_infinite() {
        return b.clone();
    }
    let v = b.as_slice().iter().map(|x| x * num / (alpha + 1.0)).collect();
    Block::from_vec_unchecked(b.r(), v)
}

impl LastStepOperator {
    /// Built from `M[F,F]` (indexed `0..|F|`).
    pub fn new(m_ff: &BlockSparseMatrix, alpha: f64) -> Result<Self> {
        if !(alpha >= 4.0) {
            return Err(Error::InvalidParameter(format!("alpha must be >= 4, got {alpha}")));
        }
        let r = m_ff.r();
        let mut xinv = Vec::with_capacity(m_ff.n());
        let mut b = MatrixBuilder::new(m_ff.n(), r);
        for i in 0..m_ff.n() {
            let mii = m_ff.diag_block(i);
            let xi = scale_over(&mii, alpha, alpha);
            xinv.push(
                linalg::herm_inv(r, xi.as_slice())
                    .map(|v| Block::from_vec_unchecked(r, v))
                    .map_err(|_| Error::Precondition {
                        row: i,
                        msg: "diagonal block is not positive definite".into(),
                    })?,
            );
            // X - D = (alpha - 1)/(alpha + 1) M_ii
            b.add(i, i, scale_over(&mii, alpha - 1.0, alpha).as_slice());
            for (j, blk) in m_ff.row(i) {
                if j != i {
                    // A = -offdiag(M_FF)
                    let neg: Vec<C64> = blk.iter().map(|x| -x).collect();
                    b.add(i, j, &neg);
                }
            }
        }
        Ok(LastStepOperator { xinv, xda: b.build() })
    }

    fn xinv_apply(&self, v: &BlockVector) -> BlockVector {
        let r = v.r;
        let mut out = BlockVector::zeros(v.n, r);
        for i in 0..v.n {
            linalg::gemv_acc(r, ONE, self.xinv[i].as_slice(), v.block(i), out.block_mut(i));
        }
        out
    }

    pub fn apply(&self, b: &BlockVector) -> Result<BlockVector> {
        let y = self.xinv_apply(b);
        let t = self.xinv_apply(&self.xda.matvec(&y)?);
        let t = self.xinv_apply(&self.xda.matvec(&t)?);
        let mut out = y;
        out.axpy(ONE, &t);
        out.data.iter_mut().for_each(|x| *x *= 0.5);
        Ok(out)
    }
}

/// Approximate `Sc(M, F)` when `M[F,F]` is `alpha`-bDD with large `alpha`.
/// The result is indexed by the sorted complement `C` (see [`complement`]).
pub fn last_step(m: &BlockSparseMatrix, f: &[usize], alpha: f64, eps: f64, seed: u64) -> Result<BlockSparseMatrix> {
    last_step_with(m, f, alpha, eps, seed, CliqueMode::Auto)
}

pub fn last_step_with(
    m: &BlockSparseMatrix,
    f: &[usize],
    alpha: f64,
    eps: f64,
    seed: u64,
    mode: CliqueMode,
) -> Result<BlockSparseMatrix> {
    if !(alpha >= 4.0) {
        return Err(Error::InvalidParameter(format!("alpha must be >= 4, got {alpha}")));
    }
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!("epsilon must be positive, got {eps}")));
    }
    require_bdd(m)?;
    require_alpha(m, f, alpha)?;
    last_step_unchecked(m, f, alpha, eps, seed, mode)
}

fn last_step_unchecked(
    m: &BlockSparseMatrix,
    f: &[usize],
    alpha: f64,
    eps: f64,
    seed: u64,
    mode: CliqueMode,
) -> Result<BlockSparseMatrix> {
    let n = m.n();
    let r = m.r();
    let (c, in_f) = complement(n, f)?;
    let xf = x_factor(alpha);
    let cross = if alpha.is_infinite() {
        0.5
    } else {
        0.5 * (1.0 - 1.0 / alpha)
    };
    let half_eps = 0.5 * eps;
    // R = Y + 1/2 sum L~(g) + 1/2 sum L~(v, F)
    let mut b = MatrixBuilder::new(n, r);
    for i in 0..n {
        for (k, blk) in m.row(i) {
            match (in_f[i], in_f[k]) {
                (true, true) if i == k => {
                    let h: Vec<C64> = blk.iter().map(|x| x * (0.5 * xf)).collect();
                    b.add(i, i, &h);
                }
                (true, true) => {}
                (false, false) => b.add(i, k, blk),
                _ => {
                    let h: Vec<C64> = blk.iter().map(|x| x * cross).collect();
                    b.add(i, k, &h);
                }
            }
        }
    }
    for (t, &j) in f.iter().enumerate() {
        let xs = inv_sqrt(&m.diag_block(j).scale(xf), j)?;
        // v_i = -M_ij X_jj^{-1/2}: F part a = A_ij X^{-1/2}, C part -g
        let mut av = Vec::new();
        let mut gv = Vec::new();
        let mut vv = Vec::new();
        for (i, mij) in column(m, j) {
            let v = mij.mul(&xs).scale(-1.0);
            if in_f[i] {
                av.push((i, v.clone()));
            } else {
                gv.push((i, v.scale(-1.0)));
            }
            vv.push((i, v));
        }
        if vv.is_empty() {
            continue;
        }
        let a = BlockDemandVector::new(n, r, av)?;
        let g = BlockDemandVector::new(n, r, gv)?;
        let wa = a.norms();
        let wg = g.norms();
        let sa: f64 = wa.iter().sum();
        let sg: f64 = wg.iter().sum();
        // F diagonal: -1/2 I ||a_i|| S_g (the bipartite clique adds it back)
        for ((i, _), w) in a.entries.iter().zip(&wa) {
            b.add_diag_scalar(*i, -0.5 * w * sg);
        }
        // C diagonal: -1/2 (g_i g_i^* + I ||g_i|| (S_g - ||g_i||) + I ||g_i|| S_a)
        subtract_outer_diag(&mut b, &g, 0.5);
        for ((i, _), w) in g.entries.iter().zip(&wg) {
            b.add_diag_scalar(*i, -0.5 * w * sa);
        }
        let s = rng::derive(seed, t as u64);
        add_clique(&mut b, &g, 0.5, half_eps, rng::derive(s, 1), mode)?;
        let vvec = BlockDemandVector::new(n, r, vv)?;
        add_bipartite_clique(&mut b, &vvec, &in_f, 0.5, half_eps, rng::derive(s, 2), mode)?;
    }
    let rm = b.build();
    eliminate_block_diagonal(&rm, f, &c, &in_f, half_eps, seed, mode)
}

/// Schur complement onto `C` of a matrix whose `[F,F]` block is
/// block-diagonal, with the rank-one cliques replaced by sparsifiers.
fn eliminate_block_diagonal(
    rm: &BlockSparseMatrix,
    f: &[usize],
    c: &[usize],
    in_f: &[bool],
    eps: f64,
    seed: u64,
    mode: CliqueMode,
) -> Result<BlockSparseMatrix> {
    let n = rm.n();
    let r = rm.r();
    let mut pos = vec![usize::MAX; n];
    for (k, &i) in c.iter().enumerate() {
        pos[i] = k;
    }
    let nc = c.len();
    let mut b = MatrixBuilder::new(nc, r);
    for &i in c {
        for (k, blk) in rm.row(i) {
            if !in_f[k] {
                b.add(pos[i], pos[k], blk);
            }
        }
    }
    for (t, &j) in f.iter().enumerate() {
        let mut rv = Vec::new();
        for (i, rij) in column(rm, j) {
            if in_f[i] {
                return Err(Error::Degenerate(format!(
                    "eliminated block is not block-diagonal at ({i}, {j})"
                )));
            }
            rv.push((pos[i], rij));
        }
        if rv.is_empty() {
            continue;
        }
        let rs = inv_sqrt(&rm.diag_block(j), j)?;
        let rvec = BlockDemandVector::new(nc, r, rv.into_iter().map(|(i, blk)| (i, blk.mul(&rs))).collect())?;
        subtract_outer_diag(&mut b, &rvec, 1.0);
        add_clique(&mut b, &rvec, 1.0, eps, rng::derive(seed, 0x1a57_0000 + t as u64), mode)?;
    }
    Ok(b.build())
}

/// Diagnostics from [`approx_schur_report`].
#[derive(Clone, Debug, PartialEq)]
pub struct SchurReport {
    pub rounds: usize,
    /// Measured dominance of `[F,F]` before the last step.
    pub final_alpha: f64,
    pub nnz_blocks: usize,
}

/// Approximate `Sc(M, F)` to accuracy `epsilon`, indexed by the sorted
/// complement of `F`.
pub fn approx_schur(m: &BlockSparseMatrix, f: &[usize], params: &SchurParams) -> Result<BlockSparseMatrix> {
    approx_schur_report(m, f, params).map(|(s, _)| s)
}

pub fn approx_schur_report(
    m: &BlockSparseMatrix,
    f: &[usize],
    params: &SchurParams,
) -> Result<(BlockSparseMatrix, SchurReport)> {
    let eps = params.epsilon;
    // every squaring round runs at eps / (2 d) < 1/2, so eps = 1/2 itself is fine
    if !(eps > 0.0 && eps <= 0.5) {
        return Err(Error::InvalidParameter(format!(
            "epsilon must lie in (0, 1/2], got {eps}"
        )));
    }
    if !(params.alpha >= 4.0) {
        return Err(Error::InvalidParameter(format!(
            "alpha must be >= 4, got {}",
            params.alpha
        )));
    }
    require_bdd(m)?;
    require_alpha(m, f, params.alpha)?;
    // squaring budget eps/2, last step eps/4 + 2/alpha_last with alpha_last >= 8/eps
    let target = 8.0 / eps;
    let d = params.d_iters.max(1);
    let round_eps = eps / (2.0 * d as f64);
    let mut cur = m.clone();
    let mut rounds = 0;
    let mut ratio = bdd_ratio(&cur.principal(f));
    while ratio < target && rounds < d + EXTRA_ROUNDS {
        cur = square_unchecked(&cur, f, round_eps, rng::derive(params.seed, rounds as u64), params.mode)?;
        rounds += 1;
        ratio = bdd_ratio(&cur.principal(f));
    }
    if ratio < target {
        return Err(Error::IterationCap {
            iterations: rounds,
            msg: format!("[F,F] reached only {ratio:.3}-bDD, needed {target:.3}"),
        });
    }
    let out = last_step_unchecked(
        &cur,
        f,
        ratio,
        0.25 * eps,
        rng::derive(params.seed, 0xfeed),
        params.mode,
    )?;
    let nnz = out.nnz_blocks();
    Ok((
        out,
        SchurReport {
            rounds,
            final_alpha: ratio,
            nnz_blocks: nnz,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::block_core::is_alpha_bdd;
    use crate::oracle::{approx_epsilon_on_range, dense_schur, DenseHermitian};
    use rand::Rng as _;

    /// Random connection Laplacian plus a diagonal shift on `shift_rows`.
    fn random_instance(n: usize, r: usize, deg: usize, seed: u64, shift: f64) -> BlockSparseMatrix {
        let mut g = rng::rng(seed, 77);
        let mut b = MatrixBuilder::new(n, r);
        let mut sums = vec![0.0; n];
        for i in 0..n {
            for _ in 0..deg {
                let j = g.random_range(0..n);
                if j == i {
                    continue;
                }
                let v: Vec<C64> = (0..r * r)
                    .map(|_| C64::new(g.random::<f64>() - 0.5, g.random::<f64>() - 0.5))
                    .collect();
                let blk = Block::from_vec(r, v).unwrap();
                let nb = blk.op_norm();
                b.add_herm(i, j, blk.as_slice());
                sums[i] += nb;
                sums[j] += nb;
            }
        }
        for (i, s) in sums.iter().enumerate() {
            b.add_diag_scalar(i, s + shift * g.random::<f64>());
        }
        b.build()
    }

    /// Scale the rows/cols of `f` so that `[F,F]` is strongly dominant.
    fn heavy_f(m: &BlockSparseMatrix, f: &[usize], extra: f64) -> BlockSparseMatrix {
        let mut b = MatrixBuilder::new(m.n(), m.r());
        b.add_matrix(m, 1.0);
        for &i in f {
            b.add_diag_scalar(i, extra * m.offdiag_norm_sum(i));
        }
        b.build()
    }

    fn dense(m: &BlockSparseMatrix) -> DenseHermitian {
        DenseHermitian::from_sparse(m).unwrap()
    }

    fn pick_f(m: &BlockSparseMatrix, seed: u64) -> Vec<usize> {
        crate::selection::bdd_subset(m, 4.0, seed).unwrap().f
    }

    #[test]
    fn rounds_formula() {
        assert_eq!(squaring_rounds(4.0, 0.25), 4);
        assert!(squaring_rounds(1e6, 0.4) >= 1);
    }

    #[test]
    fn exact_squaring_preserves_schur_complement() {
        let m = random_instance(40, 2, 3, 1, 0.5);
        let f = pick_f(&m, 2);
        let m1 = schur_square_with(&m, &f, 0.1, 3, CliqueMode::Exact).unwrap();
        let s = dense_schur(&dense(&m), &f).unwrap();
        let s1 = dense_schur(&dense(&m1), &f).unwrap();
        let diff = s.sub(&s1).norm();
        assert!(diff <= 1e-9 * s.norm(), "{diff}");
        assert!(is_bdd(&m1).ok);
        assert!(is_alpha_bdd(&m1.principal(&f), 8.0).unwrap());
    }

    #[test]
    fn diagonal_ff_has_no_f_cliques() {
        let m = random_instance(30, 1, 2, 4, 0.1);
        let f = vec![0usize];
        let m1 = schur_square_with(&m, &f, 0.1, 0, CliqueMode::Exact).unwrap();
        let s = dense_schur(&dense(&m), &f).unwrap();
        let s1 = dense_schur(&dense(&m1), &f).unwrap();
        assert!(s.sub(&s1).norm() <= 1e-9 * s.norm());
    }

    #[test]
    fn additivity_on_cc() {
        let m = random_instance(30, 2, 3, 5, 0.5);
        let f = pick_f(&m, 1);
        let (c, _) = complement(m.n(), &f).unwrap();
        let mut tb = MatrixBuilder::new(m.n(), m.r());
        for &i in &c {
            tb.add_diag_scalar(i, 0.7);
        }
        tb.add_herm(
            c[0],
            c[1],
            &[C64::new(-0.1, 0.0), ONE * 0.0, ONE * 0.0, C64::new(-0.1, 0.0)],
        );
        let t = tb.build();
        let mt = m.add(&t).unwrap();
        let a = schur_square_with(&m, &f, 0.1, 3, CliqueMode::Exact).unwrap();
        let bq = schur_square_with(&mt, &f, 0.1, 3, CliqueMode::Exact).unwrap();
        let diff = dense(&bq).sub(&dense(&a)).sub(&dense(&t));
        assert!(diff.norm() < 1e-10);
    }

    #[test]
    fn last_step_scalar_operator() {
        let mut b = MatrixBuilder::new(1, 1);
        b.add_diag_scalar(0, 5.0);
        let op = LastStepOperator::new(&b.build(), 4.0).unwrap();
        let z = op.apply(&BlockVector::from_vec(1, 1, vec![ONE]).unwrap()).unwrap();
        assert!((z.data[0].re - 25.0 / 128.0).abs() < 1e-15);
        assert!((1.0 / z.data[0].re - 5.12).abs() < 1e-12);
    }

    #[test]
    fn last_step_sandwich() {
        let m = random_instance(36, 2, 3, 8, 0.3);
        let f = pick_f(&m, 4);
        let m = heavy_f(&m, &f, 15.0);
        let alpha = bdd_ratio(&m.principal(&f));
        let op = LastStepOperator::new(&m.principal(&f), alpha).unwrap();
        let z = DenseHermitian::from_operator(f.len(), m.r(), |v| op.apply(v)).unwrap();
        let zinv = z.inverse().unwrap();
        let mff = dense(&m.principal(&f));
        // M_FF <= Z^{-1} <= (1 + 2/alpha) M_FF
        let lo = zinv.sub(&mff).eigenvalues()[0];
        let hi = mff.scale(1.0 + 2.0 / alpha).sub(&zinv).eigenvalues()[0];
        assert!(lo >= -1e-9 && hi >= -1e-9, "{lo} {hi}");
    }

    #[test]
    fn last_step_certified() {
        let m = random_instance(60, 2, 3, 9, 0.3);
        let f = pick_f(&m, 5);
        let m = heavy_f(&m, &f, 20.0);
        let alpha = bdd_ratio(&m.principal(&f));
        let eps = 0.1;
        let s = last_step_with(&m, &f, alpha, eps, 1, CliqueMode::Exact).unwrap();
        let exact = dense_schur(&dense(&m), &f).unwrap();
        let e = approx_epsilon_on_range(&dense(&s), &exact).unwrap();
        assert!(e <= 2.0 / alpha + 1e-6, "{e} vs {}", 2.0 / alpha);
    }

    #[test]
    fn approx_schur_certified() {
        let m = random_instance(80, 2, 3, 11, 0.2);
        let f = pick_f(&m, 6);
        let p = SchurParams::new(4.0, 0.25, 3).unwrap();
        let (s, rep) = approx_schur_report(&m, &f, &p).unwrap();
        let exact = dense_schur(&dense(&m), &f).unwrap();
        let e = approx_epsilon_on_range(&dense(&s), &exact).unwrap();
        assert!(e <= 0.25 + 1e-6, "{e} {rep:?}");
    }

    #[test]
    fn single_vertex_elimination() {
        let m = random_instance(20, 1, 2, 12, 1.0);
        let f = vec![3usize];
        let p = SchurParams::new(4.0, 0.25, 3).unwrap();
        let s = approx_schur(&m, &f, &p).unwrap();
        let exact = dense_schur(&dense(&m), &f).unwrap();
        let e = approx_epsilon_on_range(&dense(&s), &exact).unwrap();
        assert!(e <= 0.25 + 1e-6, "{e}");
    }
}
