//! Density control: sample block columns of `M = X + B B^*` by leverage
//! score overestimates computed against a uniform subsample of `B`.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::block_core::{
    assemble_factorization, factorize_bdd, Block, BlockDiagonalMatrix, BlockSparseMatrix, BlockVector,
    UnitaryTransferMatrix,
};
use crate::chain::LinearOperator;
use crate::error::{Error, Result};
use crate::linalg::{self, C64, ONE};
use crate::rng;

/// Default oversampling constant in `p = min(1, c_s tau ln n / eps^2)`.
pub const DEFAULT_OVERSAMPLING: f64 = 9.0;

/// Default JL sketch width constant: `ceil(24 ln n)` rows.
pub const DEFAULT_JL_CONSTANT: f64 = 24.0;

/// Builds an approximate inverse of a positive definite bDD matrix.
pub type SolverFactory<'a> = dyn Fn(&BlockSparseMatrix) -> Result<Box<dyn LinearOperator>> + 'a;

/// Per-block-column leverage overestimates.
#[derive(Clone, Debug, PartialEq)]
pub struct LeverageEstimates {
    pub tau: Vec<f64>,
    pub jl_rows: usize,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SparsifyOptions {
    pub oversampling: f64,
    pub jl_constant: f64,
    /// Sample even when the input is already within the output bound.
    pub force: bool,
}

impl Default for SparsifyOptions {
    fn default() -> Self {
        SparsifyOptions {
            oversampling: DEFAULT_OVERSAMPLING,
            jl_constant: DEFAULT_JL_CONSTANT,
            force: false,
        }
    }
}

/// Diagnostics of one [`sparsify_report`] call.
#[derive(Clone, Debug, PartialEq)]
pub struct SparsifyReport {
    pub skipped: bool,
    pub input_columns: usize,
    pub sample_columns: usize,
    pub output_columns: usize,
    pub tau_sum: f64,
}

/// JL width `ceil(c ln n)`, at least 1.
pub fn jl_rows(n: usize, c: f64) -> usize {
    ((c * (n.max(2) as f64).ln()).ceil() as usize).max(1)
}

fn gaussian_vector(len: usize, g: &mut rng::Rng) -> Vec<C64> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    (0..len)
        .map(|_| {
            let re: f64 = g.sample(StandardNormal);
            let im: f64 = g.sample(StandardNormal);
            C64::new(re * s, im * s)
        })
        .collect()
}

fn sqrt_blocks(x: &BlockDiagonalMatrix) -> Vec<Block> {
    x.diag
        .iter()
        .map(|d| Block::from_vec_unchecked(x.r, linalg::herm_fn(x.r, d.as_slice(), |l| l.max(0.0).sqrt())))
        .collect()
}

/// Estimates of `tr(B_[i]^* W B_[i])` for `W ~ (X + C C^*)^{-1}`, through
/// `||G C^* W b||^2 + ||G sqrt(X) W b||^2` with a complex Gaussian `G` of
/// `jl_rows` rows.
pub fn estimate_block_leverage(
    b: &UnitaryTransferMatrix,
    x: &BlockDiagonalMatrix,
    c: &UnitaryTransferMatrix,
    w: &dyn LinearOperator,
    jl_rows: usize,
    seed: u64,
) -> Result<LeverageEstimates> {
    if jl_rows < 1 {
        return Err(Error::InvalidParameter("jl_rows must be at least 1".into()));
    }
    let r = b.r;
    let sx = sqrt_blocks(x);
    let mut tau = vec![0.0; b.m()];
    let mut g = rng::rng(seed, 0x1e7e);
    for _ in 0..jl_rows {
        // W C g and W sqrt(X) h; by symmetry of W their inner products with
        // the columns of B_[i] are the sketched quantities.
        let gc = gaussian_vector(c.m() * r, &mut g);
        let h = BlockVector::from_vec(b.n, r, gaussian_vector(b.n * r, &mut g))?;
        let mut sh = BlockVector::zeros(b.n, r);
        for (i, s) in sx.iter().enumerate() {
            linalg::gemv_acc(r, ONE, s.as_slice(), h.block(i), sh.block_mut(i));
        }
        for rhs in [c.apply(&gc), sh] {
            let z = w.apply(&rhs)?;
            let bz = b.apply_adjoint(&z);
            for (k, t) in tau.iter_mut().enumerate() {
                *t += bz[k * r..(k + 1) * r].iter().map(|v| v.norm_sqr()).sum::<f64>();
            }
        }
    }
    let s = 1.0 / jl_rows as f64;
    tau.iter_mut().for_each(|t| *t *= s);
    Ok(LeverageEstimates { tau, jl_rows, seed })
}

/// Uniform value in `[0, 1)` for column `k`, independent of visiting order.
fn column_uniform(seed: u64, k: usize) -> f64 {
    (rng::derive(seed, k as u64) >> 11) as f64 / (1u64 << 53) as f64
}

/// Keep column `k` with probability `p_k = min(1, c_s tau_k ln n / eps^2)`,
/// rescaled by `1/sqrt(p_k)`.
pub fn sample_by_scores(
    b: &UnitaryTransferMatrix,
    tau: &[f64],
    eps: f64,
    oversampling: f64,
    seed: u64,
) -> Result<UnitaryTransferMatrix> {
    if tau.len() != b.m() {
        return Err(Error::Dimension {
            expected: b.m(),
            got: tau.len(),
        });
    }
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!("epsilon must be positive, got {eps}")));
    }
    let ln_n = (b.n.max(2) as f64).ln();
    let mut edges = Vec::new();
    for (k, (e, &t)) in b.edges.iter().zip(tau).enumerate() {
        let p = (oversampling * t * ln_n / (eps * eps)).min(1.0);
        if p <= 0.0 || column_uniform(seed, k) >= p {
            continue;
        }
        let s = 1.0 / p.sqrt();
        let mut e = e.clone();
        e.qu = e.qu.scale(s);
        e.qv = e.qv.scale(s);
        e.w /= p;
        edges.push(e);
    }
    Ok(UnitaryTransferMatrix { n: b.n, r: b.r, edges })
}

/// `M~ ~_eps M` with about `c_s K n r^2 ln n / eps^2` block columns.
pub fn sparsify(
    m: &BlockSparseMatrix,
    eps: f64,
    k: usize,
    factory: &SolverFactory<'_>,
    seed: u64,
) -> Result<BlockSparseMatrix> {
    sparsify_report(m, eps, k, factory, seed, &SparsifyOptions::default()).map(|(s, _)| s)
}

pub fn sparsify_report(
    m: &BlockSparseMatrix,
    eps: f64,
    k: usize,
    factory: &SolverFactory<'_>,
    seed: u64,
    opts: &SparsifyOptions,
) -> Result<(BlockSparseMatrix, SparsifyReport)> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "epsilon must lie in (0, 1], got {eps}"
        )));
    }
    if k < 1 {
        return Err(Error::InvalidParameter("K must be at least 1".into()));
    }
    let (x, b) = factorize_bdd(m)?;
    if let Some(i) = x.diag.iter().position(|d| !(d.min_eig() > 0.0)) {
        return Err(Error::Precondition {
            row: i,
            msg: "diagonal part is not positive definite; pad the matrix first".into(),
        });
    }
    let n = m.n();
    let r = m.r();
    let cols = b.m();
    let bound = opts.oversampling * (n * r * r * k) as f64 * (n.max(2) as f64).ln() / (eps * eps);
    if cols == 0 || (!opts.force && cols as f64 <= bound) {
        return Ok((
            m.clone(),
            SparsifyReport {
                skipped: true,
                input_columns: cols,
                sample_columns: 0,
                output_columns: cols,
                tau_sum: 0.0,
            },
        ));
    }
    // K >= m degenerates to an empty sample, so that W ~ X^{-1}.
    let take = if k >= cols { 0 } else { cols.div_ceil(k) };
    let mut idx: Vec<usize> = (0..cols).collect();
    let mut g = rng::rng(seed, 0x5a3e);
    let (chosen, _) = idx.partial_shuffle(&mut g, take);
    let mut chosen = chosen.to_vec();
    chosen.sort_unstable();
    let c = UnitaryTransferMatrix {
        n,
        r,
        edges: chosen.iter().map(|&i| b.edges[i].clone()).collect(),
    };
    let sub = assemble_factorization(&x, &c);
    let w = factory(&sub)?;
    let est = estimate_block_leverage(
        &b,
        &x,
        &c,
        w.as_ref(),
        jl_rows(n, opts.jl_constant),
        rng::derive(seed, 1),
    )?;
    let bt = sample_by_scores(&b, &est.tau, eps, opts.oversampling, rng::derive(seed, 2))?;
    let out = assemble_factorization(&x, &bt);
    Ok((
        out,
        SparsifyReport {
            skipped: false,
            input_columns: cols,
            sample_columns: c.m(),
            output_columns: bt.m(),
            tau_sum: est.tau.iter().sum(),
        },
    ))
}
