//! Randomized selection of large `alpha`-bDD index subsets.
//!
//! Sample a uniform `F'` of size `ceil(n / (4(1+alpha)))`, keep the rows of
//! `F'` whose total off-diagonal weight is at least `(1+alpha)` times their
//! weight inside `F'`, and resample until enough rows survive.

use rand::seq::SliceRandom;

use crate::block_core::BlockSparseMatrix;
use crate::error::{Error, Result};
use crate::linalg;
use crate::rng;

/// Resampling cap before giving up.
pub const MAX_ROUNDS: usize = 100;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubsetResult {
    /// Selected block indices, increasing.
    pub f: Vec<usize>,
    pub iterations: usize,
    pub seed: u64,
}

struct RowNorms {
    /// Off-diagonal norm sum of each row over the whole matrix.
    total: Vec<f64>,
}

fn row_norms(m: &BlockSparseMatrix) -> RowNorms {
    RowNorms {
        total: (0..m.n()).map(|i| m.offdiag_norm_sum(i)).collect(),
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidParameter(format!("alpha must be >= 0, got {alpha}")));
    }
    Ok(())
}

/// Core loop over a candidate list. Row sums are taken in the full matrix,
/// which is sound because every diagonal block dominates its full row.
fn select(m: &BlockSparseMatrix, cand: &[usize], alpha: f64, seed: u64, norms: &RowNorms) -> Result<SubsetResult> {
    let n = cand.len();
    let r = m.r();
    let a1 = 1.0 + alpha;
    let small = (n as f64) < 8.0 * a1;
    let (fp_size, need) = if small {
        let sz = ((n as f64 / (4.0 * a1)).floor() as usize).max(1).min(n);
        (sz, 1usize)
    } else {
        let sz = ((n as f64 / (4.0 * a1)).ceil() as usize).min(n);
        (sz, (n as f64 / (8.0 * a1)).ceil() as usize)
    };
    let mut in_fp = vec![false; m.n()];
    let mut pool = cand.to_vec();
    let mut g = rng::rng(seed, 0);
    let mut best = 0usize;
    for it in 1..=MAX_ROUNDS {
        pool.copy_from_slice(cand);
        let (fp, _) = pool.partial_shuffle(&mut g, fp_size);
        for &i in fp.iter() {
            in_fp[i] = true;
        }
        let mut f: Vec<usize> = fp
            .iter()
            .copied()
            .filter(|&i| {
                let inside: f64 = m
                    .row(i)
                    .filter(|(j, _)| *j != i && in_fp[*j])
                    .map(|(_, b)| linalg::op_norm(r, b))
                    .sum();
                norms.total[i] >= a1 * inside
            })
            .collect();
        for &i in fp.iter() {
            in_fp[i] = false;
        }
        best = best.max(f.len());
        if f.len() >= need && !f.is_empty() {
            f.sort_unstable();
            return Ok(SubsetResult {
                f,
                iterations: it,
                seed,
            });
        }
    }
    Err(Error::IterationCap {
        iterations: MAX_ROUNDS,
        msg: format!(
            "alpha-bDD subset: needed {need} rows from samples of {fp_size} out of {n}, best round kept {best}"
        ),
    })
}

/// Find `F` with `M[F,F]` `alpha`-bDD and `|F| >= n / (8(1+alpha))`.
///
/// Small matrices (`n < 8(1+alpha)`) return every index when the whole
/// matrix already qualifies, and otherwise settle for any nonempty subset of
/// a sample of size `max(1, floor(n / (4(1+alpha))))`.
pub fn bdd_subset(m: &BlockSparseMatrix, alpha: f64, seed: u64) -> Result<SubsetResult> {
    check_alpha(alpha)?;
    let n = m.n();
    if n == 0 {
        return Err(Error::InvalidInput("empty matrix".into()));
    }
    if (n as f64) < 8.0 * (1.0 + alpha) && crate::block_core::is_alpha_bdd(m, alpha)? {
        return Ok(SubsetResult {
            f: (0..n).collect(),
            iterations: 0,
            seed,
        });
    }
    let cand: Vec<usize> = (0..n).collect();
    select(m, &cand, alpha, seed, &row_norms(m))
}

/// [`bdd_subset`] restricted to rows with at most twice the average number
/// of off-diagonal blocks.
pub fn bdd_subset_low_degree(m: &BlockSparseMatrix, alpha: f64, seed: u64) -> Result<SubsetResult> {
    check_alpha(alpha)?;
    let n = m.n();
    if n == 0 {
        return Err(Error::InvalidInput("empty matrix".into()));
    }
    let deg: Vec<usize> = (0..n).map(|i| m.degree(i)).collect();
    let total: usize = deg.iter().sum();
    // deg_i <= 2 * total / n, kept in integers so ties are exact
    let cand: Vec<usize> = (0..n).filter(|&i| deg[i] * n <= 2 * total).collect();
    if (cand.len() as f64) < 8.0 * (1.0 + alpha) {
        let sub = m.principal(&cand);
        if crate::block_core::is_alpha_bdd(&sub, alpha)? {
            return Ok(SubsetResult {
                f: cand,
                iterations: 0,
                seed,
            });
        }
    }
    select(m, &cand, alpha, seed, &row_norms(m))
}
