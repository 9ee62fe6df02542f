//! Product demand block-Laplacians and their sparsification by lifting a
//! scalar weighted expander through the per-vertex blocks.

use crate::block_core::{Block, BlockSparseMatrix, MatrixBuilder};
use crate::error::{Error, Result};
use crate::expanders::{self, WeightedGraph};
use crate::linalg::{self, C64};

/// Sparse block vector `d in (C^{r x r})^n` with nonzero blocks only.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockDemandVector {
    pub n: usize,
    pub r: usize,
    /// `(index, block)` pairs, increasing index, no zero blocks.
    pub entries: Vec<(usize, Block)>,
}

impl BlockDemandVector {
    /// Sorts by index and drops zero blocks; duplicate indices are rejected.
    pub fn new(n: usize, r: usize, mut entries: Vec<(usize, Block)>) -> Result<Self> {
        entries.retain(|(_, b)| !b.is_zero());
        entries.sort_by_key(|(i, _)| *i);
        for w in entries.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::InvalidInput(format!("duplicate demand index {}", w[0].0)));
            }
        }
        for (i, b) in &entries {
            if *i >= n || b.r() != r {
                return Err(Error::Dimension { expected: n, got: *i });
            }
        }
        Ok(BlockDemandVector { n, r, entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn norms(&self) -> Vec<f64> {
        self.entries.iter().map(|(_, b)| b.op_norm()).collect()
    }
}

/// How cliques are turned into sparse matrices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum CliqueMode {
    /// Always the exact product demand block-Laplacian.
    Exact,
    /// Always the expander construction (which is itself exact for tiny cliques).
    Expander,
    /// Exact whenever that is no larger than the expected expander output.
    #[default]
    Auto,
}

fn exact_is_cheaper(pairs: usize, big_side: usize, eps: f64, bipartite: bool) -> bool {
    let est = expanders::estimated_expander_edges(big_side, eps);
    let est = if bipartite { est.saturating_mul(2) } else { est };
    pairs <= expanders::EXACT_EDGE_LIMIT.max(est)
}

/// `-d_i d_j^*` scaled by `s`.
fn outer(d_i: &Block, d_j: &Block, s: f64) -> Vec<C64> {
    let r = d_i.r();
    let mut out = vec![C64::new(0.0, 0.0); r * r];
    linalg::gemm_nh_acc(r, C64::new(-s, 0.0), d_i.as_slice(), d_j.as_slice(), &mut out);
    out
}

/// Add `scale * L_{G(d)}` exactly.
fn add_exact_clique(b: &mut MatrixBuilder, d: &BlockDemandVector, scale: f64) {
    let w = d.norms();
    let total: f64 = w.iter().sum();
    for (a, (i, di)) in d.entries.iter().enumerate() {
        b.add_diag_scalar(*i, scale * w[a] * (total - w[a]));
        for (j, dj) in d.entries.iter().skip(a + 1) {
            b.add_herm(*i, *j, &outer(di, dj, scale));
        }
    }
}

/// Add `scale * L_{G(d,F)}` exactly; `in_f` marks the `F` side.
fn add_exact_bipartite(b: &mut MatrixBuilder, d: &BlockDemandVector, in_f: &[bool], scale: f64) {
    let w = d.norms();
    let sf: f64 = d
        .entries
        .iter()
        .zip(&w)
        .filter(|((i, _), _)| in_f[*i])
        .map(|(_, x)| x)
        .sum();
    let sc: f64 = d
        .entries
        .iter()
        .zip(&w)
        .filter(|((i, _), _)| !in_f[*i])
        .map(|(_, x)| x)
        .sum();
    for (a, (i, di)) in d.entries.iter().enumerate() {
        let other = if in_f[*i] { sc } else { sf };
        b.add_diag_scalar(*i, scale * w[a] * other);
        if !in_f[*i] {
            continue;
        }
        for (j, dj) in d.entries.iter() {
            if !in_f[*j] {
                b.add_herm(*i, *j, &outer(di, dj, scale));
            }
        }
    }
}

/// Add the lift of a scalar graph `h` on the support of `d` (vertex `k` of
/// `h` is entry `k` of `d`): off-diagonal `-(h_ij / (w_i w_j)) d_i d_j^*`
/// and diagonal `I * sum_k h_ik`. Loops are ignored.
fn add_lift(b: &mut MatrixBuilder, d: &BlockDemandVector, h: &WeightedGraph, scale: f64) {
    let w = d.norms();
    for &(u, v, hw) in &h.edges {
        if u == v {
            continue;
        }
        let (i, di) = &d.entries[u];
        let (j, dj) = &d.entries[v];
        b.add_diag_scalar(*i, scale * hw);
        b.add_diag_scalar(*j, scale * hw);
        b.add_herm(*i, *j, &outer(di, dj, scale * hw / (w[u] * w[v])));
    }
}

/// Add `scale` times a sparsifier of `L_{G(d)}` to `b`.
pub fn add_clique(
    b: &mut MatrixBuilder,
    d: &BlockDemandVector,
    scale: f64,
    eps: f64,
    seed: u64,
    mode: CliqueMode,
) -> Result<()> {
    check_eps(eps)?;
    let k = d.len();
    if k < 2 {
        return Ok(());
    }
    let exact = match mode {
        CliqueMode::Exact => true,
        CliqueMode::Expander => false,
        CliqueMode::Auto => exact_is_cheaper(k * (k - 1) / 2, k, eps, false),
    };
    if exact {
        add_exact_clique(b, d, scale);
    } else {
        let h = expanders::weighted_expander(&d.norms(), eps, seed)?;
        add_lift(b, d, &h, scale);
    }
    Ok(())
}

/// Add `scale` times a sparsifier of `L_{G(d,F)}` to `b`; the sparsifier
/// has no blocks inside `F` or inside `C` except on the diagonal.
pub fn add_bipartite_clique(
    b: &mut MatrixBuilder,
    d: &BlockDemandVector,
    in_f: &[bool],
    scale: f64,
    eps: f64,
    seed: u64,
    mode: CliqueMode,
) -> Result<()> {
    check_eps(eps)?;
    let fa: Vec<usize> = (0..d.len()).filter(|&k| in_f[d.entries[k].0]).collect();
    let cb: Vec<usize> = (0..d.len()).filter(|&k| !in_f[d.entries[k].0]).collect();
    if fa.is_empty() || cb.is_empty() {
        return Ok(());
    }
    let exact = match mode {
        CliqueMode::Exact => true,
        CliqueMode::Expander => false,
        CliqueMode::Auto => exact_is_cheaper(fa.len() * cb.len(), fa.len().max(cb.len()), eps, true),
    };
    if exact {
        add_exact_bipartite(b, d, in_f, scale);
        return Ok(());
    }
    let w = d.norms();
    let wa: Vec<f64> = fa.iter().map(|&k| w[k]).collect();
    let wb: Vec<f64> = cb.iter().map(|&k| w[k]).collect();
    let h = expanders::weighted_bipartite_expander(&wa, &wb, eps, seed)?;
    // relabel expander vertices (A then B) to positions in `d`
    let pos: Vec<usize> = fa.iter().chain(&cb).copied().collect();
    let h = WeightedGraph::from_edges(d.len(), h.edges.iter().map(|&(u, v, x)| (pos[u], pos[v], x)));
    add_lift(b, d, &h, scale);
    Ok(())
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::InvalidParameter(format!("epsilon must be positive, got {eps}")));
    }
    Ok(())
}

fn mask(n: usize, f: &[usize]) -> Result<Vec<bool>> {
    let mut m = vec![false; n];
    for &i in f {
        if i >= n {
            return Err(Error::Dimension { expected: n, got: i });
        }
        m[i] = true;
    }
    Ok(m)
}

/// Dense-support product demand block-Laplacian `L_{G(d)}`.
pub fn product_block_laplacian(d: &BlockDemandVector) -> BlockSparseMatrix {
    let mut b = MatrixBuilder::new(d.n, d.r);
    if d.len() >= 2 {
        add_exact_clique(&mut b, d, 1.0);
    }
    b.build()
}

/// Bipartite product demand block-Laplacian `L_{G(d,F)}`.
pub fn bipartite_product_block_laplacian(d: &BlockDemandVector, f: &[usize]) -> Result<BlockSparseMatrix> {
    let in_f = mask(d.n, f)?;
    let mut b = MatrixBuilder::new(d.n, d.r);
    add_exact_bipartite(&mut b, d, &in_f, 1.0);
    Ok(b.build())
}

/// Sparse approximation of `L_{G(d)}` via a weighted expander on `||d_i||`.
pub fn clique_sparsification(d: &BlockDemandVector, eps: f64, seed: u64) -> Result<BlockSparseMatrix> {
    let mut b = MatrixBuilder::new(d.n, d.r);
    add_clique(&mut b, d, 1.0, eps, seed, CliqueMode::Expander)?;
    Ok(b.build())
}

/// Sparse approximation of `L_{G(d,F)}` via a weighted bipartite expander.
pub fn bipartite_clique_sparsification(
    d: &BlockDemandVector,
    f: &[usize],
    eps: f64,
    seed: u64,
) -> Result<BlockSparseMatrix> {
    let in_f = mask(d.n, f)?;
    let mut b = MatrixBuilder::new(d.n, d.r);
    add_bipartite_clique(&mut b, d, &in_f, 1.0, eps, seed, CliqueMode::Expander)?;
    Ok(b.build())
}

/// Scalar graph lift: vertex `i` becomes `i` and `n + i`, and each edge
/// becomes the 2x2 bipartite clique between the copies.
pub fn k2_cover(g: &WeightedGraph) -> WeightedGraph {
    let n = g.n;
    WeightedGraph::from_edges(
        2 * n,
        g.edges
            .iter()
            .filter(|e| e.0 != e.1)
            .flat_map(|&(u, v, w)| [(u, v, w), (u, n + v, w), (n + u, v, w), (n + u, n + v, w)]),
    )
}
