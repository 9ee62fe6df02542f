//! Shared fixtures for the benchmarks.

use bddsolve::graphs::{generate, GraphKind};
use bddsolve::{BlockSparseMatrix, BlockVector, Result, C64};

/// Diagonal shift that makes generated Laplacians nonsingular.
pub const PAD: f64 = 1e-3;

/// Padded connection Laplacian of a generated graph.
pub fn instance(kind: GraphKind, n: usize, r: usize, seed: u64) -> Result<BlockSparseMatrix> {
    Ok(generate(kind, n, r, seed, 0.0)?.graph.laplacian().pad_identity(PAD))
}

/// Deterministic right-hand side with entries in `[-50, 50]`.
pub fn rhs(n: usize, r: usize) -> BlockVector {
    let data = (0..n * r)
        .map(|k| C64::new(((k * 7919) % 101) as f64 - 50.0, 0.0))
        .collect();
    BlockVector::from_vec(n, r, data).expect("length matches")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_have_matching_shapes() {
        let m = instance(GraphKind::Band, 50, 2, 1).unwrap();
        let b = rhs(50, 2);
        assert_eq!((m.n(), m.r()), (50, 2));
        assert_eq!(m.matvec(&b).unwrap().data.len(), 100);
    }
}
