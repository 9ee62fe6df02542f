//! Connection graphs (edges carrying a weight and a unitary block), their
//! connection Laplacians, and seeded instance generators.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::block_core::{Block, BlockSparseMatrix, BlockVector, MatrixBuilder};
use crate::error::{Error, Result};
use crate::linalg::{self, C64};
use crate::rng;

/// Unitarity tolerance `||O O^* - I||` accepted for edge blocks.
pub const UNITARY_TOL: f64 = 1e-8;

/// Degree of the `RandomRegular` and `Synchronization` generators.
pub const GENERATOR_DEGREE: usize = 4;

/// Half-bandwidth of the `Band` generator.
pub const BAND_WIDTH: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct ConnectionEdge {
    pub u: usize,
    pub v: usize,
    pub w: f64,
    /// Unitary `O_uv`; the reverse direction carries `O_uv^*`.
    pub o: Block,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConnectionGraph {
    pub n: usize,
    pub r: usize,
    pub edges: Vec<ConnectionEdge>,
}

impl ConnectionGraph {
    pub fn new(n: usize, r: usize, edges: Vec<ConnectionEdge>) -> Result<Self> {
        let g = ConnectionGraph { n, r, edges };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.r == 0 {
            return Err(Error::InvalidInput("block size must be positive".into()));
        }
        for (k, e) in self.edges.iter().enumerate() {
            if e.u >= self.n || e.v >= self.n {
                return Err(Error::InvalidInput(format!("edge {k}: vertex out of range")));
            }
            if e.u == e.v {
                return Err(Error::InvalidInput(format!("edge {k} is a self-loop")));
            }
            if !(e.w >= 0.0) || !e.w.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "edge {k}: weight {} is not a finite nonnegative number",
                    e.w
                )));
            }
            if e.o.r() != self.r || !e.o.is_finite() {
                return Err(Error::InvalidInput(format!("edge {k}: malformed block")));
            }
            let dev = e.o.mul_adj(&e.o).sub(&Block::identity(self.r)).op_norm();
            if dev > UNITARY_TOL {
                return Err(Error::InvalidInput(format!(
                    "edge {k}: block is not unitary (deviation {dev:e})"
                )));
            }
        }
        Ok(())
    }

    /// `M` with `x^* M x = sum_e w_e ||x_u - O_e x_v||^2`.
    pub fn laplacian(&self) -> BlockSparseMatrix {
        let mut b = MatrixBuilder::new(self.n, self.r);
        for e in &self.edges {
            if e.w == 0.0 {
                continue;
            }
            b.add_diag_scalar(e.u, e.w);
            b.add_diag_scalar(e.v, e.w);
            b.add_herm(e.u, e.v, e.o.scale(-e.w).as_slice());
        }
        b.build()
    }

    /// `sum_e w_e ||x_u - O_e x_v||^2`, evaluated edge by edge.
    pub fn quadratic_form(&self, x: &BlockVector) -> f64 {
        let r = self.r;
        self.edges
            .iter()
            .map(|e| {
                let mut d = x.block(e.u).to_vec();
                linalg::gemv_acc(r, C64::new(-1.0, 0.0), e.o.as_slice(), x.block(e.v), &mut d);
                e.w * d.iter().map(|z| z.norm_sqr()).sum::<f64>()
            })
            .sum()
    }
}

/// Connection Laplacian of a graph.
pub fn assemble_connection_laplacian(g: &ConnectionGraph) -> BlockSparseMatrix {
    g.laplacian()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GraphKind {
    /// Row-major grid of width `ceil(sqrt n)`, unit weights, random unitaries.
    Grid,
    /// Union of random perfect-matching-like permutations.
    RandomRegular,
    /// Random regular graph with planted blocks `O_ij = U_i U_j^*`.
    Synchronization,
    /// Path plus a random matching.
    PathMatching,
    /// Ring with every vertex joined to its next `BAND_WIDTH` neighbours.
    Band,
}

impl std::str::FromStr for GraphKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "grid" => GraphKind::Grid,
            "random-regular" => GraphKind::RandomRegular,
            "synchronization" => GraphKind::Synchronization,
            "path-matching" => GraphKind::PathMatching,
            "band" => GraphKind::Band,
            _ => return Err(Error::InvalidParameter(format!("unknown graph kind '{s}'"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedInstance {
    pub graph: ConnectionGraph,
    /// Planted vertex unitaries of a synchronization instance.
    pub planted: Option<Vec<Block>>,
}

fn gaussian_block(r: usize, g: &mut rng::Rng) -> Vec<C64> {
    (0..r * r)
        .map(|_| {
            let re: f64 = g.sample(StandardNormal);
            let im: f64 = g.sample(StandardNormal);
            C64::new(re, im)
        })
        .collect()
}

/// Nearest unitary `U V^*` of a block with SVD `U S V^*`.
pub fn polar_unitary(a: &Block) -> Block {
    let r = a.r();
    let (u, _, v) = linalg::svd(r, a.as_slice());
    let vh = linalg::adjoint(r, &v);
    Block::from_vec_unchecked(r, linalg::matmul(r, r, r, &u, &vh))
}

/// Haar-distributed unitary (polar factor of a complex Gaussian block).
pub fn random_unitary(r: usize, g: &mut rng::Rng) -> Block {
    polar_unitary(&Block::from_vec_unchecked(r, gaussian_block(r, g)))
}

fn random_pairs(n: usize, rounds: usize, g: &mut rng::Rng) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    let mut perm: Vec<usize> = (0..n).collect();
    for _ in 0..rounds {
        perm.shuffle(g);
        for i in 0..n {
            if perm[i] != i {
                pairs.push((i.min(perm[i]), i.max(perm[i])));
            }
        }
    }
    pairs
}

/// Seeded connection graph instance. `noise` perturbs the planted blocks of
/// a synchronization instance (other kinds ignore it).
pub fn generate(kind: GraphKind, n: usize, r: usize, seed: u64, noise: f64) -> Result<GeneratedInstance> {
    if n == 0 || r == 0 {
        return Err(Error::InvalidParameter("n and r must be positive".into()));
    }
    if !(noise >= 0.0) || !noise.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "noise must be finite and nonnegative, got {noise}"
        )));
    }
    let mut g = rng::rng(seed, 0x6e4);
    let pairs: Vec<(usize, usize)> = match kind {
        GraphKind::Grid => {
            let w = (n as f64).sqrt().ceil() as usize;
            let mut p = Vec::new();
            for i in 0..n {
                if (i + 1) % w != 0 && i + 1 < n {
                    p.push((i, i + 1));
                }
                if i + w < n {
                    p.push((i, i + w));
                }
            }
            p
        }
        GraphKind::RandomRegular | GraphKind::Synchronization => random_pairs(n, GENERATOR_DEGREE / 2, &mut g),
        GraphKind::PathMatching => {
            let mut p: Vec<(usize, usize)> = (1..n).map(|i| (i - 1, i)).collect();
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut g);
            for c in perm.chunks_exact(2) {
                let (a, b) = (c[0].min(c[1]), c[0].max(c[1]));
                if b != a + 1 {
                    p.push((a, b));
                }
            }
            p
        }
        GraphKind::Band => {
            let mut p = Vec::new();
            for i in 0..n {
                for s in 1..=BAND_WIDTH.min((n - 1) / 2) {
                    let j = (i + s) % n;
                    p.push((i.min(j), i.max(j)));
                }
            }
            if n == 2 {
                p.push((0, 1));
            }
            p.sort_unstable();
            p.dedup();
            p
        }
    };
    let planted =
        (kind == GraphKind::Synchronization).then(|| (0..n).map(|_| random_unitary(r, &mut g)).collect::<Vec<_>>());
    let mut edges = Vec::with_capacity(pairs.len());
    for (u, v) in pairs {
        let (w, o) = match &planted {
            Some(us) => {
                let mut o = us[u].mul_adj(&us[v]);
                if noise > 0.0 {
                    let pert = Block::from_vec_unchecked(r, gaussian_block(r, &mut g)).scale(noise);
                    o = polar_unitary(&o.add(&pert));
                }
                (1.0, o)
            }
            None if kind == GraphKind::Grid => (1.0, random_unitary(r, &mut g)),
            None => (g.random_range(0.5..1.5), random_unitary(r, &mut g)),
        };
        edges.push(ConnectionEdge { u, v, w, o });
    }
    Ok(GeneratedInstance {
        graph: ConnectionGraph::new(n, r, edges)?,
        planted,
    })
}

/// Random bDD matrix with generic (non-unitary) off-diagonal blocks: about
/// `deg` random neighbours per row, diagonal `(sum of norms + shift * u) I`
/// with `u` uniform in `[0, 1)`.
pub fn random_bdd(n: usize, r: usize, deg: usize, seed: u64, shift: f64) -> BlockSparseMatrix {
    let mut g = rng::rng(seed, 0xbdd);
    let mut b = MatrixBuilder::new(n, r);
    let mut sums = vec![0.0; n];
    if n > 1 {
        for i in 0..n {
            for _ in 0..deg {
                let j = g.random_range(0..n);
                if j == i {
                    continue;
                }
                let v: Vec<C64> = (0..r * r)
                    .map(|_| C64::new(g.random::<f64>() - 0.5, g.random::<f64>() - 0.5))
                    .collect();
                let blk = Block::from_vec_unchecked(r, v);
                let nb = blk.op_norm();
                b.add_herm(i, j, blk.as_slice());
                sums[i] += nb;
                sums[j] += nb;
            }
        }
    }
    for (i, s) in sums.iter().enumerate() {
        b.add_diag_scalar(i, s + shift * g.random::<f64>());
    }
    b.build()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::block_core::is_bdd;
    use crate::oracle::DenseHermitian;

    #[test]
    fn grid_two_by_two() {
        let inst = generate(GraphKind::Grid, 4, 1, 0, 0.0).unwrap();
        assert_eq!(inst.graph.edges.len(), 4);
    }

    #[test]
    fn single_edge_laplacian() {
        let g = ConnectionGraph::new(
            2,
            1,
            vec![ConnectionEdge {
                u: 0,
                v: 1,
                w: 1.0,
                o: Block::identity(1),
            }],
        )
        .unwrap();
        let m = g.laplacian();
        assert_eq!(m.get_block(0, 0).get(0, 0), C64::new(1.0, 0.0));
        assert_eq!(m.get_block(0, 1).get(0, 0), C64::new(-1.0, 0.0));
        assert!(ConnectionGraph::new(3, 1, vec![]).unwrap().laplacian().nnz_blocks() == 0);
    }

    #[test]
    fn quadratic_form_matches_laplacian() {
        for kind in [
            GraphKind::RandomRegular,
            GraphKind::Band,
            GraphKind::PathMatching,
            GraphKind::Grid,
        ] {
            let inst = generate(kind, 30, 2, 5, 0.0).unwrap();
            let m = inst.graph.laplacian();
            assert!(is_bdd(&m).ok);
            let mut g = rng::rng(1, 1);
            let x = BlockVector::from_vec(30, 2, gaussian_block(1, &mut g).repeat(60)).unwrap();
            let x = BlockVector::from_vec(
                30,
                2,
                (0..60).map(|k| x.data[k] * C64::new(k as f64, 1.0).sqrt()).collect(),
            )
            .unwrap();
            let mx = m.matvec(&x).unwrap();
            let q = linalg::dot(&x.data, &mx.data).re;
            assert!((q - inst.graph.quadratic_form(&x)).abs() < 1e-10 * q.abs().max(1.0));
        }
    }

    #[test]
    fn noiseless_synchronization_has_planted_null_space() {
        let inst = generate(GraphKind::Synchronization, 24, 2, 9, 0.0).unwrap();
        let ev = DenseHermitian::from_sparse(&inst.graph.laplacian())
            .unwrap()
            .eigenvalues();
        assert!(ev[0].abs() < 1e-9 && ev[1].abs() < 1e-9);
        assert!(ev[2] > 1e-3);
        let noisy = generate(GraphKind::Synchronization, 24, 2, 9, 0.3).unwrap();
        assert!(noisy.graph.validate().is_ok());
    }

    #[test]
    fn reproducible_and_validated() {
        let a = generate(GraphKind::RandomRegular, 50, 3, 4, 0.0).unwrap();
        let b = generate(GraphKind::RandomRegular, 50, 3, 4, 0.0).unwrap();
        assert_eq!(a, b);
        let bad = ConnectionGraph::new(
            2,
            1,
            vec![ConnectionEdge {
                u: 0,
                v: 1,
                w: -1.0,
                o: Block::identity(1),
            }],
        );
        assert!(bad.is_err());
        let nonunitary = ConnectionGraph::new(
            2,
            1,
            vec![ConnectionEdge {
                u: 0,
                v: 1,
                w: 1.0,
                o: Block::scalar(1, 2.0),
            }],
        );
        assert!(nonunitary.is_err());
    }
}
