//! Top-level constructions: recursive Schur complement chains with periodic
//! density control, and the sparsified Cholesky (`U^* D U`) factorization.

use std::collections::BTreeMap;

use crate::block_core::{is_bdd, Block, BlockDiagonalMatrix, BlockSparseMatrix, BlockVector};
use crate::chain::{ChainLevel, LinearOperator, SchurComplementChain, DEFAULT_TERMINAL_SIZE, TERMINAL_MAX_DIM};
use crate::clique::CliqueMode;
use crate::error::{Error, Result};
use crate::jacobi::JacobiOperator;
use crate::linalg::{self, C64, ONE, ZERO};
use crate::resparsify::{sparsify_report, SparsifyOptions, SparsifyReport};
use crate::rng;
use crate::schur::{approx_schur_report, complement, SchurParams};
use crate::selection::{bdd_subset, bdd_subset_low_degree, SubsetResult};

/// Default number of eliminations between two density-control calls.
pub const DEFAULT_PHASE_LENGTH: usize = 4;

/// Default cap on the undersampling factor `K_j`.
pub const DEFAULT_K_CAP: usize = 32;

/// Default elimination-level guard.
pub const DEFAULT_MAX_DEPTH: usize = 64;

/// Nesting guard for chains built inside density control.
pub const MAX_NESTING: usize = 8;

/// Elimination stops early once a level stores at least this fraction of
/// all `n^2` blocks and fits the dense terminal solve.
pub const DEFAULT_DENSE_SWITCH: f64 = 0.05;

/// Initial density control fires when `nnz / n > DENSE_TRIGGER * ln n`.
pub const DENSE_TRIGGER: f64 = 64.0;

#[derive(Clone, Debug, PartialEq)]
pub struct BuilderParams {
    /// Phase length `k`: density control runs every `k` levels.
    pub phase_length: usize,
    /// Constant `c` of the `K_j` schedule.
    pub density_c: f64,
    pub k_cap: usize,
    pub alpha: f64,
    pub terminal_size: usize,
    pub seed: u64,
    pub max_depth: usize,
    pub clique_mode: CliqueMode,
    /// Run density control at phase boundaries.
    pub sparsify: bool,
    pub sparsify_options: SparsifyOptions,
    /// See [`DEFAULT_DENSE_SWITCH`]; values above 1 disable the switch.
    pub dense_switch: f64,
}

impl Default for BuilderParams {
    fn default() -> Self {
        BuilderParams {
            phase_length: DEFAULT_PHASE_LENGTH,
            density_c: 1.0,
            k_cap: DEFAULT_K_CAP,
            alpha: 4.0,
            terminal_size: DEFAULT_TERMINAL_SIZE,
            seed: 0,
            max_depth: DEFAULT_MAX_DEPTH,
            clique_mode: CliqueMode::Auto,
            sparsify: true,
            sparsify_options: SparsifyOptions::default(),
            dense_switch: DEFAULT_DENSE_SWITCH,
        }
    }
}

impl BuilderParams {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_terminal_size(mut self, t: usize) -> Self {
        self.terminal_size = t;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.phase_length == 0 {
            return Err(Error::InvalidParameter("phase length must be positive".into()));
        }
        if !(self.density_c >= 0.0) || !self.density_c.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "density constant must be finite and nonnegative, got {}",
                self.density_c
            )));
        }
        if self.k_cap == 0 {
            return Err(Error::InvalidParameter("K cap must be positive".into()));
        }
        if !(self.alpha >= 4.0) {
            return Err(Error::InvalidParameter(format!(
                "alpha must be >= 4, got {}",
                self.alpha
            )));
        }
        if !(self.dense_switch > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "dense switch must be positive, got {}",
                self.dense_switch
            )));
        }
        if self.terminal_size == 0 {
            return Err(Error::InvalidParameter("terminal size must be positive".into()));
        }
        Ok(())
    }
}

/// Accuracy `(i + 8)^{-2}` of elimination level `i` (from 0).
pub fn eps_schedule(i: usize) -> f64 {
    let t = (i + 8) as f64;
    1.0 / (t * t)
}

/// Accuracy `1 / (8 (i + 2)^2)` of factorization level `i` (from 1).
pub fn udu_eps_schedule(i: usize) -> f64 {
    let t = (i + 2) as f64;
    1.0 / (8.0 * t * t)
}

/// `K_j = min(2^{2 c k log2^2((j - 1) k + 1)}, cap)` for phase `j >= 1`.
pub fn k_schedule(j: usize, k: usize, c: f64, cap: usize) -> usize {
    let l = (((j.max(1) - 1) * k + 1) as f64).log2();
    let e = 2.0 * c * k as f64 * l * l;
    if e >= (cap as f64).log2() {
        cap
    } else {
        (e.exp2().floor() as usize).clamp(1, cap)
    }
}

/// Per-level diagnostics of a build.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelStats {
    pub n: usize,
    pub nnz_blocks: usize,
    pub f_len: usize,
    pub epsilon: f64,
    pub subset_iterations: usize,
    pub schur_rounds: usize,
    pub final_alpha: f64,
    pub sparsified: Option<SparsifyReport>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BuildReport {
    pub levels: Vec<LevelStats>,
    pub terminal_n: usize,
    pub terminal_nnz_blocks: usize,
}

impl BuildReport {
    /// Largest `n^(i+1) / n^(i)` over the levels.
    pub fn max_reduction(&self) -> f64 {
        let mut ns: Vec<usize> = self.levels.iter().map(|l| l.n).collect();
        ns.push(self.terminal_n);
        ns.windows(2).map(|w| w[1] as f64 / w[0] as f64).fold(0.0, f64::max)
    }

    /// Largest `nnz / n` over all level matrices.
    pub fn max_density(&self) -> f64 {
        self.levels
            .iter()
            .map(|l| l.nnz_blocks as f64 / l.n as f64)
            .chain(std::iter::once(
                self.terminal_nnz_blocks as f64 / self.terminal_n.max(1) as f64,
            ))
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Copy)]
enum Schedule {
    Chain,
    Udu,
}

impl Schedule {
    fn eps(self, i: usize) -> f64 {
        match self {
            Schedule::Chain => eps_schedule(i),
            Schedule::Udu => udu_eps_schedule(i + 1),
        }
    }

    fn subset(self, m: &BlockSparseMatrix, alpha: f64, seed: u64) -> Result<SubsetResult> {
        match self {
            Schedule::Chain => bdd_subset(m, alpha, seed),
            Schedule::Udu => bdd_subset_low_degree(m, alpha, seed),
        }
    }
}

struct Built {
    levels: Vec<ChainLevel>,
    terminal: BlockSparseMatrix,
    terminal_labels: Vec<usize>,
    report: BuildReport,
}

fn density_control(
    m: &BlockSparseMatrix,
    i: usize,
    params: &BuilderParams,
    nesting: usize,
) -> Result<Option<(BlockSparseMatrix, SparsifyReport)>> {
    let n = m.n();
    let j = i / params.phase_length + 1;
    let mut k = k_schedule(j, params.phase_length, params.density_c, params.k_cap);
    let dense = i == 0 && m.nnz_blocks() as f64 / n as f64 > DENSE_TRIGGER * (n.max(2) as f64).ln();
    if dense {
        k = k.max(2);
    }
    // K = 1 samples every column, so the inner solver would be for M itself.
    if k < 2 || nesting >= MAX_NESTING {
        return Ok(None);
    }
    let child = BuilderParams {
        seed: rng::derive(params.seed, 0x5000 + i as u64),
        ..params.clone()
    };
    let factory = move |mp: &BlockSparseMatrix| -> Result<Box<dyn LinearOperator>> {
        let b = build(mp, &child, Schedule::Chain, nesting + 1)?;
        Ok(Box::new(SchurComplementChain::new(
            b.levels,
            b.terminal,
            b.terminal_labels,
        )?))
    };
    let (out, rep) = sparsify_report(
        m,
        eps_schedule(i),
        k,
        &factory,
        rng::derive(params.seed, 0x6000 + i as u64),
        &params.sparsify_options,
    )?;
    Ok(Some((out, rep)))
}

fn build(m0: &BlockSparseMatrix, params: &BuilderParams, sched: Schedule, nesting: usize) -> Result<Built> {
    params.validate()?;
    let rep = is_bdd(m0);
    if !rep.ok {
        let row = rep.worst_row.unwrap_or(0);
        return Err(Error::Precondition {
            row,
            msg: "input matrix is not bDD".into(),
        });
    }
    let mut cur = m0.clone();
    let mut labels: Vec<usize> = (0..cur.n()).collect();
    let mut levels = Vec::new();
    let mut stats = Vec::new();
    let mut i = 0;
    while cur.n() > params.terminal_size {
        let n = cur.n() as f64;
        if cur.nnz_blocks() as f64 >= params.dense_switch * n * n && cur.n() * cur.r() <= TERMINAL_MAX_DIM {
            log::debug!(
                "level {i}: {} blocks stored on {} rows, switching to the dense solve",
                cur.nnz_blocks(),
                cur.n()
            );
            break;
        }
        if i >= params.max_depth {
            return Err(Error::IterationCap {
                iterations: i,
                msg: format!(
                    "elimination did not reach {} blocks within {} levels (now {} blocks, {} stored)",
                    params.terminal_size,
                    params.max_depth,
                    cur.n(),
                    cur.nnz_blocks()
                ),
            });
        }
        let level = (|| -> Result<(ChainLevel, BlockSparseMatrix, LevelStats)> {
            let mut sparsified = None;
            if params.sparsify && i % params.phase_length == 0 {
                if let Some((s, r)) = density_control(&cur, i, params, nesting)? {
                    cur = s;
                    sparsified = Some(r);
                }
            }
            let eps = sched.eps(i);
            let seed = rng::derive(params.seed, i as u64);
            let sub = sched.subset(&cur, params.alpha, rng::derive(seed, 1))?;
            let sp = SchurParams::new(params.alpha, eps, rng::derive(seed, 2))?.with_mode(params.clique_mode);
            let (next, srep) = approx_schur_report(&cur, &sub.f, &sp)?;
            let z = JacobiOperator::new(&cur.principal(&sub.f), eps)?;
            let st = LevelStats {
                n: cur.n(),
                nnz_blocks: cur.nnz_blocks(),
                f_len: sub.f.len(),
                epsilon: eps,
                subset_iterations: sub.iterations,
                schur_rounds: srep.rounds,
                final_alpha: srep.final_alpha,
                sparsified,
            };
            let lvl = ChainLevel::new(cur.clone(), sub.f, z, eps, labels.clone())?;
            Ok((lvl, next, st))
        })()
        .map_err(|e| e.at_level(i))?;
        let (lvl, next, st) = level;
        log::debug!(
            "level {i}: n {} nnz {} |F| {} rounds {} -> n {} nnz {}",
            st.n,
            st.nnz_blocks,
            st.f_len,
            st.schur_rounds,
            next.n(),
            next.nnz_blocks()
        );
        labels = lvl.c.iter().map(|&c| lvl.labels[c]).collect();
        levels.push(lvl);
        stats.push(st);
        cur = next;
        i += 1;
    }
    let report = BuildReport {
        levels: stats,
        terminal_n: cur.n(),
        terminal_nnz_blocks: cur.nnz_blocks(),
    };
    Ok(Built {
        levels,
        terminal: cur,
        terminal_labels: labels,
        report,
    })
}

/// Schur complement chain for a padded bDD matrix `M0 = xi I + B B^*`.
pub fn recursive_construct(m0: &BlockSparseMatrix, params: &BuilderParams) -> Result<SchurComplementChain> {
    recursive_construct_report(m0, params).map(|(c, _)| c)
}

pub fn recursive_construct_report(
    m0: &BlockSparseMatrix,
    params: &BuilderParams,
) -> Result<(SchurComplementChain, BuildReport)> {
    let b = build(m0, params, Schedule::Chain, 0)?;
    let chain = SchurComplementChain::new(b.levels, b.terminal, b.terminal_labels)?;
    Ok((chain, b.report))
}

/// One eliminated group of the factorization: `D[F,F] = X` and the rows
/// `U[F, C] = Z M[F, C]` keyed by original labels.
#[derive(Clone, Debug, PartialEq)]
pub struct UduLevel {
    /// Original labels of the eliminated rows, increasing.
    pub f: Vec<usize>,
    pub x: Vec<Block>,
    pub upper: Vec<Vec<(usize, Block)>>,
    pub epsilon: f64,
}

/// `M ~ U^* D U` with `U` unit upper triangular in the elimination order
/// (levels in turn, then the terminal rows in pivot order) and `D` block
/// diagonal. The terminal matrix is stored as `Ubar^* diag(d) Ubar` with
/// unit upper triangular `Ubar`, a rescaled dense Cholesky factor.
#[derive(Clone, Debug, PartialEq)]
pub struct UDUFactorization {
    pub n: usize,
    pub r: usize,
    pub levels: Vec<UduLevel>,
    pub terminal_labels: Vec<usize>,
    /// Scalar pivot order over the terminal rows: `terminal_perm[k]` is a
    /// scalar index into `terminal_labels` blocks (`block * r + component`).
    pub terminal_perm: Vec<usize>,
    /// Row-major unit upper triangular factor in pivot order.
    pub terminal_u: Vec<C64>,
    pub terminal_d: Vec<f64>,
}

impl UDUFactorization {
    /// Scalar elimination order as original scalar indices `label * r + component`.
    pub fn scalar_order(&self) -> Vec<usize> {
        let r = self.r;
        let mut o = Vec::with_capacity(self.n * r);
        for l in &self.levels {
            for &i in &l.f {
                o.extend((0..r).map(|p| i * r + p));
            }
        }
        o.extend(
            self.terminal_perm
                .iter()
                .map(|&s| self.terminal_labels[s / r] * r + s % r),
        );
        o
    }

    /// Stored nonzero blocks of `U` (unit diagonal blocks included).
    pub fn nnz_blocks(&self) -> usize {
        let r = self.r;
        let mut n = 0;
        for l in &self.levels {
            n += l.f.len() + l.upper.iter().map(Vec::len).sum::<usize>();
        }
        let t = self.terminal_perm.len();
        let mut seen = std::collections::HashSet::new();
        for a in 0..t {
            for b in a..t {
                if self.terminal_u[a * t + b] != ZERO {
                    seen.insert((self.terminal_perm[a] / r, self.terminal_perm[b] / r));
                }
            }
        }
        n + seen.len()
    }

    /// `D` as a block-diagonal matrix over original labels.
    pub fn d(&self) -> BlockDiagonalMatrix {
        let r = self.r;
        let mut diag = vec![Block::zeros(r); self.n];
        for l in &self.levels {
            for (&i, x) in l.f.iter().zip(&l.x) {
                diag[i] = x.clone();
            }
        }
        for (k, &s) in self.terminal_perm.iter().enumerate() {
            let b = &mut diag[self.terminal_labels[s / r]];
            b.set(s % r, s % r, C64::new(self.terminal_d[k], 0.0));
        }
        BlockDiagonalMatrix { n: self.n, r, diag }
    }

    /// Dense `U` (row-major, original scalar indexing).
    pub fn dense_u(&self) -> Vec<C64> {
        let r = self.r;
        let dim = self.n * r;
        let mut u = vec![ZERO; dim * dim];
        for l in &self.levels {
            for (row, &i) in l.upper.iter().zip(&l.f) {
                for p in 0..r {
                    u[(i * r + p) * dim + i * r + p] = ONE;
                }
                for (j, b) in row {
                    for p in 0..r {
                        for q in 0..r {
                            u[(i * r + p) * dim + j * r + q] = b.get(p, q);
                        }
                    }
                }
            }
        }
        let t = self.terminal_perm.len();
        let g: Vec<usize> = self
            .terminal_perm
            .iter()
            .map(|&s| self.terminal_labels[s / r] * r + s % r)
            .collect();
        for a in 0..t {
            for b in a..t {
                u[g[a] * dim + g[b]] = self.terminal_u[a * t + b];
            }
        }
        u
    }
}

/// Rows of `Z M[F,C]` through `P <- X^{-1} (M_FC - L P)`, `k` times from
/// `P = X^{-1} M_FC`; columns are local to `C`.
fn jacobi_times(
    z: &JacobiOperator,
    m: &BlockSparseMatrix,
    f: &[usize],
    c_pos: &[Option<usize>],
) -> Vec<BTreeMap<usize, Vec<C64>>> {
    let r = z.r();
    let xinv = z.x_inverse();
    let b: Vec<BTreeMap<usize, Vec<C64>>> = f
        .iter()
        .map(|&i| {
            m.row(i)
                .filter_map(|(j, blk)| c_pos[j].map(|cj| (cj, blk.to_vec())))
                .collect()
        })
        .collect();
    let times_xinv = |rows: Vec<BTreeMap<usize, Vec<C64>>>| -> Vec<BTreeMap<usize, Vec<C64>>> {
        rows.into_iter()
            .enumerate()
            .map(|(a, row)| {
                row.into_iter()
                    .map(|(j, v)| {
                        let mut o = vec![ZERO; r * r];
                        linalg::gemm_acc(r, ONE, xinv[a].as_slice(), &v, &mut o);
                        (j, o)
                    })
                    .collect()
            })
            .collect()
    };
    let mut p = times_xinv(b.clone());
    for _ in 0..z.k {
        let mut next = b.clone();
        for (a, row) in next.iter_mut().enumerate() {
            for (nb, lblk) in z.l.row(a) {
                if nb == a {
                    continue;
                }
                for (&j, v) in &p[nb] {
                    let e = row.entry(j).or_insert_with(|| vec![ZERO; r * r]);
                    linalg::gemm_acc(r, C64::new(-1.0, 0.0), lblk, v, e);
                }
            }
        }
        p = times_xinv(next);
    }
    p
}

/// Sparsified Cholesky factorization `M0 ~ U^* D U`.
pub fn decompose(m0: &BlockSparseMatrix, params: &BuilderParams) -> Result<UDUFactorization> {
    decompose_report(m0, params).map(|(f, _)| f)
}

pub fn decompose_report(m0: &BlockSparseMatrix, params: &BuilderParams) -> Result<(UDUFactorization, BuildReport)> {
    let b = build(m0, params, Schedule::Udu, 0)?;
    let r = m0.r();
    let mut levels = Vec::with_capacity(b.levels.len());
    for lvl in &b.levels {
        let n = lvl.m.n();
        let (c, _) = complement(n, &lvl.f)?;
        let mut c_pos = vec![None; n];
        for (k, &ci) in c.iter().enumerate() {
            c_pos[ci] = Some(k);
        }
        let rows = jacobi_times(&lvl.z, &lvl.m, &lvl.f, &c_pos);
        let upper = rows
            .into_iter()
            .map(|row| {
                row.into_iter()
                    .filter(|(_, v)| v.iter().any(|z| *z != ZERO))
                    .map(|(j, v)| (lvl.labels[c[j]], Block::from_vec_unchecked(r, v)))
                    .collect()
            })
            .collect();
        levels.push(UduLevel {
            f: lvl.global_f(),
            x: lvl.z.x.diag.clone(),
            upper,
            epsilon: lvl.epsilon,
        });
    }
    let term = crate::chain::DenseCholeskySolver::new(&b.terminal)?;
    let chol = term.factor();
    let t = chol.n;
    let mut terminal_u = vec![ZERO; t * t];
    let mut terminal_d = vec![0.0; t];
    for a in 0..t {
        let laa = chol.l[a * t + a].re;
        terminal_d[a] = laa * laa;
        terminal_u[a * t + a] = ONE;
        for bb in a + 1..t {
            // Ubar[a, b] = conj(L[b, a]) / L[a, a]
            terminal_u[a * t + bb] = chol.l[bb * t + a].conj() / laa;
        }
    }
    let f = UDUFactorization {
        n: m0.n(),
        r,
        levels,
        terminal_labels: b.terminal_labels,
        terminal_perm: chol.perm.clone(),
        terminal_u,
        terminal_d,
    };
    Ok((f, b.report))
}

/// `U^{-1} D^{-1} U^{-*} b` by level-wise substitution.
pub fn udu_solve(f: &UDUFactorization, b: &BlockVector) -> Result<BlockVector> {
    if b.n != f.n || b.r != f.r {
        return Err(Error::Dimension {
            expected: f.n * f.r,
            got: b.n * b.r,
        });
    }
    let r = f.r;
    let mut y = b.clone();
    // U^* y = b, levels first
    for l in &f.levels {
        for (row, &i) in l.upper.iter().zip(&l.f) {
            let yi = y.block(i).to_vec();
            for (j, blk) in row {
                linalg::gemv_h_acc(r, C64::new(-1.0, 0.0), blk.as_slice(), &yi, y.block_mut(*j));
            }
        }
    }
    let t = f.terminal_perm.len();
    let g: Vec<usize> = f
        .terminal_perm
        .iter()
        .map(|&s| f.terminal_labels[s / r] * r + s % r)
        .collect();
    let mut yt: Vec<C64> = g.iter().map(|&s| y.data[s]).collect();
    for a in 0..t {
        let s = yt[a];
        for bb in a + 1..t {
            yt[bb] -= f.terminal_u[a * t + bb].conj() * s;
        }
    }
    // D^{-1}
    for (a, v) in yt.iter_mut().enumerate() {
        *v /= f.terminal_d[a];
    }
    let mut z = y;
    for l in &f.levels {
        for (&i, x) in l.f.iter().zip(&l.x) {
            let inv = linalg::herm_inv(r, x.as_slice())?;
            let mut o = vec![ZERO; r];
            linalg::gemv_acc(r, ONE, &inv, z.block(i), &mut o);
            z.block_mut(i).copy_from_slice(&o);
        }
    }
    // U x = z, terminal first
    for a in (0..t).rev() {
        let mut s = yt[a];
        for bb in a + 1..t {
            s -= f.terminal_u[a * t + bb] * yt[bb];
        }
        yt[a] = s;
    }
    let mut x = z;
    for (a, &s) in g.iter().enumerate() {
        x.data[s] = yt[a];
    }
    for l in f.levels.iter().rev() {
        for (row, &i) in l.upper.iter().zip(&l.f) {
            let mut acc = vec![ZERO; r];
            for (j, blk) in row {
                linalg::gemv_acc(r, ONE, blk.as_slice(), x.block(*j), &mut acc);
            }
            for (xi, a) in x.block_mut(i).iter_mut().zip(acc) {
                *xi -= a;
            }
        }
    }
    Ok(x)
}

impl LinearOperator for UDUFactorization {
    fn n(&self) -> usize {
        self.n
    }
    fn r(&self) -> usize {
        self.r
    }
    fn apply(&self, b: &BlockVector) -> Result<BlockVector> {
        udu_solve(self, b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::block_core::MatrixBuilder;
    use crate::chain::refine;
    use crate::graphs::{generate, random_bdd, GraphKind};
    use crate::oracle::{approx_epsilon, DenseHermitian};

    fn small_params(seed: u64, terminal: usize) -> BuilderParams {
        BuilderParams::default().with_seed(seed).with_terminal_size(terminal)
    }

    fn dense(m: &BlockSparseMatrix) -> DenseHermitian {
        DenseHermitian::from_sparse(m).unwrap()
    }

    #[test]
    fn schedules() {
        assert!((udu_eps_schedule(1) - 1.0 / 72.0).abs() < 1e-15);
        assert!((udu_eps_schedule(2) - 1.0 / 128.0).abs() < 1e-15);
        assert!((eps_schedule(0) - 1.0 / 64.0).abs() < 1e-15);
        assert_eq!(k_schedule(1, 4, 1.0, 32), 1);
        assert_eq!(k_schedule(2, 4, 1.0, 32), 32);
        assert_eq!(k_schedule(2, 4, 0.1, 1000), 19);
        let s: f64 = (0..10_000).map(|i| 2.0 * eps_schedule(i)).sum();
        assert!(s < 0.5);
    }

    #[test]
    fn small_input_is_terminal_only() {
        let m = random_bdd(30, 2, 3, 1, 1.0);
        let c = recursive_construct(&m, &BuilderParams::default()).unwrap();
        assert_eq!(c.depth(), 0);
        assert!(recursive_construct(&m.scale(-1.0), &BuilderParams::default()).is_err());
    }

    #[test]
    fn chain_quality_and_refinement() {
        let m = generate(GraphKind::Band, 200, 2, 3, 0.0)
            .unwrap()
            .graph
            .laplacian()
            .pad_identity(0.05);
        let (chain, rep) = recursive_construct_report(&m, &small_params(7, 20)).unwrap();
        assert!(chain.depth() >= 3, "{rep:?}");
        assert!(rep.max_reduction() <= 0.99);
        let w = DenseHermitian::from_operator(200, 2, |b| chain.apply(b)).unwrap();
        let e = approx_epsilon(&w.inverse().unwrap(), &dense(&m)).unwrap();
        assert!(e <= 0.6, "{e}");
        let b = BlockVector::from_vec(200, 2, (0..400).map(|k| C64::new((k as f64).sin(), 0.0)).collect()).unwrap();
        let res = refine(&chain, &m, &b, 1e-8, 40).unwrap();
        assert!(res.iterations <= 40);
    }

    #[test]
    fn udu_of_diagonal_matrix() {
        let mut mb = MatrixBuilder::new(5, 1);
        for i in 0..5 {
            mb.add_diag_scalar(i, 1.0 + i as f64);
        }
        let m = mb.build();
        let f = decompose(&m, &small_params(1, 2)).unwrap();
        let u = f.dense_u();
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(u[i * 5 + j], if i == j { ONE } else { ZERO });
            }
        }
        let d = f.d();
        for i in 0..5 {
            assert!((d.diag[i].get(0, 0).re - (1.0 + i as f64)).abs() < 1e-12);
        }
    }

    #[test]
    fn udu_is_triangular_accurate_and_solves() {
        let m = random_bdd(120, 2, 3, 5, 0.5);
        // keep eliminating below the dense switch so levels exist
        let p = BuilderParams {
            dense_switch: 2.0,
            ..small_params(2, 15)
        };
        let f = decompose(&m, &p).unwrap();
        assert!(!f.levels.is_empty());
        let dim = 240;
        let u = f.dense_u();
        let order = f.scalar_order();
        let mut pos = vec![0; dim];
        for (k, &s) in order.iter().enumerate() {
            pos[s] = k;
        }
        for i in 0..dim {
            assert_eq!(u[i * dim + i], ONE);
            for j in 0..dim {
                if pos[j] < pos[i] {
                    assert_eq!(u[i * dim + j], ZERO);
                }
            }
        }
        // U^* D U densely
        let mut dd = vec![ZERO; dim * dim];
        let d = f.d();
        for (i, blk) in d.diag.iter().enumerate() {
            for p in 0..2 {
                for q in 0..2 {
                    dd[(2 * i + p) * dim + 2 * i + q] = blk.get(p, q);
                }
            }
        }
        let du = linalg::matmul(dim, dim, dim, &dd, &u);
        let uh = linalg::adjoint(dim, &u);
        let a = DenseHermitian::symmetrized(dim, 2, linalg::matmul(dim, dim, dim, &uh, &du));
        let e = approx_epsilon(&a, &dense(&m)).unwrap();
        assert!(e <= 0.8, "{e}");
        // udu_solve equals the dense inverse of U^* D U
        let b = BlockVector::from_vec(120, 2, (0..dim).map(|k| C64::new(1.0, k as f64 * 0.01)).collect()).unwrap();
        let x = udu_solve(&f, &b).unwrap();
        let back = a.matvec(&x.data);
        let err: f64 = back
            .iter()
            .zip(&b.data)
            .map(|(p, q)| (p - q).norm_sqr())
            .sum::<f64>()
            .sqrt();
        assert!(err < 1e-9 * b.norm(), "{err}");
        let res = refine(&f, &m, &b, 1e-8, 200).unwrap();
        assert!(res.history.last().unwrap() <= &1e-8);
    }
}
