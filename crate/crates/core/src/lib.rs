//! Solvers for block-diagonally-dominant (bDD) linear systems with small
//! complex Hermitian blocks: block Cholesky chains built from approximate
//! Schur complements, sparsified with expander-based clique replacements.

// `!(x > 0.0)` deliberately rejects NaN, and the dense kernels index several
// arrays per loop variable.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod block_core;
pub mod builder;
pub mod chain;
pub mod clique;
mod error;
pub mod expanders;
pub mod graphs;
pub mod io;
pub mod jacobi;
pub mod linalg;
pub mod oracle;
pub mod resparsify;
pub mod rng;
pub mod schur;
pub mod selection;

pub use block_core::{
    assemble_factorization, bdd_ratio, block_op_norm, factorize_bdd, is_alpha_bdd, is_bdd, unitary_split, BddReport,
    Block, BlockDiagonalMatrix, BlockSparseMatrix, BlockVector, MatrixBuilder, RectBlockMatrix, TransferEdge,
    UnitaryTransferMatrix,
};
pub use error::{Category, Error, Result};
pub use linalg::C64;
