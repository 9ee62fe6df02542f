//! Block-sparse Hermitian matrices with small complex blocks, the bDD
//! predicates, and the `X + B B^*` factorization.
//!
//! A matrix is stored as CSR over block rows with both triangles present, so
//! every algorithm can walk a block row directly. Blocks are dense `r x r`,
//! row-major.

use crate::error::{Error, Result};
use crate::linalg::{self, C64, ONE, ZERO};

/// Blocks whose norm is at most this fraction of the largest block norm are
/// dropped when a matrix is assembled.
pub const ZERO_BLOCK_REL: f64 = 1e-14;

/// Dense `r x r` complex block, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    r: usize,
    a: Vec<C64>,
}

impl Block {
    pub fn zeros(r: usize) -> Block {
        Block {
            r,
            a: vec![ZERO; r * r],
        }
    }

    pub fn identity(r: usize) -> Block {
        Block::scalar(r, 1.0)
    }

    pub fn scalar(r: usize, s: f64) -> Block {
        let mut b = Block::zeros(r);
        for i in 0..r {
            b.a[i * r + i] = C64::new(s, 0.0);
        }
        b
    }

    pub fn diag(d: &[f64]) -> Block {
        let r = d.len();
        let mut b = Block::zeros(r);
        for i in 0..r {
            b.a[i * r + i] = C64::new(d[i], 0.0);
        }
        b
    }

    pub fn from_vec(r: usize, a: Vec<C64>) -> Result<Block> {
        if a.len() != r * r {
            return Err(Error::Dimension {
                expected: r * r,
                got: a.len(),
            });
        }
        if a.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidInput("block has non-finite entries".into()));
        }
        Ok(Block { r, a })
    }

    pub(crate) fn from_vec_unchecked(r: usize, a: Vec<C64>) -> Block {
        debug_assert_eq!(a.len(), r * r);
        Block { r, a }
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.a
    }

    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.a
    }

    pub fn into_vec(self) -> Vec<C64> {
        self.a
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.a[i * self.r + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: C64) {
        self.a[i * self.r + j] = v;
    }

    pub fn adjoint(&self) -> Block {
        Block {
            r: self.r,
            a: linalg::adjoint(self.r, &self.a),
        }
    }

    pub fn mul(&self, o: &Block) -> Block {
        let mut out = vec![ZERO; self.r * self.r];
        linalg::gemm_acc(self.r, ONE, &self.a, &o.a, &mut out);
        Block { r: self.r, a: out }
    }

    /// `self * o^*`.
    pub fn mul_adj(&self, o: &Block) -> Block {
        let mut out = vec![ZERO; self.r * self.r];
        linalg::gemm_nh_acc(self.r, ONE, &self.a, &o.a, &mut out);
        Block { r: self.r, a: out }
    }

    pub fn add(&self, o: &Block) -> Block {
        Block {
            r: self.r,
            a: self.a.iter().zip(&o.a).map(|(x, y)| x + y).collect(),
        }
    }

    pub fn sub(&self, o: &Block) -> Block {
        Block {
            r: self.r,
            a: self.a.iter().zip(&o.a).map(|(x, y)| x - y).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Block {
        Block {
            r: self.r,
            a: self.a.iter().map(|x| x * s).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.a.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn frob_norm(&self) -> f64 {
        linalg::frob_norm(&self.a)
    }

    /// Largest singular value.
    pub fn op_norm(&self) -> f64 {
        linalg::op_norm(self.r, &self.a)
    }

    /// Smallest eigenvalue of the Hermitian part.
    pub fn min_eig(&self) -> f64 {
        linalg::min_eig(self.r, &self.a)
    }

    pub fn is_zero(&self) -> bool {
        self.a.iter().all(|z| *z == ZERO)
    }
}

/// Largest singular value of `b`.
pub fn block_op_norm(b: &Block) -> Result<f64> {
    if !b.is_finite() {
        return Err(Error::InvalidInput("block has non-finite entries".into()));
    }
    Ok(b.op_norm())
}

/// Fact: a block `d` equals `(w/2)(Q1 + Q2)` with `w = ||d||` and unitary
/// `Q1`, `Q2`. Built from the SVD `d = U S V^*` with `cos(theta_j) = s_j/w`
/// and `Q1,2 = U diag(e^{+-i theta}) V^*`.
pub fn unitary_split(d: &Block) -> Result<(f64, Block, Block)> {
    if !d.is_finite() {
        return Err(Error::InvalidInput("block has non-finite entries".into()));
    }
    let r = d.r;
    let (u, s, v) = linalg::svd(r, &d.a);
    let w = s.iter().cloned().fold(0.0, f64::max);
    if w == 0.0 {
        return Err(Error::Degenerate("cannot split a zero block".into()));
    }
    let mut q1 = vec![ZERO; r * r];
    let mut q2 = vec![ZERO; r * r];
    for k in 0..r {
        let cos = (s[k] / w).clamp(0.0, 1.0);
        let sin = (1.0 - cos * cos).max(0.0).sqrt();
        let e1 = C64::new(cos, sin);
        let e2 = C64::new(cos, -sin);
        for i in 0..r {
            let uik = u[i * r + k];
            for j in 0..r {
                let vjk = v[j * r + k].conj();
                q1[i * r + j] += uik * e1 * vjk;
                q2[i * r + j] += uik * e2 * vjk;
            }
        }
    }
    Ok((w, Block::from_vec_unchecked(r, q1), Block::from_vec_unchecked(r, q2)))
}

/// Block vector: `n` blocks of `r` complex entries, stored flat.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockVector {
    pub n: usize,
    pub r: usize,
    pub data: Vec<C64>,
}

impl BlockVector {
    pub fn zeros(n: usize, r: usize) -> BlockVector {
        BlockVector {
            n,
            r,
            data: vec![ZERO; n * r],
        }
    }

    pub fn from_vec(n: usize, r: usize, data: Vec<C64>) -> Result<BlockVector> {
        if data.len() != n * r {
            return Err(Error::Dimension {
                expected: n * r,
                got: data.len(),
            });
        }
        Ok(BlockVector { n, r, data })
    }

    pub fn block(&self, i: usize) -> &[C64] {
        &self.data[i * self.r..(i + 1) * self.r]
    }

    pub fn block_mut(&mut self, i: usize) -> &mut [C64] {
        &mut self.data[i * self.r..(i + 1) * self.r]
    }

    pub fn norm(&self) -> f64 {
        linalg::vec_norm(&self.data)
    }

    /// Gather the blocks listed in `idx` into a new vector.
    pub fn gather(&self, idx: &[usize]) -> BlockVector {
        let r = self.r;
        let mut data = Vec::with_capacity(idx.len() * r);
        for &i in idx {
            data.extend_from_slice(self.block(i));
        }
        BlockVector { n: idx.len(), r, data }
    }

    /// Write `src` block `k` to position `idx[k]`.
    pub fn scatter(&mut self, idx: &[usize], src: &BlockVector) {
        for (k, &i) in idx.iter().enumerate() {
            self.block_mut(i).copy_from_slice(src.block(k));
        }
    }

    pub fn axpy(&mut self, a: C64, x: &BlockVector) {
        for (y, x) in self.data.iter_mut().zip(&x.data) {
            *y += a * x;
        }
    }

    pub fn sub(&self, o: &BlockVector) -> BlockVector {
        BlockVector {
            n: self.n,
            r: self.r,
            data: self.data.iter().zip(&o.data).map(|(x, y)| x - y).collect(),
        }
    }
}

/// Block-diagonal matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockDiagonalMatrix {
    pub n: usize,
    pub r: usize,
    pub diag: Vec<Block>,
}

impl BlockDiagonalMatrix {
    pub fn identity(n: usize, r: usize) -> Self {
        BlockDiagonalMatrix {
            n,
            r,
            diag: vec![Block::identity(r); n],
        }
    }

    pub fn is_positive_definite(&self) -> bool {
        self.diag.iter().all(|b| b.min_eig() > 0.0)
    }

    pub fn apply(&self, x: &BlockVector) -> BlockVector {
        let r = self.r;
        let mut y = BlockVector::zeros(self.n, r);
        for i in 0..self.n {
            linalg::gemv_acc(r, ONE, self.diag[i].as_slice(), x.block(i), y.block_mut(i));
        }
        y
    }

    pub fn to_sparse(&self) -> BlockSparseMatrix {
        let mut b = MatrixBuilder::new(self.n, self.r);
        for (i, d) in self.diag.iter().enumerate() {
            b.add(i, i, d.as_slice());
        }
        b.build()
    }
}

/// Rectangular block-sparse matrix in CSR form (used for `M[C,F]`-type
/// couplings).
#[derive(Clone, Debug, PartialEq)]
pub struct RectBlockMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub r: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<C64>,
}

impl RectBlockMatrix {
    pub fn nnz_blocks(&self) -> usize {
        self.cols.len()
    }

    pub fn block(&self, k: usize) -> &[C64] {
        let rr = self.r * self.r;
        &self.vals[k * rr..(k + 1) * rr]
    }

    /// `y = A x`.
    pub fn matvec(&self, x: &BlockVector) -> BlockVector {
        let r = self.r;
        let mut y = BlockVector::zeros(self.nrows, r);
        for i in 0..self.nrows {
            let yi = &mut y.data[i * r..(i + 1) * r];
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.cols[k];
                linalg::gemv_acc(r, ONE, self.block(k), &x.data[j * r..(j + 1) * r], yi);
            }
        }
        y
    }

    /// `y = A^* x`.
    pub fn matvec_adjoint(&self, x: &BlockVector) -> BlockVector {
        let r = self.r;
        let mut y = BlockVector::zeros(self.ncols, r);
        for i in 0..self.nrows {
            let xi = &x.data[i * r..(i + 1) * r];
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.cols[k];
                linalg::gemv_h_acc(r, ONE, self.block(k), xi, &mut y.data[j * r..(j + 1) * r]);
            }
        }
        y
    }
}

/// Hermitian `n x n` matrix of `r x r` blocks, sparse by block, both
/// triangles stored.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockSparseMatrix {
    n: usize,
    r: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<C64>,
}

impl BlockSparseMatrix {
    pub fn zeros(n: usize, r: usize) -> Self {
        BlockSparseMatrix {
            n,
            r,
            row_ptr: vec![0; n + 1],
            cols: Vec::new(),
            vals: Vec::new(),
        }
    }

    pub fn identity(n: usize, r: usize) -> Self {
        BlockDiagonalMatrix::identity(n, r).to_sparse()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn r(&self) -> usize {
        self.r
    }

    /// Number of stored blocks (both triangles, diagonal included).
    pub fn nnz_blocks(&self) -> usize {
        self.cols.len()
    }

    pub fn row_range(&self, i: usize) -> std::ops::Range<usize> {
        self.row_ptr[i]..self.row_ptr[i + 1]
    }

    pub fn col_at(&self, k: usize) -> usize {
        self.cols[k]
    }

    pub fn block_at(&self, k: usize) -> &[C64] {
        let rr = self.r * self.r;
        &self.vals[k * rr..(k + 1) * rr]
    }

    /// Iterate `(column, block)` pairs of block row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, &[C64])> + '_ {
        self.row_range(i).map(move |k| (self.cols[k], self.block_at(k)))
    }

    pub fn degree(&self, i: usize) -> usize {
        self.row(i).filter(|(j, _)| *j != i).count()
    }

    /// Stored block at `(i, j)`, if any.
    pub fn get(&self, i: usize, j: usize) -> Option<&[C64]> {
        let range = self.row_range(i);
        let cols = &self.cols[range.clone()];
        cols.binary_search(&j).ok().map(|p| self.block_at(range.start + p))
    }

    pub fn get_block(&self, i: usize, j: usize) -> Block {
        match self.get(i, j) {
            Some(b) => Block::from_vec_unchecked(self.r, b.to_vec()),
            None => Block::zeros(self.r),
        }
    }

    pub fn diag_block(&self, i: usize) -> Block {
        self.get_block(i, i)
    }

    /// Sum of operator norms of the off-diagonal blocks of row `i`.
    pub fn offdiag_norm_sum(&self, i: usize) -> f64 {
        self.row(i)
            .filter(|(j, _)| *j != i)
            .map(|(_, b)| linalg::op_norm(self.r, b))
            .sum()
    }

    pub fn max_block_norm(&self) -> f64 {
        (0..self.nnz_blocks())
            .map(|k| linalg::op_norm(self.r, self.block_at(k)))
            .fold(0.0, f64::max)
    }

    /// `y = M x`.
    pub fn matvec(&self, x: &BlockVector) -> Result<BlockVector> {
        if x.n != self.n || x.r != self.r {
            return Err(Error::Dimension {
                expected: self.n * self.r,
                got: x.n * x.r,
            });
        }
        Ok(self.matvec_unchecked(x))
    }

    pub(crate) fn matvec_unchecked(&self, x: &BlockVector) -> BlockVector {
        let r = self.r;
        let mut y = BlockVector::zeros(self.n, r);
        for i in 0..self.n {
            let yi = &mut y.data[i * r..(i + 1) * r];
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.cols[k];
                let b = &self.vals[k * r * r..(k + 1) * r * r];
                linalg::gemv_acc(r, ONE, b, &x.data[j * r..(j + 1) * r], yi);
            }
        }
        y
    }

    /// Principal submatrix on the (sorted or unsorted) index list `idx`;
    /// block `k` of the result corresponds to `idx[k]`.
    pub fn principal(&self, idx: &[usize]) -> BlockSparseMatrix {
        let mut map = vec![usize::MAX; self.n];
        for (k, &i) in idx.iter().enumerate() {
            map[i] = k;
        }
        let rr = self.r * self.r;
        let mut row_ptr = Vec::with_capacity(idx.len() + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for &i in idx {
            let mut entries: Vec<(usize, usize)> = self
                .row_range(i)
                .filter_map(|k| {
                    let m = map[self.cols[k]];
                    (m != usize::MAX).then_some((m, k))
                })
                .collect();
            entries.sort_unstable();
            for (m, k) in entries {
                cols.push(m);
                vals.extend_from_slice(&self.vals[k * rr..(k + 1) * rr]);
            }
            row_ptr.push(cols.len());
        }
        BlockSparseMatrix {
            n: idx.len(),
            r: self.r,
            row_ptr,
            cols,
            vals,
        }
    }

    /// Submatrix on `rows x cols`. When the two index sets coincide the
    /// result is the Hermitian principal submatrix.
    pub fn submatrix(&self, rows: &[usize], cols: &[usize]) -> Result<BlockSparseMatrix> {
        if rows != cols {
            return Err(Error::InvalidInput(
                "Hermitian submatrix needs identical row and column sets; use rect_submatrix".into(),
            ));
        }
        if let Some(&bad) = rows.iter().find(|&&i| i >= self.n) {
            return Err(Error::Dimension {
                expected: self.n,
                got: bad,
            });
        }
        Ok(self.principal(rows))
    }

    /// General rectangular submatrix `M[rows, cols]`.
    pub fn rect_submatrix(&self, rows: &[usize], cols: &[usize]) -> RectBlockMatrix {
        let mut map = vec![usize::MAX; self.n];
        for (k, &j) in cols.iter().enumerate() {
            map[j] = k;
        }
        let rr = self.r * self.r;
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut out_cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for &i in rows {
            let mut entries: Vec<(usize, usize)> = self
                .row_range(i)
                .filter_map(|k| {
                    let m = map[self.cols[k]];
                    (m != usize::MAX).then_some((m, k))
                })
                .collect();
            entries.sort_unstable();
            for (m, k) in entries {
                out_cols.push(m);
                vals.extend_from_slice(&self.vals[k * rr..(k + 1) * rr]);
            }
            row_ptr.push(out_cols.len());
        }
        RectBlockMatrix {
            nrows: rows.len(),
            ncols: cols.len(),
            r: self.r,
            row_ptr,
            cols: out_cols,
            vals,
        }
    }

    pub fn add(&self, o: &BlockSparseMatrix) -> Result<BlockSparseMatrix> {
        self.check_same(o)?;
        let mut b = MatrixBuilder::new(self.n, self.r);
        b.add_matrix(self, 1.0);
        b.add_matrix(o, 1.0);
        Ok(b.build())
    }

    pub fn scale(&self, s: f64) -> BlockSparseMatrix {
        let mut out = self.clone();
        for v in out.vals.iter_mut() {
            *v *= s;
        }
        if s == 0.0 {
            return BlockSparseMatrix::zeros(self.n, self.r);
        }
        out
    }

    /// `M + xi I`.
    pub fn pad_identity(&self, xi: f64) -> BlockSparseMatrix {
        let mut b = MatrixBuilder::new(self.n, self.r);
        b.add_matrix(self, 1.0);
        let id = Block::scalar(self.r, xi);
        for i in 0..self.n {
            b.add(i, i, id.as_slice());
        }
        b.build()
    }

    fn check_same(&self, o: &BlockSparseMatrix) -> Result<()> {
        if self.n != o.n || self.r != o.r {
            return Err(Error::Dimension {
                expected: self.n * self.r,
                got: o.n * o.r,
            });
        }
        Ok(())
    }

    /// Rebuild from raw CSR parts, as produced by [`Self::raw_parts`]. The
    /// storage must be sorted, in range, finite, and exactly Hermitian.
    pub fn from_raw_parts(n: usize, r: usize, row_ptr: Vec<usize>, cols: Vec<usize>, vals: Vec<C64>) -> Result<Self> {
        let bad = |msg: &str| Err(Error::InvalidInput(format!("raw matrix parts: {msg}")));
        if r == 0 || row_ptr.len() != n + 1 || row_ptr[0] != 0 || row_ptr[n] != cols.len() {
            return bad("row pointer does not match the block count");
        }
        if vals.len() != cols.len() * r * r {
            return bad("value count does not match the block count");
        }
        for i in 0..n {
            if row_ptr[i] > row_ptr[i + 1] {
                return bad("row pointer decreases");
            }
            let row = &cols[row_ptr[i]..row_ptr[i + 1]];
            if row.iter().any(|&j| j >= n) || row.windows(2).any(|w| w[0] >= w[1]) {
                return bad("columns out of range or unsorted");
            }
        }
        if vals.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return bad("non-finite entries");
        }
        let m = BlockSparseMatrix {
            n,
            r,
            row_ptr,
            cols,
            vals,
        };
        if !m.is_hermitian_storage() {
            return bad("storage is not Hermitian");
        }
        Ok(m)
    }

    /// Raw CSR parts, for serialization.
    pub fn raw_parts(&self) -> (&[usize], &[usize], &[C64]) {
        (&self.row_ptr, &self.cols, &self.vals)
    }

    /// Exact Hermitian-storage check: every `(i,j)` has a mirrored `(j,i)`
    /// equal to its conjugate transpose.
    pub fn is_hermitian_storage(&self) -> bool {
        let r = self.r;
        for i in 0..self.n {
            for (j, b) in self.row(i) {
                match self.get(j, i) {
                    None => return false,
                    Some(bt) => {
                        for p in 0..r {
                            for q in 0..r {
                                if b[p * r + q] != bt[q * r + p].conj() {
                                    return false;
                                }
                            }
                        }
                    }
                }
            }
        }
        true
    }
}

/// Triplet accumulator that assembles a [`BlockSparseMatrix`].
///
/// Duplicate entries are summed; the result is made exactly Hermitian by
/// mirroring the upper triangle, and blocks below [`ZERO_BLOCK_REL`] times
/// the largest block norm are dropped.
#[derive(Clone, Debug)]
pub struct MatrixBuilder {
    n: usize,
    r: usize,
    keys: Vec<(u32, u32)>,
    vals: Vec<C64>,
    compacted: usize,
}

impl MatrixBuilder {
    pub fn new(n: usize, r: usize) -> Self {
        assert!(n < u32::MAX as usize);
        MatrixBuilder {
            n,
            r,
            keys: Vec::new(),
            vals: Vec::new(),
            compacted: 0,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn r(&self) -> usize {
        self.r
    }

    /// Add `b` at position `(i, j)` only. Callers are responsible for also
    /// adding the mirrored block when `i != j`; [`MatrixBuilder::add_herm`]
    /// does both.
    pub fn add(&mut self, i: usize, j: usize, b: &[C64]) {
        debug_assert!(i < self.n && j < self.n);
        debug_assert_eq!(b.len(), self.r * self.r);
        self.keys.push((i as u32, j as u32));
        self.vals.extend_from_slice(b);
        self.maybe_compact();
    }

    /// Add `b` at `(i, j)` and `b^*` at `(j, i)` (once if `i == j`).
    pub fn add_herm(&mut self, i: usize, j: usize, b: &[C64]) {
        if i == j {
            self.add(i, i, b);
        } else {
            self.add(i, j, b);
            let adj = linalg::adjoint(self.r, b);
            self.add(j, i, &adj);
        }
    }

    /// Add `s * I_r` to the diagonal block `i`.
    pub fn add_diag_scalar(&mut self, i: usize, s: f64) {
        let r = self.r;
        let mut b = vec![ZERO; r * r];
        for k in 0..r {
            b[k * r + k] = C64::new(s, 0.0);
        }
        self.add(i, i, &b);
    }

    /// Add `s * M`, with `M` indexed through `map` (block `k` of `M` lands at
    /// `map[k]`).
    pub fn add_matrix_mapped(&mut self, m: &BlockSparseMatrix, s: f64, map: &[usize]) {
        let rr = self.r * self.r;
        let mut tmp = vec![ZERO; rr];
        for i in 0..m.n {
            for k in m.row_range(i) {
                let j = m.cols[k];
                for (t, v) in tmp.iter_mut().zip(&m.vals[k * rr..(k + 1) * rr]) {
                    *t = v * s;
                }
                self.add(map[i], map[j], &tmp);
            }
        }
    }

    pub fn add_matrix(&mut self, m: &BlockSparseMatrix, s: f64) {
        let id: Vec<usize> = (0..m.n).collect();
        self.add_matrix_mapped(m, s, &id);
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    fn maybe_compact(&mut self) {
        if self.keys.len() > 2 * self.compacted + (1 << 20) {
            self.compact();
        }
    }

    /// Sort and merge duplicates in place.
    pub fn compact(&mut self) {
        let rr = self.r * self.r;
        let mut perm: Vec<u32> = (0..self.keys.len() as u32).collect();
        perm.sort_by_key(|&p| self.keys[p as usize]);
        let mut keys: Vec<(u32, u32)> = Vec::with_capacity(perm.len());
        let mut vals: Vec<C64> = Vec::with_capacity(perm.len() * rr);
        for &p in &perm {
            let p = p as usize;
            let k = self.keys[p];
            let src = &self.vals[p * rr..(p + 1) * rr];
            if keys.last() == Some(&k) {
                let base = vals.len() - rr;
                for (d, s) in vals[base..].iter_mut().zip(src) {
                    *d += s;
                }
            } else {
                keys.push(k);
                vals.extend_from_slice(src);
            }
        }
        self.keys = keys;
        self.vals = vals;
        self.compacted = self.keys.len();
    }

    /// Finish assembly.
    pub fn build(mut self) -> BlockSparseMatrix {
        self.compact();
        let r = self.r;
        let rr = r * r;
        let n = self.n;
        // Upper-triangle (incl. diagonal) blocks determine the result.
        let mut upper: Vec<(usize, usize, Vec<C64>)> = Vec::new();
        let mut maxnorm: f64 = 0.0;
        // Locate (j,i) partners for symmetrization of pairs stored one-sided.
        let find = |keys: &Vec<(u32, u32)>, key: (u32, u32)| keys.binary_search(&key).ok();
        for (p, &(i, j)) in self.keys.iter().enumerate() {
            if i > j {
                // only keep lower blocks that have no upper partner
                if find(&self.keys, (j, i)).is_some() {
                    continue;
                }
                let b = linalg::adjoint(r, &self.vals[p * rr..(p + 1) * rr]);
                let nb = linalg::op_norm(r, &b);
                maxnorm = maxnorm.max(nb);
                upper.push((j as usize, i as usize, b));
                continue;
            }
            let mut b = self.vals[p * rr..(p + 1) * rr].to_vec();
            if i == j {
                // symmetrize the diagonal block
                let adj = linalg::adjoint(r, &b);
                for (x, y) in b.iter_mut().zip(&adj) {
                    *x = (*x + y) * 0.5;
                }
            } else if let Some(q) = find(&self.keys, (j, i)) {
                // average with the mirrored block so that one-sided noise cancels
                let mirror = linalg::adjoint(r, &self.vals[q * rr..(q + 1) * rr]);
                for (x, y) in b.iter_mut().zip(&mirror) {
                    *x = (*x + y) * 0.5;
                }
            } else {
                // one-sided upper entry: treat as the full Hermitian pair
            }
            let nb = linalg::op_norm(r, &b);
            maxnorm = maxnorm.max(nb);
            upper.push((i as usize, j as usize, b));
        }
        let thresh = ZERO_BLOCK_REL * maxnorm;
        let mut rows: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
        let mut store: Vec<C64> = Vec::new();
        let mut adjs: Vec<C64> = Vec::new();
        let mut nkept = 0usize;
        for (i, j, b) in &upper {
            let nb = linalg::op_norm(r, b);
            if nb <= thresh || nb == 0.0 {
                continue;
            }
            store.extend_from_slice(b);
            rows[*i].push((*j, nkept * 2));
            if i != j {
                let a = linalg::adjoint(r, b);
                adjs.extend_from_slice(&a);
                rows[*j].push((*i, nkept * 2 + 1));
            } else {
                adjs.extend(std::iter::repeat_n(ZERO, rr));
            }
            nkept += 1;
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for row in rows.iter_mut() {
            row.sort_unstable();
            for &(j, tag) in row.iter() {
                cols.push(j);
                let k = tag / 2;
                if tag % 2 == 0 {
                    vals.extend_from_slice(&store[k * rr..(k + 1) * rr]);
                } else {
                    vals.extend_from_slice(&adjs[k * rr..(k + 1) * rr]);
                }
            }
            row_ptr.push(cols.len());
        }
        BlockSparseMatrix {
            n,
            r,
            row_ptr,
            cols,
            vals,
        }
    }
}

/// Result of the bDD check: per-row slack `lambda_min(M_ii) - (1+alpha) sum ||M_ij||`.
#[derive(Clone, Debug)]
pub struct BddReport {
    pub ok: bool,
    pub slack: Vec<f64>,
    pub worst_row: Option<usize>,
}

fn bdd_report(m: &BlockSparseMatrix, factor: f64) -> BddReport {
    let r = m.r;
    let mut slack = Vec::with_capacity(m.n);
    let mut ok = true;
    let mut worst: Option<(usize, f64)> = None;
    for i in 0..m.n {
        let mut lam = 0.0;
        let mut off = 0.0;
        for (j, b) in m.row(i) {
            if j == i {
                lam = linalg::min_eig(r, b);
            } else {
                off += linalg::op_norm(r, b);
            }
        }
        let s = lam - factor * off;
        let scale = lam.abs().max(factor * off).max(f64::MIN_POSITIVE);
        if s < -1e-10 * scale {
            ok = false;
            let rel = s / scale;
            if worst.is_none_or(|(_, w)| rel < w) {
                worst = Some((i, rel));
            }
        }
        slack.push(s);
    }
    BddReport {
        ok,
        slack,
        worst_row: worst.map(|(i, _)| i),
    }
}

/// bDD test with the per-row slack report.
pub fn is_bdd(m: &BlockSparseMatrix) -> BddReport {
    bdd_report(m, 1.0)
}

/// `alpha`-bDD: `lambda_min(M_ii) >= (1+alpha) sum_{j != i} ||M_ij||`.
pub fn is_alpha_bdd(m: &BlockSparseMatrix, alpha: f64) -> Result<bool> {
    if !(alpha >= 0.0) {
        return Err(Error::InvalidParameter(format!("alpha must be >= 0, got {alpha}")));
    }
    Ok(bdd_report(m, 1.0 + alpha).ok)
}

/// Largest `alpha` for which `m` is `alpha`-bDD (infinite for block-diagonal
/// matrices, negative if not even bDD).
pub fn bdd_ratio(m: &BlockSparseMatrix) -> f64 {
    let r = m.r;
    let mut best = f64::INFINITY;
    for i in 0..m.n {
        let mut lam = 0.0;
        let mut off = 0.0;
        for (j, b) in m.row(i) {
            if j == i {
                lam = linalg::min_eig(r, b);
            } else {
                off += linalg::op_norm(r, b);
            }
        }
        if off > 0.0 {
            best = best.min(lam / off - 1.0);
        }
    }
    best
}

/// One block column of a unitary edge-vertex transfer matrix: blocks `qu` at
/// row `u` and `qv` at row `v` with `qu qu^* = qv qv^* = w I`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransferEdge {
    pub u: usize,
    pub v: usize,
    pub w: f64,
    pub qu: Block,
    pub qv: Block,
}

/// Block edge-vertex transfer matrix `B`.
#[derive(Clone, Debug, PartialEq)]
pub struct UnitaryTransferMatrix {
    pub n: usize,
    pub r: usize,
    pub edges: Vec<TransferEdge>,
}

impl UnitaryTransferMatrix {
    pub fn m(&self) -> usize {
        self.edges.len()
    }

    /// Check the unitary-scaling invariant of every edge.
    pub fn validate(&self) -> Result<()> {
        for (k, e) in self.edges.iter().enumerate() {
            if e.u == e.v {
                return Err(Error::InvalidInput(format!("edge {k} is a self-loop")));
            }
            for q in [&e.qu, &e.qv] {
                let g = q.mul_adj(q).sub(&Block::scalar(self.r, e.w));
                if g.op_norm() > 1e-10 * e.w.max(1.0) {
                    return Err(Error::InvalidInput(format!("edge {k}: block is not a scaled unitary")));
                }
            }
        }
        Ok(())
    }

    /// `B^* x`: one `r`-vector per edge.
    pub fn apply_adjoint(&self, x: &BlockVector) -> Vec<C64> {
        let r = self.r;
        let mut out = vec![ZERO; self.edges.len() * r];
        for (k, e) in self.edges.iter().enumerate() {
            let o = &mut out[k * r..(k + 1) * r];
            linalg::gemv_h_acc(r, ONE, e.qu.as_slice(), x.block(e.u), o);
            linalg::gemv_h_acc(r, ONE, e.qv.as_slice(), x.block(e.v), o);
        }
        out
    }

    /// `B y` for one `r`-vector per edge.
    pub fn apply(&self, y: &[C64]) -> BlockVector {
        let r = self.r;
        let mut out = BlockVector::zeros(self.n, r);
        for (k, e) in self.edges.iter().enumerate() {
            let yk = &y[k * r..(k + 1) * r];
            linalg::gemv_acc(r, ONE, e.qu.as_slice(), yk, out.block_mut(e.u));
            linalg::gemv_acc(r, ONE, e.qv.as_slice(), yk, out.block_mut(e.v));
        }
        out
    }

    /// Accumulate `B B^*` into a builder.
    pub fn add_gram_into(&self, b: &mut MatrixBuilder) {
        for e in &self.edges {
            b.add(e.u, e.u, e.qu.mul_adj(&e.qu).as_slice());
            b.add(e.v, e.v, e.qv.mul_adj(&e.qv).as_slice());
            b.add_herm(e.u, e.v, e.qu.mul_adj(&e.qv).as_slice());
        }
    }
}

/// Split a bDD matrix as `M = X + B B^*` with block-diagonal PSD `X`.
pub fn factorize_bdd(m: &BlockSparseMatrix) -> Result<(BlockDiagonalMatrix, UnitaryTransferMatrix)> {
    let rep = is_bdd(m);
    if !rep.ok {
        let row = rep.worst_row.unwrap_or(0);
        return Err(Error::Precondition {
            row,
            msg: format!("matrix is not bDD (slack {:e})", rep.slack[row]),
        });
    }
    let r = m.r;
    let mut diag = Vec::with_capacity(m.n);
    let mut edges = Vec::new();
    for i in 0..m.n {
        let mut x = m.diag_block(i);
        let off = m.offdiag_norm_sum(i);
        for k in 0..r {
            let v = x.get(k, k) - off;
            x.set(k, k, v);
        }
        diag.push(x);
        for (j, b) in m.row(i) {
            if j <= i {
                continue;
            }
            let blk = Block::from_vec_unchecked(r, b.to_vec());
            let (w, q1, q2) = unitary_split(&blk)?;
            let s = (w / 2.0).sqrt();
            for q in [q1, q2] {
                edges.push(TransferEdge {
                    u: i,
                    v: j,
                    w: w / 2.0,
                    qu: Block::scalar(r, s),
                    qv: q.adjoint().scale(s),
                });
            }
        }
    }
    Ok((
        BlockDiagonalMatrix { n: m.n, r, diag },
        UnitaryTransferMatrix { n: m.n, r, edges },
    ))
}

/// Reassemble `X + B B^*`.
pub fn assemble_factorization(x: &BlockDiagonalMatrix, b: &UnitaryTransferMatrix) -> BlockSparseMatrix {
    let mut mb = MatrixBuilder::new(x.n, x.r);
    for (i, d) in x.diag.iter().enumerate() {
        mb.add(i, i, d.as_slice());
    }
    b.add_gram_into(&mut mb);
    mb.build()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn real(r: usize, v: &[f64]) -> Block {
        Block::from_vec(r, v.iter().map(|&x| C64::new(x, 0.0)).collect()).unwrap()
    }

    fn path2() -> BlockSparseMatrix {
        let mut b = MatrixBuilder::new(2, 1);
        b.add(0, 0, &[C64::new(2.0, 0.0)]);
        b.add(1, 1, &[C64::new(2.0, 0.0)]);
        b.add_herm(0, 1, &[C64::new(-1.0, 0.0)]);
        b.build()
    }

    #[test]
    fn op_norm_examples() {
        assert_eq!(block_op_norm(&Block::identity(3)).unwrap(), 1.0);
        assert!((block_op_norm(&real(2, &[3.0, 0.0, 0.0, 1.0])).unwrap() - 3.0).abs() < 1e-15);
        let bad = Block::from_vec_unchecked(1, vec![C64::new(f64::NAN, 0.0)]);
        assert!(block_op_norm(&bad).is_err());
    }

    #[test]
    fn bdd_examples() {
        let m = path2();
        let rep = is_bdd(&m);
        assert!(rep.ok);
        assert_eq!(rep.slack, vec![1.0, 1.0]);
        let mut b = MatrixBuilder::new(2, 1);
        b.add(0, 0, &[C64::new(1.0, 0.0)]);
        b.add(1, 1, &[C64::new(1.0, 0.0)]);
        b.add_herm(0, 1, &[C64::new(-2.0, 0.0)]);
        assert!(!is_bdd(&b.build()).ok);
        assert!(is_bdd(&BlockSparseMatrix::identity(4, 2)).ok);
    }

    #[test]
    fn alpha_bdd_examples() {
        let mut b = MatrixBuilder::new(2, 1);
        b.add(0, 0, &[C64::new(5.0, 0.0)]);
        b.add(1, 1, &[C64::new(5.0, 0.0)]);
        b.add_herm(0, 1, &[C64::new(-1.0, 0.0)]);
        let m = b.build();
        assert!(is_alpha_bdd(&m, 4.0).unwrap());
        assert!(!is_alpha_bdd(&m, 4.5).unwrap());
        assert!(is_alpha_bdd(&m, -1.0).is_err());
        assert!(is_alpha_bdd(&BlockSparseMatrix::identity(3, 1), 100.0).unwrap());
    }

    #[test]
    fn unitary_split_examples() {
        let (w, q1, q2) = unitary_split(&real(1, &[0.5])).unwrap();
        assert_eq!(w, 0.5);
        assert!((q1.get(0, 0) - ONE).norm() < 1e-15);
        assert!((q2.get(0, 0) - ONE).norm() < 1e-15);

        let (w, q1, q2) = unitary_split(&real(2, &[1.0, 0.0, 0.0, 0.0])).unwrap();
        assert!((w - 1.0).abs() < 1e-15);
        let i = C64::new(0.0, 1.0);
        assert!((q1.get(0, 0) - ONE).norm() < 1e-12);
        assert!((q1.get(1, 1) - i).norm() < 1e-12);
        assert!((q2.get(1, 1) + i).norm() < 1e-12);
        assert!(q1.get(0, 1).norm() < 1e-12 && q1.get(1, 0).norm() < 1e-12);

        assert!(unitary_split(&Block::zeros(2)).is_err());
    }

    #[test]
    fn factorize_path() {
        let m = path2();
        let (x, b) = factorize_bdd(&m).unwrap();
        assert_eq!(x.diag[0].get(0, 0), ONE);
        assert_eq!(x.diag[1].get(0, 0), ONE);
        assert_eq!(b.m(), 2);
        b.validate().unwrap();
        let mut g = MatrixBuilder::new(2, 1);
        b.add_gram_into(&mut g);
        let g = g.build();
        assert!((g.get(0, 0).unwrap()[0] - ONE).norm() < 1e-14);
        assert!((g.get(0, 1).unwrap()[0] + ONE).norm() < 1e-14);
    }

    #[test]
    fn factorize_rejects_non_bdd() {
        let mut b = MatrixBuilder::new(2, 1);
        b.add(0, 0, &[C64::new(1.0, 0.0)]);
        b.add(1, 1, &[C64::new(1.0, 0.0)]);
        b.add_herm(0, 1, &[C64::new(-2.0, 0.0)]);
        match factorize_bdd(&b.build()) {
            Err(Error::Precondition { .. }) => {}
            other => panic!("expected precondition error, got {other:?}"),
        }
    }

    #[test]
    fn plumbing_examples() {
        let m = path2();
        let id = BlockSparseMatrix::identity(2, 1);
        let x = BlockVector::from_vec(2, 1, vec![C64::new(1.0, 2.0), C64::new(-3.0, 0.5)]).unwrap();
        assert_eq!(id.matvec(&x).unwrap(), x);
        let sub = m.submatrix(&[1], &[1]).unwrap();
        assert_eq!(sub.n(), 1);
        assert_eq!(sub.get(0, 0).unwrap()[0], C64::new(2.0, 0.0));
        let z = BlockSparseMatrix::zeros(3, 2).pad_identity(1.0);
        assert_eq!(z, BlockSparseMatrix::identity(3, 2));
        assert!(m.matvec(&BlockVector::zeros(3, 1)).is_err());
    }

    #[test]
    fn builder_drops_numerical_zeros_and_mirrors() {
        let mut b = MatrixBuilder::new(3, 1);
        b.add(0, 0, &[C64::new(1.0, 0.0)]);
        b.add_herm(0, 2, &[C64::new(1e-20, 0.0)]);
        b.add(1, 2, &[C64::new(0.5, 0.25)]);
        let m = b.build();
        assert!(m.get(0, 2).is_none());
        assert_eq!(m.get(2, 1).unwrap()[0], C64::new(0.5, -0.25));
        assert!(m.is_hermitian_storage());
    }
}
