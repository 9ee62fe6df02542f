//! Dense complex linear algebra on small and medium matrices.
//!
//! Everything here works on row-major slices of [`C64`]. Small `r x r` blocks
//! and the oracle's `N x N` matrices share the same kernels; only the
//! eigenvalue path switches to tridiagonal QL once the matrix is too large
//! for cyclic Jacobi to be pleasant.

use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);

/// Below this dimension eigenvalues come from Jacobi, above from tridiagonal QL.
const JACOBI_MAX: usize = 24;

pub fn identity(n: usize) -> Vec<C64> {
    let mut a = vec![ZERO; n * n];
    for i in 0..n {
        a[i * n + i] = ONE;
    }
    a
}

/// `A^*` for a square row-major matrix.
pub fn adjoint(n: usize, a: &[C64]) -> Vec<C64> {
    let mut out = vec![ZERO; n * n];
    for i in 0..n {
        for j in 0..n {
            out[j * n + i] = a[i * n + j].conj();
        }
    }
    out
}

/// `C = A B` for `A: n x k`, `B: k x m`.
pub fn matmul(n: usize, k: usize, m: usize, a: &[C64], b: &[C64]) -> Vec<C64> {
    let mut c = vec![ZERO; n * m];
    for i in 0..n {
        let crow = &mut c[i * m..(i + 1) * m];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == ZERO {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            for j in 0..m {
                crow[j] += aip * brow[j];
            }
        }
    }
    c
}

/// `out += alpha * A B` for square `r x r` blocks.
#[inline]
pub fn gemm_acc(r: usize, alpha: C64, a: &[C64], b: &[C64], out: &mut [C64]) {
    if r == 1 {
        out[0] += alpha * a[0] * b[0];
        return;
    }
    for i in 0..r {
        for p in 0..r {
            let s = alpha * a[i * r + p];
            for j in 0..r {
                out[i * r + j] += s * b[p * r + j];
            }
        }
    }
}

/// `out += alpha * A B^*` for square `r x r` blocks.
#[inline]
pub fn gemm_nh_acc(r: usize, alpha: C64, a: &[C64], b: &[C64], out: &mut [C64]) {
    if r == 1 {
        out[0] += alpha * a[0] * b[0].conj();
        return;
    }
    for i in 0..r {
        for j in 0..r {
            let mut s = ZERO;
            for p in 0..r {
                s += a[i * r + p] * b[j * r + p].conj();
            }
            out[i * r + j] += alpha * s;
        }
    }
}

/// `y += alpha * A x` for an `r x r` block and an `r`-vector.
#[inline]
pub fn gemv_acc(r: usize, alpha: C64, a: &[C64], x: &[C64], y: &mut [C64]) {
    for i in 0..r {
        let mut s = ZERO;
        for j in 0..r {
            s += a[i * r + j] * x[j];
        }
        y[i] += alpha * s;
    }
}

/// `y += alpha * A^* x` for an `r x r` block and an `r`-vector.
#[inline]
pub fn gemv_h_acc(r: usize, alpha: C64, a: &[C64], x: &[C64], y: &mut [C64]) {
    for j in 0..r {
        let mut s = ZERO;
        for i in 0..r {
            s += a[i * r + j].conj() * x[i];
        }
        y[j] += alpha * s;
    }
}

pub fn frob_norm(a: &[C64]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn vec_norm(a: &[C64]) -> f64 {
    frob_norm(a)
}

/// Unconjugated sum `sum a_i b_i`.
pub fn dot_plain(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Conjugated inner product `a^* b`.
pub fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Hermitian eigen-decomposition by cyclic Jacobi rotations.
///
/// Returns eigenvalues in ascending order and the eigenvectors as the columns
/// of a row-major `n x n` unitary matrix. The input is symmetrized first.
pub fn jacobi_eigh(n: usize, a_in: &[C64]) -> (Vec<f64>, Vec<C64>) {
    let (vals, vecs) = jacobi_core(n, a_in, true);
    (vals, vecs.expect("vectors requested"))
}

fn jacobi_core(n: usize, a_in: &[C64], want_vectors: bool) -> (Vec<f64>, Option<Vec<C64>>) {
    let mut a = vec![ZERO; n * n];
    for i in 0..n {
        a[i * n + i] = C64::new(a_in[i * n + i].re, 0.0);
        for j in i + 1..n {
            let z = (a_in[i * n + j] + a_in[j * n + i].conj()) * 0.5;
            a[i * n + j] = z;
            a[j * n + i] = z.conj();
        }
    }
    let mut v = if want_vectors { Some(identity(n)) } else { None };
    let total: f64 = a.iter().map(|z| z.norm_sqr()).sum();
    for _sweep in 0..64 {
        let mut off = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                off += a[i * n + j].norm_sqr();
            }
        }
        if off == 0.0 || off <= 1e-30 * total {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let z = a[p * n + q];
                let mag = z.norm();
                if mag == 0.0 {
                    continue;
                }
                let app = a[p * n + p].re;
                let aqq = a[q * n + q].re;
                if mag <= 1e-18 * (app.abs() + aqq.abs()) {
                    a[p * n + q] = ZERO;
                    a[q * n + p] = ZERO;
                    continue;
                }
                let theta = (aqq - app) / (2.0 * mag);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                let ph = z / mag; // e^{i phi}
                let phc = ph.conj();
                // G = [[c, s], [-s e^{-i phi}, c e^{-i phi}]]
                let g_pp = C64::new(c, 0.0);
                let g_pq = C64::new(s, 0.0);
                let g_qp = -phc * s;
                let g_qq = phc * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = akp * g_pp + akq * g_qp;
                    a[k * n + q] = akp * g_pq + akq * g_qq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = g_pp.conj() * apk + g_qp.conj() * aqk;
                    a[q * n + k] = g_pq.conj() * apk + g_qq.conj() * aqk;
                }
                a[p * n + q] = ZERO;
                a[q * n + p] = ZERO;
                a[p * n + p] = C64::new(app - t * mag, 0.0);
                a[q * n + q] = C64::new(aqq + t * mag, 0.0);
                if let Some(v) = v.as_mut() {
                    for k in 0..n {
                        let vkp = v[k * n + p];
                        let vkq = v[k * n + q];
                        v[k * n + p] = vkp * g_pp + vkq * g_qp;
                        v[k * n + q] = vkp * g_pq + vkq * g_qq;
                    }
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| a[x * n + x].re.total_cmp(&a[y * n + y].re));
    let vals: Vec<f64> = order.iter().map(|&i| a[i * n + i].re).collect();
    let vecs = v.map(|v| {
        let mut out = vec![ZERO; n * n];
        for (newc, &oldc) in order.iter().enumerate() {
            for k in 0..n {
                out[k * n + newc] = v[k * n + oldc];
            }
        }
        out
    });
    (vals, vecs)
}

/// Eigenvalues (ascending) of a Hermitian matrix.
pub fn eigvalsh(n: usize, a: &[C64]) -> Vec<f64> {
    if n <= JACOBI_MAX {
        return jacobi_core(n, a, false).0;
    }
    // Embed into the real symmetric matrix [[Re, -Im], [Im, Re]]; every
    // eigenvalue appears twice.
    let m = 2 * n;
    let mut s = vec![0.0; m * m];
    for i in 0..n {
        for j in 0..n {
            let z = if i == j {
                C64::new(a[i * n + i].re, 0.0)
            } else {
                (a[i * n + j] + a[j * n + i].conj()) * 0.5
            };
            s[i * m + j] = z.re;
            s[(i + n) * m + (j + n)] = z.re;
            s[i * m + (j + n)] = -z.im;
            s[(i + n) * m + j] = z.im;
        }
    }
    let all = sym_eigvals(m, s);
    all.chunks(2).map(|p| 0.5 * (p[0] + p[1])).collect()
}

/// Eigenvalues (ascending) of a real symmetric matrix, Householder
/// tridiagonalization followed by implicit QL.
pub fn sym_eigvals(n: usize, mut a: Vec<f64>) -> Vec<f64> {
    if n == 0 {
        return Vec::new();
    }
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    for i in (1..n).rev() {
        let l = i - 1;
        let mut h = 0.0;
        if l > 0 {
            let scale: f64 = (0..=l).map(|k| a[i * n + k].abs()).sum();
            if scale == 0.0 {
                e[i] = a[i * n + l];
            } else {
                for k in 0..=l {
                    a[i * n + k] /= scale;
                    h += a[i * n + k] * a[i * n + k];
                }
                let f = a[i * n + l];
                let g = if f >= 0.0 { -h.sqrt() } else { h.sqrt() };
                e[i] = scale * g;
                h -= f * g;
                a[i * n + l] = f - g;
                let mut f = 0.0;
                for j in 0..=l {
                    let mut g = 0.0;
                    for k in 0..=j {
                        g += a[j * n + k] * a[i * n + k];
                    }
                    for k in j + 1..=l {
                        g += a[k * n + j] * a[i * n + k];
                    }
                    e[j] = g / h;
                    f += e[j] * a[i * n + j];
                }
                let hh = f / (h + h);
                for j in 0..=l {
                    let f = a[i * n + j];
                    let g = e[j] - hh * f;
                    e[j] = g;
                    for k in 0..=j {
                        a[j * n + k] -= f * e[k] + g * a[i * n + k];
                    }
                }
            }
        } else {
            e[i] = a[i * n + l];
        }
        let _ = h;
    }
    for i in 0..n {
        d[i] = a[i * n + i];
    }
    tqli(&mut d, &mut e);
    d.sort_by(|x, y| x.total_cmp(y));
    d
}

/// Implicit QL on a symmetric tridiagonal matrix (diagonal `d`, subdiagonal
/// `e[1..]`). Eigenvalues are left in `d`, unsorted.
fn tqli(d: &mut [f64], e: &mut [f64]) {
    let n = d.len();
    if n < 2 {
        return;
    }
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 200 {
                break;
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut i = m as isize - 1;
            let mut early = false;
            while i >= l as isize {
                let iu = i as usize;
                let f = s * e[iu];
                let b = c * e[iu];
                r = f.hypot(g);
                e[iu + 1] = r;
                if r == 0.0 {
                    d[iu + 1] -= p;
                    e[m] = 0.0;
                    early = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[iu + 1] - p;
                r = (d[iu] - g) * s + 2.0 * c * b;
                p = s * r;
                d[iu + 1] = g + p;
                g = c * r - b;
                i -= 1;
            }
            if early {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
}

/// Largest singular value of a square `r x r` block.
pub fn op_norm(r: usize, a: &[C64]) -> f64 {
    match r {
        0 => 0.0,
        1 => a[0].norm(),
        2 => {
            // Largest eigenvalue of the 2x2 Hermitian matrix A^* A in closed form.
            let p = a[0].norm_sqr() + a[2].norm_sqr();
            let q = a[1].norm_sqr() + a[3].norm_sqr();
            let h = a[0].conj() * a[1] + a[2].conj() * a[3];
            let lam = 0.5 * (p + q) + (0.25 * (p - q) * (p - q) + h.norm_sqr()).sqrt();
            lam.sqrt()
        }
        _ => {
            let ata = gram(r, a);
            let vals = jacobi_core(r, &ata, false).0;
            vals.last().copied().unwrap_or(0.0).max(0.0).sqrt()
        }
    }
}

/// `A^* A`.
fn gram(r: usize, a: &[C64]) -> Vec<C64> {
    let mut g = vec![ZERO; r * r];
    for i in 0..r {
        for j in 0..r {
            let mut s = ZERO;
            for k in 0..r {
                s += a[k * r + i].conj() * a[k * r + j];
            }
            g[i * r + j] = s;
        }
    }
    g
}

/// Smallest eigenvalue of a Hermitian `r x r` block.
pub fn min_eig(r: usize, a: &[C64]) -> f64 {
    match r {
        0 => 0.0,
        1 => a[0].re,
        2 => {
            let p = a[0].re;
            let q = a[3].re;
            let h = 0.5 * (a[1] + a[2].conj());
            0.5 * (p + q) - (0.25 * (p - q) * (p - q) + h.norm_sqr()).sqrt()
        }
        _ => jacobi_core(r, a, false).0[0],
    }
}

/// Singular value decomposition `A = U diag(s) V^*` of a square block, with
/// singular values in descending order. `U` and `V` are unitary.
pub fn svd(r: usize, a: &[C64]) -> (Vec<C64>, Vec<f64>, Vec<C64>) {
    let ata = gram(r, a);
    let (vals, vecs) = jacobi_eigh(r, &ata);
    // descending order
    let order: Vec<usize> = (0..r).rev().collect();
    let mut v = vec![ZERO; r * r];
    for (c, &o) in order.iter().enumerate() {
        for k in 0..r {
            v[k * r + c] = vecs[k * r + o];
        }
    }
    let smax = vals.last().copied().unwrap_or(0.0).max(0.0).sqrt();
    let mut u = vec![ZERO; r * r];
    let mut s = vec![0.0; r];
    for c in 0..r {
        // candidate column A v_c, orthogonalized against the previous ones
        let mut col = vec![ZERO; r];
        for i in 0..r {
            for k in 0..r {
                col[i] += a[i * r + k] * v[k * r + c];
            }
        }
        for prev in 0..c {
            let mut proj = ZERO;
            for i in 0..r {
                proj += u[i * r + prev].conj() * col[i];
            }
            for i in 0..r {
                col[i] -= proj * u[i * r + prev];
            }
        }
        let nrm = vec_norm(&col);
        if nrm > 1e-13 * smax && nrm > 0.0 {
            for i in 0..r {
                u[i * r + c] = col[i] / nrm;
            }
            s[c] = nrm;
        } else {
            // complete the basis deterministically from the standard basis
            let mut placed = false;
            for e in 0..r {
                let mut cand = vec![ZERO; r];
                cand[e] = ONE;
                for prev in 0..c {
                    let proj = u[e * r + prev].conj();
                    for i in 0..r {
                        cand[i] -= proj * u[i * r + prev];
                    }
                }
                let cn = vec_norm(&cand);
                if cn > 1e-6 {
                    for i in 0..r {
                        u[i * r + c] = cand[i] / cn;
                    }
                    placed = true;
                    break;
                }
            }
            debug_assert!(placed);
            s[c] = 0.0;
        }
    }
    (u, s, v)
}

/// Apply `f` to the eigenvalues of a Hermitian block: `V f(L) V^*`.
pub fn herm_fn(r: usize, a: &[C64], f: impl Fn(f64) -> f64) -> Vec<C64> {
    if r == 1 {
        return vec![C64::new(f(a[0].re), 0.0)];
    }
    let (vals, v) = jacobi_eigh(r, a);
    let mut out = vec![ZERO; r * r];
    for (k, &lam) in vals.iter().enumerate() {
        let fl = f(lam);
        if fl == 0.0 {
            continue;
        }
        for i in 0..r {
            let vik = v[i * r + k] * fl;
            for j in 0..r {
                out[i * r + j] += vik * v[j * r + k].conj();
            }
        }
    }
    out
}

/// Inverse of a Hermitian positive definite block.
pub fn herm_inv(r: usize, a: &[C64]) -> Result<Vec<C64>> {
    let lo = min_eig(r, a);
    if !(lo > 0.0) {
        return Err(Error::Singular(format!(
            "block is not positive definite (min eigenvalue {lo:e})"
        )));
    }
    if r == 1 {
        return Ok(vec![C64::new(1.0 / a[0].re, 0.0)]);
    }
    Ok(herm_fn(r, a, |x| 1.0 / x))
}

/// `A^{-1/2}` of a Hermitian positive definite block.
pub fn herm_inv_sqrt(r: usize, a: &[C64]) -> Result<Vec<C64>> {
    let lo = min_eig(r, a);
    if !(lo > 0.0) {
        return Err(Error::Singular(format!(
            "block is not positive definite (min eigenvalue {lo:e})"
        )));
    }
    Ok(herm_fn(r, a, |x| 1.0 / x.sqrt()))
}

/// Dense Cholesky factorization with symmetric diagonal pivoting:
/// `P A P^T = L L^*`.
#[derive(Clone, Debug)]
pub struct Cholesky {
    pub n: usize,
    /// Row-major lower-triangular factor of the permuted matrix.
    pub l: Vec<C64>,
    /// `perm[k]` is the original index placed at position `k`.
    pub perm: Vec<usize>,
}

impl Cholesky {
    /// Factor a Hermitian positive definite matrix. Pivots below
    /// `rel_tol * max diagonal` are reported as singular.
    pub fn factor(n: usize, a: &[C64], rel_tol: f64) -> Result<Cholesky> {
        let mut w: Vec<C64> = a.to_vec();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut l = vec![ZERO; n * n];
        let maxdiag = (0..n).map(|i| a[i * n + i].re).fold(0.0f64, f64::max);
        let mut diag: Vec<f64> = (0..n).map(|i| w[i * n + i].re).collect();
        for j in 0..n {
            // pivot: largest remaining updated diagonal
            let mut piv = j;
            for k in j + 1..n {
                if diag[k] > diag[piv] {
                    piv = k;
                }
            }
            if piv != j {
                perm.swap(j, piv);
                diag.swap(j, piv);
                // swap rows and columns j, piv of w
                for k in 0..n {
                    w.swap(j * n + k, piv * n + k);
                }
                for k in 0..n {
                    w.swap(k * n + j, k * n + piv);
                }
                for k in 0..j {
                    l.swap(j * n + k, piv * n + k);
                }
            }
            let djj = diag[j];
            if !(djj > rel_tol * maxdiag) || !(djj > 0.0) {
                return Err(Error::Singular(format!(
                    "Cholesky pivot {djj:e} at step {j} (max diagonal {maxdiag:e})"
                )));
            }
            let ljj = djj.sqrt();
            l[j * n + j] = C64::new(ljj, 0.0);
            let (head, tail) = l.split_at_mut((j + 1) * n);
            let lj = &head[j * n..j * n + j];
            for i in j + 1..n {
                let li = &mut tail[(i - j - 1) * n..(i - j - 1) * n + n];
                let mut s = w[i * n + j];
                for k in 0..j {
                    s -= li[k] * lj[k].conj();
                }
                let v = s / ljj;
                li[j] = v;
                diag[i] -= v.norm_sqr();
            }
        }
        Ok(Cholesky { n, l, perm })
    }

    /// Solve `A x = b`.
    pub fn solve(&self, b: &[C64]) -> Vec<C64> {
        let n = self.n;
        let mut y: Vec<C64> = self.perm.iter().map(|&p| b[p]).collect();
        // L y = Pb
        for i in 0..n {
            let row = &self.l[i * n..i * n + i];
            let mut s = y[i];
            for k in 0..i {
                s -= row[k] * y[k];
            }
            y[i] = s / self.l[i * n + i];
        }
        // L^* z = y
        for i in (0..n).rev() {
            let s = y[i] / self.l[i * n + i].conj();
            y[i] = s;
            for k in 0..i {
                y[k] -= self.l[i * n + k].conj() * s;
            }
        }
        let mut x = vec![ZERO; n];
        for (k, &p) in self.perm.iter().enumerate() {
            x[p] = y[k];
        }
        x
    }

    /// Solve `L y = P b` only (forward half), returning `y`.
    pub fn forward(&self, b: &[C64]) -> Vec<C64> {
        let n = self.n;
        let mut y: Vec<C64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let row = &self.l[i * n..i * n + i];
            let mut s = y[i];
            for k in 0..i {
                s -= row[k] * y[k];
            }
            y[i] = s / self.l[i * n + i];
        }
        y
    }
}

/// Plain (unpivoted) lower Cholesky `A = L L^*`, used for congruence
/// transforms in the oracle.
pub fn cholesky_lower(n: usize, a: &[C64]) -> Result<Vec<C64>> {
    let mut l = vec![ZERO; n * n];
    for j in 0..n {
        let mut d = a[j * n + j].re;
        for k in 0..j {
            d -= l[j * n + k].norm_sqr();
        }
        if !(d > 0.0) {
            return Err(Error::InvalidInput(format!(
                "matrix is not positive definite (pivot {d:e} at {j})"
            )));
        }
        let ljj = d.sqrt();
        l[j * n + j] = C64::new(ljj, 0.0);
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k].conj();
            }
            l[i * n + j] = s / ljj;
        }
    }
    Ok(l)
}

/// `L^{-1} A L^{-*}` for lower-triangular `L`.
pub fn congruence_inv(n: usize, l: &[C64], a: &[C64]) -> Vec<C64> {
    // Y = L^{-1} A (solve column by column, row-major friendly: forward on rows)
    let mut y = a.to_vec();
    for i in 0..n {
        for k in 0..i {
            let lik = l[i * n + k];
            if lik == ZERO {
                continue;
            }
            let (head, tail) = y.split_at_mut(i * n);
            let yk = &head[k * n..k * n + n];
            let yi = &mut tail[..n];
            for j in 0..n {
                yi[j] -= lik * yk[j];
            }
        }
        let d = l[i * n + i];
        for j in 0..n {
            y[i * n + j] /= d;
        }
    }
    // Z = Y L^{-*}  <=>  Z^* = L^{-1} Y^*
    let mut z = adjoint(n, &y);
    for i in 0..n {
        for k in 0..i {
            let lik = l[i * n + k];
            if lik == ZERO {
                continue;
            }
            let (head, tail) = z.split_at_mut(i * n);
            let zk = &head[k * n..k * n + n];
            let zi = &mut tail[..n];
            for j in 0..n {
                zi[j] -= lik * zk[j];
            }
        }
        let d = l[i * n + i];
        for j in 0..n {
            z[i * n + j] /= d;
        }
    }
    adjoint(n, &z)
}
