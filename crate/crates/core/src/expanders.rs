//! Explicit expanders approximating complete and complete bipartite graphs,
//! and the weighted constructions that sparsify product demand graphs.
//!
//! Ramanujan graphs come from the Lubotzky–Phillips–Sarnak Cayley graphs of
//! `PSL(2, q)` / `PGL(2, q)`; when no admissible `(p, q)` exists we fall back
//! to random regular multigraphs whose spectrum is checked numerically.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::linalg;
use crate::rng;

/// Product graphs with at most this many edges are returned exactly.
pub const EXACT_EDGE_LIMIT: usize = 4096;

/// Largest vertex count whose spectrum is certified by a dense eigensolve;
/// larger graphs use a deflated power method.
pub const DENSE_CERTIFY_LIMIT: usize = 600;

/// Safety factor applied to power-method spectral estimates.
pub const POWER_MARGIN: f64 = 1.05;

/// Largest number of edges a single expander construction may materialize.
pub const MAX_EXPANDER_EDGES: usize = 50_000_000;

const POWER_ITERS: usize = 200;
const RANDOM_ATTEMPTS: usize = 50;

/// Undirected weighted multigraph with merged parallel edges. Self-loops are
/// allowed; a loop of weight `w` contributes `w` to the adjacency diagonal
/// and to the weighted degree, and nothing to the Laplacian.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedGraph {
    pub n: usize,
    /// `(u, v, w)` with `u <= v`, sorted, unique.
    pub edges: Vec<(usize, usize, f64)>,
    /// For bipartite graphs: vertices `0..a` form one side.
    pub side_a: Option<usize>,
}

impl WeightedGraph {
    /// Merge parallel edges and drop zero weights.
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize, f64)>) -> Self {
        let mut map: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for (u, v, w) in edges {
            debug_assert!(u < n && v < n && w.is_finite() && w >= 0.0);
            let key = if u <= v { (u, v) } else { (v, u) };
            *map.entry(key).or_insert(0.0) += w;
        }
        WeightedGraph {
            n,
            edges: map
                .into_iter()
                .filter(|&(_, w)| w > 0.0)
                .map(|((u, v), w)| (u, v, w))
                .collect(),
            side_a: None,
        }
    }

    pub fn with_sides(mut self, a: usize) -> Self {
        self.side_a = Some(a);
        self
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn scale(&self, s: f64) -> Self {
        WeightedGraph {
            n: self.n,
            edges: self.edges.iter().map(|&(u, v, w)| (u, v, w * s)).collect(),
            side_a: self.side_a,
        }
    }

    /// Weighted degrees (loops counted once).
    pub fn degrees(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n];
        for &(u, v, w) in &self.edges {
            d[u] += w;
            if u != v {
                d[v] += w;
            }
        }
        d
    }

    /// Dense row-major adjacency matrix.
    pub fn adjacency_dense(&self) -> Vec<f64> {
        let n = self.n;
        let mut a = vec![0.0; n * n];
        for &(u, v, w) in &self.edges {
            a[u * n + v] += w;
            if u != v {
                a[v * n + u] += w;
            }
        }
        a
    }

    /// Dense row-major Laplacian (loops ignored).
    pub fn laplacian_dense(&self) -> Vec<f64> {
        let n = self.n;
        let mut l = vec![0.0; n * n];
        for &(u, v, w) in &self.edges {
            if u == v {
                continue;
            }
            l[u * n + u] += w;
            l[v * n + v] += w;
            l[u * n + v] -= w;
            l[v * n + u] -= w;
        }
        l
    }

    /// Adjacency lists for fast products.
    fn adjacency_lists(&self) -> Vec<Vec<(usize, f64)>> {
        let mut adj = vec![Vec::new(); self.n];
        for &(u, v, w) in &self.edges {
            adj[u].push((v, w));
            if u != v {
                adj[v].push((u, w));
            }
        }
        adj
    }
}

/// How a spectral bound was obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CertMethod {
    /// The Ramanujan bound of the LPS construction.
    Lps,
    /// Dense eigensolve of the adjacency matrix.
    Dense,
    /// Deflated power iteration with a safety margin.
    Power,
    /// The graph is complete; nothing to certify.
    Exact,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExpanderCertificate {
    pub degree: f64,
    /// Bound on the non-trivial adjacency eigenvalues in absolute value.
    pub lambda_bound: f64,
    pub method: CertMethod,
    pub bipartite: bool,
}

impl ExpanderCertificate {
    /// `2 ln 2 * lambda / d`, valid when `lambda <= d / 2`.
    pub fn epsilon(&self) -> f64 {
        2.0 * std::f64::consts::LN_2 * self.lambda_bound / self.degree
    }
}

// ---------------------------------------------------------------------------
// primes

pub fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    let mut k = 2;
    while k * k <= n {
        if n.is_multiple_of(k) {
            return false;
        }
        k += 1;
    }
    true
}

/// Smallest prime `p = 1 mod 4` in `[lo, hi]`.
pub fn find_prime_1mod4(lo: u64, hi: u64) -> Option<u64> {
    (lo..=hi).find(|&p| p % 4 == 1 && is_prime(p))
}

fn pow_mod(mut b: u64, mut e: u64, m: u64) -> u64 {
    let mut r = 1 % m;
    b %= m;
    while e > 0 {
        if e & 1 == 1 {
            r = r * b % m;
        }
        b = b * b % m;
        e >>= 1;
    }
    r
}

/// Euler's criterion for an odd prime `q`.
pub fn is_quadratic_residue(a: u64, q: u64) -> bool {
    let a = a % q;
    a != 0 && pow_mod(a, (q - 1) / 2, q) == 1
}

// ---------------------------------------------------------------------------
// LPS graphs

type Mat2 = [u64; 4];

fn mat_mul(x: &Mat2, y: &Mat2, q: u64) -> Mat2 {
    [
        (x[0] * y[0] + x[1] * y[2]) % q,
        (x[0] * y[1] + x[1] * y[3]) % q,
        (x[2] * y[0] + x[3] * y[2]) % q,
        (x[2] * y[1] + x[3] * y[3]) % q,
    ]
}

/// Projective normal form: first nonzero of `(a, b)` scaled to 1.
fn normalize(m: &Mat2, q: u64) -> Mat2 {
    let lead = if m[0] != 0 { m[0] } else { m[1] };
    let inv = pow_mod(lead, q - 2, q);
    [m[0] * inv % q, m[1] * inv % q, m[2] * inv % q, m[3] * inv % q]
}

fn det(m: &Mat2, q: u64) -> u64 {
    (m[0] * m[3] % q + q * q - m[1] * m[2] % q) % q
}

/// The `p + 1` solutions of `p = a0^2 + a1^2 + a2^2 + a3^2` with `a0 > 0`
/// odd and `a1, a2, a3` even.
pub fn four_square_solutions(p: i64) -> Vec<[i64; 4]> {
    let s = (p as f64).sqrt() as i64 + 1;
    let mut out = Vec::new();
    for a0 in (1..=s).step_by(2) {
        for a1 in (-s..=s).filter(|x| x % 2 == 0) {
            for a2 in (-s..=s).filter(|x| x % 2 == 0) {
                for a3 in (-s..=s).filter(|x| x % 2 == 0) {
                    if a0 * a0 + a1 * a1 + a2 * a2 + a3 * a3 == p {
                        out.push([a0, a1, a2, a3]);
                    }
                }
            }
        }
    }
    out
}

/// Number of vertices of the LPS graph for `(p, q)`: `q(q^2-1)/2` when `p`
/// is a residue mod `q` and `q(q^2-1)` otherwise.
pub fn lps_vertex_count(p: u64, q: u64) -> usize {
    let full = (q * (q * q - 1)) as usize;
    if is_quadratic_residue(p, q) {
        full / 2
    } else {
        full
    }
}

/// The `(p+1)`-regular LPS Cayley graph. Bipartite graphs list the `PSL`
/// elements first, so `side_a` is half the vertex count.
pub fn lps_ramanujan(p: u64, q: u64) -> Result<(WeightedGraph, ExpanderCertificate)> {
    for (name, v) in [("p", p), ("q", q)] {
        if !(is_prime(v) && v % 4 == 1) {
            return Err(Error::InvalidParameter(format!(
                "{name} = {v} must be a prime congruent to 1 mod 4"
            )));
        }
    }
    if p == q {
        return Err(Error::InvalidParameter("p and q must differ".into()));
    }
    if q > 200 {
        return Err(Error::SizeLimit {
            what: "LPS modulus q",
            size: q as usize,
            limit: 200,
        });
    }
    check_edge_count(lps_vertex_count(p, q).saturating_mul(p as usize + 1) / 2)?;
    let iq = (1..q)
        .find(|&x| x * x % q == q - 1)
        .expect("-1 is a square mod q for q = 1 mod 4");
    let md = |x: i64| -> u64 { x.rem_euclid(q as i64) as u64 };
    let gens: Vec<Mat2> = four_square_solutions(p as i64)
        .into_iter()
        .map(|[a0, a1, a2, a3]| {
            let i = iq as i64;
            normalize(
                &[md(a0 + i * a1), md(a2 + i * a3), md(-a2 + i * a3), md(a0 - i * a1)],
                q,
            )
        })
        .collect();
    let bipartite = !is_quadratic_residue(p, q);
    // enumerate normalized PGL elements, PSL (square determinant) first
    let mut psl = Vec::new();
    let mut rest = Vec::new();
    let mut push = |m: Mat2| {
        let d = det(&m, q);
        if d == 0 {
            return;
        }
        if is_quadratic_residue(d, q) {
            psl.push(m);
        } else {
            rest.push(m);
        }
    };
    for b in 0..q {
        for c in 0..q {
            for d in 0..q {
                push([1, b, c, d]);
            }
        }
    }
    for c in 0..q {
        for d in 0..q {
            push([0, 1, c, d]);
        }
    }
    let half = psl.len();
    let verts: Vec<Mat2> = if bipartite {
        psl.into_iter().chain(rest).collect()
    } else {
        psl
    };
    let code = |m: &Mat2| (((m[0] * q + m[1]) * q + m[2]) * q + m[3]) as usize;
    let mut index = vec![usize::MAX; (q * q * q * q) as usize];
    for (k, m) in verts.iter().enumerate() {
        index[code(m)] = k;
    }
    let mut edges = Vec::with_capacity(verts.len() * gens.len() / 2);
    for (ix, x) in verts.iter().enumerate() {
        for g in &gens {
            let y = normalize(&mat_mul(x, g, q), q);
            let iy = index[code(&y)];
            debug_assert!(iy != usize::MAX);
            if ix <= iy {
                edges.push((ix, iy, 1.0));
            }
        }
    }
    let mut g = WeightedGraph::from_edges(verts.len(), edges);
    if bipartite {
        g = g.with_sides(half);
    }
    Ok((
        g,
        ExpanderCertificate {
            degree: (p + 1) as f64,
            lambda_bound: 2.0 * (p as f64).sqrt(),
            method: CertMethod::Lps,
            bipartite,
        },
    ))
}

/// Bipartite lift with adjacency `[[0, A], [A^T, 0]]`.
pub fn double_cover(g: &WeightedGraph) -> WeightedGraph {
    let n = g.n;
    let edges = g.edges.iter().flat_map(|&(u, v, w)| {
        let a = (u, n + v, w);
        let b = (v, n + u, w);
        if u == v {
            vec![a]
        } else {
            vec![a, b]
        }
    });
    WeightedGraph::from_edges(2 * n, edges).with_sides(n)
}

/// Collapse a bipartite graph onto its first side: vertex `v` of the
/// second side is identified with `pi[v - a]`. The adjacency becomes
/// `A + A^T`, so edges `(u, v)` with `pi(v) = u` turn into loops of weight 2.
pub fn collapse(g: &WeightedGraph, pi: &[usize]) -> Result<WeightedGraph> {
    let a = g
        .side_a
        .ok_or_else(|| Error::InvalidInput("collapse needs a bipartite graph".into()))?;
    let b = g.n - a;
    if pi.len() != b || a != b {
        return Err(Error::InvalidParameter(
            "pi must be a bijection between the sides".into(),
        ));
    }
    let mut seen = vec![false; a];
    for &t in pi {
        if t >= a || seen[t] {
            return Err(Error::InvalidParameter(
                "pi must be a bijection between the sides".into(),
            ));
        }
        seen[t] = true;
    }
    let mut edges = Vec::with_capacity(g.edges.len());
    for &(u, v, w) in &g.edges {
        if u >= a || v < a {
            return Err(Error::InvalidInput("graph has an edge inside one side".into()));
        }
        let t = pi[v - a];
        // A + A^T doubles diagonal entries
        edges.push((u, t, if u == t { 2.0 * w } else { w }));
    }
    Ok(WeightedGraph::from_edges(a, edges))
}

// ---------------------------------------------------------------------------
// spectral certification

/// Largest absolute non-trivial adjacency eigenvalue, by dense eigensolve.
/// Trivial eigenvalues are the top one and, for bipartite graphs, the bottom.
pub fn dense_nontrivial_lambda(g: &WeightedGraph) -> f64 {
    let ev = linalg::sym_eigvals(g.n, g.adjacency_dense());
    let lo = if g.side_a.is_some() { 1 } else { 0 };
    let hi = ev.len().saturating_sub(1);
    ev[lo..hi].iter().map(|x| x.abs()).fold(0.0, f64::max)
}

fn power_nontrivial_lambda(g: &WeightedGraph, seed: u64) -> f64 {
    let n = g.n;
    let adj = g.adjacency_lists();
    let mut deflate: Vec<Vec<f64>> = vec![vec![1.0 / (n as f64).sqrt(); n]];
    if let Some(a) = g.side_a {
        let s = 1.0 / (n as f64).sqrt();
        deflate.push((0..n).map(|i| if i < a { s } else { -s }).collect());
    }
    let project = |x: &mut Vec<f64>| {
        for d in &deflate {
            let c: f64 = x.iter().zip(d).map(|(a, b)| a * b).sum();
            x.iter_mut().zip(d).for_each(|(a, b)| *a -= c * b);
        }
    };
    let apply = |x: &[f64]| -> Vec<f64> { adj.iter().map(|row| row.iter().map(|&(j, w)| w * x[j]).sum()).collect() };
    let mut r = rng::rng(seed, 0x5eed);
    let mut x: Vec<f64> = (0..n).map(|_| r.random::<f64>() - 0.5).collect();
    let mut est: f64 = 0.0;
    for _ in 0..POWER_ITERS {
        project(&mut x);
        let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if nx == 0.0 {
            break;
        }
        x.iter_mut().for_each(|v| *v /= nx);
        let ax = apply(&x);
        let mut a2x = apply(&ax);
        project(&mut a2x);
        est = est.max(ax.iter().map(|v| v * v).sum::<f64>().sqrt());
        x = a2x;
    }
    est
}

/// Non-trivial spectral bound with its method.
pub fn certify_lambda(g: &WeightedGraph, seed: u64) -> (f64, CertMethod) {
    if g.n <= DENSE_CERTIFY_LIMIT {
        (dense_nontrivial_lambda(g), CertMethod::Dense)
    } else {
        (power_nontrivial_lambda(g, seed) * POWER_MARGIN, CertMethod::Power)
    }
}

pub fn complete_graph(n: usize) -> WeightedGraph {
    WeightedGraph::from_edges(n, (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j, 1.0))))
}

pub fn complete_bipartite(a: usize, b: usize) -> WeightedGraph {
    WeightedGraph::from_edges(a + b, (0..a).flat_map(|i| (0..b).map(move |j| (i, a + j, 1.0)))).with_sides(a)
}

/// `d`-regular multigraph built from `d/2` random permutations, resampled
/// until its non-trivial spectrum is below `eps_target * d / (2 ln 2)`.
pub fn random_regular_certified(
    n: usize,
    d: usize,
    eps_target: f64,
    seed: u64,
) -> Result<(WeightedGraph, ExpanderCertificate)> {
    if n < 2 {
        return Err(Error::InvalidParameter("need at least 2 vertices".into()));
    }
    check_edge_count(n.saturating_mul(d.min(n - 1)) / 2)?;
    if d + 1 >= n {
        return Ok((
            complete_graph(n),
            ExpanderCertificate {
                degree: (n - 1) as f64,
                lambda_bound: 1.0,
                method: CertMethod::Exact,
                bipartite: false,
            },
        ));
    }
    if d == 0 || d % 2 == 1 {
        return Err(Error::InvalidParameter(format!(
            "degree must be even and positive, got {d}"
        )));
    }
    let target = eps_target * d as f64 / (2.0 * std::f64::consts::LN_2);
    let mut best = f64::INFINITY;
    for attempt in 0..RANDOM_ATTEMPTS as u64 {
        let mut r = rng::rng(seed, attempt);
        let mut edges = Vec::with_capacity(n * d / 2);
        let mut perm: Vec<usize> = (0..n).collect();
        for _ in 0..d / 2 {
            perm.shuffle(&mut r);
            for (i, &j) in perm.iter().enumerate() {
                // A = sum (P + P^T); a fixed point gives a loop of weight 2
                edges.push((i, j, if i == j { 2.0 } else { 1.0 }));
            }
        }
        let g = WeightedGraph::from_edges(n, edges);
        let (lam, method) = certify_lambda(&g, rng::derive(seed, attempt));
        best = best.min(lam);
        if lam <= target && lam <= d as f64 / 2.0 {
            return Ok((
                g,
                ExpanderCertificate {
                    degree: d as f64,
                    lambda_bound: lam,
                    method,
                    bipartite: false,
                },
            ));
        }
    }
    Err(Error::Certification(format!(
        "no {d}-regular graph on {n} vertices reached lambda <= {target:.3} in {RANDOM_ATTEMPTS} attempts (best {best:.3})"
    )))
}

/// `d`-regular bipartite multigraph on `n + n` vertices from `d` random
/// perfect matchings, certified like [`random_regular_certified`].
pub fn random_bipartite_certified(
    n: usize,
    d: usize,
    eps_target: f64,
    seed: u64,
) -> Result<(WeightedGraph, ExpanderCertificate)> {
    if n == 0 {
        return Err(Error::InvalidParameter("need at least 1 vertex per side".into()));
    }
    check_edge_count(n.saturating_mul(d.min(n)))?;
    if d >= n {
        return Ok((
            complete_bipartite(n, n),
            ExpanderCertificate {
                degree: n as f64,
                lambda_bound: 0.0,
                method: CertMethod::Exact,
                bipartite: true,
            },
        ));
    }
    if d == 0 {
        return Err(Error::InvalidParameter("degree must be positive".into()));
    }
    let target = eps_target * d as f64 / (2.0 * std::f64::consts::LN_2);
    let mut best = f64::INFINITY;
    for attempt in 0..RANDOM_ATTEMPTS as u64 {
        let mut r = rng::rng(seed, attempt);
        let mut edges = Vec::with_capacity(n * d);
        let mut perm: Vec<usize> = (0..n).collect();
        for _ in 0..d {
            perm.shuffle(&mut r);
            edges.extend(perm.iter().enumerate().map(|(i, &j)| (i, n + j, 1.0)));
        }
        let g = WeightedGraph::from_edges(2 * n, edges).with_sides(n);
        let (lam, method) = certify_lambda(&g, rng::derive(seed, attempt));
        best = best.min(lam);
        if lam <= target && lam <= d as f64 / 2.0 {
            return Ok((
                g,
                ExpanderCertificate {
                    degree: d as f64,
                    lambda_bound: lam,
                    method,
                    bipartite: true,
                },
            ));
        }
    }
    Err(Error::Certification(format!(
        "no {d}-regular bipartite graph on {n}+{n} vertices reached lambda <= {target:.3} (best {best:.3})"
    )))
}

// ---------------------------------------------------------------------------
// approximations of K_n and K_{n,n}

/// A scaled expander approximating `K_{n'}` or `K_{n',n'}`.
#[derive(Clone, Debug)]
pub struct ExpanderApprox {
    /// Vertices per side (bipartite) or in total.
    pub n_prime: usize,
    /// Graph scaled by `n' / d`.
    pub graph: WeightedGraph,
    pub achieved_eps: f64,
    pub certificate: ExpanderCertificate,
}

fn scaled(n_prime: usize, g: WeightedGraph, cert: ExpanderCertificate) -> ExpanderApprox {
    let s = n_prime as f64 / cert.degree;
    let achieved_eps = match cert.method {
        CertMethod::Exact => 0.0,
        _ => cert.epsilon(),
    };
    ExpanderApprox {
        n_prime,
        graph: if cert.method == CertMethod::Exact {
            g
        } else {
            g.scale(s)
        },
        achieved_eps,
        certificate: cert,
    }
}

fn primes_1mod4(lo: u64, hi: u64) -> impl Iterator<Item = u64> {
    (lo..=hi).filter(|&p| p % 4 == 1 && is_prime(p))
}

/// LPS-derived non-bipartite graph with exactly `q(q^2-1)/2` vertices.
fn lps_complete(p: u64, q: u64) -> Result<(WeightedGraph, ExpanderCertificate)> {
    let (g, cert) = lps_ramanujan(p, q)?;
    if !cert.bipartite {
        return Ok((g, cert));
    }
    let half = g.side_a.expect("bipartite");
    let pi: Vec<usize> = (0..half).collect();
    let c = collapse(&g, &pi)?;
    Ok((
        c,
        ExpanderCertificate {
            degree: 2.0 * cert.degree,
            lambda_bound: 2.0 * cert.lambda_bound,
            method: CertMethod::Lps,
            bipartite: false,
        },
    ))
}

/// LPS-derived bipartite graph with `q(q^2-1)/2` vertices per side.
fn lps_bipartite(p: u64, q: u64) -> Result<(WeightedGraph, ExpanderCertificate)> {
    let (g, cert) = lps_ramanujan(p, q)?;
    if cert.bipartite {
        return Ok((g, cert));
    }
    Ok((
        double_cover(&g),
        ExpanderCertificate {
            bipartite: true,
            ..cert
        },
    ))
}

fn psl_size(q: u64) -> usize {
    (q * (q * q - 1) / 2) as usize
}

/// Smallest even degree whose typical random-regular spectrum meets `eps`.
fn random_degree(eps: f64) -> usize {
    let c = eps / (2.0 * std::f64::consts::LN_2);
    // sqrt(d - 1) <= a d holds from the larger root of a^2 d^2 - d + 1 on
    let a = c / 2.3;
    let root = if 4.0 * a * a < 1.0 {
        (1.0 + (1.0 - 4.0 * a * a).sqrt()) / (2.0 * a * a)
    } else {
        4.0
    };
    let mut d = ((root.min(1e15) as usize).saturating_sub(4) & !1).max(4);
    while 2.0 * ((d - 1) as f64).sqrt() * 1.15 > c * d as f64 {
        d += 2;
    }
    d
}

/// Approximation of `K_{n'}` with `n <= n' <= 8n`, following the LPS recipe
/// (`p` in `[eps^-2/2, eps^-2]`, `p < q`) and falling back to a certified
/// random regular graph on exactly `n` vertices. Small `n` is exact.
pub fn expander_approx_complete(n: usize, eps: f64, seed: u64) -> Result<ExpanderApprox> {
    check_eps(eps)?;
    if n <= 64 {
        return Ok(exact_complete(n));
    }
    let plo = (0.5 / (eps * eps)).ceil() as u64;
    let phi = (1.0 / (eps * eps)).floor() as u64;
    for q in primes_1mod4(5, 200) {
        let sz = psl_size(q);
        if sz < n {
            continue;
        }
        if sz > 8 * n {
            break;
        }
        for p in primes_1mod4(plo, phi.min(q - 1)) {
            let (g, cert) = lps_complete(p, q)?;
            if cert.lambda_bound <= cert.degree / 2.0 {
                return Ok(scaled(sz, g, cert));
            }
        }
    }
    complete_random(n, eps, seed)
}

/// Bipartite analogue of [`expander_approx_complete`].
pub fn expander_approx_bipartite(n: usize, eps: f64, seed: u64) -> Result<ExpanderApprox> {
    check_eps(eps)?;
    if n * n <= EXACT_EDGE_LIMIT {
        return Ok(exact_bipartite(n));
    }
    let plo = (0.5 / (eps * eps)).ceil() as u64;
    let phi = (1.0 / (eps * eps)).floor() as u64;
    for q in primes_1mod4(5, 200) {
        let sz = psl_size(q);
        if sz < n {
            continue;
        }
        if sz > 8 * n {
            break;
        }
        for p in primes_1mod4(plo, phi.min(q - 1)) {
            let (g, cert) = lps_bipartite(p, q)?;
            if cert.lambda_bound <= cert.degree / 2.0 {
                return Ok(scaled(sz, g, cert));
            }
        }
    }
    bipartite_random(n, eps, seed)
}

fn exact_complete(n: usize) -> ExpanderApprox {
    ExpanderApprox {
        n_prime: n,
        graph: complete_graph(n),
        achieved_eps: 0.0,
        certificate: ExpanderCertificate {
            degree: n.saturating_sub(1) as f64,
            lambda_bound: 1.0,
            method: CertMethod::Exact,
            bipartite: false,
        },
    }
}

fn exact_bipartite(n: usize) -> ExpanderApprox {
    ExpanderApprox {
        n_prime: n,
        graph: complete_bipartite(n, n),
        achieved_eps: 0.0,
        certificate: ExpanderCertificate {
            degree: n as f64,
            lambda_bound: 0.0,
            method: CertMethod::Exact,
            bipartite: true,
        },
    }
}

fn complete_random(n: usize, eps: f64, seed: u64) -> Result<ExpanderApprox> {
    let d = random_degree(eps);
    let (g, cert) = random_regular_certified(n, d, eps, seed)?;
    Ok(scaled(n, g, cert))
}

fn bipartite_random(n: usize, eps: f64, seed: u64) -> Result<ExpanderApprox> {
    let d = random_degree(eps);
    let (g, cert) = random_bipartite_certified(n, d, eps, seed)?;
    Ok(scaled(n, g, cert))
}

/// An approximation of `K_{n'}` (or `K_{n',n'}`) with `n' >= n_min` and
/// achieved accuracy at most `eps`: an LPS graph when one of admissible size
/// meets `eps`, otherwise a certified random graph on exactly `n_min`
/// vertices.
fn expander_at_least(n_min: usize, eps: f64, bipartite: bool, seed: u64) -> Result<ExpanderApprox> {
    for q in primes_1mod4(5, 200) {
        let sz = psl_size(q);
        if sz < n_min {
            continue;
        }
        if sz > 8 * n_min {
            break;
        }
        let rnd_edges = n_min as f64 * random_degree(eps) as f64;
        for p in primes_1mod4(5, q - 1) {
            // screen with the Ramanujan bound before building anything
            let (lam, deg) = (2.0 * (p as f64).sqrt(), (p + 1) as f64);
            if lam > deg / 2.0 || 2.0 * std::f64::consts::LN_2 * lam / deg > eps {
                continue;
            }
            if sz as f64 * deg > 1.5 * rnd_edges {
                break;
            }
            let (g, cert) = if bipartite {
                lps_bipartite(p, q)?
            } else {
                lps_complete(p, q)?
            };
            if cert.lambda_bound <= cert.degree / 2.0 && cert.epsilon() <= eps {
                // prefer random graphs when they are much sparser
                let lps_edges = sz as f64 * cert.degree;
                if lps_edges <= 1.5 * rnd_edges {
                    return Ok(scaled(sz, g, cert));
                }
            }
        }
    }
    if bipartite {
        bipartite_random(n_min, eps, seed)
    } else {
        complete_random(n_min, eps, seed)
    }
}

fn check_edge_count(edges: usize) -> Result<()> {
    if edges > MAX_EXPANDER_EDGES {
        return Err(Error::SizeLimit {
            what: "expander edge count",
            size: edges,
            limit: MAX_EXPANDER_EDGES,
        });
    }
    Ok(())
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::InvalidParameter(format!("epsilon must be positive, got {eps}")));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// weighted constructions

/// Diagnostics of a weighted construction.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedExpanderReport {
    /// Size of the high-demand set (per side for bipartite inputs).
    pub n_hat: usize,
    /// Number of low-demand split vertices (summed over both sides).
    pub k: usize,
    /// The split produced more low-demand vertices than original vertices.
    pub k_exceeds_n: bool,
    pub exact: bool,
    pub expander_eps: f64,
}

/// Product demand graph: complete graph with weights `d_i d_j`.
pub fn product_demand_graph(d: &[f64]) -> WeightedGraph {
    let n = d.len();
    WeightedGraph::from_edges(n, (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j, d[i] * d[j]))))
}

/// Bipartite product demand graph on `a.len() + b.len()` vertices.
pub fn bipartite_demand_graph(a: &[f64], b: &[f64]) -> WeightedGraph {
    let na = a.len();
    WeightedGraph::from_edges(
        na + b.len(),
        (0..na).flat_map(|i| (0..b.len()).map(move |j| (i, na + j, a[i] * b[j]))),
    )
    .with_sides(na)
}

fn check_demands(d: &[f64]) -> Result<()> {
    if let Some(x) = d.iter().find(|x| !(**x > 0.0) || !x.is_finite()) {
        return Err(Error::InvalidInput(format!("demands must be positive, got {x}")));
    }
    Ok(())
}

/// A split of demands into copies: `owner[v]` is the original vertex of
/// copy `v`, `demand[v]` its demand; the first `n_hat` copies form `H`.
struct Split {
    owner: Vec<usize>,
    demand: Vec<f64>,
}

/// Split every vertex into `floor(d_i/t)` copies of demand `t` plus a
/// remainder, choosing the largest `t` with at least `n_hat` full copies.
fn split_demands(d: &[f64], n_hat: usize) -> Split {
    let total: f64 = d.iter().sum();
    let count = |t: f64| d.iter().map(|&x| (x / t).floor() as usize).sum::<usize>();
    // t = total / (n_hat + n) always has enough copies; total / n_hat rarely.
    let mut lo = total / (n_hat + d.len()) as f64;
    let mut hi = total / n_hat as f64;
    if count(hi) >= n_hat {
        lo = hi;
    } else {
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if count(mid) >= n_hat {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }
    let t = lo;
    let mut full = Vec::new();
    let mut extra = Vec::new();
    for (i, &x) in d.iter().enumerate() {
        let f = (x / t).floor() as usize;
        for _ in 0..f {
            full.push(i);
        }
        let rem = x - t * f as f64;
        if rem > 1e-12 * x {
            extra.push((i, rem));
        }
    }
    let mut owner = Vec::with_capacity(full.len() + extra.len());
    let mut demand = Vec::with_capacity(full.len() + extra.len());
    for &i in &full {
        owner.push(i);
        demand.push(t);
    }
    for &(i, rem) in &extra {
        owner.push(i);
        demand.push(rem);
    }
    Split { owner, demand }
}

/// Stars from every low vertex of `low` into its part of the high set:
/// high copies `high_base + h` for `h` in `0..n_high`, partitioned
/// round-robin into `k` parts.
fn add_stars(
    edges: &mut Vec<(usize, usize, f64)>,
    low: &[(usize, f64)],
    n_high: usize,
    high_demand: f64,
    high_owner: impl Fn(usize) -> usize,
) {
    let k = low.len();
    if k == 0 {
        return;
    }
    for (l, &(lo_owner, lo_dem)) in low.iter().enumerate() {
        // V_l = { h : h mod k == l }
        let size = (n_high + k - 1 - l) / k;
        if size == 0 {
            continue;
        }
        let w = (n_high as f64 / size as f64) * lo_dem * high_demand;
        let mut h = l;
        while h < n_high {
            edges.push((lo_owner, high_owner(h), w));
            h += k;
        }
    }
}

/// Sparse approximation of the product demand graph of `d`.
pub fn weighted_expander(d: &[f64], eps: f64, seed: u64) -> Result<WeightedGraph> {
    weighted_expander_report(d, eps, seed).map(|(g, _)| g)
}

pub fn weighted_expander_report(d: &[f64], eps: f64, seed: u64) -> Result<(WeightedGraph, WeightedExpanderReport)> {
    check_eps(eps)?;
    check_demands(d)?;
    let n = d.len();
    if n * n.saturating_sub(1) / 2 <= EXACT_EDGE_LIMIT {
        return Ok((
            product_demand_graph(d),
            WeightedExpanderReport {
                n_hat: n,
                k: 0,
                k_exceeds_n: false,
                exact: true,
                expander_eps: 0.0,
            },
        ));
    }
    let n_min = (2.0 * n as f64 / (eps * eps)).floor() as usize + 1;
    let exp = expander_at_least(n_min, eps, false, seed)?;
    let n_hat = exp.n_prime;
    let split = split_demands(d, n_hat);
    let t = split.demand[0];
    let low: Vec<(usize, f64)> = (n_hat..split.owner.len())
        .map(|v| (split.owner[v], split.demand[v]))
        .collect();
    let mut edges: Vec<(usize, usize, f64)> = Vec::new();
    let t2 = t * t;
    for &(u, v, w) in &exp.graph.edges {
        let (a, b) = (split.owner[u], split.owner[v]);
        if a != b {
            edges.push((a, b, t2 * w));
        }
    }
    let mut star_edges = Vec::new();
    add_stars(&mut star_edges, &low, n_hat, t, |h| split.owner[h]);
    edges.extend(star_edges.into_iter().filter(|&(a, b, _)| a != b));
    let k = low.len();
    Ok((
        WeightedGraph::from_edges(n, edges),
        WeightedExpanderReport {
            n_hat,
            k,
            k_exceeds_n: k > n,
            exact: false,
            expander_eps: exp.achieved_eps,
        },
    ))
}

/// Sparse approximation of the bipartite product demand graph of
/// `(da, db)`; vertices `0..da.len()` are side A.
pub fn weighted_bipartite_expander(da: &[f64], db: &[f64], eps: f64, seed: u64) -> Result<WeightedGraph> {
    weighted_bipartite_expander_report(da, db, eps, seed).map(|(g, _)| g)
}

pub fn weighted_bipartite_expander_report(
    da: &[f64],
    db: &[f64],
    eps: f64,
    seed: u64,
) -> Result<(WeightedGraph, WeightedExpanderReport)> {
    check_eps(eps)?;
    check_demands(da)?;
    check_demands(db)?;
    let (na, nb) = (da.len(), db.len());
    if na * nb <= EXACT_EDGE_LIMIT {
        return Ok((
            bipartite_demand_graph(da, db),
            WeightedExpanderReport {
                n_hat: na.max(nb),
                k: 0,
                k_exceeds_n: false,
                exact: true,
                expander_eps: 0.0,
            },
        ));
    }
    let n_max = na.max(nb);
    let n_min = (2.0 * n_max as f64 / (eps * eps)).floor() as usize + 1;
    let exp = expander_at_least(n_min, eps, true, seed)?;
    let n_hat = exp.n_prime;
    let sa = split_demands(da, n_hat);
    let sb = split_demands(db, n_hat);
    let (ta, tb) = (sa.demand[0], sb.demand[0]);
    let side = exp.graph.side_a.expect("bipartite expander");
    debug_assert_eq!(side, n_hat);
    let mut edges: Vec<(usize, usize, f64)> = Vec::new();
    for &(u, v, w) in &exp.graph.edges {
        let (x, y) = if u < side { (u, v - side) } else { (v, u - side) };
        edges.push((sa.owner[x], na + sb.owner[y], ta * tb * w));
    }
    let low_a: Vec<(usize, f64)> = (n_hat..sa.owner.len()).map(|v| (sa.owner[v], sa.demand[v])).collect();
    let low_b: Vec<(usize, f64)> = (n_hat..sb.owner.len())
        .map(|v| (na + sb.owner[v], sb.demand[v]))
        .collect();
    add_stars(&mut edges, &low_a, n_hat, tb, |h| na + sb.owner[h]);
    add_stars(&mut edges, &low_b, n_hat, ta, |h| sa.owner[h]);
    let k = low_a.len() + low_b.len();
    Ok((
        WeightedGraph::from_edges(na + nb, edges).with_sides(na),
        WeightedExpanderReport {
            n_hat,
            k,
            k_exceeds_n: low_a.len() > na || low_b.len() > nb,
            exact: false,
            expander_eps: exp.achieved_eps,
        },
    ))
}

/// Number of edges [`weighted_expander`] is expected to produce for `n`
/// demands at accuracy `eps` when it does not fall back to the exact graph.
pub fn estimated_expander_edges(n: usize, eps: f64) -> usize {
    let n_hat = 2.0 * n as f64 / (eps * eps);
    (n_hat * random_degree(eps) as f64 / 2.0 + n_hat) as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oversized_expanders_are_refused() {
        let e = random_regular_certified(200_000, 600, 0.1, 1).unwrap_err();
        assert!(matches!(e, Error::SizeLimit { .. }), "{e}");
        let e = random_bipartite_certified(100_000, 600, 0.1, 1).unwrap_err();
        assert!(matches!(e, Error::SizeLimit { .. }), "{e}");
    }

    #[test]
    fn prime_search_examples() {
        assert_eq!(find_prime_1mod4(5, 10), Some(5));
        assert_eq!(find_prime_1mod4(6, 12), None);
        assert_eq!(find_prime_1mod4(10, 30), Some(13));
    }

    #[test]
    fn four_squares_count() {
        for p in [5i64, 13, 17, 29, 37] {
            assert_eq!(four_square_solutions(p).len() as i64, p + 1);
        }
    }

    #[test]
    fn residue_oracle() {
        let squares: Vec<u64> = (1..13).map(|x| x * x % 13).collect();
        for a in 1..13 {
            assert_eq!(is_quadratic_residue(a, 13), squares.contains(&a));
        }
        assert!(!is_quadratic_residue(5, 13));
    }

    #[test]
    fn lps_small_is_ramanujan() {
        let (g, cert) = lps_ramanujan(13, 5).unwrap();
        assert!(cert.bipartite);
        assert_eq!(g.n, 120);
        assert!(g.degrees().iter().all(|&d| (d - 14.0).abs() < 1e-12));
        let lam = dense_nontrivial_lambda(&g);
        assert!(lam <= cert.lambda_bound + 1e-8, "{lam}");
    }

    #[test]
    fn cover_and_collapse_examples() {
        let e = WeightedGraph::from_edges(2, [(0, 1, 1.0)]);
        let dc = double_cover(&e);
        assert_eq!(dc.n, 4);
        assert_eq!(dc.num_edges(), 2);
        assert!(dc.degrees().iter().all(|&d| d == 1.0));
        let k11 = complete_bipartite(1, 1);
        let c = collapse(&k11, &[0]).unwrap();
        assert_eq!(c.edges, vec![(0, 0, 2.0)]);
        assert!(collapse(&k11, &[1]).is_err());
    }

    #[test]
    fn random_regular_examples() {
        let (g, cert) = random_regular_certified(10, 9, 0.5, 1).unwrap();
        assert_eq!(g, complete_graph(10));
        assert_eq!(cert.lambda_bound, 1.0);
        let (g1, c1) = random_regular_certified(200, 16, 1.0, 5).unwrap();
        let (g2, _) = random_regular_certified(200, 16, 1.0, 5).unwrap();
        assert_eq!(g1, g2);
        assert!(c1.lambda_bound <= 2.0 * 15f64.sqrt() * 1.5);
    }

    #[test]
    fn small_demands_are_exact() {
        let g = weighted_expander(&[1.0, 1.0, 1.0], 0.5, 0).unwrap();
        assert_eq!(g, complete_graph(3));
        let b = weighted_bipartite_expander(&[1.0], &[1.0], 0.5, 0).unwrap();
        assert_eq!(b.edges, vec![(0, 1, 1.0)]);
    }

    #[test]
    fn split_puts_dominant_copies_in_high_set() {
        let mut d = vec![1.0; 50];
        d[0] = 100.0;
        let s = split_demands(&d, 400);
        let t = s.demand[0];
        let copies0 = s.owner[..400].iter().filter(|&&o| o == 0).count();
        assert!(copies0 as f64 >= (100.0 / t).floor() - 1.0);
        assert!(s.owner.len() >= 400);
        // total demand is preserved per vertex
        let mut tot = vec![0.0; 50];
        for (o, dm) in s.owner.iter().zip(&s.demand) {
            tot[*o] += dm;
        }
        for (a, b) in tot.iter().zip(&d) {
            assert!((a - b).abs() < 1e-9 * b);
        }
    }
}
