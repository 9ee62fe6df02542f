//! File formats: text block matrices (`BDDM`), connection graphs (`BDDG`),
//! planted unitaries (`BDDP`), right-hand sides, and versioned little-endian
//! containers for chains (`BDDC1`) and factorizations (`BDDU1`).

use std::io::{BufRead, Read, Write};

use crate::block_core::{Block, BlockDiagonalMatrix, BlockSparseMatrix, BlockVector, MatrixBuilder};
use crate::builder::{UDUFactorization, UduLevel};
use crate::chain::{ChainLevel, SchurComplementChain};
use crate::error::{Error, Result};
use crate::graphs::{ConnectionEdge, ConnectionGraph};
use crate::jacobi::JacobiOperator;
use crate::linalg::C64;

pub const CHAIN_MAGIC: &[u8; 8] = b"BDDC1\0\0\0";
pub const UDU_MAGIC: &[u8; 8] = b"BDDU1\0\0\0";
pub const CONTAINER_VERSION: u32 = 1;

fn num(x: f64) -> String {
    // 17 significant digits round-trip every double
    format!("{x:.16e}")
}

fn push_complex(line: &mut String, z: C64) {
    line.push(' ');
    line.push_str(&num(z.re));
    line.push(' ');
    line.push_str(&num(z.im));
}

/// Meaningful lines (blank lines and `#` comments skipped) with 1-based numbers.
fn content_lines(r: impl BufRead) -> impl Iterator<Item = Result<(usize, String)>> {
    r.lines().enumerate().filter_map(|(k, l)| match l {
        Err(e) => Some(Err(Error::Io(e))),
        Ok(s) => {
            let t = s.trim();
            if t.is_empty() || t.starts_with('#') {
                None
            } else {
                Some(Ok((k + 1, t.to_string())))
            }
        }
    })
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

fn parse_usize(line: usize, s: &str) -> Result<usize> {
    s.parse()
        .map_err(|_| parse_err(line, format!("expected an index, got '{s}'")))
}

fn parse_f64(line: usize, s: &str) -> Result<f64> {
    let x: f64 = s
        .parse()
        .map_err(|_| parse_err(line, format!("expected a number, got '{s}'")))?;
    if !x.is_finite() {
        return Err(parse_err(line, format!("non-finite number '{s}'")));
    }
    Ok(x)
}

fn parse_complexes(line: usize, toks: &[&str], count: usize) -> Result<Vec<C64>> {
    if toks.len() != 2 * count {
        return Err(parse_err(
            line,
            format!("expected {} numbers, got {}", 2 * count, toks.len()),
        ));
    }
    toks.chunks(2)
        .map(|c| Ok(C64::new(parse_f64(line, c[0])?, parse_f64(line, c[1])?)))
        .collect()
}

fn header<I: Iterator<Item = Result<(usize, String)>>>(
    it: &mut I,
    magic: &str,
    fields: usize,
) -> Result<(usize, Vec<usize>)> {
    let (ln, h) = it.next().ok_or_else(|| parse_err(1, "empty file"))??;
    let toks: Vec<&str> = h.split_whitespace().collect();
    if toks.first() != Some(&magic) || toks.len() != fields + 1 {
        return Err(parse_err(ln, format!("expected header '{magic}' with {fields} fields")));
    }
    let vals = toks[1..]
        .iter()
        .map(|t| parse_usize(ln, t))
        .collect::<Result<Vec<_>>>()?;
    Ok((ln, vals))
}

/// `BDDM n r nnz`, then `i j` and `2 r^2` decimals per upper-triangle block.
pub fn write_matrix(m: &BlockSparseMatrix, mut w: impl Write) -> Result<()> {
    let r = m.r();
    let upper: usize = (0..m.n()).map(|i| m.row(i).filter(|(j, _)| *j >= i).count()).sum();
    writeln!(w, "BDDM {} {} {}", m.n(), r, upper)?;
    for i in 0..m.n() {
        for (j, b) in m.row(i) {
            if j < i {
                continue;
            }
            let mut line = format!("{i} {j}");
            for &z in b {
                push_complex(&mut line, z);
            }
            writeln!(w, "{line}")?;
        }
    }
    Ok(())
}

pub fn read_matrix(rd: impl BufRead) -> Result<BlockSparseMatrix> {
    let mut it = content_lines(rd);
    let (hl, h) = header(&mut it, "BDDM", 3)?;
    let (n, r, nnz) = (h[0], h[1], h[2]);
    if r == 0 {
        return Err(parse_err(hl, "block size must be positive"));
    }
    let mut b = MatrixBuilder::new(n, r);
    let mut seen = std::collections::HashSet::new();
    let mut count = 0;
    for item in it {
        let (ln, s) = item?;
        let toks: Vec<&str> = s.split_whitespace().collect();
        if toks.len() < 2 {
            return Err(parse_err(ln, "expected 'i j' and block entries"));
        }
        let (i, j) = (parse_usize(ln, toks[0])?, parse_usize(ln, toks[1])?);
        if i >= n || j >= n {
            return Err(parse_err(ln, format!("block ({i}, {j}) out of range for n = {n}")));
        }
        if i > j {
            return Err(parse_err(
                ln,
                format!("block ({i}, {j}) is below the diagonal; store the upper triangle only"),
            ));
        }
        if !seen.insert((i, j)) {
            return Err(parse_err(ln, format!("duplicate block ({i}, {j})")));
        }
        let v = parse_complexes(ln, &toks[2..], r * r)?;
        if i == j {
            b.add(i, i, &v);
        } else {
            b.add_herm(i, j, &v);
        }
        count += 1;
    }
    if count != nnz {
        return Err(parse_err(hl, format!("header announces {nnz} blocks, found {count}")));
    }
    Ok(b.build())
}

/// `BDDG n r m`, then `u v w` and the `2 r^2` decimals of `O_uv` per edge.
pub fn write_graph(g: &ConnectionGraph, mut w: impl Write) -> Result<()> {
    writeln!(w, "BDDG {} {} {}", g.n, g.r, g.edges.len())?;
    for e in &g.edges {
        let mut line = format!("{} {} {}", e.u, e.v, num(e.w));
        for &z in e.o.as_slice() {
            push_complex(&mut line, z);
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

pub fn read_graph(rd: impl BufRead) -> Result<ConnectionGraph> {
    let mut it = content_lines(rd);
    let (hl, h) = header(&mut it, "BDDG", 3)?;
    let (n, r, m) = (h[0], h[1], h[2]);
    if r == 0 {
        return Err(parse_err(hl, "block size must be positive"));
    }
    let mut edges = Vec::with_capacity(m);
    for item in it {
        let (ln, s) = item?;
        let toks: Vec<&str> = s.split_whitespace().collect();
        if toks.len() < 3 {
            return Err(parse_err(ln, "expected 'u v w' and block entries"));
        }
        let o = Block::from_vec(r, parse_complexes(ln, &toks[3..], r * r)?)?;
        let e = ConnectionEdge {
            u: parse_usize(ln, toks[0])?,
            v: parse_usize(ln, toks[1])?,
            w: parse_f64(ln, toks[2])?,
            o,
        };
        let single = ConnectionGraph { n, r, edges: vec![e] };
        single.validate().map_err(|err| parse_err(ln, err.to_string()))?;
        edges.extend(single.edges);
    }
    if edges.len() != m {
        return Err(parse_err(
            hl,
            format!("header announces {m} edges, found {}", edges.len()),
        ));
    }
    Ok(ConnectionGraph { n, r, edges })
}

/// `BDDP n r`, then one line of `2 r^2` decimals per vertex.
pub fn write_planted(us: &[Block], r: usize, mut w: impl Write) -> Result<()> {
    writeln!(w, "BDDP {} {}", us.len(), r)?;
    for u in us {
        let mut line = String::new();
        for &z in u.as_slice() {
            push_complex(&mut line, z);
        }
        writeln!(w, "{}", line.trim_start())?;
    }
    Ok(())
}

pub fn read_planted(rd: impl BufRead) -> Result<Vec<Block>> {
    let mut it = content_lines(rd);
    let (hl, h) = header(&mut it, "BDDP", 2)?;
    let (n, r) = (h[0], h[1]);
    let mut out = Vec::with_capacity(n);
    for item in it {
        let (ln, s) = item?;
        let toks: Vec<&str> = s.split_whitespace().collect();
        out.push(Block::from_vec(r, parse_complexes(ln, &toks, r * r)?)?);
    }
    if out.len() != n {
        return Err(parse_err(
            hl,
            format!("header announces {n} blocks, found {}", out.len()),
        ));
    }
    Ok(out)
}

/// One complex number (`re im`, or just `re`) per line.
pub fn write_vector(x: &BlockVector, mut w: impl Write) -> Result<()> {
    for z in &x.data {
        writeln!(w, "{} {}", num(z.re), num(z.im))?;
    }
    Ok(())
}

pub fn read_vector(rd: impl BufRead, n: usize, r: usize) -> Result<BlockVector> {
    let mut data = Vec::with_capacity(n * r);
    for item in content_lines(rd) {
        let (ln, s) = item?;
        let toks: Vec<&str> = s.split_whitespace().collect();
        let z = match toks.as_slice() {
            [re] => C64::new(parse_f64(ln, re)?, 0.0),
            [re, im] => C64::new(parse_f64(ln, re)?, parse_f64(ln, im)?),
            _ => return Err(parse_err(ln, "expected 're' or 're im'")),
        };
        data.push(z);
    }
    if data.len() != n * r {
        return Err(parse_err(
            data.len(),
            format!("expected {} entries, found {}", n * r, data.len()),
        ));
    }
    BlockVector::from_vec(n, r, data)
}

/// One block index per line.
pub fn write_indices(idx: &[usize], mut w: impl Write) -> Result<()> {
    for i in idx {
        writeln!(w, "{i}")?;
    }
    Ok(())
}

/// Sorted, duplicate-free block indices below `n`, one per line.
pub fn read_indices(rd: impl BufRead, n: usize) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    let mut seen = vec![false; n];
    for item in content_lines(rd) {
        let (ln, s) = item?;
        let i = parse_usize(ln, &s)?;
        if i >= n {
            return Err(parse_err(ln, format!("index {i} out of range for n = {n}")));
        }
        if std::mem::replace(&mut seen[i], true) {
            return Err(parse_err(ln, format!("duplicate index {i}")));
        }
        out.push(i);
    }
    out.sort_unstable();
    Ok(out)
}

// ---------------------------------------------------------------------------
// binary containers

struct Writer<W: Write> {
    w: W,
}

impl<W: Write> Writer<W> {
    fn u64(&mut self, x: u64) -> Result<()> {
        self.w.write_all(&x.to_le_bytes())?;
        Ok(())
    }
    fn usize(&mut self, x: usize) -> Result<()> {
        self.u64(x as u64)
    }
    fn f64(&mut self, x: f64) -> Result<()> {
        self.u64(x.to_bits())
    }
    fn usizes(&mut self, xs: &[usize]) -> Result<()> {
        self.usize(xs.len())?;
        xs.iter().try_for_each(|&x| self.usize(x))
    }
    fn complexes(&mut self, xs: &[C64]) -> Result<()> {
        self.usize(xs.len())?;
        xs.iter().try_for_each(|z| {
            self.f64(z.re)?;
            self.f64(z.im)
        })
    }
    fn f64s(&mut self, xs: &[f64]) -> Result<()> {
        self.usize(xs.len())?;
        xs.iter().try_for_each(|&x| self.f64(x))
    }
    fn matrix(&mut self, m: &BlockSparseMatrix) -> Result<()> {
        let (rp, cols, vals) = m.raw_parts();
        self.usize(m.n())?;
        self.usize(m.r())?;
        self.usizes(rp)?;
        self.usizes(cols)?;
        self.complexes(vals)
    }
    fn blocks(&mut self, bs: &[Block]) -> Result<()> {
        self.usize(bs.len())?;
        bs.iter().try_for_each(|b| self.complexes(b.as_slice()))
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn u64(&mut self) -> Result<u64> {
        let end = self.pos + 8;
        if end > self.buf.len() {
            return Err(Error::Container(format!("truncated at byte {}", self.pos)));
        }
        let v = u64::from_le_bytes(self.buf[self.pos..end].try_into().expect("8 bytes"));
        self.pos = end;
        Ok(v)
    }
    fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| Error::Container(format!("count {v} does not fit in memory")))
    }
    fn len(&mut self, elem_bytes: usize) -> Result<usize> {
        let n = self.usize()?;
        if n.saturating_mul(elem_bytes) > self.buf.len() - self.pos {
            return Err(Error::Container(format!(
                "length {n} at byte {} exceeds the container",
                self.pos
            )));
        }
        Ok(n)
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }
    fn usizes(&mut self) -> Result<Vec<usize>> {
        let n = self.len(8)?;
        (0..n).map(|_| self.usize()).collect()
    }
    fn complexes(&mut self) -> Result<Vec<C64>> {
        let n = self.len(16)?;
        (0..n).map(|_| Ok(C64::new(self.f64()?, self.f64()?))).collect()
    }
    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len(8)?;
        (0..n).map(|_| self.f64()).collect()
    }
    fn matrix(&mut self) -> Result<BlockSparseMatrix> {
        let n = self.usize()?;
        let r = self.usize()?;
        let rp = self.usizes()?;
        let cols = self.usizes()?;
        let vals = self.complexes()?;
        BlockSparseMatrix::from_raw_parts(n, r, rp, cols, vals).map_err(|e| Error::Container(e.to_string()))
    }
    fn blocks(&mut self, r: usize) -> Result<Vec<Block>> {
        let n = self.len(16 * r * r)?;
        (0..n)
            .map(|_| Block::from_vec(r, self.complexes()?).map_err(|e| Error::Container(e.to_string())))
            .collect()
    }
}

fn open_container<'a>(buf: &'a [u8], magic: &[u8; 8]) -> Result<Reader<'a>> {
    if buf.len() < 8 || &buf[..8] != magic {
        return Err(Error::Container(format!(
            "missing magic '{}'",
            String::from_utf8_lossy(&magic[..5])
        )));
    }
    let mut rd = Reader { buf, pos: 8 };
    let v = rd.u64()?;
    if v != CONTAINER_VERSION as u64 {
        return Err(Error::Container(format!("unsupported version {v}")));
    }
    Ok(rd)
}

pub fn write_chain(c: &SchurComplementChain, w: impl Write) -> Result<()> {
    let mut w = Writer { w };
    w.w.write_all(CHAIN_MAGIC)?;
    w.u64(CONTAINER_VERSION as u64)?;
    w.usize(c.levels.len())?;
    for l in &c.levels {
        w.matrix(&l.m)?;
        w.usizes(&l.f)?;
        w.usizes(&l.labels)?;
        w.f64(l.epsilon)?;
        w.usize(l.z.k)?;
        w.f64(l.z.epsilon)?;
        w.blocks(&l.z.x.diag)?;
        w.matrix(&l.z.l)?;
    }
    w.matrix(&c.terminal_matrix)?;
    w.usizes(&c.terminal_labels)?;
    w.w.flush()?;
    Ok(())
}

pub fn read_chain(mut rd: impl Read) -> Result<SchurComplementChain> {
    let mut buf = Vec::new();
    rd.read_to_end(&mut buf)?;
    let mut rd = open_container(&buf, CHAIN_MAGIC)?;
    let depth = rd.len(8)?;
    let mut levels = Vec::with_capacity(depth);
    for _ in 0..depth {
        let m = rd.matrix()?;
        let f = rd.usizes()?;
        let labels = rd.usizes()?;
        let epsilon = rd.f64()?;
        let k = rd.usize()?;
        let zeps = rd.f64()?;
        let x = rd.blocks(m.r())?;
        let l = rd.matrix()?;
        let x = BlockDiagonalMatrix {
            n: x.len(),
            r: m.r(),
            diag: x,
        };
        let z = JacobiOperator::from_parts(x, l, k, zeps)?;
        levels.push(ChainLevel::new(m, f, z, epsilon, labels)?);
    }
    let t = rd.matrix()?;
    let tl = rd.usizes()?;
    SchurComplementChain::new(levels, t, tl)
}

pub fn write_udu(f: &UDUFactorization, w: impl Write) -> Result<()> {
    let mut w = Writer { w };
    w.w.write_all(UDU_MAGIC)?;
    w.u64(CONTAINER_VERSION as u64)?;
    w.usize(f.n)?;
    w.usize(f.r)?;
    w.usize(f.levels.len())?;
    for l in &f.levels {
        w.usizes(&l.f)?;
        w.blocks(&l.x)?;
        w.f64(l.epsilon)?;
        for row in &l.upper {
            w.usizes(&row.iter().map(|(j, _)| *j).collect::<Vec<_>>())?;
            for (_, b) in row {
                w.complexes(b.as_slice())?;
            }
        }
    }
    w.usizes(&f.terminal_labels)?;
    w.usizes(&f.terminal_perm)?;
    w.complexes(&f.terminal_u)?;
    w.f64s(&f.terminal_d)?;
    w.w.flush()?;
    Ok(())
}

pub fn read_udu(mut rd: impl Read) -> Result<UDUFactorization> {
    let mut buf = Vec::new();
    rd.read_to_end(&mut buf)?;
    let mut rd = open_container(&buf, UDU_MAGIC)?;
    let n = rd.usize()?;
    let r = rd.usize()?;
    if r == 0 {
        return Err(Error::Container("block size must be positive".into()));
    }
    let depth = rd.len(8)?;
    let bad = |msg: &str| Error::Container(msg.to_string());
    let mut levels = Vec::with_capacity(depth);
    for _ in 0..depth {
        let f = rd.usizes()?;
        let x = rd.blocks(r)?;
        let epsilon = rd.f64()?;
        if x.len() != f.len() || f.iter().any(|&i| i >= n) {
            return Err(bad("level parts disagree"));
        }
        let mut upper = Vec::with_capacity(f.len());
        for _ in 0..f.len() {
            let cols = rd.usizes()?;
            let mut row = Vec::with_capacity(cols.len());
            for j in cols {
                if j >= n {
                    return Err(bad("column out of range"));
                }
                row.push((
                    j,
                    Block::from_vec(r, rd.complexes()?).map_err(|e| Error::Container(e.to_string()))?,
                ));
            }
            upper.push(row);
        }
        levels.push(UduLevel { f, x, upper, epsilon });
    }
    let terminal_labels = rd.usizes()?;
    let terminal_perm = rd.usizes()?;
    let terminal_u = rd.complexes()?;
    let terminal_d = rd.f64s()?;
    let t = terminal_perm.len();
    if t != terminal_labels.len() * r
        || terminal_u.len() != t * t
        || terminal_d.len() != t
        || terminal_perm.iter().any(|&p| p >= t)
        || terminal_labels.iter().any(|&i| i >= n)
    {
        return Err(bad("terminal parts disagree"));
    }
    Ok(UDUFactorization {
        n,
        r,
        levels,
        terminal_labels,
        terminal_perm,
        terminal_u,
        terminal_d,
    })
}

/// Read a `BDDM` file, or assemble the connection Laplacian of a `BDDG` file.
pub fn load_matrix(path: &std::path::Path) -> Result<BlockSparseMatrix> {
    let text = std::fs::read_to_string(path)?;
    let first = text
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty() && !l.starts_with('#'))
        .unwrap_or("");
    if first.starts_with("BDDG") {
        Ok(read_graph(text.as_bytes())?.laplacian())
    } else {
        read_matrix(text.as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builder::{decompose, recursive_construct, BuilderParams};
    use crate::chain::apply_chain;
    use crate::graphs::{generate, random_bdd, GraphKind};

    #[test]
    fn matrix_round_trip_is_exact() {
        let m = random_bdd(40, 2, 3, 1, 1.0);
        let mut buf = Vec::new();
        write_matrix(&m, &mut buf).unwrap();
        let back = read_matrix(buf.as_slice()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn matrix_parse_errors_carry_lines() {
        let err = read_matrix("BDDM 2 1 1\n1 0 1 0\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        assert!(read_matrix("BDDM 2 1 2\n0 0 1 0\n".as_bytes()).is_err());
        assert!(read_matrix("BDDX 2 1 0\n".as_bytes()).is_err());
        assert!(read_matrix("BDDM 2 1 1\n0 1 1 nan\n".as_bytes()).is_err());
    }

    #[test]
    fn graph_and_planted_round_trip() {
        let inst = generate(GraphKind::Synchronization, 12, 2, 3, 0.1).unwrap();
        let mut buf = Vec::new();
        write_graph(&inst.graph, &mut buf).unwrap();
        assert_eq!(read_graph(buf.as_slice()).unwrap(), inst.graph);
        let us = inst.planted.unwrap();
        let mut buf = Vec::new();
        write_planted(&us, 2, &mut buf).unwrap();
        assert_eq!(read_planted(buf.as_slice()).unwrap(), us);
        let bad = "BDDG 2 1 1\n0 1 1.0 2.0 0.0\n";
        assert!(matches!(read_graph(bad.as_bytes()), Err(Error::Parse { line: 2, .. })));
        let neg = "BDDG 2 1 1\n0 1 -1.0 1.0 0.0\n";
        assert!(read_graph(neg.as_bytes()).is_err());
    }

    #[test]
    fn vector_round_trip() {
        let x = BlockVector::from_vec(
            3,
            1,
            vec![C64::new(1.0 / 3.0, -2.0), C64::new(0.1, 0.0), C64::new(-7e-300, 5.0)],
        )
        .unwrap();
        let mut buf = Vec::new();
        write_vector(&x, &mut buf).unwrap();
        assert_eq!(read_vector(buf.as_slice(), 3, 1).unwrap(), x);
        assert_eq!(
            read_vector("1\n2\n".as_bytes(), 2, 1).unwrap().data[1],
            C64::new(2.0, 0.0)
        );
        assert!(read_vector("1\n".as_bytes(), 2, 1).is_err());
    }

    #[test]
    fn index_lists() {
        let mut buf = Vec::new();
        write_indices(&[4, 0, 2], &mut buf).unwrap();
        assert_eq!(read_indices(buf.as_slice(), 5).unwrap(), vec![0, 2, 4]);
        assert!(read_indices("1\n1\n".as_bytes(), 5).is_err());
        assert!(read_indices("7\n".as_bytes(), 5).is_err());
    }

    #[test]
    fn containers_round_trip_bit_for_bit() {
        let m = generate(GraphKind::Band, 120, 2, 3, 0.0)
            .unwrap()
            .graph
            .laplacian()
            .pad_identity(0.1);
        let params = BuilderParams::default().with_seed(4).with_terminal_size(15);
        let chain = recursive_construct(&m, &params).unwrap();
        let mut buf = Vec::new();
        write_chain(&chain, &mut buf).unwrap();
        let back = read_chain(buf.as_slice()).unwrap();
        let b = BlockVector::from_vec(120, 2, (0..240).map(|k| C64::new(k as f64, 1.0)).collect()).unwrap();
        assert_eq!(apply_chain(&chain, &b).unwrap(), apply_chain(&back, &b).unwrap());
        assert!(read_chain(&buf[..buf.len() - 3]).is_err());
        assert!(read_chain(&b"BDDU1\0\0\0"[..]).is_err());

        let f = decompose(&m, &params).unwrap();
        let mut buf = Vec::new();
        write_udu(&f, &mut buf).unwrap();
        assert_eq!(read_udu(buf.as_slice()).unwrap(), f);
    }
}
