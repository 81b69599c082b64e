//! Sparse matrices, direct factorization, restarted GMRES and block
//! upper-triangular back substitution.

use std::collections::VecDeque;
use std::ops::Range;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Compressed sparse row matrix with sorted, unique column indices per row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub data: Vec<f64>,
}

/// Coordinate-format accumulator; duplicates are summed on [`build`](Self::build).
#[derive(Debug, Clone)]
pub struct TripletBuilder {
    nrows: usize,
    ncols: usize,
    rows: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl TripletBuilder {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        TripletBuilder { nrows, ncols, rows: Vec::new(), cols: Vec::new(), vals: Vec::new() }
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.nrows && j < self.ncols);
        self.rows.push(i);
        self.cols.push(j);
        self.vals.push(v);
    }

    /// Scatters a dense row-major local matrix.
    pub fn add_local(&mut self, rows: &[usize], cols: &[usize], local: &[f64]) {
        for (a, &i) in rows.iter().enumerate() {
            for (b, &j) in cols.iter().enumerate() {
                let v = local[a * cols.len() + b];
                if v != 0.0 {
                    self.add(i, j, v);
                }
            }
        }
    }

    pub fn build(self) -> CsrMatrix {
        let mut counts = vec![0usize; self.nrows + 1];
        for &r in &self.rows {
            counts[r + 1] += 1;
        }
        for i in 0..self.nrows {
            counts[i + 1] += counts[i];
        }
        let mut order = vec![0usize; self.rows.len()];
        let mut next = counts.clone();
        for (k, &r) in self.rows.iter().enumerate() {
            order[next[r]] = k;
            next[r] += 1;
        }
        let mut indptr = Vec::with_capacity(self.nrows + 1);
        let mut indices = Vec::with_capacity(self.rows.len());
        let mut data = Vec::with_capacity(self.rows.len());
        indptr.push(0);
        let mut row: Vec<(usize, f64)> = Vec::new();
        for i in 0..self.nrows {
            row.clear();
            row.extend(order[counts[i]..counts[i + 1]].iter().map(|&k| (self.cols[k], self.vals[k])));
            row.sort_by_key(|e| e.0);
            let mut last = usize::MAX;
            for &(c, v) in &row {
                if c == last {
                    *data.last_mut().unwrap() += v;
                } else {
                    indices.push(c);
                    data.push(v);
                    last = c;
                }
            }
            indptr.push(indices.len());
        }
        CsrMatrix { nrows: self.nrows, ncols: self.ncols, indptr, indices, data }
    }
}

impl CsrMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        CsrMatrix { nrows, ncols, indptr: vec![0; nrows + 1], indices: Vec::new(), data: Vec::new() }
    }

    pub fn identity(n: usize) -> Self {
        CsrMatrix { nrows: n, ncols: n, indptr: (0..=n).collect(), indices: (0..n).collect(), data: vec![1.0; n] }
    }

    pub fn from_dense(a: &[Vec<f64>]) -> Self {
        let ncols = a.first().map_or(0, |r| r.len());
        let mut b = TripletBuilder::new(a.len(), ncols);
        for (i, r) in a.iter().enumerate() {
            for (j, &v) in r.iter().enumerate() {
                if v != 0.0 {
                    b.add(i, j, v);
                }
            }
        }
        b.build()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.ncols]; self.nrows];
        for i in 0..self.nrows {
            for k in self.indptr[i]..self.indptr[i + 1] {
                out[i][self.indices[k]] += self.data[k];
            }
        }
        out
    }

    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.indptr[i]..self.indptr[i + 1]).map(move |k| (self.indices[k], self.data[k]))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = &self.indices[self.indptr[i]..self.indptr[i + 1]];
        match r.binary_search(&j) {
            Ok(k) => self.data[self.indptr[i] + k],
            Err(_) => 0.0,
        }
    }

    pub fn spmv(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.spmv_add(1.0, x, &mut y);
        y
    }

    /// `y += alpha A x`.
    pub fn spmv_add(&self, alpha: f64, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols, "spmv: vector length");
        assert_eq!(y.len(), self.nrows, "spmv: output length");
        for i in 0..self.nrows {
            let mut s = 0.0;
            for k in self.indptr[i]..self.indptr[i + 1] {
                s += self.data[k] * x[self.indices[k]];
            }
            y[i] += alpha * s;
        }
    }

    /// `x^T A y`.
    pub fn quad(&self, x: &[f64], y: &[f64]) -> f64 {
        let ay = self.spmv(y);
        dot(x, &ay)
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut b = TripletBuilder::new(self.ncols, self.nrows);
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                b.add(j, i, v);
            }
        }
        b.build()
    }

    pub fn scale(&self, alpha: f64) -> CsrMatrix {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v *= alpha);
        out
    }

    /// `self + alpha other`; the sparsity pattern is the union.
    pub fn add(&self, other: &CsrMatrix, alpha: f64) -> CsrMatrix {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols), "add: shape");
        let mut indptr = Vec::with_capacity(self.nrows + 1);
        let mut indices = Vec::with_capacity(self.nnz() + other.nnz());
        let mut data = Vec::with_capacity(self.nnz() + other.nnz());
        indptr.push(0);
        for i in 0..self.nrows {
            let (mut a, ea) = (self.indptr[i], self.indptr[i + 1]);
            let (mut b, eb) = (other.indptr[i], other.indptr[i + 1]);
            while a < ea || b < eb {
                let ca = if a < ea { self.indices[a] } else { usize::MAX };
                let cb = if b < eb { other.indices[b] } else { usize::MAX };
                if ca == cb {
                    indices.push(ca);
                    data.push(self.data[a] + alpha * other.data[b]);
                    a += 1;
                    b += 1;
                } else if ca < cb {
                    indices.push(ca);
                    data.push(self.data[a]);
                    a += 1;
                } else {
                    indices.push(cb);
                    data.push(alpha * other.data[b]);
                    b += 1;
                }
            }
            indptr.push(indices.len());
        }
        CsrMatrix { nrows: self.nrows, ncols: self.ncols, indptr, indices, data }
    }

    pub fn matmul(&self, other: &CsrMatrix) -> CsrMatrix {
        assert_eq!(self.ncols, other.nrows, "matmul: inner dimension");
        let mut acc = vec![0.0; other.ncols];
        let mut mark = vec![usize::MAX; other.ncols];
        let mut indptr = Vec::with_capacity(self.nrows + 1);
        let mut indices = Vec::new();
        let mut data = Vec::new();
        indptr.push(0);
        let mut cols: Vec<usize> = Vec::new();
        for i in 0..self.nrows {
            cols.clear();
            for (k, a) in self.row(i) {
                for (j, b) in other.row(k) {
                    if mark[j] != i {
                        mark[j] = i;
                        acc[j] = 0.0;
                        cols.push(j);
                    }
                    acc[j] += a * b;
                }
            }
            cols.sort_unstable();
            for &j in &cols {
                indices.push(j);
                data.push(acc[j]);
            }
            indptr.push(indices.len());
        }
        CsrMatrix { nrows: self.nrows, ncols: other.ncols, indptr, indices, data }
    }

    /// The block `A[rows, cols]` as its own matrix.
    pub fn submatrix(&self, rows: Range<usize>, cols: Range<usize>) -> CsrMatrix {
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        let mut indices = Vec::new();
        let mut data = Vec::new();
        indptr.push(0);
        for i in rows.clone() {
            for (j, v) in self.row(i) {
                if cols.contains(&j) {
                    indices.push(j - cols.start);
                    data.push(v);
                }
            }
            indptr.push(indices.len());
        }
        CsrMatrix { nrows: rows.len(), ncols: cols.len(), indptr, indices, data }
    }

    /// Keeps only the entries inside `rows x cols`, global shape.
    pub fn restrict(&self, rows: Range<usize>, cols: Range<usize>) -> CsrMatrix {
        let mut indptr = Vec::with_capacity(self.nrows + 1);
        let mut indices = Vec::new();
        let mut data = Vec::new();
        indptr.push(0);
        for i in 0..self.nrows {
            if rows.contains(&i) {
                for (j, v) in self.row(i) {
                    if cols.contains(&j) {
                        indices.push(j);
                        data.push(v);
                    }
                }
            }
            indptr.push(indices.len());
        }
        CsrMatrix { nrows: self.nrows, ncols: self.ncols, indptr, indices, data }
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Reverse Cuthill-McKee ordering of the symmetrized pattern; returns
/// `perm[new] = old`.
pub fn rcm_ordering(a: &CsrMatrix) -> Vec<usize> {
    let n = a.nrows;
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        for (j, _) in a.row(i) {
            if i != j {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
    }
    for l in adj.iter_mut() {
        l.sort_unstable();
        l.dedup();
    }
    let deg: Vec<usize> = adj.iter().map(|l| l.len()).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let bfs_last = |start: usize, visited: &[bool]| -> (usize, usize) {
        let mut level = vec![usize::MAX; n];
        let mut q = VecDeque::from([start]);
        level[start] = 0;
        let mut last = start;
        while let Some(u) = q.pop_front() {
            last = u;
            for &w in &adj[u] {
                if !visited[w] && level[w] == usize::MAX {
                    level[w] = level[u] + 1;
                    q.push_back(w);
                }
            }
        }
        (last, level[last])
    };
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&i| (deg[i], i));
    for &seed in &by_degree {
        if visited[seed] {
            continue;
        }
        let mut root = seed;
        let mut ecc = bfs_last(root, &visited).1;
        for _ in 0..4 {
            let (far, _) = bfs_last(root, &visited);
            let (_, e) = bfs_last(far, &visited);
            if e > ecc {
                ecc = e;
                root = far;
            } else {
                break;
            }
        }
        let mut q = VecDeque::from([root]);
        visited[root] = true;
        let mut nb = Vec::new();
        while let Some(u) = q.pop_front() {
            order.push(u);
            nb.clear();
            nb.extend(adj[u].iter().copied().filter(|&w| !visited[w]));
            nb.sort_by_key(|&w| (deg[w], w));
            for &w in &nb {
                visited[w] = true;
                q.push_back(w);
            }
        }
    }
    order.reverse();
    order
}

/// Banded LU factorization with partial pivoting after a bandwidth-reducing
/// symmetric permutation.
#[derive(Debug, Clone)]
pub struct LuFactor {
    n: usize,
    perm: Vec<usize>,
    kl: usize,
    ku: usize,
    ldab: usize,
    ab: Vec<f64>,
    ipiv: Vec<usize>,
}

impl LuFactor {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn bandwidths(&self) -> (usize, usize) {
        (self.kl, self.ku)
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n, "solve: rhs length");
        let n = self.n;
        let kv = self.kl + self.ku;
        let ld = self.ldab;
        let mut x: Vec<f64> = self.perm.iter().map(|&o| b[o]).collect();
        for j in 0..n {
            let l = self.ipiv[j];
            if l != j {
                x.swap(j, l);
            }
            let km = self.kl.min(n - 1 - j);
            let xj = x[j];
            if xj != 0.0 {
                let col = &self.ab[j * ld + kv + 1..j * ld + kv + 1 + km];
                for (xi, &lij) in x[j + 1..j + 1 + km].iter_mut().zip(col) {
                    *xi -= lij * xj;
                }
            }
        }
        for j in (0..n).rev() {
            x[j] /= self.ab[j * ld + kv];
            let xj = x[j];
            if xj != 0.0 {
                let top = j.saturating_sub(kv);
                let col = &self.ab[j * ld + kv - (j - top)..j * ld + kv];
                for (xi, &u) in x[top..j].iter_mut().zip(col) {
                    *xi -= u * xj;
                }
            }
        }
        let mut out = vec![0.0; n];
        for (k, &o) in self.perm.iter().enumerate() {
            out[o] = x[k];
        }
        out
    }
}

/// Factorizes a square matrix. An exactly zero or non-finite pivot is
/// reported with the original row index.
pub fn factorize(a: &CsrMatrix) -> Result<LuFactor> {
    if a.nrows != a.ncols {
        return Err(Error::Dimension(format!("factorize: {}x{} is not square", a.nrows, a.ncols)));
    }
    let n = a.nrows;
    let perm = rcm_ordering(a);
    let mut inv = vec![0usize; n];
    for (k, &o) in perm.iter().enumerate() {
        inv[o] = k;
    }
    let (mut kl, mut ku) = (0usize, 0usize);
    for i in 0..n {
        for (j, _) in a.row(i) {
            let (pi, pj) = (inv[i], inv[j]);
            if pi > pj {
                kl = kl.max(pi - pj);
            } else {
                ku = ku.max(pj - pi);
            }
        }
    }
    let kv = kl + ku;
    let ld = 2 * kl + ku + 1;
    let mut ab = vec![0.0; ld * n];
    for i in 0..n {
        for (j, v) in a.row(i) {
            let (pi, pj) = (inv[i], inv[j]);
            ab[pj * ld + kv + pi - pj] += v;
        }
    }
    let mut ipiv = vec![0usize; n];
    let mut ju = 0usize;
    for j in 0..n {
        let km = kl.min(n - 1 - j);
        let base = j * ld + kv;
        let mut jp = 0;
        let mut best = ab[base].abs();
        for i in 1..=km {
            let v = ab[base + i].abs();
            if v > best {
                best = v;
                jp = i;
            }
        }
        ipiv[j] = j + jp;
        let piv = ab[base + jp];
        if piv == 0.0 || !piv.is_finite() {
            return Err(Error::Singular { row: perm[j] });
        }
        ju = ju.max((j + ku + jp).min(n - 1));
        if jp != 0 {
            for c in j..=ju {
                let r0 = c * ld + kv + j - c;
                ab.swap(r0, r0 + jp);
            }
        }
        if km > 0 {
            let inv_p = 1.0 / ab[base];
            for i in 1..=km {
                ab[base + i] *= inv_p;
            }
            let (head, tail) = ab.split_at_mut((j + 1) * ld);
            let l = &head[base + 1..base + 1 + km];
            for c in j + 1..=ju {
                let off = (c - j - 1) * ld;
                let r = off + kv + j - c;
                let u = tail[r];
                if u != 0.0 {
                    for (t, &li) in tail[r + 1..r + 1 + km].iter_mut().zip(l) {
                        *t -= li * u;
                    }
                }
            }
        }
    }
    Ok(LuFactor { n, perm, kl, ku, ldab: ld, ab, ipiv })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmresConfig {
    pub tol: f64,
    pub restart: usize,
    pub max_iter: usize,
}

impl Default for GmresConfig {
    fn default() -> Self {
        GmresConfig { tol: 1e-6, restart: 200, max_iter: 5000 }
    }
}

#[derive(Debug, Clone)]
pub struct GmresResult {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Relative preconditioned residual, starting with 1 at iteration zero.
    pub residual_history: Vec<f64>,
    pub converged: bool,
    pub breakdown: bool,
}

const BREAKDOWN: f64 = 1e-300;

pub type Preconditioner<'a> = &'a dyn Fn(&[f64]) -> Vec<f64>;

/// Left-preconditioned restarted GMRES from a zero initial guess. The
/// stopping test is `|M^-1 (b - A x)| <= tol |M^-1 b|`.
pub fn gmres(
    a: &CsrMatrix,
    b: &[f64],
    precond: Option<Preconditioner>,
    cfg: &GmresConfig,
) -> Result<GmresResult> {
    let n = a.nrows;
    if a.ncols != n || b.len() != n {
        return Err(Error::Dimension(format!("gmres: matrix {}x{}, rhs {}", a.nrows, a.ncols, b.len())));
    }
    if cfg.restart == 0 || !(cfg.tol > 0.0) {
        return Err(Error::Parameter("gmres: restart and tolerance must be positive".into()));
    }
    let apply_m = |v: Vec<f64>| -> Vec<f64> {
        match precond {
            Some(p) => p(&v),
            None => v,
        }
    };
    let mut x = vec![0.0; n];
    let r0 = apply_m(b.to_vec());
    let beta0 = norm2(&r0);
    let mut history = vec![1.0];
    if beta0 == 0.0 {
        return Ok(GmresResult { x, iterations: 0, residual_history: history, converged: true, breakdown: false });
    }
    let m = cfg.restart;
    let mut iterations = 0;
    let mut converged = false;
    let mut breakdown = false;
    let mut r = r0;
    loop {
        let beta = norm2(&r);
        if beta / beta0 <= cfg.tol {
            converged = true;
            break;
        }
        let mut basis: Vec<Vec<f64>> = vec![r.iter().map(|v| v / beta).collect()];
        let mut h: Vec<Vec<f64>> = Vec::new();
        let mut cs: Vec<f64> = Vec::new();
        let mut sn: Vec<f64> = Vec::new();
        let mut g = vec![beta];
        let mut k_done = 0;
        for k in 0..m {
            let mut w = apply_m(a.spmv(&basis[k]));
            let mut col = vec![0.0; k + 2];
            for (i, vi) in basis.iter().enumerate() {
                let hik = dot(&w, vi);
                col[i] = hik;
                for (wj, &vj) in w.iter_mut().zip(vi) {
                    *wj -= hik * vj;
                }
            }
            let hk1 = norm2(&w);
            col[k + 1] = hk1;
            for i in 0..k {
                let t = cs[i] * col[i] + sn[i] * col[i + 1];
                col[i + 1] = -sn[i] * col[i] + cs[i] * col[i + 1];
                col[i] = t;
            }
            let d = col[k].hypot(col[k + 1]);
            let (c, s) = if d == 0.0 { (1.0, 0.0) } else { (col[k] / d, col[k + 1] / d) };
            cs.push(c);
            sn.push(s);
            col[k] = d;
            col[k + 1] = 0.0;
            g.push(-s * g[k]);
            g[k] *= c;
            h.push(col);
            iterations += 1;
            k_done = k + 1;
            let rel = g[k + 1].abs() / beta0;
            history.push(rel);
            if hk1 < BREAKDOWN {
                breakdown = true;
            }
            if rel <= cfg.tol || breakdown || iterations >= cfg.max_iter {
                break;
            }
            basis.push(w.iter().map(|v| v / hk1).collect());
        }
        let mut y = vec![0.0; k_done];
        for i in (0..k_done).rev() {
            let mut s = g[i];
            for j in i + 1..k_done {
                s -= h[j][i] * y[j];
            }
            y[i] = if h[i][i] != 0.0 { s / h[i][i] } else { 0.0 };
        }
        for (j, yj) in y.iter().enumerate() {
            for (xi, &vj) in x.iter_mut().zip(&basis[j]) {
                *xi += yj * vj;
            }
        }
        let mut res = b.to_vec();
        a.spmv_add(-1.0, &x, &mut res);
        r = apply_m(res);
        let rel = norm2(&r) / beta0;
        if rel <= cfg.tol || (breakdown && rel <= cfg.tol.max(1e-12)) {
            converged = true;
            break;
        }
        if breakdown || iterations >= cfg.max_iter {
            break;
        }
    }
    Ok(GmresResult { x, iterations, residual_history: history, converged, breakdown })
}

/// Back substitution for a block upper-triangular matrix with contiguous
/// diagonal groups. The diagonal blocks are factorized once.
#[derive(Debug, Clone)]
pub struct BlockTriangularSolver {
    groups: Vec<Range<usize>>,
    diag: Vec<Arc<LuFactor>>,
    upper: Vec<Vec<(usize, CsrMatrix)>>,
}

impl BlockTriangularSolver {
    pub fn new(a: &CsrMatrix, groups: Vec<Range<usize>>) -> Result<Self> {
        let mut diag = Vec::with_capacity(groups.len());
        let mut upper = Vec::with_capacity(groups.len());
        for (gi, g) in groups.iter().enumerate() {
            diag.push(Arc::new(factorize(&a.submatrix(g.clone(), g.clone()))?));
            let mut u = Vec::new();
            for (hi, h) in groups.iter().enumerate().skip(gi + 1) {
                let blk = a.submatrix(g.clone(), h.clone());
                if blk.nnz() > 0 {
                    u.push((hi, blk));
                }
            }
            upper.push(u);
        }
        Ok(BlockTriangularSolver { groups, diag, upper })
    }

    pub fn groups(&self) -> &[Range<usize>] {
        &self.groups
    }

    pub fn diag_factor(&self, g: usize) -> Arc<LuFactor> {
        self.diag[g].clone()
    }

    pub fn solve(&self, r: &[f64]) -> Vec<f64> {
        let mut z = vec![0.0; r.len()];
        for gi in (0..self.groups.len()).rev() {
            let g = self.groups[gi].clone();
            let mut rhs = r[g.clone()].to_vec();
            for (hi, blk) in &self.upper[gi] {
                let h = self.groups[*hi].clone();
                blk.spmv_add(-1.0, &z[h], &mut rhs);
            }
            let sol = self.diag[gi].solve(&rhs);
            z[g].copy_from_slice(&sol);
        }
        z
    }
}
