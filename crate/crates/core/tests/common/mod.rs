#![allow(dead_code)]

pub mod oracle;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sbl_core::mesh::{BoundaryLabel, Mesh2D, Region};

/// Gauss-Legendre nodes and weights on `[0, 1]`, Newton on the Legendre
/// recurrence.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        out.push((0.5 * (1.0 - x), 0.5 * w));
    }
    out
}

/// Collapsed-square rule on the reference triangle `(0,0),(1,0),(0,1)`,
/// weights summing to 1/2.
pub fn duffy(n: usize) -> Vec<([f64; 2], f64)> {
    let g = gauss_legendre(n);
    let mut out = Vec::new();
    for &(u, wu) in &g {
        for &(v, wv) in &g {
            out.push(([u, v * (1.0 - u)], wu * wv * (1.0 - u)));
        }
    }
    out
}

/// Nodal Lagrange basis on a physical triangle, built from the monomials by
/// inverting the Vandermonde matrix. Nodes: vertices, then the midpoints of
/// edges (0,1), (1,2), (2,0) when quadratic.
pub struct Lagrange {
    pub origin: [f64; 2],
    /// Length scale of the local coordinates, keeps the Vandermonde matrix
    /// well conditioned on small elements.
    pub scale: f64,
    pub coef: Vec<Vec<f64>>,
    pub n: usize,
}

fn monomials(n: usize, x: f64, y: f64) -> Vec<f64> {
    let m = [1.0, x, y, x * x, x * y, y * y];
    m[..n].to_vec()
}

fn monomial_grads(n: usize, x: f64, y: f64) -> Vec<[f64; 2]> {
    let g = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [2.0 * x, 0.0], [y, x], [0.0, 2.0 * y]];
    g[..n].to_vec()
}

pub fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let n = a.len();
    for k in 0..n {
        let p = (k..n).max_by(|&i, &j| a[i][k].abs().partial_cmp(&a[j][k].abs()).unwrap()).unwrap();
        a.swap(k, p);
        b.swap(k, p);
        for i in k + 1..n {
            let f = a[i][k] / a[k][k];
            for j in k..n {
                a[i][j] -= f * a[k][j];
            }
            for j in 0..b[i].len() {
                b[i][j] -= f * b[k][j];
            }
        }
    }
    for k in (0..n).rev() {
        for j in 0..b[k].len() {
            let mut s = b[k][j];
            for i in k + 1..n {
                s -= a[k][i] * b[i][j];
            }
            b[k][j] = s / a[k][k];
        }
    }
    b
}

impl Lagrange {
    pub fn new(c: [[f64; 2]; 3], quadratic: bool) -> Lagrange {
        let origin = [(c[0][0] + c[1][0] + c[2][0]) / 3.0, (c[0][1] + c[1][1] + c[2][1]) / 3.0];
        let scale = (0..3).map(|i| (c[i][0] - c[(i + 1) % 3][0]).hypot(c[i][1] - c[(i + 1) % 3][1])).fold(0.0, f64::max);
        let mut nodes: Vec<[f64; 2]> = c.to_vec();
        if quadratic {
            for (i, j) in [(0, 1), (1, 2), (2, 0)] {
                nodes.push([0.5 * (c[i][0] + c[j][0]), 0.5 * (c[i][1] + c[j][1])]);
            }
        }
        let n = nodes.len();
        let v: Vec<Vec<f64>> = nodes.iter().map(|p| monomials(n, (p[0] - origin[0]) / scale, (p[1] - origin[1]) / scale)).collect();
        let id: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
        Lagrange { origin, scale, coef: solve_dense(v, id), n }
    }

    pub fn values(&self, p: [f64; 2]) -> Vec<f64> {
        let m = monomials(self.n, (p[0] - self.origin[0]) / self.scale, (p[1] - self.origin[1]) / self.scale);
        (0..self.n).map(|i| (0..self.n).map(|j| self.coef[j][i] * m[j]).sum()).collect()
    }

    pub fn grads(&self, p: [f64; 2]) -> Vec<[f64; 2]> {
        let g = monomial_grads(self.n, (p[0] - self.origin[0]) / self.scale, (p[1] - self.origin[1]) / self.scale);
        (0..self.n)
            .map(|i| {
                let mut s = [0.0; 2];
                for j in 0..self.n {
                    s[0] += self.coef[j][i] * g[j][0] / self.scale;
                    s[1] += self.coef[j][i] * g[j][1] / self.scale;
                }
                s
            })
            .collect()
    }
}

/// Physical quadrature points on a triangle from the reference rule.
pub fn tri_points(c: [[f64; 2]; 3], rule: &[([f64; 2], f64)]) -> Vec<([f64; 2], f64)> {
    let det = (c[1][0] - c[0][0]) * (c[2][1] - c[0][1]) - (c[2][0] - c[0][0]) * (c[1][1] - c[0][1]);
    rule.iter()
        .map(|&([s, t], w)| {
            let x = [
                c[0][0] + s * (c[1][0] - c[0][0]) + t * (c[2][0] - c[0][0]),
                c[0][1] + s * (c[1][1] - c[0][1]) + t * (c[2][1] - c[0][1]),
            ];
            (x, w * det.abs())
        })
        .collect()
}

fn angle_ok(c: &[[f64; 2]; 3]) -> bool {
    (0..3).all(|i| {
        let (a, b, d) = (c[i], c[(i + 1) % 3], c[(i + 2) % 3]);
        let u = [b[0] - a[0], b[1] - a[1]];
        let v = [d[0] - a[0], d[1] - a[1]];
        let cos = (u[0] * v[0] + u[1] * v[1]) / (u[0].hypot(u[1]) * v[0].hypot(v[1]));
        cos < 0.97
    })
}

/// Counter-clockwise triangle with no angle below about 14 degrees, at a
/// random scale and a position within a few diameters of the origin (far
/// shifts would cost the oracle digits to cancellation).
pub fn random_triangle(rng: &mut ChaCha8Rng) -> [[f64; 2]; 3] {
    loop {
        let scale = 10f64.powf(rng.random_range(-2.0..1.0));
        let shift = [scale * rng.random_range(-3.0..3.0), scale * rng.random_range(-3.0..3.0)];
        let mut c = [[0.0; 2]; 3];
        for p in c.iter_mut() {
            *p = [shift[0] + scale * rng.random_range(-1.0..1.0), shift[1] + scale * rng.random_range(-1.0..1.0)];
        }
        let det = (c[1][0] - c[0][0]) * (c[2][1] - c[0][1]) - (c[2][0] - c[0][0]) * (c[1][1] - c[0][1]);
        if det < 0.0 {
            c.swap(1, 2);
        }
        if angle_ok(&c) {
            return c;
        }
    }
}

/// Two triangles sharing the edge `a b`: fluid below the edge, porous above.
pub fn interface_pair(rng: &mut ChaCha8Rng) -> Mesh2D {
    loop {
        let a = [rng.random_range(-1.0..-0.3), rng.random_range(-0.3..0.3)];
        let b = [rng.random_range(0.3..1.0), rng.random_range(-0.3..0.3)];
        let c = [rng.random_range(-0.5..0.5), rng.random_range(-1.5..-0.6)];
        let d = [rng.random_range(-0.5..0.5), rng.random_range(0.6..1.5)];
        let (f, p) = ([a, c, b], [a, b, d]);
        if !angle_ok(&f) || !angle_ok(&p) {
            continue;
        }
        let boundary = vec![
            ([0, 2], BoundaryLabel::FluidInlet),
            ([2, 1], BoundaryLabel::FluidInlet),
            ([1, 3], BoundaryLabel::PorousExternal),
            ([3, 0], BoundaryLabel::PorousExternal),
        ];
        return Mesh2D::new(vec![a, b, c, d], vec![[0, 2, 1], [0, 1, 3]], vec![Region::Fluid, Region::Porous], boundary)
            .expect("valid pair");
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

pub fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    max_abs(&d) / max_abs(b).max(f64::MIN_POSITIVE)
}
