//! Element and interface kernels against an independent nodal basis and a
//! collapsed tensor Gauss-Legendre rule of order 10. Each check returns the
//! worst relative max-norm deviation per kernel.

use std::collections::BTreeMap;

use super::*;
use rand::RngExt;
use sbl_core::fem::TriGeom;
use sbl_core::forms::kernels;
use sbl_core::forms::Assembler;
use sbl_core::scenarios::ScenarioConfig;
use sbl_core::{BlockName, DofMap, ElementKind, ElementPreset, Field, Tangential};


pub const ORDER: usize = 10;

pub type Worst = BTreeMap<String, f64>;

fn record(worst: &mut Worst, what: &str, got: &[f64], want: &[f64]) {
    let d = rel_diff(got, want);
    let e = worst.entry(what.to_string()).or_insert(0.0);
    *e = e.max(d);
}

fn kinds() -> [ElementKind; 2] {
    [ElementKind::P1, ElementKind::P2]
}

fn basis(c: [[f64; 2]; 3], k: ElementKind) -> Lagrange {
    Lagrange::new(c, k == ElementKind::P2)
}

/// `(2 D(phi_a e_c))` as a 2x2 matrix.
fn sym_grad(g: [f64; 2], c: usize) -> [[f64; 2]; 2] {
    let mut e = [[0.0; 2]; 2];
    for k in 0..2 {
        e[c][k] += 0.5 * g[k];
        e[k][c] += 0.5 * g[k];
    }
    e
}

pub fn volume_kernel_errors(seed: u64, elements: usize) -> Worst {
    let mut worst = Worst::new();
    let rule = duffy(ORDER);
    let mut r = rng(seed);
    for _ in 0..elements {
        let c = random_triangle(&mut r);
        let g = TriGeom::new(c);
        let pts = tri_points(c, &rule);
        let w = r.random_range(0.5..2.0);
        let kt = {
            let a = r.random_range(0.5..2.0);
            let b = r.random_range(0.5..2.0);
            let o = r.random_range(-0.3..0.3);
            [[a, o], [o, b]]
        };
        for kind in kinds() {
            let l = basis(c, kind);
            let n = l.n;
            let m = 2 * n;
            let mut mass = vec![0.0; n * n];
            let mut gg = vec![0.0; n * n];
            let mut load = vec![0.0; n];
            let mut tmass = vec![0.0; m * m];
            let mut strain = vec![0.0; m * m];
            let mut divdiv = vec![0.0; m * m];
            for &(x, wq) in &pts {
                let v = l.values(x);
                let d = l.grads(x);
                for a in 0..n {
                    load[a] += wq * w * v[a];
                    for b in 0..n {
                        mass[a * n + b] += wq * w * v[a] * v[b];
                        gg[a * n + b] += wq * w * (d[a][0] * d[b][0] + d[a][1] * d[b][1]);
                        for ci in 0..2 {
                            for cj in 0..2 {
                                let (ea, eb) = (sym_grad(d[a], ci), sym_grad(d[b], cj));
                                let ddot: f64 = (0..2).flat_map(|i| (0..2).map(move |j| (i, j))).map(|(i, j)| ea[i][j] * eb[i][j]).sum();
                                let row = 2 * a + ci;
                                let col = 2 * b + cj;
                                strain[row * m + col] += wq * 2.0 * w * ddot;
                                divdiv[row * m + col] += wq * w * d[a][ci] * d[b][cj];
                                tmass[row * m + col] += wq * kt[ci][cj] * v[a] * v[b];
                            }
                        }
                    }
                }
            }
            record(&mut worst, "mass_scalar", &kernels::mass_scalar(&g, kind, w), &mass);
            record(&mut worst, "grad_grad", &kernels::grad_grad(&g, kind, w), &gg);
            record(&mut worst, "load", &kernels::load(&g, kind, w), &load);
            record(&mut worst, "mass_tensor", &kernels::mass_tensor(&g, kind, kt), &tmass);
            record(&mut worst, "strain", &kernels::strain(&g, kind, w), &strain);
            record(&mut worst, "divdiv", &kernels::divdiv(&g, kind, w), &divdiv);

            for pkind in kinds() {
                let lp = basis(c, pkind);
                let np = lp.n;
                let mut dp = vec![0.0; m * np];
                for &(x, wq) in &pts {
                    let d = l.grads(x);
                    let p = lp.values(x);
                    for a in 0..n {
                        for ci in 0..2 {
                            for k in 0..np {
                                dp[(2 * a + ci) * np + k] += wq * w * d[a][ci] * p[k];
                            }
                        }
                    }
                }
                record(&mut worst, "div_pressure", &kernels::div_pressure(&g, kind, pkind, w), &dp);
            }
        }
    }
    worst
}

/// Largest deviation of the P2 interpolant of random quadratics at the
/// element quadrature points, relative to the largest nodal value.
pub fn quadratic_interpolation_error(seed: u64, elements: usize) -> f64 {
    let mut worst: f64 = 0.0;
    let mut r = rng(seed);
    for _ in 0..elements {
        let c = random_triangle(&mut r);
        let g = TriGeom::new(c);
        let q: [f64; 6] = std::array::from_fn(|_| r.random_range(-1.0..1.0));
        let f = |p: [f64; 2]| q[0] + q[1] * p[0] + q[2] * p[1] + q[3] * p[0] * p[0] + q[4] * p[0] * p[1] + q[5] * p[1] * p[1];
        let mut nodes: Vec<[f64; 2]> = c.to_vec();
        for (i, j) in [(0, 1), (1, 2), (2, 0)] {
            nodes.push([0.5 * (c[i][0] + c[j][0]), 0.5 * (c[i][1] + c[j][1])]);
        }
        let vals: Vec<f64> = nodes.iter().map(|&p| f(p)).collect();
        for (l, _) in sbl_core::fem::TRI_QUAD {
            let x = g.point(l);
            let s = sbl_core::fem::shape_values(ElementKind::P2, l);
            let interp: f64 = s.iter().zip(&vals).map(|(a, b)| a * b).sum();
            let scale = vals.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            worst = worst.max((interp - f(x)).abs() / scale);
        }
    }
    worst
}

struct EdgeOracle {
    n_dofs: usize,
}

impl EdgeOracle {
    /// Dense `int_e test(row) * trial(col)` for the given trace closures.
    #[allow(clippy::too_many_arguments)]
    fn block(
        &self,
        mesh: &sbl_core::Mesh2D,
        dofs: &DofMap,
        rows: Field,
        cols: Field,
        weight: f64,
        row_trace: &dyn Fn(&Lagrange, [f64; 2], usize) -> f64,
        col_trace: &dyn Fn(&Lagrange, [f64; 2], usize) -> f64,
    ) -> Vec<f64> {
        let n = self.n_dofs;
        let mut out = vec![0.0; n * n];
        let gl = gauss_legendre(ORDER);
        for e in &mesh.interface {
            let tri = |f: Field| if f.region() == sbl_core::Region::Fluid { e.fluid_tri } else { e.porous_tri };
            let lr = Lagrange::new(mesh.tri_coords(tri(rows)), dofs.kind(rows) == ElementKind::P2);
            let lc = Lagrange::new(mesh.tri_coords(tri(cols)), dofs.kind(cols) == ElementKind::P2);
            let rd = dofs.element_dofs(mesh, rows, tri(rows));
            let cd = dofs.element_dofs(mesh, cols, tri(cols));
            let (a, b) = (mesh.vertices[e.v[0]], mesh.vertices[e.v[1]]);
            for &(s, wq) in &gl {
                let x = [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])];
                let w = weight * wq * e.length;
                for (i, &ri) in rd.iter().enumerate() {
                    let tv = row_trace(&lr, x, i);
                    for (j, &cj) in cd.iter().enumerate() {
                        out[ri * n + cj] += w * tv * col_trace(&lc, x, j);
                    }
                }
            }
        }
        out
    }
}

fn dense(m: &sbl_core::CsrMatrix) -> Vec<f64> {
    m.to_dense().into_iter().flatten().collect()
}

pub fn interface_kernel_errors(seed: u64, pairs: usize) -> Worst {
    let mut worst = Worst::new();
    let mut r = rng(seed);
    let base = ScenarioConfig::artery_default();
    let mut phys = base.phys_params;
    let mut nit = base.nitsche_params;
    nit.tangential = Tangential::NoSlip;
    for trial in 0..pairs {
        let mesh = interface_pair(&mut r);
        let preset = if trial % 2 == 0 { ElementPreset::InfSup } else { ElementPreset::EqualOrder };
        let dofs = DofMap::new(&mesh, preset);
        phys.mu_f = r.random_range(0.01..1.0);
        nit.gamma_f = r.random_range(10.0..100.0);
        nit.gamma_stab = r.random_range(0.5..2.0);
        let tau = r.random_range(0.1..1.0);
        let asm = Assembler::new(&mesh, &dofs);
        let blocks = asm.interface_blocks(&phys, &nit, tau);
        let e = &mesh.interface[0];
        let (nrm, he) = (e.normal, e.length);
        let tng = [-nrm[1], nrm[0]];
        let pen = nit.gamma_f * phys.mu_f / he;
        let mu = phys.mu_f;
        let oracle = EdgeOracle { n_dofs: dofs.n_dofs };

        let vec_val = |l: &Lagrange, x: [f64; 2], i: usize| -> [f64; 2] {
            let v = l.values(x)[i / 2];
            let mut out = [0.0; 2];
            out[i % 2] = v;
            out
        };
        let dir = |d: [f64; 2]| move |l: &Lagrange, x: [f64; 2], i: usize| {
            let v = vec_val(l, x, i);
            v[0] * d[0] + v[1] * d[1]
        };
        let scalar = |l: &Lagrange, x: [f64; 2], i: usize| l.values(x)[i];
        // (2 mu D(phi) n) . d
        let stress = |d: [f64; 2]| move |l: &Lagrange, x: [f64; 2], i: usize| {
            let g = l.grads(x)[i / 2];
            let s = sym_grad(g, i % 2);
            let sn = [s[0][0] * nrm[0] + s[0][1] * nrm[1], s[1][0] * nrm[0] + s[1][1] * nrm[1]];
            2.0 * mu * (sn[0] * d[0] + sn[1] * d[1])
        };
        // normal plus tangential parts
        let both = |f: &dyn Fn([f64; 2]) -> Vec<f64>| -> Vec<f64> {
            let a = f(nrm);
            let b = f(tng);
            a.iter().zip(&b).map(|(x, y)| x + y).collect()
        };

        let mut check = |name: BlockName, want: Vec<f64>| {
            let got = blocks.get(&name).map(dense).unwrap_or_else(|| vec![0.0; want.len()]);
            record(&mut worst, &format!("{name:?}"), &got, &want);
        };

        check(
            BlockName::GfGamma,
            both(&|d| oracle.block(&mesh, &dofs, Field::V, Field::V, pen, &dir(d), &dir(d))),
        );
        check(
            BlockName::GfSigma,
            both(&|d| oracle.block(&mesh, &dofs, Field::V, Field::V, -1.0, &dir(d), &stress(d))),
        );
        check(BlockName::GpfSigma, oracle.block(&mesh, &dofs, Field::V, Field::Pf, 1.0, &dir(nrm), &scalar));
        check(BlockName::GqfGamma, oracle.block(&mesh, &dofs, Field::Q, Field::V, -pen, &dir(nrm), &dir(nrm)));
        check(BlockName::GqpSigma, oracle.block(&mesh, &dofs, Field::Q, Field::Pf, -1.0, &dir(nrm), &scalar));
        check(
            BlockName::GsfGamma,
            both(&|d| oracle.block(&mesh, &dofs, Field::U, Field::V, -pen / tau, &dir(d), &dir(d))),
        );
        check(
            BlockName::Gs,
            both(&|d| oracle.block(&mesh, &dofs, Field::U, Field::U, pen / (tau * tau), &dir(d), &dir(d))),
        );
        check(BlockName::GspAdj, oracle.block(&mesh, &dofs, Field::Pf, Field::U, 1.0 / tau, &scalar, &dir(nrm)));
        check(
            BlockName::SpGamma,
            oracle.block(&mesh, &dofs, Field::Pf, Field::Pf, nit.gamma_stab * he / (nit.gamma_f * mu), &scalar, &scalar),
        );
    }
    worst
}
