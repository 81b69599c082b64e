//! Bilinear forms and the named block operators of one time step.
//!
//! All step operators are written for the unknown `Y = [v, p_f, q, p_p, U, Udot]`
//! at the new time level. The two structure rows are tested with
//! `phi / tau` so that the quadratic form `Y^T A Y` of a step started from
//! rest is the discrete energy of `Y`; the interface penalty then reads
//! `(v - q - (U - U_prev)/tau) . (phi_f - r - phi_p / tau)` and its
//! velocity/flux/displacement part is symmetric.

use std::collections::BTreeMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{edge_quad, shape_values, Constraints, DofMap, ElementKind, Field, TriGeom, TRI_QUAD};
use crate::mesh::{Mesh2D, Region};
use crate::sparsela::{CsrMatrix, TripletBuilder};

/// Material data. `kappa` is the hydraulic conductivity tensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysParams {
    pub rho_f: f64,
    pub mu_f: f64,
    pub rho_p: f64,
    pub mu_p: f64,
    pub lambda_p: f64,
    /// A scalar in JSON stands for an isotropic tensor.
    #[serde(deserialize_with = "kappa_from_json")]
    pub kappa: [[f64; 2]; 2],
    pub s0: f64,
    pub alpha: f64,
    #[serde(default)]
    pub xi: f64,
}

fn kappa_from_json<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<[[f64; 2]; 2], D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum K {
        Scalar(f64),
        Tensor([[f64; 2]; 2]),
    }
    Ok(match K::deserialize(d)? {
        K::Scalar(k) => [[k, 0.0], [0.0, k]],
        K::Tensor(t) => t,
    })
}

impl PhysParams {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        for (k, v) in [
            ("rho_f", self.rho_f),
            ("mu_f", self.mu_f),
            ("rho_p", self.rho_p),
            ("mu_p", self.mu_p),
            ("lambda_p", self.lambda_p),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                errs.push(format!("physParams.{k} must be positive, got {v}"));
            }
        }
        for (k, v) in [("s0", self.s0), ("alpha", self.alpha), ("xi", self.xi)] {
            if !(v >= 0.0) || !v.is_finite() {
                errs.push(format!("physParams.{k} must be non-negative, got {v}"));
            }
        }
        let k = self.kappa;
        let det = k[0][0] * k[1][1] - k[0][1] * k[1][0];
        if !(k[0][0] > 0.0) || !(det > 0.0) || (k[0][1] - k[1][0]).abs() > 1e-12 * k[0][0].abs() {
            errs.push("physParams.kappa must be symmetric positive definite".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errs))
        }
    }

    /// Closed-form inverse of the conductivity tensor.
    pub fn kappa_inv(&self) -> [[f64; 2]; 2] {
        let k = self.kappa;
        let det = k[0][0] * k[1][1] - k[0][1] * k[1][0];
        [[k[1][1] / det, -k[0][1] / det], [-k[1][0] / det, k[0][0] / det]]
    }
}

/// Tangential interface condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Tangential {
    /// Tangential velocity continuity, imposed with the full Nitsche terms.
    NoSlip,
    /// Beavers-Joseph-Saffman slip with friction coefficient `beta`.
    Bjs { beta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NitscheParams {
    pub gamma_f: f64,
    pub gamma_stab: f64,
    #[serde(default)]
    pub gamma_stab_prime: f64,
    /// `1` symmetric, `0` incomplete, `-1` skew-symmetric variant.
    pub varsigma: f64,
    #[serde(default)]
    pub gamma_p: f64,
    #[serde(default)]
    pub gamma_q: f64,
    pub tangential: Tangential,
}

impl NitscheParams {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(self.gamma_f > 0.0) {
            errs.push(format!("nitscheParams.gamma_f must be positive, got {}", self.gamma_f));
        }
        for (k, v) in [
            ("gamma_stab", self.gamma_stab),
            ("gamma_stab_prime", self.gamma_stab_prime),
            ("gamma_p", self.gamma_p),
            ("gamma_q", self.gamma_q),
        ] {
            if !(v >= 0.0) {
                errs.push(format!("nitscheParams.{k} must be non-negative, got {v}"));
            }
        }
        if ![1.0, 0.0, -1.0].contains(&self.varsigma) {
            errs.push(format!("nitscheParams.varsigma must be 1, 0 or -1, got {}", self.varsigma));
        }
        if let Tangential::Bjs { beta } = self.tangential {
            if !(beta >= 0.0) {
                errs.push(format!("nitscheParams.tangential.beta must be non-negative, got {beta}"));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errs))
        }
    }
}

/// Values and gradients of one element's shape functions at the volume
/// quadrature points.
struct ElemEval {
    n: usize,
    w: [f64; 6],
    vals: [[f64; 6]; 6],
    grads: [[[f64; 2]; 6]; 6],
}

impl ElemEval {
    fn new(g: &TriGeom, kind: ElementKind) -> Self {
        let mut e = ElemEval { n: kind.n_local(), w: [0.0; 6], vals: [[0.0; 6]; 6], grads: [[[0.0; 2]; 6]; 6] };
        for (q, (l, w)) in TRI_QUAD.iter().enumerate() {
            e.w[q] = w * g.area;
            e.vals[q] = shape_values(kind, *l);
            e.grads[q] = g.shape_grads(kind, *l);
        }
        e
    }
}

/// Local element matrices, row-major, rows = test, columns = trial. Vector
/// fields use the interleaved local index `2 a + c`.
pub mod kernels {
    use super::*;

    pub fn mass_scalar(g: &TriGeom, kind: ElementKind, w: f64) -> Vec<f64> {
        let e = ElemEval::new(g, kind);
        let n = e.n;
        let mut out = vec![0.0; n * n];
        for q in 0..6 {
            for a in 0..n {
                for b in 0..n {
                    out[a * n + b] += w * e.w[q] * e.vals[q][a] * e.vals[q][b];
                }
            }
        }
        out
    }

    /// `int (K u) . v`, with `K = w I` for a plain vector mass.
    pub fn mass_tensor(g: &TriGeom, kind: ElementKind, k: [[f64; 2]; 2]) -> Vec<f64> {
        let s = mass_scalar(g, kind, 1.0);
        let n = kind.n_local();
        let m = 2 * n;
        let mut out = vec![0.0; m * m];
        for a in 0..n {
            for b in 0..n {
                for c in 0..2 {
                    for d in 0..2 {
                        out[(2 * a + c) * m + 2 * b + d] = k[c][d] * s[a * n + b];
                    }
                }
            }
        }
        out
    }

    /// `2 mu int D(u) : D(v)`.
    pub fn strain(g: &TriGeom, kind: ElementKind, mu: f64) -> Vec<f64> {
        let e = ElemEval::new(g, kind);
        let n = e.n;
        let m = 2 * n;
        let mut out = vec![0.0; m * m];
        for q in 0..6 {
            let gr = &e.grads[q];
            for a in 0..n {
                for b in 0..n {
                    let gg = gr[a][0] * gr[b][0] + gr[a][1] * gr[b][1];
                    for c in 0..2 {
                        for d in 0..2 {
                            let dd = if c == d { gg } else { 0.0 };
                            out[(2 * a + c) * m + 2 * b + d] += mu * e.w[q] * (dd + gr[a][d] * gr[b][c]);
                        }
                    }
                }
            }
        }
        out
    }

    /// `lambda int div u div v`.
    pub fn divdiv(g: &TriGeom, kind: ElementKind, lambda: f64) -> Vec<f64> {
        let e = ElemEval::new(g, kind);
        let n = e.n;
        let m = 2 * n;
        let mut out = vec![0.0; m * m];
        for q in 0..6 {
            let gr = &e.grads[q];
            for a in 0..n {
                for b in 0..n {
                    for c in 0..2 {
                        for d in 0..2 {
                            out[(2 * a + c) * m + 2 * b + d] += lambda * e.w[q] * gr[a][c] * gr[b][d];
                        }
                    }
                }
            }
        }
        out
    }

    /// `w int p div v`, rows = vector test functions, columns = pressure.
    pub fn div_pressure(g: &TriGeom, vkind: ElementKind, pkind: ElementKind, w: f64) -> Vec<f64> {
        let ev = ElemEval::new(g, vkind);
        let ep = ElemEval::new(g, pkind);
        let (nv, np) = (ev.n, ep.n);
        let mut out = vec![0.0; 2 * nv * np];
        for q in 0..6 {
            for a in 0..nv {
                for c in 0..2 {
                    for k in 0..np {
                        out[(2 * a + c) * np + k] += w * ev.w[q] * ev.grads[q][a][c] * ep.vals[q][k];
                    }
                }
            }
        }
        out
    }

    /// `w int grad p . grad q`.
    pub fn grad_grad(g: &TriGeom, kind: ElementKind, w: f64) -> Vec<f64> {
        let e = ElemEval::new(g, kind);
        let n = e.n;
        let mut out = vec![0.0; n * n];
        for q in 0..6 {
            let gr = &e.grads[q];
            for a in 0..n {
                for b in 0..n {
                    out[a * n + b] += w * e.w[q] * (gr[a][0] * gr[b][0] + gr[a][1] * gr[b][1]);
                }
            }
        }
        out
    }

    /// `int f v` for a constant `f`.
    pub fn load(g: &TriGeom, kind: ElementKind, f: f64) -> Vec<f64> {
        let e = ElemEval::new(g, kind);
        let mut out = vec![0.0; e.n];
        for q in 0..6 {
            for a in 0..e.n {
                out[a] += f * e.w[q] * e.vals[q][a];
            }
        }
        out
    }
}

/// Global assembly of the raw (unscaled) forms. Every matrix is square in
/// the global numbering with support in its row and column field blocks.
pub struct Assembler<'a> {
    pub mesh: &'a Mesh2D,
    pub dofs: &'a DofMap,
}

impl<'a> Assembler<'a> {
    pub fn new(mesh: &'a Mesh2D, dofs: &'a DofMap) -> Self {
        Assembler { mesh, dofs }
    }

    fn n(&self) -> usize {
        self.dofs.n_dofs
    }

    fn elements(&self, region: Region) -> impl Iterator<Item = (usize, TriGeom)> + '_ {
        (0..self.mesh.n_triangles())
            .filter(move |&k| self.mesh.regions[k] == region)
            .map(|k| (k, TriGeom::new(self.mesh.tri_coords(k))))
    }

    fn assemble(&self, row: Field, col: Field, local: impl Fn(usize, &TriGeom) -> Vec<f64>) -> CsrMatrix {
        assert_eq!(row.region(), col.region());
        let mut b = TripletBuilder::new(self.n(), self.n());
        for (k, g) in self.elements(row.region()) {
            let rd = self.dofs.element_dofs(self.mesh, row, k);
            let cd = self.dofs.element_dofs(self.mesh, col, k);
            b.add_local(&rd, &cd, &local(k, &g));
        }
        b.build()
    }

    /// `w int u . v` (or `u v`) between two fields on the same space.
    pub fn mass_between(&self, row: Field, col: Field, w: f64) -> CsrMatrix {
        let kind = self.dofs.kind(row);
        assert_eq!(kind, self.dofs.kind(col));
        if row.comps() == 1 {
            self.assemble(row, col, |_, g| kernels::mass_scalar(g, kind, w))
        } else {
            self.assemble(row, col, |_, g| kernels::mass_tensor(g, kind, [[w, 0.0], [0.0, w]]))
        }
    }

    pub fn mass(&self, f: Field, w: f64) -> CsrMatrix {
        self.mass_between(f, f, w)
    }

    pub fn tensor_mass(&self, f: Field, k: [[f64; 2]; 2]) -> CsrMatrix {
        let kind = self.dofs.kind(f);
        self.assemble(f, f, |_, g| kernels::mass_tensor(g, kind, k))
    }

    pub fn strain(&self, f: Field, mu: f64) -> CsrMatrix {
        let kind = self.dofs.kind(f);
        self.assemble(f, f, |_, g| kernels::strain(g, kind, mu))
    }

    pub fn divdiv(&self, f: Field, lambda: f64) -> CsrMatrix {
        let kind = self.dofs.kind(f);
        self.assemble(f, f, |_, g| kernels::divdiv(g, kind, lambda))
    }

    /// `w int p div v`, rows in the vector field, columns in the pressure.
    pub fn div_pressure(&self, v: Field, p: Field, w: f64) -> CsrMatrix {
        let (vk, pk) = (self.dofs.kind(v), self.dofs.kind(p));
        self.assemble(v, p, |_, g| kernels::div_pressure(g, vk, pk, w))
    }

    /// `gamma h_T^2 int grad p . grad q` with `h_T` the longest edge.
    pub fn pressure_stabilization(&self, f: Field, gamma: f64) -> CsrMatrix {
        let kind = self.dofs.kind(f);
        self.assemble(f, f, |k, g| {
            let h = self.mesh.diameter(k);
            kernels::grad_grad(g, kind, gamma * h * h)
        })
    }

    /// `a_s(U, phi) = 2 mu_p (D U, D phi) + lambda_p (div U, div phi) + xi (U, phi)`.
    pub fn a_s(&self, p: &PhysParams) -> CsrMatrix {
        let mut a = self.strain(Field::U, p.mu_p).add(&self.divdiv(Field::U, p.lambda_p), 1.0);
        if p.xi != 0.0 {
            a = a.add(&self.mass(Field::U, p.xi), 1.0);
        }
        a
    }

    /// `b_s(p, phi) = alpha (p, div phi)`, rows `U`, columns `p_p`.
    pub fn b_s(&self, alpha: f64) -> CsrMatrix {
        self.div_pressure(Field::U, Field::Pp, alpha)
    }

    pub fn a_f(&self, mu_f: f64) -> CsrMatrix {
        self.strain(Field::V, mu_f)
    }

    /// `b_f(p, phi) = (p, div phi)`, rows `v`, columns `p_f`.
    pub fn b_f(&self) -> CsrMatrix {
        self.div_pressure(Field::V, Field::Pf, 1.0)
    }

    pub fn a_p(&self, p: &PhysParams) -> CsrMatrix {
        self.tensor_mass(Field::Q, p.kappa_inv())
    }

    /// `b_p(p, r) = (p, div r)`, rows `q`, columns `p_p`.
    pub fn b_p(&self) -> CsrMatrix {
        self.div_pressure(Field::Q, Field::Pp, 1.0)
    }

    /// `-int_{label} p phi . n` with unit `p`, for a traction boundary.
    pub fn normal_traction(&self, f: Field, label: crate::mesh::BoundaryLabel) -> Vec<f64> {
        let kind = self.dofs.kind(f);
        let mut out = vec![0.0; self.n()];
        for be in self.mesh.boundary_with(label) {
            let g = TriGeom::new(self.mesh.tri_coords(be.tri));
            let dofs = self.dofs.element_dofs(self.mesh, f, be.tri);
            let (a, b) = (self.mesh.vertices[be.v[0]], self.mesh.vertices[be.v[1]]);
            for (s, w) in edge_quad() {
                let x = [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])];
                let nv = shape_values(kind, g.barycentric(x));
                for i in 0..kind.n_local() {
                    for c in 0..2 {
                        out[dofs[2 * i + c]] -= w * be.length * nv[i] * be.normal[c];
                    }
                }
            }
        }
        out
    }

    /// `int_{tris} g psi` over the listed triangles.
    pub fn source(&self, f: Field, tris: &[usize], g: f64) -> Vec<f64> {
        let kind = self.dofs.kind(f);
        let mut out = vec![0.0; self.n()];
        for &k in tris {
            let geo = TriGeom::new(self.mesh.tri_coords(k));
            let dofs = self.dofs.element_dofs(self.mesh, f, k);
            for (d, v) in dofs.iter().zip(kernels::load(&geo, kind, g)) {
                out[*d] += v;
            }
        }
        out
    }
}

/// Names of the operator blocks. Positions are `(row field, column field)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BlockName {
    Mf,
    Af,
    Bpf,
    BpfT,
    SpBp,
    SpGamma,
    Aq,
    Bpq,
    BpqT,
    Mp,
    SqDom,
    As,
    Bsp,
    BspT,
    Ms,
    MsT,
    MsDot,
    GfSigma,
    GpfSigma,
    GqfSigma,
    GqpSigma,
    GsfSigma,
    GspSigma,
    GfSigmaAdj,
    GqfSigmaAdj,
    GsfSigmaAdj,
    Gpf,
    GqpAdj,
    GspAdj,
    GfGamma,
    GqfGamma,
    GqfGammaT,
    GsfGamma,
    GsfGammaT,
    Gq,
    Gsq,
    GsqT,
    Gs,
    Sf,
    Sq,
}

impl BlockName {
    pub const ALL: [BlockName; 40] = [
        BlockName::Mf,
        BlockName::Af,
        BlockName::Bpf,
        BlockName::BpfT,
        BlockName::SpBp,
        BlockName::SpGamma,
        BlockName::Aq,
        BlockName::Bpq,
        BlockName::BpqT,
        BlockName::Mp,
        BlockName::SqDom,
        BlockName::As,
        BlockName::Bsp,
        BlockName::BspT,
        BlockName::Ms,
        BlockName::MsT,
        BlockName::MsDot,
        BlockName::GfSigma,
        BlockName::GpfSigma,
        BlockName::GqfSigma,
        BlockName::GqpSigma,
        BlockName::GsfSigma,
        BlockName::GspSigma,
        BlockName::GfSigmaAdj,
        BlockName::GqfSigmaAdj,
        BlockName::GsfSigmaAdj,
        BlockName::Gpf,
        BlockName::GqpAdj,
        BlockName::GspAdj,
        BlockName::GfGamma,
        BlockName::GqfGamma,
        BlockName::GqfGammaT,
        BlockName::GsfGamma,
        BlockName::GsfGammaT,
        BlockName::Gq,
        BlockName::Gsq,
        BlockName::GsqT,
        BlockName::Gs,
        BlockName::Sf,
        BlockName::Sq,
    ];

    pub fn label(self) -> &'static str {
        use BlockName::*;
        match self {
            Mf => "M_f",
            Af => "A_f",
            Bpf => "B_pf",
            BpfT => "-B_pf^T",
            SpBp => "S_p^dom",
            SpGamma => "S_p",
            Aq => "A_q",
            Bpq => "B_pq",
            BpqT => "-B_pq^T",
            Mp => "M_p",
            SqDom => "S_q^dom",
            As => "A_s",
            Bsp => "-B_sp",
            BspT => "B_sp^T",
            Ms => "M_s",
            MsT => "-M_s",
            MsDot => "Mdot_s",
            GfSigma => "Gamma_f^sigma",
            GpfSigma => "Gamma_pf^T",
            GqfSigma => "Gamma_qf^sigma",
            GqpSigma => "Gamma_qp",
            GsfSigma => "Gamma_sf^sigma",
            GspSigma => "Gamma_sp^sigma",
            GfSigmaAdj => "(Gamma_f^sigma)^T",
            GqfSigmaAdj => "(Gamma_qf^sigma)^T",
            GsfSigmaAdj => "(Gamma_sf^sigma)^T",
            Gpf => "Gamma_pf",
            GqpAdj => "Gamma_qp^T",
            GspAdj => "Gamma_sp^T",
            GfGamma => "Gamma_f^gamma",
            GqfGamma => "Gamma_qf^gamma",
            GqfGammaT => "(Gamma_qf^gamma)^T",
            GsfGamma => "Gamma_sf^gamma",
            GsfGammaT => "(Gamma_sf^gamma)^T",
            Gq => "Gamma_q",
            Gsq => "Gamma_sq^gamma",
            GsqT => "(Gamma_sq^gamma)^T",
            Gs => "Gamma_s",
            Sf => "S_f",
            Sq => "S_q",
        }
    }

    pub fn position(self) -> (Field, Field) {
        use BlockName::*;
        use Field::*;
        match self {
            Mf | Af | GfSigma | GfSigmaAdj | GfGamma | Sf => (V, V),
            BpfT | GpfSigma => (V, Pf),
            GqfSigmaAdj | GqfGammaT => (V, Q),
            GsfSigmaAdj | GsfGammaT => (V, U),
            Bpf | Gpf => (Pf, V),
            SpBp | SpGamma => (Pf, Pf),
            GqpAdj => (Pf, Q),
            GspAdj => (Pf, U),
            GqfSigma | GqfGamma => (Q, V),
            GqpSigma => (Q, Pf),
            Aq | Gq | Sq => (Q, Q),
            BpqT => (Q, Pp),
            GsqT => (Q, U),
            Bpq => (Pp, Q),
            Mp | SqDom => (Pp, Pp),
            BspT => (Pp, U),
            GsfSigma | GsfGamma => (U, V),
            GspSigma => (U, Pf),
            Gsq => (U, Q),
            Bsp => (U, Pp),
            As | Gs => (U, U),
            Ms => (U, Ud),
            MsT => (Ud, U),
            MsDot => (Ud, Ud),
        }
    }

    /// Blocks acting on time differences: they reappear in the history
    /// operator applied to the previous state.
    pub fn in_history(self) -> bool {
        use BlockName::*;
        matches!(self, Mf | SpGamma | Mp | Ms | MsT | BspT | GsfSigmaAdj | GspAdj | GsfGammaT | GsqT | Gs)
    }

    /// Blocks evaluated at the previous time level by the splitting with
    /// parameter `theta`.
    pub fn lagged(self, theta: u8) -> bool {
        use BlockName::*;
        match self {
            GfSigma | GpfSigma | GqfSigma | GqpSigma | GsfSigma | GspSigma | GqfGamma | GsfGamma => true,
            Bsp | Gsq => theta == 1,
            _ => false,
        }
    }

    /// Splitting stabilizers, present only in the loosely coupled operator.
    pub fn splitting_only(self) -> bool {
        matches!(self, BlockName::Sf | BlockName::Sq)
    }
}

/// Interface Gram matrices with unit weight for the kinematic misfits; the
/// displacement enters as `U / tau`.
#[derive(Debug, Clone)]
pub struct InterfaceGram {
    pub normal: CsrMatrix,
    pub tangential: CsrMatrix,
    /// Same with the weight `1 / h_e`.
    pub normal_h: CsrMatrix,
    pub tangential_h: CsrMatrix,
    /// `int_Gamma p psi` on the fluid pressure.
    pub pf_mass: CsrMatrix,
    /// `int_Gamma h_e p psi` on the fluid pressure.
    pub pf_mass_h: CsrMatrix,
    /// `sum_e h_e int_e (D(u) n) . (D(v) n)` on the fluid velocity.
    pub strain_trace_h: CsrMatrix,
}

struct Trace {
    vn: Vec<f64>,
    vt: Vec<f64>,
    sn: Vec<f64>,
    st: Vec<f64>,
    dn: [Vec<f64>; 2],
    pn: Vec<f64>,
    pv: Vec<f64>,
    qn: Vec<f64>,
    un: Vec<f64>,
    ut: Vec<f64>,
}

fn outer(b: &mut TripletBuilder, rows: &[usize], cols: &[usize], w: f64, x: &[f64], y: &[f64]) {
    if w == 0.0 {
        return;
    }
    for (i, &r) in rows.iter().enumerate() {
        if x[i] == 0.0 {
            continue;
        }
        for (j, &c) in cols.iter().enumerate() {
            if y[j] != 0.0 {
                b.add(r, c, w * x[i] * y[j]);
            }
        }
    }
}

impl<'a> Assembler<'a> {
    fn traces(&self, e: &crate::mesh::InterfaceEdge, x: [f64; 2], mu_f: f64) -> Trace {
        let m = self.mesh;
        let n = e.normal;
        let t = [-n[1], n[0]];
        let gf = TriGeom::new(m.tri_coords(e.fluid_tri));
        let gp = TriGeom::new(m.tri_coords(e.porous_tri));
        let (lf, lp) = (gf.barycentric(x), gp.barycentric(x));
        let vk = self.dofs.kind(Field::V);
        let nv = vk.n_local();
        let vv = shape_values(vk, lf);
        let vg = gf.shape_grads(vk, lf);
        let mut tr = Trace {
            vn: vec![0.0; 2 * nv],
            vt: vec![0.0; 2 * nv],
            sn: vec![0.0; 2 * nv],
            st: vec![0.0; 2 * nv],
            dn: [vec![0.0; 2 * nv], vec![0.0; 2 * nv]],
            pn: Vec::new(),
            pv: Vec::new(),
            qn: Vec::new(),
            un: Vec::new(),
            ut: Vec::new(),
        };
        for a in 0..nv {
            let gn = vg[a][0] * n[0] + vg[a][1] * n[1];
            let gt = vg[a][0] * t[0] + vg[a][1] * t[1];
            for c in 0..2 {
                let i = 2 * a + c;
                tr.vn[i] = vv[a] * n[c];
                tr.vt[i] = vv[a] * t[c];
                tr.sn[i] = 2.0 * mu_f * n[c] * gn;
                tr.st[i] = mu_f * (t[c] * gn + gt * n[c]);
                // D(phi) n, component-wise
                for k in 0..2 {
                    let delta = if k == c { gn } else { 0.0 };
                    tr.dn[k][i] = 0.5 * (delta + vg[a][k] * n[c]);
                }
            }
        }
        let pk = self.dofs.kind(Field::Pf);
        let pv = shape_values(pk, lf);
        tr.pv = pv[..pk.n_local()].to_vec();
        tr.pn = tr.pv.iter().map(|v| -v).collect();
        let qk = self.dofs.kind(Field::Q);
        let qv = shape_values(qk, lp);
        for a in 0..qk.n_local() {
            for c in 0..2 {
                tr.qn.push(qv[a] * n[c]);
            }
        }
        let uk = self.dofs.kind(Field::U);
        let uv = shape_values(uk, lp);
        for a in 0..uk.n_local() {
            for c in 0..2 {
                tr.un.push(uv[a] * n[c]);
                tr.ut.push(uv[a] * t[c]);
            }
        }
        tr
    }

    /// Interface consistency, symmetrization, penalty and stabilization
    /// blocks for time step `tau`.
    pub fn interface_blocks(&self, phys: &PhysParams, nit: &NitscheParams, tau: f64) -> BTreeMap<BlockName, CsrMatrix> {
        use BlockName::*;
        let n = self.n();
        let names = [
            GfSigma, GpfSigma, GqfSigma, GqpSigma, GsfSigma, GspSigma, GfSigmaAdj, GqfSigmaAdj, GsfSigmaAdj, Gpf, GqpAdj,
            GspAdj, GfGamma, GqfGamma, GqfGammaT, GsfGamma, GsfGammaT, Gq, Gsq, GsqT, Gs, SpGamma, Sf, Sq,
        ];
        let mut bs: BTreeMap<BlockName, TripletBuilder> = names.iter().map(|&k| (k, TripletBuilder::new(n, n))).collect();
        let mu = phys.mu_f;
        let vs = nit.varsigma;
        let slip = matches!(nit.tangential, Tangential::NoSlip);
        let it = 1.0 / tau;
        for e in &self.mesh.interface {
            let vd = self.dofs.element_dofs(self.mesh, Field::V, e.fluid_tri);
            let pd = self.dofs.element_dofs(self.mesh, Field::Pf, e.fluid_tri);
            let qd = self.dofs.element_dofs(self.mesh, Field::Q, e.porous_tri);
            let ud = self.dofs.element_dofs(self.mesh, Field::U, e.porous_tri);
            let he = e.length;
            let pen = nit.gamma_f * mu / he;
            let pen_t = match nit.tangential {
                Tangential::NoSlip => pen,
                Tangential::Bjs { beta } => beta,
            };
            let (a, b) = (self.mesh.vertices[e.v[0]], self.mesh.vertices[e.v[1]]);
            for (s, wq) in edge_quad() {
                let x = [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])];
                let tr = self.traces(e, x, mu);
                let w = wq * he;
                let ts = if slip { 1.0 } else { 0.0 };
                let mut add = |name: BlockName, rows: &[usize], cols: &[usize], w: f64, x: &[f64], y: &[f64]| {
                    outer(bs.get_mut(&name).unwrap(), rows, cols, w, x, y);
                };
                // consistency
                add(GfSigma, &vd, &vd, -w, &tr.vn, &tr.sn);
                add(GfSigma, &vd, &vd, -w * ts, &tr.vt, &tr.st);
                add(GpfSigma, &vd, &pd, -w, &tr.vn, &tr.pn);
                add(GqfSigma, &qd, &vd, w, &tr.qn, &tr.sn);
                add(GqpSigma, &qd, &pd, w, &tr.qn, &tr.pn);
                add(GsfSigma, &ud, &vd, w * it, &tr.un, &tr.sn);
                add(GsfSigma, &ud, &vd, w * it * ts, &tr.ut, &tr.st);
                add(GspSigma, &ud, &pd, w * it, &tr.un, &tr.pn);
                // symmetrization
                add(GfSigmaAdj, &vd, &vd, -w * vs, &tr.sn, &tr.vn);
                add(GfSigmaAdj, &vd, &vd, -w * vs * ts, &tr.st, &tr.vt);
                add(GqfSigmaAdj, &vd, &qd, w * vs, &tr.sn, &tr.qn);
                add(GsfSigmaAdj, &vd, &ud, w * vs * it, &tr.sn, &tr.un);
                add(GsfSigmaAdj, &vd, &ud, w * vs * it * ts, &tr.st, &tr.ut);
                add(Gpf, &pd, &vd, w, &tr.pn, &tr.vn);
                add(GqpAdj, &pd, &qd, -w, &tr.pn, &tr.qn);
                add(GspAdj, &pd, &ud, -w * it, &tr.pn, &tr.un);
                // penalty: jumps v - q - U/tau (normal), v - U/tau (tangential)
                let (wn, wt) = (w * pen, w * pen_t);
                add(GfGamma, &vd, &vd, wn, &tr.vn, &tr.vn);
                add(GfGamma, &vd, &vd, wt, &tr.vt, &tr.vt);
                add(GqfGamma, &qd, &vd, -wn, &tr.qn, &tr.vn);
                add(GqfGammaT, &vd, &qd, -wn, &tr.vn, &tr.qn);
                add(GsfGamma, &ud, &vd, -wn * it, &tr.un, &tr.vn);
                add(GsfGamma, &ud, &vd, -wt * it, &tr.ut, &tr.vt);
                add(GsfGammaT, &vd, &ud, -wn * it, &tr.vn, &tr.un);
                add(GsfGammaT, &vd, &ud, -wt * it, &tr.vt, &tr.ut);
                add(Gq, &qd, &qd, wn, &tr.qn, &tr.qn);
                add(Gsq, &ud, &qd, wn * it, &tr.un, &tr.qn);
                add(GsqT, &qd, &ud, wn * it, &tr.qn, &tr.un);
                add(Gs, &ud, &ud, wn * it * it, &tr.un, &tr.un);
                add(Gs, &ud, &ud, wt * it * it, &tr.ut, &tr.ut);
                // stabilizers
                add(SpGamma, &pd, &pd, w * nit.gamma_stab * he / (nit.gamma_f * mu), &tr.pv, &tr.pv);
                add(Sf, &vd, &vd, w * nit.gamma_stab_prime * pen, &tr.vn, &tr.vn);
                add(Sq, &qd, &qd, w * nit.gamma_stab_prime * pen, &tr.qn, &tr.qn);
            }
        }
        bs.into_iter().map(|(k, b)| (k, b.build())).filter(|(_, m)| m.nnz() > 0).collect()
    }

    pub fn interface_gram(&self, tau: f64) -> InterfaceGram {
        let n = self.n();
        let mut g: Vec<TripletBuilder> = (0..7).map(|_| TripletBuilder::new(n, n)).collect();
        let it = 1.0 / tau;
        for e in &self.mesh.interface {
            let vd = self.dofs.element_dofs(self.mesh, Field::V, e.fluid_tri);
            let pd = self.dofs.element_dofs(self.mesh, Field::Pf, e.fluid_tri);
            let qd = self.dofs.element_dofs(self.mesh, Field::Q, e.porous_tri);
            let ud = self.dofs.element_dofs(self.mesh, Field::U, e.porous_tri);
            let mut jd = vd.clone();
            jd.extend(&qd);
            jd.extend(&ud);
            let mut kd = vd.clone();
            kd.extend(&ud);
            let he = e.length;
            let (a, b) = (self.mesh.vertices[e.v[0]], self.mesh.vertices[e.v[1]]);
            for (s, wq) in edge_quad() {
                let x = [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])];
                let tr = self.traces(e, x, 1.0);
                let w = wq * he;
                let mut jn = tr.vn.clone();
                jn.extend(tr.qn.iter().map(|v| -v));
                jn.extend(tr.un.iter().map(|v| -v * it));
                let mut jt = tr.vt.clone();
                jt.extend(tr.ut.iter().map(|v| -v * it));
                outer(&mut g[0], &jd, &jd, w, &jn, &jn);
                outer(&mut g[1], &kd, &kd, w, &jt, &jt);
                outer(&mut g[2], &jd, &jd, w / he, &jn, &jn);
                outer(&mut g[3], &kd, &kd, w / he, &jt, &jt);
                outer(&mut g[4], &pd, &pd, w, &tr.pv, &tr.pv);
                outer(&mut g[5], &pd, &pd, w * he, &tr.pv, &tr.pv);
                for k in 0..2 {
                    outer(&mut g[6], &vd, &vd, w * he, &tr.dn[k], &tr.dn[k]);
                }
            }
        }
        let mut it = g.into_iter().map(|b| b.build());
        InterfaceGram {
            normal: it.next().unwrap(),
            tangential: it.next().unwrap(),
            normal_h: it.next().unwrap(),
            tangential_h: it.next().unwrap(),
            pf_mass: it.next().unwrap(),
            pf_mass_h: it.next().unwrap(),
            strain_trace_h: it.next().unwrap(),
        }
    }
}

/// Step operators assembled from named blocks.
///
/// `monolithic` is the constrained fully coupled operator (with the fluid
/// pressure interface stabilization), `loose` the constrained splitting
/// operator, which is block upper triangular over `groups`. The history
/// operator maps the previous state to the right-hand side.
#[derive(Debug, Clone)]
pub struct BlockSystem {
    pub tau: f64,
    pub theta: u8,
    pub blocks: BTreeMap<BlockName, CsrMatrix>,
    pub constraints: Constraints,
    pub monolithic: CsrMatrix,
    pub loose: CsrMatrix,
    pub history: CsrMatrix,
    pub groups: Vec<Range<usize>>,
    pub field_ranges: Vec<Range<usize>>,
}

impl BlockSystem {
    #[allow(clippy::too_many_arguments)]
    pub fn assemble(
        mesh: &Mesh2D,
        dofs: &DofMap,
        phys: &PhysParams,
        nit: &NitscheParams,
        tau: f64,
        theta: u8,
        constraints: Constraints,
    ) -> Result<BlockSystem> {
        if !(tau > 0.0) {
            return Err(Error::Parameter(format!("time step must be positive, got {tau}")));
        }
        if theta > 1 {
            return Err(Error::Parameter(format!("theta must be 0 or 1, got {theta}")));
        }
        if constraints.n() != dofs.n_dofs {
            return Err(Error::Dimension("constraints do not match the dof count".into()));
        }
        use BlockName::*;
        let asm = Assembler::new(mesh, dofs);
        let mut blocks = asm.interface_blocks(phys, nit, tau);
        let bf = asm.b_f();
        let bp = asm.b_p();
        let bs = asm.b_s(phys.alpha);
        let vol = [
            (Mf, asm.mass(Field::V, phys.rho_f / tau)),
            (Af, asm.a_f(phys.mu_f)),
            (Bpf, bf.transpose()),
            (BpfT, bf.scale(-1.0)),
            (SpBp, asm.pressure_stabilization(Field::Pf, nit.gamma_p)),
            (Aq, asm.a_p(phys)),
            (Bpq, bp.transpose()),
            (BpqT, bp.scale(-1.0)),
            (Mp, asm.mass(Field::Pp, phys.s0 / tau)),
            (SqDom, asm.pressure_stabilization(Field::Pp, nit.gamma_q)),
            (As, asm.a_s(phys).scale(1.0 / tau)),
            (Bsp, bs.scale(-1.0 / tau)),
            (BspT, bs.transpose().scale(1.0 / tau)),
            (Ms, asm.mass_between(Field::U, Field::Ud, phys.rho_p / (tau * tau))),
            (MsT, asm.mass_between(Field::Ud, Field::U, -phys.rho_p / (tau * tau))),
            (MsDot, asm.mass(Field::Ud, phys.rho_p / tau)),
        ];
        for (k, m) in vol {
            if m.nnz() > 0 && m.max_abs() > 0.0 {
                blocks.insert(k, m);
            }
        }
        let n = dofs.n_dofs;
        let sum = |pred: &dyn Fn(BlockName) -> bool| {
            blocks.iter().filter(|(k, _)| pred(**k)).fold(CsrMatrix::zeros(n, n), |acc, (_, m)| acc.add(m, 1.0))
        };
        let mono_raw = sum(&|k| !k.splitting_only());
        let loose_raw = sum(&|k| if k.splitting_only() { theta == 1 } else { !k.lagged(theta) });
        let history = sum(&|k| k.in_history());
        let monolithic = constraints.apply(&mono_raw);
        let loose = constraints.apply(&loose_raw);
        let fg = |fs: &[Field]| dofs.group_range(fs);
        let groups = if theta == 1 {
            vec![fg(&[Field::V, Field::Pf]), fg(&[Field::Q, Field::Pp]), fg(&[Field::U, Field::Ud])]
        } else {
            vec![fg(&[Field::V, Field::Pf]), fg(&[Field::Q, Field::Pp, Field::U, Field::Ud])]
        };
        let field_ranges = Field::ALL.iter().map(|&f| dofs.range(f)).collect();
        Ok(BlockSystem { tau, theta, blocks, constraints, monolithic, loose, history, groups, field_ranges })
    }

    pub fn n(&self) -> usize {
        self.monolithic.nrows
    }

    pub fn block(&self, name: BlockName) -> Option<&CsrMatrix> {
        self.blocks.get(&name)
    }

    /// Sum of the named blocks that exist.
    pub fn sum_of(&self, names: &[BlockName]) -> CsrMatrix {
        let n = self.n();
        names.iter().filter_map(|k| self.blocks.get(k)).fold(CsrMatrix::zeros(n, n), |a, m| a.add(m, 1.0))
    }

    /// `P (F + R y_prev)`.
    pub fn rhs(&self, forcing: &[f64], prev: &[f64]) -> Vec<f64> {
        let mut r = forcing.to_vec();
        self.history.spmv_add(1.0, prev, &mut r);
        self.constraints.project(&mut r);
        r
    }

    /// Raw monolithic operator minus raw splitting operator.
    pub fn splitting_defect(&self) -> CsrMatrix {
        let n = self.n();
        let mut d = CsrMatrix::zeros(n, n);
        for (k, m) in &self.blocks {
            if k.splitting_only() {
                if self.theta == 1 {
                    d = d.add(m, -1.0);
                }
            } else if k.lagged(self.theta) {
                d = d.add(m, 1.0);
            }
        }
        d
    }

    /// Right-hand side of the splitting: `P (F + R y_prev - D y_prev)` with
    /// `D` the [`splitting_defect`](Self::splitting_defect).
    pub fn loose_rhs(&self, forcing: &[f64], prev: &[f64]) -> Vec<f64> {
        let mut r = forcing.to_vec();
        self.history.spmv_add(1.0, prev, &mut r);
        self.splitting_defect().spmv_add(-1.0, prev, &mut r);
        self.constraints.project(&mut r);
        r
    }

    /// Group index of each field under the current splitting.
    pub fn group_of(&self, f: Field) -> usize {
        let start = self.field_ranges[f.index()].start;
        self.groups.iter().position(|g| g.contains(&start) || (g.is_empty() && g.start == start)).unwrap_or(0)
    }
}
