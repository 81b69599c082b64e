//! Lagrange elements, quadrature, degree-of-freedom layout and essential
//! boundary constraints.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::mesh::{Mesh2D, Region};
use crate::sparsela::{CsrMatrix, TripletBuilder};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ElementKind {
    P1,
    P2,
}

impl ElementKind {
    pub fn n_local(self) -> usize {
        match self {
            ElementKind::P1 => 3,
            ElementKind::P2 => 6,
        }
    }
}

/// Shape function values at barycentric point `l`. P2 ordering: vertices,
/// then edge nodes on (0,1), (1,2), (2,0).
pub fn shape_values(kind: ElementKind, l: [f64; 3]) -> [f64; 6] {
    match kind {
        ElementKind::P1 => [l[0], l[1], l[2], 0.0, 0.0, 0.0],
        ElementKind::P2 => [
            l[0] * (2.0 * l[0] - 1.0),
            l[1] * (2.0 * l[1] - 1.0),
            l[2] * (2.0 * l[2] - 1.0),
            4.0 * l[0] * l[1],
            4.0 * l[1] * l[2],
            4.0 * l[2] * l[0],
        ],
    }
}

/// Derivatives of the shape functions with respect to the barycentric
/// coordinates.
pub fn shape_dlambda(kind: ElementKind, l: [f64; 3]) -> [[f64; 3]; 6] {
    match kind {
        ElementKind::P1 => [
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
            [0.0; 3],
            [0.0; 3],
            [0.0; 3],
        ],
        ElementKind::P2 => [
            [4.0 * l[0] - 1.0, 0.0, 0.0],
            [0.0, 4.0 * l[1] - 1.0, 0.0],
            [0.0, 0.0, 4.0 * l[2] - 1.0],
            [4.0 * l[1], 4.0 * l[0], 0.0],
            [0.0, 4.0 * l[2], 4.0 * l[1]],
            [4.0 * l[2], 0.0, 4.0 * l[0]],
        ],
    }
}

/// Six-point rule exact for degree four, barycentric points and weights
/// relative to the triangle area.
pub const TRI_QUAD: [([f64; 3], f64); 6] = {
    const A: f64 = 0.445_948_490_915_964_9;
    const WA: f64 = 0.223_381_589_678_011_47;
    const B: f64 = 0.091_576_213_509_770_74;
    const WB: f64 = 0.109_951_743_655_321_87;
    [
        ([1.0 - 2.0 * A, A, A], WA),
        ([A, 1.0 - 2.0 * A, A], WA),
        ([A, A, 1.0 - 2.0 * A], WA),
        ([1.0 - 2.0 * B, B, B], WB),
        ([B, 1.0 - 2.0 * B, B], WB),
        ([B, B, 1.0 - 2.0 * B], WB),
    ]
};

/// Three-point Gauss rule on `[0, 1]`.
pub fn edge_quad() -> [(f64, f64); 3] {
    let d = 0.5 * (0.6f64).sqrt();
    [(0.5 - d, 5.0 / 18.0), (0.5, 8.0 / 18.0), (0.5 + d, 5.0 / 18.0)]
}

/// Affine triangle data.
#[derive(Debug, Clone, Copy)]
pub struct TriGeom {
    pub coords: [[f64; 2]; 3],
    pub area: f64,
    pub grad_lambda: [[f64; 2]; 3],
}

impl TriGeom {
    pub fn new(c: [[f64; 2]; 3]) -> TriGeom {
        let det = (c[1][0] - c[0][0]) * (c[2][1] - c[0][1]) - (c[2][0] - c[0][0]) * (c[1][1] - c[0][1]);
        let g = |i: usize| {
            let (j, k) = ((i + 1) % 3, (i + 2) % 3);
            [(c[j][1] - c[k][1]) / det, (c[k][0] - c[j][0]) / det]
        };
        TriGeom { coords: c, area: 0.5 * det, grad_lambda: [g(0), g(1), g(2)] }
    }

    pub fn point(&self, l: [f64; 3]) -> [f64; 2] {
        let c = &self.coords;
        [
            l[0] * c[0][0] + l[1] * c[1][0] + l[2] * c[2][0],
            l[0] * c[0][1] + l[1] * c[1][1] + l[2] * c[2][1],
        ]
    }

    pub fn barycentric(&self, p: [f64; 2]) -> [f64; 3] {
        let c = &self.coords;
        let l0 = self.grad_lambda[0][0] * (p[0] - c[1][0]) + self.grad_lambda[0][1] * (p[1] - c[1][1]);
        let l1 = self.grad_lambda[1][0] * (p[0] - c[2][0]) + self.grad_lambda[1][1] * (p[1] - c[2][1]);
        [l0, l1, 1.0 - l0 - l1]
    }

    /// Physical gradients of all shape functions at `l`.
    pub fn shape_grads(&self, kind: ElementKind, l: [f64; 3]) -> [[f64; 2]; 6] {
        let d = shape_dlambda(kind, l);
        let mut out = [[0.0; 2]; 6];
        for i in 0..kind.n_local() {
            for j in 0..3 {
                out[i][0] += d[i][j] * self.grad_lambda[j][0];
                out[i][1] += d[i][j] * self.grad_lambda[j][1];
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Field {
    V,
    Pf,
    Q,
    Pp,
    U,
    Ud,
}

impl Field {
    pub const ALL: [Field; 6] = [Field::V, Field::Pf, Field::Q, Field::Pp, Field::U, Field::Ud];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn comps(self) -> usize {
        match self {
            Field::Pf | Field::Pp => 1,
            _ => 2,
        }
    }

    pub fn region(self) -> Region {
        match self {
            Field::V | Field::Pf => Region::Fluid,
            _ => Region::Porous,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Field::V => "v",
            Field::Pf => "p_f",
            Field::Q => "q",
            Field::Pp => "p_p",
            Field::U => "U",
            Field::Ud => "Udot",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ElementPreset {
    /// P2 vector fields with P1 pressures.
    InfSup,
    /// P1 everywhere, with pressure stabilization.
    EqualOrder,
}

impl ElementPreset {
    pub fn kind(self, field: Field) -> ElementKind {
        match (self, field.comps()) {
            (ElementPreset::InfSup, 2) => ElementKind::P2,
            _ => ElementKind::P1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FieldSpace {
    pub field: Field,
    pub kind: ElementKind,
    pub offset: usize,
    /// Mesh node of each local node. Mesh nodes are vertices followed by
    /// edge midpoints.
    pub nodes: Vec<usize>,
    node_map: Vec<usize>,
}

impl FieldSpace {
    pub fn n_dofs(&self) -> usize {
        self.nodes.len() * self.field.comps()
    }

    pub fn local_node(&self, mesh_node: usize) -> Option<usize> {
        self.node_map.get(mesh_node).copied().filter(|&n| n != usize::MAX)
    }
}

/// Global numbering in block order `[v, p_f, q, p_p, U, Udot]`, vector
/// components interleaved per node.
#[derive(Debug, Clone)]
pub struct DofMap {
    pub preset: ElementPreset,
    pub spaces: Vec<FieldSpace>,
    pub n_dofs: usize,
    n_vertices: usize,
}

impl DofMap {
    pub fn new(mesh: &Mesh2D, preset: ElementPreset) -> DofMap {
        let nv = mesh.n_vertices();
        let n_nodes = nv + mesh.edges.len();
        let mut spaces = Vec::with_capacity(6);
        let mut offset = 0;
        for field in Field::ALL {
            let kind = preset.kind(field);
            let mut used = vec![false; n_nodes];
            for (k, t) in mesh.triangles.iter().enumerate() {
                if mesh.regions[k] != field.region() {
                    continue;
                }
                for &v in t {
                    used[v] = true;
                }
                if kind == ElementKind::P2 {
                    for &e in &mesh.tri_edges[k] {
                        used[nv + e] = true;
                    }
                }
            }
            let mut node_map = vec![usize::MAX; n_nodes];
            let mut nodes = Vec::new();
            for (i, u) in used.iter().enumerate() {
                if *u {
                    node_map[i] = nodes.len();
                    nodes.push(i);
                }
            }
            let space = FieldSpace { field, kind, offset, nodes, node_map };
            offset += space.n_dofs();
            spaces.push(space);
        }
        DofMap { preset, spaces, n_dofs: offset, n_vertices: nv }
    }

    pub fn space(&self, f: Field) -> &FieldSpace {
        &self.spaces[f.index()]
    }

    pub fn range(&self, f: Field) -> Range<usize> {
        let s = self.space(f);
        s.offset..s.offset + s.n_dofs()
    }

    /// Contiguous range spanning a run of fields in block order.
    pub fn group_range(&self, fields: &[Field]) -> Range<usize> {
        let start = fields.iter().map(|&f| self.range(f).start).min().unwrap_or(0);
        let end = fields.iter().map(|&f| self.range(f).end).max().unwrap_or(0);
        start..end
    }

    pub fn kind(&self, f: Field) -> ElementKind {
        self.space(f).kind
    }

    /// Mesh nodes of triangle `k` in local shape-function order.
    pub fn element_nodes(&self, mesh: &Mesh2D, f: Field, k: usize) -> Vec<usize> {
        let t = mesh.triangles[k];
        let mut out = vec![t[0], t[1], t[2]];
        if self.kind(f) == ElementKind::P2 {
            out.extend(mesh.tri_edges[k].iter().map(|&e| self.n_vertices + e));
        }
        out
    }

    /// Global dofs of triangle `k`; vector fields ordered `2 a + c`.
    pub fn element_dofs(&self, mesh: &Mesh2D, f: Field, k: usize) -> Vec<usize> {
        let s = self.space(f);
        let c = f.comps();
        let mut out = Vec::with_capacity(c * 6);
        for n in self.element_nodes(mesh, f, k) {
            let ln = s.local_node(n).expect("element outside field region");
            for comp in 0..c {
                out.push(s.offset + c * ln + comp);
            }
        }
        out
    }

    pub fn node_dof(&self, f: Field, mesh_node: usize, comp: usize) -> Option<usize> {
        let s = self.space(f);
        s.local_node(mesh_node).map(|ln| s.offset + f.comps() * ln + comp)
    }

    pub fn edge_node(&self, edge: usize) -> usize {
        self.n_vertices + edge
    }

    /// Mesh nodes lying on the segment `a`-`b` for field `f`.
    pub fn segment_nodes(&self, mesh: &Mesh2D, f: Field, a: usize, b: usize) -> Vec<usize> {
        let mut out = vec![a, b];
        if self.kind(f) == ElementKind::P2 {
            if let Some(e) = mesh.edge_index(a, b) {
                out.push(self.edge_node(e));
            }
        }
        out.retain(|&n| self.space(f).local_node(n).is_some());
        out
    }

    pub fn node_coords(&self, mesh: &Mesh2D, node: usize) -> [f64; 2] {
        if node < self.n_vertices {
            mesh.vertices[node]
        } else {
            let e = mesh.edges[node - self.n_vertices];
            let (a, b) = (mesh.vertices[e[0]], mesh.vertices[e[1]]);
            [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]
        }
    }

    /// Evaluates field `f` at point `p`, `None` outside the field's region.
    pub fn evaluate(&self, mesh: &Mesh2D, f: Field, y: &[f64], p: [f64; 2]) -> Option<[f64; 2]> {
        let (k, l) = mesh.locate(p, Some(f.region()))?;
        let phi = shape_values(self.kind(f), l);
        let dofs = self.element_dofs(mesh, f, k);
        let c = f.comps();
        let mut out = [0.0; 2];
        for (a, chunk) in dofs.chunks(c).enumerate() {
            for (comp, &d) in chunk.iter().enumerate() {
                out[comp] += phi[a] * y[d];
            }
        }
        Some(out)
    }

    /// Vertex values of a field, `None` where the vertex is outside its region.
    pub fn vertex_values(&self, f: Field, y: &[f64], comp: usize) -> Vec<Option<f64>> {
        (0..self.n_vertices).map(|v| self.node_dof(f, v, comp).map(|d| y[d])).collect()
    }
}

/// Homogeneous essential constraints. A dof is either free, fixed to zero,
/// or part of a node pair restricted to `c . (a_x, a_y) = 0`.
#[derive(Debug, Clone, Default)]
pub struct Constraints {
    n: usize,
    fixed: Vec<usize>,
    directional: Vec<(usize, usize, [f64; 2])>,
}

#[derive(Debug, Default)]
pub struct ConstraintBuilder {
    n: usize,
    fixed: std::collections::BTreeSet<usize>,
    dirs: std::collections::BTreeMap<(usize, usize), Vec<[f64; 2]>>,
}

impl ConstraintBuilder {
    pub fn new(n: usize) -> Self {
        ConstraintBuilder { n, ..Default::default() }
    }

    pub fn fix(&mut self, dof: usize) {
        self.fixed.insert(dof);
    }

    /// Constrains `c . a = 0` for the pair `(dx, dy)`; repeated directions
    /// that are not parallel fix both components.
    pub fn constrain_direction(&mut self, dx: usize, dy: usize, c: [f64; 2]) {
        let l = c[0].hypot(c[1]);
        self.dirs.entry((dx, dy)).or_default().push([c[0] / l, c[1] / l]);
    }

    pub fn build(self) -> Constraints {
        let mut fixed = self.fixed;
        let mut directional = Vec::new();
        for ((dx, dy), cs) in self.dirs {
            if fixed.contains(&dx) && fixed.contains(&dy) {
                continue;
            }
            let c0 = cs[0];
            let parallel = cs.iter().all(|c| (c[0] * c0[1] - c[1] * c0[0]).abs() < 0.2);
            if !parallel || fixed.contains(&dx) || fixed.contains(&dy) {
                fixed.insert(dx);
                fixed.insert(dy);
                continue;
            }
            let mut s = [0.0, 0.0];
            for c in &cs {
                let sign = if c[0] * c0[0] + c[1] * c0[1] < 0.0 { -1.0 } else { 1.0 };
                s[0] += sign * c[0];
                s[1] += sign * c[1];
            }
            let l = s[0].hypot(s[1]);
            let c = [s[0] / l, s[1] / l];
            if c[1].abs() < 1e-14 {
                fixed.insert(dx);
            } else if c[0].abs() < 1e-14 {
                fixed.insert(dy);
            } else {
                directional.push((dx, dy, c));
            }
        }
        Constraints { n: self.n, fixed: fixed.into_iter().collect(), directional }
    }
}

impl Constraints {
    pub fn none(n: usize) -> Constraints {
        Constraints { n, ..Default::default() }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn fixed(&self) -> &[usize] {
        &self.fixed
    }

    pub fn directional(&self) -> &[(usize, usize, [f64; 2])] {
        &self.directional
    }

    pub fn is_empty(&self) -> bool {
        self.fixed.is_empty() && self.directional.is_empty()
    }

    /// Orthogonal projector `P` onto the constrained subspace.
    pub fn projector(&self) -> CsrMatrix {
        let mut diag = vec![1.0; self.n];
        for &d in &self.fixed {
            diag[d] = 0.0;
        }
        let mut b = TripletBuilder::new(self.n, self.n);
        let mut paired = vec![false; self.n];
        for &(dx, dy, c) in &self.directional {
            paired[dx] = true;
            paired[dy] = true;
            b.add(dx, dx, 1.0 - c[0] * c[0]);
            b.add(dx, dy, -c[0] * c[1]);
            b.add(dy, dx, -c[0] * c[1]);
            b.add(dy, dy, 1.0 - c[1] * c[1]);
        }
        for i in 0..self.n {
            if !paired[i] && diag[i] != 0.0 {
                b.add(i, i, 1.0);
            }
        }
        b.build()
    }

    /// `P x` in place.
    pub fn project(&self, x: &mut [f64]) {
        for &d in &self.fixed {
            x[d] = 0.0;
        }
        for &(dx, dy, c) in &self.directional {
            let s = c[0] * x[dx] + c[1] * x[dy];
            x[dx] -= s * c[0];
            x[dy] -= s * c[1];
        }
    }

    /// `P K P + (I - P)`: row and column elimination with unit diagonal,
    /// generalized to rotated node pairs.
    pub fn apply(&self, k: &CsrMatrix) -> CsrMatrix {
        if self.is_empty() {
            return k.clone();
        }
        let p = self.projector();
        let pkp = p.matmul(&k.matmul(&p));
        let mut id = TripletBuilder::new(self.n, self.n);
        for &d in &self.fixed {
            id.add(d, d, 1.0);
        }
        for &(dx, dy, c) in &self.directional {
            id.add(dx, dx, c[0] * c[0]);
            id.add(dx, dy, c[0] * c[1]);
            id.add(dy, dx, c[0] * c[1]);
            id.add(dy, dy, c[1] * c[1]);
        }
        pkp.add(&id.build(), 1.0)
    }
}
