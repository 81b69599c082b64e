//! Triangular meshes with a fluid and a porous region.
//!
//! Interface edges are derived from the region tags: every edge shared by a
//! fluid and a porous triangle is an interface edge, with its normal pointing
//! out of the fluid.

use std::collections::HashMap;

use spade::{ConstrainedDelaunayTriangulation, Point2, Triangulation};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Region {
    Fluid,
    Porous,
}

impl Region {
    pub fn tag(self) -> u8 {
        match self {
            Region::Fluid => 0,
            Region::Porous => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Region> {
        match tag {
            0 => Some(Region::Fluid),
            1 => Some(Region::Porous),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BoundaryLabel {
    FluidInlet,
    FluidOutlet,
    Symmetry,
    PorousInlet,
    PorousOutlet,
    PorousExternal,
    Exterior,
}

impl BoundaryLabel {
    pub const ALL: [BoundaryLabel; 7] = [
        BoundaryLabel::FluidInlet,
        BoundaryLabel::FluidOutlet,
        BoundaryLabel::Symmetry,
        BoundaryLabel::PorousInlet,
        BoundaryLabel::PorousOutlet,
        BoundaryLabel::PorousExternal,
        BoundaryLabel::Exterior,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BoundaryLabel::FluidInlet => "fluid_inlet",
            BoundaryLabel::FluidOutlet => "fluid_outlet",
            BoundaryLabel::Symmetry => "symmetry",
            BoundaryLabel::PorousInlet => "porous_inlet",
            BoundaryLabel::PorousOutlet => "porous_outlet",
            BoundaryLabel::PorousExternal => "porous_external",
            BoundaryLabel::Exterior => "exterior",
        }
    }

    pub fn from_name(s: &str) -> Option<BoundaryLabel> {
        Self::ALL.into_iter().find(|l| l.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryEdge {
    pub v: [usize; 2],
    pub label: BoundaryLabel,
    /// Triangle owning the edge.
    pub tri: usize,
    /// Unit normal pointing out of `tri`.
    pub normal: [f64; 2],
    pub length: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterfaceEdge {
    pub v: [usize; 2],
    pub edge: usize,
    pub fluid_tri: usize,
    pub porous_tri: usize,
    /// Unit normal pointing from the fluid into the porous region.
    pub normal: [f64; 2],
    pub length: f64,
}

#[derive(Debug, Clone)]
pub struct Mesh2D {
    pub vertices: Vec<[f64; 2]>,
    /// Counter-clockwise vertex triples.
    pub triangles: Vec<[usize; 3]>,
    pub regions: Vec<Region>,
    pub boundary: Vec<BoundaryEdge>,
    pub interface: Vec<InterfaceEdge>,
    /// Unique edges as sorted vertex pairs.
    pub edges: Vec<[usize; 2]>,
    /// Edge indices of local edges (0,1), (1,2), (2,0).
    pub tri_edges: Vec<[usize; 3]>,
    edge_lookup: HashMap<(usize, usize), usize>,
}

fn signed_area(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

fn outward_normal(a: [f64; 2], b: [f64; 2], inside: [f64; 2]) -> ([f64; 2], f64) {
    let (tx, ty) = (b[0] - a[0], b[1] - a[1]);
    let len = tx.hypot(ty);
    let mut n = [ty / len, -tx / len];
    let m = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
    if n[0] * (inside[0] - m[0]) + n[1] * (inside[1] - m[1]) > 0.0 {
        n = [-n[0], -n[1]];
    }
    (n, len)
}

impl Mesh2D {
    /// Builds the connectivity tables. Boundary edges are given as vertex
    /// pairs with labels; their owning triangle and normal are derived.
    pub fn new(
        vertices: Vec<[f64; 2]>,
        triangles: Vec<[usize; 3]>,
        regions: Vec<Region>,
        boundary: Vec<([usize; 2], BoundaryLabel)>,
    ) -> Result<Mesh2D> {
        let nv = vertices.len();
        if regions.len() != triangles.len() {
            return Err(Error::Mesh(format!(
                "{} triangles but {} region tags",
                triangles.len(),
                regions.len()
            )));
        }
        for (k, v) in vertices.iter().enumerate() {
            if !v[0].is_finite() || !v[1].is_finite() {
                return Err(Error::Mesh(format!("vertex {k} has non-finite coordinates")));
            }
        }
        for (k, t) in triangles.iter().enumerate() {
            if t.iter().any(|&i| i >= nv) {
                return Err(Error::Mesh(format!("triangle {k} references a missing vertex")));
            }
            let a = signed_area(vertices[t[0]], vertices[t[1]], vertices[t[2]]);
            if a <= 0.0 {
                return Err(Error::Mesh(format!("triangle {k} is inverted or degenerate")));
            }
        }

        let mut edges: Vec<[usize; 2]> = Vec::new();
        let mut edge_lookup: HashMap<(usize, usize), usize> = HashMap::new();
        let mut owners: Vec<Vec<usize>> = Vec::new();
        let mut tri_edges = Vec::with_capacity(triangles.len());
        for (k, t) in triangles.iter().enumerate() {
            let mut te = [0usize; 3];
            for (l, (i, j)) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])].into_iter().enumerate() {
                let key = (i.min(j), i.max(j));
                let e = *edge_lookup.entry(key).or_insert_with(|| {
                    edges.push([key.0, key.1]);
                    owners.push(Vec::new());
                    edges.len() - 1
                });
                owners[e].push(k);
                te[l] = e;
            }
            tri_edges.push(te);
        }
        if let Some(e) = owners.iter().position(|o| o.len() > 2) {
            return Err(Error::Mesh(format!("edge {:?} is shared by more than two triangles", edges[e])));
        }

        let centroid = |k: usize| {
            let t = triangles[k];
            [
                (vertices[t[0]][0] + vertices[t[1]][0] + vertices[t[2]][0]) / 3.0,
                (vertices[t[0]][1] + vertices[t[1]][1] + vertices[t[2]][1]) / 3.0,
            ]
        };

        let mut bnd = Vec::with_capacity(boundary.len());
        for (v, label) in boundary {
            let key = (v[0].min(v[1]), v[0].max(v[1]));
            let e = *edge_lookup
                .get(&key)
                .ok_or_else(|| Error::Mesh(format!("boundary edge {:?} is not a mesh edge", v)))?;
            if owners[e].len() != 1 {
                return Err(Error::Mesh(format!("boundary edge {:?} is interior", v)));
            }
            let tri = owners[e][0];
            let (normal, length) = outward_normal(vertices[v[0]], vertices[v[1]], centroid(tri));
            bnd.push(BoundaryEdge { v, label, tri, normal, length });
        }

        let mut interface = Vec::new();
        for (e, o) in owners.iter().enumerate() {
            if o.len() == 2 && regions[o[0]] != regions[o[1]] {
                let (f, p) = if regions[o[0]] == Region::Fluid { (o[0], o[1]) } else { (o[1], o[0]) };
                let v = edges[e];
                let (normal, length) = outward_normal(vertices[v[0]], vertices[v[1]], centroid(f));
                interface.push(InterfaceEdge { v, edge: e, fluid_tri: f, porous_tri: p, normal, length });
            }
        }

        Ok(Mesh2D { vertices, triangles, regions, boundary: bnd, interface, edges, tri_edges, edge_lookup })
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn edge_index(&self, a: usize, b: usize) -> Option<usize> {
        self.edge_lookup.get(&(a.min(b), a.max(b))).copied()
    }

    pub fn tri_coords(&self, k: usize) -> [[f64; 2]; 3] {
        let t = self.triangles[k];
        [self.vertices[t[0]], self.vertices[t[1]], self.vertices[t[2]]]
    }

    pub fn area(&self, k: usize) -> f64 {
        let c = self.tri_coords(k);
        signed_area(c[0], c[1], c[2])
    }

    /// Longest edge of triangle `k`.
    pub fn diameter(&self, k: usize) -> f64 {
        let c = self.tri_coords(k);
        (0..3)
            .map(|i| {
                let (a, b) = (c[i], c[(i + 1) % 3]);
                (b[0] - a[0]).hypot(b[1] - a[1])
            })
            .fold(0.0, f64::max)
    }

    pub fn boundary_with(&self, label: BoundaryLabel) -> impl Iterator<Item = &BoundaryEdge> {
        self.boundary.iter().filter(move |b| b.label == label)
    }

    pub fn max_diameter(&self) -> f64 {
        (0..self.n_triangles()).map(|k| self.diameter(k)).fold(0.0, f64::max)
    }

    pub fn region_area(&self, region: Region) -> f64 {
        (0..self.n_triangles()).filter(|&k| self.regions[k] == region).map(|k| self.area(k)).sum()
    }

    /// Triangle containing `p` (closed), with its barycentric coordinates.
    pub fn locate(&self, p: [f64; 2], region: Option<Region>) -> Option<(usize, [f64; 3])> {
        let tol = 1e-12;
        for k in 0..self.n_triangles() {
            if region.is_some_and(|r| self.regions[k] != r) {
                continue;
            }
            let c = self.tri_coords(k);
            let a = signed_area(c[0], c[1], c[2]);
            let l0 = signed_area(p, c[1], c[2]) / a;
            let l1 = signed_area(c[0], p, c[2]) / a;
            let l2 = 1.0 - l0 - l1;
            if l0 >= -tol && l1 >= -tol && l2 >= -tol {
                return Some((k, [l0, l1, l2]));
            }
        }
        None
    }
}

/// Half channel `[0, L] x [0, R]` with a porous wall `[0, L] x [R, R + r_p]`
/// on top. The bottom edge is a symmetry line.
pub fn build_artery_mesh(length: f64, radius: f64, wall: f64, h: f64) -> Result<Mesh2D> {
    for (name, v) in [("length", length), ("radius", radius), ("wall thickness", wall), ("mesh size", h)] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::Geometry(format!("{name} must be positive, got {v}")));
        }
    }
    let nx = ((length / h).round() as usize).max(1);
    let nyf = ((radius / h).round() as usize).max(1);
    let nyp = ((wall / h).round() as usize).max(1);
    let ny = nyf + nyp;
    let ys: Vec<f64> = (0..=ny)
        .map(|j| if j <= nyf { radius * j as f64 / nyf as f64 } else { radius + wall * (j - nyf) as f64 / nyp as f64 })
        .collect();
    let id = |i: usize, j: usize| i * (ny + 1) + j;
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for i in 0..=nx {
        let x = length * i as f64 / nx as f64;
        for &y in &ys {
            vertices.push([x, y]);
        }
    }
    let mut triangles = Vec::with_capacity(2 * nx * ny);
    let mut regions = Vec::with_capacity(2 * nx * ny);
    for i in 0..nx {
        for j in 0..ny {
            let r = if j < nyf { Region::Fluid } else { Region::Porous };
            triangles.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
            triangles.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
            regions.push(r);
            regions.push(r);
        }
    }
    let mut boundary = Vec::new();
    for i in 0..nx {
        boundary.push(([id(i, 0), id(i + 1, 0)], BoundaryLabel::Symmetry));
        boundary.push(([id(i, ny), id(i + 1, ny)], BoundaryLabel::PorousExternal));
    }
    for j in 0..ny {
        let (inl, out) = if j < nyf {
            (BoundaryLabel::FluidInlet, BoundaryLabel::FluidOutlet)
        } else {
            (BoundaryLabel::PorousInlet, BoundaryLabel::PorousOutlet)
        };
        boundary.push(([id(0, j), id(0, j + 1)], inl));
        boundary.push(([id(nx, j), id(nx, j + 1)], out));
    }
    Mesh2D::new(vertices, triangles, regions, boundary)
}

/// Lens-shaped fracture `|y| <= c (a^2 - x^2)`, `|x| <= a`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lens {
    pub half_length: f64,
    pub curvature: f64,
}

impl Lens {
    pub const DEFAULT_CURVATURE: f64 = 0.008;

    pub fn half_height(&self, x: f64) -> f64 {
        if x.abs() >= self.half_length {
            0.0
        } else {
            self.curvature * (self.half_length * self.half_length - x * x)
        }
    }
}

/// Reference-coordinate mesh of the square `[-W, W]^2` with an embedded
/// lens-shaped fracture. Curve points are spaced at most `h` apart and the
/// fracture boundary is a constrained edge chain of the triangulation.
pub fn build_reservoir_mesh(half_width: f64, fracture_half_length: f64, h: f64) -> Result<Mesh2D> {
    for (name, v) in [("half width", half_width), ("fracture half length", fracture_half_length), ("mesh size", h)] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::Geometry(format!("{name} must be positive, got {v}")));
        }
    }
    let lens = Lens { half_length: fracture_half_length, curvature: Lens::DEFAULT_CURVATURE };
    if fracture_half_length >= half_width || lens.half_height(0.0) >= half_width {
        return Err(Error::Geometry("fracture does not fit inside the domain".into()));
    }
    let w = half_width;
    let a = fracture_half_length;
    let half_cells = (w / h).ceil() as usize;
    let n = 2 * half_cells;
    let s = 2.0 * w / n as f64;

    let m = 2 * ((a / h).ceil() as usize).max(2);
    let xs: Vec<f64> = (0..=m).map(|k| -a + 2.0 * a * k as f64 / m as f64).collect();
    let upper: Vec<[f64; 2]> = xs.iter().map(|&x| [x, lens.half_height(x)]).collect();
    // polygon, counter-clockwise: lower chain left to right, upper chain right to left
    let mut polygon: Vec<[f64; 2]> = xs.iter().map(|&x| [x, -lens.half_height(x)]).collect();
    polygon.extend(upper.iter().rev().skip(1).take(m - 1));

    let seg_dist = |p: [f64; 2]| -> f64 {
        let mut d = f64::INFINITY;
        for k in 0..polygon.len() {
            let (u, v) = (polygon[k], polygon[(k + 1) % polygon.len()]);
            let (dx, dy) = (v[0] - u[0], v[1] - u[1]);
            let t = (((p[0] - u[0]) * dx + (p[1] - u[1]) * dy) / (dx * dx + dy * dy)).clamp(0.0, 1.0);
            d = d.min((p[0] - u[0] - t * dx).hypot(p[1] - u[1] - t * dy));
        }
        d
    };

    let mut cdt: ConstrainedDelaunayTriangulation<Point2<f64>> = ConstrainedDelaunayTriangulation::new();
    let mut insert = |p: [f64; 2]| {
        cdt.insert(Point2::new(p[0], p[1])).map_err(|e| Error::Mesh(format!("triangulation failed: {e:?}")))
    };
    for i in 0..=n {
        for j in 0..=n {
            let p = [-w + s * i as f64, -w + s * j as f64];
            if seg_dist(p) >= 0.45 * s {
                insert(p)?;
            }
        }
    }
    let mut handles = Vec::with_capacity(polygon.len());
    for &p in &polygon {
        handles.push(insert(p)?);
    }
    for k in 0..handles.len() {
        cdt.add_constraint(handles[k], handles[(k + 1) % handles.len()]);
    }

    let vertices: Vec<[f64; 2]> = cdt.vertices().map(|v| [v.position().x, v.position().y]).collect();
    let inside = |p: [f64; 2]| -> bool {
        if p[0].abs() >= a {
            return false;
        }
        let k = (((p[0] + a) / (2.0 * a)) * m as f64).floor().min(m as f64 - 1.0) as usize;
        let t = (p[0] - xs[k]) / (xs[k + 1] - xs[k]);
        let yu = (1.0 - t) * upper[k][1] + t * upper[k + 1][1];
        p[1].abs() < yu
    };
    let mut triangles = Vec::new();
    let mut regions = Vec::new();
    for f in cdt.inner_faces() {
        let vs = f.vertices();
        let mut t = [vs[0].fix().index(), vs[1].fix().index(), vs[2].fix().index()];
        if signed_area(vertices[t[0]], vertices[t[1]], vertices[t[2]]) < 0.0 {
            t.swap(1, 2);
        }
        let c = [
            (vertices[t[0]][0] + vertices[t[1]][0] + vertices[t[2]][0]) / 3.0,
            (vertices[t[0]][1] + vertices[t[1]][1] + vertices[t[2]][1]) / 3.0,
        ];
        triangles.push(t);
        regions.push(if inside(c) { Region::Fluid } else { Region::Porous });
    }
    let on_side = |p: [f64; 2]| -> u8 {
        let tol = 1e-9 * w;
        let mut m = 0;
        if (p[0] + w).abs() < tol {
            m |= 1;
        }
        if (p[0] - w).abs() < tol {
            m |= 2;
        }
        if (p[1] + w).abs() < tol {
            m |= 4;
        }
        if (p[1] - w).abs() < tol {
            m |= 8;
        }
        m
    };
    let mut seen = std::collections::HashSet::new();
    let mut boundary = Vec::new();
    for t in &triangles {
        for (i, j) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
            if on_side(vertices[i]) & on_side(vertices[j]) != 0 && seen.insert((i.min(j), i.max(j))) {
                boundary.push(([i, j], BoundaryLabel::Exterior));
            }
        }
    }
    Mesh2D::new(vertices, triangles, regions, boundary)
}

/// The smooth map from reference to physical reservoir coordinates.
pub fn reservoir_map(p: [f64; 2]) -> [f64; 2] {
    let (x, y) = (p[0], p[1]);
    let c1 = ((x + y) / 100.0).cos();
    let c2 = ((std::f64::consts::PI * x + y) / 100.0).cos();
    [x, 5.0 * c1 * c2 * c2 + y / 5.0 - x / 10.0]
}

/// Inverse of [`reservoir_map`]. The second component is strictly
/// increasing in the reference `y` (slope at least 1/5 - 15/100), so it is
/// inverted by bisection.
pub fn reservoir_unmap(p: [f64; 2]) -> [f64; 2] {
    let x = p[0];
    let (mut lo, mut hi) = (-1e4, 1e4);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if reservoir_map([x, mid])[1] < p[1] {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-13 * (1.0 + mid.abs()) {
            break;
        }
    }
    [x, 0.5 * (lo + hi)]
}

/// Applies [`reservoir_map`] to every vertex and recomputes the geometry.
pub fn map_reservoir_domain(mesh: &Mesh2D) -> Result<Mesh2D> {
    let vertices = mesh.vertices.iter().map(|&p| reservoir_map(p)).collect();
    let boundary = mesh.boundary.iter().map(|b| (b.v, b.label)).collect();
    Mesh2D::new(vertices, mesh.triangles.clone(), mesh.regions.clone(), boundary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reservoir_unmap_inverts_map() {
        for p in [[0.0, 0.0], [-100.0, 100.0], [35.0, -7.5], [99.0, -99.0]] {
            let q = reservoir_unmap(reservoir_map(p));
            assert!((q[0] - p[0]).abs() < 1e-12 && (q[1] - p[1]).abs() < 1e-9, "{p:?} -> {q:?}");
        }
    }

    #[test]
    fn artery_counts_match_grid_formula() {
        let m = build_artery_mesh(1.0, 0.5, 0.1, 0.25).unwrap();
        let (nx, nyf, nyp) = (4, 2, 1);
        assert_eq!(m.n_vertices(), (nx + 1) * (nyf + nyp + 1));
        assert_eq!(m.n_triangles(), 2 * nx * (nyf + nyp));
        assert_eq!(m.interface.len(), nx);
        let fluid: usize = m.regions.iter().filter(|&&r| r == Region::Fluid).count();
        assert_eq!(fluid, 2 * nx * nyf);
    }

    #[test]
    fn artery_interface_is_horizontal_and_points_up() {
        let m = build_artery_mesh(6.0, 0.5, 0.1, 0.05).unwrap();
        let total: f64 = m.interface.iter().map(|e| e.length).sum();
        assert!((total - 6.0).abs() < 1e-12);
        for e in &m.interface {
            assert!((m.vertices[e.v[0]][1] - 0.5).abs() < 1e-14);
            assert!((e.normal[1] - 1.0).abs() < 1e-14);
        }
        for k in 0..m.n_triangles() {
            let d = m.diameter(k);
            assert!((0.025..=0.1).contains(&d));
        }
    }

    #[test]
    fn artery_rejects_nonpositive_dimensions() {
        assert!(matches!(build_artery_mesh(1.0, 0.0, 0.1, 0.1), Err(Error::Geometry(_))));
        assert!(matches!(build_artery_mesh(1.0, 0.5, 0.1, -1.0), Err(Error::Geometry(_))));
    }

    #[test]
    fn reservoir_map_fixes_origin_image() {
        let p = reservoir_map([0.0, 0.0]);
        assert_eq!(p, [0.0, 5.0]);
    }

    #[test]
    fn reservoir_mesh_is_conforming_and_symmetric() {
        let m = build_reservoir_mesh(100.0, 35.0, 10.0).unwrap();
        assert!(!m.interface.is_empty());
        let mut a: Vec<(i64, i64)> = m.vertices.iter().map(|p| ((p[0] * 1e9).round() as i64, (p[1] * 1e9).round() as i64)).collect();
        let mut b: Vec<(i64, i64)> = m.vertices.iter().map(|p| ((-p[0] * 1e9).round() as i64, (p[1] * 1e9).round() as i64)).collect();
        a.sort();
        b.sort();
        assert_eq!(a, b);
        let lens = Lens { half_length: 35.0, curvature: Lens::DEFAULT_CURVATURE };
        for e in &m.interface {
            for &v in &e.v {
                let p = m.vertices[v];
                assert!((p[1].abs() - lens.half_height(p[0])).abs() < 1e-9);
            }
        }
        let total: f64 = (0..m.n_triangles()).map(|k| m.area(k)).sum();
        assert!((total - 40000.0).abs() < 1e-6);
    }

    #[test]
    fn mapped_reservoir_keeps_orientation() {
        let m = build_reservoir_mesh(100.0, 35.0, 5.0).unwrap();
        let mm = map_reservoir_domain(&m).unwrap();
        assert_eq!(mm.n_triangles(), m.n_triangles());
        assert_eq!(mm.interface.len(), m.interface.len());
    }
}
