mod common;

use common::*;
use proptest::prelude::*;
use rand::RngExt;
use sbl_core::fem::TriGeom;
use sbl_core::forms::{kernels, Assembler};
use sbl_core::mesh::{build_artery_mesh, build_reservoir_mesh, Lens};
use sbl_core::scenarios::ScenarioConfig;
use sbl_core::{BlockName, CsrMatrix, DofMap, ElementKind, ElementPreset, Field, Region, Tangential};

/// Eigenvalues of a small symmetric matrix by cyclic Jacobi rotations.
fn sym_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i][i]).collect()
}

fn triangle_from_seed(seed: u64) -> [[f64; 2]; 3] {
    random_triangle(&mut rng(seed))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn strain_kernels_are_symmetric_and_semidefinite(seed in any::<u64>(), quadratic in any::<bool>(), mu in 0.01f64..10.0) {
        let g = TriGeom::new(triangle_from_seed(seed));
        let kind = if quadratic { ElementKind::P2 } else { ElementKind::P1 };
        let m = 2 * kind.n_local();
        for k in [kernels::strain(&g, kind, mu), kernels::divdiv(&g, kind, mu)] {
            let scale = max_abs(&k);
            for i in 0..m {
                for j in 0..m {
                    prop_assert!((k[i * m + j] - k[j * m + i]).abs() <= 1e-14 * scale);
                }
            }
            let dense: Vec<Vec<f64>> = (0..m).map(|i| k[i * m..(i + 1) * m].to_vec()).collect();
            let trace: f64 = (0..m).map(|i| k[i * m + i]).sum();
            let min = sym_eigenvalues(dense).into_iter().fold(f64::INFINITY, f64::min);
            prop_assert!(min >= -1e-12 * trace, "smallest eigenvalue {min:e}, trace {trace:e}");
        }
    }

    #[test]
    fn darcy_operator_scales_inversely_with_conductivity(c in 1e-3f64..1e3, a in 0.5f64..2.0, b in 0.5f64..2.0, o in -0.4f64..0.4) {
        let mesh = build_artery_mesh(1.0, 0.5, 0.1, 0.1).unwrap();
        let dofs = DofMap::new(&mesh, ElementPreset::InfSup);
        let asm = Assembler::new(&mesh, &dofs);
        let mut p = ScenarioConfig::artery_default().phys_params;
        p.kappa = [[a, o], [o, b]];
        let base = asm.a_p(&p);
        p.kappa = [[c * a, c * o], [c * o, c * b]];
        let scaled = asm.a_p(&p);
        prop_assert_eq!(&base.indices, &scaled.indices);
        for (x, y) in base.data.iter().zip(&scaled.data) {
            prop_assert!((y * c - x).abs() <= 1e-14 * x.abs().max(1e-300), "{x:e} vs {y:e}");
        }
    }

    #[test]
    fn artery_mesh_is_deterministic_and_exact_in_area(h in 0.04f64..0.3) {
        let a = build_artery_mesh(2.0, 0.5, 0.1, h).unwrap();
        let b = build_artery_mesh(2.0, 0.5, 0.1, h).unwrap();
        prop_assert_eq!(&a.vertices, &b.vertices);
        prop_assert_eq!(&a.triangles, &b.triangles);
        prop_assert!((a.region_area(Region::Fluid) / 1.0 - 1.0).abs() < 1e-10);
        prop_assert!((a.region_area(Region::Porous) / 0.2 - 1.0).abs() < 1e-10);
    }
}

fn centroid(mesh: &sbl_core::Mesh2D, k: usize) -> [f64; 2] {
    let c = mesh.tri_coords(k);
    [(c[0][0] + c[1][0] + c[2][0]) / 3.0, (c[0][1] + c[1][1] + c[2][1]) / 3.0]
}

#[test]
fn interface_normals_point_into_the_porous_side() {
    let meshes = [
        build_artery_mesh(6.0, 0.5, 0.1, 0.1).unwrap(),
        build_reservoir_mesh(100.0, 35.0, 10.0).unwrap(),
        sbl_core::mesh::map_reservoir_domain(&build_reservoir_mesh(100.0, 35.0, 10.0).unwrap()).unwrap(),
    ];
    for mesh in &meshes {
        assert!(!mesh.interface.is_empty());
        for e in &mesh.interface {
            let (f, p) = (centroid(mesh, e.fluid_tri), centroid(mesh, e.porous_tri));
            assert!(e.normal[0] * (p[0] - f[0]) + e.normal[1] * (p[1] - f[1]) > 0.0);
        }
    }
}

#[test]
fn fracture_area_converges_at_second_order() {
    let lens = Lens { half_length: 35.0, curvature: Lens::DEFAULT_CURVATURE };
    let exact = 4.0 / 3.0 * 2.0 * lens.curvature * 35f64.powi(3);
    let err = |h: f64| {
        let m = build_reservoir_mesh(100.0, 35.0, h).unwrap();
        (m.region_area(Region::Fluid) - exact).abs() / exact
    };
    let (coarse, fine) = (err(5.0), err(2.5));
    assert!(coarse < 0.05, "coarse error {coarse:e}");
    assert!(coarse / fine > 3.0, "error ratio {}", coarse / fine);
}

#[test]
fn reservoir_mesh_is_deterministic() {
    let a = build_reservoir_mesh(100.0, 35.0, 8.0).unwrap();
    let b = build_reservoir_mesh(100.0, 35.0, 8.0).unwrap();
    assert_eq!(a.vertices, b.vertices);
    assert_eq!(a.triangles, b.triangles);
}

/// Per-element accumulation of `y^T K y` from the local kernels.
fn brute_force_quad(mesh: &sbl_core::Mesh2D, dofs: &DofMap, f: Field, y: &[f64], local: impl Fn(&TriGeom) -> Vec<f64>) -> f64 {
    let mut s = 0.0;
    for k in 0..mesh.n_triangles() {
        if mesh.regions[k] != f.region() {
            continue;
        }
        let d = dofs.element_dofs(mesh, f, k);
        let kl = local(&TriGeom::new(mesh.tri_coords(k)));
        let m = d.len();
        for i in 0..m {
            for j in 0..m {
                s += y[d[i]] * kl[i * m + j] * y[d[j]];
            }
        }
    }
    s
}

#[test]
fn global_assembly_is_the_sum_of_element_kernels() {
    let mesh = build_artery_mesh(1.0, 0.5, 0.1, 0.1).unwrap();
    let mut r = rng(17);
    for preset in [ElementPreset::InfSup, ElementPreset::EqualOrder] {
        let dofs = DofMap::new(&mesh, preset);
        let asm = Assembler::new(&mesh, &dofs);
        let p = ScenarioConfig::artery_default().phys_params;
        for _ in 0..20 {
            let y: Vec<f64> = (0..dofs.n_dofs).map(|_| if r.random_bool(0.3) { r.random_range(-1.0..1.0) } else { 0.0 }).collect();
            let cases: Vec<(CsrMatrix, f64)> = vec![
                (asm.strain(Field::V, p.mu_f), brute_force_quad(&mesh, &dofs, Field::V, &y, |g| kernels::strain(g, dofs.kind(Field::V), p.mu_f))),
                (asm.divdiv(Field::U, p.lambda_p), brute_force_quad(&mesh, &dofs, Field::U, &y, |g| kernels::divdiv(g, dofs.kind(Field::U), p.lambda_p))),
                (asm.mass(Field::Pp, p.s0), brute_force_quad(&mesh, &dofs, Field::Pp, &y, |g| kernels::mass_scalar(g, dofs.kind(Field::Pp), p.s0))),
                (asm.a_p(&p), brute_force_quad(&mesh, &dofs, Field::Q, &y, |g| kernels::mass_tensor(g, dofs.kind(Field::Q), p.kappa_inv()))),
            ];
            for (a, want) in cases {
                let got = a.quad(&y, &y);
                assert!((got - want).abs() <= 1e-12 * want.abs(), "{got:e} vs {want:e}");
            }
        }
    }
}

const COUPLED: [Field; 3] = [Field::V, Field::Q, Field::U];

fn coupled_interface_operator(blocks: &std::collections::BTreeMap<BlockName, CsrMatrix>, n: usize, which: &[BlockName]) -> CsrMatrix {
    let mut b = CsrMatrix::zeros(n, n);
    for name in which {
        if let Some(m) = blocks.get(name) {
            b = b.add(m, 1.0);
        }
    }
    b
}

#[test]
fn symmetric_nitsche_operator_is_symmetric() {
    use BlockName::*;
    let mesh = build_artery_mesh(1.0, 0.5, 0.1, 0.1).unwrap();
    let cfg = ScenarioConfig::artery_default();
    for preset in [ElementPreset::InfSup, ElementPreset::EqualOrder] {
        let dofs = DofMap::new(&mesh, preset);
        let asm = Assembler::new(&mesh, &dofs);
        let blocks = asm.interface_blocks(&cfg.phys_params, &cfg.nitsche_params, 1e-4);
        let all = [
            GfSigma, GqfSigma, GsfSigma, GfSigmaAdj, GqfSigmaAdj, GsfSigmaAdj, GfGamma, GqfGamma, GqfGammaT, GsfGamma, GsfGammaT, Gq, Gsq,
            GsqT, Gs,
        ];
        for name in all {
            let (r, c) = name.position();
            assert!(COUPLED.contains(&r) && COUPLED.contains(&c), "{name:?}");
        }
        let b = coupled_interface_operator(&blocks, dofs.n_dofs, &all);
        let d = b.add(&b.transpose(), -1.0);
        assert!(d.max_abs() <= 1e-12 * b.max_abs(), "asymmetry {:e} of {:e}", d.max_abs(), b.max_abs());
    }
}

#[test]
fn penalty_vanishes_on_matching_traces() {
    use BlockName::*;
    let mesh = build_artery_mesh(1.0, 0.5, 0.1, 0.1).unwrap();
    let mut cfg = ScenarioConfig::artery_default();
    cfg.nitsche_params.tangential = Tangential::NoSlip;
    let tau = 1e-3;
    let mut r = rng(23);
    for preset in [ElementPreset::InfSup, ElementPreset::EqualOrder] {
        let dofs = DofMap::new(&mesh, preset);
        let asm = Assembler::new(&mesh, &dofs);
        let blocks = asm.interface_blocks(&cfg.phys_params, &cfg.nitsche_params, tau);
        let pen = coupled_interface_operator(&blocks, dofs.n_dofs, &[GfGamma, GqfGamma, GqfGammaT, GsfGamma, GsfGammaT, Gq, Gsq, GsqT, Gs]);
        for _ in 0..20 {
            let mut y: Vec<f64> = (0..dofs.n_dofs).map(|_| r.random_range(-1.0..1.0)).collect();
            let random_level = pen.quad(&y, &y).abs();
            for e in &mesh.interface {
                let n = e.normal;
                for node in dofs.segment_nodes(&mesh, Field::V, e.v[0], e.v[1]) {
                    let at = |f: Field, c: usize| dofs.node_dof(f, node, c).unwrap();
                    let q = [y[at(Field::Q, 0)], y[at(Field::Q, 1)]];
                    let u = [y[at(Field::U, 0)], y[at(Field::U, 1)]];
                    let qn = q[0] * n[0] + q[1] * n[1];
                    for c in 0..2 {
                        y[at(Field::V, c)] = qn * n[c] + u[c] / tau;
                    }
                }
            }
            let form = pen.quad(&y, &y);
            assert!(form.abs() <= 1e-12 * random_level, "{form:e} against {random_level:e}");
        }
    }
}
