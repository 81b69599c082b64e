//! The artery and fractured-reservoir configurations, their boundary
//! conditions and forcing, and the temporal convergence and preconditioner
//! studies built on top of them.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::audit;
use crate::error::{Error, Result};
use crate::fem::{ConstraintBuilder, Constraints, DofMap, ElementPreset, Field};
use crate::forms::{Assembler, BlockSystem, NitscheParams, PhysParams, Tangential};
use crate::io;
use crate::mesh::{self, BoundaryLabel, Mesh2D, Region};
use crate::schemes::{EnergyOperators, KrylovMode, SchemeKind, Stepper};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Artery,
    Reservoir,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitSystem {
    Cgs,
    Si,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Geometry {
    #[serde(rename_all = "snake_case")]
    Artery { length: f64, radius: f64, wall: f64 },
    #[serde(rename_all = "snake_case")]
    Reservoir { half_width: f64, fracture_half_length: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Forcing {
    /// Raised-cosine pressure pulse on the fluid inlet.
    InletPressure { p_max: f64, t_max: f64 },
    /// Mass injection rate spread over a disk in the fracture; divided by
    /// the fluid density to obtain a volumetric source density.
    Injection { rate: f64, radius: f64 },
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct OutputConfig {
    #[serde(default)]
    pub snapshot_times: Vec<f64>,
    #[serde(default = "default_true")]
    pub vtk: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { snapshot_times: Vec::new(), vtk: true }
    }
}

fn default_true() -> bool {
    true
}

fn default_study_steps() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StudyConfig {
    #[serde(default)]
    pub tau_list: Vec<f64>,
    #[serde(default)]
    pub tau_ref: Option<f64>,
    #[serde(default)]
    pub h_list: Vec<f64>,
    #[serde(default = "default_study_steps")]
    pub steps: usize,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig { tau_list: Vec::new(), tau_ref: None, h_list: Vec::new(), steps: default_study_steps() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ScenarioConfig {
    pub scenario: ScenarioKind,
    pub units: UnitSystem,
    pub geometry: Geometry,
    pub phys_params: PhysParams,
    pub nitsche_params: NitscheParams,
    pub forcing: Forcing,
    pub tau: f64,
    pub t_final: f64,
    pub mesh_h: f64,
    pub element_preset: ElementPreset,
    pub scheme: SchemeKind,
    /// Runs a splitting outside its sufficient stability regime.
    #[serde(default)]
    pub allow_unstable: bool,
    #[serde(default)]
    pub max_steps: Option<usize>,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub study: Option<StudyConfig>,
}

/// Raised-cosine inlet pressure, zero after `t_max`.
pub fn inflow_pressure(t: f64, p_max: f64, t_max: f64) -> f64 {
    if t <= t_max {
        0.5 * p_max * (1.0 - (2.0 * std::f64::consts::PI * t / t_max).cos())
    } else {
        0.0
    }
}

/// Slip coefficient from the permeability `K = kappa mu_f`:
/// `sqrt(tr K) / (alpha mu_f sqrt 3)`.
pub fn bjs_coefficient(alpha: f64, mu_f: f64, kappa: [[f64; 2]; 2]) -> Result<f64> {
    let tr = (kappa[0][0] + kappa[1][1]) * mu_f;
    if !(tr > 0.0) || !(alpha > 0.0) || !(mu_f > 0.0) {
        return Err(Error::Parameter(format!("slip coefficient undefined for trace {tr}, alpha {alpha}, mu_f {mu_f}")));
    }
    Ok(tr.sqrt() / (alpha * mu_f * 3f64.sqrt()))
}

impl ScenarioConfig {
    pub fn artery_default() -> ScenarioConfig {
        ScenarioConfig {
            scenario: ScenarioKind::Artery,
            units: UnitSystem::Cgs,
            geometry: Geometry::Artery { length: 6.0, radius: 0.5, wall: 0.1 },
            phys_params: PhysParams {
                rho_f: 1.0,
                mu_f: 0.035,
                rho_p: 1.1,
                mu_p: 1.07e6,
                lambda_p: 4.28e6,
                kappa: [[5e-9, 0.0], [0.0, 5e-9]],
                s0: 5e-6,
                alpha: 1.0,
                xi: 5e7,
            },
            nitsche_params: NitscheParams {
                gamma_f: 2500.0,
                gamma_stab: 1.0,
                gamma_stab_prime: 0.0,
                varsigma: 1.0,
                gamma_p: 1e-2,
                gamma_q: 0.0,
                tangential: Tangential::NoSlip,
            },
            forcing: Forcing::InletPressure { p_max: 13334.0, t_max: 0.003 },
            tau: 1e-4,
            t_final: 0.006,
            mesh_h: 0.05,
            element_preset: ElementPreset::InfSup,
            scheme: SchemeKind::Monolithic,
            allow_unstable: false,
            max_steps: None,
            output: OutputConfig { snapshot_times: vec![0.0015, 0.0035, 0.0055], vtk: true },
            study: Some(StudyConfig {
                tau_list: vec![1e-4, 5e-5, 2.5e-5, 1.25e-5],
                tau_ref: Some(1e-6),
                h_list: vec![0.05, 0.025],
                steps: 10,
            }),
        }
    }

    pub fn reservoir_default() -> ScenarioConfig {
        let kappa = [[200e-12, 0.0], [0.0, 50e-12]];
        let beta = bjs_coefficient(1.0, 1e-3, kappa).expect("positive data");
        ScenarioConfig {
            scenario: ScenarioKind::Reservoir,
            units: UnitSystem::Si,
            geometry: Geometry::Reservoir { half_width: 100.0, fracture_half_length: 35.0 },
            phys_params: PhysParams {
                rho_f: 897.0,
                mu_f: 1e-3,
                rho_p: 897.0,
                mu_p: 2.92e10,
                lambda_p: 1.94e10,
                kappa,
                s0: 6.9e-5,
                alpha: 1.0,
                xi: 0.0,
            },
            nitsche_params: NitscheParams {
                gamma_f: 1500.0,
                gamma_stab: 1.0,
                gamma_stab_prime: 0.0,
                varsigma: 1.0,
                gamma_p: 1e-2,
                gamma_q: 1e-3,
                tangential: Tangential::Bjs { beta },
            },
            forcing: Forcing::Injection { rate: 25.0, radius: 7.0 },
            tau: 0.1,
            t_final: 18600.0,
            mesh_h: 5.0,
            element_preset: ElementPreset::EqualOrder,
            scheme: SchemeKind::Preconditioned,
            allow_unstable: false,
            max_steps: Some(50),
            output: OutputConfig { snapshot_times: vec![5.0], vtk: true },
            study: Some(StudyConfig { tau_list: vec![1e-3], tau_ref: None, h_list: vec![5.0], steps: 10 }),
        }
    }

    /// Semantic checks beyond the JSON shape. Every offending key is listed.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if let Err(Error::Validation(e)) = self.phys_params.validate() {
            errs.extend(e);
        }
        if let Err(Error::Validation(e)) = self.nitsche_params.validate() {
            errs.extend(e);
        }
        for (k, v) in [("tau", self.tau), ("tFinal", self.t_final), ("meshH", self.mesh_h)] {
            if !(v > 0.0) || !v.is_finite() {
                errs.push(format!("{k} must be positive, got {v}"));
            }
        }
        match (self.scenario, self.geometry) {
            (ScenarioKind::Artery, Geometry::Artery { length, radius, wall }) => {
                for (k, v) in [("length", length), ("radius", radius), ("wall", wall)] {
                    if !(v > 0.0) {
                        errs.push(format!("geometry.{k} must be positive, got {v}"));
                    }
                }
            }
            (ScenarioKind::Reservoir, Geometry::Reservoir { half_width, fracture_half_length }) => {
                if !(fracture_half_length > 0.0 && fracture_half_length < half_width) {
                    errs.push("geometry.fracture_half_length must lie in (0, half_width)".into());
                }
            }
            _ => errs.push("geometry does not match the scenario".into()),
        }
        match self.forcing {
            Forcing::InletPressure { p_max, t_max } => {
                if !(t_max > 0.0) {
                    errs.push(format!("forcing.t_max must be positive, got {t_max}"));
                }
                if !p_max.is_finite() {
                    errs.push("forcing.p_max must be finite".into());
                }
            }
            Forcing::Injection { rate, radius } => {
                if !(radius > 0.0) {
                    errs.push(format!("forcing.radius must be positive, got {radius}"));
                }
                if !rate.is_finite() {
                    errs.push("forcing.rate must be finite".into());
                }
            }
            Forcing::None => {}
        }
        if self.output.snapshot_times.iter().any(|&t| !(t >= 0.0)) {
            errs.push("output.snapshotTimes must be non-negative".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errs))
        }
    }

    pub fn n_steps(&self) -> usize {
        let n = (self.t_final / self.tau - 1e-9).ceil().max(0.0) as usize;
        self.max_steps.map_or(n, |m| n.min(m))
    }
}

/// Unit conversion factors to SI for each dimensional quantity.
mod cgs {
    pub const LENGTH: f64 = 1e-2;
    pub const DENSITY: f64 = 1e3;
    pub const VISCOSITY: f64 = 1e-1;
    pub const PRESSURE: f64 = 1e-1;
    /// cm^3 s / g to m^3 s / kg.
    pub const CONDUCTIVITY: f64 = 1e-3;
    pub const COMPLIANCE: f64 = 1e1;
    pub const SPRING: f64 = 1e3;
    /// cm / (dyne/cm^2 s) to m / (Pa s).
    pub const SLIP: f64 = 1e-1;
    pub const MASS_RATE: f64 = 1e-3;
}

fn convert(cfg: &ScenarioConfig, to: UnitSystem) -> ScenarioConfig {
    if cfg.units == to {
        return cfg.clone();
    }
    // `s` multiplies CGS values into SI; its reciprocal goes the other way.
    let s = |f: f64| if to == UnitSystem::Si { f } else { 1.0 / f };
    let mut c = cfg.clone();
    c.units = to;
    let l = s(cgs::LENGTH);
    c.geometry = match cfg.geometry {
        Geometry::Artery { length, radius, wall } => Geometry::Artery { length: length * l, radius: radius * l, wall: wall * l },
        Geometry::Reservoir { half_width, fracture_half_length } => {
            Geometry::Reservoir { half_width: half_width * l, fracture_half_length: fracture_half_length * l }
        }
    };
    c.mesh_h = cfg.mesh_h * l;
    let p = &mut c.phys_params;
    p.rho_f *= s(cgs::DENSITY);
    p.rho_p *= s(cgs::DENSITY);
    p.mu_f *= s(cgs::VISCOSITY);
    p.mu_p *= s(cgs::PRESSURE);
    p.lambda_p *= s(cgs::PRESSURE);
    for row in p.kappa.iter_mut() {
        for k in row.iter_mut() {
            *k *= s(cgs::CONDUCTIVITY);
        }
    }
    p.s0 *= s(cgs::COMPLIANCE);
    p.xi *= s(cgs::SPRING);
    if let Tangential::Bjs { beta } = cfg.nitsche_params.tangential {
        c.nitsche_params.tangential = Tangential::Bjs { beta: beta * s(cgs::SLIP) };
    }
    c.forcing = match cfg.forcing {
        Forcing::InletPressure { p_max, t_max } => Forcing::InletPressure { p_max: p_max * s(cgs::PRESSURE), t_max },
        Forcing::Injection { rate, radius } => Forcing::Injection { rate: rate * s(cgs::MASS_RATE), radius: radius * l },
        Forcing::None => Forcing::None,
    };
    if let Some(st) = c.study.as_mut() {
        for h in st.h_list.iter_mut() {
            *h *= l;
        }
    }
    c
}

pub fn to_si(cfg: &ScenarioConfig) -> ScenarioConfig {
    convert(cfg, UnitSystem::Si)
}

pub fn to_cgs(cfg: &ScenarioConfig) -> ScenarioConfig {
    convert(cfg, UnitSystem::Cgs)
}

/// Right-hand side model: a fixed load vector times a time profile.
#[derive(Debug, Clone)]
pub enum ForcingModel {
    Inlet { load: Vec<f64>, p_max: f64, t_max: f64 },
    Steady { load: Vec<f64> },
    Zero { n: usize },
}

impl ForcingModel {
    pub fn at(&self, t: f64) -> Vec<f64> {
        match self {
            ForcingModel::Inlet { load, p_max, t_max } => {
                let p = inflow_pressure(t, *p_max, *t_max);
                load.iter().map(|v| v * p).collect()
            }
            ForcingModel::Steady { load } => load.clone(),
            ForcingModel::Zero { n } => vec![0.0; *n],
        }
    }
}

/// Mesh, spaces, constraints and forcing of one configured run.
#[derive(Debug, Clone)]
pub struct Problem {
    pub config: ScenarioConfig,
    pub mesh: Mesh2D,
    pub dofs: DofMap,
    pub constraints: Constraints,
    pub forcing: ForcingModel,
}

impl Problem {
    pub fn new(config: &ScenarioConfig) -> Result<Problem> {
        config.validate()?;
        let mesh = match config.geometry {
            Geometry::Artery { length, radius, wall } => mesh::build_artery_mesh(length, radius, wall, config.mesh_h)?,
            Geometry::Reservoir { half_width, fracture_half_length } => {
                let reference = mesh::build_reservoir_mesh(half_width, fracture_half_length, config.mesh_h)?;
                mesh::map_reservoir_domain(&reference)?
            }
        };
        Self::with_mesh(config, mesh)
    }

    /// Uses a given mesh; for the reservoir it must be the mapped mesh.
    pub fn with_mesh(config: &ScenarioConfig, mesh: Mesh2D) -> Result<Problem> {
        config.validate()?;
        let dofs = DofMap::new(&mesh, config.element_preset);
        let constraints = match config.scenario {
            ScenarioKind::Artery => artery_constraints(&mesh, &dofs),
            ScenarioKind::Reservoir => reservoir_constraints(&mesh, &dofs),
        };
        let asm = Assembler::new(&mesh, &dofs);
        let forcing = match config.forcing {
            Forcing::InletPressure { p_max, t_max } => {
                ForcingModel::Inlet { load: asm.normal_traction(Field::V, BoundaryLabel::FluidInlet), p_max, t_max }
            }
            Forcing::Injection { rate, radius } => {
                let tris = injection_triangles(&mesh, radius);
                if tris.is_empty() {
                    return Err(Error::Geometry("injection disk contains no fluid triangle".into()));
                }
                ForcingModel::Steady { load: asm.source(Field::Pf, &tris, rate / config.phys_params.rho_f) }
            }
            Forcing::None => ForcingModel::Zero { n: dofs.n_dofs },
        };
        Ok(Problem { config: config.clone(), mesh, dofs, constraints, forcing })
    }

    pub fn n_dofs(&self) -> usize {
        self.dofs.n_dofs
    }

    pub fn system(&self, tau: f64, theta: u8) -> Result<BlockSystem> {
        BlockSystem::assemble(
            &self.mesh,
            &self.dofs,
            &self.config.phys_params,
            &self.config.nitsche_params,
            tau,
            theta,
            self.constraints.clone(),
        )
    }

    /// Builds the stepper for `kind`, refusing a splitting outside its
    /// sufficient stability regime unless the config allows it.
    pub fn stepper(&self, kind: SchemeKind, tau: f64) -> Result<Stepper> {
        if kind == SchemeKind::AlgoB {
            let h = self.mesh.max_diameter();
            let check = audit::check_parameter_constraints(&self.config.phys_params, &self.config.nitsche_params, 1, tau, h);
            if !check.passed {
                log::warn!("splitting with theta = 1 outside its sufficient stability regime: {}", check.summary());
                if !self.config.allow_unstable {
                    return Err(Error::Infeasible(check.summary()));
                }
            }
        }
        Ok(Stepper::new(self.system(tau, kind.theta())?, kind))
    }

    pub fn energy_operators(&self, tau: f64) -> EnergyOperators {
        EnergyOperators::new(&self.mesh, &self.dofs, &self.config.phys_params, &self.config.nitsche_params, tau)
    }
}

/// Fluid triangles whose reference centroid lies in the injection disk.
/// The reservoir map keeps `x` and moves `y` smoothly, so the disk is
/// located through the inverse of the map restricted to the centroid.
fn injection_triangles(mesh: &Mesh2D, radius: f64) -> Vec<usize> {
    (0..mesh.n_triangles())
        .filter(|&k| mesh.regions[k] == Region::Fluid)
        .filter(|&k| {
            let c = mesh.tri_coords(k);
            let p = [(c[0][0] + c[1][0] + c[2][0]) / 3.0, (c[0][1] + c[1][1] + c[2][1]) / 3.0];
            let r = mesh::reservoir_unmap(p);
            r[0].hypot(r[1]) <= radius
        })
        .collect()
}

fn fix_segment(b: &mut ConstraintBuilder, mesh: &Mesh2D, dofs: &DofMap, f: Field, e: [usize; 2], comps: &[usize]) {
    for n in dofs.segment_nodes(mesh, f, e[0], e[1]) {
        for &c in comps {
            if let Some(d) = dofs.node_dof(f, n, c) {
                b.fix(d);
            }
        }
    }
}

fn normal_segment(b: &mut ConstraintBuilder, mesh: &Mesh2D, dofs: &DofMap, f: Field, e: [usize; 2], n: [f64; 2]) {
    for node in dofs.segment_nodes(mesh, f, e[0], e[1]) {
        if let (Some(dx), Some(dy)) = (dofs.node_dof(f, node, 0), dofs.node_dof(f, node, 1)) {
            b.constrain_direction(dx, dy, n);
        }
    }
}

/// Half-channel conditions: slip on the symmetry line, clamped wall ends
/// with no axial filtration, and an axially fixed outer wall free to move
/// radially. Inlet and outlet tractions are natural.
pub fn artery_constraints(mesh: &Mesh2D, dofs: &DofMap) -> Constraints {
    let mut b = ConstraintBuilder::new(dofs.n_dofs);
    for e in &mesh.boundary {
        match e.label {
            BoundaryLabel::Symmetry => fix_segment(&mut b, mesh, dofs, Field::V, e.v, &[1]),
            BoundaryLabel::PorousInlet | BoundaryLabel::PorousOutlet => {
                fix_segment(&mut b, mesh, dofs, Field::U, e.v, &[0, 1]);
                fix_segment(&mut b, mesh, dofs, Field::Ud, e.v, &[0, 1]);
                fix_segment(&mut b, mesh, dofs, Field::Q, e.v, &[0]);
            }
            BoundaryLabel::PorousExternal => {
                fix_segment(&mut b, mesh, dofs, Field::U, e.v, &[0]);
                fix_segment(&mut b, mesh, dofs, Field::Ud, e.v, &[0]);
            }
            _ => {}
        }
    }
    b.build()
}

/// No flux and no normal displacement on the exterior boundary.
pub fn reservoir_constraints(mesh: &Mesh2D, dofs: &DofMap) -> Constraints {
    let mut b = ConstraintBuilder::new(dofs.n_dofs);
    for e in mesh.boundary_with(BoundaryLabel::Exterior) {
        for f in [Field::U, Field::Ud, Field::Q] {
            normal_segment(&mut b, mesh, dofs, f, e.v, e.normal);
        }
    }
    b.build()
}

/// One row of the per-step log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub n: usize,
    pub t: f64,
    pub e_f: f64,
    pub e_p: f64,
    pub storage: f64,
    pub misfit_normal: f64,
    pub misfit_tangential: f64,
    pub gmres_iters: Option<usize>,
    /// `F(t_n; y_n)`.
    pub work: f64,
    pub dissipation: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub log: Vec<StepLog>,
    /// `(t, state)` at the requested snapshot steps.
    pub snapshots: Vec<(f64, Vec<f64>)>,
    pub final_state: Vec<f64>,
    pub initial_energy: f64,
}

/// Advances `n_steps` from `y0`, logging energies and keeping the states
/// at `snapshot_steps`.
pub fn integrate(
    problem: &Problem,
    stepper: &Stepper,
    ops: &EnergyOperators,
    y0: Vec<f64>,
    n_steps: usize,
    snapshot_steps: &[usize],
) -> Result<RunOutput> {
    let tau = stepper.system.tau;
    let mut prev = y0;
    let initial_energy = ops.energy(&prev).total();
    let mut log = Vec::with_capacity(n_steps);
    let mut snapshots = Vec::new();
    if snapshot_steps.contains(&0) {
        snapshots.push((0.0, prev.clone()));
    }
    for n in 1..=n_steps {
        let t = n as f64 * tau;
        let f = problem.forcing.at(t);
        let out = stepper.step(&prev, &f).map_err(|e| match e {
            Error::Solver(m) => Error::Solver(format!("step {n}: {m}")),
            other => other,
        })?;
        let y = out.y;
        let en = ops.energy(&y);
        let (mn, mt) = ops.misfits(&y, &prev);
        log.push(StepLog {
            n,
            t,
            e_f: en.e_f,
            e_p: en.e_p,
            storage: en.storage,
            misfit_normal: mn,
            misfit_tangential: mt,
            gmres_iters: out.gmres_iterations,
            work: f.iter().zip(&y).map(|(a, b)| a * b).sum(),
            dissipation: ops.dissipation(&y, &prev),
        });
        if snapshot_steps.contains(&n) {
            snapshots.push((t, y.clone()));
        }
        prev = y;
    }
    Ok(RunOutput { log, snapshots, final_state: prev, initial_energy })
}

/// Vertical interface displacement at the interface vertices, sorted by `x`.
pub fn interface_displacement_profile(problem: &Problem, y: &[f64]) -> Vec<(f64, f64)> {
    let mut verts: Vec<usize> = problem.mesh.interface.iter().flat_map(|e| e.v).collect();
    verts.sort_unstable();
    verts.dedup();
    let mut out: Vec<(f64, f64)> = verts
        .into_iter()
        .filter_map(|v| problem.dofs.node_dof(Field::U, v, 1).map(|d| (problem.mesh.vertices[v][0], y[d])))
        .collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

/// Abscissa of the largest vertical interface displacement.
pub fn displacement_peak(profile: &[(f64, f64)]) -> f64 {
    profile.iter().fold((f64::NAN, f64::NEG_INFINITY), |acc, &(x, u)| if u > acc.1 { (x, u) } else { acc }).0
}

/// Radial filtration velocity `q_y` along the interface, the middle of the
/// wall and the outer wall, sampled at the interface abscissae.
pub fn intramural_flux_profiles(problem: &Problem, y: &[f64]) -> Result<Vec<(f64, [f64; 3])>> {
    let Geometry::Artery { radius, wall, .. } = problem.config.geometry else {
        return Err(Error::Parameter("intramural flux profiles need the artery geometry".into()));
    };
    let planes = [radius, radius + 0.5 * wall, radius + wall];
    let xs: Vec<f64> = interface_displacement_profile(problem, y).into_iter().map(|p| p.0).collect();
    let mut out = Vec::with_capacity(xs.len());
    for x in xs {
        let mut q = [0.0; 3];
        for (k, &yp) in planes.iter().enumerate() {
            q[k] = problem.dofs.evaluate(&problem.mesh, Field::Q, y, [x, yp]).map_or(f64::NAN, |v| v[1]);
        }
        out.push((x, q));
    }
    Ok(out)
}

/// Location and value of the largest fluid pressure at a vertex.
pub fn fluid_pressure_maximum(problem: &Problem, y: &[f64]) -> ([f64; 2], f64) {
    let vals = problem.dofs.vertex_values(Field::Pf, y, 0);
    let mut best = ([f64::NAN; 2], f64::NEG_INFINITY);
    for (v, val) in vals.into_iter().enumerate() {
        if let Some(p) = val {
            if p > best.1 {
                best = (problem.mesh.vertices[v], p);
            }
        }
    }
    best
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenario: ScenarioKind,
    pub scheme: SchemeKind,
    pub n_dofs: usize,
    pub steps: usize,
    pub all_finite: bool,
    /// Interface displacement peak abscissa per snapshot (artery).
    pub peak_positions: Vec<(f64, f64)>,
    /// Fluid pressure maximum location at the final step (reservoir).
    pub pressure_max: Option<([f64; 2], f64)>,
    pub elapsed_seconds: f64,
}

/// Runs a configured scenario. With `out_dir`, writes the step log, VTK
/// snapshots and profile tables.
pub fn run_scenario(config: &ScenarioConfig, out_dir: Option<&Path>) -> Result<RunSummary> {
    let start = Instant::now();
    let problem = Problem::new(config)?;
    let stepper = problem.stepper(config.scheme, config.tau)?;
    let ops = problem.energy_operators(config.tau);
    let n_steps = config.n_steps();
    let mut snap_steps: Vec<usize> = config
        .output
        .snapshot_times
        .iter()
        .map(|&t| (t / config.tau).round() as usize)
        .filter(|&n| n <= n_steps)
        .collect();
    if config.scenario == ScenarioKind::Reservoir {
        snap_steps.push(n_steps);
    }
    let run = integrate(&problem, &stepper, &ops, vec![0.0; problem.n_dofs()], n_steps, &snap_steps)?;
    let all_finite = run.final_state.iter().all(|v| v.is_finite()) && run.snapshots.iter().all(|s| s.1.iter().all(|v| v.is_finite()));
    let mut peak_positions = Vec::new();
    let mut pressure_max = None;
    match config.scenario {
        ScenarioKind::Artery => {
            for (t, y) in &run.snapshots {
                peak_positions.push((*t, displacement_peak(&interface_displacement_profile(&problem, y))));
            }
        }
        ScenarioKind::Reservoir => pressure_max = Some(fluid_pressure_maximum(&problem, &run.final_state)),
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        let meta = io::Metadata::new(config, None);
        io::write_step_log(&dir.join("steps.csv"), &meta, &run.log)?;
        for (t, y) in &run.snapshots {
            let tag = format!("{:08.3}ms", t * 1e3).replace('.', "_");
            if config.output.vtk {
                let snap = io::Snapshot::from_state(&problem.mesh, &problem.dofs, *t, y)?;
                io::write_vtk(&snap, &dir.join(format!("snapshot_{tag}.vtk")))?;
            }
            if config.scenario == ScenarioKind::Artery {
                let prof = interface_displacement_profile(&problem, y);
                let rows: Vec<Vec<f64>> = prof.iter().map(|&(x, u)| vec![x, u]).collect();
                io::write_table(&dir.join(format!("interface_displacement_{tag}.csv")), &meta, &["x", "U_y"], &rows)?;
                let flux = intramural_flux_profiles(&problem, y)?;
                let rows: Vec<Vec<f64>> = flux.iter().map(|&(x, q)| vec![x, q[0], q[1], q[2]]).collect();
                io::write_table(
                    &dir.join(format!("intramural_flux_{tag}.csv")),
                    &meta,
                    &["x", "q_y_interface", "q_y_mid", "q_y_outer"],
                    &rows,
                )?;
            }
        }
    }
    Ok(RunSummary {
        scenario: config.scenario,
        scheme: config.scheme,
        n_dofs: problem.n_dofs(),
        steps: n_steps,
        all_finite,
        peak_positions,
        pressure_max,
        elapsed_seconds: start.elapsed().as_secs_f64(),
    })
}

/// One line of the temporal convergence table: square roots of the four
/// error indicators and the observed rates against the previous line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub scheme: SchemeKind,
    pub tau: f64,
    pub errors: [f64; 4],
    pub rates: [Option<f64>; 4],
}

pub const INDICATOR_NAMES: [&str; 4] = ["sqrt_E_f", "sqrt_E_p_velocity", "sqrt_E_p_elastic", "sqrt_E_p_pressure"];

fn steps_for(t_final: f64, tau: f64) -> Result<usize> {
    let n = t_final / tau;
    let r = n.round();
    if (n - r).abs() > 1e-6 * r.max(1.0) {
        return Err(Error::Parameter(format!("final time {t_final} is not a multiple of the step {tau}")));
    }
    Ok(r as usize)
}

/// Final state of a run of `kind` with step `tau` up to the configured
/// final time.
pub fn final_state(problem: &Problem, kind: SchemeKind, tau: f64) -> Result<Vec<f64>> {
    let n = steps_for(problem.config.t_final, tau)?;
    let stepper = problem.stepper(kind, tau)?;
    let mut y = vec![0.0; problem.n_dofs()];
    for k in 1..=n {
        let f = problem.forcing.at(k as f64 * tau);
        y = stepper.step(&y, &f).map_err(|e| Error::Solver(format!("{} step {k} at tau {tau}: {e}", kind.name())))?.y;
    }
    Ok(y)
}

/// Errors of the monolithic scheme and the `theta = 0` splitting against a
/// monolithic reference with a small step.
pub fn run_convergence_study(config: &ScenarioConfig, schemes: &[SchemeKind]) -> Result<Vec<ConvergenceRow>> {
    let study = config.study.as_ref().ok_or_else(|| Error::Parameter("convergence study needs a study section".into()))?;
    let tau_ref = study.tau_ref.ok_or_else(|| Error::Parameter("convergence study needs study.tauRef".into()))?;
    if study.tau_list.is_empty() {
        return Err(Error::Parameter("convergence study needs study.tauList".into()));
    }
    let problem = Problem::new(config)?;
    let reference = final_state(&problem, SchemeKind::Monolithic, tau_ref)?;
    let ops = problem.energy_operators(tau_ref);
    let mut rows = Vec::new();
    for &kind in schemes {
        let mut last: Option<[f64; 4]> = None;
        for &tau in &study.tau_list {
            let y = final_state(&problem, kind, tau)?;
            let ind = ops.indicators(&y, &reference);
            let errors = [ind.e_f.sqrt(), ind.e_p_velocity.sqrt(), ind.e_p_elastic.sqrt(), ind.e_p_pressure.sqrt()];
            let rates = match last {
                Some(prev) => std::array::from_fn(|i| Some((prev[i] / errors[i]).log2())),
                None => [None; 4],
            };
            rows.push(ConvergenceRow { scheme: kind, tau, errors, rates });
            last = Some(errors);
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecondRow {
    pub h: f64,
    pub tau: f64,
    pub n_dofs: usize,
    pub mean_preconditioned: f64,
    pub mean_unpreconditioned: f64,
    /// Plain GMRES on the diagonally equilibrated system.
    pub mean_equilibrated: f64,
    /// Some solve hit the iteration limit; its count enters as the limit.
    pub preconditioned_capped: bool,
    pub unpreconditioned_capped: bool,
    pub equilibrated_capped: bool,
}

/// Mean GMRES iterations over the first `study.steps` steps, with and
/// without the splitting preconditioner, for every `(h, tau)` pair. Both
/// solves of a step start from the same preconditioned trajectory.
pub fn run_preconditioner_study(config: &ScenarioConfig, with_unpreconditioned: bool) -> Result<Vec<PrecondRow>> {
    let study = config.study.as_ref().ok_or_else(|| Error::Parameter("preconditioner study needs a study section".into()))?;
    let mut rows = Vec::new();
    let hs = if study.h_list.is_empty() { vec![config.mesh_h] } else { study.h_list.clone() };
    let taus = if study.tau_list.is_empty() { vec![config.tau] } else { study.tau_list.clone() };
    for &h in &hs {
        let mut cfg = config.clone();
        cfg.mesh_h = h;
        let problem = Problem::new(&cfg)?;
        for &tau in &taus {
            let stepper = problem.stepper(SchemeKind::Preconditioned, tau)?;
            let mut y = vec![0.0; problem.n_dofs()];
            let (mut sp, mut su, mut se) = (0usize, 0usize, 0usize);
            let (mut cp, mut cu, mut ce) = (false, false, false);
            for k in 1..=study.steps {
                let f = problem.forcing.at(k as f64 * tau);
                if with_unpreconditioned {
                    let r = stepper.solve_krylov_step(&y, &f, KrylovMode::Plain)?;
                    su += r.iterations;
                    cu |= !r.converged;
                }
                let r = stepper.solve_krylov_step(&y, &f, KrylovMode::Equilibrated)?;
                se += r.iterations;
                ce |= !r.converged;
                let r = stepper.solve_preconditioned_step(&y, &f, true)?;
                sp += r.iterations;
                cp |= !r.converged;
                y = r.x;
            }
            let m = study.steps.max(1) as f64;
            rows.push(PrecondRow {
                h,
                tau,
                n_dofs: problem.n_dofs(),
                mean_preconditioned: sp as f64 / m,
                mean_unpreconditioned: if with_unpreconditioned { su as f64 / m } else { f64::NAN },
                mean_equilibrated: se as f64 / m,
                preconditioned_capped: cp,
                unpreconditioned_capped: cu,
                equilibrated_capped: ce,
            });
        }
    }
    Ok(rows)
}
