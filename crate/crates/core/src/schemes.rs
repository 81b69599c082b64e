//! Time steppers: the monolithic backward Euler step, the two loosely
//! coupled splittings (`theta = 0`: Biot then fluid, `theta = 1`: structure,
//! Darcy, fluid), and GMRES on the monolithic step preconditioned by the
//! splitting operator.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{DofMap, Field};
use crate::forms::{Assembler, BlockName, BlockSystem, InterfaceGram, NitscheParams, PhysParams};
use crate::mesh::Mesh2D;
use crate::sparsela::{factorize, gmres, BlockTriangularSolver, CsrMatrix, GmresConfig, GmresResult, LuFactor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    Monolithic,
    AlgoA,
    AlgoB,
    Preconditioned,
}

impl SchemeKind {
    /// Splitting parameter of the loosely coupled operator used by the scheme.
    pub fn theta(self) -> u8 {
        match self {
            SchemeKind::AlgoA => 0,
            SchemeKind::Monolithic | SchemeKind::AlgoB | SchemeKind::Preconditioned => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SchemeKind::Monolithic => "monolithic",
            SchemeKind::AlgoA => "algo_a",
            SchemeKind::AlgoB => "algo_b",
            SchemeKind::Preconditioned => "preconditioned",
        }
    }

    pub fn parse(s: &str) -> Option<SchemeKind> {
        [SchemeKind::Monolithic, SchemeKind::AlgoA, SchemeKind::AlgoB, SchemeKind::Preconditioned]
            .into_iter()
            .find(|k| k.name() == s)
    }
}

/// Krylov variants of the monolithic step: preconditioned by the splitting
/// operator, plain, or plain on the symmetrically diagonal-scaled system
/// `S A S z = S b`, `x = S z`, `S = |diag A|^(-1/2)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KrylovMode {
    Split,
    Plain,
    Equilibrated,
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    pub y: Vec<f64>,
    pub gmres_iterations: Option<usize>,
}

/// One time-step operator with cached factorizations.
pub struct Stepper {
    pub system: BlockSystem,
    pub kind: SchemeKind,
    pub gmres: GmresConfig,
    mono: OnceLock<LuFactor>,
    loose: OnceLock<BlockTriangularSolver>,
    equilibrated: OnceLock<(CsrMatrix, Vec<f64>)>,
}

impl Stepper {
    pub fn new(system: BlockSystem, kind: SchemeKind) -> Stepper {
        Stepper { system, kind, gmres: GmresConfig::default(), mono: OnceLock::new(), loose: OnceLock::new(), equilibrated: OnceLock::new() }
    }

    fn mono_factor(&self) -> Result<&LuFactor> {
        if self.mono.get().is_none() {
            let f = factorize(&self.system.monolithic)?;
            let _ = self.mono.set(f);
        }
        Ok(self.mono.get().unwrap())
    }

    /// Back-substitution solver for the splitting operator.
    pub fn loose_solver(&self) -> Result<&BlockTriangularSolver> {
        if self.loose.get().is_none() {
            let s = BlockTriangularSolver::new(&self.system.loose, self.system.groups.clone())?;
            let _ = self.loose.set(s);
        }
        Ok(self.loose.get().unwrap())
    }

    /// Applies the inverse of the splitting operator by back substitution
    /// over its diagonal groups.
    pub fn apply_loosely_coupled_preconditioner(&self, r: &[f64]) -> Result<Vec<f64>> {
        if r.len() != self.system.n() {
            return Err(Error::Dimension(format!("residual length {} != {}", r.len(), self.system.n())));
        }
        Ok(self.loose_solver()?.solve(r))
    }

    pub fn step_monolithic(&self, prev: &[f64], forcing: &[f64]) -> Result<Vec<f64>> {
        let b = self.system.rhs(forcing, prev);
        let y = self.mono_factor()?.solve(&b);
        check_finite(&y)?;
        Ok(y)
    }

    /// Loosely coupled step: the groups are solved from last to first, each
    /// with the previous-level data of the lagged couplings and the new data
    /// of the groups already solved.
    pub fn step_algorithm(&self, prev: &[f64], forcing: &[f64]) -> Result<Vec<f64>> {
        let sys = &self.system;
        let theta = sys.theta;
        let n = sys.n();
        let mut base = forcing.to_vec();
        for (k, m) in &sys.blocks {
            if k.in_history() {
                m.spmv_add(1.0, prev, &mut base);
            }
            if k.splitting_only() && theta == 1 {
                m.spmv_add(1.0, prev, &mut base);
            }
            if !k.splitting_only() && k.lagged(theta) {
                m.spmv_add(-1.0, prev, &mut base);
            }
        }
        let solver = self.loose_solver()?;
        let mut y = vec![0.0; n];
        for gi in (0..sys.groups.len()).rev() {
            let g = sys.groups[gi].clone();
            let mut r = base.clone();
            for (k, m) in &sys.blocks {
                let active = if k.splitting_only() { theta == 1 } else { !k.lagged(theta) };
                if !active {
                    continue;
                }
                let (rf, cf) = k.position();
                if sys.group_of(rf) == gi && sys.group_of(cf) > gi {
                    m.spmv_add(-1.0, &y, &mut r);
                }
            }
            sys.constraints.project(&mut r);
            let sol = solver.diag_factor(gi).solve(&r[g.clone()]);
            y[g].copy_from_slice(&sol);
        }
        check_finite(&y)?;
        Ok(y)
    }

    /// GMRES on the monolithic step, left preconditioned by the splitting
    /// operator when `precondition` is set.
    pub fn solve_preconditioned_step(&self, prev: &[f64], forcing: &[f64], precondition: bool) -> Result<GmresResult> {
        let mode = if precondition { KrylovMode::Split } else { KrylovMode::Plain };
        self.solve_krylov_step(prev, forcing, mode)
    }

    fn equilibrated(&self) -> &(CsrMatrix, Vec<f64>) {
        self.equilibrated.get_or_init(|| {
            let a = &self.system.monolithic;
            let s: Vec<f64> = (0..a.nrows)
                .map(|i| {
                    let d = a.get(i, i).abs();
                    if d > 0.0 {
                        1.0 / d.sqrt()
                    } else {
                        1.0
                    }
                })
                .collect();
            let mut m = a.clone();
            for i in 0..m.nrows {
                for k in m.indptr[i]..m.indptr[i + 1] {
                    m.data[k] *= s[i] * s[m.indices[k]];
                }
            }
            (m, s)
        })
    }

    pub fn solve_krylov_step(&self, prev: &[f64], forcing: &[f64], mode: KrylovMode) -> Result<GmresResult> {
        let b = self.system.rhs(forcing, prev);
        match mode {
            KrylovMode::Split => {
                let s = self.loose_solver()?;
                let p = |v: &[f64]| s.solve(v);
                gmres(&self.system.monolithic, &b, Some(&p), &self.gmres)
            }
            KrylovMode::Plain => gmres(&self.system.monolithic, &b, None, &self.gmres),
            KrylovMode::Equilibrated => {
                let (m, s) = self.equilibrated();
                let sb: Vec<f64> = b.iter().zip(s).map(|(v, w)| v * w).collect();
                let mut r = gmres(m, &sb, None, &self.gmres)?;
                for (x, w) in r.x.iter_mut().zip(s) {
                    *x *= w;
                }
                Ok(r)
            }
        }
    }

    pub fn step(&self, prev: &[f64], forcing: &[f64]) -> Result<StepOutput> {
        match self.kind {
            SchemeKind::Monolithic => Ok(StepOutput { y: self.step_monolithic(prev, forcing)?, gmres_iterations: None }),
            SchemeKind::AlgoA | SchemeKind::AlgoB => {
                if self.system.theta != self.kind.theta() {
                    return Err(Error::Parameter(format!(
                        "scheme {} needs theta = {}, system has {}",
                        self.kind.name(),
                        self.kind.theta(),
                        self.system.theta
                    )));
                }
                Ok(StepOutput { y: self.step_algorithm(prev, forcing)?, gmres_iterations: None })
            }
            SchemeKind::Preconditioned => {
                let r = self.solve_preconditioned_step(prev, forcing, true)?;
                if !r.converged {
                    return Err(Error::Solver(format!(
                        "GMRES stopped after {} iterations at relative residual {:e}",
                        r.iterations,
                        r.residual_history.last().copied().unwrap_or(f64::NAN)
                    )));
                }
                check_finite(&r.x)?;
                Ok(StepOutput { y: r.x, gmres_iterations: Some(r.iterations) })
            }
        }
    }
}

fn check_finite(y: &[f64]) -> Result<()> {
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::Solver(format!("non-finite value in solution at dof {i}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub e_f: f64,
    pub e_p: f64,
    /// `tau/2` times the fluid pressure interface stabilization norm.
    pub storage: f64,
}

impl EnergyReport {
    pub fn total(&self) -> f64 {
        self.e_f + self.e_p + self.storage
    }
}

/// Unscaled operators used for energies, norms and error indicators.
#[derive(Debug, Clone)]
pub struct EnergyOperators {
    pub tau: f64,
    pub mass_v: CsrMatrix,
    pub mass_ud: CsrMatrix,
    pub mass_pp: CsrMatrix,
    /// `a_s` including the spring term.
    pub elastic: CsrMatrix,
    /// `2 mu_p |D U|^2 + lambda_p |div U|^2` without the spring term.
    pub elastic_plain: CsrMatrix,
    /// `2 mu_f (D v, D w)`.
    pub viscous: CsrMatrix,
    pub darcy: CsrMatrix,
    pub gram: InterfaceGram,
    pub mu_f: f64,
    pub gamma_f: f64,
    pub gamma_stab: f64,
    u_range: std::ops::Range<usize>,
}

/// Triangle-count-independent error indicators between two states.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorIndicators {
    pub e_f: f64,
    pub e_p_velocity: f64,
    pub e_p_elastic: f64,
    pub e_p_pressure: f64,
}

impl EnergyOperators {
    pub fn new(mesh: &Mesh2D, dofs: &DofMap, phys: &PhysParams, nit: &NitscheParams, tau: f64) -> Self {
        let a = Assembler::new(mesh, dofs);
        let elastic_plain = a.strain(Field::U, phys.mu_p).add(&a.divdiv(Field::U, phys.lambda_p), 1.0);
        EnergyOperators {
            tau,
            mass_v: a.mass(Field::V, phys.rho_f),
            mass_ud: a.mass(Field::Ud, phys.rho_p),
            mass_pp: a.mass(Field::Pp, phys.s0),
            elastic: a.a_s(phys),
            elastic_plain,
            viscous: a.a_f(phys.mu_f),
            darcy: a.a_p(phys),
            gram: a.interface_gram(tau),
            mu_f: phys.mu_f,
            gamma_f: nit.gamma_f,
            gamma_stab: nit.gamma_stab,
            u_range: dofs.range(Field::U),
        }
    }

    pub fn energy(&self, y: &[f64]) -> EnergyReport {
        let e_f = 0.5 * self.mass_v.quad(y, y);
        let e_p = 0.5 * (self.mass_ud.quad(y, y) + self.elastic.quad(y, y) + self.mass_pp.quad(y, y));
        let storage = 0.5 * self.tau * self.gamma_stab / (self.gamma_f * self.mu_f) * self.gram.pf_mass_h.quad(y, y);
        EnergyReport { e_f, e_p, storage }
    }

    /// `y` with the displacement replaced by its increment over `prev`, so
    /// that the Gram matrices see `d_tau U`.
    fn increment_view(&self, y: &[f64], prev: &[f64]) -> Vec<f64> {
        let mut z = y.to_vec();
        for i in self.u_range.clone() {
            z[i] = y[i] - prev[i];
        }
        z
    }

    /// L2 norms on the interface of `(v - q - d_tau U) . n` and `(v - d_tau U) . t`.
    pub fn misfits(&self, y: &[f64], prev: &[f64]) -> (f64, f64) {
        let z = self.increment_view(y, prev);
        (self.gram.normal.quad(&z, &z).max(0.0).sqrt(), self.gram.tangential.quad(&z, &z).max(0.0).sqrt())
    }

    /// Physical dissipation rate of the step ending in `y`.
    pub fn dissipation(&self, y: &[f64], prev: &[f64]) -> f64 {
        let z = self.increment_view(y, prev);
        self.viscous.quad(y, y)
            + self.darcy.quad(y, y)
            + self.mu_f * (self.gram.normal_h.quad(&z, &z) + self.gram.tangential_h.quad(&z, &z))
    }

    /// The energy-type norm of the stability analysis.
    pub fn triple_norm(&self, y: &[f64], prev: &[f64]) -> f64 {
        let z = self.increment_view(y, prev);
        let t = self.tau;
        let s = self.mass_v.quad(y, y)
            + self.elastic_plain.quad(y, y)
            + self.mass_pp.quad(y, y)
            + self.mass_ud.quad(y, y)
            + t * self.viscous.quad(y, y)
            + t * self.darcy.quad(y, y)
            + self.mu_f * t * (self.gram.normal_h.quad(&z, &z) + self.gram.tangential_h.quad(&z, &z))
            + t / (self.gamma_f * self.mu_f) * self.gram.pf_mass_h.quad(y, y);
        s.max(0.0).sqrt()
    }

    /// Squared error indicators of `y` against `reference`.
    pub fn indicators(&self, y: &[f64], reference: &[f64]) -> ErrorIndicators {
        let d: Vec<f64> = y.iter().zip(reference).map(|(a, b)| a - b).collect();
        ErrorIndicators {
            e_f: self.mass_v.quad(&d, &d),
            e_p_velocity: self.mass_ud.quad(&d, &d),
            e_p_elastic: self.elastic_plain.quad(&d, &d),
            e_p_pressure: self.mass_pp.quad(&d, &d),
        }
    }
}

/// `(M (u - w), u) = |u|_M^2 / 2 - |w|_M^2 / 2 + |u - w|_M^2 / 2`, returned
/// as the difference of both sides.
pub fn dtau_identity_residual(m: &CsrMatrix, u: &[f64], w: &[f64]) -> f64 {
    let d: Vec<f64> = u.iter().zip(w).map(|(a, b)| a - b).collect();
    let lhs = m.quad(u, &d);
    let rhs = 0.5 * m.quad(u, u) - 0.5 * m.quad(w, w) + 0.5 * m.quad(&d, &d);
    lhs - rhs
}

/// Blocks whose increments make up the splitting residual, grouped as in
/// the implicit-explicit reformulation of the loosely coupled schemes:
/// penalty couplings, velocity and pressure consistency, and the lagged
/// poroelastic coupling.
pub fn splitting_residual_blocks(theta: u8) -> Vec<(&'static str, Vec<BlockName>)> {
    use BlockName::*;
    let mut penalty = vec![GqfGamma, GsfGamma];
    if theta == 1 {
        penalty.push(Gsq);
    }
    let mut out = vec![
        ("penalty", penalty),
        ("velocity_consistency", vec![GfSigma, GqfSigma, GsfSigma]),
        ("pressure_consistency", vec![GpfSigma, GqpSigma, GspSigma]),
    ];
    if theta == 1 {
        out.push(("poroelastic_coupling", vec![Bsp]));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparsela::TripletBuilder;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn dtau_identity_holds(u in proptest::collection::vec(-10.0f64..10.0, 4), w in proptest::collection::vec(-10.0f64..10.0, 4)) {
            let mut b = TripletBuilder::new(4, 4);
            for i in 0..4 {
                b.add(i, i, 2.0 + i as f64);
                if i > 0 {
                    b.add(i, i - 1, 0.5);
                    b.add(i - 1, i, 0.5);
                }
            }
            let m = b.build();
            let r = dtau_identity_residual(&m, &u, &w);
            prop_assert!(r.abs() < 1e-10 * (1.0 + m.quad(&u, &u) + m.quad(&w, &w)));
        }
    }

    #[test]
    fn scheme_names_round_trip() {
        for k in [SchemeKind::Monolithic, SchemeKind::AlgoA, SchemeKind::AlgoB, SchemeKind::Preconditioned] {
            assert_eq!(SchemeKind::parse(k.name()), Some(k));
        }
    }
}
