//! Runtime checks of the stability and splitting properties: parameter
//! constraints, energy inequalities, the implicit-with-residuals identity of
//! the splittings, Rayleigh-quotient scans and probes.
//!
//! Every check is deterministic given the seed stored in its result.

use std::collections::BTreeMap;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::fem::Field;
use crate::forms::{BlockSystem, NitscheParams, PhysParams};
use crate::scenarios::{integrate, Problem, ScenarioConfig, StepLog};
use crate::schemes::{splitting_residual_blocks, EnergyOperators, SchemeKind};
use crate::sparsela::{dot, norm2, CsrMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremCheckResult {
    pub name: String,
    pub passed: bool,
    pub measured: BTreeMap<String, f64>,
    pub thresholds: BTreeMap<String, f64>,
    pub context: BTreeMap<String, String>,
    pub seed: Option<u64>,
}

impl TheoremCheckResult {
    fn new(name: &str) -> Self {
        TheoremCheckResult {
            name: name.into(),
            passed: true,
            measured: BTreeMap::new(),
            thresholds: BTreeMap::new(),
            context: BTreeMap::new(),
            seed: None,
        }
    }

    fn measure(mut self, k: &str, v: f64) -> Self {
        self.measured.insert(k.into(), v);
        self
    }

    fn threshold(mut self, k: &str, v: f64) -> Self {
        self.thresholds.insert(k.into(), v);
        self
    }

    fn ctx(mut self, k: &str, v: impl ToString) -> Self {
        self.context.insert(k.into(), v.to_string());
        self
    }

    pub fn summary(&self) -> String {
        let m: Vec<String> = self.measured.iter().map(|(k, v)| format!("{k}={v:e}")).collect();
        let t: Vec<String> = self.thresholds.iter().map(|(k, v)| format!("{k}={v:e}")).collect();
        format!("{} {}: {} [{}]", self.name, if self.passed { "pass" } else { "FAIL" }, m.join(" "), t.join(" "))
    }
}

/// Coupling constraint `theta alpha^2 / (lambda_p s0) < 1` of the splitting
/// with the lagged poroelastic coupling, together with the step ratios that
/// decide the regime when the interface stabilizers are off.
pub fn check_parameter_constraints(phys: &PhysParams, nit: &NitscheParams, theta: u8, tau: f64, h: f64) -> TheoremCheckResult {
    let ratio = theta as f64 * phys.alpha * phys.alpha / (phys.lambda_p * phys.s0);
    let regime = if theta == 0 {
        "biot-coupled"
    } else if nit.gamma_stab_prime > 0.0 {
        "stabilized"
    } else {
        "unstabilized-small-step"
    };
    let kinv = phys.kappa_inv();
    let mut r = TheoremCheckResult::new("parameter_constraints")
        .measure("coupling_ratio", ratio)
        .measure("tau_over_h", tau / h)
        .measure("tau_over_h2", tau / (h * h))
        .measure("kappa_inv_h2", kinv[0][0].min(kinv[1][1]) * h * h)
        .threshold("coupling_ratio_max", 1.0)
        .ctx("theta", theta)
        .ctx("regime", regime)
        .ctx("tau", tau)
        .ctx("h", h);
    r.passed = ratio < 1.0;
    r
}

/// `E^N + c tau sum D_n <= E^0 + C tau sum max(W_n, 0)` over a logged run,
/// with `D_n` the physical dissipation and `W_n` the forcing work.
pub fn check_energy_inequality(log: &[StepLog], initial_energy: f64, tau: f64, c: f64, big_c: f64) -> TheoremCheckResult {
    let last = log.last().map_or(initial_energy, |s| s.e_f + s.e_p + s.storage);
    let diss: f64 = log.iter().map(|s| s.dissipation).sum();
    let work: f64 = log.iter().map(|s| s.work.max(0.0)).sum();
    let lhs = last + c * tau * diss;
    let rhs = initial_energy + big_c * tau * work;
    let mut r = TheoremCheckResult::new("energy_inequality")
        .measure("lhs", lhs)
        .measure("rhs", rhs)
        .measure("margin", rhs - lhs)
        .threshold("c", c)
        .threshold("C", big_c)
        .ctx("steps", log.len());
    r.passed = lhs <= rhs * (1.0 + 1e-12) + 1e-300;
    r
}

/// Largest relative per-step growth of `E_f + E_p + storage`.
pub fn max_energy_growth(initial_energy: f64, log: &[StepLog]) -> f64 {
    let mut prev = initial_energy;
    let mut worst = f64::NEG_INFINITY;
    for s in log {
        let e = s.e_f + s.e_p + s.storage;
        worst = worst.max((e - prev) / prev.max(f64::MIN_POSITIVE));
        prev = e;
    }
    worst
}

/// Residual of the splitting step `y` (from `prev`) in the monolithic
/// equation with the stabilizer increment and the lagged-coupling residual
/// terms added back, relative to the size of the right-hand side.
pub fn imex_residual(sys: &BlockSystem, prev: &[f64], y: &[f64], forcing: &[f64]) -> f64 {
    let n = sys.n();
    let dy: Vec<f64> = y.iter().zip(prev).map(|(a, b)| a - b).collect();
    let mut r = vec![0.0; n];
    let mut rhs = forcing.to_vec();
    sys.history.spmv_add(1.0, prev, &mut rhs);
    for (k, m) in &sys.blocks {
        if k.splitting_only() {
            if sys.theta == 1 {
                m.spmv_add(1.0, &dy, &mut r);
            }
        } else {
            m.spmv_add(1.0, y, &mut r);
        }
    }
    for (_, names) in splitting_residual_blocks(sys.theta) {
        sys.sum_of(&names).spmv_add(-1.0, &dy, &mut r);
    }
    for (a, b) in r.iter_mut().zip(&rhs) {
        *a -= b;
    }
    sys.constraints.project(&mut r);
    let mut prhs = rhs;
    sys.constraints.project(&mut prhs);
    norm2(&r) / norm2(&prhs).max(f64::MIN_POSITIVE)
}

pub fn check_imex_identity(sys: &BlockSystem, prev: &[f64], y: &[f64], forcing: &[f64]) -> TheoremCheckResult {
    let res = imex_residual(sys, prev, y, forcing);
    let mut r = TheoremCheckResult::new("imex_identity")
        .measure("relative_residual", res)
        .threshold("max", 1e-9)
        .ctx("theta", sys.theta);
    r.passed = res <= 1e-9;
    r
}

/// Random vector in the constrained subspace, scaled by the inverse square
/// root of `|diag(a)|` so every dof carries a comparable share of the form.
pub fn scaled_probe(sys: &BlockSystem, a: &CsrMatrix, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut y: Vec<f64> = (0..sys.n())
        .map(|i| {
            let d = a.get(i, i).abs();
            let z: f64 = rng.random_range(-1.0..1.0);
            if d > 0.0 {
                z / d.sqrt()
            } else {
                z
            }
        })
        .collect();
    sys.constraints.project(&mut y);
    y
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RayleighScan {
    pub r_min: f64,
    pub r_max: f64,
    pub accepted: usize,
    /// Smallest `Y^T A_hat Y / (|Y| |A_hat Y|)` over all probes.
    pub min_normalized_loose_form: f64,
}

impl RayleighScan {
    pub fn width_ratio(&self) -> f64 {
        self.r_max / self.r_min
    }
}

/// Ratios `Y^T A Y / Y^T A_hat Y` of the monolithic and splitting operators
/// over `probes` random vectors with `Y^T A_hat Y > 1e-12 |Y|^2`.
pub fn rayleigh_scan(sys: &BlockSystem, probes: usize, seed: u64) -> RayleighScan {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scan = RayleighScan { r_min: f64::INFINITY, r_max: f64::NEG_INFINITY, accepted: 0, min_normalized_loose_form: f64::INFINITY };
    for _ in 0..probes {
        let y = scaled_probe(sys, &sys.loose, &mut rng);
        let ay = sys.loose.spmv(&y);
        let den = dot(&y, &ay);
        let yn = norm2(&y);
        scan.min_normalized_loose_form = scan.min_normalized_loose_form.min(den / (yn * norm2(&ay)).max(f64::MIN_POSITIVE));
        if den > 1e-12 * yn * yn {
            let num = sys.monolithic.quad(&y, &y);
            scan.r_min = scan.r_min.min(num / den);
            scan.r_max = scan.r_max.max(num / den);
            scan.accepted += 1;
        }
    }
    scan
}

/// Spectral-equivalence surrogate: the ratio interval on two meshes stays
/// positive and its width ratio drifts by less than 25 %.
pub fn check_spectral_scan(coarse: &BlockSystem, fine: &BlockSystem, probes: usize, seed: u64) -> TheoremCheckResult {
    let a = rayleigh_scan(coarse, probes, seed);
    let b = rayleigh_scan(fine, probes, seed);
    let drift = (b.width_ratio() / a.width_ratio() - 1.0).abs();
    let mut r = TheoremCheckResult::new("spectral_scan")
        .measure("coarse_r_min", a.r_min)
        .measure("coarse_r_max", a.r_max)
        .measure("fine_r_min", b.r_min)
        .measure("fine_r_max", b.r_max)
        .measure("width_drift", drift)
        .measure("min_normalized_loose_form", a.min_normalized_loose_form.min(b.min_normalized_loose_form))
        .threshold("width_drift_max", 0.25)
        .threshold("loose_form_min", -1e-10);
    r.seed = Some(seed);
    r.passed = a.r_min > 0.0
        && b.r_min > 0.0
        && drift < 0.25
        && a.min_normalized_loose_form >= -1e-10
        && b.min_normalized_loose_form >= -1e-10
        && a.accepted > 0
        && b.accepted > 0;
    r
}

/// `Y^T A_hat Y >= -1e-10 |Y| |A_hat Y|` for random `Y`.
pub fn check_psd_probe(sys: &BlockSystem, probes: usize, seed: u64) -> TheoremCheckResult {
    let s = rayleigh_scan(sys, probes, seed);
    let mut r = TheoremCheckResult::new("psd_probe")
        .measure("min_normalized_loose_form", s.min_normalized_loose_form)
        .threshold("min", -1e-10)
        .ctx("theta", sys.theta);
    r.seed = Some(seed);
    r.passed = s.min_normalized_loose_form >= -1e-10;
    r
}

/// Largest `h |D(v) n|_Gamma^2 / |D(v)|^2` over random fluid velocities
/// supported on the elements touching the interface. White noise over the
/// whole domain would put most of its energy away from the interface and
/// make the quotient scale like `h`.
pub fn trace_inverse_estimate(ops: &EnergyOperators, v_range: std::ops::Range<usize>, n: usize, probes: usize, seed: u64) -> f64 {
    let t = &ops.gram.strain_trace_h;
    let support: Vec<usize> = v_range
        .filter(|&i| (t.indptr[i]..t.indptr[i + 1]).any(|k| t.data[k] != 0.0))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: f64 = 0.0;
    for _ in 0..probes {
        let mut y = vec![0.0; n];
        for &i in &support {
            y[i] = rng.random_range(-1.0..1.0);
        }
        let den = ops.viscous.quad(&y, &y) / (2.0 * ops.mu_f);
        if den > 0.0 {
            best = best.max(ops.gram.strain_trace_h.quad(&y, &y) / den);
        }
    }
    best
}

pub fn check_trace_inverse(coarse: &Problem, fine: &Problem, probes: usize, seed: u64) -> TheoremCheckResult {
    let est = |p: &Problem| {
        let ops = p.energy_operators(p.config.tau);
        trace_inverse_estimate(&ops, p.dofs.range(Field::V), p.n_dofs(), probes, seed)
    };
    let (a, b) = (est(coarse), est(fine));
    let change = (b / a - 1.0).abs();
    let mut r = TheoremCheckResult::new("trace_inverse")
        .measure("coarse", a)
        .measure("fine", b)
        .measure("relative_change", change)
        .threshold("relative_change_max", 0.3);
    r.seed = Some(seed);
    r.passed = a.is_finite() && b.is_finite() && change < 0.3;
    r
}

/// Random state satisfying the constraints.
pub fn random_state(sys: &BlockSystem, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    scaled_probe(sys, &sys.monolithic, &mut rng)
}

/// All checks on a config: parameter constraints, a short forced energy
/// run, the splitting identities, and the scans on the config mesh and one
/// refinement.
pub fn run_audit(config: &ScenarioConfig, seed: u64) -> Result<Vec<TheoremCheckResult>> {
    let problem = Problem::new(config)?;
    let h = problem.mesh.max_diameter();
    let tau = config.tau;
    let mut out = Vec::new();
    for theta in [0u8, 1] {
        out.push(check_parameter_constraints(&config.phys_params, &config.nitsche_params, theta, tau, h));
    }
    let mono = problem.stepper(SchemeKind::Monolithic, tau)?;
    let ops = problem.energy_operators(tau);
    let steps = config.n_steps().min(10);
    let run = integrate(&problem, &mono, &ops, vec![0.0; problem.n_dofs()], steps, &[])?;
    out.push(check_energy_inequality(&run.log, run.initial_energy, tau, 0.1, 10.0));
    for theta in [0u8, 1] {
        let sys = problem.system(tau, theta)?;
        let kind = if theta == 0 { SchemeKind::AlgoA } else { SchemeKind::AlgoB };
        let prev = random_state(&sys, seed);
        let f = problem.forcing.at(tau);
        let stepper = crate::schemes::Stepper::new(sys, kind);
        let y = stepper.step_algorithm(&prev, &f)?;
        let mut r = check_imex_identity(&stepper.system, &prev, &y, &f);
        r.seed = Some(seed);
        out.push(r);
        out.push(check_psd_probe(&stepper.system, 200, seed));
    }
    let mut fine_cfg = config.clone();
    fine_cfg.mesh_h = config.mesh_h / 2.0;
    let fine = Problem::new(&fine_cfg)?;
    out.push(check_spectral_scan(&problem.system(tau, 1)?, &fine.system(tau, 1)?, 200, seed));
    out.push(check_trace_inverse(&problem, &fine, 100, seed));
    Ok(out)
}
