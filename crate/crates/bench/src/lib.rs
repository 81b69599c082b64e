//! Fixtures shared by the benchmarks: artery problems at a given mesh size
//! with a state after a few forced steps.

use sbl_core::scenarios::{Problem, ScenarioConfig};
use sbl_core::{ElementPreset, SchemeKind};

pub fn artery(h: f64, preset: ElementPreset) -> Problem {
    let mut cfg = ScenarioConfig::artery_default();
    cfg.mesh_h = h;
    cfg.element_preset = preset;
    Problem::new(&cfg).expect("artery problem")
}

/// State after `steps` monolithic steps of the inlet pulse.
pub fn warm_state(problem: &Problem, tau: f64, steps: usize) -> Vec<f64> {
    let st = problem.stepper(SchemeKind::Monolithic, tau).expect("stepper");
    let mut y = vec![0.0; problem.n_dofs()];
    for k in 1..=steps {
        y = st.step(&y, &problem.forcing.at(k as f64 * tau)).expect("step").y;
    }
    y
}
