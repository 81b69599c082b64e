use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn sbl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sbl")).args(args).env("RUST_LOG", "warn").output().expect("binary runs")
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn small_artery(dir: &Path) -> PathBuf {
    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(config("artery.json")).unwrap()).unwrap();
    v["tFinal"] = 4e-4.into();
    v["output"]["snapshotTimes"] = serde_json::json!([2e-4]);
    v["study"]["tauList"] = serde_json::json!([2e-4, 1e-4]);
    v["study"]["hList"] = serde_json::json!([0.2]);
    let p = dir.join("small.json");
    std::fs::write(&p, v.to_string()).unwrap();
    p
}

#[test]
fn shipped_configs_parse_to_the_defaults() {
    use sbl_core::scenarios::ScenarioConfig;
    let a = sbl_core::io::read_config(&config("artery.json")).unwrap();
    assert_eq!(a, ScenarioConfig::artery_default());
    let r = sbl_core::io::read_config(&config("reservoir.json")).unwrap();
    assert_eq!(r, ScenarioConfig::reservoir_default());
}

#[test]
fn invalid_config_exits_with_2_and_names_every_key() {
    let dir = tempfile::tempdir().unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(config("artery.json")).unwrap()).unwrap();
    v["physParams"].as_object_mut().unwrap().remove("mu_f");
    v["tau"] = "fast".into();
    let p = dir.path().join("bad.json");
    std::fs::write(&p, v.to_string()).unwrap();
    let out = sbl(&["run", p.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("physParams.mu_f"), "{err}");
    assert!(err.contains("tau must be a number"), "{err}");
}

#[test]
fn bad_flags_and_missing_files_exit_with_2() {
    assert_eq!(sbl(&["run", "/no/such/config.json"]).status.code(), Some(2));
    assert_eq!(sbl(&["run", config("artery.json").to_str().unwrap(), "--scheme", "explicit"]).status.code(), Some(2));
    assert_eq!(sbl(&["frobnicate"]).status.code(), Some(2));
    let out = sbl(&["run", config("artery.json").to_str().unwrap(), "--tau", "-1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn run_writes_logs_snapshots_profiles_and_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_artery(dir.path());
    let out_dir = dir.path().join("out");
    let mtx = dir.path().join("dump/a.mtx");
    let out = sbl(&[
        "run",
        cfg.to_str().unwrap(),
        "--mesh-h",
        "0.2",
        "--scheme",
        "algo-a",
        "--out-dir",
        out_dir.to_str().unwrap(),
        "--dump-matrix",
        mtx.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["scheme"], "algo_a");
    assert_eq!(summary["steps"], 4);
    assert_eq!(summary["all_finite"], true);

    let steps = std::fs::read_to_string(out_dir.join("steps.csv")).unwrap();
    assert!(steps.starts_with("# git-rev="));
    assert_eq!(steps.lines().count(), 2 + 4);
    let names: Vec<String> = std::fs::read_dir(&out_dir).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    for prefix in ["snapshot_", "interface_displacement_", "intramural_flux_"] {
        assert!(names.iter().any(|n| n.starts_with(prefix)), "{prefix} missing from {names:?}");
    }
    let m = std::fs::read_to_string(&mtx).unwrap();
    assert!(m.starts_with("%%MatrixMarket matrix coordinate real general"));
}

#[test]
fn step_limit_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_artery(dir.path());
    let out = sbl(&["run", cfg.to_str().unwrap(), "--mesh-h", "0.2", "--max-steps", "2", "--out-dir", dir.path().to_str().unwrap()]);
    assert!(out.status.success());
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["steps"], 2);

    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&cfg).unwrap()).unwrap();
    v["maxSteps"] = 1.into();
    std::fs::write(&cfg, v.to_string()).unwrap();
    let out = sbl(&["run", cfg.to_str().unwrap(), "--mesh-h", "0.2", "--full-horizon", "--out-dir", dir.path().to_str().unwrap()]);
    assert!(out.status.success());
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["steps"], 4);
}

#[test]
fn studies_write_tables_with_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_artery(dir.path());
    let d = dir.path().to_str().unwrap();
    let out = sbl(&["convergence", cfg.to_str().unwrap(), "--mesh-h", "0.2", "--tau-ref", "5e-5", "--out-dir", d]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for kind in ["monolithic", "algo_a"] {
        let (meta, headers, rows) = sbl_core::io::read_table(&dir.path().join(format!("convergence_{kind}.csv"))).unwrap();
        assert!(meta.contains("tau_ref=5e-5"), "{meta}");
        assert_eq!(headers.len(), 9);
        assert_eq!(rows.len(), 2);
        assert!(rows[0][5].is_nan() && rows[1][5].is_finite());
    }

    let out = sbl(&["precond", cfg.to_str().unwrap(), "--out-dir", d]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (_, headers, rows) = sbl_core::io::read_table(&dir.path().join("precond.csv")).unwrap();
    assert_eq!(headers[3], "mean_preconditioned");
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r[3] > 0.0 && r[3] < r[4]));
}

#[test]
fn audit_emits_a_json_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = sbl(&["audit", config("artery.json").to_str().unwrap(), "--mesh-h", "0.2", "--out-dir", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: Vec<sbl_core::audit::TheoremCheckResult> = serde_json::from_slice(&out.stdout).unwrap();
    let names: Vec<&str> = report.iter().map(|r| r.name.as_str()).collect();
    for n in ["parameter_constraints", "energy_inequality", "imex_identity", "psd_probe", "spectral_scan", "trace_inverse"] {
        assert!(names.contains(&n), "{n} missing from {names:?}");
    }
    let file: Vec<sbl_core::audit::TheoremCheckResult> =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("audit.json")).unwrap()).unwrap();
    assert_eq!(file, report);
}

#[test]
fn schema_required_keys_match_the_validator() {
    let schema: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../schema/scenario.schema.json")).unwrap())
            .unwrap();
    let base: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(config("artery.json")).unwrap()).unwrap();
    let required = |v: &serde_json::Value| -> Vec<String> { v["required"].as_array().unwrap().iter().map(|k| k.as_str().unwrap().to_string()).collect() };
    let mut cases: Vec<(Option<&str>, String)> = required(&schema).into_iter().map(|k| (None, k)).collect();
    for section in ["physParams", "nitscheParams"] {
        cases.extend(required(&schema["properties"][section]).into_iter().map(|k| (Some(section), k)));
    }
    for (section, key) in cases {
        let mut v = base.clone();
        let obj = match section {
            Some(s) => v[s].as_object_mut().unwrap(),
            None => v.as_object_mut().unwrap(),
        };
        obj.remove(&key);
        let path = section.map_or(key.clone(), |s| format!("{s}.{key}"));
        let errs = sbl_core::io::validate_config_value(&v);
        assert!(errs.iter().any(|e| e.contains(&path)), "{path}: {errs:?}");
    }
}
