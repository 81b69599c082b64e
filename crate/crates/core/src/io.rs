//! File formats: the plain-text mesh format, legacy ASCII VTK snapshots,
//! CSV tables with a metadata line, MatrixMarket dumps and JSON configs.
//!
//! Floats are written with Rust's shortest round-trip formatting (`{:e}`),
//! which is locale independent; the mesh format uses 17 significant digits.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fem::{DofMap, Field};
use crate::mesh::{BoundaryLabel, Mesh2D, Region};
use crate::scenarios::{ScenarioConfig, StepLog};
use crate::sparsela::CsrMatrix;

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, s: &str) -> Result<()> {
    fs::write(path, s).map_err(|e| io_err(path, e))
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

// ---------------------------------------------------------------- mesh

pub fn mesh_to_string(m: &Mesh2D) -> String {
    let mut s = String::from("mesh2d v1\n");
    let _ = writeln!(s, "{}", m.n_vertices());
    for v in &m.vertices {
        let _ = writeln!(s, "{:.16e} {:.16e}", v[0], v[1]);
    }
    let _ = writeln!(s, "{}", m.n_triangles());
    for (t, r) in m.triangles.iter().zip(&m.regions) {
        let _ = writeln!(s, "{} {} {} {}", t[0], t[1], t[2], r.tag());
    }
    let _ = writeln!(s, "{}", m.boundary.len());
    for b in &m.boundary {
        let _ = writeln!(s, "{} {} {}", b.v[0], b.v[1], b.label.name());
    }
    s
}

pub fn mesh_from_str(text: &str) -> Result<Mesh2D> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty());
    let perr = |line: usize, msg: &str| Error::Parse { line, msg: msg.to_string() };
    let mut next = |what: &str| lines.next().ok_or_else(|| perr(0, &format!("unexpected end of file, expected {what}")));
    let (ln, header) = next("header")?;
    if header != "mesh2d v1" {
        return Err(perr(ln, "expected header `mesh2d v1`"));
    }
    let count = |(ln, l): (usize, &str)| l.parse::<usize>().map_err(|_| perr(ln, "expected a count"));
    let nv = count(next("vertex count")?)?;
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (ln, l) = next("vertex")?;
        let v: Vec<f64> = l.split_whitespace().map(str::parse).collect::<std::result::Result<_, _>>().map_err(|_| perr(ln, "bad coordinate"))?;
        if v.len() != 2 {
            return Err(perr(ln, "vertex needs two coordinates"));
        }
        vertices.push([v[0], v[1]]);
    }
    let nt = count(next("triangle count")?)?;
    let mut triangles = Vec::with_capacity(nt);
    let mut regions = Vec::with_capacity(nt);
    for _ in 0..nt {
        let (ln, l) = next("triangle")?;
        let v: Vec<usize> = l.split_whitespace().map(str::parse).collect::<std::result::Result<_, _>>().map_err(|_| perr(ln, "bad triangle"))?;
        if v.len() != 4 {
            return Err(perr(ln, "triangle needs three vertices and a region tag"));
        }
        triangles.push([v[0], v[1], v[2]]);
        regions.push(Region::from_tag(v[3] as u8).ok_or_else(|| perr(ln, "unknown region tag"))?);
    }
    let nb = count(next("boundary edge count")?)?;
    let mut boundary = Vec::with_capacity(nb);
    for _ in 0..nb {
        let (ln, l) = next("boundary edge")?;
        let f: Vec<&str> = l.split_whitespace().collect();
        if f.len() != 3 {
            return Err(perr(ln, "boundary edge needs two vertices and a label"));
        }
        let a = f[0].parse().map_err(|_| perr(ln, "bad vertex index"))?;
        let b = f[1].parse().map_err(|_| perr(ln, "bad vertex index"))?;
        let label = BoundaryLabel::from_name(f[2]).ok_or_else(|| perr(ln, &format!("unknown label `{}`", f[2])))?;
        boundary.push(([a, b], label));
    }
    Mesh2D::new(vertices, triangles, regions, boundary)
}

pub fn write_mesh(m: &Mesh2D, path: &Path) -> Result<()> {
    write_file(path, &mesh_to_string(m))
}

pub fn read_mesh(path: &Path) -> Result<Mesh2D> {
    mesh_from_str(&read_file(path)?)
}

// ---------------------------------------------------------------- vtk

#[derive(Debug, Clone, PartialEq)]
pub enum PointData {
    Scalar(Vec<f64>),
    Vector(Vec<[f64; 2]>),
}

impl PointData {
    fn len(&self) -> usize {
        match self {
            PointData::Scalar(v) => v.len(),
            PointData::Vector(v) => v.len(),
        }
    }
}

/// Nodal fields on the mesh vertices at one time.
#[derive(Debug, Clone)]
pub struct Snapshot<'a> {
    pub time: f64,
    pub mesh: &'a Mesh2D,
    pub fields: Vec<(String, PointData)>,
}

impl<'a> Snapshot<'a> {
    /// Vertex values of all six fields; zero outside each field's region.
    pub fn from_state(mesh: &'a Mesh2D, dofs: &DofMap, time: f64, y: &[f64]) -> Result<Snapshot<'a>> {
        if y.len() != dofs.n_dofs {
            return Err(Error::Dimension(format!("state has {} entries, dof map {}", y.len(), dofs.n_dofs)));
        }
        let mut fields = Vec::new();
        for f in Field::ALL {
            let c0 = dofs.vertex_values(f, y, 0);
            let data = if f.comps() == 1 {
                PointData::Scalar(c0.into_iter().map(|v| v.unwrap_or(0.0)).collect())
            } else {
                let c1 = dofs.vertex_values(f, y, 1);
                PointData::Vector(c0.into_iter().zip(c1).map(|(a, b)| [a.unwrap_or(0.0), b.unwrap_or(0.0)]).collect())
            };
            fields.push((f.name().to_string(), data));
        }
        Ok(Snapshot { time, mesh, fields })
    }
}

pub fn vtk_to_string(s: &Snapshot) -> Result<String> {
    if !(s.time >= 0.0) {
        return Err(Error::Validation(vec![format!("snapshot time must be non-negative, got {}", s.time)]));
    }
    let nv = s.mesh.n_vertices();
    let mut errs = Vec::new();
    for (name, d) in &s.fields {
        if name.is_empty() || name.contains(char::is_whitespace) {
            errs.push(format!("field name `{name}` must be non-empty without whitespace"));
        }
        if d.len() != nv {
            errs.push(format!("field `{name}` has {} values for {nv} points", d.len()));
        }
    }
    if !errs.is_empty() {
        return Err(Error::Validation(errs));
    }
    let mut o = String::new();
    let _ = writeln!(o, "# vtk DataFile Version 3.0\nt = {:e}\nASCII\nDATASET UNSTRUCTURED_GRID", s.time);
    let _ = writeln!(o, "POINTS {nv} double");
    for v in &s.mesh.vertices {
        let _ = writeln!(o, "{:e} {:e} 0", v[0], v[1]);
    }
    let nt = s.mesh.n_triangles();
    let _ = writeln!(o, "CELLS {nt} {}", 4 * nt);
    for t in &s.mesh.triangles {
        let _ = writeln!(o, "3 {} {} {}", t[0], t[1], t[2]);
    }
    let _ = writeln!(o, "CELL_TYPES {nt}");
    for _ in 0..nt {
        o.push_str("5\n");
    }
    let _ = writeln!(o, "CELL_DATA {nt}\nSCALARS region int 1\nLOOKUP_TABLE default");
    for r in &s.mesh.regions {
        let _ = writeln!(o, "{}", r.tag());
    }
    let _ = writeln!(o, "POINT_DATA {nv}");
    for (name, d) in &s.fields {
        match d {
            PointData::Scalar(v) => {
                let _ = writeln!(o, "SCALARS {name} double 1\nLOOKUP_TABLE default");
                for x in v {
                    let _ = writeln!(o, "{x:e}");
                }
            }
            PointData::Vector(v) => {
                let _ = writeln!(o, "VECTORS {name} double");
                for x in v {
                    let _ = writeln!(o, "{:e} {:e} 0", x[0], x[1]);
                }
            }
        }
    }
    Ok(o)
}

pub fn write_vtk(s: &Snapshot, path: &Path) -> Result<()> {
    write_file(path, &vtk_to_string(s)?)
}

/// Point coordinates of a legacy VTK file written by [`write_vtk`].
pub fn read_vtk_points(text: &str) -> Result<Vec<[f64; 2]>> {
    let mut lines = text.lines().enumerate();
    while let Some((i, l)) = lines.next() {
        if let Some(rest) = l.strip_prefix("POINTS ") {
            let n: usize = rest.split_whitespace().next().and_then(|t| t.parse().ok()).ok_or(Error::Parse { line: i + 1, msg: "bad POINTS".into() })?;
            let mut pts = Vec::with_capacity(n);
            for _ in 0..n {
                let (j, l) = lines.next().ok_or(Error::Parse { line: i + 1, msg: "truncated POINTS".into() })?;
                let v: Vec<f64> = l.split_whitespace().map(str::parse).collect::<std::result::Result<_, _>>().map_err(|_| Error::Parse { line: j + 1, msg: "bad point".into() })?;
                if v.len() < 2 {
                    return Err(Error::Parse { line: j + 1, msg: "bad point".into() });
                }
                pts.push([v[0], v[1]]);
            }
            return Ok(pts);
        }
    }
    Err(Error::Parse { line: 0, msg: "no POINTS section".into() })
}

// ---------------------------------------------------------------- tables

/// Provenance written as the first line of every table.
#[derive(Debug, Clone, PartialEq)]
pub struct Metadata {
    pub git_rev: String,
    pub config_hash: String,
    pub tau_ref: Option<f64>,
}

impl Metadata {
    pub fn new(config: &ScenarioConfig, tau_ref: Option<f64>) -> Metadata {
        Metadata { git_rev: git_revision(), config_hash: config_hash(config), tau_ref }
    }

    pub fn line(&self) -> String {
        let tau = self.tau_ref.map_or("none".to_string(), |t| format!("{t:e}"));
        format!("# git-rev={} config-hash={} tau_ref={}", self.git_rev, self.config_hash, tau)
    }
}

/// Short SHA-256 of the canonical JSON form of a config.
pub fn config_hash(config: &ScenarioConfig) -> String {
    let json = serde_json::to_string(config).unwrap_or_default();
    let digest = Sha256::digest(json.as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

fn git_revision() -> String {
    if let Ok(r) = std::env::var("SBL_GIT_REV") {
        return r;
    }
    std::process::Command::new("git")
        .args(["rev-parse", "--short", "HEAD"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

/// CSV with a metadata line, a header and numeric rows; `NaN` marks empty
/// cells and is written as an empty field.
pub fn table_to_string(meta: &Metadata, headers: &[&str], rows: &[Vec<f64>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(headers).map_err(|e| Error::Solver(e.to_string()))?;
    for r in rows {
        if r.len() != headers.len() {
            return Err(Error::Dimension(format!("row has {} cells for {} columns", r.len(), headers.len())));
        }
        w.write_record(r.iter().map(|v| if v.is_nan() { String::new() } else { format!("{v:e}") }))
            .map_err(|e| Error::Solver(e.to_string()))?;
    }
    let body = String::from_utf8(w.into_inner().map_err(|e| Error::Solver(e.to_string()))?).expect("ascii");
    Ok(format!("{}\n{body}", meta.line()))
}

pub fn write_table(path: &Path, meta: &Metadata, headers: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    write_file(path, &table_to_string(meta, headers, rows)?)
}

/// Parses a table written by [`write_table`]: `(metadata line, headers, rows)`.
pub fn table_from_str(text: &str) -> Result<(String, Vec<String>, Vec<Vec<f64>>)> {
    let (meta, body) = text.split_once('\n').ok_or(Error::Parse { line: 1, msg: "empty table".into() })?;
    if !meta.starts_with('#') {
        return Err(Error::Parse { line: 1, msg: "missing metadata line".into() });
    }
    let mut r = csv::Reader::from_reader(body.as_bytes());
    let headers = r.headers().map_err(|e| Error::Parse { line: 2, msg: e.to_string() })?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse { line: i + 3, msg: e.to_string() })?;
        let row = rec
            .iter()
            .map(|c| if c.is_empty() { Ok(f64::NAN) } else { c.parse::<f64>() })
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse { line: i + 3, msg: e.to_string() })?;
        rows.push(row);
    }
    Ok((meta.to_string(), headers, rows))
}

pub fn read_table(path: &Path) -> Result<(String, Vec<String>, Vec<Vec<f64>>)> {
    table_from_str(&read_file(path)?)
}

pub const STEP_LOG_COLUMNS: [&str; 10] = [
    "n",
    "t",
    "E_f",
    "E_p",
    "interfaceMisfitNormal",
    "interfaceMisfitTangential",
    "gmresIters",
    "storage",
    "work",
    "dissipation",
];

pub fn write_step_log(path: &Path, meta: &Metadata, log: &[StepLog]) -> Result<()> {
    let rows: Vec<Vec<f64>> = log
        .iter()
        .map(|s| {
            vec![
                s.n as f64,
                s.t,
                s.e_f,
                s.e_p,
                s.misfit_normal,
                s.misfit_tangential,
                s.gmres_iters.map_or(f64::NAN, |k| k as f64),
                s.storage,
                s.work,
                s.dissipation,
            ]
        })
        .collect();
    write_table(path, meta, &STEP_LOG_COLUMNS, &rows)
}

pub fn matrix_market_string(a: &CsrMatrix) -> String {
    let mut s = String::from("%%MatrixMarket matrix coordinate real general\n");
    let _ = writeln!(s, "{} {} {}", a.nrows, a.ncols, a.nnz());
    for i in 0..a.nrows {
        for (j, v) in a.row(i) {
            let _ = writeln!(s, "{} {} {v:e}", i + 1, j + 1);
        }
    }
    s
}

pub fn write_matrix_market(a: &CsrMatrix, path: &Path) -> Result<()> {
    write_file(path, &matrix_market_string(a))
}

// ---------------------------------------------------------------- config

const TOP_LEVEL: [(&str, bool); 15] = [
    ("scenario", true),
    ("units", true),
    ("geometry", true),
    ("physParams", true),
    ("nitscheParams", true),
    ("forcing", true),
    ("tau", true),
    ("tFinal", true),
    ("meshH", true),
    ("elementPreset", true),
    ("scheme", true),
    ("allowUnstable", false),
    ("maxSteps", false),
    ("output", false),
    ("study", false),
];

const PHYS_REQUIRED: [&str; 8] = ["rho_f", "mu_f", "rho_p", "mu_p", "lambda_p", "kappa", "s0", "alpha"];
const PHYS_OPTIONAL: [&str; 1] = ["xi"];
const NITSCHE_REQUIRED: [&str; 4] = ["gamma_f", "gamma_stab", "varsigma", "tangential"];
const NITSCHE_OPTIONAL: [&str; 3] = ["gamma_stab_prime", "gamma_p", "gamma_q"];

fn check_object(v: &Value, path: &str, required: &[&str], optional: &[&str], numeric: &[&str], errs: &mut Vec<String>) {
    let Some(obj) = v.as_object() else {
        errs.push(format!("{path} must be an object"));
        return;
    };
    for k in required {
        if !obj.contains_key(*k) {
            errs.push(format!("{path}.{k} is missing"));
        }
    }
    for (k, val) in obj {
        if !required.contains(&k.as_str()) && !optional.contains(&k.as_str()) {
            errs.push(format!("{path}.{k} is not a known key"));
        } else if numeric.contains(&k.as_str()) && !val.is_number() {
            errs.push(format!("{path}.{k} must be a number"));
        }
    }
}

/// Structural checks on the raw JSON, reporting every offending key path.
pub fn validate_config_value(v: &Value) -> Vec<String> {
    let mut errs = Vec::new();
    let Some(obj) = v.as_object() else {
        return vec!["config must be a JSON object".into()];
    };
    for (k, required) in TOP_LEVEL {
        if required && !obj.contains_key(k) {
            errs.push(format!("{k} is missing"));
        }
    }
    for k in obj.keys() {
        if !TOP_LEVEL.iter().any(|(t, _)| t == k) {
            errs.push(format!("{k} is not a known key"));
        }
    }
    for k in ["tau", "tFinal", "meshH"] {
        if obj.get(k).is_some_and(|x| !x.is_number()) {
            errs.push(format!("{k} must be a number"));
        }
    }
    if let Some(p) = obj.get("physParams") {
        let numeric: Vec<&str> = PHYS_REQUIRED.iter().chain(&PHYS_OPTIONAL).copied().filter(|k| *k != "kappa").collect();
        check_object(p, "physParams", &PHYS_REQUIRED, &PHYS_OPTIONAL, &numeric, &mut errs);
        if let Some(k) = p.get("kappa") {
            let ok = k.is_number()
                || k.as_array().is_some_and(|rows| {
                    rows.len() == 2 && rows.iter().all(|r| r.as_array().is_some_and(|c| c.len() == 2 && c.iter().all(Value::is_number)))
                });
            if !ok {
                errs.push("physParams.kappa must be a number or a 2x2 array".into());
            }
        }
    }
    if let Some(n) = obj.get("nitscheParams") {
        let numeric: Vec<&str> = NITSCHE_REQUIRED.iter().chain(&NITSCHE_OPTIONAL).copied().filter(|k| *k != "tangential").collect();
        check_object(n, "nitscheParams", &NITSCHE_REQUIRED, &NITSCHE_OPTIONAL, &numeric, &mut errs);
        if let Some(t) = n.get("tangential") {
            match t.get("kind").and_then(Value::as_str) {
                Some("no_slip") => {}
                Some("bjs") => {
                    if !t.get("beta").is_some_and(Value::is_number) {
                        errs.push("nitscheParams.tangential.beta is missing".into());
                    }
                }
                _ => errs.push("nitscheParams.tangential.kind must be `no_slip` or `bjs`".into()),
            }
        }
    }
    errs
}

/// Parses and validates a config; errors list every offending key.
pub fn parse_config(text: &str) -> Result<ScenarioConfig> {
    let v: Value = serde_json::from_str(text)?;
    let errs = validate_config_value(&v);
    if !errs.is_empty() {
        return Err(Error::Validation(errs));
    }
    let cfg: ScenarioConfig = serde_json::from_value(v).map_err(|e| Error::Validation(vec![e.to_string()]))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn read_config(path: &Path) -> Result<ScenarioConfig> {
    parse_config(&read_file(path)?)
}

pub fn config_to_string(cfg: &ScenarioConfig) -> String {
    serde_json::to_string_pretty(cfg).expect("config serializes")
}
