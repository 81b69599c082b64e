//! `sbl`: runs the configured scenarios, the two studies and the audit.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use sbl_core::io::{self, Metadata};
use sbl_core::scenarios::{self, ScenarioConfig, INDICATOR_NAMES};
use sbl_core::{Error, SchemeKind};

#[derive(Parser)]
#[command(name = "sbl", version, about = "Stokes-Biot solver with Nitsche coupling and loosely coupled splittings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate a scenario and write step logs, snapshots and profiles.
    Run(Common),
    /// Temporal convergence of the monolithic scheme and the theta = 0 splitting.
    Convergence(Common),
    /// Mean GMRES iterations with and without the splitting preconditioner.
    Precond {
        #[command(flatten)]
        common: Common,
        /// Also run GMRES on the unscaled system (slow, usually hits the cap).
        #[arg(long)]
        raw: bool,
    },
    /// Runtime checks of the stability and splitting properties, as JSON.
    Audit {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

#[derive(Args)]
struct Common {
    config: PathBuf,
    #[arg(long)]
    mesh_h: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long, value_enum)]
    scheme: Option<Scheme>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Write the matrix of the first step solve in MatrixMarket format.
    #[arg(long)]
    dump_matrix: Option<PathBuf>,
    #[arg(long)]
    tau_ref: Option<f64>,
    #[arg(long, conflicts_with = "full_horizon")]
    max_steps: Option<usize>,
    /// Drop the configured step limit and integrate up to `tFinal`.
    #[arg(long)]
    full_horizon: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scheme {
    Monolithic,
    AlgoA,
    AlgoB,
    Preconditioned,
}

impl From<Scheme> for SchemeKind {
    fn from(s: Scheme) -> Self {
        match s {
            Scheme::Monolithic => SchemeKind::Monolithic,
            Scheme::AlgoA => SchemeKind::AlgoA,
            Scheme::AlgoB => SchemeKind::AlgoB,
            Scheme::Preconditioned => SchemeKind::Preconditioned,
        }
    }
}

impl Common {
    fn load(&self) -> sbl_core::Result<ScenarioConfig> {
        let mut cfg = io::read_config(&self.config)?;
        if let Some(h) = self.mesh_h {
            cfg.mesh_h = h;
        }
        if let Some(t) = self.tau {
            cfg.tau = t;
        }
        if let Some(s) = self.scheme {
            cfg.scheme = s.into();
        }
        if let Some(n) = self.max_steps {
            cfg.max_steps = Some(n);
        }
        if self.full_horizon {
            cfg.max_steps = None;
        }
        if let Some(t) = self.tau_ref {
            cfg.study.get_or_insert_with(Default::default).tau_ref = Some(t);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn out_dir(&self) -> &Path {
        self.out_dir.as_deref().unwrap_or(Path::new("."))
    }

    fn dump(&self, cfg: &ScenarioConfig) -> sbl_core::Result<()> {
        let Some(path) = &self.dump_matrix else { return Ok(()) };
        let problem = scenarios::Problem::new(cfg)?;
        let sys = problem.system(cfg.tau, cfg.scheme.theta())?;
        let a = match cfg.scheme {
            SchemeKind::AlgoA | SchemeKind::AlgoB => &sys.loose,
            SchemeKind::Monolithic | SchemeKind::Preconditioned => &sys.monolithic,
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        io::write_matrix_market(a, path)?;
        info!("wrote {} x {} matrix to {}", a.nrows, a.ncols, path.display());
        Ok(())
    }
}

fn run(cli: Cli) -> sbl_core::Result<()> {
    match cli.command {
        Command::Run(c) => {
            let cfg = c.load()?;
            c.dump(&cfg)?;
            let summary = scenarios::run_scenario(&cfg, Some(c.out_dir()))?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
            if !summary.all_finite {
                return Err(Error::Solver("non-finite values in the solution".into()));
            }
        }
        Command::Convergence(c) => {
            let cfg = c.load()?;
            c.dump(&cfg)?;
            let rows = scenarios::run_convergence_study(&cfg, &[SchemeKind::Monolithic, SchemeKind::AlgoA])?;
            let meta = Metadata::new(&cfg, cfg.study.as_ref().and_then(|s| s.tau_ref));
            let mut headers = vec!["tau".to_string()];
            headers.extend(INDICATOR_NAMES.iter().map(|s| s.to_string()));
            headers.extend(INDICATOR_NAMES.iter().map(|s| format!("rate_{s}")));
            let headers: Vec<&str> = headers.iter().map(String::as_str).collect();
            std::fs::create_dir_all(c.out_dir())?;
            for kind in [SchemeKind::Monolithic, SchemeKind::AlgoA] {
                let table: Vec<Vec<f64>> = rows
                    .iter()
                    .filter(|r| r.scheme == kind)
                    .map(|r| {
                        let mut v = vec![r.tau];
                        v.extend(r.errors);
                        v.extend(r.rates.iter().map(|x| x.unwrap_or(f64::NAN)));
                        v
                    })
                    .collect();
                let path = c.out_dir().join(format!("convergence_{}.csv", kind.name()));
                io::write_table(&path, &meta, &headers, &table)?;
                info!("wrote {}", path.display());
            }
            println!("{}", serde_json::to_string_pretty(&rows)?);
        }
        Command::Precond { common: c, raw } => {
            let cfg = c.load()?;
            c.dump(&cfg)?;
            let rows = scenarios::run_preconditioner_study(&cfg, raw)?;
            let flag = |b: bool| if b { 1.0 } else { 0.0 };
            let table: Vec<Vec<f64>> = rows
                .iter()
                .map(|r| {
                    vec![
                        r.h,
                        r.tau,
                        r.n_dofs as f64,
                        r.mean_preconditioned,
                        r.mean_equilibrated,
                        r.mean_unpreconditioned,
                        flag(r.preconditioned_capped),
                        flag(r.equilibrated_capped),
                        flag(r.unpreconditioned_capped),
                    ]
                })
                .collect();
            let headers = [
                "h",
                "tau",
                "n_dofs",
                "mean_preconditioned",
                "mean_equilibrated",
                "mean_unpreconditioned",
                "preconditioned_capped",
                "equilibrated_capped",
                "unpreconditioned_capped",
            ];
            std::fs::create_dir_all(c.out_dir())?;
            let path = c.out_dir().join("precond.csv");
            io::write_table(&path, &Metadata::new(&cfg, None), &headers, &table)?;
            info!("wrote {}", path.display());
            println!("{}", serde_json::to_string_pretty(&rows)?);
        }
        Command::Audit { common: c, seed } => {
            let cfg = c.load()?;
            c.dump(&cfg)?;
            let report = sbl_core::audit::run_audit(&cfg, seed)?;
            let text = serde_json::to_string_pretty(&report)?;
            if let Some(dir) = &c.out_dir {
                std::fs::create_dir_all(dir)?;
                std::fs::write(dir.join("audit.json"), &text)?;
            }
            println!("{text}");
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Solver(_) | Error::Singular { .. } | Error::Dimension(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solver_errors_map_to_3_and_input_errors_to_2() {
        assert_eq!(exit_code(&Error::Solver("step 3".into())), 3);
        assert_eq!(exit_code(&Error::Singular { row: 0 }), 3);
        assert_eq!(exit_code(&Error::Validation(vec!["tau is missing".into()])), 2);
        assert_eq!(exit_code(&Error::Parameter("h".into())), 2);
        assert_eq!(exit_code(&Error::Infeasible("theta".into())), 2);
    }
}
