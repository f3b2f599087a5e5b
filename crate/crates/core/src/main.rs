use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use invprox::config::{ConfigError, Overrides, RunConfig};
use invprox::experiments::{self, fmt17, to_json17, RunError};
use invprox::{KoopmanError, Tolerances};

#[derive(Parser)]
#[command(
    name = "invprox",
    version,
    about = "Invariance proximity of function subspaces under the Koopman operator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Proximity, principal angles and witness for one dictionary (JSON).
    Proximity(Common),
    /// Proximity of the three reference subspaces on the built-in planar system.
    Table1(Common),
    /// Per-step prediction-error statistics over random trajectories.
    Predict(Common),
    /// Sampling lower bound checked against the closed form.
    Oracle(Common),
    /// Eigenpair residuals of the projected model and their bound.
    Residuals(Common),
}

#[derive(Args)]
struct Common {
    /// JSON run configuration (optional for `table1`).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory for output files; results go to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the oracle seed and the trajectory sampling seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the quadrature order.
    #[arg(long)]
    quad_order: Option<usize>,
    /// Overrides the rank tolerance.
    #[arg(long)]
    rank_tol: Option<f64>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            quad_order: self.quad_order,
            rank_tol: self.rank_tol,
        }
    }

    fn load(&self) -> Result<RunConfig, RunError> {
        let path = self
            .config
            .as_ref()
            .ok_or_else(|| ConfigError::Schema("`--config <path>` is required".into()))?;
        Ok(RunConfig::from_path(path, &self.overrides())?)
    }

    /// Writes `contents` to `<out>/<name>`, or to stdout without `--out`.
    fn emit(&self, name: &str, contents: &str) -> Result<(), RunError> {
        match &self.out {
            Some(dir) => write_file(dir, name, contents),
            None => {
                print!("{contents}");
                Ok(())
            }
        }
    }
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<(), RunError> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(name), contents)?;
    Ok(())
}

fn run(cli: &Cli) -> Result<(), RunError> {
    match &cli.command {
        Command::Proximity(c) => {
            let report = experiments::run_proximity(&c.load()?)?;
            for w in &report.diagnostics.warnings {
                eprintln!("warning: {w}");
            }
            c.emit("proximity.json", &to_json17(&report))
        }
        Command::Table1(c) => {
            let mut tol = Tolerances::default();
            let mut order = invprox::QuadratureSpace::DEFAULT_ORDER;
            if let Some(path) = &c.config {
                let cfg = RunConfig::from_path(path, &c.overrides())?;
                tol = cfg.tolerances;
                if let invprox::config::Backend::Quadrature { order: q } = cfg.backend {
                    order = q;
                }
            }
            if let Some(q) = c.quad_order {
                order = q;
            }
            if let Some(t) = c.rank_tol {
                tol.rank_tol = t;
            }
            if order == 0 || !(tol.rank_tol > 0.0 && tol.rank_tol < 1.0) {
                return Err(ConfigError::Schema(
                    "quadrature order and rank tolerance must be positive".into(),
                )
                .into());
            }
            let rows = experiments::table1(order, &tol)?;
            let csv = experiments::table1_csv(&rows);
            match &c.out {
                Some(dir) => {
                    for r in &rows {
                        println!("{}  {}", r.subspace, fmt17(r.proximity));
                    }
                    write_file(dir, "table1.csv", &csv)
                }
                None => {
                    print!("{csv}");
                    Ok(())
                }
            }
        }
        Command::Predict(c) => {
            let out = experiments::run_predict(&c.load()?)?;
            if out.excluded > 0 {
                eprintln!(
                    "warning: {} of {} trajectories excluded (dictionary vanished along the trajectory)",
                    out.excluded, out.n_trajectories
                );
            }
            match &c.out {
                Some(dir) => {
                    write_file(dir, "predict.csv", &experiments::predict_csv(&out))?;
                    write_file(dir, "predict.json", &to_json17(&out))
                }
                None => c.emit("predict.json", &to_json17(&out)),
            }
        }
        Command::Oracle(c) => {
            let report = experiments::run_oracle(&c.load()?)?;
            c.emit("oracle.json", &to_json17(&report))
        }
        Command::Residuals(c) => {
            let table = experiments::run_residuals(&c.load()?)?;
            c.emit("residuals.csv", &experiments::residuals_csv(&table))?;
            let bad = table.violations();
            if bad > 0 {
                return Err(RunError::Consistency(format!(
                    "{bad} residual(s) exceed the bound ‖K‖_S·I_K(S) = {}",
                    fmt17(table.restricted_norm * table.proximity)
                )));
            }
            Ok(())
        }
    }
}

fn error_kind(e: &RunError) -> &'static str {
    use invprox::GeometryError as G;
    match e {
        RunError::Numerical(KoopmanError::Geometry(g)) => match g {
            G::DegenerateSpace => "DegenerateSpace",
            G::NotPsd { .. } => "NotPSD",
            G::NonFinite => "NonFinite",
            _ => "Geometry",
        },
        RunError::Numerical(KoopmanError::Space(_)) => "Space",
        RunError::Numerical(KoopmanError::ZeroImage { .. }) => "ZeroImage",
        RunError::Numerical(KoopmanError::InconsistentSystem { .. }) => "InconsistentSystem",
        RunError::Numerical(_) => "Numerical",
        RunError::Config(_) | RunError::Io(_) => "Config",
        RunError::Consistency(_) => "Consistency",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = e.exit_code();
            if code == 3 {
                let payload = json!({ "error": error_kind(&e), "message": e.to_string() });
                eprintln!(
                    "{}",
                    serde_json::to_string_pretty(&payload).expect("serializable")
                );
            } else {
                eprintln!("error: {e}");
            }
            ExitCode::from(code)
        }
    }
}
