//! Drivers behind the CLI subcommands, plus output formatting.

use std::io;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::config::{ConfigError, RunConfig};
use crate::expr::Expr;
use crate::koopman::{
    proximity_oracle, trajectory_error, EigenResidual, KoopmanError, ProximityAnalysis,
    ProximityReport, Tolerances,
};
use crate::space::{Domain, QuadratureSpace, SpaceError};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Numerical(#[from] KoopmanError),
    #[error("internal consistency check failed: {0}")]
    Consistency(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl RunError {
    /// 2 configuration/input, 3 numerical failure, 4 internal inconsistency.
    pub fn exit_code(&self) -> u8 {
        match self {
            RunError::Config(_) | RunError::Io(_) => 2,
            RunError::Numerical(KoopmanError::Space(
                SpaceError::Csv(_) | SpaceError::Io(_) | SpaceError::InvalidSnapshots(_),
            )) => 2,
            RunError::Numerical(_) => 3,
            RunError::Consistency(_) => 4,
        }
    }
}

impl From<SpaceError> for RunError {
    fn from(e: SpaceError) -> Self {
        RunError::Numerical(KoopmanError::Space(e))
    }
}

/// A named system shipped with the tool.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BuiltinSystem {
    pub name: &'static str,
    pub state_dim: usize,
    pub domain: &'static [[f64; 2]],
    pub dynamics: &'static [&'static str],
}

/// Planar map with a linear first coordinate and a nonlinear second one,
/// on `[-1, 1]²`.
pub const EXAMPLE_SEC7: BuiltinSystem = BuiltinSystem {
    name: "example_sec7",
    state_dim: 2,
    domain: &[[-1.0, 1.0], [-1.0, 1.0]],
    dynamics: &["0.9*x1", "0.4*(sin(x2)+x1^2)+0.01*x2^2"],
};

pub fn builtin_system(name: &str) -> Option<BuiltinSystem> {
    match name {
        "example_sec7" => Some(EXAMPLE_SEC7),
        _ => None,
    }
}

/// The three dictionaries compared on [`EXAMPLE_SEC7`].
pub const SEC7_SUBSPACES: [(&str, &[&str]); 3] = [
    ("S1", &["1", "x1", "x1^2"]),
    ("S2", &["1", "x1", "x2", "x1^2"]),
    ("S3", &["1", "x1", "x2", "x1^2", "x2^2"]),
];

impl BuiltinSystem {
    pub fn domain(&self) -> Domain {
        Domain::new(self.domain.iter().map(|[a, b]| (*a, *b)).collect())
            .expect("valid built-in domain")
    }

    pub fn dynamics(&self) -> crate::expr::DynamicsMap {
        crate::expr::DynamicsMap::parse(self.dynamics).expect("valid built-in dynamics")
    }
}

pub fn parse_atoms(src: &[&str], state_dim: usize) -> Vec<Expr> {
    src.iter()
        .map(|s| Expr::parse(s, state_dim).expect("valid built-in atom"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableRow {
    pub subspace: String,
    pub proximity: f64,
}

/// Proximity of `S1`, `S2`, `S3` on the built-in planar system.
pub fn table1(order: usize, tol: &Tolerances) -> Result<Vec<TableRow>, RunError> {
    let sys = EXAMPLE_SEC7;
    let space = QuadratureSpace::new(sys.domain(), order)?;
    let map = sys.dynamics();
    SEC7_SUBSPACES
        .iter()
        .map(|(name, atoms)| {
            let a = ProximityAnalysis::compute(&parse_atoms(atoms, 2), Some(&map), &space, tol)?;
            Ok(TableRow {
                subspace: name.to_string(),
                proximity: a.proximity(),
            })
        })
        .collect()
}

pub fn analyze(cfg: &RunConfig) -> Result<ProximityAnalysis, RunError> {
    let space = cfg.space()?;
    Ok(ProximityAnalysis::compute(
        &cfg.dictionary,
        cfg.dynamics.as_ref(),
        space.as_ref(),
        &cfg.tolerances,
    )?)
}

pub fn run_proximity(cfg: &RunConfig) -> Result<ProximityReport, RunError> {
    Ok(analyze(cfg)?.report()?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub closed_form: f64,
    pub oracle_max: f64,
    pub sampled_max: f64,
    pub gap: f64,
    pub argmax_coeffs: Vec<f64>,
    pub n_samples: usize,
    pub seed: u64,
    pub skipped_samples: usize,
    pub violations: usize,
}

/// Sampling lower bound against the closed form. Fails with
/// [`RunError::Consistency`] if any evaluated function exceeds it by more than 1e-8.
pub fn run_oracle(cfg: &RunConfig) -> Result<OracleReport, RunError> {
    let analysis = analyze(cfg)?;
    let closed = analysis.proximity();
    let bound = closed + 1e-8;
    let o = proximity_oracle(&analysis, cfg.oracle.n_samples, cfg.oracle.seed, bound);
    let report = OracleReport {
        closed_form: closed,
        oracle_max: o.oracle_max,
        sampled_max: o.sampled_max,
        gap: closed - o.oracle_max,
        argmax_coeffs: o.argmax.coeffs,
        n_samples: cfg.oracle.n_samples,
        seed: cfg.oracle.seed,
        skipped_samples: o.skipped,
        violations: o.violations,
    };
    if report.oracle_max > bound || report.violations > 0 {
        return Err(RunError::Consistency(format!(
            "sampled relative error {} exceeds closed form {} ({} violations)",
            report.oracle_max, closed, report.violations
        )));
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualTable {
    pub proximity: f64,
    pub restricted_norm: f64,
    pub rows: Vec<EigenResidual>,
}

impl ResidualTable {
    pub fn violations(&self) -> usize {
        self.rows
            .iter()
            .filter(|r| r.residual > r.bound + 1e-8)
            .count()
    }
}

pub fn run_residuals(cfg: &RunConfig) -> Result<ResidualTable, RunError> {
    let analysis = analyze(cfg)?;
    Ok(ResidualTable {
        proximity: analysis.proximity(),
        restricted_norm: analysis.restricted_norm()?,
        rows: analysis.residuals()?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepStats {
    pub k: usize,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictOutput {
    pub sampling_seed: u64,
    pub n_trajectories: usize,
    pub horizon: usize,
    /// Trajectories dropped because the dictionary vanished along them.
    pub excluded: usize,
    pub steps: Vec<StepStats>,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Initial conditions drawn uniformly from `domain` with a seeded generator.
pub fn sample_initial_conditions(domain: &Domain, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            domain
                .bounds()
                .iter()
                .map(|&(a, b)| rng.random_range(a..=b))
                .collect()
        })
        .collect()
}

pub fn run_predict(cfg: &RunConfig) -> Result<PredictOutput, RunError> {
    let map = cfg.dynamics.as_ref().ok_or_else(|| {
        ConfigError::Schema("`predict` needs `dynamics` to simulate trajectories".into())
    })?;
    let domain = cfg.domain.as_ref().ok_or_else(|| {
        ConfigError::Schema("`predict` needs `domain` to sample initial conditions".into())
    })?;
    let exp = cfg.experiment;
    if exp.horizon == 0 {
        return Ok(PredictOutput {
            sampling_seed: exp.sampling_seed,
            n_trajectories: exp.n_trajectories,
            horizon: 0,
            excluded: 0,
            steps: Vec::new(),
        });
    }
    let space = cfg.space()?;
    let model =
        crate::koopman::build_model(&cfg.dictionary, Some(map), space.as_ref(), &cfg.tolerances)?;
    let starts = sample_initial_conditions(domain, exp.n_trajectories, exp.sampling_seed);
    let mut per_step: Vec<Vec<f64>> = vec![Vec::with_capacity(starts.len()); exp.horizon];
    let mut excluded = 0;
    for x0 in &starts {
        match trajectory_error(&model, map, x0, exp.horizon) {
            Ok(errs) => {
                for (slot, e) in per_step.iter_mut().zip(errs) {
                    slot.push(e);
                }
            }
            Err(KoopmanError::ZeroNorm { .. }) => excluded += 1,
            Err(e) => return Err(e.into()),
        }
    }
    let steps = per_step
        .into_iter()
        .enumerate()
        .filter(|(_, v)| !v.is_empty())
        .map(|(i, mut v)| {
            v.sort_by(|a, b| a.total_cmp(b));
            StepStats {
                k: i + 1,
                median: quantile(&v, 0.5),
                q25: quantile(&v, 0.25),
                q75: quantile(&v, 0.75),
                min: v[0],
                max: v[v.len() - 1],
            }
        })
        .collect();
    Ok(PredictOutput {
        sampling_seed: exp.sampling_seed,
        n_trajectories: exp.n_trajectories,
        horizon: exp.horizon,
        excluded,
        steps,
    })
}

/// IEEE double with 17 significant digits; non-finite values as `NaN`/`inf`.
pub fn fmt17(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

/// Pretty JSON with every float written to 17 significant digits.
pub fn to_json17<T: Serialize>(value: &T) -> String {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, Sig17::default());
    value.serialize(&mut ser).expect("in-memory serialization");
    out.push(b'\n');
    String::from_utf8(out).expect("JSON is UTF-8")
}

#[derive(Default)]
struct Sig17 {
    inner: serde_json::ser::PrettyFormatter<'static>,
}

impl serde_json::ser::Formatter for Sig17 {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        writer.write_all(fmt17(value).as_bytes())
    }

    fn begin_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.begin_array(w)
    }

    fn end_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_array(w)
    }

    fn begin_array_value<W: ?Sized + io::Write>(
        &mut self,
        w: &mut W,
        first: bool,
    ) -> io::Result<()> {
        self.inner.begin_array_value(w, first)
    }

    fn end_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_array_value(w)
    }

    fn begin_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.begin_object(w)
    }

    fn end_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_object(w)
    }

    fn begin_object_key<W: ?Sized + io::Write>(
        &mut self,
        w: &mut W,
        first: bool,
    ) -> io::Result<()> {
        self.inner.begin_object_key(w, first)
    }

    fn begin_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.begin_object_value(w)
    }

    fn end_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_object_value(w)
    }
}

pub fn table1_csv(rows: &[TableRow]) -> String {
    let mut s = String::from("subspace,proximity\n");
    for r in rows {
        s.push_str(&format!("{},{}\n", r.subspace, fmt17(r.proximity)));
    }
    s
}

pub fn residuals_csv(table: &ResidualTable) -> String {
    let mut s = String::from("lambda_re,lambda_im,residual,bound\n");
    for r in &table.rows {
        s.push_str(&format!(
            "{},{},{},{}\n",
            fmt17(r.lambda.re),
            fmt17(r.lambda.im),
            fmt17(r.residual),
            fmt17(r.bound)
        ));
    }
    s
}

pub fn predict_csv(out: &PredictOutput) -> String {
    let mut s = format!(
        "# sampling_seed={}\nk,median,q25,q75,min,max\n",
        out.sampling_seed
    );
    for st in &out.steps {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            st.k,
            fmt17(st.median),
            fmt17(st.q25),
            fmt17(st.q75),
            fmt17(st.min),
            fmt17(st.max)
        ));
    }
    s
}
