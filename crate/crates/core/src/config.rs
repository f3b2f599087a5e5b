//! JSON run configuration.
//!
//! ```json
//! {
//!   "state_dim": 2,
//!   "domain": [[-1, 1], [-1, 1]],
//!   "field": "real",
//!   "backend": { "quadrature": { "order": 20 } },
//!   "dynamics": ["0.9*x1", "0.4*(sin(x2)+x1^2)+0.01*x2^2"],
//!   "dictionary": ["1", "x1", "x1^2"],
//!   "tolerances": { "rank_tol": 1e-10, "quad_tol": 1e-9 },
//!   "oracle": { "n_samples": 10000, "seed": 42 },
//!   "experiment": { "n_trajectories": 100, "horizon": 10, "sampling_seed": 7 }
//! }
//! ```
//!
//! The empirical backend is `{ "empirical": { "snapshot_path": "snaps.csv" } }`,
//! with the path resolved against the config file's directory. Unknown keys are
//! rejected everywhere. `system` may name a built-in system (see
//! [`crate::experiments::builtin_system`]) to supply `state_dim`, `domain` and
//! `dynamics`.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::experiments::builtin_system;
use crate::expr::{DynamicsMap, Expr, ExprError};
use crate::koopman::Tolerances;
use crate::space::{Domain, EmpiricalSpace, InnerProductSpace, QuadratureSpace, SpaceError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config is not valid JSON at line {line}, column {column}: {message}")]
    Json {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("config schema error: {0}")]
    Schema(String),
    #[error("config `{field}[{index}]`: {source}")]
    Expr {
        field: &'static str,
        index: usize,
        #[source]
        source: ExprError,
    },
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("snapshot data: {0}")]
    Snapshots(#[from] SpaceError),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    #[serde(default)]
    pub system: Option<String>,
    #[serde(default)]
    pub state_dim: Option<usize>,
    #[serde(default)]
    pub domain: Option<Vec<[f64; 2]>>,
    #[serde(default = "default_field")]
    pub field: String,
    #[serde(default)]
    pub backend: Option<BackendSpec>,
    #[serde(default)]
    pub dynamics: Option<Vec<String>>,
    pub dictionary: Vec<String>,
    #[serde(default)]
    pub tolerances: TolerancesSpec,
    #[serde(default)]
    pub oracle: OracleSpec,
    #[serde(default)]
    pub experiment: Option<ExperimentSpec>,
}

fn default_field() -> String {
    "real".into()
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum BackendSpec {
    Quadrature(QuadratureSpec),
    Empirical(EmpiricalSpec),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadratureSpec {
    #[serde(default = "default_order")]
    pub order: usize,
}

fn default_order() -> usize {
    QuadratureSpace::DEFAULT_ORDER
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmpiricalSpec {
    pub snapshot_path: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TolerancesSpec {
    #[serde(default = "default_rank_tol")]
    pub rank_tol: f64,
    #[serde(default = "default_quad_tol")]
    pub quad_tol: f64,
}

fn default_rank_tol() -> f64 {
    Tolerances::default().rank_tol
}

fn default_quad_tol() -> f64 {
    Tolerances::default().quad_tol
}

impl Default for TolerancesSpec {
    fn default() -> Self {
        TolerancesSpec {
            rank_tol: default_rank_tol(),
            quad_tol: default_quad_tol(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSpec {
    #[serde(default = "default_samples")]
    pub n_samples: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_samples() -> usize {
    10_000
}

impl Default for OracleSpec {
    fn default() -> Self {
        OracleSpec {
            n_samples: default_samples(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default = "default_trajectories")]
    pub n_trajectories: usize,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default)]
    pub sampling_seed: u64,
}

fn default_trajectories() -> usize {
    100
}

fn default_horizon() -> usize {
    10
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            n_trajectories: default_trajectories(),
            horizon: default_horizon(),
            sampling_seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub enum Backend {
    Quadrature {
        order: usize,
    },
    Empirical {
        snapshots: EmpiricalSpace,
        path: PathBuf,
    },
}

/// A validated configuration with parsed expressions.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub state_dim: usize,
    pub domain: Option<Domain>,
    pub backend: Backend,
    pub dynamics: Option<DynamicsMap>,
    pub dictionary: Vec<Expr>,
    pub tolerances: Tolerances,
    pub oracle: OracleSpec,
    pub experiment: ExperimentSpec,
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub quad_order: Option<usize>,
    pub rank_tol: Option<f64>,
}

impl RunConfig {
    pub fn from_path(path: &Path, overrides: &Overrides) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_json(&text, base, overrides)
    }

    /// Parses `text`, resolving relative snapshot paths against `base_dir`.
    pub fn from_json(
        text: &str,
        base_dir: &Path,
        overrides: &Overrides,
    ) -> Result<Self, ConfigError> {
        let raw: RawConfig = serde_json::from_str(text).map_err(|e| ConfigError::Json {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        Self::from_raw(raw, base_dir, overrides)
    }

    pub fn from_raw(
        raw: RawConfig,
        base_dir: &Path,
        overrides: &Overrides,
    ) -> Result<Self, ConfigError> {
        let schema = |msg: String| ConfigError::Schema(msg);
        if raw.field != "real" {
            return Err(schema(format!(
                "field `{}` is not supported (only \"real\")",
                raw.field
            )));
        }
        let builtin = match &raw.system {
            Some(name) => Some(
                builtin_system(name)
                    .ok_or_else(|| schema(format!("unknown built-in system `{name}`")))?,
            ),
            None => None,
        };
        let state_dim = raw
            .state_dim
            .or(builtin.as_ref().map(|b| b.state_dim))
            .ok_or_else(|| schema("missing `state_dim`".into()))?;
        if state_dim == 0 {
            return Err(schema("`state_dim` must be positive".into()));
        }
        if let Some(b) = &builtin {
            if b.state_dim != state_dim {
                return Err(schema(format!(
                    "`state_dim` {state_dim} does not match system `{}` ({})",
                    b.name, b.state_dim
                )));
            }
        }

        let domain = match raw
            .domain
            .or_else(|| builtin.as_ref().map(|b| b.domain.to_vec()))
        {
            Some(bounds) => {
                if bounds.len() != state_dim {
                    return Err(schema(format!(
                        "`domain` has {} intervals, expected {state_dim}",
                        bounds.len()
                    )));
                }
                Some(
                    Domain::new(bounds.into_iter().map(|[a, b]| (a, b)).collect())
                        .map_err(|e| schema(format!("`domain`: {e}")))?,
                )
            }
            None => None,
        };

        let dynamics_src = raw.dynamics.or_else(|| {
            builtin
                .as_ref()
                .map(|b| b.dynamics.iter().map(|s| s.to_string()).collect())
        });
        let dynamics = match dynamics_src {
            Some(src) => {
                if src.len() != state_dim {
                    return Err(schema(format!(
                        "`dynamics` has {} components, expected {state_dim}",
                        src.len()
                    )));
                }
                let comps = src
                    .iter()
                    .enumerate()
                    .map(|(index, s)| {
                        Expr::parse(s, state_dim).map_err(|source| ConfigError::Expr {
                            field: "dynamics",
                            index,
                            source,
                        })
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                Some(DynamicsMap::new(comps).map_err(|e| schema(e.to_string()))?)
            }
            None => None,
        };

        if raw.dictionary.is_empty() {
            return Err(schema(
                "`dictionary` must contain at least one expression".into(),
            ));
        }
        let dictionary = raw
            .dictionary
            .iter()
            .enumerate()
            .map(|(index, s)| {
                Expr::parse(s, state_dim).map_err(|source| ConfigError::Expr {
                    field: "dictionary",
                    index,
                    source,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;

        let backend_spec = raw
            .backend
            .unwrap_or(BackendSpec::Quadrature(QuadratureSpec {
                order: default_order(),
            }));
        let backend = match backend_spec {
            BackendSpec::Quadrature(q) => {
                if domain.is_none() {
                    return Err(schema("quadrature backend requires `domain`".into()));
                }
                if dynamics.is_none() {
                    return Err(schema("quadrature backend requires `dynamics`".into()));
                }
                let order = overrides.quad_order.unwrap_or(q.order);
                if order == 0 {
                    return Err(schema("quadrature `order` must be positive".into()));
                }
                Backend::Quadrature { order }
            }
            BackendSpec::Empirical(e) => {
                if raw.system.is_none() && dynamics.is_some() && raw.experiment.is_none() {
                    return Err(schema(
                        "`dynamics` with the empirical backend is only allowed together with `experiment`"
                            .into(),
                    ));
                }
                let path = if e.snapshot_path.is_absolute() {
                    e.snapshot_path
                } else {
                    base_dir.join(e.snapshot_path)
                };
                let file = std::fs::File::open(&path).map_err(|source| ConfigError::Io {
                    path: path.clone(),
                    source,
                })?;
                let snapshots = EmpiricalSpace::read_csv(file)?;
                if snapshots.state_dim() != state_dim {
                    return Err(schema(format!(
                        "snapshots have state dimension {}, expected {state_dim}",
                        snapshots.state_dim()
                    )));
                }
                Backend::Empirical { snapshots, path }
            }
        };

        let mut tolerances = Tolerances {
            rank_tol: overrides.rank_tol.unwrap_or(raw.tolerances.rank_tol),
            quad_tol: raw.tolerances.quad_tol,
        };
        if !(tolerances.rank_tol > 0.0 && tolerances.rank_tol < 1.0) {
            return Err(schema(format!(
                "`rank_tol` {} must lie in (0, 1)",
                tolerances.rank_tol
            )));
        }
        if !(tolerances.quad_tol > 0.0) {
            return Err(schema(format!(
                "`quad_tol` {} must be positive",
                tolerances.quad_tol
            )));
        }
        tolerances.quad_tol = tolerances.quad_tol.min(1.0);

        let mut oracle = raw.oracle;
        let mut experiment = raw.experiment.unwrap_or_default();
        if let Some(seed) = overrides.seed {
            oracle.seed = seed;
            experiment.sampling_seed = seed;
        }
        if oracle.n_samples == 0 {
            return Err(schema("`oracle.n_samples` must be at least 1".into()));
        }

        Ok(RunConfig {
            state_dim,
            domain,
            backend,
            dynamics,
            dictionary,
            tolerances,
            oracle,
            experiment,
        })
    }

    /// The inner-product space selected by `backend`.
    pub fn space(&self) -> Result<Box<dyn InnerProductSpace>, ConfigError> {
        match &self.backend {
            Backend::Quadrature { order } => {
                let domain = self.domain.clone().ok_or_else(|| {
                    ConfigError::Schema("quadrature backend requires `domain`".into())
                })?;
                Ok(Box::new(QuadratureSpace::new(domain, *order)?))
            }
            Backend::Empirical { snapshots, .. } => Ok(Box::new(snapshots.clone())),
        }
    }
}
