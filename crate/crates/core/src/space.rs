//! Inner-product backends over observables.
//!
//! Two measures are supported: tensor-product Gauss–Legendre quadrature of the
//! unnormalized Lebesgue measure on a box, and the empirical measure on a set of
//! snapshot pairs `(x_i, T(x_i))`. Both reduce to a weighted sum over nodes, so
//! every Gram matrix is assembled as `Σ_j w_j a_j a_jᵀ` with `a_j` the atom
//! values at node `j`, accumulated in node order.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::expr::{compose_with_map, DynamicsMap, Expr, Observable};

#[derive(Debug, Error)]
pub enum SpaceError {
    #[error("non-finite value for atom {atom} at point {point:?}")]
    NonFiniteValue { point: Vec<f64>, atom: usize },
    #[error("invalid domain: {0}")]
    InvalidDomain(String),
    #[error("invalid snapshots: {0}")]
    InvalidSnapshots(String),
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("quadrature backend needs the dynamics map to form Koopman images")]
    MissingDynamics,
    #[error("empty atom list")]
    NoAtoms,
    #[error("snapshot csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Axis-aligned box `[a_1, b_1] × … × [a_n, b_n]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Domain {
    bounds: Vec<(f64, f64)>,
}

impl Domain {
    pub fn new(bounds: Vec<(f64, f64)>) -> Result<Self, SpaceError> {
        if bounds.is_empty() {
            return Err(SpaceError::InvalidDomain("no dimensions".into()));
        }
        for (k, &(a, b)) in bounds.iter().enumerate() {
            if !(a.is_finite() && b.is_finite() && a < b) {
                return Err(SpaceError::InvalidDomain(format!(
                    "interval {} is [{a}, {b}]",
                    k + 1
                )));
            }
        }
        Ok(Domain { bounds })
    }

    /// `[lo, hi]^n`.
    pub fn cube(n: usize, lo: f64, hi: f64) -> Result<Self, SpaceError> {
        Self::new(vec![(lo, hi); n])
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn volume(&self) -> f64 {
        self.bounds.iter().map(|(a, b)| b - a).product()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(&self.bounds)
                .all(|(v, (a, b))| a <= v && v <= b)
    }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`, nodes ascending.
pub fn gauss_legendre(order: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(order > 0, "quadrature order must be positive");
    let n = order;
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Tricomi initial guess, then Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre_with_derivative(n, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let n = n as f64;
    (p1, n * (x * p1 - p0) / (x * x - 1.0))
}

/// A weighted set of evaluation nodes defining `⟨f, g⟩ = Σ_j w_j f(p_j) g(p_j)`.
pub trait InnerProductSpace: Send + Sync {
    fn state_dim(&self) -> usize;

    fn num_nodes(&self) -> usize;

    fn node(&self, j: usize) -> &[f64];

    fn weight(&self, j: usize) -> f64;

    /// Values of `K atom` at every node, row-major `num_nodes × atoms.len()`.
    fn koopman_values(
        &self,
        atoms: &[Expr],
        dynamics: Option<&DynamicsMap>,
    ) -> Result<Vec<f64>, SpaceError>;

    /// The same measure at doubled resolution, when that makes sense.
    fn refined(&self) -> Option<Box<dyn InnerProductSpace>> {
        None
    }

    /// Short human-readable backend description.
    fn describe(&self) -> String;

    fn quadrature_order(&self) -> Option<usize> {
        None
    }

    /// Values of each observable at every node, row-major `num_nodes × atoms.len()`.
    fn values(&self, atoms: &[&dyn Observable]) -> Result<Vec<f64>, SpaceError> {
        let m = atoms.len();
        let mut out = vec![0.0; self.num_nodes() * m];
        for j in 0..self.num_nodes() {
            let p = self.node(j);
            for (i, a) in atoms.iter().enumerate() {
                if a.state_dim() != self.state_dim() {
                    return Err(SpaceError::DimensionMismatch {
                        expected: self.state_dim(),
                        found: a.state_dim(),
                    });
                }
                let v = a.eval(p);
                if !v.is_finite() {
                    return Err(SpaceError::NonFiniteValue {
                        point: p.to_vec(),
                        atom: i,
                    });
                }
                out[j * m + i] = v;
            }
        }
        Ok(out)
    }

    fn inner_product(&self, f: &dyn Observable, g: &dyn Observable) -> Result<f64, SpaceError> {
        let vals = self.values(&[f, g])?;
        let mut acc = 0.0;
        for j in 0..self.num_nodes() {
            acc += self.weight(j) * vals[2 * j] * vals[2 * j + 1];
        }
        Ok(acc)
    }

    fn gram(&self, atoms: &[Expr]) -> Result<GramMatrix, SpaceError> {
        if atoms.is_empty() {
            return Err(SpaceError::NoAtoms);
        }
        let refs: Vec<&dyn Observable> = atoms.iter().map(|a| a as &dyn Observable).collect();
        let vals = self.values(&refs)?;
        let entries = accumulate_gram(self, &vals, atoms.len());
        Ok(GramMatrix {
            entries,
            labels: atoms.iter().map(|a| a.to_string()).collect(),
        })
    }

    /// Gram blocks of the generator list `[Ψ, KΨ]`.
    fn koopman_gram_blocks(
        &self,
        atoms: &[Expr],
        dynamics: Option<&DynamicsMap>,
    ) -> Result<KoopmanGram, SpaceError> {
        if atoms.is_empty() {
            return Err(SpaceError::NoAtoms);
        }
        let m = atoms.len();
        let refs: Vec<&dyn Observable> = atoms.iter().map(|a| a as &dyn Observable).collect();
        let psi = self.values(&refs)?;
        let kpsi = self.koopman_values(atoms, dynamics)?;
        let mut joined = Vec::with_capacity(psi.len() * 2);
        for j in 0..self.num_nodes() {
            joined.extend_from_slice(&psi[j * m..(j + 1) * m]);
            joined.extend_from_slice(&kpsi[j * m..(j + 1) * m]);
        }
        let full = accumulate_gram(self, &joined, 2 * m);
        Ok(KoopmanGram { full, m })
    }
}

fn accumulate_gram<S: InnerProductSpace + ?Sized>(
    space: &S,
    vals: &[f64],
    m: usize,
) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(m, m);
    for j in 0..space.num_nodes() {
        let w = space.weight(j);
        let a = &vals[j * m..(j + 1) * m];
        for r in 0..m {
            let wa = w * a[r];
            for c in r..m {
                g[(r, c)] += wa * a[c];
            }
        }
    }
    for r in 0..m {
        for c in 0..r {
            g[(r, c)] = g[(c, r)];
        }
    }
    g
}

/// Pairwise inner products of a labelled atom list.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    pub entries: DMatrix<f64>,
    pub labels: Vec<String>,
}

impl GramMatrix {
    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    /// Largest relative asymmetry `|G_ij - G_ji| / max|G|`.
    pub fn asymmetry(&self) -> f64 {
        let scale = self.entries.amax().max(f64::MIN_POSITIVE);
        (&self.entries - self.entries.transpose()).amax() / scale
    }
}

/// Gram matrix of `[Ψ_1 … Ψ_m, KΨ_1 … KΨ_m]`.
#[derive(Debug, Clone, PartialEq)]
pub struct KoopmanGram {
    full: DMatrix<f64>,
    m: usize,
}

impl KoopmanGram {
    pub fn num_atoms(&self) -> usize {
        self.m
    }

    /// `⟨Ψ_i, Ψ_j⟩`.
    pub fn psi_psi(&self) -> DMatrix<f64> {
        self.full.view((0, 0), (self.m, self.m)).into_owned()
    }

    /// `⟨Ψ_i, KΨ_j⟩`.
    pub fn psi_kpsi(&self) -> DMatrix<f64> {
        self.full.view((0, self.m), (self.m, self.m)).into_owned()
    }

    /// `⟨KΨ_i, KΨ_j⟩`.
    pub fn kpsi_kpsi(&self) -> DMatrix<f64> {
        self.full
            .view((self.m, self.m), (self.m, self.m))
            .into_owned()
    }

    pub fn full(&self) -> &DMatrix<f64> {
        &self.full
    }
}

/// Tensor-product Gauss–Legendre quadrature on a box.
#[derive(Debug, Clone)]
pub struct QuadratureSpace {
    domain: Domain,
    order: usize,
    weight_scale: f64,
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureSpace {
    pub const DEFAULT_ORDER: usize = 20;

    pub fn new(domain: Domain, order: usize) -> Result<Self, SpaceError> {
        if order == 0 {
            return Err(SpaceError::InvalidDomain(
                "quadrature order must be positive".into(),
            ));
        }
        let n = domain.dim();
        let (x, w) = gauss_legendre(order);
        let total = order
            .checked_pow(n as u32)
            .filter(|t| *t <= 50_000_000)
            .ok_or_else(|| SpaceError::InvalidDomain(format!("{order}^{n} nodes is too many")))?;
        let mut points = Vec::with_capacity(total * n);
        let mut weights = Vec::with_capacity(total);
        let mut idx = vec![0usize; n];
        for _ in 0..total {
            let mut wt = 1.0;
            for (k, &(a, b)) in domain.bounds().iter().enumerate() {
                let half = 0.5 * (b - a);
                points.push(a + half * (x[idx[k]] + 1.0));
                wt *= half * w[idx[k]];
            }
            weights.push(wt);
            // last coordinate varies fastest
            for k in (0..n).rev() {
                idx[k] += 1;
                if idx[k] < order {
                    break;
                }
                idx[k] = 0;
            }
        }
        Ok(QuadratureSpace {
            domain,
            order,
            weight_scale: 1.0,
            points,
            weights,
        })
    }

    /// Same nodes with every weight multiplied by `c > 0`.
    pub fn with_weight_scale(mut self, c: f64) -> Self {
        assert!(c > 0.0 && c.is_finite(), "weight scale must be positive");
        for w in &mut self.weights {
            *w *= c / self.weight_scale;
        }
        self.weight_scale = c;
        self
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }
}

impl InnerProductSpace for QuadratureSpace {
    fn state_dim(&self) -> usize {
        self.domain.dim()
    }

    fn num_nodes(&self) -> usize {
        self.weights.len()
    }

    fn node(&self, j: usize) -> &[f64] {
        let n = self.domain.dim();
        &self.points[j * n..(j + 1) * n]
    }

    fn weight(&self, j: usize) -> f64 {
        self.weights[j]
    }

    fn koopman_values(
        &self,
        atoms: &[Expr],
        dynamics: Option<&DynamicsMap>,
    ) -> Result<Vec<f64>, SpaceError> {
        let map = dynamics.ok_or(SpaceError::MissingDynamics)?;
        let composed = atoms
            .iter()
            .map(|a| compose_with_map(a, map))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| SpaceError::DimensionMismatch {
                expected: map.state_dim(),
                found: atoms[0].state_dim(),
            })?;
        let refs: Vec<&dyn Observable> = composed.iter().map(|c| c as &dyn Observable).collect();
        self.values(&refs)
    }

    fn refined(&self) -> Option<Box<dyn InnerProductSpace>> {
        let finer = QuadratureSpace::new(self.domain.clone(), 2 * self.order)
            .ok()?
            .with_weight_scale(self.weight_scale);
        Some(Box::new(finer))
    }

    fn describe(&self) -> String {
        format!(
            "gauss-legendre order {} on {:?}",
            self.order,
            self.domain.bounds()
        )
    }

    fn quadrature_order(&self) -> Option<usize> {
        Some(self.order)
    }
}

/// Empirical measure on snapshot pairs `(x_i, y_i = T(x_i))`.
///
/// Weights default to `1/N`; custom positive weights allow folding a
/// quadrature rule into the snapshot set.
#[derive(Debug, Clone)]
pub struct EmpiricalSpace {
    state_dim: usize,
    x: Vec<f64>,
    y: Vec<f64>,
    weights: Vec<f64>,
}

impl EmpiricalSpace {
    /// `x` and `y` are row-major `N × n`.
    pub fn new(state_dim: usize, x: Vec<f64>, y: Vec<f64>) -> Result<Self, SpaceError> {
        if state_dim == 0 {
            return Err(SpaceError::InvalidSnapshots(
                "state dimension must be positive".into(),
            ));
        }
        if x.len() != y.len() || !x.len().is_multiple_of(state_dim) {
            return Err(SpaceError::InvalidSnapshots(format!(
                "{} state values and {} successor values do not form N×{state_dim} matrices",
                x.len(),
                y.len()
            )));
        }
        let rows = x.len() / state_dim;
        if rows == 0 {
            return Err(SpaceError::InvalidSnapshots("no snapshots".into()));
        }
        if let Some(i) = x.iter().chain(&y).position(|v| !v.is_finite()) {
            let row = (i % x.len()) / state_dim;
            return Err(SpaceError::InvalidSnapshots(format!(
                "non-finite entry in row {}",
                row + 1
            )));
        }
        Ok(EmpiricalSpace {
            state_dim,
            x,
            y,
            weights: vec![1.0 / rows as f64; rows],
        })
    }

    /// Simulates one step of `map` from every point of `states`.
    pub fn from_map(map: &DynamicsMap, states: Vec<f64>) -> Result<Self, SpaceError> {
        let n = map.state_dim();
        let mut y = vec![0.0; states.len()];
        for (xs, ys) in states.chunks(n).zip(y.chunks_mut(n)) {
            map.apply_into(xs, ys);
        }
        Self::new(n, states, y)
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self, SpaceError> {
        if weights.len() != self.weights.len() {
            return Err(SpaceError::DimensionMismatch {
                expected: self.weights.len(),
                found: weights.len(),
            });
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(SpaceError::InvalidSnapshots(
                "weights must be positive".into(),
            ));
        }
        self.weights = weights;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.x[i * self.state_dim..(i + 1) * self.state_dim]
    }

    pub fn successor(&self, i: usize) -> &[f64] {
        &self.y[i * self.state_dim..(i + 1) * self.state_dim]
    }

    /// Reads `x1,…,xn,y1,…,yn` snapshot rows.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self, SpaceError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let header = rdr.headers()?.clone();
        let cols = header.len();
        if cols == 0 || cols % 2 != 0 {
            return Err(SpaceError::InvalidSnapshots(format!(
                "header has {cols} columns, expected 2n"
            )));
        }
        let n = cols / 2;
        for (k, name) in header.iter().enumerate() {
            let expected = if k < n {
                format!("x{}", k + 1)
            } else {
                format!("y{}", k - n + 1)
            };
            if name != expected {
                return Err(SpaceError::InvalidSnapshots(format!(
                    "header column {} is `{name}`, expected `{expected}`",
                    k + 1
                )));
            }
        }
        let (mut x, mut y) = (Vec::new(), Vec::new());
        for (r, record) in rdr.records().enumerate() {
            let record = record?;
            if record.len() != cols {
                return Err(SpaceError::InvalidSnapshots(format!(
                    "row {} has {} fields, expected {cols}",
                    r + 1,
                    record.len()
                )));
            }
            for (k, field) in record.iter().enumerate() {
                let v: f64 = field.parse().map_err(|_| {
                    SpaceError::InvalidSnapshots(format!(
                        "row {}: `{field}` is not a number",
                        r + 1
                    ))
                })?;
                if k < n {
                    x.push(v);
                } else {
                    y.push(v);
                }
            }
        }
        Self::new(n, x, y)
    }

    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self, SpaceError> {
        Self::read_csv(std::fs::File::open(path)?)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), SpaceError> {
        let mut w = csv::Writer::from_writer(writer);
        let n = self.state_dim;
        let header: Vec<String> = (1..=n)
            .map(|k| format!("x{k}"))
            .chain((1..=n).map(|k| format!("y{k}")))
            .collect();
        w.write_record(&header)?;
        for i in 0..self.len() {
            let row: Vec<String> = self
                .state(i)
                .iter()
                .chain(self.successor(i))
                .map(|v| format!("{v:?}"))
                .collect();
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

impl InnerProductSpace for EmpiricalSpace {
    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn num_nodes(&self) -> usize {
        self.weights.len()
    }

    fn node(&self, j: usize) -> &[f64] {
        self.state(j)
    }

    fn weight(&self, j: usize) -> f64 {
        self.weights[j]
    }

    /// `KΨ(x_i) = Ψ(y_i)`; the dynamics map is not consulted.
    fn koopman_values(
        &self,
        atoms: &[Expr],
        _dynamics: Option<&DynamicsMap>,
    ) -> Result<Vec<f64>, SpaceError> {
        let m = atoms.len();
        let mut out = vec![0.0; self.len() * m];
        for j in 0..self.len() {
            let p = self.successor(j);
            for (i, a) in atoms.iter().enumerate() {
                if a.state_dim() != self.state_dim {
                    return Err(SpaceError::DimensionMismatch {
                        expected: self.state_dim,
                        found: a.state_dim(),
                    });
                }
                let v = a.eval(p);
                if !v.is_finite() {
                    return Err(SpaceError::NonFiniteValue {
                        point: p.to_vec(),
                        atom: i,
                    });
                }
                out[j * m + i] = v;
            }
        }
        Ok(out)
    }

    fn describe(&self) -> String {
        format!("empirical measure on {} snapshots", self.len())
    }
}
