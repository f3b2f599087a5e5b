//! Projected Koopman models and invariance proximity.
//!
//! Conventions: a function in `S` is `f = vᵀ Ψ̂` for the orthonormalized
//! dictionary `Ψ̂`, and the model matrix uses the row convention
//! `P_S(K Ψ̂_i) = Σ_j K_approx[i][j] Ψ̂_j`. Hence `K_approx f = (K_approxᵀ v)ᵀ Ψ̂`,
//! eigenfunctions come from left eigenvectors of `K_approx`, and trajectories
//! are predicted as `Ψ̂(x(k)) ≈ K_approxᵏ Ψ̂(x(0))`.

use nalgebra::{Complex, DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use thiserror::Error;

use crate::expr::{DynamicsMap, Expr};
use crate::geometry::{
    checked_svd, orthonormalize, principal_angles, GeometryError, Isomorphism,
    PrincipalDecomposition, SubspaceBasis, DEFAULT_RANK_TOL,
};
use crate::space::{InnerProductSpace, KoopmanGram, SpaceError};

#[derive(Debug, Error)]
pub enum KoopmanError {
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("Kf vanishes (‖Kf‖ = {norm:e}), relative error is undefined")]
    ZeroImage { norm: f64 },
    #[error("dictionary vector vanishes at step {step} of the trajectory")]
    ZeroNorm { step: usize },
    #[error("witness system is inconsistent (residual {residual:e})")]
    InconsistentSystem { residual: f64 },
    #[error("coefficient vector has length {found}, dictionary has {expected} atoms")]
    DimensionMismatch { expected: usize, found: usize },
}

pub type Result<T, E = KoopmanError> = std::result::Result<T, E>;

/// An eigenvalue together with its left eigenvector.
pub type LeftEigenpair = (Complex<f64>, DVector<Complex<f64>>);

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tolerances {
    /// Relative eigenvalue cutoff for rank decisions.
    pub rank_tol: f64,
    /// Allowed relative change of the Gram matrix when the quadrature order is doubled.
    pub quad_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            rank_tol: DEFAULT_RANK_TOL,
            quad_tol: 1e-9,
        }
    }
}

/// A function `Σ c_i Ψ_i` over the (non-orthonormalized) dictionary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FunctionVec {
    pub coeffs: Vec<f64>,
}

impl FunctionVec {
    pub fn new(coeffs: Vec<f64>) -> Self {
        FunctionVec { coeffs }
    }

    fn as_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.coeffs)
    }
}

/// `K_approx` on an orthonormalized dictionary.
#[derive(Debug, Clone, PartialEq)]
pub struct KoopmanModel {
    atoms: Vec<Expr>,
    basis: DMatrix<f64>,
    k_approx: DMatrix<f64>,
}

impl KoopmanModel {
    pub fn build(
        atoms: &[Expr],
        dynamics: Option<&DynamicsMap>,
        space: &dyn InnerProductSpace,
        rank_tol: f64,
    ) -> Result<Self> {
        let gram = space.koopman_gram_blocks(atoms, dynamics)?;
        Self::from_gram(atoms, &gram, rank_tol)
    }

    pub fn from_gram(atoms: &[Expr], gram: &KoopmanGram, rank_tol: f64) -> Result<Self> {
        let orth = orthonormalize(&gram.psi_psi(), rank_tol)?;
        let basis = orth.coeffs;
        // [K_approx]_ij = ⟨K Ψ̂_i, Ψ̂_j⟩ = Σ_ab B_ai B_bj ⟨K Ψ_a, Ψ_b⟩
        let k_approx = basis.transpose() * gram.psi_kpsi().transpose() * &basis;
        Ok(KoopmanModel {
            atoms: atoms.to_vec(),
            basis,
            k_approx,
        })
    }

    pub fn atoms(&self) -> &[Expr] {
        &self.atoms
    }

    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }

    /// Column `k` holds the atom coefficients of `Ψ̂_k`.
    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn k_approx(&self) -> &DMatrix<f64> {
        &self.k_approx
    }

    /// `Ψ̂(x)`.
    pub fn evaluate(&self, x: &[f64]) -> DVector<f64> {
        let raw = DVector::from_iterator(self.atoms.len(), self.atoms.iter().map(|a| a.eval(x)));
        self.basis.tr_mul(&raw)
    }

    /// Coefficients (in `Ψ̂`) of `K_approx f` for `f = vᵀ Ψ̂`.
    pub fn predict(&self, v: &DVector<f64>) -> DVector<f64> {
        self.k_approx.tr_mul(v)
    }

    pub fn eigenvalues(&self) -> Vec<Complex<f64>> {
        let mut ev: Vec<Complex<f64>> = self
            .k_approx
            .complex_eigenvalues()
            .iter()
            .copied()
            .collect();
        ev.sort_by(|a, b| {
            b.norm()
                .total_cmp(&a.norm())
                .then(b.re.total_cmp(&a.re))
                .then(b.im.total_cmp(&a.im))
        });
        ev
    }

    /// Eigenpairs `(λ, w)` with `K_approxᵀ w = λ w`, i.e. `φ = wᵀ Ψ̂` satisfies
    /// `K_approx φ = λ φ`.
    pub fn left_eigenpairs(&self) -> Result<Vec<LeftEigenpair>> {
        let r = self.rank();
        let kt: DMatrix<Complex<f64>> = self.k_approx.transpose().map(|x| Complex::new(x, 0.0));
        let eigs = self.eigenvalues();
        let scale = self.k_approx.norm().max(1.0);
        let mut out: Vec<(Complex<f64>, DVector<Complex<f64>>)> = Vec::with_capacity(r);
        for (i, &lambda) in eigs.iter().enumerate() {
            // index of this eigenvalue among numerically equal predecessors
            let slot = eigs[..i]
                .iter()
                .filter(|mu| (**mu - lambda).norm() <= 1e-8 * scale)
                .count();
            let shifted = &kt - DMatrix::<Complex<f64>>::identity(r, r) * lambda;
            let svd = checked_svd(&shifted)?;
            let mut idx: Vec<usize> = (0..svd.singular_values.len()).collect();
            idx.sort_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]));
            let k = idx[slot.min(idx.len() - 1)];
            out.push((lambda, svd.v.column(k).into_owned()));
        }
        Ok(out)
    }
}

/// Output of the proximity computation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProximityReport {
    pub invariance_proximity: f64,
    pub principal_angles_rad: Vec<f64>,
    #[serde(rename = "dim_S")]
    pub dim_s: usize,
    #[serde(rename = "dim_KS")]
    pub dim_ks: usize,
    #[serde(rename = "dim_W")]
    pub dim_w: usize,
    pub witness_coeffs: Vec<f64>,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    pub backend: String,
    pub rank_tol: f64,
    pub quad_tol: f64,
    pub quadrature_order: Option<usize>,
    /// Max relative Gram change when the quadrature order is doubled.
    pub order_doubling_change: Option<f64>,
    /// `E_K(f*)` recomputed from the witness.
    pub witness_relative_error: f64,
    /// Residual of the witness least-squares solve.
    pub witness_residual: f64,
    pub gram_eigenvalues_s: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Everything Algorithm-style proximity computation produces, kept around for
/// witnesses, relative errors, the sampling oracle and residuals.
#[derive(Debug, Clone)]
pub struct ProximityAnalysis {
    gram: KoopmanGram,
    model: KoopmanModel,
    /// Orthonormal basis of `KS` in `KΨ` coefficients.
    ks_basis: DMatrix<f64>,
    iso: Isomorphism<f64>,
    q_s: SubspaceBasis<f64>,
    q_ks: SubspaceBasis<f64>,
    decomposition: PrincipalDecomposition<f64>,
    proximity: f64,
    diagnostics: Diagnostics,
}

impl ProximityAnalysis {
    pub fn compute(
        atoms: &[Expr],
        dynamics: Option<&DynamicsMap>,
        space: &dyn InnerProductSpace,
        tol: &Tolerances,
    ) -> Result<Self> {
        let gram = space.koopman_gram_blocks(atoms, dynamics)?;
        let mut warnings = Vec::new();
        let mut order_doubling_change = None;
        if let Some(fine) = space.refined() {
            let fine_gram = fine.koopman_gram_blocks(atoms, dynamics)?;
            let scale = gram.full().amax().max(f64::MIN_POSITIVE);
            let change = (fine_gram.full() - gram.full()).amax() / scale;
            if change >= tol.quad_tol {
                warnings.push(format!(
                    "Gram matrix changes by {change:.3e} (relative) when the quadrature order is doubled"
                ));
            }
            order_doubling_change = Some(change);
        }
        let diagnostics = Diagnostics {
            backend: space.describe(),
            rank_tol: tol.rank_tol,
            quad_tol: tol.quad_tol,
            quadrature_order: space.quadrature_order(),
            order_doubling_change,
            witness_relative_error: f64::NAN,
            witness_residual: f64::NAN,
            gram_eigenvalues_s: Vec::new(),
            warnings,
        };
        Self::from_gram(atoms, gram, tol.rank_tol, diagnostics)
    }

    /// Runs the pipeline on precomputed Gram blocks.
    pub fn from_gram(
        atoms: &[Expr],
        gram: KoopmanGram,
        rank_tol: f64,
        mut diagnostics: Diagnostics,
    ) -> Result<Self> {
        let m = gram.num_atoms();
        if atoms.len() != m {
            return Err(KoopmanError::DimensionMismatch {
                expected: m,
                found: atoms.len(),
            });
        }
        let s_orth = orthonormalize(&gram.psi_psi(), rank_tol)?;
        diagnostics.gram_eigenvalues_s = s_orth.eigenvalues.clone();
        let model = KoopmanModel {
            atoms: atoms.to_vec(),
            k_approx: s_orth.coeffs.transpose() * gram.psi_kpsi().transpose() * &s_orth.coeffs,
            basis: s_orth.coeffs,
        };

        // Φ = orth(KΨ)
        let ks_basis = orthonormalize(&gram.kpsi_kpsi(), rank_tol)?.coeffs;
        let dim_ks = ks_basis.ncols();

        // generators [Ψ, Φ] expressed over the 2m atoms [Ψ, KΨ]
        let mut generators = DMatrix::<f64>::zeros(2 * m, m + dim_ks);
        generators.view_mut((0, 0), (m, m)).fill_with_identity();
        generators
            .view_mut((m, m), (m, dim_ks))
            .copy_from(&ks_basis);
        let gen_gram = generators.transpose() * gram.full() * &generators;
        let w_orth = orthonormalize(&gen_gram, rank_tol)?;
        let iso = Isomorphism::with_basis(gram.full(), &generators * &w_orth.coeffs);

        let embed = iso.embed_matrix();
        let q_s =
            SubspaceBasis::from_columns(&(embed.columns(0, m) * &model.basis), rank_tol.sqrt())?;
        let q_ks =
            SubspaceBasis::from_columns(&(embed.columns(m, m) * &ks_basis), rank_tol.sqrt())?;
        if q_ks.rank() == 0 || q_s.rank() == 0 {
            return Err(GeometryError::DegenerateSpace.into());
        }
        let decomposition = principal_angles(&q_s, &q_ks)?;
        let theta = decomposition.max_angle().unwrap_or(0.0);
        let proximity = theta.sin().clamp(0.0, 1.0);

        let mut analysis = ProximityAnalysis {
            gram,
            model,
            ks_basis,
            iso,
            q_s,
            q_ks,
            decomposition,
            proximity,
            diagnostics,
        };
        let (witness, residual) = analysis.solve_witness()?;
        analysis.diagnostics.witness_residual = residual;
        analysis.diagnostics.witness_relative_error = match analysis.relative_error(&witness) {
            Ok(e) => e,
            Err(KoopmanError::ZeroImage { .. }) => 0.0,
            Err(e) => return Err(e),
        };
        if (analysis.diagnostics.witness_relative_error - proximity).abs() > 1e-8 {
            return Err(KoopmanError::InconsistentSystem { residual });
        }
        Ok(analysis)
    }

    pub fn proximity(&self) -> f64 {
        self.proximity
    }

    pub fn model(&self) -> &KoopmanModel {
        &self.model
    }

    pub fn gram(&self) -> &KoopmanGram {
        &self.gram
    }

    pub fn decomposition(&self) -> &PrincipalDecomposition<f64> {
        &self.decomposition
    }

    pub fn isomorphism(&self) -> &Isomorphism<f64> {
        &self.iso
    }

    pub fn num_atoms(&self) -> usize {
        self.gram.num_atoms()
    }

    pub fn dim_s(&self) -> usize {
        self.q_s.rank()
    }

    pub fn dim_ks(&self) -> usize {
        self.q_ks.rank()
    }

    pub fn dim_w(&self) -> usize {
        self.iso.dim()
    }

    /// Orthonormal basis of `Q(S)`.
    pub fn q_s(&self) -> &SubspaceBasis<f64> {
        &self.q_s
    }

    /// Orthonormal basis of `Q(KS)`.
    pub fn q_ks(&self) -> &SubspaceBasis<f64> {
        &self.q_ks
    }

    /// Orthonormal basis of `KS` as `KΨ` coefficients.
    pub fn ks_basis(&self) -> &DMatrix<f64> {
        &self.ks_basis
    }

    pub fn diagnostics(&self) -> &Diagnostics {
        &self.diagnostics
    }

    fn check_len(&self, f: &FunctionVec) -> Result<()> {
        if f.coeffs.len() != self.num_atoms() {
            return Err(KoopmanError::DimensionMismatch {
                expected: self.num_atoms(),
                found: f.coeffs.len(),
            });
        }
        Ok(())
    }

    /// `Q(f)` for `f = Σ c_i Ψ_i`.
    pub fn coords(&self, f: &FunctionVec) -> Result<DVector<f64>> {
        self.check_len(f)?;
        Ok(self.iso.embed_matrix().columns(0, self.num_atoms()) * f.as_vector())
    }

    /// `Q(Kf)` for `f = Σ c_i Ψ_i`.
    pub fn koopman_coords(&self, f: &FunctionVec) -> Result<DVector<f64>> {
        self.check_len(f)?;
        let m = self.num_atoms();
        Ok(self.iso.embed_matrix().columns(m, m) * f.as_vector())
    }

    /// `E_K(f) = ‖Kf − P_S Kf‖ / ‖Kf‖`.
    pub fn relative_error(&self, f: &FunctionVec) -> Result<f64> {
        let z = self.koopman_coords(f)?;
        let fnorm = self.coords(f)?.norm();
        relative_error_of(self.q_s.coeffs(), &z, fnorm)
    }

    /// Dictionary coefficients of a function attaining the supremum.
    pub fn witness(&self) -> Result<FunctionVec> {
        Ok(self.solve_witness()?.0)
    }

    fn solve_witness(&self) -> Result<(FunctionVec, f64)> {
        let d = &self.decomposition;
        let top = d.dim_v - 1;
        let target = if d.swapped {
            d.u_vectors.column(top).into_owned()
        } else {
            d.v_vectors.column(top).into_owned()
        };
        let m = self.num_atoms();
        let system = self.iso.embed_matrix().columns(m, m).into_owned();
        let svd = checked_svd(&system)?;
        let c = svd.solve(&target, 1e-12 * svd.max_singular_value());
        let residual = (&system * &c - &target).norm();
        if !(residual <= 1e-8) {
            return Err(KoopmanError::InconsistentSystem { residual });
        }
        Ok((FunctionVec::new(c.iter().copied().collect()), residual))
    }

    /// `‖K‖_S = max_{f∈S} ‖Kf‖ / ‖f‖`.
    pub fn restricted_norm(&self) -> Result<f64> {
        let m = self.num_atoms();
        let z = self.iso.embed_matrix().columns(m, m) * self.model.basis();
        Ok(checked_svd(&z)?.max_singular_value())
    }

    /// Eigenpair residuals `‖Kφ − λφ‖ / ‖φ‖` of `K_approx` with the bound
    /// `‖K‖_S · I_K(S)`.
    pub fn residuals(&self) -> Result<Vec<EigenResidual>> {
        let m = self.num_atoms();
        let embed = self.iso.embed_matrix().map(|x| Complex::new(x, 0.0));
        let basis = self.model.basis().map(|x| Complex::new(x, 0.0));
        let e_s = embed.columns(0, m) * &basis;
        let e_k = embed.columns(m, m) * &basis;
        let bound = self.restricted_norm()? * self.proximity;
        Ok(self
            .model
            .left_eigenpairs()?
            .into_iter()
            .map(|(lambda, w)| {
                let phi = &e_s * &w;
                let kphi = &e_k * &w;
                let residual = (kphi - &phi * lambda).norm() / phi.norm();
                EigenResidual {
                    lambda,
                    residual,
                    bound,
                }
            })
            .collect())
    }

    pub fn report(&self) -> Result<ProximityReport> {
        Ok(ProximityReport {
            invariance_proximity: self.proximity,
            principal_angles_rad: self.decomposition.angles.clone(),
            dim_s: self.dim_s(),
            dim_ks: self.dim_ks(),
            dim_w: self.dim_w(),
            witness_coeffs: self.witness()?.coeffs,
            diagnostics: self.diagnostics.clone(),
        })
    }

    /// Relative error of `f = Σ β_k Ψ̂_k` given orthonormal-basis coordinates.
    fn relative_error_orthonormal(&self, beta: &DVector<f64>) -> Result<f64> {
        let c = self.model.basis() * beta;
        self.relative_error(&FunctionVec::new(c.iter().copied().collect()))
    }
}

fn relative_error_of(q_s: &DMatrix<f64>, z: &DVector<f64>, fnorm: f64) -> Result<f64> {
    let znorm = z.norm();
    if !(znorm > 1e-14 * fnorm) {
        return Err(KoopmanError::ZeroImage { norm: znorm });
    }
    let proj = q_s * q_s.tr_mul(z);
    Ok((z - proj).norm() / znorm)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenResidual {
    pub lambda: Complex<f64>,
    pub residual: f64,
    pub bound: f64,
}

/// Runs the full computation and returns the report.
pub fn invariance_proximity(
    atoms: &[Expr],
    dynamics: Option<&DynamicsMap>,
    space: &dyn InnerProductSpace,
    tol: &Tolerances,
) -> Result<ProximityReport> {
    ProximityAnalysis::compute(atoms, dynamics, space, tol)?.report()
}

pub fn build_model(
    atoms: &[Expr],
    dynamics: Option<&DynamicsMap>,
    space: &dyn InnerProductSpace,
    tol: &Tolerances,
) -> Result<KoopmanModel> {
    KoopmanModel::build(atoms, dynamics, space, tol.rank_tol)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleResult {
    /// Largest sampled `E_K` before refinement.
    pub sampled_max: f64,
    /// Largest `E_K` after gradient refinement of the best sample.
    pub oracle_max: f64,
    pub argmax: FunctionVec,
    /// Number of samples with `‖Kf‖ ≈ 0`, skipped.
    pub skipped: usize,
    /// Samples (including refinement iterates) exceeding `bound`.
    pub violations: usize,
}

/// Seeded lower bound on the proximity by sampling `E_K` over the unit sphere
/// of `S` and refining the best sample.
///
/// Refinement is projected gradient ascent with central finite differences
/// (`fd_step`), starting step `1e-3`, grown on success and halved on failure,
/// for at most 200 accepted or rejected steps.
pub fn proximity_oracle(
    analysis: &ProximityAnalysis,
    n_samples: usize,
    seed: u64,
    bound: f64,
) -> OracleResult {
    const REFINE_STEPS: usize = 200;
    const FD_STEP: f64 = 1e-6;
    let dim = analysis.model().rank();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eval = |beta: &DVector<f64>| -> Option<f64> {
        analysis.relative_error_orthonormal(&beta.normalize()).ok()
    };

    let mut best: Option<(DVector<f64>, f64)> = None;
    let (mut skipped, mut violations) = (0usize, 0usize);
    for _ in 0..n_samples.max(1) {
        let mut beta = DVector::from_fn(dim, |_, _| StandardNormal.sample(&mut rng));
        let norm: f64 = beta.norm();
        if norm == 0.0 {
            skipped += 1;
            continue;
        }
        beta /= norm;
        match eval(&beta) {
            Some(e) => {
                if e > bound {
                    violations += 1;
                }
                // strict comparison keeps the lowest index on ties
                if best.as_ref().is_none_or(|(_, b)| e > *b) {
                    best = Some((beta, e));
                }
            }
            None => skipped += 1,
        }
    }

    let Some((mut beta, sampled_max)) = best else {
        return OracleResult {
            sampled_max: 0.0,
            oracle_max: 0.0,
            argmax: FunctionVec::new(vec![0.0; analysis.num_atoms()]),
            skipped,
            violations,
        };
    };
    let mut value = sampled_max;
    let mut step = 1e-3;
    for _ in 0..REFINE_STEPS {
        let mut grad = DVector::zeros(dim);
        for k in 0..dim {
            let mut plus = beta.clone();
            let mut minus = beta.clone();
            plus[k] += FD_STEP;
            minus[k] -= FD_STEP;
            match (eval(&plus), eval(&minus)) {
                (Some(a), Some(b)) => grad[k] = (a - b) / (2.0 * FD_STEP),
                _ => grad[k] = 0.0,
            }
        }
        let tangent = &grad - &beta * grad.dot(&beta);
        let tnorm = tangent.norm();
        if tnorm < 1e-14 || step < 1e-14 {
            break;
        }
        let cand = (&beta + tangent * (step / tnorm)).normalize();
        match eval(&cand) {
            Some(e) if e > value => {
                if e > bound {
                    violations += 1;
                }
                beta = cand;
                value = e;
                step *= 2.0;
            }
            _ => step *= 0.5,
        }
    }
    let c = analysis.model().basis() * &beta;
    OracleResult {
        sampled_max,
        oracle_max: value,
        argmax: FunctionVec::new(c.iter().copied().collect()),
        skipped,
        violations,
    }
}

/// Percent prediction errors `100 ‖Ψ̂(x(k)) − K_approxᵏ Ψ̂(x₀)‖ / ‖Ψ̂(x(k))‖`
/// for `k = 1 … horizon`.
pub fn trajectory_error(
    model: &KoopmanModel,
    dynamics: &DynamicsMap,
    x0: &[f64],
    horizon: usize,
) -> Result<Vec<f64>> {
    let mut x = x0.to_vec();
    let mut next = vec![0.0; x.len()];
    let mut predicted = model.evaluate(x0);
    let mut errors = Vec::with_capacity(horizon);
    for step in 1..=horizon {
        dynamics.apply_into(&x, &mut next);
        std::mem::swap(&mut x, &mut next);
        predicted = model.k_approx() * predicted;
        let actual = model.evaluate(&x);
        errors.push(step_error(&actual, &predicted).ok_or(KoopmanError::ZeroNorm { step })?);
    }
    Ok(errors)
}

/// `100 ‖actual − predicted‖ / ‖actual‖`, `None` when `actual` vanishes.
pub fn step_error(actual: &DVector<f64>, predicted: &DVector<f64>) -> Option<f64> {
    let n = actual.norm();
    if n < 1e-14 {
        return None;
    }
    Some(100.0 * (actual - predicted).norm() / n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::{Domain, QuadratureSpace};

    fn atoms(src: &[&str]) -> Vec<Expr> {
        src.iter().map(|s| Expr::parse(s, 2).unwrap()).collect()
    }

    fn sec7() -> DynamicsMap {
        DynamicsMap::parse(&["0.9*x1", "0.4*(sin(x2)+x1^2)+0.01*x2^2"]).unwrap()
    }

    fn square() -> QuadratureSpace {
        QuadratureSpace::new(Domain::cube(2, -1.0, 1.0).unwrap(), 20).unwrap()
    }

    fn analysis(src: &[&str]) -> ProximityAnalysis {
        ProximityAnalysis::compute(
            &atoms(src),
            Some(&sec7()),
            &square(),
            &Tolerances::default(),
        )
        .unwrap()
    }

    #[test]
    fn model_on_constant_and_x1() {
        let m = KoopmanModel::build(&atoms(&["1", "x1"]), Some(&sec7()), &square(), 1e-10).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.9]);
        assert!((m.k_approx() - expected).amax() < 1e-13);
    }

    #[test]
    fn model_on_invariant_subspace_has_powers_of_point_nine() {
        let m = KoopmanModel::build(
            &atoms(&["1", "x1", "x1^2"]),
            Some(&sec7()),
            &square(),
            1e-10,
        )
        .unwrap();
        let mut ev: Vec<f64> = m.eigenvalues().iter().map(|z| z.re).collect();
        ev.sort_by(|a, b| b.total_cmp(a));
        for (got, want) in ev.iter().zip([1.0, 0.9, 0.81]) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn model_with_duplicate_atom_is_rank_one() {
        let m =
            KoopmanModel::build(&atoms(&["x1", "x1"]), Some(&sec7()), &square(), 1e-10).unwrap();
        assert_eq!(m.rank(), 1);
        assert!((m.k_approx()[(0, 0)] - 0.9).abs() < 1e-12);
    }

    #[test]
    fn k_approx_entries_are_inner_products() {
        let q = square();
        let t = sec7();
        let a = atoms(&["1", "x1", "x2", "x1^2"]);
        let m = KoopmanModel::build(&a, Some(&t), &q, 1e-10).unwrap();
        // rebuild each orthonormal basis function as an expression and integrate directly
        let b = m.basis();
        let hat: Vec<Expr> = (0..m.rank())
            .map(|k| {
                let terms: Vec<String> = (0..a.len())
                    .map(|i| format!("({:?})*({})", b[(i, k)], a[i]))
                    .collect();
                Expr::parse(&terms.join("+"), 2).unwrap()
            })
            .collect();
        for i in 0..m.rank() {
            let k_hat = crate::expr::compose_with_map(&hat[i], &t).unwrap();
            for j in 0..m.rank() {
                let ip = q.inner_product(&k_hat, &hat[j]).unwrap();
                assert!((ip - m.k_approx()[(i, j)]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn prediction_is_linear() {
        let m = KoopmanModel::build(
            &atoms(&["1", "x1", "x2", "x1^2"]),
            Some(&sec7()),
            &square(),
            1e-10,
        )
        .unwrap();
        let g = DVector::from_vec(vec![0.3, -1.0, 2.0, 0.5]);
        let h = DVector::from_vec(vec![1.5, 0.25, -0.75, 1.0]);
        let (a, b) = (2.0, -3.0);
        let lhs = m.predict(&(&g * a + &h * b));
        let rhs = m.predict(&g) * a + m.predict(&h) * b;
        assert!((lhs - rhs).amax() < 1e-13);
    }

    #[test]
    fn table_values() {
        let s1 = analysis(&["1", "x1", "x1^2"]);
        assert!(s1.proximity() <= 1e-8);
        let s2 = analysis(&["1", "x1", "x2", "x1^2"]);
        assert!(
            (s2.proximity() - 0.048).abs() <= 0.002,
            "{}",
            s2.proximity()
        );
        let s3 = analysis(&["1", "x1", "x2", "x1^2", "x2^2"]);
        assert!(
            (s3.proximity() - 0.823).abs() <= 0.005,
            "{}",
            s3.proximity()
        );
        assert_eq!((s3.dim_s(), s3.dim_ks(), s3.dim_w()), (5, 5, 7));
    }

    #[test]
    fn witness_attains_proximity() {
        let s3 = analysis(&["1", "x1", "x2", "x1^2", "x2^2"]);
        let w = s3.witness().unwrap();
        let e = s3.relative_error(&w).unwrap();
        assert!((e - s3.proximity()).abs() < 1e-8);
        assert!((e - 0.823).abs() <= 0.005);

        let s1 = analysis(&["1", "x1", "x1^2"]);
        assert!(s1.relative_error(&s1.witness().unwrap()).unwrap() <= 1e-8);
    }

    #[test]
    fn one_dimensional_witness_is_the_atom() {
        let a = analysis(&["x2"]);
        let w = a.witness().unwrap();
        assert_eq!(w.coeffs.len(), 1);
        assert!(w.coeffs[0].abs() > 0.0);
        let e = a.relative_error(&FunctionVec::new(vec![1.0])).unwrap();
        assert!((e - a.proximity()).abs() < 1e-12);
    }

    #[test]
    fn relative_error_zero_on_invariant_subspace() {
        let s1 = analysis(&["1", "x1", "x1^2"]);
        for c in [[1.0, 0.0, 0.0], [0.3, -2.0, 1.0], [0.0, 0.0, 1.0]] {
            assert!(s1.relative_error(&FunctionVec::new(c.to_vec())).unwrap() <= 1e-10);
        }
    }

    #[test]
    fn relative_error_rejects_zero_image_and_bad_length() {
        // K(x1 - x1) = 0 through the duplicated atom
        let a = analysis(&["x1", "x1"]);
        assert!(matches!(
            a.relative_error(&FunctionVec::new(vec![1.0, -1.0])),
            Err(KoopmanError::ZeroImage { .. })
        ));
        assert!(matches!(
            a.relative_error(&FunctionVec::new(vec![1.0])),
            Err(KoopmanError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn residuals_on_x1() {
        let a = analysis(&["x1"]);
        let r = a.residuals().unwrap();
        assert_eq!(r.len(), 1);
        assert!((r[0].lambda.re - 0.9).abs() < 1e-12 && r[0].lambda.im == 0.0);
        assert!(r[0].residual < 1e-12);
    }

    #[test]
    fn residuals_on_invariant_subspace() {
        let a = analysis(&["1", "x1", "x1^2"]);
        let r = a.residuals().unwrap();
        assert_eq!(r.len(), 3);
        for e in &r {
            assert!(e.residual <= 1e-8);
        }
    }

    #[test]
    fn oracle_on_invariant_subspace_is_zero() {
        let a = analysis(&["1", "x1", "x1^2"]);
        let o = proximity_oracle(&a, 500, 7, a.proximity() + 1e-8);
        assert!(o.oracle_max <= 1e-10);
        assert_eq!(o.violations, 0);
    }

    #[test]
    fn oracle_single_sample_is_valid() {
        let a = analysis(&["1", "x1", "x2", "x1^2", "x2^2"]);
        let o = proximity_oracle(&a, 1, 3, a.proximity() + 1e-8);
        assert!(o.oracle_max <= a.proximity() + 1e-8);
        assert!(o.sampled_max <= o.oracle_max);
    }

    #[test]
    fn trajectory_errors_zero_on_invariant_subspace() {
        let m = KoopmanModel::build(
            &atoms(&["1", "x1", "x1^2"]),
            Some(&sec7()),
            &square(),
            1e-10,
        )
        .unwrap();
        let e = trajectory_error(&m, &sec7(), &[0.7, -0.4], 10).unwrap();
        assert_eq!(e.len(), 10);
        assert!(e.iter().all(|v| *v <= 1e-8));
        assert!(trajectory_error(&m, &sec7(), &[0.7, -0.4], 0)
            .unwrap()
            .is_empty());
        let v = m.evaluate(&[0.7, -0.4]);
        assert_eq!(step_error(&v, &v), Some(0.0));
    }

    #[test]
    fn trajectory_error_zero_norm() {
        let m = KoopmanModel::build(&atoms(&["x1"]), Some(&sec7()), &square(), 1e-10).unwrap();
        let t = DynamicsMap::parse(&["0*x1", "x2"]).unwrap();
        assert!(matches!(
            trajectory_error(&m, &t, &[0.5, 0.5], 3),
            Err(KoopmanError::ZeroNorm { step: 1 })
        ));
    }

    #[test]
    fn report_invariants() {
        let a = analysis(&["1", "x1", "x2", "x1^2", "x2^2"]);
        let r = a.report().unwrap();
        let last = *r.principal_angles_rad.last().unwrap();
        assert!((r.invariance_proximity - last.sin()).abs() < 1e-12);
        assert!(r.dim_ks <= r.dim_s && r.dim_s <= r.dim_w && r.dim_w <= r.dim_s + r.dim_ks);
        assert!(r.principal_angles_rad.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(r.diagnostics.quadrature_order, Some(20));
        assert!(r.diagnostics.order_doubling_change.unwrap() < 1e-9);
        assert!(r.diagnostics.warnings.is_empty());
    }

    #[test]
    fn low_order_quadrature_warns() {
        let q = QuadratureSpace::new(Domain::cube(2, -1.0, 1.0).unwrap(), 2).unwrap();
        let a = ProximityAnalysis::compute(
            &atoms(&["1", "x1", "x2", "x2^2"]),
            Some(&sec7()),
            &q,
            &Tolerances::default(),
        )
        .unwrap();
        assert_eq!(a.diagnostics().warnings.len(), 1);
    }
}
