//! Subspace geometry in Gram coordinates.
//!
//! Everything here is generic over the scalar field (`f64` or
//! `Complex<f64>`). Inner products are linear in the first argument and
//! conjugate-linear in the second. A Gram matrix `G` of generators `g_1 … g_m`
//! is stored so that `⟨Σ a_i g_i, Σ b_j g_j⟩ = bᴴ G a`, i.e.
//! `G[(i, j)] = ⟨g_j, g_i⟩`; over the reals this is the usual symmetric Gram.

use nalgebra::{Complex, ComplexField, DMatrix, DVector, SymmetricEigen};
use thiserror::Error;

pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// Relative threshold below which a negative Gram eigenvalue is treated as round-off.
pub const PSD_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("degenerate space: the generators span only the zero function")]
    DegenerateSpace,
    #[error("Gram matrix is not positive semidefinite: eigenvalue {min} vs largest {max}")]
    NotPsd { min: f64, max: f64 },
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("columns are not orthonormal (deviation {0:e})")]
    NotOrthonormal(f64),
    #[error("non-finite entries in input matrix")]
    NonFinite,
    #[error("brute-force search did not converge within {0} iterations")]
    BudgetExceeded(usize),
    #[error("unsupported input: {0}")]
    Unsupported(String),
    #[error("{0} did not produce an accurate factorization")]
    ConvergenceFailure(&'static str),
}

pub trait Scalar: ComplexField<RealField = f64> + Copy {
    /// Thin SVD of `m`; `None` if the factorization fails.
    #[doc(hidden)]
    fn thin_svd(m: &DMatrix<Self>) -> Option<Svd<Self>>;
}

impl Scalar for f64 {
    fn thin_svd(m: &DMatrix<f64>) -> Option<Svd<f64>> {
        faer_thin_svd(m, |s| s)
    }
}

impl Scalar for Complex<f64> {
    fn thin_svd(m: &DMatrix<Complex<f64>>) -> Option<Svd<Complex<f64>>> {
        faer_thin_svd(m, |s| s.re)
    }
}

fn faer_thin_svd<T>(m: &DMatrix<T>, real: impl Fn(T) -> f64) -> Option<Svd<T>>
where
    T: Scalar + faer::traits::ComplexField,
{
    let (r, c) = m.shape();
    let fm = faer::Mat::<T>::from_fn(r, c, |i, j| m[(i, j)]);
    let svd = fm.thin_svd().ok()?;
    let (u, s, v) = (svd.U(), svd.S().column_vector(), svd.V());
    let k = r.min(c);
    Some(Svd {
        u: DMatrix::from_fn(r, k, |i, j| u[(i, j)]),
        singular_values: (0..k).map(|i| real(s[i])).collect(),
        v: DMatrix::from_fn(c, k, |i, j| v[(i, j)]),
    })
}

/// A basis `B` with `Bᴴ G B = I_r`, plus the spectrum used to pick `r`.
#[derive(Debug, Clone, PartialEq)]
pub struct Orthonormalization<T: Scalar> {
    pub coeffs: DMatrix<T>,
    pub rank: usize,
    /// Eigenvalues of `G`, descending.
    pub eigenvalues: Vec<f64>,
}

/// Symmetric orthogonalization `B = V_r Λ_r^{-1/2}` from `G = V Λ Vᴴ`.
///
/// Keeps eigenvalues above `rank_tol · λ_max`, columns ordered by descending
/// eigenvalue, each column phase-normalized so its largest entry is real positive.
pub fn orthonormalize<T: Scalar>(
    gram: &DMatrix<T>,
    rank_tol: f64,
) -> Result<Orthonormalization<T>, GeometryError> {
    if !gram.is_square() {
        return Err(GeometryError::DimensionMismatch {
            expected: gram.nrows(),
            found: gram.ncols(),
        });
    }
    if gram.iter().any(|v| !v.is_finite()) {
        return Err(GeometryError::NonFinite);
    }
    let m = gram.nrows();
    if m == 0 {
        return Err(GeometryError::DegenerateSpace);
    }
    let herm = hermitian_part(gram);
    let eig = SymmetricEigen::new(herm.clone());
    let lam = DMatrix::from_diagonal(&eig.eigenvalues.map(T::from_real));
    let defect = max_modulus(&(&herm * &eig.eigenvectors - &eig.eigenvectors * lam));
    if !(defect <= 1e-10 * max_modulus(&herm).max(f64::MIN_POSITIVE)) {
        return Err(GeometryError::ConvergenceFailure(
            "symmetric eigendecomposition",
        ));
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let eigenvalues: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let lmax = eigenvalues[0];
    if lmax <= 0.0 {
        return Err(GeometryError::DegenerateSpace);
    }
    let lmin = eigenvalues[m - 1];
    if lmin < -PSD_TOL * lmax {
        return Err(GeometryError::NotPsd {
            min: lmin,
            max: lmax,
        });
    }
    let rank = eigenvalues
        .iter()
        .take_while(|&&l| l > rank_tol * lmax)
        .count();
    if rank == 0 {
        return Err(GeometryError::DegenerateSpace);
    }
    let mut coeffs = DMatrix::<T>::zeros(m, rank);
    for (c, &k) in order.iter().take(rank).enumerate() {
        let mut col = eig.eigenvectors.column(k).into_owned();
        normalize_phase(&mut col);
        let scale = T::from_real(1.0 / eigenvalues[c].sqrt());
        coeffs.set_column(c, &(col * scale));
    }
    Ok(Orthonormalization {
        coeffs,
        rank,
        eigenvalues,
    })
}

fn max_modulus<T: Scalar>(m: &DMatrix<T>) -> f64 {
    m.iter().map(|v| v.modulus()).fold(0.0, f64::max)
}

/// Thin singular value decomposition `M = U diag(σ) Vᴴ`, `k = min(rows, cols)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Svd<T: Scalar> {
    /// `rows × k`, orthonormal columns.
    pub u: DMatrix<T>,
    /// Length `k`, nonnegative, in the order returned by the factorization.
    pub singular_values: Vec<f64>,
    /// `cols × k`, orthonormal columns.
    pub v: DMatrix<T>,
}

impl<T: Scalar> Svd<T> {
    fn defect(&self, m: &DMatrix<T>) -> f64 {
        if self
            .singular_values
            .iter()
            .any(|s| !(s.is_finite() && *s >= 0.0))
        {
            return f64::INFINITY;
        }
        let sigma = DMatrix::from_diagonal(&DVector::from_iterator(
            self.singular_values.len(),
            self.singular_values.iter().map(|&s| T::from_real(s)),
        ));
        let recon = max_modulus(&(&self.u * sigma * self.v.adjoint() - m));
        let scale = max_modulus(m).max(f64::MIN_POSITIVE);
        (recon / scale)
            .max(orthonormality_defect(&self.u))
            .max(orthonormality_defect(&self.v))
    }

    /// Largest singular value (0 for an empty matrix).
    pub fn max_singular_value(&self) -> f64 {
        self.singular_values.iter().copied().fold(0.0, f64::max)
    }

    /// Minimum-norm least-squares solution of `M x = b`, ignoring singular
    /// values at or below `cutoff`.
    pub fn solve(&self, b: &DVector<T>, cutoff: f64) -> DVector<T> {
        let mut y = self.u.adjoint() * b;
        for (k, &s) in self.singular_values.iter().enumerate() {
            y[k] = if s > cutoff {
                y[k].unscale(s)
            } else {
                T::zero()
            };
        }
        &self.v * y
    }
}

/// Thin SVD (computed with faer) whose result is verified: reconstruction
/// and orthonormality must hold to 1e-11 relative.
pub fn checked_svd<T: Scalar>(m: &DMatrix<T>) -> Result<Svd<T>, GeometryError> {
    const TOL: f64 = 1e-11;
    if m.iter().any(|v| !v.is_finite()) {
        return Err(GeometryError::NonFinite);
    }
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return Ok(Svd {
            u: DMatrix::zeros(r, 0),
            singular_values: Vec::new(),
            v: DMatrix::zeros(c, 0),
        });
    }
    match T::thin_svd(m) {
        Some(svd) if svd.defect(m) <= TOL => Ok(svd),
        _ => Err(GeometryError::ConvergenceFailure(
            "singular value decomposition",
        )),
    }
}

fn hermitian_part<T: Scalar>(g: &DMatrix<T>) -> DMatrix<T> {
    (g + g.adjoint()) * T::from_real(0.5)
}

/// Rotates `v` so that its largest-magnitude entry is real and positive.
fn normalize_phase<T: Scalar>(v: &mut DVector<T>) {
    let Some((k, _)) = v
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.modulus().total_cmp(&b.1.modulus()).then(b.0.cmp(&a.0)))
    else {
        return;
    };
    let pivot = v[k];
    let r = pivot.modulus();
    if r > 0.0 {
        let phase = pivot.conjugate().unscale(r);
        v.iter_mut().for_each(|x| *x *= phase);
    }
}

/// Inner-product preserving map from span(generators) onto `F^r`.
///
/// The coordinate of `f = Σ a_i g_i` is `(⟨f, w_1⟩, …, ⟨f, w_r⟩)` for an
/// orthonormal basis `w` of the span, i.e. `embed(a) = Bᴴ G a`.
#[derive(Debug, Clone, PartialEq)]
pub struct Isomorphism<T: Scalar> {
    basis: DMatrix<T>,
    embed: DMatrix<T>,
}

impl<T: Scalar> Isomorphism<T> {
    pub fn build(gram: &DMatrix<T>, rank_tol: f64) -> Result<Self, GeometryError> {
        let orth = orthonormalize(gram, rank_tol)?;
        Ok(Self::with_basis(gram, orth.coeffs))
    }

    /// Uses a caller-supplied basis `B` with `Bᴴ G B = I`.
    pub fn with_basis(gram: &DMatrix<T>, basis: DMatrix<T>) -> Self {
        let embed = basis.adjoint() * gram;
        Isomorphism { basis, embed }
    }

    /// Dimension of the span.
    pub fn dim(&self) -> usize {
        self.embed.nrows()
    }

    pub fn num_generators(&self) -> usize {
        self.embed.ncols()
    }

    /// Generator coefficients of the orthonormal basis `w`.
    pub fn basis(&self) -> &DMatrix<T> {
        &self.basis
    }

    pub fn embed_matrix(&self) -> &DMatrix<T> {
        &self.embed
    }

    pub fn embed(&self, coeffs: &DVector<T>) -> DVector<T> {
        &self.embed * coeffs
    }

    /// Embeds every column of `coeffs`.
    pub fn embed_columns(&self, coeffs: &DMatrix<T>) -> DMatrix<T> {
        &self.embed * coeffs
    }
}

/// Orthonormal columns in a standard coordinate space.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceBasis<T: Scalar> {
    coeffs: DMatrix<T>,
}

impl<T: Scalar> SubspaceBasis<T> {
    /// Accepts `coeffs` whose columns are already orthonormal (within 1e-10).
    pub fn from_orthonormal(coeffs: DMatrix<T>) -> Result<Self, GeometryError> {
        if coeffs.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let dev = orthonormality_defect(&coeffs);
        if dev > 1e-10 {
            return Err(GeometryError::NotOrthonormal(dev));
        }
        Ok(SubspaceBasis { coeffs })
    }

    /// Orthonormal basis of the column span via SVD, dropping singular values
    /// below `rank_tol · σ_max`.
    pub fn from_columns(columns: &DMatrix<T>, rank_tol: f64) -> Result<Self, GeometryError> {
        if columns.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let n = columns.nrows();
        if columns.ncols() == 0 || n == 0 {
            return Ok(SubspaceBasis {
                coeffs: DMatrix::zeros(n, 0),
            });
        }
        let svd = checked_svd(columns)?;
        let u = svd.u;
        let mut idx: Vec<usize> = (0..svd.singular_values.len()).collect();
        idx.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        let smax = idx.first().map_or(0.0, |&k| svd.singular_values[k]);
        let keep: Vec<usize> = idx
            .into_iter()
            .filter(|&k| smax > 0.0 && svd.singular_values[k] > rank_tol * smax)
            .collect();
        let mut coeffs = DMatrix::zeros(n, keep.len());
        for (c, &k) in keep.iter().enumerate() {
            coeffs.set_column(c, &u.column(k));
        }
        Ok(SubspaceBasis { coeffs })
    }

    pub fn ambient_dim(&self) -> usize {
        self.coeffs.nrows()
    }

    pub fn rank(&self) -> usize {
        self.coeffs.ncols()
    }

    pub fn coeffs(&self) -> &DMatrix<T> {
        &self.coeffs
    }

    /// Applies the same linear map to every basis vector (no re-orthonormalization).
    pub fn mapped(&self, map: &DMatrix<T>) -> Result<Self, GeometryError> {
        Self::from_orthonormal(map * &self.coeffs)
    }
}

/// `max |Cᴴ C − I|`.
pub fn orthonormality_defect<T: Scalar>(c: &DMatrix<T>) -> f64 {
    let k = c.ncols();
    let gram = c.adjoint() * c;
    (gram - DMatrix::<T>::identity(k, k))
        .iter()
        .map(|v| v.modulus())
        .fold(0.0, f64::max)
}

/// Principal angles and vectors between `U` (dimension `m1`) and `V` (`m2 ≤ m1`).
#[derive(Debug, Clone, PartialEq)]
pub struct PrincipalDecomposition<T: Scalar> {
    /// Ascending, in `[0, π/2]`.
    pub angles: Vec<f64>,
    /// `u_i` as columns, ambient coordinates.
    pub u_vectors: DMatrix<T>,
    /// `v_i` as columns, ambient coordinates.
    pub v_vectors: DMatrix<T>,
    pub dim_u: usize,
    pub dim_v: usize,
    /// True when the inputs were exchanged so that `dim_u ≥ dim_v`.
    pub swapped: bool,
}

impl<T: Scalar> PrincipalDecomposition<T> {
    pub fn max_angle(&self) -> Option<f64> {
        self.angles.last().copied()
    }
}

/// Principal angles via the SVD of `Uᴴ V`, with sine-based recomputation of
/// small angles (`σ² > 1/2`) from the singular values of `V − U Uᴴ V`.
pub fn principal_angles<T: Scalar>(
    qu: &SubspaceBasis<T>,
    qv: &SubspaceBasis<T>,
) -> Result<PrincipalDecomposition<T>, GeometryError> {
    if qu.ambient_dim() != qv.ambient_dim() {
        return Err(GeometryError::DimensionMismatch {
            expected: qu.ambient_dim(),
            found: qv.ambient_dim(),
        });
    }
    let swapped = qu.rank() < qv.rank();
    let (u, v) = if swapped {
        (qv.coeffs(), qu.coeffs())
    } else {
        (qu.coeffs(), qv.coeffs())
    };
    let (n, m1, m2) = (u.nrows(), u.ncols(), v.ncols());
    if m2 == 0 {
        return Ok(PrincipalDecomposition {
            angles: Vec::new(),
            u_vectors: DMatrix::zeros(n, 0),
            v_vectors: DMatrix::zeros(n, 0),
            dim_u: m1,
            dim_v: m2,
            swapped,
        });
    }

    let cross = u.adjoint() * v;
    let svd = checked_svd(&cross)?;
    let (a, b) = (&svd.u, &svd.v);
    let mut idx: Vec<usize> = (0..m2).collect();
    idx.sort_by(|&p, &q| {
        svd.singular_values[q]
            .total_cmp(&svd.singular_values[p])
            .then(p.cmp(&q))
    });
    let cosines: Vec<f64> = idx
        .iter()
        .map(|&k| svd.singular_values[k].clamp(0.0, 1.0))
        .collect();

    // sine side: right singular vectors of V − U UᴴV resolve small angles
    let resid = v - u * &cross;
    let rsvd = checked_svd(&resid)?;
    let mut sidx: Vec<usize> = (0..m2).collect();
    sidx.sort_by(|&p, &q| {
        rsvd.singular_values[p]
            .total_cmp(&rsvd.singular_values[q])
            .then(p.cmp(&q))
    });

    let mut angles = Vec::with_capacity(m2);
    let mut u_vectors = DMatrix::zeros(n, m2);
    let mut v_vectors = DMatrix::zeros(n, m2);
    for col in 0..m2 {
        let c = cosines[col];
        let (mut ui, vi, angle) = if c * c > 0.5 {
            let k = sidx[col];
            let vi = v * rsvd.v.column(k);
            let proj = u * (u.adjoint() * &vi);
            let norm = proj.norm();
            (
                proj.unscale(norm),
                vi,
                rsvd.singular_values[k].clamp(0.0, 1.0).asin(),
            )
        } else {
            let k = idx[col];
            (u * a.column(k), v * b.column(k), c.acos())
        };
        // ⟨u_i, v_i⟩ = v_iᴴ u_i made real nonnegative
        let ip = vi.dotc(&ui);
        let r = ip.modulus();
        if r > 0.0 {
            let phase = ip.conjugate().unscale(r);
            ui *= phase;
        }
        angles.push(angle);
        u_vectors.set_column(col, &ui);
        v_vectors.set_column(col, &vi);
    }
    Ok(PrincipalDecomposition {
        angles,
        u_vectors,
        v_vectors,
        dim_u: m1,
        dim_v: m2,
        swapped,
    })
}

/// Principal angles by directly solving the recursive max-correlation problem
/// over unit vectors, without any matrix factorization.
///
/// Real field only, subspace dimensions up to 3. Each step grid-searches the
/// unit sphere of the remaining admissible directions in `U`, maximizing
/// `max_v |⟨u, v⟩|` (the inner max is attained at the normalized projection),
/// then polishes the best grid point with projected gradient ascent.
pub fn principal_angles_bruteforce(
    qu: &SubspaceBasis<f64>,
    qv: &SubspaceBasis<f64>,
    budget: usize,
) -> Result<Vec<f64>, GeometryError> {
    if qu.ambient_dim() != qv.ambient_dim() {
        return Err(GeometryError::DimensionMismatch {
            expected: qu.ambient_dim(),
            found: qv.ambient_dim(),
        });
    }
    let (m1, m2) = (qu.rank(), qv.rank());
    if m1 > 3 || m2 > 3 {
        return Err(GeometryError::Unsupported(format!(
            "brute force handles dimensions up to 3, got {m1} and {m2}"
        )));
    }
    let (n, steps) = (qu.ambient_dim(), m1.min(m2));
    // correlation ⟨U a, V b⟩ = aᵀ C b, assembled entry by entry
    let mut corr = DMatrix::<f64>::zeros(m1, m2);
    for i in 0..m1 {
        for j in 0..m2 {
            corr[(i, j)] = (0..n)
                .map(|k| qu.coeffs()[(k, i)] * qv.coeffs()[(k, j)])
                .sum();
        }
    }
    let mut chosen_a: Vec<DVector<f64>> = Vec::new();
    let mut chosen_b: Vec<DVector<f64>> = Vec::new();
    let mut angles = Vec::with_capacity(steps);
    for _ in 0..steps {
        let ca = complement_basis(m1, &chosen_a);
        let cb = complement_basis(m2, &chosen_b);
        let reduced = ca.transpose() * &corr * &cb;
        let objective = |alpha: &DVector<f64>| (reduced.transpose() * alpha).norm_squared();

        let mut best = sphere_grid(reduced.nrows())
            .into_iter()
            .map(|p| {
                let f = objective(&p);
                (p, f)
            })
            .max_by(|x, y| x.1.total_cmp(&y.1))
            .expect("grid is nonempty");

        let mut step = 0.5;
        let mut converged = reduced.nrows() == 1;
        for _ in 0..budget {
            if converged {
                break;
            }
            let (alpha, f) = &best;
            let grad = (&reduced * (reduced.transpose() * alpha)) * 2.0;
            let tangent = &grad - alpha * grad.dot(alpha);
            if tangent.norm() < 1e-13 || step < 1e-16 {
                converged = true;
                break;
            }
            let cand = (alpha + &tangent * step).normalize();
            let fc = objective(&cand);
            if fc > *f {
                best = (cand, fc);
                step *= 1.5;
            } else {
                step *= 0.5;
            }
        }
        if !converged {
            return Err(GeometryError::BudgetExceeded(budget));
        }
        let (alpha, f) = best;
        let proj = reduced.transpose() * &alpha;
        let beta = if proj.norm() > 0.0 {
            proj.normalize()
        } else {
            let mut e = DVector::zeros(proj.len());
            e[0] = 1.0;
            e
        };
        chosen_a.push(&ca * alpha);
        chosen_b.push(&cb * beta);
        angles.push(f.sqrt().min(1.0).acos());
    }
    Ok(angles)
}

/// Orthonormal basis (columns) of the orthogonal complement of `taken` in `R^dim`.
fn complement_basis(dim: usize, taken: &[DVector<f64>]) -> DMatrix<f64> {
    let mut basis: Vec<DVector<f64>> = taken.to_vec();
    let mut out = Vec::new();
    for k in 0..dim {
        if basis.len() == dim {
            break;
        }
        let mut e = DVector::<f64>::zeros(dim);
        e[k] = 1.0;
        for _ in 0..2 {
            for b in &basis {
                let c = e.dot(b);
                e -= b * c;
            }
        }
        let nrm = e.norm();
        if nrm > 1e-8 {
            e /= nrm;
            basis.push(e.clone());
            out.push(e);
        }
    }
    DMatrix::from_columns(&out)
}

/// Points on the unit sphere of `R^dim` (dim ≤ 3), one per antipodal pair.
fn sphere_grid(dim: usize) -> Vec<DVector<f64>> {
    use std::f64::consts::PI;
    match dim {
        1 => vec![DVector::from_element(1, 1.0)],
        2 => (0..720)
            .map(|k| {
                let t = PI * k as f64 / 720.0;
                DVector::from_vec(vec![t.cos(), t.sin()])
            })
            .collect(),
        3 => {
            let mut pts = Vec::new();
            for i in 0..=90 {
                let theta = 0.5 * PI * i as f64 / 90.0;
                for j in 0..360 {
                    let phi = 2.0 * PI * j as f64 / 360.0;
                    pts.push(DVector::from_vec(vec![
                        theta.sin() * phi.cos(),
                        theta.sin() * phi.sin(),
                        theta.cos(),
                    ]));
                }
            }
            pts
        }
        _ => Vec::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Complex;
    use std::f64::consts::FRAC_PI_2;

    fn basis(cols: &[&[f64]]) -> SubspaceBasis<f64> {
        let n = cols[0].len();
        let m = DMatrix::from_fn(n, cols.len(), |r, c| cols[c][r]);
        SubspaceBasis::from_columns(&m, 1e-12).unwrap()
    }

    #[test]
    fn svd_of_cosine_cluster_is_accurate() {
        // singular values {1, 1, 1, 0.99885632…}; a naive bidiagonal SVD stalls here
        let d = [
            -0.45753651887500985,
            0.5287988895467416,
            0.11341822273319051,
            -0.7057472171799752,
            -0.5943096110064661,
            -0.7735130787073903,
            -0.07619073414241426,
            -0.20655397327218306,
            0.6516921290425381,
            -0.34393927776209643,
            0.17379470614655812,
            -0.6516463105499909,
            -0.10978205758742479,
            -0.060489528229743864,
            0.9751379190327673,
            0.18264117260683335,
        ];
        let c = DMatrix::from_column_slice(4, 4, &d);
        let svd = checked_svd(&c).unwrap();
        let mut s = svd.singular_values.clone();
        s.sort_by(|a, b| b.total_cmp(a));
        for (got, want) in s.iter().zip([1.0, 1.0, 1.0, 0.99885632]) {
            assert!((got - want).abs() < 1e-8, "{got} vs {want}");
        }
        let x = DVector::from_vec(vec![0.3, -1.0, 2.0, 0.5]);
        let b = &c * &x;
        assert!((svd.solve(&b, 1e-12) - x).amax() < 1e-12);
    }

    #[test]
    fn orthonormalize_identity() {
        let o = orthonormalize(&DMatrix::<f64>::identity(3, 3), DEFAULT_RANK_TOL).unwrap();
        assert_eq!(o.rank, 3);
        assert!((o.coeffs.transpose() * &o.coeffs - DMatrix::identity(3, 3)).amax() < 1e-14);
    }

    #[test]
    fn orthonormalize_diagonal_scaling() {
        let g = DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 4.0 / 3.0]);
        let o = orthonormalize(&g, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(o.rank, 2);
        let expected = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 3f64.sqrt() / 2.0]);
        assert!((o.coeffs - expected).amax() < 1e-14);
    }

    #[test]
    fn orthonormalize_rank_deficient() {
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let o = orthonormalize(&g, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(o.rank, 1);
        let btgb = o.coeffs.transpose() * &g * &o.coeffs;
        assert!((btgb[(0, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn orthonormalize_errors() {
        assert_eq!(
            orthonormalize(&DMatrix::<f64>::zeros(2, 2), DEFAULT_RANK_TOL),
            Err(GeometryError::DegenerateSpace)
        );
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -0.5]);
        assert!(matches!(
            orthonormalize(&g, DEFAULT_RANK_TOL),
            Err(GeometryError::NotPsd { .. })
        ));
        // round-off-sized negative eigenvalue is tolerated and truncated
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1e-12]);
        assert_eq!(orthonormalize(&g, DEFAULT_RANK_TOL).unwrap().rank, 1);
    }

    #[test]
    fn isomorphism_examples() {
        let iso = Isomorphism::build(&DMatrix::<f64>::identity(3, 3), DEFAULT_RANK_TOL).unwrap();
        assert!((iso.embed_matrix() - DMatrix::identity(3, 3)).amax() < 1e-14);

        let g = DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 4.0 / 3.0]);
        let iso = Isomorphism::build(&g, DEFAULT_RANK_TOL).unwrap();
        let e1 = iso.embed(&DVector::from_vec(vec![1.0, 0.0]));
        let e2 = iso.embed(&DVector::from_vec(vec![0.0, 1.0]));
        assert!((e1[0] - 2.0).abs() < 1e-14 && e1[1].abs() < 1e-14);
        assert!((e2[1] - 2.0 / 3f64.sqrt()).abs() < 1e-14 && e2[0].abs() < 1e-14);
        assert!((e1.dot(&e1) - 4.0).abs() < 1e-13);
    }

    #[test]
    fn angles_examples() {
        let u = basis(&[&[1.0, 0.0]]);
        let v = basis(&[&[0.3f64.cos(), 0.3f64.sin()]]);
        let d = principal_angles(&u, &v).unwrap();
        assert!((d.angles[0] - 0.3).abs() < 1e-14);

        let d = principal_angles(&u, &u).unwrap();
        assert!(d.angles[0].abs() < 1e-14);

        let u = basis(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]]);
        let v = basis(&[&[0.0, 0.0, 1.0]]);
        let d = principal_angles(&u, &v).unwrap();
        assert_eq!(d.angles.len(), 1);
        assert!((d.angles[0] - FRAC_PI_2).abs() < 1e-14);

        // swapped order is recorded
        let d = principal_angles(&v, &u).unwrap();
        assert!(d.swapped);
        assert_eq!((d.dim_u, d.dim_v), (2, 1));
    }

    #[test]
    fn tiny_angles_resolved_by_sine_branch() {
        for t in [1e-6, 1e-9, 1e-12] {
            let u = basis(&[&[1.0, 0.0, 0.0]]);
            let v = basis(&[&[t.cos(), t.sin(), 0.0]]);
            let d = principal_angles(&u, &v).unwrap();
            assert!(
                (d.angles[0] - t).abs() < 1e-15 * 10.0 + 1e-6 * t,
                "{t}: {}",
                d.angles[0]
            );
        }
    }

    #[test]
    fn bruteforce_examples() {
        let u = basis(&[&[1.0, 0.0]]);
        let v = basis(&[&[0.3f64.cos(), 0.3f64.sin()]]);
        let a = principal_angles_bruteforce(&u, &v, 10_000).unwrap();
        assert!((a[0] - 0.3).abs() < 1e-6);

        let u = basis(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]]);
        let v = basis(&[&[0.0, 0.0, 1.0]]);
        let a = principal_angles_bruteforce(&u, &v, 10_000).unwrap();
        assert!((a[0] - FRAC_PI_2).abs() < 1e-6);

        let big = SubspaceBasis::from_orthonormal(DMatrix::<f64>::identity(4, 4)).unwrap();
        assert!(matches!(
            principal_angles_bruteforce(&big, &big, 10),
            Err(GeometryError::Unsupported(_))
        ));
    }

    #[test]
    fn complex_field_path() {
        type C = Complex<f64>;
        let i = C::new(0.0, 1.0);
        let one = C::new(1.0, 0.0);
        let zero = C::new(0.0, 0.0);
        // Hermitian PD Gram of two generators
        let g = DMatrix::from_row_slice(
            2,
            2,
            &[C::new(2.0, 0.0), i * 0.5, -i * 0.5, C::new(1.0, 0.0)],
        );
        let o = orthonormalize(&g, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(o.rank, 2);
        let id = o.coeffs.adjoint() * &g * &o.coeffs;
        assert!((id - DMatrix::<C>::identity(2, 2))
            .iter()
            .all(|z| z.norm() < 1e-12));

        let iso = Isomorphism::build(&g, DEFAULT_RANK_TOL).unwrap();
        let a = DVector::from_vec(vec![C::new(0.3, -1.0), C::new(2.0, 0.5)]);
        let b = DVector::from_vec(vec![C::new(-1.0, 0.2), C::new(0.1, 0.7)]);
        let direct = (b.adjoint() * &g * &a)[(0, 0)];
        let mapped = iso.embed(&b).dotc(&iso.embed(&a));
        assert!((direct - mapped).norm() < 1e-12);

        // span{(1, i)/√2} vs span{(1, 0)}: angle π/4
        let s = 1.0 / 2f64.sqrt();
        let u =
            SubspaceBasis::from_orthonormal(DMatrix::from_column_slice(2, 1, &[one * s, i * s]))
                .unwrap();
        let v = SubspaceBasis::from_orthonormal(DMatrix::from_column_slice(2, 1, &[one, zero]))
            .unwrap();
        let d = principal_angles(&u, &v).unwrap();
        assert!((d.angles[0] - std::f64::consts::FRAC_PI_4).abs() < 1e-12);
        let ip = d.v_vectors.column(0).dotc(&d.u_vectors.column(0));
        assert!(ip.im.abs() < 1e-14 && ip.re > 0.0);
    }

    #[test]
    fn from_columns_drops_dependent_columns() {
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 0.0, 0.0, 0.0, 1.0, 1.0, 2.0, 0.0]);
        let b = SubspaceBasis::from_columns(&m, 1e-10).unwrap();
        assert_eq!(b.rank(), 2);
        assert!(orthonormality_defect(b.coeffs()) < 1e-14);
    }

    #[test]
    fn from_orthonormal_rejects_bad_input() {
        let m = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        assert!(matches!(
            SubspaceBasis::from_orthonormal(m),
            Err(GeometryError::NotOrthonormal(_))
        ));
    }
}
