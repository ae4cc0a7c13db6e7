//! Dense symmetric and positive definite matrix primitives.
//!
//! Everything is stored as a dense `f64` matrix. Product chains are
//! re-symmetrized with `(M + Mᵀ)/2` before they are wrapped in one of the
//! symmetric newtypes, so roundoff never breaks the PD checks downstream.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Eigenvalues at or below this fraction of the operator norm are treated as zero.
pub const PD_RELATIVE_TOL: f64 = 1e-12;

/// Relative asymmetry accepted by the checked constructors.
pub const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    Raw,
    /// `tr A = p`.
    TraceP,
    /// `det A = 1`.
    Det1,
}

/// A real symmetric matrix (possibly indefinite, possibly traceless).
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

/// A real symmetric positive definite matrix together with its normalization tag.
#[derive(Debug, Clone, PartialEq)]
pub struct PdMatrix {
    m: DMatrix<f64>,
    normalization: Normalization,
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn check_square(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimMismatch {
            expected: m.nrows(),
            actual: m.ncols(),
        });
    }
    Ok(())
}

fn relative_asymmetry(m: &DMatrix<f64>) -> f64 {
    let scale = m.norm();
    if scale == 0.0 {
        return 0.0;
    }
    (m - m.transpose()).norm() / scale
}

/// Symmetric eigendecomposition with eigenvalues sorted ascending.
pub fn sym_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m.clone());
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Applies `f` to the spectrum of a symmetric matrix: `V diag(f(λ)) Vᵀ`.
pub fn sym_apply(m: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let (values, vectors) = sym_eigen(m);
    let mut scaled = vectors.clone();
    for (j, &lam) in values.iter().enumerate() {
        let fl = f(lam);
        scaled.column_mut(j).scale_mut(fl);
    }
    symmetrize(&(scaled * vectors.transpose()))
}

/// Largest singular value of a general matrix.
pub fn op_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .cloned()
        .fold(0.0, f64::max)
}

/// Operator norm of a symmetric matrix, from its spectrum.
pub fn sym_op_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    let (values, _) = sym_eigen(m);
    values.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

impl SymMatrix {
    /// Wraps a matrix after checking squareness and symmetry, then symmetrizes it exactly.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        check_square(&m)?;
        let asym = relative_asymmetry(&m);
        if asym > SYMMETRY_TOL {
            return Err(Error::NotSymmetric(asym));
        }
        Ok(SymMatrix(symmetrize(&m)))
    }

    /// Symmetric part `(M + Mᵀ)/2` of an arbitrary square matrix.
    pub fn from_symmetrized(m: &DMatrix<f64>) -> Self {
        assert_eq!(
            m.nrows(),
            m.ncols(),
            "symmetric part of a non-square matrix"
        );
        SymMatrix(symmetrize(m))
    }

    pub fn identity(p: usize) -> Self {
        SymMatrix(DMatrix::identity(p, p))
    }

    pub fn zeros(p: usize) -> Self {
        SymMatrix(DMatrix::zeros(p, p))
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        SymMatrix(DMatrix::from_diagonal(&DVector::from_column_slice(d)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn op_norm(&self) -> f64 {
        sym_op_norm(&self.0)
    }

    pub fn is_traceless(&self) -> bool {
        self.trace().abs() <= 1e-12 * self.frobenius_norm().max(f64::MIN_POSITIVE)
    }

    /// `X − (tr X / p) I`.
    pub fn traceless_part(&self) -> SymMatrix {
        let p = self.dim();
        if p == 0 {
            return self.clone();
        }
        let shift = self.trace() / p as f64;
        SymMatrix(&self.0 - DMatrix::identity(p, p) * shift)
    }

    /// Trace inner product `tr(A B)`.
    pub fn inner(&self, other: &SymMatrix) -> f64 {
        self.0.dot(&other.0)
    }

    pub fn scale(&self, c: f64) -> SymMatrix {
        SymMatrix(&self.0 * c)
    }

    pub fn eigenvalues(&self) -> DVector<f64> {
        sym_eigen(&self.0).0
    }

    /// Matrix exponential via the spectral decomposition.
    pub fn exp(&self) -> PdMatrix {
        PdMatrix::from_trusted(sym_apply(&self.0, f64::exp), Normalization::Raw)
    }
}

impl PdMatrix {
    /// Checks symmetry and strict positivity (relative to [`PD_RELATIVE_TOL`]).
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        check_square(&m)?;
        let asym = relative_asymmetry(&m);
        if asym > SYMMETRY_TOL {
            return Err(Error::NotSymmetric(asym));
        }
        let m = symmetrize(&m);
        check_pd(&m)?;
        Ok(PdMatrix {
            m,
            normalization: Normalization::Raw,
        })
    }

    /// Wraps a matrix already known to be symmetric PD (symmetrizes it again).
    pub(crate) fn from_trusted(m: DMatrix<f64>, normalization: Normalization) -> Self {
        PdMatrix {
            m: symmetrize(&m),
            normalization,
        }
    }

    /// Symmetrizes and re-checks positivity; for matrices produced by product chains.
    pub(crate) fn from_computed(m: DMatrix<f64>) -> Result<Self> {
        let m = symmetrize(&m);
        check_pd(&m)?;
        Ok(PdMatrix {
            m,
            normalization: Normalization::Raw,
        })
    }

    pub fn identity(p: usize) -> Self {
        PdMatrix {
            m: DMatrix::identity(p, p),
            normalization: Normalization::Raw,
        }
    }

    pub fn from_diagonal(d: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(d)))
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.m
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn to_sym(&self) -> SymMatrix {
        SymMatrix(self.m.clone())
    }

    pub fn trace(&self) -> f64 {
        self.m.trace()
    }

    pub fn eigenvalues(&self) -> DVector<f64> {
        sym_eigen(&self.m).0
    }

    pub fn log_det(&self) -> f64 {
        self.eigenvalues().iter().map(|v| v.ln()).sum()
    }

    pub fn condition_number(&self) -> f64 {
        let ev = self.eigenvalues();
        ev[ev.len() - 1] / ev[0]
    }

    pub fn scale(&self, c: f64) -> PdMatrix {
        assert!(c > 0.0, "PD matrices scale by positive factors only");
        PdMatrix {
            m: &self.m * c,
            normalization: Normalization::Raw,
        }
    }

    pub fn inverse(&self) -> PdMatrix {
        PdMatrix::from_trusted(sym_apply(&self.m, |v| 1.0 / v), Normalization::Raw)
    }

    pub fn sqrt(&self) -> PdMatrix {
        PdMatrix::from_trusted(sym_apply(&self.m, f64::sqrt), Normalization::Raw)
    }

    pub fn inv_sqrt(&self) -> PdMatrix {
        PdMatrix::from_trusted(sym_apply(&self.m, |v| 1.0 / v.sqrt()), Normalization::Raw)
    }

    /// Matrix logarithm.
    pub fn log(&self) -> SymMatrix {
        SymMatrix(sym_apply(&self.m, f64::ln))
    }

    /// Re-runs the tag's invariant (`|tr − p| ≤ 1e-9 p` or `|log det| ≤ 1e-9`).
    pub fn satisfies_normalization(&self) -> bool {
        let p = self.dim() as f64;
        match self.normalization {
            Normalization::Raw => true,
            Normalization::TraceP => (self.trace() - p).abs() <= 1e-9 * p,
            Normalization::Det1 => self.log_det().abs() <= 1e-9,
        }
    }
}

fn check_pd(m: &DMatrix<f64>) -> Result<()> {
    if m.is_empty() {
        return Ok(());
    }
    let (values, _) = sym_eigen(m);
    let min_eig = values[0];
    let max_eig = values[values.len() - 1];
    let scale = values.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    if !(min_eig > PD_RELATIVE_TOL * scale) || !min_eig.is_finite() || !max_eig.is_finite() {
        return Err(Error::NotPositiveDefinite { min_eig, max_eig });
    }
    Ok(())
}

/// Principal square root; `R R = A` and `R` is symmetric PD.
pub fn mat_sqrt(a: &PdMatrix) -> PdMatrix {
    a.sqrt()
}

fn check_same_dim(a: &PdMatrix, b: &PdMatrix) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    Ok(())
}

/// Spectrum of `A^{1/2} B^{-1} A^{1/2}`, computed as the spectrum of the
/// similar matrix `L^{-1} A L^{-T}` with `B = L Lᵀ` (i.e. of `B^{-1} A`).
fn relative_spectrum(a: &PdMatrix, b: &PdMatrix) -> Result<DVector<f64>> {
    check_same_dim(a, b)?;
    let chol = nalgebra::Cholesky::new(b.m.clone()).ok_or(Error::NotPositiveDefinite {
        min_eig: f64::NAN,
        max_eig: f64::NAN,
    })?;
    let l = chol.l();
    let left = l
        .solve_lower_triangular(&a.m)
        .expect("Cholesky factor has a positive diagonal");
    let sim = l
        .solve_lower_triangular(&left.transpose())
        .expect("Cholesky factor has a positive diagonal");
    Ok(sym_eigen(&symmetrize(&sim)).0)
}

/// `‖I − A^{1/2} B^{-1} A^{1/2}‖_op`.
pub fn error_op(a: &PdMatrix, b: &PdMatrix) -> Result<f64> {
    Ok(relative_spectrum(a, b)?
        .iter()
        .fold(0.0_f64, |acc, mu| acc.max((1.0 - mu).abs())))
}

/// `‖I − A^{1/2} B^{-1} A^{1/2}‖_F`, the Mahalanobis-type error.
pub fn error_frob(a: &PdMatrix, b: &PdMatrix) -> Result<f64> {
    Ok(relative_spectrum(a, b)?
        .iter()
        .map(|mu| (1.0 - mu).powi(2))
        .sum::<f64>()
        .sqrt())
}

/// Rescales `A` to the requested normalization (a no-op for `Raw`).
pub fn normalize(a: &PdMatrix, target: Normalization) -> PdMatrix {
    let p = a.dim() as f64;
    let factor = match target {
        Normalization::Raw => 1.0,
        Normalization::TraceP => p / a.trace(),
        Normalization::Det1 => (-a.log_det() / p).exp(),
    };
    PdMatrix {
        m: &a.m * factor,
        normalization: target,
    }
}

/// Point `√Z e^{tX} √Z` on the geodesic through `Z` in direction `X`.
pub fn geodesic_point(z: &PdMatrix, x: &SymMatrix, t: f64) -> Result<PdMatrix> {
    if z.dim() != x.dim() {
        return Err(Error::DimMismatch {
            expected: z.dim(),
            actual: x.dim(),
        });
    }
    let root = z.sqrt();
    let e = x.scale(t).exp();
    let m = &root.m * &e.m * &root.m;
    Ok(PdMatrix::from_trusted(m, Normalization::Raw))
}

/// `‖log(A^{-1/2} B A^{-1/2})‖_F`, the affine-invariant distance.
pub fn geodesic_distance(a: &PdMatrix, b: &PdMatrix) -> Result<f64> {
    // eigenvalues of A^{-1} B are those of A^{-1/2} B A^{-1/2}
    Ok(relative_spectrum(b, a)?
        .iter()
        .map(|mu| mu.ln().powi(2))
        .sum::<f64>()
        .sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_pd(p: usize, seed: u64) -> PdMatrix {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let g = DMatrix::from_fn(p, p, |_, _| rng.random_range(-1.0..1.0));
        PdMatrix::new(&g * g.transpose() + DMatrix::identity(p, p) * 0.1).unwrap()
    }

    #[test]
    fn sqrt_of_identity_and_diagonal() {
        let r = mat_sqrt(&PdMatrix::identity(3));
        assert!((r.as_matrix() - DMatrix::identity(3, 3)).norm() < 1e-14);
        let r = mat_sqrt(&PdMatrix::from_diagonal(&[4.0, 9.0]).unwrap());
        assert!(
            (r.as_matrix() - DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0]))).norm()
                < 1e-14
        );
    }

    #[test]
    fn sqrt_squares_back() {
        for seed in 0..20 {
            let a = random_pd(6, seed);
            let r = mat_sqrt(&a);
            let rr = r.as_matrix() * r.as_matrix();
            assert!((rr - a.as_matrix()).norm() <= 1e-10 * a.as_matrix().norm());
        }
    }

    #[test]
    fn non_pd_is_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            PdMatrix::new(m),
            Err(Error::NotPositiveDefinite { .. })
        ));
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert!(matches!(
            PdMatrix::new(m),
            Err(Error::NotPositiveDefinite { .. })
        ));
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(PdMatrix::new(m), Err(Error::NotSymmetric(_))));
    }

    #[test]
    fn error_op_examples() {
        let i2 = PdMatrix::identity(2);
        assert_eq!(error_op(&i2, &i2).unwrap(), 0.0);
        let two = PdMatrix::from_diagonal(&[2.0, 2.0]).unwrap();
        assert!((error_op(&two, &i2).unwrap() - 1.0).abs() < 1e-14);
        let b = PdMatrix::from_diagonal(&[2.0, 1.0]).unwrap();
        assert!((error_op(&i2, &b).unwrap() - 0.5).abs() < 1e-14);
        assert!(matches!(
            error_op(&i2, &PdMatrix::identity(3)),
            Err(Error::DimMismatch { .. })
        ));
    }

    #[test]
    fn error_frob_examples() {
        let i2 = PdMatrix::identity(2);
        assert_eq!(error_frob(&i2, &i2).unwrap(), 0.0);
        let two = PdMatrix::from_diagonal(&[2.0, 2.0]).unwrap();
        assert!((error_frob(&two, &i2).unwrap() - 2f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn error_metrics_match_direct_square_root_oracle() {
        for seed in 0..10 {
            let a = random_pd(5, 2 * seed);
            let b = random_pd(5, 2 * seed + 1);
            let ra = a.sqrt();
            let m =
                DMatrix::identity(5, 5) - ra.as_matrix() * b.inverse().as_matrix() * ra.as_matrix();
            let m = symmetrize(&m);
            let direct_op = sym_op_norm(&m);
            let direct_frob = m.norm();
            let op = error_op(&a, &b).unwrap();
            let frob = error_frob(&a, &b).unwrap();
            assert!((op - direct_op).abs() <= 1e-9 * direct_op.max(1.0));
            assert!((frob - direct_frob).abs() <= 1e-9 * direct_frob.max(1.0));
            assert!(op <= frob + 1e-12 && frob <= 5f64.sqrt() * op + 1e-12);
        }
    }

    #[test]
    fn normalize_examples() {
        let a = PdMatrix::from_diagonal(&[3.0, 3.0]).unwrap();
        let n = normalize(&a, Normalization::TraceP);
        assert!((n.as_matrix() - DMatrix::identity(2, 2)).norm() < 1e-14);
        assert_eq!(n.normalization(), Normalization::TraceP);
        assert!(n.satisfies_normalization());

        let a = PdMatrix::from_diagonal(&[2.0, 0.5]).unwrap();
        let n = normalize(&a, Normalization::Det1);
        assert!((n.as_matrix()[(0, 0)] - 2.0).abs() < 1e-14);
        assert!((n.as_matrix()[(1, 1)] - 0.5).abs() < 1e-14);

        let a = PdMatrix::from_diagonal(&[4.0, 1.0]).unwrap();
        let n = normalize(&a, Normalization::Det1);
        assert!((n.as_matrix()[(0, 0)] - 2.0).abs() < 1e-14);
        assert!((n.as_matrix()[(1, 1)] - 0.5).abs() < 1e-14);
        assert!(n.satisfies_normalization());
    }

    #[test]
    fn geodesic_point_examples() {
        let x = SymMatrix::from_diagonal(&[1.0, -1.0]);
        let at0 = geodesic_point(&PdMatrix::identity(2), &x, 0.0).unwrap();
        assert!((at0.as_matrix() - DMatrix::identity(2, 2)).norm() < 1e-14);
        let t = 0.7_f64;
        let g = geodesic_point(&PdMatrix::identity(2), &x, t).unwrap();
        assert!((g.as_matrix()[(0, 0)] - t.exp()).abs() < 1e-13);
        assert!((g.as_matrix()[(1, 1)] - (-t).exp()).abs() < 1e-13);
    }

    /// Independent route: exp via a truncated Taylor series with scaling and
    /// squaring, then `√Z e^{tX} √Z = (√Z e^{tX/2})(e^{tX/2} √Z)`.
    #[test]
    fn geodesic_point_matches_taylor_oracle() {
        fn taylor_exp(m: &DMatrix<f64>) -> DMatrix<f64> {
            let p = m.nrows();
            let squarings = 10;
            let scaled = m / 2f64.powi(squarings);
            let mut term = DMatrix::identity(p, p);
            let mut sum = DMatrix::identity(p, p);
            for k in 1..30 {
                term = &term * &scaled / k as f64;
                sum += &term;
            }
            for _ in 0..squarings {
                sum = &sum * &sum;
            }
            sum
        }
        for seed in 0..5 {
            let z = random_pd(4, 100 + seed);
            let w = random_pd(4, 200 + seed);
            let x = SymMatrix::from_symmetrized(&(w.as_matrix() - DMatrix::identity(4, 4) * 2.0));
            let t = 0.3;
            let half = taylor_exp(&(x.as_matrix() * (t / 2.0)));
            let root = z.sqrt();
            let left = root.as_matrix() * &half;
            let oracle = &left * left.transpose();
            let got = geodesic_point(&z, &x, t).unwrap();
            assert!((got.as_matrix() - &oracle).norm() <= 1e-10 * oracle.norm());
        }
    }

    #[test]
    fn traceless_part_is_traceless() {
        let x = SymMatrix::from_diagonal(&[3.0, 1.0, -7.0]);
        assert!(x.traceless_part().is_traceless());
        assert!(!x.is_traceless());
    }
}
