//! The capacity objective `f(Z) = (p/n) log det Φ(Z) − log det Z` and its
//! derivatives along geodesics `t ↦ √Z e^{tX} √Z`.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::cpmap::{CpMap, MatrixBudget, OutputMatrix};
use crate::error::{Error, Result};
use crate::expander::expansion_constant;
use crate::linalg::{sym_apply, sym_eigen, PdMatrix, SymMatrix};

/// Smallest eigenvalue of `Φ(Z)` treated as nonsingular.
pub const SINGULAR_IMAGE_TOL: f64 = 1e-300;

fn check_dim(phi: &CpMap, z: usize) -> Result<()> {
    if phi.in_dim() != z {
        return Err(Error::DimMismatch {
            expected: phi.in_dim(),
            actual: z,
        });
    }
    Ok(())
}

/// `Φ(Z)` together with its inverse, failing when it is numerically singular.
pub(crate) struct Image {
    pub(crate) inverse: OutputMatrix,
    pub(crate) log_det: f64,
}

pub(crate) fn invert_image(value: OutputMatrix) -> Result<Image> {
    match &value {
        OutputMatrix::Diagonal(d) => {
            if d.iter()
                .any(|&x| !(x > SINGULAR_IMAGE_TOL) || !x.is_finite())
            {
                return Err(Error::SingularImage);
            }
            let inverse = OutputMatrix::Diagonal(d.map(|x| 1.0 / x));
            let log_det = d.iter().map(|x| x.ln()).sum();
            Ok(Image { inverse, log_det })
        }
        OutputMatrix::Full(m) => {
            let (vals, _) = sym_eigen(m.as_matrix());
            if vals
                .iter()
                .any(|&x| !(x > SINGULAR_IMAGE_TOL) || !x.is_finite())
            {
                return Err(Error::SingularImage);
            }
            let inverse = OutputMatrix::Full(SymMatrix::from_symmetrized(&sym_apply(
                m.as_matrix(),
                |x| 1.0 / x,
            )));
            let log_det = vals.iter().map(|x| x.ln()).sum();
            Ok(Image { inverse, log_det })
        }
    }
}

pub(crate) fn image(phi: &CpMap, z: &PdMatrix) -> Result<Image> {
    check_dim(phi, z.dim())?;
    invert_image(phi.apply(&z.to_sym())?)
}

fn ratio(phi: &CpMap) -> f64 {
    phi.in_dim() as f64 / phi.out_dim() as f64
}

/// `f(Z) = (p/n) log det Φ(Z) − log det Z`; invariant under `Z ↦ αZ`.
pub fn f_value(phi: &CpMap, z: &PdMatrix) -> Result<f64> {
    let img = image(phi, z)?;
    Ok(ratio(phi) * img.log_det - z.log_det())
}

/// `(p/n) Φ*(Φ(Z)⁻¹)`, the inverse of the next Sinkhorn iterate.
pub(crate) fn dual_of_inverse_image(phi: &CpMap, img: &Image) -> Result<SymMatrix> {
    Ok(phi.apply_dual(&img.inverse)?.scale(ratio(phi)))
}

/// `∇f(Z) = (p/n) √Z Φ*(Φ(Z)⁻¹) √Z − I`, a traceless symmetric matrix.
pub fn geodesic_gradient(phi: &CpMap, z: &PdMatrix) -> Result<SymMatrix> {
    let img = image(phi, z)?;
    gradient_from_image(phi, z, &img)
}

pub(crate) fn gradient_from_image(phi: &CpMap, z: &PdMatrix, img: &Image) -> Result<SymMatrix> {
    let root = z.sqrt();
    let d = dual_of_inverse_image(phi, img)?;
    let p = z.dim();
    let g = root.as_matrix() * d.as_matrix() * root.as_matrix() - DMatrix::identity(p, p);
    Ok(SymMatrix::from_symmetrized(&g))
}

/// `∂²_t f(√Z e^{tX} √Z)` at `t = 0` for traceless `X`.
///
/// With `A = Φ(Z)`, `B = Φ(√Z X² √Z)` and `C = Φ(√Z X √Z)` this is
/// `(p/n) [tr A⁻¹B − tr A⁻¹CA⁻¹C]`; the `log det Z` term is linear in `t`.
pub fn second_directional(phi: &CpMap, z: &PdMatrix, x: &SymMatrix) -> Result<f64> {
    check_dim(phi, x.dim())?;
    if !x.is_traceless() {
        return Err(Error::InvalidArgument(format!(
            "direction must be traceless (trace {})",
            x.trace()
        )));
    }
    let img = image(phi, z)?;
    let root = z.sqrt();
    let rx = SymMatrix::from_symmetrized(&(root.as_matrix() * x.as_matrix() * root.as_matrix()));
    let x2 = x.as_matrix() * x.as_matrix();
    let rx2 = SymMatrix::from_symmetrized(&(root.as_matrix() * x2 * root.as_matrix()));
    let b = phi.apply(&rx2)?;
    let c = phi.apply(&rx)?;
    let curvature = match (&img.inverse, &b, &c) {
        (OutputMatrix::Diagonal(ainv), OutputMatrix::Diagonal(b), OutputMatrix::Diagonal(c)) => {
            ainv.iter()
                .zip(b.iter().zip(c.iter()))
                .map(|(ai, (bi, ci))| ai * bi - (ai * ci).powi(2))
                .sum::<f64>()
        }
        _ => {
            let ainv = img.inverse.to_dense();
            let ainv = ainv.as_matrix();
            let ac = ainv * c.to_dense().as_matrix();
            (ainv * b.to_dense().as_matrix()).trace() - (&ac * &ac).trace()
        }
    };
    Ok(ratio(phi) * curvature)
}

/// Sampled strong-convexity constant at the identity against its analytic lower bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvexityCertificate {
    /// Minimum over sampled traceless `X` of `f''/‖X‖_F²`.
    pub sampled_min: f64,
    /// The same minimum for `log det Φ`, i.e. `(n/p)·sampled_min`.
    pub log_det_curvature_min: f64,
    /// `(n/p)((1+ε)⁻¹(1−ε) − (1−λ)²(1−ε)⁻¹)`, a lower bound for the `log det Φ` curvature.
    pub analytic_bound: f64,
    pub eps: f64,
    pub lambda: f64,
    /// `log_det_curvature_min ≥ analytic_bound − 1e-8`.
    pub holds: bool,
}

/// Samples `trials` Gaussian traceless directions at `Z = I` and compares the
/// smallest normalized curvature with the bound implied by `(ε, λ)`.
pub fn strong_convexity_certificate(
    phi: &CpMap,
    trials: usize,
    seed: u64,
    budget: &MatrixBudget,
) -> Result<ConvexityCertificate> {
    let report = expansion_constant(phi, budget)?;
    let (p, n) = (phi.in_dim(), phi.out_dim());
    let (eps, lambda) = (report.eps, report.lambda);
    let np = n as f64 / p as f64;
    let analytic_bound = if eps < 1.0 {
        np * ((1.0 - eps) / (1.0 + eps) - (1.0 - lambda).powi(2) / (1.0 - eps))
    } else {
        f64::NEG_INFINITY
    };
    if p == 1 {
        return Ok(ConvexityCertificate {
            sampled_min: f64::INFINITY,
            log_det_curvature_min: f64::INFINITY,
            analytic_bound,
            eps,
            lambda,
            holds: true,
        });
    }
    let id = PdMatrix::identity(p);
    let sampled_min = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(trial as u64);
            let g = DMatrix::from_fn(p, p, |_, _| StandardNormal.sample(&mut rng));
            let x = SymMatrix::from_symmetrized(&g).traceless_part();
            let norm2 = x.frobenius_norm().powi(2);
            second_directional(phi, &id, &x).map(|v| v / norm2)
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    let log_det_curvature_min = np * sampled_min;
    Ok(ConvexityCertificate {
        sampled_min,
        log_det_curvature_min,
        analytic_bound,
        eps,
        lambda,
        holds: log_det_curvature_min >= analytic_bound - 1e-8,
    })
}
