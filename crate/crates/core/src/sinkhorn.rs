//! Sinkhorn iteration `Z_t⁻¹ = (p/n) Φ*(Φ(Z_{t−1})⁻¹)` with tracing,
//! stopping rules and progress checks.

use serde::{Deserialize, Serialize};

use crate::capacity::{dual_of_inverse_image, gradient_from_image, image, Image};
use crate::cpmap::CpMap;
use crate::error::{Error, Result};
use crate::linalg::{geodesic_distance, normalize, sym_apply, sym_eigen, Normalization, PdMatrix};

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITERS: usize = 10_000;
/// Iterates whose condition number exceeds this are treated as diverging.
pub const DIVERGENCE_CONDITION: f64 = 1e14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RunStatus {
    Converged,
    MaxIters,
    Diverged,
}

impl std::fmt::Display for RunStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            RunStatus::Converged => "Converged",
            RunStatus::MaxIters => "MaxIters",
            RunStatus::Diverged => "Diverged",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for RunStatus {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "Converged" => Ok(RunStatus::Converged),
            "MaxIters" => Ok(RunStatus::MaxIters),
            "Diverged" => Ok(RunStatus::Diverged),
            other => Err(Error::InvalidArgument(format!(
                "unknown run status {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iter: usize,
    pub f: f64,
    pub grad_norm: f64,
    /// Affine-invariant distance from the previous recorded iterate (0 at `iter = 0`).
    pub step_dist: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTrace {
    pub records: Vec<TraceRecord>,
    pub status: RunStatus,
}

impl ConvergenceTrace {
    /// Number of Sinkhorn steps taken.
    pub fn iterations(&self) -> usize {
        self.records.last().map_or(0, |r| r.iter)
    }

    pub fn final_grad_norm(&self) -> Option<f64> {
        self.records.last().map(|r| r.grad_norm)
    }
}

/// Inverse of `(p/n) Φ*(Φ(Z)⁻¹)`, computed from an already inverted image.
fn step_from_image(phi: &CpMap, img: &Image) -> Result<PdMatrix> {
    let d = dual_of_inverse_image(phi, img)?;
    let (vals, _) = sym_eigen(d.as_matrix());
    let max = vals[vals.len() - 1];
    if !(vals[0] > 1e-15 * max) || !max.is_finite() {
        return Err(Error::SingularImage);
    }
    PdMatrix::from_computed(sym_apply(d.as_matrix(), |v| 1.0 / v))
}

/// One Sinkhorn step. Fixed points are exactly the zeros of the geodesic gradient.
pub fn step(phi: &CpMap, z: &PdMatrix) -> Result<PdMatrix> {
    step_from_image(phi, &image(phi, z)?)
}

/// Iterates [`step`] from `z0` until `‖∇f‖_F ≤ tol`, divergence or `max_iters` steps.
///
/// Steps are taken on the raw iterate; recorded values use its determinant-one
/// normalization, which leaves `f` and `∇f` unchanged. The returned matrix is
/// the last accepted iterate, normalized to determinant one.
pub fn run(
    phi: &CpMap,
    z0: &PdMatrix,
    tol: f64,
    max_iters: usize,
) -> Result<(PdMatrix, ConvergenceTrace)> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    if phi.in_dim() != z0.dim() {
        return Err(Error::DimMismatch {
            expected: phi.in_dim(),
            actual: z0.dim(),
        });
    }
    let ratio = phi.in_dim() as f64 / phi.out_dim() as f64;
    let mut records = Vec::new();
    let mut raw = z0.clone();
    let mut current = normalize(z0, Normalization::Det1);
    let mut step_dist = 0.0;
    let status = loop {
        let iter = records.len();
        let img = match image(phi, &raw) {
            Ok(img) => img,
            Err(_) => break RunStatus::Diverged,
        };
        let f = ratio * img.log_det - raw.log_det();
        let grad_norm = gradient_from_image(phi, &raw, &img)?.frobenius_norm();
        if !f.is_finite() || !grad_norm.is_finite() {
            break RunStatus::Diverged;
        }
        records.push(TraceRecord {
            iter,
            f,
            grad_norm,
            step_dist,
        });
        if grad_norm <= tol {
            break RunStatus::Converged;
        }
        if iter >= max_iters {
            break RunStatus::MaxIters;
        }
        let next = match step_from_image(phi, &img) {
            Ok(next) => next,
            Err(_) => break RunStatus::Diverged,
        };
        if !(next.condition_number() <= DIVERGENCE_CONDITION) {
            break RunStatus::Diverged;
        }
        let next_normalized = normalize(&next, Normalization::Det1);
        step_dist = geodesic_distance(&current, &next_normalized)?;
        raw = next;
        current = next_normalized;
    };
    Ok((current, ConvergenceTrace { records, status }))
}

/// Slack for comparing recorded values of `f`. Near ill-conditioned solutions
/// the evaluation of `f` has roundoff around `cond(Z)·1e-16`.
pub const PROGRESS_SLACK: f64 = 1e-9;

/// Checks monotonicity of `f` and the per-step decrease
/// `f_{t+1} ≤ f_t − ‖∇f_t‖²/6` wherever `‖∇f_t‖ ≤ 1`, both with slack [`PROGRESS_SLACK`].
pub fn verify_progress(trace: &ConvergenceTrace) -> bool {
    trace.records.windows(2).all(|w| {
        let (a, b) = (&w[0], &w[1]);
        let monotone = b.f <= a.f + PROGRESS_SLACK;
        let decrease = a.grad_norm > 1.0 || b.f <= a.f - a.grad_norm.powi(2) / 6.0 + PROGRESS_SLACK;
        monotone && decrease
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateEstimate {
    /// Least-squares slope of `ln ‖∇f_t‖_F` against `t`.
    pub slope: f64,
    pub r2: f64,
    pub points: usize,
}

/// Fewest points [`linear_rate_estimate`] will fit.
pub const RATE_MIN_POINTS: usize = 10;

/// Fits `ln ‖∇f‖_F` against the iteration index over the last `tail_fraction`
/// of the trace; needs at least [`RATE_MIN_POINTS`] points with positive gradient norm.
pub fn linear_rate_estimate(trace: &ConvergenceTrace, tail_fraction: f64) -> Result<RateEstimate> {
    if !(tail_fraction > 0.0 && tail_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "tail fraction must lie in (0, 1], got {tail_fraction}"
        )));
    }
    let len = trace.records.len();
    let take = ((len as f64) * tail_fraction).ceil() as usize;
    let pts: Vec<(f64, f64)> = trace.records[len - take.min(len)..]
        .iter()
        .filter(|r| r.grad_norm > 0.0)
        .map(|r| (r.iter as f64, r.grad_norm.ln()))
        .collect();
    if pts.len() < RATE_MIN_POINTS {
        return Err(Error::InsufficientData {
            required: RATE_MIN_POINTS,
            actual: pts.len(),
        });
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy <= f64::EPSILON * m * my.abs().max(1.0) {
        1.0
    } else {
        (sxy * sxy) / (sxx * syy)
    };
    Ok(RateEstimate {
        slope,
        r2,
        points: pts.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capacity::{f_value, geodesic_gradient};
    use crate::cpmap::VectorTuple;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tuple(rows: &[&[f64]]) -> CpMap {
        CpMap::from_vectors(
            VectorTuple::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap(),
        )
    }

    fn gaussian_map(p: usize, n: usize, seed: u64) -> CpMap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = DMatrix::from_fn(p, n, |_, _| rng.random_range(-1.0..1.0));
        CpMap::from_vectors(VectorTuple::from_columns(data).unwrap())
    }

    fn synthetic(grads: &[f64]) -> ConvergenceTrace {
        ConvergenceTrace {
            records: grads
                .iter()
                .enumerate()
                .map(|(iter, &g)| TraceRecord {
                    iter,
                    f: -(iter as f64),
                    grad_norm: g,
                    step_dist: 0.0,
                })
                .collect(),
            status: RunStatus::MaxIters,
        }
    }

    #[test]
    fn step_examples() {
        let phi = tuple(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let z = step(&phi, &PdMatrix::identity(2)).unwrap();
        assert!((z.as_matrix() - DMatrix::identity(2, 2)).norm() < 1e-15);

        let phi = tuple(&[&[1.0, 0.0], &[1.0, 0.0], &[0.0, 1.0]]);
        let z = step(&phi, &PdMatrix::identity(2)).unwrap();
        let expected = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![0.75, 1.5]));
        assert!((z.as_matrix() - expected).norm() < 1e-15);
    }

    #[test]
    fn step_matches_formula_and_decreases_f() {
        let phi = gaussian_map(3, 10, 4);
        let CpMap::DiagonalOutput(x) = &phi else {
            unreachable!()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
        let z = PdMatrix::new(&g * g.transpose() + DMatrix::identity(3, 3)).unwrap();
        let mut acc = DMatrix::zeros(3, 3);
        for i in 0..10 {
            let xi = x.vector(i);
            acc += xi * xi.transpose() / (xi.transpose() * z.as_matrix() * xi)[(0, 0)];
        }
        let expected = (acc * 0.3).try_inverse().unwrap();
        let next = step(&phi, &z).unwrap();
        assert!((next.as_matrix() - &expected).norm() < 1e-10 * expected.norm());
        assert!(f_value(&phi, &next).unwrap() <= f_value(&phi, &z).unwrap());
    }

    #[test]
    fn step_fails_on_rank_deficient_dual() {
        let phi = tuple(&[&[1.0, 0.0]]);
        assert!(matches!(
            step(&phi, &PdMatrix::identity(2)),
            Err(Error::SingularImage)
        ));
    }

    #[test]
    fn run_examples() {
        let phi = tuple(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let (z, trace) = run(&phi, &PdMatrix::identity(2), DEFAULT_TOL, DEFAULT_MAX_ITERS).unwrap();
        assert_eq!(trace.status, RunStatus::Converged);
        assert_eq!(trace.iterations(), 0);
        assert!((z.as_matrix() - DMatrix::identity(2, 2)).norm() < 1e-15);

        let phi = tuple(&[&[1.0, 0.0], &[1.0, 0.0], &[1.0, 0.0], &[0.0, 1.0]]);
        let (_, trace) = run(&phi, &PdMatrix::identity(2), DEFAULT_TOL, DEFAULT_MAX_ITERS).unwrap();
        assert_eq!(trace.status, RunStatus::Diverged);
        assert!(trace.iterations() < 100);
    }

    #[test]
    fn run_converges_on_generic_data_with_normalized_records() {
        let phi = gaussian_map(4, 60, 8);
        let (z, trace) = run(&phi, &PdMatrix::identity(4), 1e-10, 5000).unwrap();
        assert_eq!(trace.status, RunStatus::Converged);
        assert!(z.log_det().abs() <= 1e-9);
        assert!(verify_progress(&trace));
        assert!(geodesic_gradient(&phi, &z).unwrap().frobenius_norm() <= 1e-10);
        let fixed = step(&phi, &z).unwrap();
        assert!(
            (normalize(&fixed, Normalization::Det1).as_matrix() - z.as_matrix()).norm() <= 1e-9
        );
    }

    #[test]
    fn run_stops_at_max_iters() {
        let phi = gaussian_map(4, 60, 8);
        let (_, trace) = run(&phi, &PdMatrix::identity(4), 1e-14, 3).unwrap();
        assert_eq!(trace.status, RunStatus::MaxIters);
        assert_eq!(trace.records.len(), 4);
        assert!(run(&phi, &PdMatrix::identity(4), 0.0, 3).is_err());
    }

    #[test]
    fn verify_progress_examples() {
        assert!(verify_progress(&synthetic(&[0.5])));
        let mut bad = synthetic(&[0.5, 0.4]);
        bad.records[1].f = bad.records[0].f + 1.0;
        assert!(!verify_progress(&bad));
        // decrease of 1 per step beats 0.5²/6
        assert!(verify_progress(&synthetic(&[0.5, 0.4, 0.3])));
        let mut slow = synthetic(&[0.9, 0.4]);
        slow.records[1].f = slow.records[0].f - 0.1;
        assert!(!verify_progress(&slow));
    }

    #[test]
    fn rate_examples() {
        let geometric: Vec<f64> = (0..40).map(|t| 2f64.powi(-t)).collect();
        let r = linear_rate_estimate(&synthetic(&geometric), 1.0).unwrap();
        assert!((r.slope + std::f64::consts::LN_2).abs() < 1e-12);
        assert!((r.r2 - 1.0).abs() < 1e-12);

        let r = linear_rate_estimate(&synthetic(&[0.3; 20]), 1.0).unwrap();
        assert!(r.slope.abs() < 1e-15);

        assert!(matches!(
            linear_rate_estimate(&synthetic(&[0.3; 20]), 0.25),
            Err(Error::InsufficientData {
                required: 10,
                actual: 5
            })
        ));
    }
}
