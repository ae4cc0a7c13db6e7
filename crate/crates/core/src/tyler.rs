//! Tyler's M-estimator: existence classification, estimation through the
//! Sinkhorn iteration, fixed-point residuals and equivariance helpers.

use std::collections::HashMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::cpmap::{CpMap, VectorTuple};
use crate::error::{Error, Result};
use crate::linalg::{normalize, sym_eigen, Normalization, PdMatrix};
use crate::sinkhorn::{run, ConvergenceTrace};

/// A sample counts as lying in a subspace when its distance is at most this
/// multiple of its norm.
pub const MEMBERSHIP_TOL: f64 = 1e-9;
pub const DEFAULT_EXHAUSTIVE_LIMIT: usize = 16;
/// Coordinate and eigenbasis subsets examined per size in the partial check.
const PARTIAL_SUBSET_CAP: usize = 1 << 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExistenceStatus {
    /// Every proper subspace of dimension `k` holds fewer than `kn/p` samples.
    UniqueExists,
    /// Some subspace is saturated and the samples split along a complement.
    ExistsNonUnique,
    /// Some subspace of dimension `k` holds more than `kn/p` samples.
    NoSolution,
    /// A saturated subspace without a complementary split: only approximate
    /// solutions exist.
    ApproxOnly,
    /// The partial check found a saturated subspace it cannot resolve.
    Inconclusive,
}

impl std::fmt::Display for ExistenceStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{self:?}")
    }
}

/// A subspace together with the samples it contains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubspaceWitness {
    /// Indices of the samples lying in the subspace.
    pub indices: Vec<usize>,
    /// Orthonormal basis, one column per row of this list.
    pub basis: Vec<Vec<f64>>,
    /// Dimension of the subspace.
    pub k: usize,
    /// Number of samples in it.
    pub m: usize,
}

impl SubspaceWitness {
    /// `k n / p`.
    pub fn threshold(&self, n: usize, p: usize) -> f64 {
        (self.k * n) as f64 / p as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExistenceVerdict {
    pub status: ExistenceStatus,
    pub witness: Option<SubspaceWitness>,
    /// Whether every sample-generated subspace was examined.
    pub exhaustive: bool,
}

#[derive(Debug, Clone)]
pub struct EstimateResult {
    /// Trace-`p` solution (or last iterate when the run did not converge).
    pub sigma_hat: PdMatrix,
    pub trace: ConvergenceTrace,
    pub residual: f64,
    pub verdict: ExistenceVerdict,
}

/// Orthonormal basis of the column span and its numerical rank.
fn span_basis(cols: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = cols.clone().svd(true, false);
    let smax = svd.singular_values.max();
    let u = svd.u.expect("left singular vectors requested");
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > 1e-9 * smax.max(1e-300))
        .collect();
    u.select_columns(keep.iter())
}

fn members(x: &VectorTuple, q: &DMatrix<f64>) -> Vec<usize> {
    let proj = q * (q.transpose() * x.columns());
    (0..x.len())
        .filter(|&i| (x.vector(i) - proj.column(i)).norm() <= MEMBERSHIP_TOL * x.vector(i).norm())
        .collect()
}

fn witness(x: &VectorTuple, q: &DMatrix<f64>) -> SubspaceWitness {
    let indices = members(x, q);
    SubspaceWitness {
        m: indices.len(),
        k: q.ncols(),
        basis: q
            .column_iter()
            .map(|c| c.iter().cloned().collect())
            .collect(),
        indices,
    }
}

/// `m p` against `k n`, compared exactly in integers.
fn excess(w: &SubspaceWitness, n: usize, p: usize) -> i64 {
    (w.m * p) as i64 - (w.k * n) as i64
}

/// Subsets of `0..n` of size `1..=max` whose vectors are linearly independent,
/// each reported with the orthonormal basis of its span.
fn independent_spans(x: &VectorTuple, max: usize) -> Vec<DMatrix<f64>> {
    let n = x.len();
    let mut out = Vec::new();
    let mut stack: Vec<(Vec<usize>, usize)> = vec![(Vec::new(), 0)];
    while let Some((subset, start)) = stack.pop() {
        for next in start..n {
            let mut s = subset.clone();
            s.push(next);
            let q = span_basis(&x.columns().select_columns(s.iter()));
            if q.ncols() < s.len() {
                continue;
            }
            out.push(q);
            if s.len() < max {
                stack.push((s, next + 1));
            }
        }
    }
    out
}

fn bitmask(indices: &[usize]) -> u64 {
    indices.iter().fold(0u64, |acc, &i| acc | (1 << i))
}

/// Classifies existence and uniqueness of Tyler's estimator for `x`.
///
/// For `n ≤ exhaustive_limit` every subspace spanned by samples is examined;
/// these are the only subspaces whose sample count can reach `kn/p`. A
/// subspace with `m p > k n` rules out a solution. A subspace with
/// `m p = k n` leaves a solution only when the remaining samples span a
/// complement of it. Larger inputs get a partial check over repeated
/// directions, coordinate subspaces and eigenspaces of `Σ x_i x_iᵀ`.
pub fn existence_check(x: &VectorTuple, exhaustive_limit: usize) -> ExistenceVerdict {
    let x = x.normalized();
    let (p, n) = (x.dim(), x.len());
    let full = span_basis(x.columns());
    if full.ncols() < p {
        return ExistenceVerdict {
            status: ExistenceStatus::NoSolution,
            witness: Some(witness(&x, &full)),
            exhaustive: n <= exhaustive_limit,
        };
    }
    if p == 1 {
        return ExistenceVerdict {
            status: ExistenceStatus::UniqueExists,
            witness: None,
            exhaustive: true,
        };
    }
    if n > exhaustive_limit || n > 63 {
        return partial_check(&x);
    }
    let mut spans: HashMap<u64, SubspaceWitness> = HashMap::new();
    for q in independent_spans(&x, p - 1) {
        let w = witness(&x, &q);
        spans.entry(bitmask(&w.indices)).or_insert(w);
    }
    let mut all: Vec<SubspaceWitness> = spans.into_values().collect();
    all.sort_by(|a, b| {
        excess(b, n, p)
            .cmp(&excess(a, n, p))
            .then(a.indices.cmp(&b.indices))
    });
    let Some(worst) = all.first() else {
        return ExistenceVerdict {
            status: ExistenceStatus::UniqueExists,
            witness: None,
            exhaustive: true,
        };
    };
    let status = match excess(worst, n, p) {
        e if e > 0 => ExistenceStatus::NoSolution,
        0 => {
            let saturated: Vec<&SubspaceWitness> =
                all.iter().filter(|w| excess(w, n, p) == 0).collect();
            if saturated.iter().all(|w| splits(&x, w)) {
                ExistenceStatus::ExistsNonUnique
            } else {
                ExistenceStatus::ApproxOnly
            }
        }
        _ => ExistenceStatus::UniqueExists,
    };
    let witness = match status {
        ExistenceStatus::UniqueExists => None,
        ExistenceStatus::ApproxOnly => all
            .iter()
            .find(|w| excess(w, n, p) == 0 && !splits(&x, w))
            .cloned(),
        _ => Some(worst.clone()),
    };
    ExistenceVerdict {
        status,
        witness,
        exhaustive: true,
    }
}

/// Whether the samples outside `w` span a complement of it.
fn splits(x: &VectorTuple, w: &SubspaceWitness) -> bool {
    let p = x.dim();
    let rest: Vec<usize> = (0..x.len()).filter(|i| !w.indices.contains(i)).collect();
    if rest.is_empty() {
        return false;
    }
    let r = span_basis(&x.columns().select_columns(rest.iter()));
    if r.ncols() != p - w.k {
        return false;
    }
    let l = DMatrix::from_fn(p, w.k, |i, j| w.basis[j][i]);
    let mut both = DMatrix::zeros(p, p);
    both.columns_mut(0, w.k).copy_from(&l);
    both.columns_mut(w.k, p - w.k).copy_from(&r);
    span_basis(&both).ncols() == p
}

fn subsets_upto(p: usize, cap: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for size in 1..p {
        let mut comb: Vec<usize> = (0..size).collect();
        let mut count = 0;
        loop {
            if count >= cap {
                break;
            }
            out.push(comb.clone());
            count += 1;
            let mut i = size;
            while i > 0 && comb[i - 1] == p - size + i - 1 {
                i -= 1;
            }
            if i == 0 {
                break;
            }
            comb[i - 1] += 1;
            for j in i..size {
                comb[j] = comb[j - 1] + 1;
            }
        }
    }
    out
}

/// Spans of subsets of the columns of an orthonormal `basis` holding at least
/// `k n / p` samples. A sample lies in a span when its coefficients outside the
/// subset have norm at most `MEMBERSHIP_TOL·‖x_i‖`, so only samples with some
/// coefficient that small can lie in any proper coordinate span.
fn coordinate_witnesses(x: &VectorTuple, basis: &DMatrix<f64>) -> Vec<SubspaceWitness> {
    let (p, n) = (x.dim(), x.len());
    let coeff = basis.transpose() * x.columns();
    let tol2: Vec<f64> = x
        .norms()
        .iter()
        .map(|r| (MEMBERSHIP_TOL * r).powi(2))
        .collect();
    let reducible: Vec<usize> = (0..n)
        .filter(|&i| coeff.column(i).iter().any(|c| c * c <= tol2[i]))
        .collect();
    let mut out = Vec::new();
    for subset in subsets_upto(p, PARTIAL_SUBSET_CAP) {
        let k = subset.len();
        if reducible.len() * p < k * n {
            continue;
        }
        let mut inside = vec![false; p];
        for &j in &subset {
            inside[j] = true;
        }
        let indices: Vec<usize> = reducible
            .iter()
            .copied()
            .filter(|&i| {
                let outside: f64 = (0..p)
                    .filter(|&j| !inside[j])
                    .map(|j| coeff[(j, i)].powi(2))
                    .sum();
                outside <= tol2[i]
            })
            .collect();
        if indices.len() * p >= k * n {
            let q = basis.select_columns(subset.iter());
            out.push(SubspaceWitness {
                m: indices.len(),
                k,
                basis: q
                    .column_iter()
                    .map(|c| c.iter().cloned().collect())
                    .collect(),
                indices,
            });
        }
    }
    out
}

/// Checks for large inputs: repeated directions, coordinate subspaces and
/// eigenspaces.
fn partial_check(x: &VectorTuple) -> ExistenceVerdict {
    let (p, n) = (x.dim(), x.len());
    let mut candidates: Vec<SubspaceWitness> = Vec::new();

    // repeated directions: sort sign-canonical unit vectors and group neighbours
    let canon: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let v = x.vector(i);
            let lead = v.iter().find(|c| c.abs() > 1e-12).copied().unwrap_or(1.0);
            v.iter().map(|c| c * lead.signum()).collect()
        })
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        canon[a]
            .iter()
            .zip(&canon[b])
            .map(|(u, v)| u.total_cmp(v))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut start = 0;
    while start < n {
        let head = order[start];
        let mut end = start + 1;
        while end < n
            && canon[order[end]]
                .iter()
                .zip(&canon[head])
                .all(|(u, v)| (u - v).abs() <= MEMBERSHIP_TOL)
        {
            end += 1;
        }
        if (end - start) * p >= n {
            let q = DMatrix::from_column_slice(p, 1, &canon[head]);
            candidates.push(witness(x, &q));
        }
        start = end;
    }

    let (_, eig) = sym_eigen(&x.gram());
    for basis in [DMatrix::identity(p, p), eig] {
        candidates.extend(coordinate_witnesses(x, &basis));
    }
    candidates.sort_by(|a, b| {
        excess(b, n, p)
            .cmp(&excess(a, n, p))
            .then(a.indices.cmp(&b.indices))
    });
    let (status, witness) = match candidates.into_iter().next() {
        Some(w) if excess(&w, n, p) > 0 => (ExistenceStatus::NoSolution, Some(w)),
        Some(w) => (ExistenceStatus::Inconclusive, Some(w)),
        None => (ExistenceStatus::UniqueExists, None),
    };
    ExistenceVerdict {
        status,
        witness,
        exhaustive: false,
    }
}

/// `‖(p/n) Σ x_i x_iᵀ/(x_iᵀ S⁻¹ x_i) − S‖_F / ‖S‖_F`.
pub fn residual(x: &VectorTuple, s: &PdMatrix) -> Result<f64> {
    let (p, n) = (x.dim(), x.len());
    if s.dim() != p {
        return Err(Error::DimMismatch {
            expected: p,
            actual: s.dim(),
        });
    }
    let sinv = s.inverse();
    let q = sinv.as_matrix() * x.columns();
    let mut weighted = x.columns().clone();
    for (i, mut col) in weighted.column_iter_mut().enumerate() {
        col /= x.vector(i).dot(&q.column(i));
    }
    let fixed = weighted * x.columns().transpose() * (p as f64 / n as f64);
    Ok((fixed - s.as_matrix()).norm() / s.as_matrix().norm())
}

/// Estimates the shape from `x`, starting the Sinkhorn iteration at `I`.
///
/// Samples are normalized to unit length first. The estimate is
/// `p Z⁻¹ / tr Z⁻¹` for the final iterate `Z`; when the run diverges it is the
/// last iterate reached and the trace status says so.
pub fn estimate(x: &VectorTuple, tol: f64, max_iters: usize) -> Result<EstimateResult> {
    let unit = x.normalized();
    let p = unit.dim();
    let phi = CpMap::from_vectors(unit.clone());
    let (z, trace) = run(&phi, &PdMatrix::identity(p), tol, max_iters)?;
    let sigma_hat = normalize(&z.inverse(), Normalization::TraceP);
    let residual = residual(&unit, &sigma_hat)?;
    let verdict = existence_check(&unit, DEFAULT_EXHAUSTIVE_LIMIT);
    Ok(EstimateResult {
        sigma_hat,
        trace,
        residual,
        verdict,
    })
}

fn check_invertible(a: &DMatrix<f64>, p: usize) -> Result<()> {
    if a.shape() != (p, p) {
        return Err(Error::DimMismatch {
            expected: p,
            actual: a.nrows(),
        });
    }
    let det = a.clone().determinant();
    if !(det.abs() >= 1e-12) {
        return Err(Error::SingularScaling(det.abs()));
    }
    Ok(())
}

/// `A Σ̂(x) Aᵀ` at trace `p`; equals `Σ̂({A x_i})` by equivariance.
pub fn conjugate_estimate(
    x: &VectorTuple,
    a: &DMatrix<f64>,
    tol: f64,
    max_iters: usize,
) -> Result<PdMatrix> {
    check_invertible(a, x.dim())?;
    let est = estimate(x, tol, max_iters)?;
    let m = a * est.sigma_hat.as_matrix() * a.transpose();
    Ok(normalize(
        &PdMatrix::new(crate::linalg::symmetrize(&m))?,
        Normalization::TraceP,
    ))
}

/// The sample map of `z_i = S^{−1/2} x_i / ‖S^{−1/2} x_i‖`.
pub fn scaled_operator(x: &VectorTuple, s: &PdMatrix) -> Result<CpMap> {
    if s.dim() != x.dim() {
        return Err(Error::DimMismatch {
            expected: x.dim(),
            actual: s.dim(),
        });
    }
    Ok(CpMap::from_vectors(
        x.transform(s.inv_sqrt().as_matrix())?.normalized(),
    ))
}
