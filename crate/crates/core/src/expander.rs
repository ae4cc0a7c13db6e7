//! Quantum-expansion constants, spectral gaps and Cheeger conductance.
//!
//! Singular values are computed exactly from [`CpMap::as_matrix`]. The
//! Cheeger search over projections is an upper bound: the true constant is an
//! infimum over all projections, so every result carries its witness cut.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cpmap::{sym_basis_pairs, CpMap, MatrixBudget, VectorTuple};
use crate::error::{Error, Result};
use crate::linalg::sym_eigen;

/// Tolerance for projection and orthogonality checks.
const STRUCTURE_TOL: f64 = 1e-10;
/// Tolerance for the unit-norm precondition of conductance computations.
const UNIT_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpansionReport {
    pub eps: f64,
    pub lambda: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub size: f64,
    /// `sup ‖Φ(X)‖_F / ‖X‖_F` over traceless symmetric `X`.
    pub traceless_sup: f64,
}

/// Top `k` singular values, descending, via the smaller Gram matrix.
pub fn top_singular_values(m: &DMatrix<f64>, k: usize) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return vec![0.0; k];
    }
    let gram = if m.nrows() >= m.ncols() {
        m.transpose() * m
    } else {
        m * m.transpose()
    };
    let (vals, _) = sym_eigen(&gram);
    let mut out: Vec<f64> = vals
        .iter()
        .rev()
        .take(k)
        .map(|v| v.max(0.0).sqrt())
        .collect();
    out.resize(k, 0.0);
    out
}

/// `M (I − u uᵀ)` where `u = vec(I_p)/√p` in the symmetric coordinate basis.
fn restrict_to_traceless(m: &DMatrix<f64>, p: usize) -> DMatrix<f64> {
    let pairs = sym_basis_pairs(p);
    let u = DVector::from_iterator(
        pairs.len(),
        pairs
            .iter()
            .map(|&(i, j)| if i == j { 1.0 / (p as f64).sqrt() } else { 0.0 }),
    );
    let mu = m * &u;
    m - mu * u.transpose()
}

/// Norm of `Φ` restricted to traceless symmetric matrices; `0` when `p = 1`.
pub fn traceless_sup(phi: &CpMap, budget: &MatrixBudget) -> Result<f64> {
    let m = phi.as_matrix(budget)?;
    Ok(traceless_sup_of_matrix(&m, phi.in_dim()))
}

fn traceless_sup_of_matrix(m: &DMatrix<f64>, p: usize) -> f64 {
    if p == 1 {
        return 0.0;
    }
    top_singular_values(&restrict_to_traceless(m, p), 1)[0]
}

/// `(σ₁, σ₂)` of `Φ` as a linear map.
pub fn spectral_gap(phi: &CpMap, budget: &MatrixBudget) -> Result<(f64, f64)> {
    let m = phi.as_matrix(budget)?;
    let sv = top_singular_values(&m, 2);
    Ok((sv[0], sv[1]))
}

pub fn expansion_constant(phi: &CpMap, budget: &MatrixBudget) -> Result<ExpansionReport> {
    let m = phi.as_matrix(budget)?;
    let (p, n) = (phi.in_dim() as f64, phi.out_dim() as f64);
    let size = phi.size();
    let sup = traceless_sup_of_matrix(&m, phi.in_dim());
    let sv = top_singular_values(&m, 2);
    let lambda = if phi.in_dim() == 1 {
        1.0
    } else {
        1.0 - sup * (n * p).sqrt() / size
    };
    Ok(ExpansionReport {
        eps: phi.balancedness().eps,
        lambda,
        sigma1: sv[0],
        sigma2: sv[1],
        size,
        traceless_sup: sup,
    })
}

fn check_orthogonal(u: &DMatrix<f64>, p: usize) -> Result<()> {
    if u.shape() != (p, p) {
        return Err(Error::DimMismatch {
            expected: p,
            actual: u.nrows(),
        });
    }
    let dev = (u.transpose() * u - DMatrix::identity(p, p)).amax();
    if dev > STRUCTURE_TOL {
        return Err(Error::NotOrthogonal(dev));
    }
    Ok(())
}

/// `B^U_{ij} = (U v_i)_j²`, an `n × p` matrix whose row sums are `‖v_i‖²`.
pub fn b_matrix(v: &VectorTuple, u: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_orthogonal(u, v.dim())?;
    let rotated = u * v.columns();
    Ok(rotated.transpose().map(|x| x * x))
}

/// `sup ‖B x‖/‖x‖` over `x ∈ R^p` with entries summing to zero.
pub fn mean_zero_gain(b: &DMatrix<f64>) -> f64 {
    let p = b.ncols();
    if p <= 1 {
        return 0.0;
    }
    let centering = DMatrix::identity(p, p) - DMatrix::from_element(p, p, 1.0 / p as f64);
    top_singular_values(&(b * centering), 1)[0]
}

/// A cut `(S, π)`: a subset of sample indices and an orthogonal projection.
#[derive(Debug, Clone, PartialEq)]
pub struct Cut {
    pub subset: Vec<usize>,
    pub projection: DMatrix<f64>,
}

impl Cut {
    pub fn new(mut subset: Vec<usize>, projection: DMatrix<f64>) -> Result<Self> {
        let p = projection.nrows();
        if projection.ncols() != p {
            return Err(Error::DimMismatch {
                expected: p,
                actual: projection.ncols(),
            });
        }
        let asym = (&projection - projection.transpose()).amax();
        let idem = (&projection * &projection - &projection).amax();
        if asym > STRUCTURE_TOL || idem > STRUCTURE_TOL {
            return Err(Error::InvalidArgument(format!(
                "not an orthogonal projection (asymmetry {asym:e}, idempotency defect {idem:e})"
            )));
        }
        subset.sort_unstable();
        subset.dedup();
        Ok(Cut { subset, projection })
    }

    /// Projection onto the span of the given orthonormal columns.
    pub fn onto_columns(subset: Vec<usize>, q: &DMatrix<f64>) -> Result<Self> {
        Self::new(subset, q * q.transpose())
    }

    pub fn rank(&self) -> usize {
        self.projection.trace().round().max(0.0) as usize
    }
}

fn check_unit(v: &VectorTuple) -> Result<()> {
    for (i, norm) in v.norms().into_iter().enumerate() {
        if (norm - 1.0).abs() > UNIT_TOL {
            return Err(Error::InvalidArgument(format!(
                "conductance needs unit vectors; vector {i} has norm {norm}"
            )));
        }
    }
    Ok(())
}

/// `φ(S, π) = cut(S, π) / min{vol(S, π), vol(S̄, I − π)}`, `+∞` on a zero denominator.
pub fn conductance(v: &VectorTuple, cut: &Cut) -> Result<f64> {
    check_unit(v)?;
    let p = v.dim();
    if cut.projection.nrows() != p {
        return Err(Error::DimMismatch {
            expected: p,
            actual: cut.projection.nrows(),
        });
    }
    if 2 * cut.rank() > p {
        return Err(Error::RankTooLarge {
            rank: cut.rank(),
            dim: p,
        });
    }
    if let Some(&bad) = cut.subset.iter().find(|&&i| i >= v.len()) {
        return Err(Error::InvalidArgument(format!(
            "cut index {bad} out of range"
        )));
    }
    let mass = projected_mass(v, &cut.projection);
    let in_s = membership(v.len(), &cut.subset);
    let norms2: Vec<f64> = v.norms().iter().map(|x| x * x).collect();
    let mut vol_s = mass.iter().sum::<f64>();
    let mut vol_c = norms2.iter().zip(&mass).map(|(a, b)| a - b).sum::<f64>();
    let mut cut_value = 0.0;
    for i in 0..v.len() {
        if in_s[i] {
            vol_s += norms2[i];
            cut_value += norms2[i] - mass[i];
        } else {
            vol_c += norms2[i];
            cut_value += mass[i];
        }
    }
    Ok(ratio(cut_value, vol_s.min(vol_c)))
}

fn ratio(num: f64, den: f64) -> f64 {
    if den <= 0.0 {
        f64::INFINITY
    } else {
        num / den
    }
}

fn membership(n: usize, subset: &[usize]) -> Vec<bool> {
    let mut in_s = vec![false; n];
    for &i in subset {
        in_s[i] = true;
    }
    in_s
}

/// `‖π v_i‖²` for every vector.
fn projected_mass(v: &VectorTuple, pi: &DMatrix<f64>) -> Vec<f64> {
    let pv = pi * v.columns();
    pv.column_iter().map(|c| c.norm_squared()).collect()
}

/// Best `S` for a fixed projection over unit vectors.
///
/// With `a_i = ‖π v_i‖²`, both volumes depend on `S` only through `|S|`, and
/// the cut equals `Σ a_i + Σ_{i∈S} (1 − 2 a_i)`. For each `|S|` the optimum
/// therefore takes the vectors with the largest `a_i`, so scanning sorted
/// prefixes is exact.
fn best_subset(mass: &[f64]) -> (f64, Vec<usize>) {
    let n = mass.len();
    let total: f64 = mass.iter().sum();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| mass[b].total_cmp(&mass[a]).then(a.cmp(&b)));
    let mut best = (f64::INFINITY, 0usize);
    let mut cut = total;
    for len in 0..=n {
        if len > 0 {
            cut += 1.0 - 2.0 * mass[order[len - 1]];
        }
        let vol_s = total + len as f64;
        let vol_c = (n as f64 - total) + (n - len) as f64;
        let phi = ratio(cut.max(0.0), vol_s.min(vol_c));
        if phi < best.0 {
            best = (phi, len);
        }
    }
    let mut subset = order[..best.1].to_vec();
    subset.sort_unstable();
    (best.0, subset)
}

/// Candidate families for [`cheeger_upper_bound`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CandidateBudget {
    /// Largest number of coordinate subsets tried in each basis.
    pub max_coordinate_subsets: usize,
    /// Largest vector-subset size whose span is tried.
    pub span_size: usize,
    /// Haar-random projections per rank.
    pub random_count: usize,
    pub seed: u64,
}

impl Default for CandidateBudget {
    fn default() -> Self {
        CandidateBudget {
            max_coordinate_subsets: 4096,
            span_size: 2,
            random_count: 8,
            seed: 0,
        }
    }
}

/// Subsets of `0..p` of size `1..=max_size` in size-then-lexicographic order, capped.
fn bounded_subsets(p: usize, max_size: usize, cap: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for size in 1..=max_size.min(p) {
        let mut comb: Vec<usize> = (0..size).collect();
        loop {
            if out.len() >= cap {
                return out;
            }
            out.push(comb.clone());
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

/// Orthonormal basis of the column span, or `None` if the columns are dependent.
fn orthonormal_span(cols: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let k = cols.ncols();
    let svd = cols.clone().svd(true, false);
    let smax = svd.singular_values.max();
    if svd.singular_values.iter().any(|&s| s <= 1e-9 * smax) {
        return None;
    }
    let u = svd.u?;
    Some(u.columns(0, k).into_owned())
}

fn candidate_projections(v: &VectorTuple, budget: &CandidateBudget) -> Vec<DMatrix<f64>> {
    let p = v.dim();
    let half = p / 2;
    let mut cands = vec![DMatrix::zeros(p, p)];
    if half == 0 {
        return cands;
    }
    let (_, eigvecs) = sym_eigen(&v.gram());
    let bases = [eigvecs, DMatrix::identity(p, p)];
    for basis in &bases {
        for subset in bounded_subsets(p, half, budget.max_coordinate_subsets) {
            let q = basis.select_columns(subset.iter());
            cands.push(&q * q.transpose());
        }
    }
    for subset in bounded_subsets(v.len(), budget.span_size.min(half), usize::MAX) {
        let cols = v.columns().select_columns(subset.iter());
        if let Some(q) = orthonormal_span(&cols) {
            cands.push(&q * q.transpose());
        }
    }
    for rank in 1..=half {
        let mut rng = ChaCha8Rng::seed_from_u64(budget.seed);
        rng.set_stream(rank as u64);
        for _ in 0..budget.random_count {
            let g = DMatrix::from_fn(p, rank, |_, _| StandardNormal.sample(&mut rng));
            if let Some(q) = orthonormal_span(&g) {
                cands.push(&q * q.transpose());
            }
        }
    }
    cands
}

/// Smallest conductance over the candidate family, with its witness cut.
///
/// Candidates are coordinate projections in the eigenbasis of `Σ v_i v_iᵀ`
/// and in the standard basis, spans of small vector subsets, and seeded Haar
/// projections of every rank up to `p/2`. For each projection the best
/// subset is found exactly. Ties resolve to the earliest candidate, so the
/// result does not depend on thread scheduling.
pub fn cheeger_upper_bound(v: &VectorTuple, budget: &CandidateBudget) -> Result<(f64, Cut)> {
    check_unit(v)?;
    let cands = candidate_projections(v, budget);
    let (idx, value, subset) = cands
        .par_iter()
        .enumerate()
        .map(|(idx, pi)| {
            let (value, subset) = best_subset(&projected_mass(v, pi));
            (idx, value, subset)
        })
        .reduce(
            || (usize::MAX, f64::INFINITY, Vec::new()),
            |a, b| match a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)) {
                std::cmp::Ordering::Greater => b,
                _ => a,
            },
        );
    let projection = cands[idx].clone();
    Ok((value, Cut { subset, projection }))
}

/// Minimizing cut of a weighted bipartite graph.
#[derive(Debug, Clone, PartialEq)]
pub struct BipartiteCut {
    pub value: f64,
    /// Row subset, `|T| ≤ rows/2`.
    pub rows: Vec<usize>,
    /// Column subset.
    pub cols: Vec<usize>,
    /// Whether every cut was enumerated.
    pub exact: bool,
}

/// Default size threshold for exhaustive enumeration in [`bipartite_cheeger`].
pub const BIPARTITE_EXACT_THRESHOLD: usize = 24;

struct BipartiteSums {
    row: Vec<f64>,
    col: Vec<f64>,
    total: f64,
}

impl BipartiteSums {
    fn new(b: &DMatrix<f64>) -> Self {
        let row: Vec<f64> = b.row_iter().map(|r| r.sum()).collect();
        let col: Vec<f64> = b.column_iter().map(|c| c.sum()).collect();
        let total = row.iter().sum();
        BipartiteSums { row, col, total }
    }

    /// Mass of each column inside the row subset.
    fn col_in_rows(b: &DMatrix<f64>, rows: &[usize]) -> Vec<f64> {
        (0..b.ncols())
            .map(|j| rows.iter().map(|&i| b[(i, j)]).sum())
            .collect()
    }

    /// `φ` given the row-subset mass `r_t`, the column-subset mass `c_s` and the
    /// cut value.
    fn phi(&self, r_t: f64, c_s: f64, cut: f64) -> f64 {
        let vol = r_t + c_s;
        let vol_c = (self.total - r_t) + (self.total - c_s);
        ratio(cut.max(0.0), vol.min(vol_c))
    }
}

/// `ch(B) = min φ(S, T)` over `T ⊂ rows` with `|T| ≤ rows/2` and `S ⊂ cols`.
///
/// Exhaustive when `rows + cols ≤ exact_threshold`; otherwise a heuristic
/// that tries every row subset of size at most two and sorted-ratio prefixes
/// for the columns.
pub fn bipartite_cheeger(b: &DMatrix<f64>, exact_threshold: usize) -> Result<BipartiteCut> {
    if b.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(Error::InvalidArgument(
            "bipartite weights must be finite and nonnegative".into(),
        ));
    }
    let (pr, nc) = b.shape();
    let sums = BipartiteSums::new(b);
    let exact = pr + nc <= exact_threshold;
    let mut best = BipartiteCut {
        value: f64::INFINITY,
        rows: Vec::new(),
        cols: Vec::new(),
        exact,
    };
    let mut row_subsets = vec![Vec::new()];
    row_subsets.extend(bounded_subsets(
        pr,
        if exact { pr / 2 } else { (pr / 2).min(2) },
        usize::MAX,
    ));
    for t in row_subsets {
        let inside = BipartiteSums::col_in_rows(b, &t);
        let r_t: f64 = t.iter().map(|&i| sums.row[i]).sum();
        // cut(S, T) = r_t + Σ_{j∈S} (col_j − 2 inside_j)
        let delta: Vec<f64> = (0..nc).map(|j| sums.col[j] - 2.0 * inside[j]).collect();
        let (value, cols) = if exact {
            best_cols_exhaustive(&sums, r_t, &delta)
        } else {
            best_cols_sorted(&sums, r_t, &delta, &inside)
        };
        if value < best.value {
            best.value = value;
            best.rows = t;
            best.cols = cols;
        }
    }
    Ok(best)
}

fn best_cols_exhaustive(sums: &BipartiteSums, r_t: f64, delta: &[f64]) -> (f64, Vec<usize>) {
    let nc = delta.len();
    let mut mask: u64 = 0;
    let (mut cut, mut c_s) = (r_t, 0.0);
    let mut best = (sums.phi(r_t, 0.0, r_t), 0u64);
    // Gray code: step k flips the lowest set bit of k
    for k in 1u64..(1u64 << nc) {
        let j = k.trailing_zeros() as usize;
        mask ^= 1 << j;
        if mask & (1 << j) != 0 {
            cut += delta[j];
            c_s += sums.col[j];
        } else {
            cut -= delta[j];
            c_s -= sums.col[j];
        }
        let phi = sums.phi(r_t, c_s, cut);
        if phi < best.0 {
            best = (phi, mask);
        }
    }
    let cols = (0..nc).filter(|&j| best.1 & (1 << j) != 0).collect();
    (best.0, cols)
}

fn best_cols_sorted(
    sums: &BipartiteSums,
    r_t: f64,
    delta: &[f64],
    inside: &[f64],
) -> (f64, Vec<usize>) {
    let nc = delta.len();
    let frac: Vec<f64> = (0..nc)
        .map(|j| {
            if sums.col[j] > 0.0 {
                inside[j] / sums.col[j]
            } else {
                0.0
            }
        })
        .collect();
    let mut order: Vec<usize> = (0..nc).collect();
    order.sort_by(|&a, &b| frac[b].total_cmp(&frac[a]).then(a.cmp(&b)));
    let (mut cut, mut c_s) = (r_t, 0.0);
    let mut best = (sums.phi(r_t, 0.0, r_t), 0usize);
    for (len, &j) in order.iter().enumerate() {
        cut += delta[j];
        c_s += sums.col[j];
        let phi = sums.phi(r_t, c_s, cut);
        if phi < best.0 {
            best = (phi, len + 1);
        }
    }
    let mut cols = order[..best.1].to_vec();
    cols.sort_unstable();
    (best.0, cols)
}

/// Flat diagnostics record for a sample map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub eps: f64,
    pub lambda: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub size: f64,
    pub cheeger_ub: f64,
    pub n: usize,
    pub p: usize,
    pub seed: u64,
}

impl DiagnosticsReport {
    pub const CSV_HEADER: &'static str = "eps,lambda,sigma1,sigma2,size,cheeger_ub,n,p,seed";

    fn fields(&self) -> [(&'static str, String); 9] {
        [
            ("eps", self.eps.to_string()),
            ("lambda", self.lambda.to_string()),
            ("sigma1", self.sigma1.to_string()),
            ("sigma2", self.sigma2.to_string()),
            ("size", self.size.to_string()),
            ("cheeger_ub", self.cheeger_ub.to_string()),
            ("n", self.n.to_string()),
            ("p", self.p.to_string()),
            ("seed", self.seed.to_string()),
        ]
    }

    /// One `key=value` pair per line.
    pub fn to_key_value(&self) -> String {
        self.fields()
            .iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    pub fn to_csv_row(&self) -> String {
        self.fields()
            .iter()
            .map(|(_, v)| v.as_str())
            .collect::<Vec<_>>()
            .join(",")
    }
}

/// Expansion, spectrum and Cheeger bound of the sample map of `x`.
pub fn diagnose(
    x: &VectorTuple,
    matrix_budget: &MatrixBudget,
    candidates: &CandidateBudget,
) -> Result<DiagnosticsReport> {
    let phi = CpMap::from_vectors(x.clone());
    let report = expansion_constant(&phi, matrix_budget)?;
    let (cheeger_ub, _) = cheeger_upper_bound(&x.normalized(), candidates)?;
    Ok(DiagnosticsReport {
        eps: report.eps,
        lambda: report.lambda,
        sigma1: report.sigma1,
        sigma2: report.sigma2,
        size: report.size,
        cheeger_ub,
        n: x.len(),
        p: x.dim(),
        seed: candidates.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cpmap::KrausMap;
    use rand::Rng;

    fn tuple(rows: &[&[f64]]) -> VectorTuple {
        VectorTuple::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn e(p: usize, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; p];
        v[i] = 1.0;
        v
    }

    fn haar(p: usize, n: usize, seed: u64) -> VectorTuple {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = DMatrix::from_fn(p, n, |_, _| StandardNormal.sample(&mut rng));
        VectorTuple::from_columns(g).unwrap().normalized()
    }

    fn projector(p: usize, idx: &[usize]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(p, p);
        for &i in idx {
            m[(i, i)] = 1.0;
        }
        m
    }

    fn random_orthogonal(p: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let g = DMatrix::from_fn(p, p, |_, _| StandardNormal.sample(rng));
        g.qr().q()
    }

    #[test]
    fn expansion_of_basis_tuple() {
        let phi = CpMap::from_vectors(tuple(&[&[1.0, 0.0], &[0.0, 1.0]]));
        let r = expansion_constant(&phi, &MatrixBudget::default()).unwrap();
        assert!(r.lambda.abs() < 1e-12);
        assert!((r.traceless_sup - 1.0).abs() < 1e-12);
        assert!((r.sigma1 - 1.0).abs() < 1e-12 && (r.sigma2 - 1.0).abs() < 1e-12);
        assert_eq!(r.eps, 0.0);
    }

    #[test]
    fn expansion_for_p1_is_vacuous() {
        let phi = CpMap::from_vectors(tuple(&[&[1.0], &[2.0]]));
        let r = expansion_constant(&phi, &MatrixBudget::default()).unwrap();
        assert_eq!(r.lambda, 1.0);
        assert_eq!(r.traceless_sup, 0.0);
    }

    #[test]
    fn haar_tuple_has_a_gap() {
        let phi = CpMap::from_vectors(haar(4, 400, 2024));
        let r = expansion_constant(&phi, &MatrixBudget::default()).unwrap();
        assert!(r.lambda >= 0.1, "lambda = {}", r.lambda);
    }

    #[test]
    fn traceless_sup_matches_explicit_basis_oracle() {
        // Oracle: build an orthonormal basis of traceless symmetric matrices by
        // Gram-Schmidt on the image of basis matrices, apply the map, and take
        // the top singular value of the resulting matrix.
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x =
            VectorTuple::from_columns(DMatrix::from_fn(3, 7, |_, _| rng.random_range(-1.0..1.0)))
                .unwrap();
        let phi = CpMap::from_vectors(x.clone());
        let p = 3;
        let mut basis: Vec<DMatrix<f64>> = Vec::new();
        for i in 0..p {
            for j in i..p {
                let mut m = DMatrix::zeros(p, p);
                m[(i, j)] = 1.0;
                m[(j, i)] = 1.0;
                let tr = m.trace() / p as f64;
                m -= DMatrix::identity(p, p) * tr;
                for b in &basis {
                    let c = m.dot(b);
                    m -= b * c;
                }
                if m.norm() > 1e-9 {
                    basis.push(&m / m.norm());
                }
            }
        }
        assert_eq!(basis.len(), 5);
        let cols: Vec<DVector<f64>> = basis
            .iter()
            .map(|b| {
                DVector::from_iterator(
                    7,
                    x.columns()
                        .column_iter()
                        .map(|c| (c.transpose() * b * c)[(0, 0)]),
                )
            })
            .collect();
        let m = DMatrix::from_columns(&cols);
        let oracle = m.svd(false, false).singular_values.max();
        let got = traceless_sup(&phi, &MatrixBudget::default()).unwrap();
        assert!((got - oracle).abs() < 1e-10 * oracle);
    }

    #[test]
    fn spectral_gap_of_orthonormal_copies() {
        for m in [1usize, 3] {
            let rows: Vec<Vec<f64>> = (0..3)
                .flat_map(|i| std::iter::repeat_n(e(3, i), m))
                .collect();
            let phi = CpMap::from_vectors(VectorTuple::from_rows(&rows).unwrap());
            let (s1, s2) = spectral_gap(&phi, &MatrixBudget::default()).unwrap();
            let n = (3 * m) as f64;
            let expected = phi.size() / (n * 3.0).sqrt();
            assert!((s1 - expected).abs() < 1e-12);
            assert!(s2 <= s1 + 1e-12);
        }
    }

    #[test]
    fn sigma1_is_bounded_by_balancedness() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..20 {
            let ops = (0..3)
                .map(|_| DMatrix::from_fn(4, 3, |_, _| rng.random_range(-1.0..1.0)))
                .collect();
            let phi = CpMap::GeneralKraus(KrausMap::new(ops).unwrap());
            let r = expansion_constant(&phi, &MatrixBudget::default()).unwrap();
            let bound = (1.0 + r.eps) * r.size / 12f64.sqrt();
            assert!(r.sigma1 <= bound + 1e-10);
        }
    }

    #[test]
    fn b_matrix_examples() {
        let v = tuple(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let b = b_matrix(&v, &DMatrix::identity(2, 2)).unwrap();
        assert_eq!(b, DMatrix::identity(2, 2));

        let v = tuple(&[&[3.0, -2.0], &[0.5, 1.0]]);
        let b = b_matrix(&v, &DMatrix::identity(2, 2)).unwrap();
        assert_eq!(b, DMatrix::from_row_slice(2, 2, &[9.0, 4.0, 0.25, 1.0]));

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v = haar(5, 9, 4);
        let u = random_orthogonal(5, &mut rng);
        let b = b_matrix(&v, &u).unwrap();
        for (row, norm) in b.row_iter().zip(v.norms()) {
            assert!((row.sum() - norm * norm).abs() < 1e-12);
        }
        assert!(matches!(
            b_matrix(&v, &(DMatrix::identity(5, 5) * 2.0)),
            Err(Error::NotOrthogonal(_))
        ));
    }

    #[test]
    fn b_matrix_gain_is_dominated_by_traceless_sup() {
        let v = haar(4, 40, 12);
        let sup = traceless_sup(&CpMap::from_vectors(v.clone()), &MatrixBudget::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..10 {
            let b = b_matrix(&v, &random_orthogonal(4, &mut rng)).unwrap();
            assert!(mean_zero_gain(&b) <= sup + 1e-9);
        }
    }

    #[test]
    fn conductance_examples() {
        let v = tuple(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let cut = Cut::new(vec![0], projector(2, &[0])).unwrap();
        assert_eq!(conductance(&v, &cut).unwrap(), 0.0);
        // S = ∅: cut = ‖π e1‖² + ‖π e2‖² = 1, vol(S, π) = 1, vol(S̄, I − π) = 3
        let cut = Cut::new(vec![], projector(2, &[0])).unwrap();
        assert_eq!(conductance(&v, &cut).unwrap(), 1.0);

        let v3 = tuple(&[&[1.0, 0.0, 0.0]]);
        let cut = Cut::new(vec![], projector(3, &[0, 1])).unwrap();
        assert!(matches!(
            conductance(&v3, &cut),
            Err(Error::RankTooLarge { rank: 2, dim: 3 })
        ));
    }

    #[test]
    fn conductance_matches_direct_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let v = haar(5, 11, 22);
        for _ in 0..20 {
            let k = rng.random_range(1..=2);
            let q = orthonormal_span(&DMatrix::from_fn(5, k, |_, _| {
                StandardNormal.sample(&mut rng)
            }))
            .unwrap();
            let subset: Vec<usize> = (0..11).filter(|_| rng.random_bool(0.4)).collect();
            let cut = Cut::onto_columns(subset.clone(), &q).unwrap();
            let pi = &cut.projection;
            let comp = DMatrix::identity(5, 5) - pi;
            let (mut vol_s, mut vol_c, mut c) = (0.0, 0.0, 0.0);
            for i in 0..11 {
                let x = v.vector(i);
                vol_s += (pi * x).norm_squared();
                vol_c += (&comp * x).norm_squared();
                if subset.contains(&i) {
                    vol_s += x.norm_squared();
                    c += (&comp * x).norm_squared();
                } else {
                    vol_c += x.norm_squared();
                    c += (pi * x).norm_squared();
                }
            }
            let oracle = c / vol_s.min(vol_c);
            assert!((conductance(&v, &cut).unwrap() - oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn sorted_prefix_matches_brute_force_over_subsets() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let v = haar(4, 10, 41);
        for _ in 0..10 {
            let q = orthonormal_span(&DMatrix::from_fn(4, 2, |_, _| {
                StandardNormal.sample(&mut rng)
            }))
            .unwrap();
            let pi = &q * q.transpose();
            let (fast, subset) = best_subset(&projected_mass(&v, &pi));
            let mut brute = f64::INFINITY;
            for mask in 0u32..(1 << 10) {
                let s: Vec<usize> = (0..10).filter(|&i| mask & (1 << i) != 0).collect();
                brute = brute.min(conductance(&v, &Cut::new(s, pi.clone()).unwrap()).unwrap());
            }
            assert!((fast - brute).abs() < 1e-12);
            let witness = conductance(&v, &Cut::new(subset, pi.clone()).unwrap()).unwrap();
            assert!((witness - fast).abs() < 1e-12);
        }
    }

    #[test]
    fn cheeger_of_split_tuples_is_zero() {
        let v = tuple(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let (value, witness) = cheeger_upper_bound(&v, &CandidateBudget::default()).unwrap();
        assert_eq!(value, 0.0);
        assert_eq!(witness.rank(), 1);
        assert_eq!(conductance(&v, &witness).unwrap(), 0.0);

        let v = tuple(&[&[1.0, 0.0], &[1.0, 0.0], &[0.0, 1.0], &[0.0, 1.0]]);
        let (value, witness) = cheeger_upper_bound(&v, &CandidateBudget::default()).unwrap();
        assert_eq!(value, 0.0);
        assert_eq!(conductance(&v, &witness).unwrap(), 0.0);
    }

    #[test]
    fn cheeger_of_haar_tuple_is_bounded_below() {
        let v = haar(4, 64, 7);
        let (value, witness) = cheeger_upper_bound(&v, &CandidateBudget::default()).unwrap();
        assert!(value >= 0.1, "cheeger upper bound {value}");
        assert!((conductance(&v, &witness).unwrap() - value).abs() < 1e-12);
    }

    #[test]
    fn cheeger_is_monotone_in_budget() {
        let v = haar(4, 30, 9);
        let small = CandidateBudget {
            random_count: 2,
            span_size: 1,
            ..CandidateBudget::default()
        };
        let large = CandidateBudget {
            random_count: 16,
            span_size: 2,
            ..CandidateBudget::default()
        };
        let (a, _) = cheeger_upper_bound(&v, &small).unwrap();
        let (b, _) = cheeger_upper_bound(&v, &large).unwrap();
        assert!(b <= a);
        assert!(b >= 0.0);
    }

    /// Direct definition of `φ(S, T)` for the bipartite graph of `b`.
    fn bipartite_phi(b: &DMatrix<f64>, t: &[usize], s: &[usize]) -> f64 {
        let (pr, nc) = b.shape();
        let (mut vol, mut vol_c, mut cut) = (0.0, 0.0, 0.0);
        for i in 0..pr {
            for j in 0..nc {
                let (it, js) = (t.contains(&i), s.contains(&j));
                if it {
                    vol += b[(i, j)];
                } else {
                    vol_c += b[(i, j)];
                }
                if js {
                    vol += b[(i, j)];
                } else {
                    vol_c += b[(i, j)];
                }
                if it != js {
                    cut += b[(i, j)];
                }
            }
        }
        if vol.min(vol_c) <= 0.0 {
            f64::INFINITY
        } else {
            cut / vol.min(vol_c)
        }
    }

    fn bipartite_brute(b: &DMatrix<f64>) -> f64 {
        let (pr, nc) = b.shape();
        let mut best = f64::INFINITY;
        for tm in 0u32..(1 << pr) {
            let t: Vec<usize> = (0..pr).filter(|&i| tm & (1 << i) != 0).collect();
            if 2 * t.len() > pr {
                continue;
            }
            for sm in 0u32..(1 << nc) {
                let s: Vec<usize> = (0..nc).filter(|&j| sm & (1 << j) != 0).collect();
                best = best.min(bipartite_phi(b, &t, &s));
            }
        }
        best
    }

    #[test]
    fn bipartite_examples() {
        let r = bipartite_cheeger(&DMatrix::identity(2, 2), BIPARTITE_EXACT_THRESHOLD).unwrap();
        assert_eq!(r.value, 0.0);
        assert!(r.exact);

        // T = {1}, S = {1}: cut 2, both volumes 4
        let ones = DMatrix::from_element(2, 2, 1.0);
        let r = bipartite_cheeger(&ones, BIPARTITE_EXACT_THRESHOLD).unwrap();
        assert!((r.value - 0.5).abs() < 1e-15);
        assert_eq!(r.value, bipartite_brute(&ones));

        let v = tuple(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let b = b_matrix(&v, &DMatrix::identity(2, 2)).unwrap().transpose();
        assert_eq!(
            bipartite_cheeger(&b, BIPARTITE_EXACT_THRESHOLD)
                .unwrap()
                .value,
            0.0
        );
    }

    #[test]
    fn bipartite_exact_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..10 {
            let b = DMatrix::from_fn(4, 6, |_, _| rng.random_range(0.0..1.0));
            let r = bipartite_cheeger(&b, BIPARTITE_EXACT_THRESHOLD).unwrap();
            assert!((r.value - bipartite_brute(&b)).abs() < 1e-12);
            assert!((bipartite_phi(&b, &r.rows, &r.cols) - r.value).abs() < 1e-12);
        }
    }

    #[test]
    fn bipartite_heuristic_returns_a_valid_witness() {
        let mut rng = ChaCha8Rng::seed_from_u64(78);
        let b = DMatrix::from_fn(4, 8, |_, _| rng.random_range(0.0..1.0));
        let r = bipartite_cheeger(&b, 4).unwrap();
        assert!(!r.exact);
        assert!((bipartite_phi(&b, &r.rows, &r.cols) - r.value).abs() < 1e-12);
        assert!(r.value >= bipartite_brute(&b) - 1e-12);
    }

    #[test]
    fn projection_conductance_equals_bipartite_conductance() {
        let mut rng = ChaCha8Rng::seed_from_u64(90);
        let v = haar(4, 6, 91);
        let u = random_orthogonal(4, &mut rng);
        let b = b_matrix(&v, &u).unwrap().transpose();
        let t = vec![1usize, 3];
        let s = vec![0usize, 2, 5];
        let q = u.transpose().select_columns(t.iter());
        let cut = Cut::onto_columns(s.clone(), &q).unwrap();
        let lhs = conductance(&v, &cut).unwrap();
        assert!((lhs - bipartite_phi(&b, &t, &s)).abs() < 1e-12);
    }

    #[test]
    fn diagnostics_serialization() {
        let r = diagnose(
            &tuple(&[&[1.0, 0.0], &[0.0, 1.0]]),
            &MatrixBudget::default(),
            &CandidateBudget::default(),
        )
        .unwrap();
        assert_eq!(r.eps, 0.0);
        assert!(r.lambda.abs() < 1e-12);
        assert_eq!(r.cheeger_ub, 0.0);
        let kv = r.to_key_value();
        assert!(kv.starts_with("eps=0\n"));
        assert!(kv.contains("cheeger_ub=0\n"));
        assert_eq!(
            r.to_csv_row().split(',').count(),
            DiagnosticsReport::CSV_HEADER.split(',').count()
        );
    }
}
