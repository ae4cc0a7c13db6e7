//! Completely positive maps `Φ: Sym(p) → Sym(n)`, their duals, sizes,
//! balancedness, scalings and matrixization.
//!
//! Two representations are kept. [`CpMap::DiagonalOutput`] is the sample map
//! `X ↦ diag(x_iᵀ X x_i)`; its output space is the `n`-dimensional space of
//! diagonal matrices, so applying it costs `O(n p²)` and its matrix has only
//! `n` rows. [`CpMap::GeneralKraus`] is `X ↦ Σ A_i X A_iᵀ` with `n × p` Kraus
//! operators.

use nalgebra::{DMatrix, DVector, DVectorView};

use crate::error::{Error, Result};
use crate::linalg::{sym_op_norm, SymMatrix};

/// `n` nonzero sample vectors in `R^p`, stored as the columns of a `p × n` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorTuple {
    data: DMatrix<f64>,
}

impl VectorTuple {
    /// Builds a tuple from the columns of a `p × n` matrix.
    pub fn from_columns(data: DMatrix<f64>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::InvalidArgument(format!(
                "vector tuple needs p >= 1 and n >= 1, got p = {}, n = {}",
                data.nrows(),
                data.ncols()
            )));
        }
        for (index, col) in data.column_iter().enumerate() {
            if col.norm() == 0.0 || !col.norm().is_finite() {
                return Err(Error::AllZeroSample { index });
            }
        }
        Ok(VectorTuple { data })
    }

    /// Builds a tuple from one sample per row.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let p = rows.first().map_or(0, Vec::len);
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != p) {
            return Err(Error::Parse {
                row: i + 1,
                msg: format!("expected {p} columns, found {}", r.len()),
            });
        }
        Self::from_columns(DMatrix::from_fn(p, n, |i, j| rows[j][i]))
    }

    /// Ambient dimension `p`.
    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    /// Number of vectors `n`.
    pub fn len(&self) -> usize {
        self.data.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.data.ncols() == 0
    }

    pub fn vector(&self, i: usize) -> DVectorView<'_, f64> {
        self.data.column(i)
    }

    pub fn columns(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.data
            .column_iter()
            .map(|c| c.iter().cloned().collect())
            .collect()
    }

    pub fn norms(&self) -> Vec<f64> {
        self.data.column_iter().map(|c| c.norm()).collect()
    }

    /// Each vector divided by its Euclidean norm.
    pub fn normalized(&self) -> VectorTuple {
        let mut data = self.data.clone();
        for mut col in data.column_iter_mut() {
            let norm = col.norm();
            col /= norm;
        }
        VectorTuple { data }
    }

    /// `{A x_i}`; fails if some image vanishes.
    pub fn transform(&self, a: &DMatrix<f64>) -> Result<VectorTuple> {
        if a.ncols() != self.dim() {
            return Err(Error::DimMismatch {
                expected: self.dim(),
                actual: a.ncols(),
            });
        }
        Self::from_columns(a * &self.data)
    }

    /// `{c_i x_i}` for nonzero scalars.
    pub fn rescaled(&self, c: &[f64]) -> Result<VectorTuple> {
        if c.len() != self.len() {
            return Err(Error::DimMismatch {
                expected: self.len(),
                actual: c.len(),
            });
        }
        let mut data = self.data.clone();
        for (mut col, &ci) in data.column_iter_mut().zip(c) {
            col *= ci;
        }
        Self::from_columns(data)
    }

    /// `Σ x_i x_iᵀ`.
    pub fn gram(&self) -> DMatrix<f64> {
        &self.data * self.data.transpose()
    }
}

/// Kraus form `X ↦ Σ A_i X A_iᵀ` with every `A_i` of shape `out_dim × in_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct KrausMap {
    ops: Vec<DMatrix<f64>>,
    in_dim: usize,
    out_dim: usize,
}

impl KrausMap {
    pub fn new(ops: Vec<DMatrix<f64>>) -> Result<Self> {
        let first = ops.first().ok_or_else(|| {
            Error::InvalidArgument("Kraus map needs at least one operator".into())
        })?;
        let (out_dim, in_dim) = first.shape();
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::InvalidArgument(
                "Kraus operators must be non-empty".into(),
            ));
        }
        for a in &ops {
            if a.shape() != (out_dim, in_dim) {
                return Err(Error::DimMismatch {
                    expected: out_dim * in_dim,
                    actual: a.nrows() * a.ncols(),
                });
            }
        }
        if ops.iter().all(|a| a.norm() == 0.0) {
            return Err(Error::InvalidArgument("Kraus map has size zero".into()));
        }
        Ok(KrausMap {
            ops,
            in_dim,
            out_dim,
        })
    }

    pub fn operators(&self) -> &[DMatrix<f64>] {
        &self.ops
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CpMap {
    /// `X ↦ diag(x_iᵀ X x_i : i ∈ [n])`.
    DiagonalOutput(VectorTuple),
    GeneralKraus(KrausMap),
}

/// A matrix in the output space of a [`CpMap`].
#[derive(Debug, Clone, PartialEq)]
pub enum OutputMatrix {
    Diagonal(DVector<f64>),
    Full(SymMatrix),
}

impl OutputMatrix {
    pub fn dim(&self) -> usize {
        match self {
            OutputMatrix::Diagonal(d) => d.len(),
            OutputMatrix::Full(m) => m.dim(),
        }
    }

    pub fn identity(n: usize, diagonal: bool) -> Self {
        if diagonal {
            OutputMatrix::Diagonal(DVector::from_element(n, 1.0))
        } else {
            OutputMatrix::Full(SymMatrix::identity(n))
        }
    }

    pub fn to_dense(&self) -> SymMatrix {
        match self {
            OutputMatrix::Diagonal(d) => SymMatrix::from_diagonal(d.as_slice()),
            OutputMatrix::Full(m) => m.clone(),
        }
    }

    pub fn trace(&self) -> f64 {
        match self {
            OutputMatrix::Diagonal(d) => d.sum(),
            OutputMatrix::Full(m) => m.trace(),
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        match self {
            OutputMatrix::Diagonal(d) => d.norm(),
            OutputMatrix::Full(m) => m.frobenius_norm(),
        }
    }

    /// Trace inner product.
    pub fn inner(&self, other: &OutputMatrix) -> f64 {
        match (self, other) {
            (OutputMatrix::Diagonal(a), OutputMatrix::Diagonal(b)) => a.dot(b),
            (OutputMatrix::Diagonal(a), OutputMatrix::Full(b))
            | (OutputMatrix::Full(b), OutputMatrix::Diagonal(a)) => a
                .iter()
                .enumerate()
                .map(|(i, v)| v * b.as_matrix()[(i, i)])
                .sum(),
            (OutputMatrix::Full(a), OutputMatrix::Full(b)) => a.inner(b),
        }
    }

    pub fn diagonal(&self) -> DVector<f64> {
        match self {
            OutputMatrix::Diagonal(d) => d.clone(),
            OutputMatrix::Full(m) => m.as_matrix().diagonal(),
        }
    }

    /// Spectrum (ascending for `Full`; the diagonal entries for `Diagonal`).
    pub fn eigenvalues(&self) -> DVector<f64> {
        match self {
            OutputMatrix::Diagonal(d) => d.clone(),
            OutputMatrix::Full(m) => m.eigenvalues(),
        }
    }

    /// `‖self − c I‖_op`.
    pub fn op_distance_to_scalar(&self, c: f64) -> f64 {
        match self {
            OutputMatrix::Diagonal(d) => d.iter().fold(0.0_f64, |acc, v| acc.max((v - c).abs())),
            OutputMatrix::Full(m) => {
                let n = m.dim();
                sym_op_norm(&(m.as_matrix() - DMatrix::identity(n, n) * c))
            }
        }
    }
}

/// Right-hand factor of a scaling; diagonal for diagonal-output maps.
#[derive(Debug, Clone, PartialEq)]
pub enum RightScaling {
    Diagonal(DVector<f64>),
    Full(DMatrix<f64>),
}

impl RightScaling {
    pub fn identity(n: usize, diagonal: bool) -> Self {
        if diagonal {
            RightScaling::Diagonal(DVector::from_element(n, 1.0))
        } else {
            RightScaling::Full(DMatrix::identity(n, n))
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            RightScaling::Diagonal(d) => DMatrix::from_diagonal(d),
            RightScaling::Full(m) => m.clone(),
        }
    }

    fn dim(&self) -> usize {
        match self {
            RightScaling::Diagonal(d) => d.len(),
            RightScaling::Full(m) => m.nrows(),
        }
    }

    fn det(&self) -> f64 {
        match self {
            RightScaling::Diagonal(d) => d.iter().product(),
            RightScaling::Full(m) => m.clone().determinant(),
        }
    }
}

/// The pair `(L, R)` defining `Φ_{L,R}: X ↦ R Φ(Lᵀ X L) Rᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingPair {
    pub left: DMatrix<f64>,
    pub right: RightScaling,
}

/// Relative and absolute imbalance of `Φ(I)` and `Φ*(I)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Balancedness {
    /// `(n/s) ‖Φ(I_p) − (s/n) I_n‖_op`.
    pub left: f64,
    /// `(p/s) ‖Φ*(I_n) − (s/p) I_p‖_op`.
    pub right: f64,
    pub eps: f64,
}

/// Size limits for [`CpMap::as_matrix`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatrixBudget {
    pub max_in_dim: usize,
    pub max_out_dim_kraus: usize,
    pub max_out_dim_diagonal: usize,
}

impl Default for MatrixBudget {
    fn default() -> Self {
        MatrixBudget {
            max_in_dim: 64,
            max_out_dim_kraus: 256,
            max_out_dim_diagonal: 4096,
        }
    }
}

/// Number of coordinates of `Sym(p)`.
pub fn sym_basis_len(p: usize) -> usize {
    p * (p + 1) / 2
}

/// Index pairs `(i, j)`, `i ≤ j`, in lexicographic order. The pair `(i, i)`
/// stands for `E_ii` and `(i, j)` for `(E_ij + E_ji)/√2`.
pub fn sym_basis_pairs(p: usize) -> Vec<(usize, usize)> {
    (0..p).flat_map(|i| (i..p).map(move |j| (i, j))).collect()
}

/// Coordinates of a symmetric matrix in the orthonormal basis of [`sym_basis_pairs`].
pub fn sym_coords(m: &SymMatrix) -> DVector<f64> {
    let a = m.as_matrix();
    let pairs = sym_basis_pairs(m.dim());
    DVector::from_iterator(
        pairs.len(),
        pairs.iter().map(|&(i, j)| {
            if i == j {
                a[(i, i)]
            } else {
                std::f64::consts::SQRT_2 * a[(i, j)]
            }
        }),
    )
}

/// Inverse of [`sym_coords`].
pub fn sym_from_coords(p: usize, c: &DVector<f64>) -> SymMatrix {
    let mut m = DMatrix::zeros(p, p);
    for (k, (i, j)) in sym_basis_pairs(p).into_iter().enumerate() {
        if i == j {
            m[(i, i)] = c[k];
        } else {
            let v = c[k] / std::f64::consts::SQRT_2;
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    SymMatrix::from_symmetrized(&m)
}

fn sym_basis_element(p: usize, (i, j): (usize, usize)) -> SymMatrix {
    let mut m = DMatrix::zeros(p, p);
    if i == j {
        m[(i, i)] = 1.0;
    } else {
        let v = std::f64::consts::FRAC_1_SQRT_2;
        m[(i, j)] = v;
        m[(j, i)] = v;
    }
    SymMatrix::from_symmetrized(&m)
}

fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimMismatch { expected, actual });
    }
    Ok(())
}

impl CpMap {
    /// The sample map `Φ_x`.
    pub fn from_vectors(x: VectorTuple) -> Self {
        CpMap::DiagonalOutput(x)
    }

    pub fn in_dim(&self) -> usize {
        match self {
            CpMap::DiagonalOutput(v) => v.dim(),
            CpMap::GeneralKraus(k) => k.in_dim,
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            CpMap::DiagonalOutput(v) => v.len(),
            CpMap::GeneralKraus(k) => k.out_dim,
        }
    }

    pub fn is_diagonal_output(&self) -> bool {
        matches!(self, CpMap::DiagonalOutput(_))
    }

    /// Equivalent Kraus operators (`e_i x_iᵀ` for the sample map).
    pub fn to_kraus(&self) -> KrausMap {
        match self {
            CpMap::DiagonalOutput(v) => {
                let (p, n) = (v.dim(), v.len());
                let ops = (0..n)
                    .map(|i| {
                        let mut a = DMatrix::zeros(n, p);
                        a.row_mut(i).copy_from(&v.vector(i).transpose());
                        a
                    })
                    .collect();
                KrausMap {
                    ops,
                    in_dim: p,
                    out_dim: n,
                }
            }
            CpMap::GeneralKraus(k) => k.clone(),
        }
    }

    /// `Φ(Z)`.
    pub fn apply(&self, z: &SymMatrix) -> Result<OutputMatrix> {
        check_dim(self.in_dim(), z.dim())?;
        Ok(match self {
            CpMap::DiagonalOutput(v) => {
                let zx = z.as_matrix() * v.columns();
                let d = DVector::from_iterator(
                    v.len(),
                    zx.column_iter()
                        .zip(v.columns().column_iter())
                        .map(|(a, b)| a.dot(&b)),
                );
                OutputMatrix::Diagonal(d)
            }
            CpMap::GeneralKraus(k) => {
                let mut acc = DMatrix::zeros(k.out_dim, k.out_dim);
                for a in &k.ops {
                    acc += a * z.as_matrix() * a.transpose();
                }
                OutputMatrix::Full(SymMatrix::from_symmetrized(&acc))
            }
        })
    }

    /// `Φ*(W)`; for the sample map only the diagonal of `W` matters.
    pub fn apply_dual(&self, w: &OutputMatrix) -> Result<SymMatrix> {
        check_dim(self.out_dim(), w.dim())?;
        Ok(match self {
            CpMap::DiagonalOutput(v) => {
                let d = w.diagonal();
                let mut weighted = v.columns().clone();
                for (mut col, &di) in weighted.column_iter_mut().zip(d.iter()) {
                    col *= di;
                }
                SymMatrix::from_symmetrized(&(weighted * v.columns().transpose()))
            }
            CpMap::GeneralKraus(k) => {
                let wd = w.to_dense();
                let mut acc = DMatrix::zeros(k.in_dim, k.in_dim);
                for a in &k.ops {
                    acc += a.transpose() * wd.as_matrix() * a;
                }
                SymMatrix::from_symmetrized(&acc)
            }
        })
    }

    /// Identity of the output space, in the representation this map produces.
    pub fn output_identity(&self) -> OutputMatrix {
        OutputMatrix::identity(self.out_dim(), self.is_diagonal_output())
    }

    /// `s(Φ) = tr Φ(I_p)`.
    pub fn size(&self) -> f64 {
        match self {
            CpMap::DiagonalOutput(v) => v.columns().norm_squared(),
            CpMap::GeneralKraus(k) => k.ops.iter().map(|a| a.norm_squared()).sum(),
        }
    }

    pub fn balancedness(&self) -> Balancedness {
        let (p, n) = (self.in_dim() as f64, self.out_dim() as f64);
        let s = self.size();
        let image = self
            .apply(&SymMatrix::identity(self.in_dim()))
            .expect("identity has the input dimension");
        let dual = self
            .apply_dual(&self.output_identity())
            .expect("identity has the output dimension");
        let left = (n / s) * image.op_distance_to_scalar(s / n);
        let right = (p / s)
            * sym_op_norm(
                &(dual.as_matrix() - DMatrix::identity(self.in_dim(), self.in_dim()) * (s / p)),
            );
        Balancedness {
            left,
            right,
            eps: left.max(right),
        }
    }

    /// `Φ_{L,R}: X ↦ R Φ(Lᵀ X L) Rᵀ`. A diagonal-output map stays diagonal
    /// when `R` is diagonal: `x_i ↦ R_ii L x_i`.
    pub fn scale(&self, scaling: &ScalingPair) -> Result<CpMap> {
        let l = &scaling.left;
        check_dim(self.in_dim(), l.nrows())?;
        check_dim(self.in_dim(), l.ncols())?;
        check_dim(self.out_dim(), scaling.right.dim())?;
        let det_l = l.clone().determinant();
        if det_l.abs() < 1e-12 {
            return Err(Error::SingularScaling(det_l.abs()));
        }
        let det_r = scaling.right.det();
        if det_r.abs() < 1e-12 {
            return Err(Error::SingularScaling(det_r.abs()));
        }
        match (self, &scaling.right) {
            (CpMap::DiagonalOutput(v), RightScaling::Diagonal(r)) => {
                let mut data = l * v.columns();
                for (mut col, &ri) in data.column_iter_mut().zip(r.iter()) {
                    col *= ri;
                }
                Ok(CpMap::DiagonalOutput(VectorTuple::from_columns(data)?))
            }
            (map, right) => {
                let r = right.to_dense();
                let ops = map
                    .to_kraus()
                    .ops
                    .iter()
                    .map(|a| &r * a * l.transpose())
                    .collect();
                Ok(CpMap::GeneralKraus(KrausMap::new(ops)?))
            }
        }
    }

    /// Matrix of `Φ` from `Sym(p)` (basis of [`sym_basis_pairs`]) to the output
    /// space: diagonal matrices `E_ii` for the sample map, `Sym(n)` otherwise.
    pub fn as_matrix(&self, budget: &MatrixBudget) -> Result<DMatrix<f64>> {
        let p = self.in_dim();
        if p > budget.max_in_dim {
            return Err(Error::BudgetExceeded {
                what: "p",
                value: p,
                limit: budget.max_in_dim,
            });
        }
        let pairs = sym_basis_pairs(p);
        match self {
            CpMap::DiagonalOutput(v) => {
                if v.len() > budget.max_out_dim_diagonal {
                    return Err(Error::BudgetExceeded {
                        what: "n",
                        value: v.len(),
                        limit: budget.max_out_dim_diagonal,
                    });
                }
                let x = v.columns();
                Ok(DMatrix::from_fn(v.len(), pairs.len(), |r, k| {
                    let (i, j) = pairs[k];
                    if i == j {
                        x[(i, r)] * x[(i, r)]
                    } else {
                        std::f64::consts::SQRT_2 * x[(i, r)] * x[(j, r)]
                    }
                }))
            }
            CpMap::GeneralKraus(k) => {
                if k.out_dim > budget.max_out_dim_kraus {
                    return Err(Error::BudgetExceeded {
                        what: "n",
                        value: k.out_dim,
                        limit: budget.max_out_dim_kraus,
                    });
                }
                let mut m = DMatrix::zeros(sym_basis_len(k.out_dim), pairs.len());
                for (col, &pair) in pairs.iter().enumerate() {
                    let image = self.apply(&sym_basis_element(p, pair))?;
                    m.set_column(col, &sym_coords(&image.to_dense()));
                }
                Ok(m)
            }
        }
    }

    /// Coordinates of an output matrix in the basis used by [`CpMap::as_matrix`].
    pub fn output_coords(&self, w: &OutputMatrix) -> DVector<f64> {
        match self {
            CpMap::DiagonalOutput(_) => w.diagonal(),
            CpMap::GeneralKraus(_) => sym_coords(&w.to_dense()),
        }
    }
}
