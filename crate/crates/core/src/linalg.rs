//! Sparse operators, factorizations and small dense eigen helpers shared by
//! the assembly, basis construction and time stepping modules.
//!
//! Storage and products go through `nalgebra-sparse`; sparse direct
//! factorizations are delegated to `faer`; small dense problems use
//! `nalgebra`.

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Mat, Side};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use nalgebra_sparse::{CooMatrix, CsrMatrix};

use crate::error::{Error, Result};

/// Sparse matrix over interior fine nodes (or any index space).
#[derive(Debug, Clone)]
pub struct SparseOperator {
    csr: CsrMatrix<f64>,
}

impl SparseOperator {
    /// Builds from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Self {
        let mut coo = CooMatrix::new(nrows, ncols);
        for (i, j, v) in triplets {
            coo.push(i, j, v);
        }
        SparseOperator {
            csr: CsrMatrix::from(&coo),
        }
    }

    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        SparseOperator {
            csr: CsrMatrix::zeros(nrows, ncols),
        }
    }

    pub fn from_csr(csr: CsrMatrix<f64>) -> Self {
        SparseOperator { csr }
    }

    pub fn csr(&self) -> &CsrMatrix<f64> {
        &self.csr
    }

    pub fn nrows(&self) -> usize {
        self.csr.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.csr.ncols()
    }

    pub fn nnz(&self) -> usize {
        self.csr.nnz()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let row = self.csr.row(i);
        match row.col_indices().binary_search(&j) {
            Ok(pos) => row.values()[pos],
            Err(_) => 0.0,
        }
    }

    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.ncols(), "operator/vector size mismatch");
        let mut y = DVector::zeros(self.nrows());
        let offsets = self.csr.row_offsets();
        let cols = self.csr.col_indices();
        let vals = self.csr.values();
        for i in 0..self.nrows() {
            let mut acc = 0.0;
            for k in offsets[i]..offsets[i + 1] {
                acc += vals[k] * x[cols[k]];
            }
            y[i] = acc;
        }
        y
    }

    /// `A^T x`.
    pub fn tr_mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.nrows(), "operator/vector size mismatch");
        let mut y = DVector::zeros(self.ncols());
        let offsets = self.csr.row_offsets();
        let cols = self.csr.col_indices();
        let vals = self.csr.values();
        for i in 0..self.nrows() {
            for k in offsets[i]..offsets[i + 1] {
                y[cols[k]] += vals[k] * x[i];
            }
        }
        y
    }

    /// `x^T A y`.
    pub fn bilinear(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        x.dot(&self.mul_vec(y))
    }

    pub fn quadratic(&self, x: &DVector<f64>) -> f64 {
        self.bilinear(x, x)
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut csr = self.csr.clone();
        for v in csr.values_mut() {
            *v *= s;
        }
        SparseOperator { csr }
    }

    /// `self + s * other`.
    pub fn add_scaled(&self, s: f64, other: &SparseOperator) -> Self {
        assert_eq!(self.nrows(), other.nrows());
        assert_eq!(self.ncols(), other.ncols());
        let triplets = self
            .csr
            .triplet_iter()
            .map(|(i, j, v)| (i, j, *v))
            .chain(other.csr.triplet_iter().map(|(i, j, v)| (i, j, s * v)));
        SparseOperator::from_triplets(self.nrows(), self.ncols(), triplets)
    }

    pub fn transpose(&self) -> Self {
        SparseOperator {
            csr: self.csr.transpose(),
        }
    }

    pub fn matmul(&self, other: &SparseOperator) -> Self {
        SparseOperator {
            csr: &self.csr * &other.csr,
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.nrows(), self.ncols());
        for (i, j, v) in self.csr.triplet_iter() {
            d[(i, j)] += *v;
        }
        d
    }

    /// Restriction to the given rows and columns (in the given order).
    pub fn submatrix(&self, rows: &[usize], cols: &[usize]) -> SparseOperator {
        let mut col_map = vec![usize::MAX; self.ncols()];
        for (local, &c) in cols.iter().enumerate() {
            col_map[c] = local;
        }
        let mut triplets = Vec::new();
        for (li, &r) in rows.iter().enumerate() {
            let row = self.csr.row(r);
            for (&c, &v) in row.col_indices().iter().zip(row.values()) {
                let lc = col_map[c];
                if lc != usize::MAX {
                    triplets.push((li, lc, v));
                }
            }
        }
        SparseOperator::from_triplets(rows.len(), cols.len(), triplets)
    }

    /// Dense restriction to a symmetric index set.
    pub fn dense_block(&self, idx: &[usize]) -> DMatrix<f64> {
        self.submatrix(idx, idx).to_dense()
    }

    /// Largest |A_ij - A_ji| relative to the largest |A_ij|.
    pub fn symmetry_error(&self) -> f64 {
        let mut max_abs = 0.0f64;
        let mut max_diff = 0.0f64;
        for (i, j, v) in self.csr.triplet_iter() {
            max_abs = max_abs.max(v.abs());
            max_diff = max_diff.max((v - self.get(j, i)).abs());
        }
        if max_abs == 0.0 {
            0.0
        } else {
            max_diff / max_abs
        }
    }

    /// Dense `B^T A B` for a sparse tall `B` (columns are basis vectors).
    pub fn project(&self, basis: &SparseOperator) -> DMatrix<f64> {
        let ab = self.matmul(basis);
        basis.transpose().matmul(&ab).to_dense()
    }

    fn to_faer(&self) -> Result<SparseColMat<usize, f64>> {
        let triplets: Vec<_> = self
            .csr
            .triplet_iter()
            .map(|(i, j, v)| Triplet::new(i, j, *v))
            .collect();
        SparseColMat::try_new_from_triplets(self.nrows(), self.ncols(), &triplets)
            .map_err(|e| Error::LinearSolve(format!("{e:?}")))
    }
}

/// Whether a system matrix may be factored with Cholesky.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Structure {
    SymmetricPositiveDefinite,
    General,
}

/// A system matrix in either sparse (fine space) or dense (reduced space) form.
#[derive(Debug, Clone)]
pub enum SystemMatrix {
    Sparse(SparseOperator),
    Dense(DMatrix<f64>),
}

impl SystemMatrix {
    pub fn dim(&self) -> usize {
        match self {
            SystemMatrix::Sparse(s) => s.nrows(),
            SystemMatrix::Dense(d) => d.nrows(),
        }
    }

    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            SystemMatrix::Sparse(s) => s.mul_vec(x),
            SystemMatrix::Dense(d) => d * x,
        }
    }

    /// `self + s * other`; both operands must have the same storage.
    pub fn add_scaled(&self, s: f64, other: &SystemMatrix) -> SystemMatrix {
        match (self, other) {
            (SystemMatrix::Sparse(a), SystemMatrix::Sparse(b)) => {
                SystemMatrix::Sparse(a.add_scaled(s, b))
            }
            (SystemMatrix::Dense(a), SystemMatrix::Dense(b)) => SystemMatrix::Dense(a + b * s),
            (a, b) => SystemMatrix::Dense(a.to_dense() + b.to_dense() * s),
        }
    }

    pub fn scaled(&self, s: f64) -> SystemMatrix {
        match self {
            SystemMatrix::Sparse(a) => SystemMatrix::Sparse(a.scaled(s)),
            SystemMatrix::Dense(a) => SystemMatrix::Dense(a * s),
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            SystemMatrix::Sparse(s) => s.to_dense(),
            SystemMatrix::Dense(d) => d.clone(),
        }
    }

    pub fn factor(&self, structure: Structure) -> Result<Factorization> {
        match (self, structure) {
            (SystemMatrix::Sparse(s), Structure::SymmetricPositiveDefinite) => {
                let a = s.to_faer()?;
                match a.sp_cholesky(Side::Lower) {
                    Ok(llt) => Ok(Factorization::SparseCholesky(llt)),
                    Err(_) => self.factor(Structure::General),
                }
            }
            (SystemMatrix::Sparse(s), Structure::General) => {
                let a = s.to_faer()?;
                let lu = a
                    .sp_lu()
                    .map_err(|e| Error::LinearSolve(format!("sparse LU failed: {e:?}")))?;
                Ok(Factorization::SparseLu(lu))
            }
            (SystemMatrix::Dense(d), Structure::SymmetricPositiveDefinite) => {
                match nalgebra::Cholesky::new(d.clone()) {
                    Some(c) => Ok(Factorization::DenseCholesky(c)),
                    None => self.factor(Structure::General),
                }
            }
            (SystemMatrix::Dense(d), Structure::General) => {
                let lu = d.clone().lu();
                if !lu.is_invertible() {
                    return Err(Error::LinearSolve("singular dense matrix".into()));
                }
                Ok(Factorization::DenseLu(lu))
            }
        }
    }
}

pub enum Factorization {
    SparseCholesky(faer::sparse::linalg::solvers::Llt<usize, f64>),
    SparseLu(faer::sparse::linalg::solvers::Lu<usize, f64>),
    DenseCholesky(nalgebra::Cholesky<f64, nalgebra::Dyn>),
    DenseLu(nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
}

impl std::fmt::Debug for Factorization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Factorization::SparseCholesky(_) => "SparseCholesky",
            Factorization::SparseLu(_) => "SparseLu",
            Factorization::DenseCholesky(_) => "DenseCholesky",
            Factorization::DenseLu(_) => "DenseLu",
        };
        f.write_str(name)
    }
}

impl Factorization {
    pub fn solve(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        let x = match self {
            Factorization::SparseCholesky(llt) => {
                let rhs = Mat::from_fn(b.len(), 1, |i, _| b[i]);
                let x = llt.solve(&rhs);
                DVector::from_fn(b.len(), |i, _| x[(i, 0)])
            }
            Factorization::SparseLu(lu) => {
                let rhs = Mat::from_fn(b.len(), 1, |i, _| b[i]);
                let x = lu.solve(&rhs);
                DVector::from_fn(b.len(), |i, _| x[(i, 0)])
            }
            Factorization::DenseCholesky(c) => c.solve(b),
            Factorization::DenseLu(lu) => lu
                .solve(b)
                .ok_or_else(|| Error::LinearSolve("singular dense LU".into()))?,
        };
        if x.iter().all(|v| v.is_finite()) {
            Ok(x)
        } else {
            Err(Error::LinearSolve("non-finite solution".into()))
        }
    }

    /// Solves for every column of `b`.
    pub fn solve_columns(&self, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match self {
            Factorization::SparseCholesky(llt) => {
                let rhs = Mat::from_fn(b.nrows(), b.ncols(), |i, j| b[(i, j)]);
                let x = llt.solve(&rhs);
                Ok(DMatrix::from_fn(b.nrows(), b.ncols(), |i, j| x[(i, j)]))
            }
            Factorization::SparseLu(lu) => {
                let rhs = Mat::from_fn(b.nrows(), b.ncols(), |i, j| b[(i, j)]);
                let x = lu.solve(&rhs);
                Ok(DMatrix::from_fn(b.nrows(), b.ncols(), |i, j| x[(i, j)]))
            }
            Factorization::DenseCholesky(c) => Ok(c.solve(b)),
            Factorization::DenseLu(lu) => lu
                .solve(b)
                .ok_or_else(|| Error::LinearSolve("singular dense LU".into())),
        }
    }
}

/// Symmetric part `(A + A^T) / 2`.
pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Solves `A x = lambda B x` for symmetric `A` and symmetric positive definite
/// `B`. Eigenvalues come back ascending; eigenvectors are `B`-orthonormal
/// columns.
pub fn generalized_symmetric_eigen(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n || b.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "pencil {}x{} / {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    if n == 0 {
        return Ok((DVector::zeros(0), DMatrix::zeros(0, 0)));
    }
    let chol = nalgebra::Cholesky::new(symmetrize(b))
        .ok_or_else(|| Error::NotPositiveDefinite("generalized eigen mass".into()))?;
    let l = chol.l();
    let x = l
        .solve_lower_triangular(&symmetrize(a))
        .ok_or_else(|| Error::LinearSolve("triangular solve".into()))?;
    let c = l
        .solve_lower_triangular(&x.transpose())
        .ok_or_else(|| Error::LinearSolve("triangular solve".into()))?;
    let eig = SymmetricEigen::new(symmetrize(&c));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let y = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    let vectors = l
        .transpose()
        .solve_upper_triangular(&y)
        .ok_or_else(|| Error::LinearSolve("triangular solve".into()))?;
    Ok((values, vectors))
}

/// Orthonormal basis (columns) of the null space of the row constraints `c`.
pub fn null_space(c: &DMatrix<f64>) -> DMatrix<f64> {
    let n = c.ncols();
    if c.nrows() == 0 {
        return DMatrix::identity(n, n);
    }
    let svd = c.transpose().svd(true, false);
    let u = svd.u.expect("requested U");
    let smax = svd.singular_values.max();
    let tol = smax * 1e-12 * n as f64;
    let range: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&k| svd.singular_values[k] > tol)
        .collect();
    let mut proj = DMatrix::identity(n, n);
    for &k in &range {
        let col = u.column(k);
        proj -= &col * col.transpose();
    }
    let eig = SymmetricEigen::new(symmetrize(&proj));
    let keep: Vec<usize> = (0..n).filter(|&k| eig.eigenvalues[k] > 0.5).collect();
    DMatrix::from_fn(n, keep.len(), |r, c| eig.eigenvectors[(r, keep[c])])
}

/// Smallest eigenvalue of a symmetric matrix (used for definiteness checks).
pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return f64::INFINITY;
    }
    SymmetricEigen::new(symmetrize(a)).eigenvalues.min()
}
