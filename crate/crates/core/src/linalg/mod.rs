//! Dense symmetric linear algebra for small-to-moderate dimensions.
//!
//! Everything here is row-major and dense. The routines cover what the
//! transport code needs: symmetric eigendecomposition, square roots of
//! positive semi-definite matrices, Cholesky factors and quadratic forms.

mod eigen;

pub use eigen::{sym_eig, sym_eig_jacobi, sym_eig_tridiagonal, sym_eigvals, EigenDecomposition};

use crate::error::{check_dim, invalid, Error, Result};

/// Relative tolerance below zero that an eigenvalue of a PSD matrix may reach
/// before the matrix is rejected.
pub const PSD_TOLERANCE: f64 = 1e-9;

/// A dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(invalid(format!(
                "matrix data has {} entries, expected {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(invalid("ragged matrix rows"));
            }
            data.extend_from_slice(row);
        }
        Ok(Matrix { rows: r, cols: c, data })
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Matrix::zeros(n, n);
        for (i, &v) in diag.iter().enumerate() {
            m.data[i * n + i] = v;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    /// Matrix product `self * rhs`.
    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        check_dim(self.cols, rhs.rows)?;
        Ok(gemm(self, false, rhs, false))
    }

    /// `self * rhsᵀ`.
    pub fn matmul_t(&self, rhs: &Matrix) -> Result<Matrix> {
        check_dim(self.cols, rhs.cols)?;
        Ok(gemm(self, false, rhs, true))
    }

    pub fn mul_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.cols, v.len())?;
        Ok((0..self.rows).map(|i| dot(self.row(i), v)).collect())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Matrix { rows: self.rows, cols: self.cols, data }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// `op(a) * op(b)` through the blocked kernel in `matrixmultiply`.
pub(crate) fn gemm(a: &Matrix, a_t: bool, b: &Matrix, b_t: bool) -> Matrix {
    let (m, k) = if a_t { (a.cols, a.rows) } else { (a.rows, a.cols) };
    let n = if b_t { b.rows } else { b.cols };
    let mut c = Matrix::zeros(m, n);
    if m == 0 || n == 0 || k == 0 {
        return c;
    }
    let (rsa, csa) = if a_t { (1, a.cols as isize) } else { (a.cols as isize, 1) };
    let (rsb, csb) = if b_t { (1, b.cols as isize) } else { (b.cols as isize, 1) };
    // SAFETY: strides describe the row-major buffers above and the output has m*n entries.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            0.0,
            c.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    c
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A symmetric matrix. Symmetry is exact: construction averages the two triangles.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    m: Matrix,
}

impl SymMatrix {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("matrix dimension must be at least 1"));
        }
        let m = Matrix::from_vec(dim, dim, data)?;
        Self::from_matrix(m)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = Matrix::from_rows(rows)?;
        if m.rows != m.cols {
            return Err(invalid(format!("matrix is {}x{}, expected square", m.rows, m.cols)));
        }
        if m.rows == 0 {
            return Err(invalid("matrix dimension must be at least 1"));
        }
        Self::from_matrix(m)
    }

    pub fn from_matrix(mut m: Matrix) -> Result<Self> {
        if m.rows != m.cols || m.rows == 0 {
            return Err(invalid("symmetric matrix must be square and non-empty"));
        }
        if !m.is_finite() {
            return Err(invalid("matrix has non-finite entries"));
        }
        let n = m.rows;
        for i in 0..n {
            for j in (i + 1)..n {
                let (a, b) = (m.data[i * n + j], m.data[j * n + i]);
                if a != b {
                    let avg = 0.5 * (a + b);
                    m.data[i * n + j] = avg;
                    m.data[j * n + i] = avg;
                }
            }
        }
        Ok(SymMatrix { m })
    }

    pub fn identity(dim: usize) -> Self {
        SymMatrix { m: Matrix::identity(dim) }
    }

    pub fn zeros(dim: usize) -> Self {
        SymMatrix { m: Matrix::zeros(dim, dim) }
    }

    pub fn from_diag(diag: &[f64]) -> Result<Self> {
        if diag.iter().any(|x| !x.is_finite()) {
            return Err(invalid("matrix has non-finite entries"));
        }
        if diag.is_empty() {
            return Err(invalid("matrix dimension must be at least 1"));
        }
        Ok(SymMatrix { m: Matrix::from_diag(diag) })
    }

    /// Wraps a matrix known to be exactly symmetric.
    pub(crate) fn from_symmetric_unchecked(m: Matrix) -> Self {
        debug_assert_eq!(m.rows, m.cols);
        SymMatrix { m }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.m.rows
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.m.get(i, j)
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.m
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|i| self.m.get(i, i)).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.m.frobenius_norm()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.m.to_rows()
    }

    pub fn scaled(&self, s: f64) -> SymMatrix {
        let data = self.m.data.iter().map(|x| x * s).collect();
        SymMatrix { m: Matrix { rows: self.m.rows, cols: self.m.cols, data } }
    }

    /// Sum of `weights[i] * mats[i]`; all matrices must share a dimension.
    pub fn weighted_sum(mats: &[&SymMatrix], weights: &[f64]) -> Result<SymMatrix> {
        let first = mats.first().ok_or_else(|| invalid("empty matrix list"))?;
        let n = first.dim();
        let mut out = Matrix::zeros(n, n);
        for (m, &w) in mats.iter().zip(weights) {
            check_dim(n, m.dim())?;
            for (o, x) in out.data.iter_mut().zip(&m.m.data) {
                *o += w * x;
            }
        }
        Ok(SymMatrix { m: out })
    }
}

/// A symmetric positive semi-definite matrix (validated within [`PSD_TOLERANCE`]).
#[derive(Debug, Clone, PartialEq)]
pub struct PsdMatrix {
    s: SymMatrix,
}

impl PsdMatrix {
    /// Validates `s`. Entries are kept as given unless an eigenvalue is
    /// negative (within tolerance), in which case the matrix is rebuilt from
    /// its clamped spectrum.
    pub fn new(s: SymMatrix) -> Result<Self> {
        if cholesky_strict(s.as_matrix()).is_some() {
            return Ok(PsdMatrix { s });
        }
        if s.m.data.iter().all(|&x| x == 0.0) {
            return Ok(PsdMatrix { s });
        }
        let eig = sym_eig(&s)?;
        let tol = PSD_TOLERANCE * s.frobenius_norm();
        let min = eig.values.last().copied().unwrap_or(0.0);
        if min < -tol {
            return Err(Error::NotPsd { min_eigenvalue: min, tolerance: tol });
        }
        if min >= 0.0 {
            return Ok(PsdMatrix { s });
        }
        let clamped: Vec<f64> = eig.values.iter().map(|&l| l.max(0.0)).collect();
        Ok(PsdMatrix { s: eig.recompose_with(&clamped) })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(SymMatrix::from_rows(rows)?)
    }

    pub fn from_diag(diag: &[f64]) -> Result<Self> {
        Self::new(SymMatrix::from_diag(diag)?)
    }

    pub fn identity(dim: usize) -> Self {
        PsdMatrix { s: SymMatrix::identity(dim) }
    }

    pub fn zeros(dim: usize) -> Self {
        PsdMatrix { s: SymMatrix::zeros(dim) }
    }

    /// `L Lᵀ + shift·I`, PSD by construction for `shift >= 0`.
    pub fn from_factor(l: &LowerTriangular, shift: f64) -> Self {
        let n = l.dim();
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let kmax = j;
                let mut acc = 0.0;
                for k in 0..=kmax {
                    acc += l.get(i, k) * l.get(j, k);
                }
                m.data[i * n + j] = acc;
                m.data[j * n + i] = acc;
            }
            m.data[i * n + i] += shift;
        }
        PsdMatrix { s: SymMatrix { m } }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.s.dim()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.s.get(i, j)
    }

    pub fn as_sym(&self) -> &SymMatrix {
        &self.s
    }

    pub fn as_matrix(&self) -> &Matrix {
        self.s.as_matrix()
    }

    pub fn trace(&self) -> f64 {
        self.s.trace()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.s.to_rows()
    }

    /// `vᵀ A v`, clamped at zero.
    pub fn quad_form(&self, v: &[f64]) -> Result<f64> {
        Ok(quad_form(&self.s, v)?.max(0.0))
    }

    pub fn sqrt(&self) -> PsdMatrix {
        // The input is already validated, so the only failure mode is gone.
        sqrtm_psd(&self.s).unwrap_or_else(|_| self.clone())
    }
}

/// Lower-triangular matrix; entries above the diagonal are always zero.
#[derive(Debug, Clone, PartialEq)]
pub struct LowerTriangular {
    m: Matrix,
}

impl LowerTriangular {
    pub fn zeros(dim: usize) -> Self {
        LowerTriangular { m: Matrix::zeros(dim, dim) }
    }

    /// Takes the lower triangle of `m`; anything above the diagonal is dropped.
    pub fn from_matrix_lower(m: &Matrix) -> Result<Self> {
        if m.rows != m.cols {
            return Err(invalid("triangular factor must be square"));
        }
        let n = m.rows;
        let mut out = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                out.data[i * n + j] = m.data[i * n + j];
            }
        }
        Ok(LowerTriangular { m: out })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::from_matrix_lower(&Matrix::from_rows(rows)?)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.m.rows
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.m.get(i, j)
    }

    /// Sets entry `(i, j)`; writes above the diagonal are rejected.
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        assert!(j <= i, "write above the diagonal of a lower-triangular matrix");
        self.m.set(i, j, v);
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.m
    }

    /// Number of free (lower) entries, `d(d+1)/2`.
    pub fn packed_len(&self) -> usize {
        let n = self.dim();
        n * (n + 1) / 2
    }

    /// `L Lᵀ` as a symmetric matrix.
    pub fn gram(&self) -> SymMatrix {
        PsdMatrix::from_factor(self, 0.0).s
    }

    /// `Lᵀ v`.
    pub fn transpose_mul_vec(&self, v: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut out = vec![0.0; n];
        for i in 0..n {
            let vi = v[i];
            for (j, o) in out.iter_mut().enumerate().take(i + 1) {
                *o += self.m.data[i * n + j] * vi;
            }
        }
        out
    }
}

/// `vᵀ A v`. Tiny negative results caused by rounding are clamped to zero.
pub fn quad_form(a: &SymMatrix, v: &[f64]) -> Result<f64> {
    let n = a.dim();
    check_dim(n, v.len())?;
    let mut acc = 0.0;
    for i in 0..n {
        acc += v[i] * dot(a.m.row(i), v);
    }
    if acc < 0.0 {
        let vv = dot(v, v);
        if -acc <= 1e-12 * a.frobenius_norm() * vv {
            acc = 0.0;
        }
    }
    Ok(acc)
}

/// Principal square root of a PSD matrix through its eigendecomposition.
///
/// Eigenvalues in `[-tol, 0)` with `tol = PSD_TOLERANCE·‖A‖_F` are clamped to zero.
pub fn sqrtm_psd(a: &SymMatrix) -> Result<PsdMatrix> {
    let n = a.dim();
    if is_diagonal(a.as_matrix()) {
        let norm = a.frobenius_norm();
        let tol = PSD_TOLERANCE * norm;
        let mut diag = Vec::with_capacity(n);
        for i in 0..n {
            let v = a.get(i, i);
            if v < -tol {
                return Err(Error::NotPsd { min_eigenvalue: v, tolerance: tol });
            }
            diag.push(v.max(0.0).sqrt());
        }
        return Ok(PsdMatrix { s: SymMatrix { m: Matrix::from_diag(&diag) } });
    }
    let eig = sym_eig(a)?;
    let tol = PSD_TOLERANCE * a.frobenius_norm();
    if let Some(&min) = eig.values.last() {
        if min < -tol {
            return Err(Error::NotPsd { min_eigenvalue: min, tolerance: tol });
        }
    }
    let roots: Vec<f64> = eig.values.iter().map(|&l| l.max(0.0).sqrt()).collect();
    Ok(PsdMatrix { s: eig.recompose_with(&roots) })
}

fn is_diagonal(m: &Matrix) -> bool {
    let n = m.rows;
    (0..n).all(|i| (0..n).all(|j| i == j || m.data[i * n + j] == 0.0))
}

/// Cholesky without pivoting; `None` if a pivot is not strictly positive.
fn cholesky_strict(a: &Matrix) -> Option<Matrix> {
    let n = a.rows;
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let row_j = &l.data[j * n..j * n + j];
        let d = a.data[j * n + j] - dot(row_j, row_j);
        if !(d > 0.0) {
            return None;
        }
        let ljj = d.sqrt();
        l.data[j * n + j] = ljj;
        for i in (j + 1)..n {
            let (head, tail) = l.data.split_at(i * n);
            let s = dot(&tail[..j], &head[j * n..j * n + j]);
            l.data[i * n + j] = (a.data[i * n + j] - s) / ljj;
        }
    }
    Some(l)
}

/// Cholesky factor `L` with `L Lᵀ = A`.
///
/// Rank-deficient input gets a single jitter `λI`, `λ = 1e-12·tr(A)/d`. The
/// zero matrix factors as zero.
pub fn cholesky(a: &SymMatrix) -> Result<LowerTriangular> {
    if let Some(l) = cholesky_strict(a.as_matrix()) {
        return Ok(LowerTriangular { m: l });
    }
    let n = a.dim();
    if a.m.data.iter().all(|&x| x == 0.0) {
        return Ok(LowerTriangular::zeros(n));
    }
    let jitter = 1e-12 * a.trace() / n as f64;
    if jitter > 0.0 {
        let mut m = a.m.clone();
        for i in 0..n {
            m.data[i * n + i] += jitter;
        }
        if let Some(l) = cholesky_strict(&m) {
            return Ok(LowerTriangular { m: l });
        }
    }
    let min = sym_eigvals(a)?.last().copied().unwrap_or(0.0);
    Err(Error::NotPsd { min_eigenvalue: min, tolerance: PSD_TOLERANCE * a.frobenius_norm() })
}
