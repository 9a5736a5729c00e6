//! Symmetric eigensolvers: cyclic Jacobi for small matrices, Householder
//! tridiagonalization followed by implicit QL for larger ones.

use super::{gemm, Matrix, SymMatrix};
use crate::error::{invalid, Error, Result};

/// Above this dimension the tridiagonal path is used.
const JACOBI_MAX_DIM: usize = 32;

/// Eigenvalues in descending order with the matching eigenvectors stored as
/// the columns of `vectors`.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenDecomposition {
    pub values: Vec<f64>,
    pub vectors: Matrix,
}

impl EigenDecomposition {
    /// `V diag(values) Vᵀ` for replacement eigenvalues, symmetrized exactly.
    pub fn recompose_with(&self, values: &[f64]) -> SymMatrix {
        let n = self.values.len();
        let mut scaled = self.vectors.clone();
        for i in 0..n {
            let row = &mut scaled.as_mut_slice()[i * n..(i + 1) * n];
            for (x, &l) in row.iter_mut().zip(values) {
                *x *= l;
            }
        }
        let mut m = gemm(&scaled, false, &self.vectors, true);
        let data = m.as_mut_slice();
        for i in 0..n {
            for j in (i + 1)..n {
                let avg = 0.5 * (data[i * n + j] + data[j * n + i]);
                data[i * n + j] = avg;
                data[j * n + i] = avg;
            }
        }
        SymMatrix::from_symmetric_unchecked(m)
    }

    pub fn recompose(&self) -> SymMatrix {
        self.recompose_with(&self.values)
    }
}

/// Full eigendecomposition. Jacobi up to dimension 32, tridiagonal QL above.
pub fn sym_eig(a: &SymMatrix) -> Result<EigenDecomposition> {
    check_finite(a)?;
    if a.dim() <= JACOBI_MAX_DIM {
        jacobi(a, true)
    } else {
        tridiagonal_ql(a, true)
    }
}

/// Eigenvalues only, descending.
pub fn sym_eigvals(a: &SymMatrix) -> Result<Vec<f64>> {
    check_finite(a)?;
    let e = if a.dim() <= JACOBI_MAX_DIM { jacobi(a, false)? } else { tridiagonal_ql(a, false)? };
    Ok(e.values)
}

/// Cyclic Jacobi regardless of dimension.
pub fn sym_eig_jacobi(a: &SymMatrix) -> Result<EigenDecomposition> {
    check_finite(a)?;
    jacobi(a, true)
}

/// Householder + implicit QL regardless of dimension.
pub fn sym_eig_tridiagonal(a: &SymMatrix) -> Result<EigenDecomposition> {
    check_finite(a)?;
    tridiagonal_ql(a, true)
}

fn check_finite(a: &SymMatrix) -> Result<()> {
    if a.as_matrix().is_finite() {
        Ok(())
    } else {
        Err(invalid("matrix has non-finite entries"))
    }
}

/// Sorts eigenpairs descending. `rows` holds one eigenvector per row.
fn finish(values: Vec<f64>, rows: Option<Vec<f64>>, n: usize) -> EigenDecomposition {
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| values[j].total_cmp(&values[i]));
    let sorted: Vec<f64> = order.iter().map(|&i| values[i]).collect();
    let mut vectors = Matrix::zeros(n, n);
    if let Some(rows) = rows {
        let out = vectors.as_mut_slice();
        for (col, &src) in order.iter().enumerate() {
            for k in 0..n {
                out[k * n + col] = rows[src * n + k];
            }
        }
    }
    EigenDecomposition { values: sorted, vectors }
}

fn jacobi(a: &SymMatrix, want_vectors: bool) -> Result<EigenDecomposition> {
    let n = a.dim();
    let mut m = a.as_matrix().as_slice().to_vec();
    // v is stored transposed: row j is the j-th eigenvector.
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let mut d: Vec<f64> = (0..n).map(|i| m[i * n + i]).collect();
    let mut b = d.clone();
    let mut z = vec![0.0; n];

    #[inline]
    fn rot(m: &mut [f64], s: f64, tau: f64, x: usize, y: usize) {
        let g = m[x];
        let h = m[y];
        m[x] = g - s * (h + g * tau);
        m[y] = h + s * (g - h * tau);
    }

    for sweep in 1..=100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += m[p * n + q].abs();
            }
        }
        if off == 0.0 {
            let rows = want_vectors.then_some(v);
            return Ok(finish(d, rows, n));
        }
        let thresh = if sweep < 4 { 0.2 * off / (n * n) as f64 } else { 0.0 };
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                let g = 100.0 * apq.abs();
                if sweep > 4 && d[p].abs() + g == d[p].abs() && d[q].abs() + g == d[q].abs() {
                    m[p * n + q] = 0.0;
                } else if apq.abs() > thresh {
                    let h = d[q] - d[p];
                    let t = if h.abs() + g == h.abs() {
                        apq / h
                    } else {
                        let theta = 0.5 * h / apq;
                        let t = 1.0 / (theta.abs() + (1.0 + theta * theta).sqrt());
                        if theta < 0.0 {
                            -t
                        } else {
                            t
                        }
                    };
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = t * c;
                    let tau = s / (1.0 + c);
                    let h = t * apq;
                    z[p] -= h;
                    z[q] += h;
                    d[p] -= h;
                    d[q] += h;
                    m[p * n + q] = 0.0;
                    for j in 0..p {
                        rot(&mut m, s, tau, j * n + p, j * n + q);
                    }
                    for j in (p + 1)..q {
                        rot(&mut m, s, tau, p * n + j, j * n + q);
                    }
                    for j in (q + 1)..n {
                        rot(&mut m, s, tau, p * n + j, q * n + j);
                    }
                    if want_vectors {
                        for j in 0..n {
                            rot(&mut v, s, tau, p * n + j, q * n + j);
                        }
                    }
                }
            }
        }
        for i in 0..n {
            b[i] += z[i];
            d[i] = b[i];
            z[i] = 0.0;
        }
    }
    Err(Error::Numerical("Jacobi eigenvalue iteration did not converge".into()))
}

fn tridiagonal_ql(a: &SymMatrix, want_vectors: bool) -> Result<EigenDecomposition> {
    let n = a.dim();
    let mut m = a.as_matrix().as_slice().to_vec();
    let mut betas = vec![0.0; n];
    let mut e = vec![0.0; n];

    // Reduce column k below the diagonal with a reflector H = I - beta v vᵀ.
    // The full symmetric matrix is updated so every access is along a row.
    let mut p = vec![0.0; n];
    for k in 0..n.saturating_sub(2) {
        let start = k + 1;
        let len = n - start;
        let (x_norm2, x0) = {
            let x = &m[k * n + start..(k + 1) * n];
            (x.iter().map(|v| v * v).sum::<f64>(), x[0])
        };
        let x_norm = x_norm2.sqrt();
        if x_norm == 0.0 {
            e[k] = 0.0;
            continue;
        }
        let alpha = if x0 >= 0.0 { -x_norm } else { x_norm };
        let v0 = x0 - alpha;
        let v_norm2 = x_norm2 - x0 * x0 + v0 * v0;
        if v_norm2 == 0.0 {
            e[k] = x0;
            continue;
        }
        let beta = 2.0 / v_norm2;
        m[k * n + start] = v0;
        let v: Vec<f64> = m[k * n + start..(k + 1) * n].to_vec();
        // p = beta * B v over the trailing block B.
        for i in 0..len {
            let row = &m[(start + i) * n + start..(start + i + 1) * n];
            p[i] = beta * super::dot(row, &v);
        }
        let kcoef = 0.5 * beta * super::dot(&p[..len], &v);
        for i in 0..len {
            p[i] -= kcoef * v[i];
        }
        for i in 0..len {
            let (vi, wi) = (v[i], p[i]);
            let row = &mut m[(start + i) * n + start..(start + i + 1) * n];
            for j in 0..len {
                row[j] -= vi * p[j] + wi * v[j];
            }
        }
        betas[k] = beta;
        e[k] = alpha;
        // Keep the reflector in row k for the accumulation below.
    }
    let mut d: Vec<f64> = (0..n).map(|i| m[i * n + i]).collect();
    if n >= 2 {
        e[n - 2] = m[(n - 2) * n + n - 1];
    }
    e[n - 1] = 0.0;

    // w = Qᵀ, one row per basis vector; rotations then act on whole rows.
    let mut w = Vec::new();
    if want_vectors {
        w = vec![0.0; n * n];
        for i in 0..n {
            w[i * n + i] = 1.0;
        }
        let mut r = vec![0.0; n];
        for k in 0..n.saturating_sub(2) {
            let beta = betas[k];
            if beta == 0.0 {
                continue;
            }
            let start = k + 1;
            let v = &m[k * n + start..(k + 1) * n];
            r.iter_mut().for_each(|x| *x = 0.0);
            for (i, &vi) in v.iter().enumerate() {
                let row = &w[(start + i) * n..(start + i + 1) * n];
                for (rj, &x) in r.iter_mut().zip(row) {
                    *rj += vi * x;
                }
            }
            for (i, &vi) in v.iter().enumerate() {
                let row = &mut w[(start + i) * n..(start + i + 1) * n];
                let f = beta * vi;
                for (x, &rj) in row.iter_mut().zip(&r) {
                    *x -= f * rj;
                }
            }
        }
    }

    implicit_ql(&mut d, &mut e, if want_vectors { Some(&mut w) } else { None }, n)?;
    Ok(finish(d, want_vectors.then_some(w), n))
}

/// Implicit QL with Wilkinson shifts on a symmetric tridiagonal matrix with
/// diagonal `d` and off-diagonal `e[i]` coupling `i` and `i+1`.
fn implicit_ql(d: &mut [f64], e: &mut [f64], mut w: Option<&mut Vec<f64>>, n: usize) -> Result<()> {
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 60 {
                return Err(Error::Numerical("tridiagonal QL iteration did not converge".into()));
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut deflated = false;
            for i in (l..m).rev() {
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    deflated = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                if let Some(w) = w.as_deref_mut() {
                    let (lo, hi) = w.split_at_mut((i + 1) * n);
                    let ri = &mut lo[i * n..];
                    let ri1 = &mut hi[..n];
                    for (x, y) in ri.iter_mut().zip(ri1.iter_mut()) {
                        let f = *y;
                        *y = s * *x + c * f;
                        *x = c * *x - s * f;
                    }
                }
            }
            if deflated {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok(())
}
