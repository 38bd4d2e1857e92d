//! Small dense linear algebra.
//!
//! Everything here works on row-major `f64` matrices. The certificate
//! routines ([`solve_lyapunov`], [`sym_eigen`], [`decay_rate`] and
//! [`SpdMatrix`]) are restricted to at most [`MAX_CERT_DIM`] rows; the
//! factorizations ([`cholesky`], [`lu_solve`]) are unrestricted because the
//! condensed MPC problems are larger than the error systems.

use std::fmt;
use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest dimension accepted by the certificate solvers.
pub const MAX_CERT_DIM: usize = 8;

/// Relative tolerance used for symmetry checks.
pub const SYM_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumError {
    #[error("matrix is not Hurwitz (max real part of eigenvalues = {max_re})")]
    NotHurwitz { max_re: f64 },
    #[error("linear system is numerically singular")]
    SingularSystem,
    #[error("matrix is not symmetric (asymmetry {asym:e})")]
    NotSymmetric { asym: f64 },
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("dimension {0} exceeds the supported maximum of {MAX_CERT_DIM}")]
    TooLarge(usize),
    #[error("non-finite matrix entry")]
    NonFinite,
    #[error("eigenvalue iteration did not converge")]
    NoConvergence,
}

/// Dense row-major matrix.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.to_rows()).finish()
    }
}

impl TryFrom<Vec<Vec<f64>>> for Matrix {
    type Error = NumError;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self, Self::Error> {
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        Matrix::from_rows(&refs)
    }
}

impl From<Matrix> for Vec<Vec<f64>> {
    fn from(m: Matrix) -> Self {
        m.to_rows()
    }
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NumError> {
        if data.len() != rows * cols {
            return Err(NumError::DimensionMismatch(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(NumError::NonFinite);
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, v) in values.iter().enumerate() {
            m[(i, i)] = *v;
        }
        m
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self, NumError> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(NumError::DimensionMismatch("ragged rows".into()));
        }
        Self::new(r, c, rows.iter().flat_map(|row| row.iter().copied()).collect())
    }

    pub fn column(values: &[f64]) -> Self {
        Matrix {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul dimension mismatch");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.data[k * other.cols + j];
                }
            }
        }
        out
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, x.len(), "matvec dimension mismatch");
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    pub fn add(&self, other: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        self.add(&other.scale(-1.0))
    }

    pub fn scale(&self, c: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|a| a * c).collect(),
        }
    }

    /// Induced infinity norm (maximum absolute row sum).
    pub fn norm_inf(&self) -> f64 {
        (0..self.rows)
            .map(|i| self.row(i).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn norm_fro(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `xᵀ M y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        dot(x, &self.matvec(y))
    }

    pub fn quad_form(&self, x: &[f64]) -> f64 {
        self.bilinear(x, x)
    }

    /// Largest `|m_ij − m_ji|` relative to the largest entry.
    pub fn asymmetry(&self) -> f64 {
        let scale = self.max_abs().max(f64::MIN_POSITIVE);
        let mut worst = 0.0f64;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst / scale
    }

    pub fn symmetrized(&self) -> Matrix {
        self.add(&self.transpose()).scale(0.5)
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

pub fn norm2(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

/// Symmetric positive definite matrix with cached extreme eigenvalues.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpdMatrix {
    matrix: Matrix,
    lambda_min: f64,
    lambda_max: f64,
}

impl SpdMatrix {
    pub fn new(m: Matrix) -> Result<Self, NumError> {
        if !m.is_square() {
            return Err(NumError::DimensionMismatch("SPD matrix must be square".into()));
        }
        let asym = m.asymmetry();
        if asym > SYM_TOL {
            return Err(NumError::NotSymmetric { asym });
        }
        let eig = sym_eigen(&m)?;
        let lambda_min = eig.values[0];
        let lambda_max = *eig.values.last().unwrap_or(&0.0);
        if !(lambda_min > 0.0) {
            return Err(NumError::NotPositiveDefinite);
        }
        Ok(SpdMatrix {
            matrix: m.symmetrized(),
            lambda_min,
            lambda_max,
        })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.rows()
    }

    pub fn lambda_min(&self) -> f64 {
        self.lambda_min
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    pub fn condition_number(&self) -> f64 {
        self.lambda_max / self.lambda_min
    }

    pub fn quad_form(&self, x: &[f64]) -> f64 {
        self.matrix.quad_form(x)
    }
}

/// Lower-triangular Cholesky factor `L` with `M = L Lᵀ`.
pub fn cholesky(m: &Matrix) -> Result<Matrix, NumError> {
    if !m.is_square() {
        return Err(NumError::DimensionMismatch("Cholesky needs a square matrix".into()));
    }
    let n = m.rows();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = m[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) {
            return Err(NumError::NotPositiveDefinite);
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in (j + 1)..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Ok(l)
}

/// Solves `L y = b` in place for lower-triangular `L`.
pub fn forward_subst(l: &Matrix, b: &mut [f64]) {
    let n = l.rows();
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[(i, k)] * b[k];
        }
        b[i] = s / l[(i, i)];
    }
}

/// Solves `Lᵀ x = y` in place for lower-triangular `L`.
pub fn backward_subst_transposed(l: &Matrix, b: &mut [f64]) {
    let n = l.rows();
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in (i + 1)..n {
            s -= l[(k, i)] * b[k];
        }
        b[i] = s / l[(i, i)];
    }
}

/// Solves `M x = b` given the Cholesky factor of `M`.
pub fn cholesky_solve(l: &Matrix, b: &[f64]) -> Vec<f64> {
    let mut x = b.to_vec();
    forward_subst(l, &mut x);
    backward_subst_transposed(l, &mut x);
    x
}

/// Gaussian elimination with partial pivoting. Returns `SingularSystem`
/// when a pivot falls below `1e-13` times the largest entry.
pub fn lu_solve(a: &Matrix, b: &[f64]) -> Result<Vec<f64>, NumError> {
    if !a.is_square() || a.rows() != b.len() {
        return Err(NumError::DimensionMismatch("lu_solve".into()));
    }
    let n = a.rows();
    let mut m = a.clone();
    let mut x = b.to_vec();
    let scale = a.max_abs();
    if scale == 0.0 {
        return Err(NumError::SingularSystem);
    }
    for col in 0..n {
        let (piv, pmax) = (col..n)
            .map(|r| (r, m[(r, col)].abs()))
            .fold((col, -1.0), |acc, it| if it.1 > acc.1 { it } else { acc });
        if pmax <= 1e-13 * scale {
            return Err(NumError::SingularSystem);
        }
        if piv != col {
            for j in 0..n {
                let tmp = m[(col, j)];
                m[(col, j)] = m[(piv, j)];
                m[(piv, j)] = tmp;
            }
            x.swap(col, piv);
        }
        let d = m[(col, col)];
        for r in (col + 1)..n {
            let f = m[(r, col)] / d;
            if f == 0.0 {
                continue;
            }
            for j in col..n {
                m[(r, j)] -= f * m[(col, j)];
            }
            x[r] -= f * x[col];
        }
    }
    for i in (0..n).rev() {
        let mut s = x[i];
        for j in (i + 1)..n {
            s -= m[(i, j)] * x[j];
        }
        x[i] = s / m[(i, i)];
    }
    Ok(x)
}

fn check_cert_square(a: &Matrix, what: &str) -> Result<usize, NumError> {
    if !a.is_square() {
        return Err(NumError::DimensionMismatch(format!("{what} must be square")));
    }
    if a.rows() > MAX_CERT_DIM {
        return Err(NumError::TooLarge(a.rows()));
    }
    Ok(a.rows())
}

/// Solves `AᵀP + PA = −R` for a Hurwitz `A` by a direct solve of the
/// vectorized n²×n² system.
pub fn solve_lyapunov(a: &Matrix, r: &SpdMatrix) -> Result<SpdMatrix, NumError> {
    let n = check_cert_square(a, "A")?;
    if r.dim() != n {
        return Err(NumError::DimensionMismatch(format!(
            "A is {n}x{n} but R is {0}x{0}",
            r.dim()
        )));
    }
    let max_re = eigenvalues(a)?
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max);
    if max_re >= 0.0 {
        return Err(NumError::NotHurwitz { max_re });
    }

    // Row (i, j) of the system is entry (i, j) of AᵀP + PA.
    let nn = n * n;
    let mut k = Matrix::zeros(nn, nn);
    for i in 0..n {
        for j in 0..n {
            let row = i * n + j;
            for m in 0..n {
                k[(row, m * n + j)] += a[(m, i)];
                k[(row, i * n + m)] += a[(m, j)];
            }
        }
    }
    let rhs: Vec<f64> = r.matrix().as_slice().iter().map(|v| -v).collect();
    let mut p = lu_solve(&k, &rhs)?;
    // One round of iterative refinement.
    let kp = k.matvec(&p);
    let resid: Vec<f64> = rhs.iter().zip(&kp).map(|(b, v)| b - v).collect();
    if let Ok(dp) = lu_solve(&k, &resid) {
        for (pi, d) in p.iter_mut().zip(dp) {
            *pi += d;
        }
    }

    let p = Matrix::new(n, n, p)?.symmetrized();
    let residual = lyapunov_residual(a, &p, r.matrix());
    if residual > 1e-9 * r.matrix().norm_inf() {
        return Err(NumError::SingularSystem);
    }
    SpdMatrix::new(p)
}

/// `‖AᵀP + PA + R‖_∞`.
pub fn lyapunov_residual(a: &Matrix, p: &Matrix, r: &Matrix) -> f64 {
    a.transpose().matmul(p).add(&p.matmul(a)).add(r).norm_inf()
}

#[derive(Clone, Debug)]
pub struct SymEigen {
    /// Ascending.
    pub values: Vec<f64>,
    /// Orthonormal eigenvectors stored as columns, matching `values`.
    pub vectors: Matrix,
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
pub fn sym_eigen(s: &Matrix) -> Result<SymEigen, NumError> {
    let n = check_cert_square(s, "S")?;
    let asym = s.asymmetry();
    if asym > SYM_TOL {
        return Err(NumError::NotSymmetric { asym });
    }
    let mut a = s.symmetrized();
    let mut v = Matrix::identity(n);
    let scale = a.norm_fro();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum();
        if off.sqrt() <= 1e-15 * scale || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - sn * akq;
                    a[(k, q)] = sn * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - sn * aqk;
                    a[(q, k)] = sn * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - sn * vkq;
                    v[(k, q)] = sn * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        for k in 0..n {
            vectors[(k, dst)] = v[(k, src)];
        }
    }
    Ok(SymEigen { values, vectors })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Complex {
    pub re: f64,
    pub im: f64,
}

/// Eigenvalues of a general real matrix (Hessenberg reduction followed by
/// the shifted double-step QR iteration).
pub fn eigenvalues(a: &Matrix) -> Result<Vec<Complex>, NumError> {
    let n = check_cert_square(a, "A")?;
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut h: Vec<Vec<f64>> = a.to_rows();
    hessenberg(&mut h);
    hqr(&mut h)
}

fn hessenberg(a: &mut [Vec<f64>]) {
    let n = a.len();
    for m in 1..n.saturating_sub(1) {
        let mut x: f64 = 0.0;
        let mut piv = m;
        for j in m..n {
            if a[j][m - 1].abs() > x.abs() {
                x = a[j][m - 1];
                piv = j;
            }
        }
        if piv != m {
            for j in (m - 1)..n {
                let tmp = a[piv][j];
                a[piv][j] = a[m][j];
                a[m][j] = tmp;
            }
            for row in a.iter_mut() {
                row.swap(piv, m);
            }
        }
        if x != 0.0 {
            for i in (m + 1)..n {
                let mut y = a[i][m - 1];
                if y != 0.0 {
                    y /= x;
                    a[i][m - 1] = y;
                    for j in m..n {
                        a[i][j] -= y * a[m][j];
                    }
                    for row in a.iter_mut() {
                        row[m] += y * row[i];
                    }
                }
            }
        }
    }
    for (i, row) in a.iter_mut().enumerate() {
        for v in row.iter_mut().take(i.saturating_sub(1)) {
            *v = 0.0;
        }
    }
}

fn sign(a: f64, b: f64) -> f64 {
    if b >= 0.0 {
        a.abs()
    } else {
        -a.abs()
    }
}

#[allow(clippy::many_single_char_names)]
fn hqr(a: &mut [Vec<f64>]) -> Result<Vec<Complex>, NumError> {
    let n = a.len() as isize;
    let mut wr = vec![0.0; n as usize];
    let mut wi = vec![0.0; n as usize];
    let at = |a: &[Vec<f64>], i: isize, j: isize| a[i as usize][j as usize];

    let mut anorm = 0.0;
    for i in 0..n {
        for j in (i - 1).max(0)..n {
            anorm += at(a, i, j).abs();
        }
    }
    let mut nn = n - 1;
    let mut t = 0.0;
    let (mut p, mut q, mut r) = (0.0f64, 0.0f64, 0.0f64);
    let (mut x, mut y, mut z);
    let mut w;
    let mut s;
    while nn >= 0 {
        let mut its = 0;
        loop {
            let mut l = nn;
            while l >= 1 {
                s = at(a, l - 1, l - 1).abs() + at(a, l, l).abs();
                if s == 0.0 {
                    s = anorm;
                }
                if at(a, l, l - 1).abs() + s == s {
                    a[l as usize][(l - 1) as usize] = 0.0;
                    break;
                }
                l -= 1;
            }
            x = at(a, nn, nn);
            if l == nn {
                wr[nn as usize] = x + t;
                wi[nn as usize] = 0.0;
                nn -= 1;
                break;
            }
            y = at(a, nn - 1, nn - 1);
            w = at(a, nn, nn - 1) * at(a, nn - 1, nn);
            if l == nn - 1 {
                p = 0.5 * (y - x);
                q = p * p + w;
                z = q.abs().sqrt();
                x += t;
                let (i1, i0) = ((nn - 1) as usize, nn as usize);
                if q >= 0.0 {
                    z = p + sign(z, p);
                    wr[i1] = x + z;
                    wr[i0] = x + z;
                    if z != 0.0 {
                        wr[i0] = x - w / z;
                    }
                    wi[i1] = 0.0;
                    wi[i0] = 0.0;
                } else {
                    wr[i1] = x + p;
                    wr[i0] = x + p;
                    wi[i1] = -z;
                    wi[i0] = z;
                }
                nn -= 2;
                break;
            }
            if its == 60 {
                return Err(NumError::NoConvergence);
            }
            if its == 10 || its == 20 {
                t += x;
                for i in 0..=nn {
                    a[i as usize][i as usize] -= x;
                }
                s = at(a, nn, nn - 1).abs() + at(a, nn - 1, nn - 2).abs();
                x = 0.75 * s;
                y = x;
                w = -0.4375 * s * s;
            }
            its += 1;
            let mut m = nn - 2;
            while m >= l {
                z = at(a, m, m);
                r = x - z;
                s = y - z;
                p = (r * s - w) / at(a, m + 1, m) + at(a, m, m + 1);
                q = at(a, m + 1, m + 1) - z - r - s;
                r = at(a, m + 2, m + 1);
                s = p.abs() + q.abs() + r.abs();
                p /= s;
                q /= s;
                r /= s;
                if m == l {
                    break;
                }
                let u = at(a, m, m - 1).abs() * (q.abs() + r.abs());
                let v = p.abs() * (at(a, m - 1, m - 1).abs() + z.abs() + at(a, m + 1, m + 1).abs());
                if u + v == v {
                    break;
                }
                m -= 1;
            }
            for i in (m + 2)..=nn {
                a[i as usize][(i - 2) as usize] = 0.0;
                if i != m + 2 {
                    a[i as usize][(i - 3) as usize] = 0.0;
                }
            }
            let mut k = m;
            while k <= nn - 1 {
                if k != m {
                    p = at(a, k, k - 1);
                    q = at(a, k + 1, k - 1);
                    r = 0.0;
                    if k != nn - 1 {
                        r = at(a, k + 2, k - 1);
                    }
                    x = p.abs() + q.abs() + r.abs();
                    if x != 0.0 {
                        p /= x;
                        q /= x;
                        r /= x;
                    }
                }
                s = sign((p * p + q * q + r * r).sqrt(), p);
                if s != 0.0 {
                    if k == m {
                        if l != m {
                            a[k as usize][(k - 1) as usize] = -at(a, k, k - 1);
                        }
                    } else {
                        a[k as usize][(k - 1) as usize] = -s * x;
                    }
                    p += s;
                    x = p / s;
                    y = q / s;
                    z = r / s;
                    q /= p;
                    r /= p;
                    for j in k..=nn {
                        let (ku, ju) = (k as usize, j as usize);
                        p = a[ku][ju] + q * a[ku + 1][ju];
                        if k != nn - 1 {
                            p += r * a[ku + 2][ju];
                            a[ku + 2][ju] -= p * z;
                        }
                        a[ku + 1][ju] -= p * y;
                        a[ku][ju] -= p * x;
                    }
                    let mmin = if nn < k + 3 { nn } else { k + 3 };
                    for i in l..=mmin {
                        let (iu, ku) = (i as usize, k as usize);
                        p = x * a[iu][ku] + y * a[iu][ku + 1];
                        if k != nn - 1 {
                            p += z * a[iu][ku + 2];
                            a[iu][ku + 2] -= p * r;
                        }
                        a[iu][ku + 1] -= p * q;
                        a[iu][ku] -= p;
                    }
                }
                k += 1;
            }
        }
    }
    Ok(wr
        .into_iter()
        .zip(wi)
        .map(|(re, im)| Complex { re, im })
        .collect())
}

/// Slowest exponential decay rate of `ẋ = Ax`: `min |Re λ|` over the
/// spectrum of a Hurwitz `A`.
pub fn decay_rate(a: &Matrix) -> Result<f64, NumError> {
    let eig = eigenvalues(a)?;
    let max_re = eig.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
    if eig.is_empty() || max_re >= 0.0 {
        return Err(NumError::NotHurwitz { max_re });
    }
    Ok(-max_re)
}

pub fn invert_spd(p: &SpdMatrix) -> Result<SpdMatrix, NumError> {
    let n = p.dim();
    let l = cholesky(p.matrix())?;
    let mut inv = Matrix::zeros(n, n);
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        let col = cholesky_solve(&l, &e);
        for i in 0..n {
            inv[(i, j)] = col[i];
        }
    }
    SpdMatrix::new(inv.symmetrized())
}
