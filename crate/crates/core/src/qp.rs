//! Dense strictly convex QP
//!
//! ```text
//! minimize  ½ xᵀHx + gᵀx   subject to  A x ≤ b
//! ```
//!
//! solved with the Goldfarb–Idnani dual active-set method. The working
//! factorization is rebuilt from the Cholesky factor of `H` whenever the
//! active set changes, which keeps round-off from accumulating.

use serde::Serialize;
use thiserror::Error;

use crate::numkit::{backward_subst_transposed, cholesky, dot, forward_subst, Matrix, NumError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("Hessian: {0}")]
    Hessian(NumError),
}

#[derive(Clone, Debug)]
pub struct QpProblem {
    h: Matrix,
    g: Vec<f64>,
    a: Matrix,
    b: Vec<f64>,
    chol: Matrix,
}

impl QpProblem {
    pub fn new(h: Matrix, g: Vec<f64>, a: Matrix, b: Vec<f64>) -> Result<Self, QpError> {
        let n = h.rows();
        if !h.is_square() || g.len() != n {
            return Err(QpError::Dimension(format!("H is {}x{}, g has {}", h.rows(), h.cols(), g.len())));
        }
        if a.cols() != n && a.rows() > 0 {
            return Err(QpError::Dimension(format!("A has {} columns, expected {n}", a.cols())));
        }
        if a.rows() != b.len() {
            return Err(QpError::Dimension(format!("A has {} rows, b has {}", a.rows(), b.len())));
        }
        let asym = h.asymmetry();
        if asym > 1e-10 {
            return Err(QpError::Hessian(NumError::NotSymmetric { asym }));
        }
        let chol = cholesky(&h).map_err(QpError::Hessian)?;
        Ok(QpProblem { h, g, a, b, chol })
    }

    pub fn dim(&self) -> usize {
        self.h.rows()
    }

    pub fn n_constraints(&self) -> usize {
        self.b.len()
    }

    pub fn hessian(&self) -> &Matrix {
        &self.h
    }

    pub fn linear(&self) -> &[f64] {
        &self.g
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        0.5 * self.h.quad_form(x) + dot(&self.g, x)
    }

    pub fn max_violation(&self, x: &[f64]) -> f64 {
        (0..self.n_constraints())
            .map(|j| dot(self.a.row(j), x) - self.b[j])
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Optimal,
    Infeasible,
    IterLimit,
}

#[derive(Clone, Debug, Serialize)]
pub struct QpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub status: QpStatus,
    pub active_set: Vec<usize>,
    pub multipliers: Vec<f64>,
    pub kkt_residual: f64,
    pub iterations: usize,
}

/// Reusable solver with an iteration budget.
#[derive(Clone, Debug)]
pub struct QpSolver {
    pub max_iters: usize,
}

impl Default for QpSolver {
    fn default() -> Self {
        QpSolver { max_iters: 500 }
    }
}

impl QpSolver {
    pub fn solve(&self, p: &QpProblem) -> QpSolution {
        solve_qp(p, self.max_iters)
    }
}

// Householder QR of an n×q matrix given by columns; returns (Q, R) with Q
// n×n orthogonal and R q×q upper triangular.
fn householder_qr(cols: &[Vec<f64>], n: usize) -> (Matrix, Matrix) {
    let q = cols.len();
    let mut w = Matrix::zeros(n, q);
    for (j, c) in cols.iter().enumerate() {
        for i in 0..n {
            w[(i, j)] = c[i];
        }
    }
    let mut qm = Matrix::identity(n);
    for k in 0..q.min(n) {
        let norm: f64 = (k..n).map(|i| w[(i, k)] * w[(i, k)]).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let alpha = if w[(k, k)] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = (k..n).map(|i| w[(i, k)]).collect();
        v[0] -= alpha;
        let vn2: f64 = v.iter().map(|x| x * x).sum();
        if vn2 == 0.0 {
            continue;
        }
        for j in k..q {
            let s: f64 = (k..n).map(|i| v[i - k] * w[(i, j)]).sum::<f64>() * 2.0 / vn2;
            for i in k..n {
                w[(i, j)] -= s * v[i - k];
            }
        }
        // Q ← Q·(I − 2vvᵀ/vᵀv)
        for r in 0..n {
            let s: f64 = (k..n).map(|i| qm[(r, i)] * v[i - k]).sum::<f64>() * 2.0 / vn2;
            for i in k..n {
                qm[(r, i)] -= s * v[i - k];
            }
        }
    }
    let mut rm = Matrix::zeros(q, q);
    for i in 0..q.min(n) {
        for j in i..q {
            rm[(i, j)] = w[(i, j)];
        }
    }
    (qm, rm)
}

struct Working {
    q: Matrix,
    r: Matrix,
    nq: usize,
}

impl Working {
    fn build(p: &QpProblem, active: &[usize]) -> Working {
        let n = p.dim();
        let cols: Vec<Vec<f64>> = active
            .iter()
            .map(|&j| {
                let mut c: Vec<f64> = p.a.row(j).iter().map(|v| -v).collect();
                forward_subst(&p.chol, &mut c);
                c
            })
            .collect();
        let (q, r) = householder_qr(&cols, n);
        Working { q, r, nq: active.len() }
    }

    // primal direction z and dual direction r for the normal `np`
    fn directions(&self, p: &QpProblem, np: &[f64]) -> (Vec<f64>, Vec<f64>, f64, f64) {
        let n = p.dim();
        let mut y = np.to_vec();
        forward_subst(&p.chol, &mut y);
        let d = self.q.transpose().matvec(&y);
        let d_norm2 = dot(&d, &d);
        let mut z = vec![0.0; n];
        for i in 0..n {
            z[i] = (self.nq..n).map(|k| self.q[(i, k)] * d[k]).sum();
        }
        backward_subst_transposed(&p.chol, &mut z);
        let mut r = d[..self.nq].to_vec();
        for i in (0..self.nq).rev() {
            let mut s = r[i];
            for k in (i + 1)..self.nq {
                s -= self.r[(i, k)] * r[k];
            }
            r[i] = s / self.r[(i, i)];
        }
        let d2: f64 = d[self.nq..].iter().map(|v| v * v).sum();
        (z, r, d2, d_norm2)
    }
}

pub fn solve_qp(p: &QpProblem, max_iters: usize) -> QpSolution {
    let m = p.n_constraints();
    let mut x: Vec<f64> = p.g.iter().map(|v| -v).collect();
    forward_subst(&p.chol, &mut x);
    backward_subst_transposed(&p.chol, &mut x);

    let mut active: Vec<usize> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let mut iterations = 0usize;
    let tol = |j: usize| 1e-11 * (1.0 + p.b[j].abs());

    let status = 'outer: loop {
        let mut chosen: Option<(usize, f64)> = None;
        for j in 0..m {
            if active.contains(&j) {
                continue;
            }
            let s = p.b[j] - dot(p.a.row(j), &x);
            if s < -tol(j) {
                let an = crate::numkit::norm2(p.a.row(j)).max(f64::MIN_POSITIVE);
                let score = s / an;
                if chosen.map_or(true, |(_, best)| score < best) {
                    chosen = Some((j, score));
                }
            }
        }
        let Some((pidx, _)) = chosen else {
            break QpStatus::Optimal;
        };
        let np: Vec<f64> = p.a.row(pidx).iter().map(|v| -v).collect();
        let mut u_plus = u.clone();
        u_plus.push(0.0);
        loop {
            iterations += 1;
            if iterations > max_iters {
                break 'outer QpStatus::IterLimit;
            }
            let work = Working::build(p, &active);
            let (z, r, d2, dn2) = work.directions(p, &np);
            let q = active.len();
            let mut t1 = f64::INFINITY;
            let mut drop_k = None;
            for i in 0..q {
                if r[i] > 1e-14 {
                    let ratio = u_plus[i] / r[i];
                    if ratio < t1 {
                        t1 = ratio;
                        drop_k = Some(i);
                    }
                }
            }
            let s_p = p.b[pidx] - dot(p.a.row(pidx), &x);
            let t2 = if d2 > 1e-13 * dn2 && d2 > 0.0 {
                (-s_p / d2).max(0.0)
            } else {
                f64::INFINITY
            };
            let t = t1.min(t2);
            if !t.is_finite() {
                break 'outer QpStatus::Infeasible;
            }
            for i in 0..q {
                u_plus[i] -= t * r[i];
            }
            u_plus[q] += t;
            if t2.is_finite() {
                for (xi, zi) in x.iter_mut().zip(&z) {
                    *xi += t * zi;
                }
            }
            if t2 <= t1 {
                active.push(pidx);
                u = u_plus;
                break;
            }
            let k = drop_k.expect("finite partial step has a blocking index");
            active.remove(k);
            u_plus.remove(k);
        }
    };

    for ui in u.iter_mut() {
        *ui = ui.max(0.0);
    }
    let mut grad = p.h.matvec(&x);
    for (gi, ci) in grad.iter_mut().zip(&p.g) {
        *gi += ci;
    }
    for (&j, &lam) in active.iter().zip(&u) {
        for (gi, aj) in grad.iter_mut().zip(p.a.row(j)) {
            *gi += lam * aj;
        }
    }
    let kkt_residual = grad.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    QpSolution {
        objective: p.objective(&x),
        x,
        status,
        active_set: active,
        multipliers: u,
        kkt_residual,
        iterations,
    }
}

/// True iff `{x : Ax ≤ b}` is nonempty (least-norm point search).
pub fn feasibility_check(a: &Matrix, b: &[f64]) -> bool {
    let n = a.cols();
    match QpProblem::new(Matrix::identity(n), vec![0.0; n], a.clone(), b.to_vec()) {
        Ok(p) => solve_qp(&p, 50 * (n + b.len() + 1)).status == QpStatus::Optimal,
        Err(_) => false,
    }
}
