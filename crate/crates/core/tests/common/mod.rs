#![allow(dead_code)]

use laycon::qp::QpProblem;
use laycon::Matrix;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Brute-force optimum: stationary point of every active subset with at most
/// `n` rows, filtered for primal feasibility. `None` if no subset is feasible.
pub fn qp_enumerate(p: &QpProblem) -> Option<(Vec<f64>, f64)> {
    let n = p.dim();
    let m = p.n_constraints();
    let h = p.hessian();
    let mut best: Option<(Vec<f64>, f64)> = None;
    for mask in 0u32..(1 << m) {
        let rows: Vec<usize> = (0..m).filter(|j| mask & (1 << j) != 0).collect();
        if rows.len() > n {
            continue;
        }
        let k = n + rows.len();
        let mut kkt = DMatrix::<f64>::zeros(k, k);
        let mut rhs = DVector::<f64>::zeros(k);
        for i in 0..n {
            for j in 0..n {
                kkt[(i, j)] = h[(i, j)];
            }
            rhs[i] = -p.linear()[i];
        }
        for (r, &j) in rows.iter().enumerate() {
            for i in 0..n {
                kkt[(n + r, i)] = p.a()[(j, i)];
                kkt[(i, n + r)] = p.a()[(j, i)];
            }
            rhs[n + r] = p.b()[j];
        }
        let Some(sol) = kkt.lu().solve(&rhs) else { continue };
        if sol.iter().any(|v| !v.is_finite()) {
            continue;
        }
        let x: Vec<f64> = sol.iter().take(n).copied().collect();
        if p.max_violation(&x) > 1e-8 {
            continue;
        }
        let f = p.objective(&x);
        if best.as_ref().map_or(true, |(_, bf)| f < *bf) {
            best = Some((x, f));
        }
    }
    best
}

/// Random strictly convex QP with up to 4 variables and 6 rows. About one in
/// five instances gets an unconstrained right-hand side and may be infeasible.
pub fn random_qp(rng: &mut ChaCha8Rng) -> QpProblem {
    let n = rng.gen_range(1..=4);
    let m = rng.gen_range(0..=6);
    let mut mm = vec![0.0; n * n];
    for v in mm.iter_mut() {
        *v = rng.gen_range(-1.0..1.0);
    }
    let mm = Matrix::new(n, n, mm).unwrap();
    let h = mm.transpose().matmul(&mm).add(&Matrix::identity(n).scale(0.1));
    let g: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let mut a = vec![0.0; m * n];
    for v in a.iter_mut() {
        *v = rng.gen_range(-1.0..1.0);
    }
    let a = Matrix::new(m, n, a).unwrap();
    let free = rng.gen_bool(0.2);
    let x0: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let ax0 = a.matvec(&x0);
    let b: Vec<f64> = ax0
        .iter()
        .map(|v| if free { rng.gen_range(-1.0..1.0) } else { v + rng.gen_range(0.0..1.0) })
        .collect();
    QpProblem::new(h, g, a, b).unwrap()
}

/// Random Hurwitz matrix of size 2..=6: a random matrix shifted left past its
/// Gershgorin radius.
pub fn random_hurwitz(rng: &mut ChaCha8Rng) -> Matrix {
    let n = rng.gen_range(2..=6);
    let mut data = vec![0.0; n * n];
    for v in data.iter_mut() {
        *v = rng.gen_range(-2.0..2.0);
    }
    let a = Matrix::new(n, n, data).unwrap();
    let radius = a.norm_inf();
    let shift = radius + rng.gen_range(0.1..1.0);
    a.add(&Matrix::identity(n).scale(-shift))
}

pub fn lyapunov_rel_residual(a: &Matrix, p: &Matrix, r: &Matrix) -> f64 {
    let res = a.transpose().matmul(p).add(&p.matmul(a)).add(r);
    res.norm_inf() / r.norm_inf()
}

/// Global RK4 error on x' = -x at t = 1.
pub fn rk4_decay_error(h: f64) -> f64 {
    let steps = (1.0 / h).round() as usize;
    let mut x = vec![1.0];
    for i in 0..steps {
        x = laycon::sim::rk4_step(|_, y: &[f64]| vec![-y[0]], &x, i as f64 * h, h);
    }
    (x[0] - (-1.0f64).exp()).abs()
}
