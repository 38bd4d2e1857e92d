mod common;

use laycon::numkit::{cholesky, eigenvalues, solve_lyapunov, sym_eigen, NumError};
use laycon::qp::{QpSolver, QpStatus};
use laycon::{Matrix, SpdMatrix};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

/// Solve AᵀP + PA = −R through nalgebra's dense LU on the Kronecker system.
fn lyapunov_nalgebra(a: &Matrix, r: &Matrix) -> DMatrix<f64> {
    let n = a.rows();
    let at = to_na(a).transpose();
    let eye = DMatrix::<f64>::identity(n, n);
    let k = at.kronecker(&eye) + eye.kronecker(&at);
    let rhs = -nalgebra::DVector::from_row_slice(to_na(r).transpose().as_slice());
    let x = k.lu().solve(&rhs).unwrap();
    DMatrix::from_column_slice(n, n, x.as_slice()).transpose()
}

#[test]
fn lyapunov_matches_nalgebra() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let a = common::random_hurwitz(&mut rng);
        let r = SpdMatrix::new(Matrix::identity(a.rows()).scale(2.0)).unwrap();
        let p = solve_lyapunov(&a, &r).unwrap();
        let q = lyapunov_nalgebra(&a, r.matrix());
        let diff = (to_na(p.matrix()) - &q).abs().max();
        assert!(diff <= 1e-9 * (1.0 + q.abs().max()), "diff {diff}");
    }
}

#[test]
fn lyapunov_rejects_unstable() {
    let a = Matrix::from_rows(&[&[0.5, 1.0], &[0.0, -1.0]]).unwrap();
    let r = SpdMatrix::new(Matrix::identity(2)).unwrap();
    assert!(matches!(solve_lyapunov(&a, &r), Err(NumError::NotHurwitz { .. })));
}

#[test]
fn qp_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let solver = QpSolver::default();
    for i in 0..300 {
        let p = common::random_qp(&mut rng);
        let sol = solver.solve(&p);
        match common::qp_enumerate(&p) {
            Some((x, f)) => {
                assert_eq!(sol.status, QpStatus::Optimal, "case {i}");
                assert!((sol.objective - f).abs() <= 1e-6, "case {i}: {} vs {f}", sol.objective);
                let dx = x.iter().zip(&sol.x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                assert!(dx <= 1e-5, "case {i}: dx {dx}");
                assert!(sol.multipliers.iter().all(|u| *u >= -1e-9));
            }
            None => assert_eq!(sol.status, QpStatus::Infeasible, "case {i}"),
        }
    }
}

#[test]
fn rk4_is_fourth_order() {
    let e1 = common::rk4_decay_error(0.1);
    let e2 = common::rk4_decay_error(0.05);
    let e3 = common::rk4_decay_error(0.025);
    assert!((e1 - 3.332e-7).abs() < 5e-8, "{e1}");
    for ratio in [e1 / e2, e2 / e3] {
        assert!((14.0..=18.0).contains(&ratio), "ratio {ratio}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sym_eigen_matches_nalgebra(vals in proptest::collection::vec(-5.0f64..5.0, 16), n in 1usize..=4) {
        let mut m = Matrix::new(n, n, vals[..n * n].to_vec()).unwrap();
        m = m.symmetrized();
        let ours = sym_eigen(&m).unwrap().values;
        let mut theirs: Vec<f64> = to_na(&m).symmetric_eigenvalues().iter().copied().collect();
        theirs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (a, b) in ours.iter().zip(&theirs) {
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn eigenvalues_match_nalgebra(vals in proptest::collection::vec(-3.0f64..3.0, 25), n in 1usize..=5) {
        let m = Matrix::new(n, n, vals[..n * n].to_vec()).unwrap();
        let ours = eigenvalues(&m).unwrap();
        let theirs = to_na(&m).complex_eigenvalues();
        // Match as multisets by greedy nearest pairing.
        let mut left: Vec<(f64, f64)> = theirs.iter().map(|z| (z.re, z.im)).collect();
        for z in &ours {
            let (idx, d) = left
                .iter()
                .enumerate()
                .map(|(i, w)| (i, ((w.0 - z.re).powi(2) + (w.1 - z.im).powi(2)).sqrt()))
                .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
                .unwrap();
            prop_assert!(d <= 1e-6, "unmatched {:?}", z);
            left.remove(idx);
        }
    }

    #[test]
    fn cholesky_reconstructs(vals in proptest::collection::vec(-2.0f64..2.0, 36), n in 1usize..=6) {
        let b = Matrix::new(n, n, vals[..n * n].to_vec()).unwrap();
        let s = b.transpose().matmul(&b).add(&Matrix::identity(n).scale(0.5));
        let l = cholesky(&s).unwrap();
        let back = l.matmul(&l.transpose());
        prop_assert!(back.sub(&s).max_abs() <= 1e-10 * (1.0 + s.max_abs()));
    }

    #[test]
    fn lyapunov_residual_small(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = common::random_hurwitz(&mut rng);
        let r = SpdMatrix::new(Matrix::identity(a.rows())).unwrap();
        let p = solve_lyapunov(&a, &r).unwrap();
        prop_assert!(common::lyapunov_rel_residual(&a, p.matrix(), r.matrix()) <= 1e-9);
        prop_assert!(p.lambda_min() > 0.0);
    }
}
