use laycon::cli::{certify, read_trajectory_csv, simulate, write_trajectory_csv, RunConfig, SCENARIO_A, SCENARIO_B};
use laycon::hess::{error_matrices, LoadProfile};
use laycon::sim::{disturbance_adversarial, mixed_with_xi, Disturbance, DisturbanceStream};
use laycon::Matrix;
use proptest::prelude::*;

fn cfg(text: &str) -> RunConfig {
    RunConfig::from_json(text).unwrap()
}

#[test]
fn runs_are_bit_identical_per_seed() {
    let mut c = cfg(SCENARIO_B);
    c.sim.t_end = 2.0;
    let cert = certify(&c).unwrap();
    let a = simulate(&c, &cert, 7).unwrap();
    let b = simulate(&c, &cert, 7).unwrap();
    assert_eq!(a.log.rows, b.log.rows);
    let other = simulate(&c, &cert, 8).unwrap();
    assert_ne!(a.log.rows, other.log.rows);
}

#[test]
fn reference_is_held_between_samples() {
    let mut c = cfg(SCENARIO_B);
    c.sim.t_end = 2.0;
    let cert = certify(&c).unwrap();
    let out = simulate(&c, &cert, 1).unwrap();
    let per = c.sim.steps_per_period();
    for chunk in out.log.rows.chunks(per) {
        assert!(chunk.iter().all(|r| r.r_v == chunk[0].r_v && r.r_ib == chunk[0].r_ib));
    }
}

#[test]
fn equilibrium_is_stationary() {
    let mut c = cfg(SCENARIO_A);
    c.sim.disturbance = Disturbance::None;
    c.sim.initial.v_gr = 400.0;
    c.sim.t_end = 1.0;
    let cert = certify(&c).unwrap();
    let out = simulate(&c, &cert, 0).unwrap();
    for r in &out.log.rows {
        assert_eq!(r.v_gr, 400.0);
        assert_eq!(r.i_s, 0.0);
        assert_eq!(r.e1, 0.0);
    }
    for k in out.monitor.verdicts.keys() {
        assert!(out.monitor.all_pass(k), "{k}");
    }
}

#[test]
fn csv_round_trip_is_exact() {
    let mut c = cfg(SCENARIO_B);
    c.sim.t_end = 0.5;
    let cert = certify(&c).unwrap();
    let out = simulate(&c, &cert, 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trajectory.csv");
    write_trajectory_csv(&path, &out.log.rows).unwrap();
    let header = std::fs::read_to_string(&path).unwrap().lines().next().unwrap().to_string();
    assert_eq!(header, "t,V_gr,I_S,I_B,E_S,E_B,v,r_V,r_IB,e1,e2,V_e,Gamma_v,Phi,w,d,u_S,u_B,fallback");
    assert_eq!(read_trajectory_csv(&path).unwrap(), out.log.rows);
}

#[test]
fn adversarial_dominates_sampled_disturbances() {
    let c = cfg(SCENARIO_A);
    let cert = certify(&c).unwrap();
    let (_, b, _) = error_matrices(&c.plant).unwrap();
    let pb = cert.p.matrix().matmul(&b);
    let grad = |e: &[f64]| 2.0 * (e[0] * pb[(0, 0)] + e[1] * pb[(1, 0)]);
    for e in [[0.3, -0.1], [-0.2, 0.5], [0.0, 0.0], [1.0, -4.0]] {
        let wa = disturbance_adversarial(&e, &cert.p, &b, 3.0);
        for i in 0..=20 {
            let w = -3.0 + 0.3 * i as f64;
            assert!(grad(&e) * wa >= grad(&e) * w - 1e-12);
        }
    }
    assert_eq!(disturbance_adversarial(&[0.0, 0.0], &cert.p, &Matrix::column(&[0.0, 1.0]), 3.0), 3.0);
}

#[test]
fn load_free_run_keeps_battery_near_goal() {
    let mut c = cfg(SCENARIO_B);
    c.load = LoadProfile::constant(0.0);
    let cert = certify(&c).unwrap();
    let out = simulate(&c, &cert, 0).unwrap();
    assert!((out.summary.e_b_final - 5.0).abs() < 0.05);
    assert_eq!(out.summary.safety_violations, 0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn mixed_disturbance_bounded(t in 0.0f64..100.0, w in 0.0f64..10.0, xi in -1.0f64..=1.0) {
        prop_assert!(mixed_with_xi(t, w, xi).abs() <= w + 1e-12);
    }

    #[test]
    fn stream_replays(seed in any::<u64>()) {
        let mut a = DisturbanceStream::new(seed);
        let mut b = DisturbanceStream::new(seed);
        for _ in 0..50 {
            let x = a.xi();
            prop_assert_eq!(x, b.xi());
            prop_assert!((-1.0..=1.0).contains(&x));
        }
    }
}
