//! ISS certificates for the linear tracking-error loop.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numkit::{invert_spd, Matrix, NumError, SpdMatrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IssError {
    #[error("trajectory is empty")]
    EmptyTrajectory,
    #[error("coordinate {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Num(#[from] NumError),
}

/// `α(s) = c·sᵖ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerLawK {
    pub c: f64,
    pub p: f64,
}

impl PowerLawK {
    pub fn new(c: f64, p: f64) -> Result<Self, IssError> {
        if !(c > 0.0 && p > 0.0) {
            return Err(IssError::InvalidInput("power law needs c > 0 and p > 0".into()));
        }
        Ok(PowerLawK { c, p })
    }

    pub fn eval(&self, s: f64) -> f64 {
        self.c * s.powf(self.p)
    }

    pub fn inverse(&self, y: f64) -> f64 {
        (y / self.c).powf(1.0 / self.p)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IssCertificate {
    pub lambda_e: f64,
    pub m: f64,
    pub gamma_iss: f64,
    pub epsilon: f64,
    pub v_bar_h: f64,
    pub theta_star: f64,
    pub z_star: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SettlingTimes {
    pub tau1: f64,
    pub tau2: f64,
    pub tau_ll: f64,
    pub z_peak: f64,
    pub tau1_max: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TauMode {
    Absolute,
    #[default]
    Relative,
}

/// `ᾱ(α⁻¹(σ(H)))`.
pub fn ultimate_level_generic(alpha_bar: PowerLawK, alpha: PowerLawK, sigma: PowerLawK, h_max: f64) -> f64 {
    alpha_bar.eval(alpha.inverse(sigma.eval(h_max)))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OptimizedLevel {
    pub v_bar_h: f64,
    /// Radians in [0, π).
    pub theta_star: f64,
    pub z_star: [f64; 2],
}

/// Largest `V` on the surface where the dissipation just balances the
/// worst disturbance, parametrized by direction `b(θ)`.
pub fn ultimate_level_optimized(p: &SpdMatrix, r: &SpdMatrix, b: &Matrix, h_max: f64) -> Result<OptimizedLevel, IssError> {
    if p.dim() != 2 || r.dim() != 2 || b.rows() != 2 || b.cols() != 1 {
        return Err(IssError::InvalidInput("optimized level needs a planar error space".into()));
    }
    if !(h_max >= 0.0) {
        return Err(IssError::InvalidInput("H_max must be nonnegative".into()));
    }
    let pb = p.matrix().matvec(b.as_slice());
    let radius = |th: f64| {
        let dir = [th.cos(), th.sin()];
        2.0 * (dir[0] * pb[0] + dir[1] * pb[1]).abs() * h_max / r.quad_form(&dir)
    };
    let level = |th: f64| {
        let a = radius(th);
        a * a * p.quad_form(&[th.cos(), th.sin()])
    };

    const GRID: usize = 3600;
    let step = std::f64::consts::PI / GRID as f64;
    let (mut best_i, mut best) = (0usize, f64::NEG_INFINITY);
    for i in 0..GRID {
        let val = level(i as f64 * step);
        if val > best {
            best = val;
            best_i = i;
        }
    }
    let (mut lo, mut hi) = ((best_i as f64 - 1.0) * step, (best_i as f64 + 1.0) * step);
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - phi * (hi - lo);
    let mut x2 = lo + phi * (hi - lo);
    let (mut f1, mut f2) = (level(x1), level(x2));
    while hi - lo > 1e-7 {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = level(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = level(x1);
        }
    }
    let mut theta = 0.5 * (lo + hi);
    if level(theta) < best {
        theta = best_i as f64 * step;
    }
    theta = theta.rem_euclid(std::f64::consts::PI);
    let a = radius(theta);
    Ok(OptimizedLevel {
        v_bar_h: level(theta),
        theta_star: theta,
        z_star: [a * theta.cos(), a * theta.sin()],
    })
}

/// `sqrt(V̄_h·[P⁻¹]_ii)`.
pub fn coordinate_bound(p: &SpdMatrix, v_bar_h: f64, i: usize) -> Result<f64, IssError> {
    if i >= p.dim() {
        return Err(IssError::IndexOutOfRange { index: i, dim: p.dim() });
    }
    if !(v_bar_h >= 0.0) {
        return Err(IssError::InvalidInput("V̄_h must be nonnegative".into()));
    }
    let pinv = invert_spd(p)?;
    Ok((v_bar_h * pinv.matrix()[(i, i)]).sqrt())
}

pub fn iss_gain(m: f64, norm_b: f64, lambda_e: f64) -> f64 {
    m * norm_b / lambda_e
}

pub fn noise_floor(gamma_iss: f64, h_max: f64) -> f64 {
    gamma_iss * h_max
}

/// Tightest `m ≥ 1` such that every sample satisfies
/// `‖e(t)‖ ≤ m·e^{−λt}‖e₀‖ + ε(1 − e^{−λt})`, with `t` measured from the
/// first sample.
pub fn calibrate_overshoot(norm_traj: &[(f64, f64)], lambda_e: f64, eps: f64, e0_norm: f64) -> Result<f64, IssError> {
    let t0 = norm_traj.first().ok_or(IssError::EmptyTrajectory)?.0;
    if e0_norm == 0.0 {
        return Ok(1.0);
    }
    let mut m = 1.0f64;
    for &(t, en) in norm_traj {
        let decay = (-lambda_e * (t - t0)).exp();
        m = m.max((en - eps * (1.0 - decay)) / (decay * e0_norm));
    }
    Ok(m)
}

/// Tightest `m ≥ 1` when the noise floor itself scales with `m`
/// (`ε = m·‖B‖·H/λ`), so the envelope is `m·(e^{−λt}‖e₀‖ + c(1 − e^{−λt}))`.
pub fn calibrate_overshoot_self_consistent(
    norm_traj: &[(f64, f64)],
    lambda_e: f64,
    norm_b: f64,
    h_max: f64,
    e0_norm: f64,
) -> Result<f64, IssError> {
    let t0 = norm_traj.first().ok_or(IssError::EmptyTrajectory)?.0;
    let c = norm_b * h_max / lambda_e;
    let mut m = 1.0f64;
    for &(t, en) in norm_traj {
        let decay = (-lambda_e * (t - t0)).exp();
        let env = decay * e0_norm + c * (1.0 - decay);
        if env > 0.0 {
            m = m.max(en / env);
        }
    }
    Ok(m)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SettlingInputs {
    pub m: f64,
    pub lambda_e: f64,
    pub r_bar: f64,
    pub eps: f64,
    pub kappa_lo: f64,
    pub r_lo: f64,
    pub delta: f64,
    pub h_max: f64,
    /// Feedforward residual bound `M`.
    pub ff_residual: f64,
    pub gamma_iss: f64,
    pub mode: TauMode,
}

/// Decay-phase time `τ₂`; zero when the log argument is at most 1.
pub fn decay_time(m: f64, z_peak: f64, lambda_e: f64, delta: f64, eps: f64, mode: TauMode) -> f64 {
    // A zero noise floor makes the relative target vanish; use δ itself then.
    let target = match mode {
        TauMode::Relative if eps > 0.0 => delta * eps,
        _ => delta,
    };
    let arg = m * z_peak / target;
    if arg <= 1.0 {
        0.0
    } else {
        arg.ln() / lambda_e
    }
}

pub fn settling_time(inp: &SettlingInputs) -> Result<SettlingTimes, IssError> {
    let positive = [
        ("m", inp.m),
        ("lambda_e", inp.lambda_e),
        ("kappa_lo", inp.kappa_lo),
        ("r_lo", inp.r_lo),
        ("delta", inp.delta),
    ];
    for (name, v) in positive {
        if !(v > 0.0) {
            return Err(IssError::InvalidInput(format!("{name} must be positive")));
        }
    }
    let tau1 = (inp.r_bar + inp.eps) / (inp.kappa_lo * inp.r_lo);
    let z_peak = inp.m * (-inp.lambda_e * tau1).exp() * (inp.r_bar + inp.eps)
        + inp.gamma_iss * (inp.h_max + inp.ff_residual);
    let tau2 = decay_time(inp.m, z_peak, inp.lambda_e, inp.delta, inp.eps, inp.mode);
    Ok(SettlingTimes {
        tau1,
        tau2,
        tau_ll: tau1 + tau2,
        z_peak,
        tau1_max: tau1,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TimingVerdict {
    /// `T_s ≥ τ₁ + τ₂`.
    pub settled_within_period: bool,
    pub settled_within_period_slack: f64,
    /// `0 ≤ T_s − τ₂ ≤ τ₁ᴹ`.
    pub decay_window_ok: bool,
    pub decay_window_lower_slack: f64,
    pub decay_window_upper_slack: f64,
}

pub fn timing_check(t_s: f64, times: &SettlingTimes) -> TimingVerdict {
    let slack = t_s - times.tau_ll;
    let lower = t_s - times.tau2;
    let upper = times.tau1_max - lower;
    TimingVerdict {
        settled_within_period: slack >= 0.0,
        settled_within_period_slack: slack,
        decay_window_ok: lower >= 0.0 && upper >= 0.0,
        decay_window_lower_slack: lower,
        decay_window_upper_slack: upper,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::solve_lyapunov;
    use approx::assert_abs_diff_eq;

    fn scenario_a() -> (SpdMatrix, SpdMatrix, Matrix) {
        let a = Matrix::from_rows(&[&[0.0, 1.0], &[-25.0, -11.0]]).unwrap();
        let r = SpdMatrix::new(Matrix::diag(&[50.0, 1.0])).unwrap();
        (solve_lyapunov(&a, &r).unwrap(), r, Matrix::column(&[0.0, 1.0]))
    }

    #[test]
    fn generic_level() {
        let id = PowerLawK::new(1.0, 1.0).unwrap();
        assert_eq!(ultimate_level_generic(id, id, id, 0.0), 0.0);
        assert_eq!(ultimate_level_generic(id, id, id, 3.0), 3.0);
        let lvl = ultimate_level_generic(
            PowerLawK::new(2.0, 2.0).unwrap(),
            PowerLawK::new(4.0, 1.0).unwrap(),
            PowerLawK::new(1.0, 2.0).unwrap(),
            2.0,
        );
        assert_abs_diff_eq!(lvl, 2.0, epsilon = 1e-14);
    }

    #[test]
    fn optimized_level_zero_and_identity() {
        let (p, r, _) = scenario_a();
        let l = ultimate_level_optimized(&p, &r, &Matrix::column(&[0.0, 0.0]), 3.0).unwrap();
        assert_eq!(l.v_bar_h, 0.0);
        let eye = SpdMatrix::new(Matrix::identity(2)).unwrap();
        let two = SpdMatrix::new(Matrix::identity(2).scale(2.0)).unwrap();
        let l = ultimate_level_optimized(&eye, &two, &Matrix::column(&[0.0, 1.0]), 1.0).unwrap();
        assert_abs_diff_eq!(l.v_bar_h, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(l.theta_star.to_degrees(), 90.0, epsilon = 1e-3);
    }

    #[test]
    fn optimized_level_scenario_a() {
        let (p, r, b) = scenario_a();
        let l = ultimate_level_optimized(&p, &r, &b, 3.0).unwrap();
        assert_abs_diff_eq!(l.v_bar_h, 0.51, epsilon = 0.01);
        assert_abs_diff_eq!(l.theta_star.to_degrees(), 79.7, epsilon = 0.5);
        assert_abs_diff_eq!(l.z_star[0], 0.13, epsilon = 0.01);
        assert_abs_diff_eq!(l.z_star[1], 0.72, epsilon = 0.01);
    }

    #[test]
    fn coordinate_bounds() {
        let eye = SpdMatrix::new(Matrix::identity(2)).unwrap();
        assert_eq!(coordinate_bound(&eye, 1.0, 0).unwrap(), 1.0);
        assert!(matches!(coordinate_bound(&eye, 1.0, 2), Err(IssError::IndexOutOfRange { .. })));
        let (p, r, b) = scenario_a();
        let l = ultimate_level_optimized(&p, &r, &b, 3.0).unwrap();
        assert_abs_diff_eq!(coordinate_bound(&p, l.v_bar_h, 0).unwrap(), 0.27, epsilon = 0.01);
    }

    #[test]
    fn gain_chain() {
        let g = iss_gain(2.94, 1.0, 3.21);
        assert_abs_diff_eq!(g, 0.92, epsilon = 0.005);
        assert_abs_diff_eq!(noise_floor(g, 3.0), 2.75, epsilon = 0.02);
        assert_eq!(iss_gain(2.0, 0.0, 1.0), 0.0);
        assert_eq!(iss_gain(1.0, 2.0, 4.0), 0.5);
    }

    #[test]
    fn overshoot_calibration() {
        let lam = 2.0;
        let exact: Vec<(f64, f64)> = (0..50).map(|i| (i as f64 * 0.1, 3.0 * (-lam * i as f64 * 0.1).exp())).collect();
        assert_abs_diff_eq!(calibrate_overshoot(&exact, lam, 0.7, 3.0).unwrap(), 1.0);
        let double: Vec<(f64, f64)> = exact.iter().map(|&(t, e)| (t, 2.0 * e)).collect();
        assert_abs_diff_eq!(calibrate_overshoot(&double, lam, 0.0, 3.0).unwrap(), 2.0, epsilon = 1e-12);
        assert_eq!(calibrate_overshoot(&[], lam, 0.0, 1.0), Err(IssError::EmptyTrajectory));
        assert_eq!(calibrate_overshoot(&[(0.0, 0.0)], lam, 0.0, 0.0).unwrap(), 1.0);
    }

    #[test]
    fn self_consistent_calibration_is_fixed_point() {
        let traj: Vec<(f64, f64)> = (0..100)
            .map(|i| {
                let t = i as f64 * 0.05;
                (t, 3.0 * (1.0 + t) * (-t).exp() + 0.3 * (1.0 - (-t).exp()))
            })
            .collect();
        let m = calibrate_overshoot_self_consistent(&traj, 1.0, 1.0, 0.5, 3.0).unwrap();
        let eps = m * 1.0 * 0.5 / 1.0;
        assert_abs_diff_eq!(calibrate_overshoot(&traj, 1.0, eps, 3.0).unwrap(), m, epsilon = 1e-9);
    }

    #[test]
    fn decay_time_cases() {
        assert_eq!(decay_time(2.0, 0.05, 1.0, 0.1, 1.0, TauMode::Absolute), 0.0);
        let t2 = decay_time(2.94, 8.81, 3.21, 0.1, 2.75, TauMode::Relative);
        assert_abs_diff_eq!(t2, 1.42, epsilon = 0.02);
    }

    #[test]
    fn settling_hand_evaluation() {
        let s = settling_time(&SettlingInputs {
            m: 2.0,
            lambda_e: 2.0,
            r_bar: 1.0,
            eps: 0.5,
            kappa_lo: 1.0,
            r_lo: 1.0,
            delta: 0.1,
            h_max: 1.0,
            ff_residual: 0.0,
            gamma_iss: 1.0,
            mode: TauMode::Absolute,
        })
        .unwrap();
        assert_abs_diff_eq!(s.tau1, 1.5);
        assert_abs_diff_eq!(s.z_peak, 2.0 * (-3.0f64).exp() * 1.5 + 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.tau2, 0.5 * (2.0 * s.z_peak / 0.1).ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(s.tau2, 1.568, epsilon = 1e-3);
        assert_eq!(s.tau_ll, s.tau1 + s.tau2);
    }

    #[test]
    fn timing_verdicts() {
        let t = SettlingTimes {
            tau1: 0.3,
            tau2: 0.5,
            tau_ll: 0.8,
            z_peak: 1.0,
            tau1_max: 0.3,
        };
        let v = timing_check(0.8, &t);
        assert!(v.settled_within_period);
        assert_eq!(v.settled_within_period_slack, 0.0);
        let small = SettlingTimes { tau1_max: 0.001, ..t };
        assert!(!timing_check(0.5 + 0.001 + 0.01, &small).decay_window_ok);
        let b = SettlingTimes {
            tau1: 0.0,
            tau2: 1.42,
            tau_ll: 1.42,
            z_peak: 1.0,
            tau1_max: 0.0,
        };
        assert!(!timing_check(0.1, &b).settled_within_period);
    }
}
