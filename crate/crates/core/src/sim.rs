//! Fixed-step simulation of the layered loop: sampled planner, held
//! reference, governor and plant integrated jointly with RK4.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contracts::{g_safe_point, live_index, ContractSpec, MonitorReport};
use crate::erg::Governor;
use crate::hess::{
    control_ub, control_us, error_matrices, load, plant_rhs, HessError, HessParams, HessState, LoadProfile,
};
use crate::iss_cert::calibrate_overshoot_self_consistent;
use crate::mpc::{plan, PlannerConfig};
use crate::numkit::{decay_rate, Matrix, SpdMatrix};
use crate::qp::QpSolver;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("non-finite state at t = {t}")]
    NonFiniteState { t: f64 },
    #[error("invalid simulation configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Hess(#[from] HessError),
}

/// Classical fourth-order Runge–Kutta step.
pub fn rk4_step<F>(mut f: F, x: &[f64], t: f64, h: f64) -> Vec<f64>
where
    F: FnMut(f64, &[f64]) -> Vec<f64>,
{
    let axpy = |a: f64, k: &[f64]| -> Vec<f64> { x.iter().zip(k).map(|(xi, ki)| xi + a * ki).collect() };
    let k1 = f(t, x);
    let k2 = f(t + 0.5 * h, &axpy(0.5 * h, &k1));
    let k3 = f(t + 0.5 * h, &axpy(0.5 * h, &k2));
    let k4 = f(t + h, &axpy(h, &k3));
    (0..x.len())
        .map(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Disturbance {
    None,
    Mixed { w_max: f64 },
    Adversarial { w_max: f64 },
}

impl Disturbance {
    pub fn w_max(&self) -> f64 {
        match *self {
            Disturbance::None => 0.0,
            Disturbance::Mixed { w_max } | Disturbance::Adversarial { w_max } => w_max,
        }
    }
}

/// Seeded source of the bounded noise `ξ ∈ [−1, 1]`.
pub struct DisturbanceStream {
    rng: ChaCha8Rng,
}

impl DisturbanceStream {
    pub fn new(seed: u64) -> Self {
        DisturbanceStream {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn xi(&mut self) -> f64 {
        self.rng.gen_range(-1.0..=1.0)
    }
}

/// `W·(0.7 sin 15t + 0.3 ξ)` with a fresh `ξ` per call.
pub fn disturbance_mixed(t: f64, w_max: f64, stream: &mut DisturbanceStream) -> f64 {
    mixed_with_xi(t, w_max, stream.xi())
}

pub fn mixed_with_xi(t: f64, w_max: f64, xi: f64) -> f64 {
    w_max * (0.7 * (15.0 * t).sin() + 0.3 * xi)
}

/// `W·sign(2eᵀPB)` with `sign(0) = +1`.
pub fn disturbance_adversarial(e: &[f64], p: &SpdMatrix, b: &Matrix, w_max: f64) -> f64 {
    let s = 2.0 * p.matrix().bilinear(e, b.as_slice());
    if s >= 0.0 {
        w_max
    } else {
        -w_max
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default = "default_h")]
    pub h: f64,
    pub t_end: f64,
    pub t_s: f64,
    #[serde(default)]
    pub seed: u64,
    pub disturbance: Disturbance,
    pub erg_enabled: bool,
    pub mpc_enabled: bool,
    pub initial: HessState,
    /// Initial governor state.
    pub v0: f64,
    /// Held reference `(r_V, I_B_ref)` before the first plan.
    pub reference: [f64; 2],
}

fn default_h() -> f64 {
    1e-3
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.h > 0.0 && self.t_end > 0.0 && self.t_s > 0.0) {
            return Err(SimError::Config("h, t_end and t_s must be positive".into()));
        }
        if self.t_s < self.h {
            return Err(SimError::Config("t_s must be at least one integration step".into()));
        }
        if !(self.disturbance.w_max() >= 0.0) {
            return Err(SimError::Config("w_max must be nonnegative".into()));
        }
        Ok(())
    }

    /// Integration steps per sampling period, rounded.
    pub fn steps_per_period(&self) -> usize {
        let ratio = self.t_s / self.h;
        let n = ratio.round().max(1.0);
        if (ratio - n).abs() > 1e-9 * ratio {
            log::warn!("t_s = {} is not a multiple of h = {}; using {} steps", self.t_s, self.h, n);
        }
        n as usize
    }
}

/// One integration step of the log. Field names follow the CSV header.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajRow {
    pub t: f64,
    #[serde(rename = "V_gr")]
    pub v_gr: f64,
    #[serde(rename = "I_S")]
    pub i_s: f64,
    #[serde(rename = "I_B")]
    pub i_b: f64,
    #[serde(rename = "E_S")]
    pub e_s: f64,
    #[serde(rename = "E_B")]
    pub e_b: f64,
    pub v: f64,
    #[serde(rename = "r_V")]
    pub r_v: f64,
    #[serde(rename = "r_IB")]
    pub r_ib: f64,
    pub e1: f64,
    pub e2: f64,
    #[serde(rename = "V_e")]
    pub v_e: f64,
    #[serde(rename = "Gamma_v")]
    pub gamma_v: f64,
    #[serde(rename = "Phi")]
    pub phi: f64,
    pub w: f64,
    pub d: f64,
    #[serde(rename = "u_S")]
    pub u_s: f64,
    #[serde(rename = "u_B")]
    pub u_b: f64,
    pub fallback: u8,
}

pub const TRAJECTORY_HEADER: &str = "t,V_gr,I_S,I_B,E_S,E_B,v,r_V,r_IB,e1,e2,V_e,Gamma_v,Phi,w,d,u_S,u_B,fallback";

/// Planner-rate record taken at `t_k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub k: usize,
    pub t: f64,
    pub y_eb: f64,
    pub y_es: f64,
    pub pred_eb: f64,
    pub pred_es: f64,
    pub v_n_star: Option<f64>,
    pub w_tilde: Option<f64>,
    pub r_v: f64,
    pub r_ib: f64,
    pub fallback: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrajectoryLog {
    pub rows: Vec<TrajRow>,
    pub samples: Vec<SampleRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunSummary {
    pub seed: u64,
    pub k_live: Option<usize>,
    pub max_phi: f64,
    pub max_phi_admissible: f64,
    pub max_v_e: f64,
    pub omega_h_entry_time: Option<f64>,
    pub omega_h_exits_after_entry: usize,
    pub max_w_tilde: f64,
    pub fallback_count: usize,
    pub m_calibrated: f64,
    pub safety_violations: usize,
    pub phi_invariance_breaches: usize,
    pub g_safe_violations: usize,
    pub inadmissible_steps: usize,
    pub v_gr_min: f64,
    pub v_gr_max: f64,
    pub e_b_final: f64,
}

pub struct LayeredSetup<'a> {
    pub plant: &'a HessParams,
    pub load: &'a LoadProfile,
    pub planner: Option<&'a PlannerConfig>,
    pub governor: &'a Governor,
    pub spec: &'a ContractSpec,
    pub sim: &'a SimConfig,
    pub v_bar_h: f64,
}

pub struct RunOutput {
    pub log: TrajectoryLog,
    pub monitor: MonitorReport,
    pub summary: RunSummary,
}

// Quantities derived from the augmented state at one time instant.
struct Snapshot {
    d: f64,
    u_s: f64,
    u_b: f64,
    v: f64,
    v_dot: f64,
    e: [f64; 2],
}

struct Loop<'a> {
    s: &'a LayeredSetup<'a>,
}

impl Loop<'_> {
    fn snapshot(&self, t: f64, x: &[f64], r: [f64; 2]) -> Result<Snapshot, HessError> {
        let p = self.s.plant;
        let (d, d_dot) = load(t, self.s.load)?;
        let st = HessState::from_slice(x);
        let u_b = control_ub(st.i_b, r[1], p.lambda_b_gain);
        let d_bar = d + st.i_b;
        let d_bar_dot = d_dot + u_b;
        let v = if self.s.sim.erg_enabled { x[5] } else { r[0] };
        // frozen error coordinates: the governor rate is left out of e2
        let e = [st.v_gr - v, (st.i_s + d_bar) / p.c_bus];
        let v_dot = if self.s.sim.erg_enabled {
            self.s.governor.rhs(&e, &[v], &[r[0]])[0]
        } else {
            0.0
        };
        let u_s = control_us(st.v_gr, st.i_s, v, d_bar, d_bar_dot, p);
        Ok(Snapshot { d, u_s, u_b, v, v_dot, e })
    }

    fn rhs(&self, t: f64, x: &[f64], r: [f64; 2], w: f64) -> Result<Vec<f64>, HessError> {
        let sn = self.snapshot(t, x, r)?;
        let st = HessState::from_slice(x);
        let dx = plant_rhs(&st, (sn.u_s, sn.u_b), w, sn.d, self.s.plant);
        let mut out = dx.to_array().to_vec();
        out.push(sn.v_dot);
        Ok(out)
    }
}

pub fn run_layered(s: &LayeredSetup<'_>) -> Result<RunOutput, SimError> {
    let cfg = s.sim;
    cfg.validate()?;
    if cfg.mpc_enabled && s.planner.is_none() {
        return Err(SimError::Config("planner enabled without a planner configuration".into()));
    }
    let per = cfg.steps_per_period();
    let steps = (cfg.t_end / cfg.h).round() as usize;
    let (a_mat, b_mat, _) = error_matrices(s.plant).map_err(HessError::from)?;
    let lambda_e = decay_rate(&a_mat).map_err(HessError::from)?;
    let norm_b = 1.0 / s.plant.c_bus;
    let p_lyap = s.governor.p().clone();
    let w_max = cfg.disturbance.w_max();
    let spec = s.spec;
    let solver = QpSolver::default();
    let lp = Loop { s };

    let mut stream = DisturbanceStream::new(cfg.seed);
    let mut x: Vec<f64> = cfg.initial.to_array().to_vec();
    x.push(if cfg.erg_enabled { cfg.v0 } else { cfg.reference[0] });
    let mut r = cfg.reference;
    let mut fallback_now = false;
    let mut prev_pred: Option<[f64; 2]> = None;

    let mut log = TrajectoryLog::default();
    let mut mon = MonitorReport::default();
    let mut r_hist: Vec<[f64; 2]> = Vec::new();
    let mut iss_verdicts: Vec<bool> = Vec::new();

    let mut entered_safe = false;
    let mut phi_prev = f64::NAN;
    let mut breaches = 0usize;
    let mut g_safe_viol = 0usize;
    let mut inadmissible = 0usize;
    let mut max_phi = f64::NEG_INFINITY;
    let mut max_phi_adm = f64::NEG_INFINITY;
    let mut max_v_e = 0.0f64;
    let mut omega_entry: Option<f64> = None;
    let mut omega_exits = 0usize;
    let mut fallback_count = 0usize;
    let mut norm_traj: Vec<(f64, f64)> = Vec::with_capacity(steps + 1);

    for n in 0..=steps {
        let t = n as f64 * cfg.h;
        let st = HessState::from_slice(&x);

        if n % per == 0 {
            let k = n / per;
            let y = [st.e_b, st.e_s];
            if k > 0 {
                let prev_r = *r_hist.last().expect("reference history");
                let ok = (st.v_gr - prev_r[0]).abs() <= spec.eps_l[0] && (st.i_b - prev_r[1]).abs() <= spec.eps_l[1];
                mon.record("G_track", ok);
            }
            let w_tilde = prev_pred.map(|p| (y[0] - p[0]).abs().max((y[1] - p[1]).abs()));
            if let Some(wt) = w_tilde {
                mon.w_tilde.push(wt);
                mon.record("A_mis", wt <= spec.eps_e);
            }
            let mut v_n_star = None;
            let mut pred = y;
            if cfg.mpc_enabled && n < steps {
                let pc = s.planner.expect("checked above");
                let forecast: Vec<f64> = (0..pc.horizon)
                    .map(|j| load(t + j as f64 * pc.t_s, s.load).map(|v| v.0))
                    .collect::<Result<_, _>>()?;
                let res = plan(y, &forecast, r[1], pc, &solver);
                r = res.r_k;
                fallback_now = res.fallback_used;
                fallback_count += usize::from(res.fallback_used);
                v_n_star = res.v_n_star;
                pred = res.prediction;
                prev_pred = Some(res.prediction);
                iss_verdicts.push((y[0] - spec.y_goal).abs() <= spec.eps_t + spec.delta);
                mon.record("G_iss", *iss_verdicts.last().expect("just pushed"));
            }
            if n < steps {
                if let Some(prev) = r_hist.last() {
                    let ok = (0..2).all(|i| (r[i] - prev[i]).abs() <= spec.r_bar[i] + 1e-12 * (1.0 + spec.r_bar[i]));
                    mon.record("G_ref", ok);
                }
                r_hist.push(r);
            }
            log.samples.push(SampleRecord {
                k,
                t,
                y_eb: y[0],
                y_es: y[1],
                pred_eb: pred[0],
                pred_es: pred[1],
                v_n_star,
                w_tilde,
                r_v: r[0],
                r_ib: r[1],
                fallback: fallback_now,
            });
        }

        let sn = lp.snapshot(t, &x, r)?;
        let w = if n < steps {
            match cfg.disturbance {
                Disturbance::None => 0.0,
                Disturbance::Mixed { w_max } => disturbance_mixed(t, w_max, &mut stream),
                Disturbance::Adversarial { w_max } => disturbance_adversarial(&sn.e, &p_lyap, &b_mat, w_max),
            }
        } else {
            0.0
        };
        let v_e = s.governor.lyapunov(&sn.e);
        let gamma_v = s.governor.gamma(&[sn.v]);
        let phi = v_e - gamma_v;

        mon.record("A_env", w.abs() <= w_max);
        let safe = g_safe_point([st.v_gr, st.i_s, st.i_b], [sn.u_s, sn.u_b], spec);
        mon.record("G_safe", safe);
        if !entered_safe && phi <= 0.0 {
            entered_safe = true;
        }
        if entered_safe {
            let breach = phi_prev <= 0.0 && phi > 1e-9;
            mon.record("Phi_invariance", !breach);
            breaches += usize::from(breach);
            if phi <= 0.0 && !safe {
                g_safe_viol += 1;
            }
            max_phi_adm = max_phi_adm.max(phi);
        } else {
            inadmissible += 1;
        }
        phi_prev = phi;
        max_phi = max_phi.max(phi);
        max_v_e = max_v_e.max(v_e);
        match omega_entry {
            None if v_e <= s.v_bar_h => omega_entry = Some(t),
            Some(_) if v_e > s.v_bar_h => omega_exits += 1,
            _ => {}
        }
        norm_traj.push((t, (sn.e[0] * sn.e[0] + sn.e[1] * sn.e[1]).sqrt()));

        log.rows.push(TrajRow {
            t,
            v_gr: st.v_gr,
            i_s: st.i_s,
            i_b: st.i_b,
            e_s: st.e_s,
            e_b: st.e_b,
            v: sn.v,
            r_v: r[0],
            r_ib: r[1],
            e1: sn.e[0],
            e2: sn.e[1],
            v_e,
            gamma_v,
            phi,
            w,
            d: sn.d,
            u_s: sn.u_s,
            u_b: sn.u_b,
            fallback: u8::from(fallback_now),
        });

        if n == steps {
            break;
        }
        let held = r;
        let mut err = None;
        let next = rk4_step(
            |tt, xx| match lp.rhs(tt, xx, held, w) {
                Ok(v) => v,
                Err(e) => {
                    err.get_or_insert(e);
                    vec![0.0; xx.len()]
                }
            },
            &x,
            t,
            cfg.h,
        );
        if let Some(e) = err {
            return Err(e.into());
        }
        if next.iter().any(|v| !v.is_finite()) {
            log::error!("state became non-finite after t = {t}");
            return Err(SimError::NonFiniteState { t: t + cfg.h });
        }
        x = next;
    }

    mon.k_live = if cfg.mpc_enabled { live_index(&iss_verdicts) } else { None };
    mon.finish();
    let e0 = norm_traj.first().map_or(0.0, |p| p.1);
    let m_cal = calibrate_overshoot_self_consistent(&norm_traj, lambda_e, norm_b, w_max, e0).unwrap_or(1.0);
    let (vmin, vmax) = log
        .rows
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), r| (a.min(r.v_gr), b.max(r.v_gr)));
    let summary = RunSummary {
        seed: cfg.seed,
        k_live: mon.k_live,
        max_phi,
        max_phi_admissible: max_phi_adm,
        max_v_e,
        omega_h_entry_time: omega_entry,
        omega_h_exits_after_entry: omega_exits,
        max_w_tilde: mon.w_tilde.iter().fold(0.0, |a, b| a.max(*b)),
        fallback_count,
        m_calibrated: m_cal,
        safety_violations: breaches + g_safe_viol,
        phi_invariance_breaches: breaches,
        g_safe_violations: g_safe_viol,
        inadmissible_steps: inadmissible,
        v_gr_min: vmin,
        v_gr_max: vmax,
        e_b_final: log.rows.last().map_or(0.0, |r| r.e_b),
    };
    Ok(RunOutput {
        log,
        monitor: mon,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn rk4_constant() {
        let x = rk4_step(|_, x| vec![0.0; x.len()], &[1.0, 2.0], 0.0, 0.1);
        assert_eq!(x, vec![1.0, 2.0]);
    }

    #[test]
    fn rk4_exponential() {
        let mut x = vec![1.0];
        for i in 0..10 {
            x = rk4_step(|_, x| vec![-x[0]], &x, i as f64 * 0.1, 0.1);
        }
        assert_abs_diff_eq!(x[0], (-1.0f64).exp(), epsilon = 1e-6);
    }

    #[test]
    fn mixed_bound_and_replay() {
        assert_eq!(mixed_with_xi(0.0, 3.0, 0.0), 0.0);
        let mut a = DisturbanceStream::new(5);
        let mut b = DisturbanceStream::new(5);
        for i in 0..1000 {
            let t = i as f64 * 1e-3;
            let wa = disturbance_mixed(t, 3.0, &mut a);
            assert!(wa.abs() <= 3.0);
            assert_eq!(wa, disturbance_mixed(t, 3.0, &mut b));
        }
    }

    #[test]
    fn adversarial_sign() {
        let p = SpdMatrix::new(Matrix::identity(2)).unwrap();
        let b = Matrix::column(&[0.0, 1.0]);
        assert_eq!(disturbance_adversarial(&[0.0, 0.0], &p, &b, 2.0), 2.0);
        assert_eq!(disturbance_adversarial(&[0.0, -1.0], &p, &b, 2.0), -2.0);
    }
}
