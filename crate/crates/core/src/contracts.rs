//! Assume-guarantee clause monitors, the cross-layer budget check and the
//! HESS energy-mismatch bound.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::iss_cert::{IssCertificate, SettlingTimes, TimingVerdict};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContractSpec {
    pub eps_e: f64,
    pub eps_t: f64,
    /// (voltage, battery current).
    pub eps_l: [f64; 2],
    pub eps_h: f64,
    pub r_bar: [f64; 2],
    pub w_max: f64,
    pub t_s: f64,
    pub delta: f64,
    /// Boxes on (V_gr, I_S, I_B).
    pub x_safe: [[f64; 2]; 3],
    /// (Ū_S, Ū_B).
    pub u_bounds: [f64; 2],
    pub y_goal: f64,
}

pub fn check_a_env(w: &[f64], w_max: f64) -> Vec<bool> {
    w.iter().map(|x| x.abs() <= w_max).collect()
}

/// Entry `k` compares `r_{k+1}` with `r_k`.
pub fn check_g_ref(r_seq: &[[f64; 2]], r_bar: [f64; 2]) -> Vec<bool> {
    r_seq
        .windows(2)
        .map(|w| (0..2).all(|i| (w[1][i] - w[0][i]).abs() <= r_bar[i] + 1e-12 * (1.0 + r_bar[i])))
        .collect()
}

pub fn g_safe_point(x: [f64; 3], u: [f64; 2], spec: &ContractSpec) -> bool {
    let in_box = (0..3).all(|i| x[i] >= spec.x_safe[i][0] && x[i] <= spec.x_safe[i][1]);
    in_box && u[0].abs() <= spec.u_bounds[0] && u[1].abs() <= spec.u_bounds[1]
}

/// `x_traj` holds (V_gr, I_S, I_B), `u_traj` holds (u_S, u_B).
pub fn check_g_safe(x_traj: &[[f64; 3]], u_traj: &[[f64; 2]], spec: &ContractSpec) -> Vec<bool> {
    x_traj.iter().zip(u_traj).map(|(x, u)| g_safe_point(*x, *u, spec)).collect()
}

/// `h_r(x(t_{k+1}))` against `r_k`, per output.
pub fn check_g_track(hr_at_ends: &[[f64; 2]], r_seq: &[[f64; 2]], eps_l: [f64; 2]) -> Vec<bool> {
    hr_at_ends
        .iter()
        .zip(r_seq)
        .map(|(h, r)| (0..2).all(|i| (h[i] - r[i]).abs() <= eps_l[i]))
        .collect()
}

fn max_norm(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).abs().max((a[1] - b[1]).abs())
}

/// `w̃_k = y_k − prediction_{k−1}` for `k ≥ 1`; returns verdicts and the
/// mismatch sizes (max over both energy channels).
pub fn check_a_mis(y: &[[f64; 2]], predictions: &[[f64; 2]], eps_e: f64) -> (Vec<bool>, Vec<f64>) {
    let w: Vec<f64> = y
        .iter()
        .skip(1)
        .zip(predictions)
        .map(|(yk, pk)| max_norm(*yk, *pk))
        .collect();
    (w.iter().map(|x| *x <= eps_e).collect(), w)
}

/// Ultimate-bound form of the planner guarantee on the battery channel:
/// `|y_k − goal| ≤ ε_T + δ` from `K_live` onward.
pub fn check_g_iss(y: &[f64], y_goal: f64, eps_t: f64, delta: f64) -> (Vec<bool>, Option<usize>) {
    let v: Vec<bool> = y.iter().map(|yk| (yk - y_goal).abs() <= eps_t + delta).collect();
    (v.clone(), live_index(&v))
}

/// First index after which every verdict holds.
pub fn live_index(v: &[bool]) -> Option<usize> {
    let last_bad = v.iter().rposition(|ok| !ok);
    match last_bad {
        None => Some(0),
        Some(i) if i + 1 < v.len() => Some(i + 1),
        Some(_) => None,
    }
}

pub fn vertical_compat(eps_e: f64, eps_t: f64, delta: f64, eps_h: f64) -> bool {
    eps_e + eps_t + delta < eps_h
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MismatchInputs {
    pub z_peak: f64,
    pub eta: f64,
    pub eps1: f64,
    pub eps2: f64,
    pub delta: f64,
    pub tau1: f64,
    pub tau2: f64,
    pub kappa_max: f64,
    pub v_nom: f64,
    pub lambda_b_energy: f64,
    pub lambda_b_gain: f64,
    pub lambda_s_energy: f64,
    pub i_b_max: f64,
    pub i_s_max: f64,
    pub c_bus: f64,
    pub u_b_max: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MismatchBound {
    pub eps_e: f64,
    pub delta_tr_b: f64,
    pub d_ss_b: f64,
    pub delta_tr_s: f64,
    pub d_ss_s: f64,
    pub tau2: f64,
    pub battery_channel: f64,
    pub supercap_channel: f64,
}

pub fn mismatch_bound_hess(m: &MismatchInputs) -> MismatchBound {
    let lead = m.v_nom + m.z_peak + m.eta;
    let delta_tr_b = m.lambda_b_energy * m.i_b_max * m.z_peak * m.tau1
        + lead * (m.u_b_max / m.lambda_b_gain) * (1.0 - (-m.lambda_b_gain * m.tau1).exp());
    let d_ss_b = m.lambda_b_energy * m.i_b_max * ((1.0 + m.delta) * m.eps1 + m.eta);
    let delta_tr_s = m.lambda_s_energy * m.i_s_max * (m.z_peak + m.eta) * m.tau1
        + lead * m.c_bus * (m.kappa_max + m.z_peak) * m.tau1;
    let d_ss_s = m.lambda_s_energy * m.i_s_max * ((1.0 + m.delta) * m.eps1 + m.eta)
        + (m.v_nom + m.eps1 + m.eta) * m.c_bus * m.eps2;
    let battery_channel = delta_tr_b + d_ss_b * m.tau2;
    let supercap_channel = delta_tr_s + d_ss_s * m.tau2;
    MismatchBound {
        eps_e: battery_channel.max(supercap_channel),
        delta_tr_b,
        d_ss_b,
        delta_tr_s,
        d_ss_s,
        tau2: m.tau2,
        battery_channel,
        supercap_channel,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CertificateReport {
    pub p: Vec<Vec<f64>>,
    pub eigenvalues_p: Vec<f64>,
    pub closed_loop_eigenvalues: Vec<[f64; 2]>,
    pub kappa_p: f64,
    pub v_bar_h: f64,
    pub theta_star_deg: f64,
    pub z_star: Vec<f64>,
    pub eps_l: Vec<f64>,
    pub lambda_e: f64,
    pub m: f64,
    pub gamma_iss: f64,
    pub epsilon: f64,
    pub tau1: f64,
    pub tau2: f64,
    pub tau_ll: f64,
    pub tau1_max: f64,
    pub z_peak: f64,
    pub eps_t: f64,
    pub eps_e: f64,
    pub delta_tr_b: f64,
    pub d_ss_b: f64,
    pub delta_tr_s: f64,
    pub d_ss_s: f64,
    pub r_bar_b: f64,
    pub eps_l_ib: f64,
    pub timing: TimingVerdict,
    pub settled_within_period: bool,
    pub decay_window_ok: bool,
    pub vertical_compat: bool,
    pub inf_gamma: f64,
    pub admissible: bool,
    pub all_verdicts: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportParts<'a> {
    pub spec: &'a ContractSpec,
    pub cert: &'a IssCertificate,
    pub settling: &'a SettlingTimes,
    pub timing: TimingVerdict,
    pub mismatch: &'a MismatchBound,
    pub p: Vec<Vec<f64>>,
    pub eigenvalues_p: Vec<f64>,
    pub closed_loop_eigenvalues: Vec<[f64; 2]>,
    pub eps_l: Vec<f64>,
    pub battery_bounds: (f64, f64),
    pub inf_gamma: f64,
}

pub fn certificate_report(parts: ReportParts<'_>) -> CertificateReport {
    let spec = parts.spec;
    let vc = vertical_compat(spec.eps_e, spec.eps_t, spec.delta, spec.eps_h);
    let admissible = parts.cert.v_bar_h < parts.inf_gamma;
    let lmin = parts.eigenvalues_p.first().copied().unwrap_or(f64::NAN);
    let lmax = parts.eigenvalues_p.last().copied().unwrap_or(f64::NAN);
    let t = parts.timing;
    CertificateReport {
        p: parts.p,
        kappa_p: lmax / lmin,
        eigenvalues_p: parts.eigenvalues_p,
        closed_loop_eigenvalues: parts.closed_loop_eigenvalues,
        v_bar_h: parts.cert.v_bar_h,
        theta_star_deg: parts.cert.theta_star.to_degrees(),
        z_star: parts.cert.z_star.clone(),
        eps_l: parts.eps_l,
        lambda_e: parts.cert.lambda_e,
        m: parts.cert.m,
        gamma_iss: parts.cert.gamma_iss,
        epsilon: parts.cert.epsilon,
        tau1: parts.settling.tau1,
        tau2: parts.settling.tau2,
        tau_ll: parts.settling.tau_ll,
        tau1_max: parts.settling.tau1_max,
        z_peak: parts.settling.z_peak,
        eps_t: spec.eps_t,
        eps_e: spec.eps_e,
        delta_tr_b: parts.mismatch.delta_tr_b,
        d_ss_b: parts.mismatch.d_ss_b,
        delta_tr_s: parts.mismatch.delta_tr_s,
        d_ss_s: parts.mismatch.d_ss_s,
        r_bar_b: parts.battery_bounds.0,
        eps_l_ib: parts.battery_bounds.1,
        timing: t,
        settled_within_period: t.settled_within_period,
        decay_window_ok: t.decay_window_ok,
        vertical_compat: vc,
        inf_gamma: parts.inf_gamma,
        admissible,
        all_verdicts: t.settled_within_period && t.decay_window_ok && vc && admissible,
    }
}

/// Per-clause verdict streams accumulated over a run.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct MonitorReport {
    pub verdicts: BTreeMap<String, Vec<bool>>,
    pub first_violation: BTreeMap<String, Option<usize>>,
    pub w_tilde: Vec<f64>,
    pub k_live: Option<usize>,
}

impl MonitorReport {
    pub fn record(&mut self, clause: &str, ok: bool) {
        let v = self.verdicts.entry(clause.to_string()).or_default();
        if !ok {
            self.first_violation.entry(clause.to_string()).or_insert(Some(v.len()));
        }
        v.push(ok);
    }

    pub fn violations(&self, clause: &str) -> usize {
        self.verdicts.get(clause).map_or(0, |v| v.iter().filter(|ok| !**ok).count())
    }

    pub fn all_pass(&self, clause: &str) -> bool {
        self.violations(clause) == 0
    }

    /// Fill `first_violation` with `None` for clean clauses.
    pub fn finish(&mut self) {
        for k in self.verdicts.keys() {
            self.first_violation.entry(k.clone()).or_insert(None);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn spec() -> ContractSpec {
        ContractSpec {
            eps_e: 0.1,
            eps_t: 0.1,
            eps_l: [0.1, 0.1],
            eps_h: 1.0,
            r_bar: [0.0, 0.5],
            w_max: 3.0,
            t_s: 0.1,
            delta: 0.01,
            x_safe: [[380.0, 420.0], [-12.0, 12.0], [-1.5, 1.5]],
            u_bounds: [50.0, 10.0],
            y_goal: 5.0,
        }
    }

    #[test]
    fn env_clause() {
        assert!(check_a_env(&[0.0; 4], 3.0).iter().all(|v| *v));
        assert_eq!(check_a_env(&[3.0, -3.0, 3.0001], 3.0), vec![true, true, false]);
    }

    #[test]
    fn ref_clause() {
        assert!(check_g_ref(&[[400.0, 1.0]; 3], [0.0, 0.5]).iter().all(|v| *v));
        assert_eq!(check_g_ref(&[[400.0, 0.0], [400.0, 0.5], [400.0, 1.1]], [0.0, 0.5]), vec![true, false]);
    }

    #[test]
    fn safe_clause() {
        let s = spec();
        assert_eq!(check_g_safe(&[[400.0, 0.0, 0.0], [420.0, 12.0, -1.5]], &[[0.0, 0.0], [50.0, -10.0]], &s), vec![true, true]);
        assert_eq!(check_g_safe(&[[400.0, 0.0, 0.0]], &[[50.1, 0.0]], &s), vec![false]);
    }

    #[test]
    fn track_clause() {
        assert_eq!(check_g_track(&[[400.0, 1.0]], &[[400.0, 1.0]], [0.1, 0.1]), vec![true]);
        assert_eq!(check_g_track(&[[400.1, 1.0]], &[[400.0, 1.0]], [0.1, 0.1]), vec![(400.1f64 - 400.0).abs() <= 0.1]);
        assert_eq!(check_g_track(&[[400.0, 1.25]], &[[400.0, 1.0]], [0.1, 0.25]), vec![true]);
    }

    #[test]
    fn mismatch_clause() {
        let y = [[0.0, 0.0], [1.0, 1.0], [2.0, 2.5]];
        let pred = [[1.0, 1.0], [2.0, 2.0]];
        let (v, w) = check_a_mis(&y, &pred, 0.1);
        assert_eq!(w, vec![0.0, 0.5]);
        assert_eq!(v, vec![true, false]);
        let (v, _) = check_a_mis(&y, &pred, 0.0);
        assert_eq!(v, vec![true, false]);
    }

    #[test]
    fn iss_clause() {
        assert_eq!(check_g_iss(&[5.0; 4], 5.0, 0.0, 0.1).1, Some(0));
        let seq: Vec<f64> = (0..12).map(|k| 5.0 - 4.0 * 0.6f64.powi(k)).collect();
        // 4·0.6^k ≤ 0.12 first at k = 7
        assert_eq!(check_g_iss(&seq, 5.0, 0.1, 0.02).1, Some(7));
        let div: Vec<f64> = (0..10).map(|k| k as f64).collect();
        assert_eq!(check_g_iss(&div, 0.0, 0.1, 0.1).1, None);
    }

    #[test]
    fn budget() {
        assert!(vertical_compat(0.0, 0.0, 0.1, 0.2));
        assert!(!vertical_compat(0.1, 0.0, 0.1, 0.2));
        assert!(vertical_compat(0.05, 0.1, 0.01, 0.2));
    }

    fn zero_inputs() -> MismatchInputs {
        MismatchInputs {
            z_peak: 0.0,
            eta: 0.0,
            eps1: 0.0,
            eps2: 0.0,
            delta: 0.1,
            tau1: 0.0,
            tau2: 1.0,
            kappa_max: 0.0,
            v_nom: 400.0,
            lambda_b_energy: 1.0,
            lambda_b_gain: 1e6,
            lambda_s_energy: 1.0,
            i_b_max: 1.0,
            i_s_max: 1.0,
            c_bus: 1.0,
            u_b_max: 1e4,
        }
    }

    #[test]
    fn mismatch_bound_cases() {
        assert_eq!(mismatch_bound_hess(&zero_inputs()).eps_e, 0.0);
        let m = MismatchInputs {
            z_peak: 1.0,
            tau1: 1.0,
            tau2: 0.0,
            ..zero_inputs()
        };
        assert_abs_diff_eq!(mismatch_bound_hess(&m).delta_tr_b, 5.01, epsilon = 1e-9);
    }

    #[test]
    fn monitor_bookkeeping() {
        let mut r = MonitorReport::default();
        r.record("a", true);
        r.record("a", false);
        r.record("b", true);
        r.finish();
        assert_eq!(r.violations("a"), 1);
        assert_eq!(r.first_violation["a"], Some(1));
        assert_eq!(r.first_violation["b"], None);
    }
}
