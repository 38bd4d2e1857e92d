//! Energy planner: condensed SOC-tracking MPC over the battery current
//! reference, with the previous-reference fallback.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hess::{battery_interface_bounds, HessParams};
use crate::numkit::Matrix;
use crate::qp::{QpProblem, QpSolver, QpStatus};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MpcError {
    #[error("invalid planner configuration: {0}")]
    InvalidConfig(String),
    #[error("no sampled point was feasible")]
    AllInfeasible,
}

/// User-facing planner settings; the remaining fields of
/// [`PlannerConfig`] come from the plant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlannerSettings {
    pub horizon: usize,
    pub q_weight: f64,
    pub e_b_goal: f64,
    pub e_b_range: [f64; 2],
    pub e_s_range: [f64; 2],
    #[serde(default)]
    pub tighten_eps_e: f64,
    /// Defaults to the battery reference-step bound.
    #[serde(default)]
    pub slew_bound: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    pub horizon: usize,
    pub t_s: f64,
    pub q_weight: f64,
    pub e_b_goal: f64,
    pub v_nom: f64,
    pub lambda_b: f64,
    pub lambda_s: f64,
    pub i_b_max: f64,
    pub i_s_max: f64,
    pub e_b_range: [f64; 2],
    pub e_s_range: [f64; 2],
    pub slew_bound: f64,
    pub tighten_eps_e: f64,
    /// Reference-step bound per output (voltage, battery current).
    pub r_bar: [f64; 2],
}

impl PlannerConfig {
    pub fn from_parts(p: &HessParams, s: &PlannerSettings, t_s: f64) -> Self {
        let (r_bar_b, _) = battery_interface_bounds(p, t_s);
        let slew = s.slew_bound.unwrap_or(r_bar_b);
        PlannerConfig {
            horizon: s.horizon,
            t_s,
            q_weight: s.q_weight,
            e_b_goal: s.e_b_goal,
            v_nom: p.v_nom,
            lambda_b: p.lambda_b_energy,
            lambda_s: p.lambda_s,
            i_b_max: p.i_b_max,
            i_s_max: p.i_s_max,
            e_b_range: s.e_b_range,
            e_s_range: s.e_s_range,
            slew_bound: slew,
            tighten_eps_e: s.tighten_eps_e,
            r_bar: [0.0, slew],
        }
    }

    pub fn validate(&self) -> Result<(), MpcError> {
        let bad = |m: &str| Err(MpcError::InvalidConfig(m.to_string()));
        if self.horizon == 0 {
            return bad("horizon must be at least 1");
        }
        if !(self.t_s > 0.0) {
            return bad("T_s must be positive");
        }
        if !(self.q_weight >= 0.0) {
            return bad("q_weight must be nonnegative");
        }
        if !(self.slew_bound >= 0.0 && self.tighten_eps_e >= 0.0) {
            return bad("slew bound and tightening must be nonnegative");
        }
        if !(self.e_b_range[0] < self.e_b_range[1] && self.e_s_range[0] < self.e_s_range[1]) {
            return bad("energy ranges must be increasing intervals");
        }
        Ok(())
    }

    fn gain_b(&self) -> f64 {
        self.t_s * self.lambda_b * self.v_nom
    }

    fn gain_s(&self) -> f64 {
        self.t_s * self.lambda_s * self.v_nom
    }
}

/// `(E_B, E_S)` one period ahead under the abstract model.
pub fn abstract_step(y: [f64; 2], i_b: f64, d_hat: f64, cfg: &PlannerConfig) -> [f64; 2] {
    [y[0] + cfg.gain_b() * i_b, y[1] + cfg.gain_s() * (-i_b - d_hat)]
}

/// Condensed QP plus the constant cost term dropped from it.
pub struct CondensedQp {
    pub problem: QpProblem,
    pub constant: f64,
}

pub fn build_qp(y: [f64; 2], d_forecast: &[f64], r_prev: f64, cfg: &PlannerConfig) -> Result<CondensedQp, MpcError> {
    let n = cfg.horizon;
    if d_forecast.len() < n {
        return Err(MpcError::InvalidConfig(format!(
            "forecast has {} samples, horizon is {n}",
            d_forecast.len()
        )));
    }
    let a = cfg.gain_b();
    let bs = cfg.gain_s();
    let e0 = y[0] - cfg.e_b_goal;
    let q = cfg.q_weight;

    // E_B[k+j+1] − goal = e0 + a·(L x)_j with L lower-triangular ones
    let mut h = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            h[(i, j)] = 2.0 * q * a * a * (n - i.max(j)) as f64;
        }
    }
    let g: Vec<f64> = (0..n).map(|i| 2.0 * q * a * e0 * (n - i) as f64).collect();
    let constant = q * n as f64 * e0 * e0;

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut rhs: Vec<f64> = Vec::new();
    let mut push = |row: Vec<f64>, b: f64| {
        rows.push(row);
        rhs.push(b);
    };
    let unit = |j: usize, s: f64| {
        let mut r = vec![0.0; n];
        r[j] = s;
        r
    };
    for j in 0..n {
        push(unit(j, 1.0), cfg.i_b_max);
        push(unit(j, -1.0), cfg.i_b_max);
    }
    push(unit(0, 1.0), cfg.slew_bound + r_prev);
    push(unit(0, -1.0), cfg.slew_bound - r_prev);
    for j in 1..n {
        let mut r = unit(j, 1.0);
        r[j - 1] = -1.0;
        push(r.clone(), cfg.slew_bound);
        push(r.into_iter().map(|v| -v).collect(), cfg.slew_bound);
    }
    // supercap current implied by bus balance
    for j in 0..n {
        push(unit(j, -1.0), cfg.i_s_max + d_forecast[j]);
        push(unit(j, 1.0), cfg.i_s_max - d_forecast[j]);
    }
    let mut d_cum = 0.0;
    for j in 1..=n {
        let tight = j as f64 * cfg.tighten_eps_e;
        d_cum += d_forecast[j - 1];
        let prefix = |s: f64| (0..n).map(|i| if i < j { s } else { 0.0 }).collect::<Vec<f64>>();
        push(prefix(a), cfg.e_b_range[1] - tight - y[0]);
        push(prefix(-a), y[0] - cfg.e_b_range[0] - tight);
        // E_S[k+j] = y_S − b·Σx − b·Σd̂
        push(prefix(-bs), cfg.e_s_range[1] - tight - y[1] + bs * d_cum);
        push(prefix(bs), y[1] - bs * d_cum - cfg.e_s_range[0] - tight);
    }
    let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
    let amat = Matrix::from_rows(&refs).map_err(|e| MpcError::InvalidConfig(e.to_string()))?;
    let problem = QpProblem::new(h, g, amat, rhs).map_err(|e| MpcError::InvalidConfig(e.to_string()))?;
    Ok(CondensedQp { problem, constant })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PlanResult {
    /// `(V_nom, I_B_ref)`.
    pub r_k: [f64; 2],
    pub feasible: bool,
    pub v_n_star: Option<f64>,
    pub fallback_used: bool,
    /// Abstract one-step prediction under the applied reference.
    pub prediction: [f64; 2],
}

pub fn plan(y: [f64; 2], d_forecast: &[f64], r_prev: f64, cfg: &PlannerConfig, solver: &QpSolver) -> PlanResult {
    let d0 = d_forecast.first().copied().unwrap_or(0.0);
    let fallback = |feasible: bool| PlanResult {
        r_k: [cfg.v_nom, r_prev],
        feasible,
        v_n_star: None,
        fallback_used: true,
        prediction: abstract_step(y, r_prev, d0, cfg),
    };
    if cfg.q_weight == 0.0 {
        return PlanResult {
            r_k: [cfg.v_nom, r_prev],
            feasible: true,
            v_n_star: Some(0.0),
            fallback_used: false,
            prediction: abstract_step(y, r_prev, d0, cfg),
        };
    }
    let Ok(cq) = build_qp(y, d_forecast, r_prev, cfg) else {
        return fallback(false);
    };
    let sol = solver.solve(&cq.problem);
    if sol.status != QpStatus::Optimal {
        log::debug!("planner fallback: {:?}", sol.status);
        return fallback(false);
    }
    let i_b = sol.x[0];
    PlanResult {
        r_k: [cfg.v_nom, i_b],
        feasible: true,
        v_n_star: Some((sol.objective + cq.constant).max(0.0)),
        fallback_used: false,
        prediction: abstract_step(y, i_b, d0, cfg),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlannerIssData {
    pub lambda_min_p: f64,
    pub lambda_max_p: f64,
    pub l_v: f64,
    pub lambda_min_q: f64,
}

/// `sqrt((λ_max/λ_min)·(L_V/λ_min(Q))·ε_E)`.
pub fn planner_iss_bound(data: &PlannerIssData, eps_e: f64) -> f64 {
    ((data.lambda_max_p / data.lambda_min_p) * (data.l_v / data.lambda_min_q) * eps_e).sqrt()
}

/// Empirical Lipschitz constant of `V_N*` over seeded samples of the
/// energy box (zero forecast, zero previous reference). A lower estimate.
pub fn estimate_lipschitz(
    cfg: &PlannerConfig,
    sample_count: usize,
    sample_radius: f64,
    seed: u64,
    solver: &QpSolver,
) -> Result<f64, MpcError> {
    if sample_count < 2 {
        return Err(MpcError::InvalidConfig("need at least two samples".into()));
    }
    if cfg.q_weight == 0.0 {
        return Ok(0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let forecast = vec![0.0; cfg.horizon];
    let mut pts: Vec<([f64; 2], f64)> = Vec::new();
    for _ in 0..sample_count {
        let y = [
            rng.gen_range(cfg.e_b_range[0]..=cfg.e_b_range[1]),
            rng.gen_range(cfg.e_s_range[0]..=cfg.e_s_range[1]),
        ];
        let res = plan(y, &forecast, 0.0, cfg, solver);
        if let (false, Some(v)) = (res.fallback_used, res.v_n_star) {
            pts.push((y, v));
        }
    }
    if pts.is_empty() {
        return Err(MpcError::AllInfeasible);
    }
    let mut l = 0.0f64;
    for i in 0..pts.len() {
        for j in (i + 1)..pts.len() {
            let dist = ((pts[i].0[0] - pts[j].0[0]).powi(2) + (pts[i].0[1] - pts[j].0[1]).powi(2)).sqrt();
            if dist > 0.0 && dist <= sample_radius {
                l = l.max((pts[i].1 - pts[j].1).abs() / dist);
            }
        }
    }
    Ok(l)
}

/// Per-step dissipation check
/// `V*(y_{k+1}) − V*(y_k) ≤ −λ_min(Q)·|E_B,k − goal|² + L_V·ε_E`.
pub fn descent_check(traj: &[([f64; 2], f64)], data: &PlannerIssData, eps_e: f64, e_b_goal: f64) -> Vec<bool> {
    traj.windows(2)
        .map(|w| {
            let (y0, v0) = w[0];
            let (_, v1) = w[1];
            let bound = -data.lambda_min_q * (y0[0] - e_b_goal).powi(2) + data.l_v * eps_e;
            v1 - v0 <= bound + 1e-9 * (1.0 + v0.abs())
        })
        .collect()
}
