//! Explicit reference governor with quadratic Lyapunov thresholds.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numkit::{invert_spd, norm2, NumError, SpdMatrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ErgError {
    #[error("constraint '{0}' has a zero normal in the P⁻¹ metric")]
    ZeroNormal(String),
    #[error("invalid governor configuration: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Num(#[from] NumError),
}

/// `c_aᵀ e_pos + c_bᵀ e_rate ≤ d0 − c_vᵀ v − g_gamma·Γ(v)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HalfspaceConstraint {
    pub c_a: Vec<f64>,
    pub c_b: Vec<f64>,
    pub d0: f64,
    pub c_v: Vec<f64>,
    #[serde(default)]
    pub g_gamma: f64,
    #[serde(default)]
    pub label: String,
}

impl HalfspaceConstraint {
    pub fn new(c_a: Vec<f64>, c_b: Vec<f64>, d0: f64, c_v: Vec<f64>, g_gamma: f64, label: &str) -> Self {
        HalfspaceConstraint {
            c_a,
            c_b,
            d0,
            c_v,
            g_gamma,
            label: label.to_string(),
        }
    }

    pub fn normal(&self) -> Vec<f64> {
        self.c_a.iter().chain(&self.c_b).copied().collect()
    }

    pub fn margin(&self, v: &[f64], gamma_prev: f64) -> f64 {
        let cv: f64 = self.c_v.iter().zip(v).map(|(a, b)| a * b).sum();
        self.d0 - cv - self.g_gamma * gamma_prev
    }

    fn validate(&self, n: usize, nv: usize) -> Result<(), ErgError> {
        if self.c_a.len() + self.c_b.len() != n {
            return Err(ErgError::Dimension(format!(
                "constraint '{}' normal has {} entries, error space has {n}",
                self.label,
                self.c_a.len() + self.c_b.len()
            )));
        }
        if self.c_v.len() != nv {
            return Err(ErgError::Dimension(format!(
                "constraint '{}' c_v has {} entries, reference has {nv}",
                self.label,
                self.c_v.len()
            )));
        }
        if !(self.g_gamma >= 0.0) {
            return Err(ErgError::InvalidConfig(format!("'{}': g_gamma must be >= 0", self.label)));
        }
        if self.normal().iter().all(|c| *c == 0.0) {
            return Err(ErgError::ZeroNormal(self.label.clone()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErgConfig {
    pub kappa_erg: f64,
    pub eta: f64,
    /// Per-row repulsion strengths; empty means no repulsion.
    #[serde(default)]
    pub eta_rep: Vec<f64>,
    #[serde(default = "default_fixed_point_iters")]
    pub fixed_point_iters: usize,
}

fn default_fixed_point_iters() -> usize {
    5
}

impl ErgConfig {
    pub fn delta_rep(&self) -> f64 {
        self.eta_rep.iter().sum()
    }

    /// `(κ̲, κ̄) = κ_erg·(1 ∓ δ_rep)`.
    pub fn speed_bounds(&self) -> (f64, f64) {
        let d = self.delta_rep();
        (self.kappa_erg * (1.0 - d), self.kappa_erg * (1.0 + d))
    }

    pub fn validate(&self) -> Result<(), ErgError> {
        if !(self.kappa_erg > 0.0) {
            return Err(ErgError::InvalidConfig("kappa_erg must be positive".into()));
        }
        if !(self.eta > 0.0) {
            return Err(ErgError::InvalidConfig("eta must be positive".into()));
        }
        if self.eta_rep.iter().any(|e| !(*e >= 0.0)) {
            return Err(ErgError::InvalidConfig("eta_rep entries must be nonnegative".into()));
        }
        if !(self.delta_rep() < 1.0) {
            return Err(ErgError::InvalidConfig("sum of eta_rep must be below 1".into()));
        }
        Ok(())
    }
}

/// Constraint set bound to a Lyapunov matrix, with the `cᵀP⁻¹c` metric
/// cached per row.
#[derive(Clone, Debug)]
pub struct Governor {
    p: SpdMatrix,
    constraints: Vec<HalfspaceConstraint>,
    metric: Vec<f64>,
    cfg: ErgConfig,
}

impl Governor {
    pub fn new(p: SpdMatrix, constraints: Vec<HalfspaceConstraint>, cfg: ErgConfig) -> Result<Self, ErgError> {
        cfg.validate()?;
        let n = p.dim();
        let nv = constraints.first().map_or(0, |c| c.c_v.len());
        if !cfg.eta_rep.is_empty() && cfg.eta_rep.len() != constraints.len() {
            return Err(ErgError::Dimension(format!(
                "{} repulsion strengths for {} constraints",
                cfg.eta_rep.len(),
                constraints.len()
            )));
        }
        let pinv = invert_spd(&p)?;
        let mut metric = Vec::with_capacity(constraints.len());
        for c in &constraints {
            c.validate(n, nv)?;
            let m = pinv.quad_form(&c.normal());
            if !(m > 0.0) {
                return Err(ErgError::ZeroNormal(c.label.clone()));
            }
            metric.push(m);
        }
        Ok(Governor {
            p,
            constraints,
            metric,
            cfg,
        })
    }

    pub fn p(&self) -> &SpdMatrix {
        &self.p
    }

    pub fn constraints(&self) -> &[HalfspaceConstraint] {
        &self.constraints
    }

    pub fn config(&self) -> &ErgConfig {
        &self.cfg
    }

    fn gamma_row(&self, i: usize, v: &[f64], gamma_prev: f64) -> f64 {
        let m = self.constraints[i].margin(v, gamma_prev);
        if m <= 0.0 {
            0.0
        } else {
            m * m / self.metric[i]
        }
    }

    /// `Γ(v)`; +∞ without constraints.
    pub fn gamma(&self, v: &[f64]) -> f64 {
        let rows = 0..self.constraints.len();
        let plain = rows
            .clone()
            .filter(|&i| self.constraints[i].g_gamma == 0.0)
            .map(|i| self.gamma_row(i, v, 0.0))
            .fold(f64::INFINITY, f64::min);
        if self.constraints.iter().all(|c| c.g_gamma == 0.0) {
            return plain;
        }
        let mut g = if plain.is_finite() {
            plain
        } else {
            rows.clone().map(|i| self.gamma_row(i, v, 0.0)).fold(f64::INFINITY, f64::min)
        };
        for _ in 0..self.cfg.fixed_point_iters {
            g = rows.clone().map(|i| self.gamma_row(i, v, g)).fold(f64::INFINITY, f64::min);
        }
        g
    }

    pub fn lyapunov(&self, e: &[f64]) -> f64 {
        self.p.quad_form(e)
    }

    pub fn barrier(&self, e: &[f64], v: &[f64]) -> f64 {
        self.lyapunov(e) - self.gamma(v)
    }

    pub fn navigation_field(&self, r: &[f64], v: &[f64]) -> Vec<f64> {
        let mut rho = attraction(r, v, self.cfg.eta);
        for (i, c) in self.constraints.iter().enumerate() {
            let strength = self.cfg.eta_rep.get(i).copied().unwrap_or(0.0);
            if strength == 0.0 {
                continue;
            }
            let margin = c.margin(v, 0.0);
            if margin <= 0.0 {
                continue;
            }
            // ∇_v Γ_i for the quadratic threshold; it points toward growing margin
            let grad: Vec<f64> = c.c_v.iter().map(|cv| -2.0 * margin * cv / self.metric[i]).collect();
            let gn = norm2(&grad);
            if gn <= 1e-12 {
                continue;
            }
            for (rj, gj) in rho.iter_mut().zip(&grad) {
                *rj += strength * gj / gn;
            }
        }
        rho
    }

    /// Governor right-hand side `v̇`.
    pub fn rhs(&self, e: &[f64], v: &[f64], r: &[f64]) -> Vec<f64> {
        let spare = (self.gamma(v) - self.lyapunov(e)).max(0.0);
        if !(spare > 0.0) {
            return vec![0.0; v.len()];
        }
        let rho = self.navigation_field(r, v);
        // without constraints the margin is infinite; fall back to the bare gain
        let scale = if spare.is_finite() { self.cfg.kappa_erg * spare } else { self.cfg.kappa_erg };
        rho.into_iter().map(|x| scale * x).collect()
    }
}

/// Attraction term: unit vector toward `r`, shrinking linearly within `eta`.
pub fn attraction(r: &[f64], v: &[f64], eta: f64) -> Vec<f64> {
    let diff: Vec<f64> = r.iter().zip(v).map(|(a, b)| a - b).collect();
    let n = norm2(&diff).max(eta);
    diff.into_iter().map(|x| x / n).collect()
}

/// Single-row threshold with an explicit Γ iterate for self-referential rows.
pub fn gamma_i(c: &HalfspaceConstraint, v: &[f64], p: &SpdMatrix, gamma_prev: f64) -> Result<f64, ErgError> {
    let pinv = invert_spd(p)?;
    let metric = pinv.quad_form(&c.normal());
    if !(metric > 0.0) {
        return Err(ErgError::ZeroNormal(c.label.clone()));
    }
    let m = c.margin(v, gamma_prev);
    Ok(if m <= 0.0 { 0.0 } else { m * m / metric })
}

pub fn gamma(v: &[f64], constraints: &[HalfspaceConstraint], p: &SpdMatrix, fixed_point_iters: usize) -> Result<f64, ErgError> {
    let cfg = ErgConfig {
        kappa_erg: 1.0,
        eta: 1.0,
        eta_rep: Vec::new(),
        fixed_point_iters,
    };
    Ok(Governor::new(p.clone(), constraints.to_vec(), cfg)?.gamma(v))
}

pub fn navigation_field(
    r: &[f64],
    v: &[f64],
    constraints: &[HalfspaceConstraint],
    p: &SpdMatrix,
    cfg: &ErgConfig,
) -> Result<Vec<f64>, ErgError> {
    Ok(Governor::new(p.clone(), constraints.to_vec(), cfg.clone())?.navigation_field(r, v))
}

pub fn erg_rhs(
    e: &[f64],
    v: &[f64],
    r: &[f64],
    constraints: &[HalfspaceConstraint],
    p: &SpdMatrix,
    cfg: &ErgConfig,
) -> Result<Vec<f64>, ErgError> {
    Ok(Governor::new(p.clone(), constraints.to_vec(), cfg.clone())?.rhs(e, v, r))
}

pub fn barrier(e: &[f64], v: &[f64], constraints: &[HalfspaceConstraint], p: &SpdMatrix) -> Result<f64, ErgError> {
    Ok(p.quad_form(e) - gamma(v, constraints, p, default_fixed_point_iters())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::{solve_lyapunov, Matrix};
    use approx::assert_abs_diff_eq;

    fn eye() -> SpdMatrix {
        SpdMatrix::new(Matrix::identity(2)).unwrap()
    }

    fn row(c: [f64; 2], d0: f64, cv: f64, g: f64) -> HalfspaceConstraint {
        HalfspaceConstraint::new(vec![c[0]], vec![c[1]], d0, vec![cv], g, "t")
    }

    fn cfg(eta_rep: Vec<f64>) -> ErgConfig {
        ErgConfig {
            kappa_erg: 3.0,
            eta: 0.5,
            eta_rep,
            fixed_point_iters: 5,
        }
    }

    #[test]
    fn gamma_identity_metric() {
        assert_eq!(gamma_i(&row([1.0, 0.0], 2.0, 0.0, 0.0), &[0.0], &eye(), 0.0).unwrap(), 4.0);
        assert_eq!(gamma_i(&row([1.0, 0.0], 2.0, 1.0, 0.0), &[3.0], &eye(), 0.0).unwrap(), 0.0);
    }

    #[test]
    fn gamma_input_row_b() {
        let a = Matrix::from_rows(&[&[0.0, 1.0], &[-35.0, -12.0]]).unwrap();
        let p = solve_lyapunov(&a, &SpdMatrix::new(Matrix::diag(&[100.0, 10.0])).unwrap()).unwrap();
        let g = gamma_i(&row([35.0, 12.0], 50.0, 0.0, 0.0), &[400.0], &p, 0.0).unwrap();
        assert_abs_diff_eq!(g, 9.3, epsilon = 0.1);
    }

    #[test]
    fn gamma_is_min() {
        let rows = vec![row([1.0, 0.0], 2.0, 0.0, 0.0), row([0.0, 1.0], 1.0, 0.0, 0.0)];
        assert_eq!(gamma(&[0.0], &rows[..1], &eye(), 5).unwrap(), 4.0);
        assert_eq!(gamma(&[0.0], &rows, &eye(), 5).unwrap(), 1.0);
        assert_eq!(gamma(&[0.0], &[], &eye(), 5).unwrap(), f64::INFINITY);
    }

    #[test]
    fn self_referential_fixed_point() {
        let rows = vec![row([1.0, 0.0], 2.0, 0.0, 0.0), row([0.0, 1.0], 1.5, 0.0, 0.05)];
        let got = gamma(&[0.0], &rows, &eye(), 40).unwrap();
        let long = gamma(&[0.0], &rows, &eye(), 1000).unwrap();
        assert_abs_diff_eq!(got, long, epsilon = 1e-8);
        // fixed point of G = (1.5 - 0.05 G)^2 by bisection
        let f = |g: f64| g - (1.5f64 - 0.05 * g).max(0.0).powi(2).min(4.0);
        let (mut lo, mut hi) = (0.0, 4.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                hi = mid
            } else {
                lo = mid
            }
        }
        assert_abs_diff_eq!(long, lo, epsilon = 1e-8);
    }

    #[test]
    fn attraction_field() {
        assert_eq!(attraction(&[1.0, 2.0], &[1.0, 2.0], 0.5), vec![0.0, 0.0]);
        let a = attraction(&[1.0, 0.0], &[0.0, 0.0], 0.5);
        assert_abs_diff_eq!(norm2(&a), 1.0);
        let inside = attraction(&[0.25, 0.0], &[0.0, 0.0], 0.5);
        assert_abs_diff_eq!(inside[0], 0.5);
    }

    #[test]
    fn repulsion_points_away_from_bound() {
        let rows = vec![HalfspaceConstraint::new(vec![1.0], vec![0.0], 5.0, vec![1.0, 0.0], 0.0, "x")];
        let rho = navigation_field(&[0.0, 0.0], &[0.0, 0.0], &rows, &eye(), &cfg(vec![0.1])).unwrap();
        assert_abs_diff_eq!(rho[0], -0.1, epsilon = 1e-15);
        assert_eq!(rho[1], 0.0);
    }

    #[test]
    fn rhs_clamp_and_magnitude() {
        let rows = vec![row([1.0, 0.0], 2.0, 0.0, 0.0)];
        // V(e) = Γ
        let v = erg_rhs(&[2.0, 0.0], &[0.0], &[5.0], &rows, &eye(), &cfg(vec![])).unwrap();
        assert_eq!(v, vec![0.0]);
        let v = erg_rhs(&[3.0, 0.0], &[0.0], &[5.0], &rows, &eye(), &cfg(vec![])).unwrap();
        assert_eq!(v, vec![0.0]);
        // Γ = 4, V = 2 → Δ = 2, unit field, κ = 3
        let v = erg_rhs(&[1.0, 1.0], &[0.0], &[5.0], &rows, &eye(), &cfg(vec![])).unwrap();
        assert_abs_diff_eq!(v[0], 6.0, epsilon = 1e-12);
    }

    #[test]
    fn barrier_sign() {
        let rows = vec![row([1.0, 0.0], 2.0, 0.0, 0.0)];
        assert!(barrier(&[0.0, 0.0], &[0.0], &rows, &eye()).unwrap() < 0.0);
        assert_eq!(barrier(&[2.0, 0.0], &[0.0], &rows, &eye()).unwrap(), 0.0);
    }

    #[test]
    fn config_checks() {
        assert!(cfg(vec![0.5, 0.6]).validate().is_err());
        let mut c = cfg(vec![]);
        c.eta = 0.0;
        assert!(c.validate().is_err());
    }
}
