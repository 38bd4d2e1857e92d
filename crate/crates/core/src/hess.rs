//! Battery + supercapacitor DC bus: plant model, low-level controllers,
//! error coordinates, constraint rows and load profiles.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::erg::HalfspaceConstraint;
use crate::numkit::{decay_rate, Matrix, NumError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HessError {
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error("time {t} outside load profile span [{start}, {end}]")]
    OutOfSpan { t: f64, start: f64, end: f64 },
    #[error("load profile: {0}")]
    BadProfile(String),
}

/// Physical and controller parameters.
///
/// `lambda_b_energy` and `lambda_s` convert bus power into the energy
/// states; `lambda_b_gain` is the battery current-loop gain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HessParams {
    pub c_bus: f64,
    pub lambda_s: f64,
    pub lambda_b_energy: f64,
    pub lambda_b_gain: f64,
    pub k1: f64,
    pub k2: f64,
    pub v_nom: f64,
    pub i_s_max: f64,
    pub i_b_max: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub u_s_max: f64,
    pub u_b_max: f64,
    /// Bound on |d|.
    #[serde(default)]
    pub rho_d: f64,
    /// Current reserved for the aggregate disturbance in the supercap rows.
    #[serde(default)]
    pub d_bar_max: f64,
    /// Bound on |d̄̇| reserved in the input rows.
    #[serde(default)]
    pub d_bar_dot_max: f64,
    /// Governor speed bound coefficient, |v̇| ≤ kappa_bar·Γ(v).
    #[serde(default)]
    pub kappa_bar: f64,
}

impl HessParams {
    pub fn validate(&self) -> Result<(), HessError> {
        let positive = [
            ("c_bus", self.c_bus),
            ("lambda_s", self.lambda_s),
            ("lambda_b_energy", self.lambda_b_energy),
            ("lambda_b_gain", self.lambda_b_gain),
            ("k1", self.k1),
            ("k2", self.k2),
            ("v_nom", self.v_nom),
            ("i_s_max", self.i_s_max),
            ("i_b_max", self.i_b_max),
            ("u_s_max", self.u_s_max),
            ("u_b_max", self.u_b_max),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(HessError::InvalidParam(format!("{name} must be positive, got {v}")));
            }
        }
        let nonneg = [
            ("rho_d", self.rho_d),
            ("d_bar_max", self.d_bar_max),
            ("d_bar_dot_max", self.d_bar_dot_max),
            ("kappa_bar", self.kappa_bar),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(HessError::InvalidParam(format!("{name} must be nonnegative, got {v}")));
            }
        }
        if !(self.v_min < self.v_max) {
            return Err(HessError::InvalidParam("v_min must be below v_max".into()));
        }
        let (a, _, _) = error_matrices(self)?;
        let lambda_e = decay_rate(&a)?;
        if self.lambda_b_gain <= lambda_e {
            return Err(HessError::InvalidParam(format!(
                "battery loop gain {} must exceed the voltage-loop decay rate {lambda_e:.4}",
                self.lambda_b_gain
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HessState {
    pub v_gr: f64,
    pub i_s: f64,
    pub i_b: f64,
    pub e_s: f64,
    pub e_b: f64,
}

impl HessState {
    pub fn to_array(self) -> [f64; 5] {
        [self.v_gr, self.i_s, self.i_b, self.e_s, self.e_b]
    }

    pub fn from_slice(x: &[f64]) -> Self {
        HessState {
            v_gr: x[0],
            i_s: x[1],
            i_b: x[2],
            e_s: x[3],
            e_b: x[4],
        }
    }
}

pub fn plant_rhs(x: &HessState, u: (f64, f64), w: f64, d: f64, p: &HessParams) -> HessState {
    let (u_s, u_b) = u;
    HessState {
        v_gr: (x.i_s + x.i_b + d) / p.c_bus,
        i_s: u_s + w,
        i_b: u_b,
        e_s: p.lambda_s * x.v_gr * x.i_s,
        e_b: p.lambda_b_energy * x.v_gr * x.i_b,
    }
}

pub fn control_ub(i_b: f64, i_b_ref: f64, lambda_b_gain: f64) -> f64 {
    -lambda_b_gain * (i_b - i_b_ref)
}

pub fn control_us(v_gr: f64, i_s: f64, v: f64, d_bar: f64, d_bar_dot: f64, p: &HessParams) -> f64 {
    -p.c_bus * p.k1 * (v_gr - v) - p.k2 * (i_s + d_bar) - d_bar_dot
}

pub fn error_state(x: &HessState, v: f64, v_dot: f64, d_bar: f64, p: &HessParams) -> [f64; 2] {
    [x.v_gr - v, (x.i_s + d_bar) / p.c_bus - v_dot]
}

/// Closed-loop error matrices `(A, B, B_v)`.
pub fn error_matrices(p: &HessParams) -> Result<(Matrix, Matrix, Matrix), NumError> {
    let a = Matrix::from_rows(&[&[0.0, 1.0], &[-p.k1, -p.k2]])?;
    // companion form: Hurwitz iff both coefficients are positive
    if !(p.k1 > 0.0 && p.k2 > 0.0) {
        let max_re = crate::numkit::eigenvalues(&a)?
            .iter()
            .map(|z| z.re)
            .fold(f64::NEG_INFINITY, f64::max);
        return Err(NumError::NotHurwitz { max_re });
    }
    let b = Matrix::column(&[0.0, 1.0 / p.c_bus]);
    let bv = Matrix::column(&[0.0, 1.0]);
    Ok((a, b, bv))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErgMode {
    Full,
    InputOnly,
}

/// Half-space rows in error coordinates `(e1, e2)` with a scalar voltage
/// reference.
pub fn hess_constraints(p: &HessParams, mode: ErgMode) -> Vec<HalfspaceConstraint> {
    let c = p.c_bus;
    let k2t = p.k2 * c;
    let input_pair = |d0: f64, g: f64| {
        vec![
            HalfspaceConstraint::new(vec![c * p.k1], vec![k2t], d0, vec![0.0], g, "u_s_upper"),
            HalfspaceConstraint::new(vec![-c * p.k1], vec![-k2t], d0, vec![0.0], g, "u_s_lower"),
        ]
    };
    match mode {
        ErgMode::InputOnly => input_pair(p.u_s_max, 0.0),
        ErgMode::Full => {
            let is_eff = p.i_s_max - p.d_bar_max;
            let g_is = c * p.kappa_bar;
            let mut rows = vec![
                HalfspaceConstraint::new(vec![-1.0], vec![0.0], -p.v_min, vec![-1.0], 0.0, "v_min"),
                HalfspaceConstraint::new(vec![1.0], vec![0.0], p.v_max, vec![1.0], 0.0, "v_max"),
                HalfspaceConstraint::new(vec![0.0], vec![c], is_eff, vec![0.0], g_is, "i_s_upper"),
                HalfspaceConstraint::new(vec![0.0], vec![-c], is_eff, vec![0.0], g_is, "i_s_lower"),
            ];
            rows.extend(input_pair(p.u_s_max - p.d_bar_dot_max, k2t * p.kappa_bar));
            rows
        }
    }
}

/// `(r̄_B, ε_{L,I_B})` for a battery loop sampled every `t_s`.
pub fn battery_interface_bounds(p: &HessParams, t_s: f64) -> (f64, f64) {
    let ratio = p.u_b_max / p.lambda_b_gain;
    let decay = (-p.lambda_b_gain * t_s).exp();
    (ratio * (1.0 - decay), ratio * decay)
}

/// `(h_r, h_y) = ((V_gr, I_B), (E_B, E_S))`.
pub fn outputs(x: &HessState) -> ([f64; 2], [f64; 2]) {
    ([x.v_gr, x.i_b], [x.e_b, x.e_s])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SegmentShape {
    Constant { level: f64 },
    /// Smoothstep between two levels, zero slope at both ends.
    CubicRamp { from: f64, to: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadSegment {
    pub t_start: f64,
    /// `None` extends the segment indefinitely.
    #[serde(default)]
    pub t_end: Option<f64>,
    pub shape: SegmentShape,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadProfile {
    pub segments: Vec<LoadSegment>,
    #[serde(default)]
    pub osc_amplitude: f64,
    #[serde(default)]
    pub osc_freq_hz: f64,
}

impl LoadProfile {
    pub fn constant(level: f64) -> Self {
        LoadProfile {
            segments: vec![LoadSegment {
                t_start: 0.0,
                t_end: None,
                shape: SegmentShape::Constant { level },
            }],
            osc_amplitude: 0.0,
            osc_freq_hz: 0.0,
        }
    }

    pub fn span(&self) -> (f64, f64) {
        let start = self.segments.first().map_or(0.0, |s| s.t_start);
        let end = self
            .segments
            .last()
            .map_or(0.0, |s| s.t_end.unwrap_or(f64::INFINITY));
        (start, end)
    }

    pub fn validate(&self) -> Result<(), HessError> {
        if self.segments.is_empty() {
            return Err(HessError::BadProfile("no segments".into()));
        }
        if !self.osc_amplitude.is_finite() || !self.osc_freq_hz.is_finite() || self.osc_freq_hz < 0.0 {
            return Err(HessError::BadProfile("bad oscillation parameters".into()));
        }
        for (i, s) in self.segments.iter().enumerate() {
            let end = s.t_end.unwrap_or(f64::INFINITY);
            if !(end > s.t_start) {
                return Err(HessError::BadProfile(format!("segment {i} has nonpositive length")));
            }
            if s.t_end.is_none() && i + 1 != self.segments.len() {
                return Err(HessError::BadProfile(format!("open segment {i} is not last")));
            }
            if let Some(next) = self.segments.get(i + 1) {
                if (end - next.t_start).abs() > 1e-12 {
                    return Err(HessError::BadProfile(format!("gap between segments {i} and {}", i + 1)));
                }
                let (v0, d0) = shape_eval(&s.shape, 1.0);
                let (v1, d1) = shape_eval(&next.shape, 0.0);
                if (v0 - v1).abs() > 1e-9 || (d0 - d1).abs() > 1e-9 {
                    return Err(HessError::BadProfile(format!("join {i} is not C1")));
                }
            }
        }
        Ok(())
    }
}

// value and d/ds at normalized position s
fn shape_eval(shape: &SegmentShape, s: f64) -> (f64, f64) {
    match *shape {
        SegmentShape::Constant { level } => (level, 0.0),
        SegmentShape::CubicRamp { from, to } => {
            let h = 3.0 * s * s - 2.0 * s.powi(3);
            let dh = 6.0 * s - 6.0 * s * s;
            (from + (to - from) * h, (to - from) * dh)
        }
    }
}

/// `(d(t), ḋ(t))`.
pub fn load(t: f64, profile: &LoadProfile) -> Result<(f64, f64), HessError> {
    let (start, end) = profile.span();
    if !(t >= start && t <= end) {
        return Err(HessError::OutOfSpan { t, start, end });
    }
    let seg = profile
        .segments
        .iter()
        .find(|s| t < s.t_end.unwrap_or(f64::INFINITY))
        .or(profile.segments.last())
        .ok_or_else(|| HessError::BadProfile("no segments".into()))?;
    let (base, dbase) = match seg.t_end {
        Some(te) => {
            let len = te - seg.t_start;
            let (v, dv) = shape_eval(&seg.shape, ((t - seg.t_start) / len).clamp(0.0, 1.0));
            (v, dv / len)
        }
        None => match seg.shape {
            SegmentShape::Constant { level } => (level, 0.0),
            SegmentShape::CubicRamp { to, .. } => (to, 0.0),
        },
    };
    let om = 2.0 * std::f64::consts::PI * profile.osc_freq_hz;
    let a = profile.osc_amplitude;
    Ok((base + a * (om * t).sin(), dbase + a * om * (om * t).cos()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    pub(crate) fn params_b() -> HessParams {
        HessParams {
            c_bus: 1.0,
            lambda_s: 1.0 / 400.0,
            lambda_b_energy: 1.0 / 400.0,
            lambda_b_gain: 20.0,
            k1: 35.0,
            k2: 12.0,
            v_nom: 400.0,
            i_s_max: 12.0,
            i_b_max: 1.5,
            v_min: 380.0,
            v_max: 420.0,
            u_s_max: 50.0,
            u_b_max: 10.0,
            rho_d: 6.0,
            d_bar_max: 0.0,
            d_bar_dot_max: 0.0,
            kappa_bar: 0.0,
        }
    }

    fn ramp_profile() -> LoadProfile {
        LoadProfile {
            segments: vec![
                LoadSegment {
                    t_start: 0.0,
                    t_end: Some(0.5),
                    shape: SegmentShape::Constant { level: 0.0 },
                },
                LoadSegment {
                    t_start: 0.5,
                    t_end: Some(0.8),
                    shape: SegmentShape::CubicRamp { from: 0.0, to: -5.0 },
                },
                LoadSegment {
                    t_start: 0.8,
                    t_end: None,
                    shape: SegmentShape::Constant { level: -5.0 },
                },
            ],
            osc_amplitude: 0.5,
            osc_freq_hz: 2.0,
        }
    }

    #[test]
    fn plant_rhs_cases() {
        let p = params_b();
        let z = plant_rhs(&HessState::default(), (0.0, 0.0), 0.0, 0.0, &p);
        assert_eq!(z, HessState::default());
        let x = HessState {
            v_gr: 400.0,
            i_s: 2.0,
            i_b: 0.125,
            e_s: 0.0,
            e_b: 0.0,
        };
        let dx = plant_rhs(&x, (1.0, -2.0), 0.5, -2.125, &p);
        assert_eq!(dx.v_gr, 0.0);
        assert_abs_diff_eq!(dx.e_b, 0.125, epsilon = 1e-15);
        assert_abs_diff_eq!(dx.e_s, 2.0, epsilon = 1e-15);
        assert_eq!(dx.i_s, 1.5);
        assert_eq!(dx.i_b, -2.0);
    }

    #[test]
    fn battery_law() {
        assert_eq!(control_ub(1.0, 1.0, 20.0), 0.0);
        assert_abs_diff_eq!(control_ub(0.5 + 10.0 / 20.0, 0.5, 20.0).abs(), 10.0, epsilon = 1e-12);
        assert_eq!(control_ub(1.0, 0.0, 2.0), -2.0);
    }

    #[test]
    fn supercap_law() {
        let mut p = params_b();
        assert_eq!(control_us(400.0, 0.0, 400.0, 0.0, 0.0, &p), 0.0);
        assert_eq!(control_us(401.0, 0.0, 400.0, 0.0, 0.0, &p), -35.0);
        p.c_bus = 2.0;
        // -2*35*1 - 12*(2+3) - 3
        assert_eq!(control_us(401.0, 2.0, 400.0, 3.0, 3.0, &p), -70.0 - 60.0 - 3.0);
    }

    #[test]
    fn error_coordinates() {
        let p = params_b();
        let x = HessState {
            v_gr: 401.5,
            i_s: 1.0,
            i_b: 0.5,
            ..Default::default()
        };
        assert_eq!(error_state(&x, 401.5, 0.0, -1.0, &p), [0.0, 0.0]);
        assert_eq!(error_state(&x, 400.0, 0.25, 1.0, &p), [1.5, 1.75]);
    }

    #[test]
    fn error_matrix_identities() {
        let mut p = params_b();
        let (a, b, bv) = error_matrices(&p).unwrap();
        assert_eq!(a[(0, 0)] + a[(1, 1)], -12.0);
        assert_eq!(a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)], 35.0);
        assert_eq!(b[(1, 0)], 1.0);
        assert_eq!(bv[(1, 0)], 1.0);
        p.k1 = 25.0;
        p.k2 = 11.0;
        assert_abs_diff_eq!(decay_rate(&error_matrices(&p).unwrap().0).unwrap(), 3.21, epsilon = 0.01);
        p.k1 = 0.0;
        p.k2 = 0.0;
        assert!(matches!(error_matrices(&p), Err(NumError::NotHurwitz { .. })));
    }

    #[test]
    fn constraint_library_shapes() {
        let p = params_b();
        assert_eq!(hess_constraints(&p, ErgMode::Full).len(), 6);
        let rows = hess_constraints(&p, ErgMode::InputOnly);
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].normal(), vec![35.0, 12.0]);
        assert_eq!(rows[0].d0, 50.0);
        let full = hess_constraints(&p, ErgMode::Full);
        assert_eq!(full[1].margin(&[420.0], 0.0), 0.0);
        assert_eq!(full[0].margin(&[400.0], 0.0), 20.0);
    }

    #[test]
    fn battery_bounds() {
        let p = params_b();
        let (r, e) = battery_interface_bounds(&p, 0.1);
        assert_abs_diff_eq!(r + e, 0.5, epsilon = 1e-15);
        assert_eq!(battery_interface_bounds(&p, 0.0).0, 0.0);
        let (r, e) = battery_interface_bounds(&p, 1e3);
        assert_abs_diff_eq!(r, 0.5);
        assert_abs_diff_eq!(e, 0.0);
    }

    #[test]
    fn load_profile_values() {
        let prof = ramp_profile();
        prof.validate().unwrap();
        assert_eq!(load(0.25, &LoadProfile::constant(-3.0)).unwrap(), (-3.0, 0.0));
        let (d, _) = load(0.65, &prof).unwrap();
        let osc = 0.5 * (2.0 * std::f64::consts::PI * 2.0 * 0.65).sin();
        assert_abs_diff_eq!(d, -2.5 + osc, epsilon = 1e-12);
        for tj in [0.5, 0.8] {
            let (_, a) = load(tj - 1e-10, &prof).unwrap();
            let (_, b) = load(tj + 1e-10, &prof).unwrap();
            assert!((a - b).abs() < 1e-7);
        }
        assert!(matches!(load(-1.0, &prof), Err(HessError::OutOfSpan { .. })));
        let mut closed = LoadProfile::constant(1.0);
        closed.segments[0].t_end = Some(2.0);
        assert!(load(2.5, &closed).is_err());
    }

    #[test]
    fn load_derivative_matches_difference() {
        let prof = ramp_profile();
        for &t in &[0.1, 0.55, 0.7, 0.79, 1.3] {
            let hh = 1e-6;
            let fd = (load(t + hh, &prof).unwrap().0 - load(t - hh, &prof).unwrap().0) / (2.0 * hh);
            assert_abs_diff_eq!(load(t, &prof).unwrap().1, fd, epsilon = 1e-6);
        }
    }

    #[test]
    fn profile_rejects_jump() {
        let mut prof = ramp_profile();
        prof.segments[2].shape = SegmentShape::Constant { level: -4.0 };
        assert!(prof.validate().is_err());
    }

    #[test]
    fn output_projections() {
        let x = HessState {
            v_gr: 1.0,
            i_s: 2.0,
            i_b: 3.0,
            e_s: 4.0,
            e_b: 5.0,
        };
        let (hr, hy) = outputs(&x);
        assert_eq!(hr, [1.0, 3.0]);
        assert_eq!(hy[0], 5.0);
        assert_eq!(hy[1], 4.0);
    }

    #[test]
    fn params_validation() {
        let mut p = params_b();
        p.validate().unwrap();
        p.lambda_b_gain = 4.0;
        assert!(p.validate().is_err());
    }
}
