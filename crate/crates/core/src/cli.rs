//! Configuration, the certify / run / sweep pipelines and their file
//! outputs.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contracts::{
    certificate_report, mismatch_bound_hess, CertificateReport, ContractSpec, MismatchBound, MismatchInputs, MonitorReport,
    ReportParts,
};
use crate::erg::{ErgConfig, ErgError, Governor};
use crate::hess::{battery_interface_bounds, error_matrices, hess_constraints, ErgMode, HessError, HessParams, LoadProfile};
use crate::iss_cert::{
    coordinate_bound, iss_gain, noise_floor, settling_time, timing_check, ultimate_level_optimized, IssCertificate,
    IssError, SettlingInputs, SettlingTimes, TauMode,
};
use crate::mpc::{descent_check, estimate_lipschitz, planner_iss_bound, PlannerConfig, PlannerIssData, PlannerSettings};
use crate::numkit::{decay_rate, eigenvalues, solve_lyapunov, sym_eigen, Matrix, NumError, SpdMatrix};
use crate::qp::QpSolver;
use crate::sim::{run_layered, LayeredSetup, RunOutput, RunSummary, SimConfig, SimError, TrajRow};

pub const SCENARIO_A: &str = include_str!("../../../configs/scenario_a.json");
pub const SCENARIO_B: &str = include_str!("../../../configs/scenario_b.json");

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("simulation: {0}")]
    Sim(#[from] SimError),
    #[error("output: {0}")]
    Output(String),
}

impl From<NumError> for CliError {
    fn from(e: NumError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<HessError> for CliError {
    fn from(e: HessError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<ErgError> for CliError {
    fn from(e: ErgError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<IssError> for CliError {
    fn from(e: IssError) -> Self {
        CliError::Config(e.to_string())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErgSettings {
    pub mode: ErgMode,
    pub kappa_erg: f64,
    pub eta: f64,
    #[serde(default)]
    pub eta_rep: Vec<f64>,
    #[serde(default = "default_fp_iters")]
    pub fixed_point_iters: usize,
    /// Reference interval over which inf Γ is taken; defaults to V_nom.
    #[serde(default)]
    pub reference_range: Option<[f64; 2]>,
}

fn default_fp_iters() -> usize {
    5
}

impl ErgSettings {
    pub fn erg_config(&self) -> ErgConfig {
        ErgConfig {
            kappa_erg: self.kappa_erg,
            eta: self.eta,
            eta_rep: self.eta_rep.clone(),
            fixed_point_iters: self.fixed_point_iters,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlannerIssSettings {
    pub lambda_min_p: f64,
    pub lambda_max_p: f64,
    pub lambda_min_q: f64,
    /// Estimated by sampling when absent.
    #[serde(default)]
    pub l_v: Option<f64>,
    #[serde(default = "default_lip_samples")]
    pub lipschitz_samples: usize,
    #[serde(default = "default_lip_radius")]
    pub lipschitz_radius: f64,
}

fn default_lip_samples() -> usize {
    200
}

fn default_lip_radius() -> f64 {
    2.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertSettings {
    /// Diagonal of the Lyapunov dissipation matrix.
    pub r_lyap: [f64; 2],
    /// Disturbance bound for the invariant level; defaults to the simulated W_max.
    #[serde(default)]
    pub h_max: Option<f64>,
    /// Use this level instead of the optimized one.
    #[serde(default)]
    pub v_bar_h: Option<f64>,
    pub m: f64,
    pub r_bar_transit: f64,
    pub r_lo: f64,
    pub delta: f64,
    #[serde(default)]
    pub ff_residual: f64,
    #[serde(default)]
    pub tau_mode: TauMode,
    #[serde(default)]
    pub planner_iss: Option<PlannerIssSettings>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContractSettings {
    pub eps_h: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub name: String,
    pub plant: HessParams,
    pub load: LoadProfile,
    #[serde(default)]
    pub planner: Option<PlannerSettings>,
    pub erg: ErgSettings,
    pub certificate: CertSettings,
    pub contract: ContractSettings,
    pub sim: SimConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.plant.validate()?;
        self.load.validate()?;
        self.erg.erg_config().validate()?;
        self.sim.validate()?;
        if self.sim.mpc_enabled && self.planner.is_none() {
            return Err(CliError::Config("sim.mpc_enabled requires a planner section".into()));
        }
        if let Some(p) = &self.planner {
            PlannerConfig::from_parts(&self.plant, p, self.sim.t_s)
                .validate()
                .map_err(|e| CliError::Config(e.to_string()))?;
        }
        let c = &self.certificate;
        if !(c.r_lyap[0] > 0.0 && c.r_lyap[1] > 0.0) {
            return Err(CliError::Config("certificate.r_lyap must be positive".into()));
        }
        if !(c.m >= 1.0) {
            return Err(CliError::Config("certificate.m must be at least 1".into()));
        }
        if !(c.delta > 0.0 && c.r_lo > 0.0 && c.r_bar_transit >= 0.0 && c.ff_residual >= 0.0) {
            return Err(CliError::Config("certificate delta and r_lo must be positive".into()));
        }
        if let Some([lo, hi]) = self.erg.reference_range {
            if !(lo <= hi) {
                return Err(CliError::Config("erg.reference_range must be increasing".into()));
            }
        }
        if !(self.contract.eps_h >= 0.0) {
            return Err(CliError::Config("contract.eps_h must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Everything derived offline from a configuration.
#[derive(Clone, Debug)]
pub struct Certified {
    pub report: CertificateReport,
    pub p: SpdMatrix,
    pub governor: Governor,
    pub spec: ContractSpec,
    pub planner: Option<PlannerConfig>,
    pub planner_iss: Option<PlannerIssData>,
    pub iss: IssCertificate,
    pub settling: SettlingTimes,
    pub mismatch: MismatchBound,
}

fn range_points(range: [f64; 2]) -> Vec<f64> {
    if range[0] == range[1] {
        return vec![range[0]];
    }
    (0..=100).map(|i| range[0] + (range[1] - range[0]) * i as f64 / 100.0).collect()
}

pub fn certify(cfg: &RunConfig) -> Result<Certified, CliError> {
    let plant = &cfg.plant;
    let cs = &cfg.certificate;
    let (a, b, _) = error_matrices(plant)?;
    let r = SpdMatrix::new(Matrix::diag(&cs.r_lyap))?;
    let p = solve_lyapunov(&a, &r)?;
    let p_eig = sym_eigen(p.matrix())?;
    let cl_eig: Vec<[f64; 2]> = eigenvalues(&a)?.iter().map(|z| [z.re, z.im]).collect();
    let lambda_e = decay_rate(&a)?;
    let h_max = cs.h_max.unwrap_or(cfg.sim.disturbance.w_max());
    let opt = ultimate_level_optimized(&p, &r, &b, h_max)?;
    let v_bar_h = cs.v_bar_h.unwrap_or(opt.v_bar_h);
    let eps_l = vec![coordinate_bound(&p, v_bar_h, 0)?, coordinate_bound(&p, v_bar_h, 1)?];
    let norm_b = 1.0 / plant.c_bus;
    let gamma_iss = iss_gain(cs.m, norm_b, lambda_e);
    let eps = noise_floor(gamma_iss, h_max);
    let iss = IssCertificate {
        lambda_e,
        m: cs.m,
        gamma_iss,
        epsilon: eps,
        v_bar_h,
        theta_star: opt.theta_star,
        z_star: opt.z_star.to_vec(),
    };

    let erg_cfg = cfg.erg.erg_config();
    let governor = Governor::new(p.clone(), hess_constraints(plant, cfg.erg.mode), erg_cfg.clone())?;
    let range = cfg.erg.reference_range.unwrap_or([plant.v_nom, plant.v_nom]);
    let gammas: Vec<f64> = range_points(range).iter().map(|v| governor.gamma(&[*v])).collect();
    let inf_gamma = gammas.iter().copied().fold(f64::INFINITY, f64::min);
    let sup_gamma = gammas.iter().copied().fold(0.0, f64::max);

    let (kappa_lo, kappa_hi) = erg_cfg.speed_bounds();
    let settling = settling_time(&SettlingInputs {
        m: cs.m,
        lambda_e,
        r_bar: cs.r_bar_transit,
        eps,
        kappa_lo,
        r_lo: cs.r_lo,
        delta: cs.delta,
        h_max,
        ff_residual: cs.ff_residual,
        gamma_iss,
        mode: cs.tau_mode,
    })?;
    let t_s = cfg.sim.t_s;
    let battery = battery_interface_bounds(plant, t_s);
    let kappa_max = if sup_gamma.is_finite() { kappa_hi * sup_gamma } else { 0.0 };
    let mismatch = mismatch_bound_hess(&MismatchInputs {
        z_peak: settling.z_peak,
        eta: erg_cfg.eta,
        eps1: eps_l[0],
        eps2: eps_l[1],
        delta: cs.delta,
        tau1: settling.tau1,
        tau2: settling.tau2,
        kappa_max,
        v_nom: plant.v_nom,
        lambda_b_energy: plant.lambda_b_energy,
        lambda_b_gain: plant.lambda_b_gain,
        lambda_s_energy: plant.lambda_s,
        i_b_max: plant.i_b_max,
        i_s_max: plant.i_s_max,
        c_bus: plant.c_bus,
        u_b_max: plant.u_b_max,
    });

    let planner = cfg.planner.as_ref().map(|s| PlannerConfig::from_parts(plant, s, t_s));
    let mut planner_iss = None;
    let eps_t = match (&planner, &cs.planner_iss) {
        (Some(pc), Some(pi)) => {
            let l_v = match pi.l_v {
                Some(l) => l,
                None => estimate_lipschitz(pc, pi.lipschitz_samples, pi.lipschitz_radius, 0, &QpSolver::default())
                    .map_err(|e| CliError::Config(e.to_string()))?,
            };
            let data = PlannerIssData {
                lambda_min_p: pi.lambda_min_p,
                lambda_max_p: pi.lambda_max_p,
                l_v,
                lambda_min_q: pi.lambda_min_q,
            };
            planner_iss = Some(data);
            planner_iss_bound(&data, mismatch.eps_e)
        }
        _ => 0.0,
    };
    let slew = planner.as_ref().map_or(battery.0, |p| p.slew_bound);
    let spec = ContractSpec {
        eps_e: mismatch.eps_e,
        eps_t,
        eps_l: [eps_l[0], battery.1],
        eps_h: cfg.contract.eps_h,
        r_bar: [0.0, slew],
        w_max: cfg.sim.disturbance.w_max(),
        t_s,
        delta: cs.delta,
        x_safe: [
            [plant.v_min, plant.v_max],
            [-plant.i_s_max, plant.i_s_max],
            [-plant.i_b_max, plant.i_b_max],
        ],
        u_bounds: [plant.u_s_max, plant.u_b_max],
        y_goal: planner.as_ref().map_or(0.0, |p| p.e_b_goal),
    };
    let timing = timing_check(t_s, &settling);
    let report = certificate_report(ReportParts {
        spec: &spec,
        cert: &iss,
        settling: &settling,
        timing,
        mismatch: &mismatch,
        p: p.matrix().to_rows(),
        eigenvalues_p: p_eig.values.clone(),
        closed_loop_eigenvalues: cl_eig,
        eps_l,
        battery_bounds: battery,
        inf_gamma,
    });
    Ok(Certified {
        report,
        p,
        governor,
        spec,
        planner,
        planner_iss,
        iss,
        settling,
        mismatch,
    })
}

/// Simulates one seed against precomputed certificates.
pub fn simulate(cfg: &RunConfig, cert: &Certified, seed: u64) -> Result<RunOutput, CliError> {
    let mut sim = cfg.sim.clone();
    sim.seed = seed;
    let setup = LayeredSetup {
        plant: &cfg.plant,
        load: &cfg.load,
        planner: cert.planner.as_ref(),
        governor: &cert.governor,
        spec: &cert.spec,
        sim: &sim,
        v_bar_h: cert.iss.v_bar_h,
    };
    Ok(run_layered(&setup)?)
}

#[derive(Clone, Debug, Serialize)]
pub struct SummaryDoc {
    #[serde(flatten)]
    pub run: RunSummary,
    pub v_bar_h: f64,
    pub eps_e: f64,
    pub eps_t: f64,
    pub descent_failures: usize,
    pub descent_checked: usize,
}

pub fn summarize(out: &RunOutput, cert: &Certified) -> SummaryDoc {
    let (fails, checked) = match (&cert.planner, &cert.planner_iss) {
        (Some(pc), Some(data)) => {
            let pts: Vec<([f64; 2], f64)> = out
                .log
                .samples
                .iter()
                .filter_map(|s| s.v_n_star.map(|v| ([s.y_eb, s.y_es], v)))
                .collect();
            let v = descent_check(&pts, data, cert.spec.eps_e, pc.e_b_goal);
            (v.iter().filter(|ok| !**ok).count(), v.len())
        }
        _ => (0, 0),
    };
    SummaryDoc {
        run: out.summary.clone(),
        v_bar_h: cert.iss.v_bar_h,
        eps_e: cert.spec.eps_e,
        eps_t: cert.spec.eps_t,
        descent_failures: fails,
        descent_checked: checked,
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Output(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

pub fn write_trajectory_csv(path: &Path, rows: &[TrajRow]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Output(e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| CliError::Output(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trajectory_csv(path: &Path) -> Result<Vec<TrajRow>, CliError> {
    let mut rd = csv::Reader::from_path(path).map_err(|e| CliError::Output(e.to_string()))?;
    rd.deserialize()
        .collect::<Result<Vec<TrajRow>, _>>()
        .map_err(|e| CliError::Output(e.to_string()))
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_VERDICT: i32 = 2;

fn report_error(e: &CliError) -> i32 {
    log::error!("{e}");
    eprintln!("error: {e}");
    EXIT_CONFIG
}

pub fn cmd_certify(config: &Path, out_dir: &Path) -> i32 {
    let run = || -> Result<bool, CliError> {
        let cfg = RunConfig::load(config)?;
        let cert = certify(&cfg)?;
        fs::create_dir_all(out_dir)?;
        write_json(&out_dir.join("certificate.json"), &cert.report)?;
        Ok(cert.report.all_verdicts)
    };
    match run() {
        Ok(true) => EXIT_OK,
        Ok(false) => EXIT_VERDICT,
        Err(e) => report_error(&e),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scenario {
    A,
    B,
    Custom,
}

impl std::str::FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "a" | "A" => Ok(Scenario::A),
            "b" | "B" => Ok(Scenario::B),
            "custom" => Ok(Scenario::Custom),
            other => Err(format!("unknown scenario '{other}' (expected a, b or custom)")),
        }
    }
}

pub fn scenario_config(scenario: Scenario, config: Option<&Path>) -> Result<RunConfig, CliError> {
    match (scenario, config) {
        (_, Some(p)) => RunConfig::load(p),
        (Scenario::A, None) => RunConfig::from_json(SCENARIO_A),
        (Scenario::B, None) => RunConfig::from_json(SCENARIO_B),
        (Scenario::Custom, None) => Err(CliError::Config("scenario custom needs --config".into())),
    }
}

pub fn write_run_outputs(out_dir: &Path, out: &RunOutput, doc: &SummaryDoc) -> Result<(), CliError> {
    fs::create_dir_all(out_dir)?;
    write_trajectory_csv(&out_dir.join("trajectory.csv"), &out.log.rows)?;
    let mut w = csv::Writer::from_path(out_dir.join("samples.csv")).map_err(|e| CliError::Output(e.to_string()))?;
    for s in &out.log.samples {
        w.serialize(s).map_err(|e| CliError::Output(e.to_string()))?;
    }
    w.flush()?;
    write_json(&out_dir.join("monitor.json"), &out.monitor)?;
    write_json(&out_dir.join("summary.json"), doc)?;
    Ok(())
}

pub fn cmd_run(scenario: Scenario, config: Option<&Path>, seed: Option<u64>, out_dir: &Path) -> i32 {
    let run = || -> Result<usize, CliError> {
        let cfg = scenario_config(scenario, config)?;
        let cert = certify(&cfg)?;
        let out = simulate(&cfg, &cert, seed.unwrap_or(cfg.sim.seed))?;
        let doc = summarize(&out, &cert);
        write_run_outputs(out_dir, &out, &doc)?;
        Ok(out.summary.safety_violations)
    };
    match run() {
        Ok(0) => EXIT_OK,
        Ok(n) => {
            eprintln!("{n} safety violations");
            EXIT_VERDICT
        }
        Err(e) => report_error(&e),
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Aggregate {
    pub seeds: usize,
    pub total_safety_violations: usize,
    pub total_phi_invariance_breaches: usize,
    pub total_g_safe_violations: usize,
    pub runs_with_violations: usize,
    pub max_phi_admissible: f64,
    pub m_calibrated: Vec<f64>,
    pub m_min: f64,
    pub m_max: f64,
    pub m_mean: f64,
    pub omega_h_entry_times: Vec<Option<f64>>,
    pub omega_h_exits_after_entry: usize,
}

pub fn sweep(cfg: &RunConfig, seeds: &[u64]) -> Result<(Aggregate, Vec<RunSummary>), CliError> {
    let cert = certify(cfg)?;
    let runs: Vec<RunSummary> = seeds
        .par_iter()
        .map(|&s| simulate(cfg, &cert, s).map(|o| o.summary))
        .collect::<Result<_, _>>()?;
    let ms: Vec<f64> = runs.iter().map(|r| r.m_calibrated).collect();
    let n = runs.len().max(1) as f64;
    let agg = Aggregate {
        seeds: runs.len(),
        total_safety_violations: runs.iter().map(|r| r.safety_violations).sum(),
        total_phi_invariance_breaches: runs.iter().map(|r| r.phi_invariance_breaches).sum(),
        total_g_safe_violations: runs.iter().map(|r| r.g_safe_violations).sum(),
        runs_with_violations: runs.iter().filter(|r| r.safety_violations > 0).count(),
        max_phi_admissible: runs.iter().map(|r| r.max_phi_admissible).fold(f64::NEG_INFINITY, f64::max),
        m_min: ms.iter().copied().fold(f64::INFINITY, f64::min),
        m_max: ms.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        m_mean: ms.iter().sum::<f64>() / n,
        m_calibrated: ms,
        omega_h_entry_times: runs.iter().map(|r| r.omega_h_entry_time).collect(),
        omega_h_exits_after_entry: runs.iter().map(|r| r.omega_h_exits_after_entry).sum(),
    };
    Ok((agg, runs))
}

pub fn cmd_sweep(config: &Path, seeds: usize, out_dir: &Path) -> i32 {
    let run = || -> Result<usize, CliError> {
        if seeds == 0 {
            return Err(CliError::Config("--seeds must be at least 1".into()));
        }
        let cfg = RunConfig::load(config)?;
        let list: Vec<u64> = (0..seeds as u64).collect();
        let (agg, runs) = sweep(&cfg, &list)?;
        fs::create_dir_all(out_dir)?;
        write_json(&out_dir.join("aggregate.json"), &agg)?;
        write_json(&out_dir.join("runs.json"), &runs)?;
        Ok(agg.total_safety_violations)
    };
    match run() {
        Ok(0) => EXIT_OK,
        Ok(_) => EXIT_VERDICT,
        Err(e) => report_error(&e),
    }
}

/// Default output directory for a subcommand.
pub fn default_out() -> PathBuf {
    PathBuf::from(".")
}

pub fn monitor_violations(m: &MonitorReport) -> Vec<(String, usize)> {
    m.verdicts.keys().map(|k| (k.clone(), m.violations(k))).collect()
}
