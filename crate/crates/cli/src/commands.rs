//! The five subcommands. Each returns an [`Outcome`]; files named by the
//! caller are written atomically, everything else goes to `stdout`/`stderr`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::Matrix4;
use platoon_core::eigen::{eigenvalues_3x3, spectrum_metrics};
use platoon_core::lmi::{verify_certificate, StabilityCertificate, VerificationReport, DEFAULT_INTERIOR_SAMPLES, DEFAULT_MARGIN};
use platoon_core::locus::{c1_bounds, c2_bounds, enumerate_locus, Branch, LocusBranch};
use platoon_core::model::{build_closed_loop, build_error_matrix, Gains, PerformanceSpec, PlatoonParams};
use platoon_core::sim::{metrics, simulate, AttackKind, SimError, SimMetrics, SimTrace};
use platoon_core::tuner::{estimate_mansd_strong, tune, MansdEstimate, MansdStatus, StageTiming, TuningError, TuningReport};
use serde::{Deserialize, Serialize};

use crate::output::{csv_num, emit, sibling, write_atomic};
use crate::scenario::Scenario;
use crate::{exit, CliError};

pub const LOCUS_HEADER: &str = "branch,kp,kd,dominant_real_part,min_damping";
pub const TUNE_LOCUS_HEADER: &str = "branch,kp,kd,Delta,delta_star";
pub const EVENTS_HEADER: &str = "t,link,delivered";

/// Result of one command run.
#[derive(Debug, Default)]
pub struct Outcome {
    pub code: u8,
    pub stdout: String,
    pub stderr: String,
}

impl Outcome {
    fn ok(stdout: String) -> Self {
        Self { code: exit::OK, stdout, stderr: String::new() }
    }
}

fn gains_from(kp: Option<f64>, kd: Option<f64>) -> Result<Gains, CliError> {
    match (kp, kd) {
        (Some(kp), Some(kd)) => Gains::new(kp, kd).map_err(|e| CliError::Input(e.to_string())),
        _ => Err(CliError::Input("both --kp and --kd are required".into())),
    }
}

fn check_out_dir(path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(d) if !d.as_os_str().is_empty() && !d.is_dir() => {
            Err(CliError::Input(format!("output directory {} does not exist", d.display())))
        }
        _ => Ok(()),
    }
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report types serialize");
    s.push('\n');
    s
}

fn branch_line(b: &LocusBranch) -> String {
    let lo = if b.lower_inclusive { '[' } else { '(' };
    format!(
        "{}: kp in {lo}{}, {}] {}",
        b.branch,
        b.kp_lower,
        b.kp_upper,
        if b.empty { "is empty (lower bound not below upper bound)" } else { "is nonempty" }
    )
}

/// Why each branch contributes no gains.
pub fn locus_diagnostics(spec: &PerformanceSpec, tau_d: f64) -> String {
    let mut s = format!(
        "gain locus is empty for lambda_M = {}, zeta_m = {}, tau_d = {}\n",
        spec.lambda_m, spec.zeta_m, tau_d
    );
    for r in [c1_bounds(spec, tau_d), c2_bounds(spec, tau_d)] {
        match r {
            Ok(b) => s.push_str(&branch_line(&b)),
            Err(e) => s.push_str(&e.to_string()),
        }
        s.push('\n');
    }
    s
}

// ---------------------------------------------------------------- gain-locus

pub fn gain_locus(sc: &Scenario, out: Option<&Path>) -> Result<Outcome, CliError> {
    if let Some(p) = out {
        check_out_dir(p)?;
    }
    let points = enumerate_locus(&sc.spec, sc.params.tau_d, sc.tuning.n_k1, sc.tuning.n_k2);
    let points = match points {
        Ok(p) if !p.is_empty() => p,
        Ok(_) | Err(_) => {
            return Ok(Outcome {
                code: exit::INFEASIBLE,
                stdout: String::new(),
                stderr: locus_diagnostics(&sc.spec, sc.params.tau_d),
            })
        }
    };
    let mut csv = String::from(LOCUS_HEADER);
    csv.push('\n');
    for p in &points {
        let a = build_error_matrix(p.gains, sc.params.tau_d).map_err(|e| CliError::Numerical(e.to_string()))?;
        let (dominant, min_damping) = spectrum_metrics(&eigenvalues_3x3(&a));
        writeln!(
            csv,
            "{},{},{},{},{}",
            p.branch,
            csv_num(p.gains.kp),
            csv_num(p.gains.kd),
            csv_num(dominant),
            csv_num(min_damping)
        )
        .unwrap();
    }
    emit(out, &csv)?;
    Ok(Outcome::default())
}

// ---------------------------------------------------------------- JSON schema

/// Serialized certificate. `P1` is row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificateJson {
    #[serde(rename = "P1")]
    pub p1: Vec<f64>,
    pub p2: f64,
    pub delta: f64,
    pub theta: f64,
    #[serde(rename = "Delta")]
    pub mansd: u32,
}

impl From<&StabilityCertificate> for CertificateJson {
    fn from(c: &StabilityCertificate) -> Self {
        let p1 = (0..4).flat_map(|i| (0..4).map(move |j| (i, j))).map(|(i, j)| c.p1[(i, j)]).collect();
        Self { p1, p2: c.p2, delta: c.delta, theta: c.theta, mansd: c.mansd }
    }
}

impl CertificateJson {
    pub fn to_certificate(&self) -> Result<StabilityCertificate, CliError> {
        if self.p1.len() != 16 {
            return Err(CliError::Input(format!("certificate.P1: expected 16 entries, got {}", self.p1.len())));
        }
        Ok(StabilityCertificate {
            p1: Matrix4::from_row_slice(&self.p1),
            p2: self.p2,
            delta: self.delta,
            theta: self.theta,
            mansd: self.mansd,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationJson {
    pub passed: bool,
    #[serde(rename = "lambda_max_M0")]
    pub lambda_max_m0: f64,
    #[serde(rename = "lambda_max_Mend")]
    pub lambda_max_mend: f64,
    #[serde(rename = "lambda_min_P1")]
    pub lambda_min_p1: f64,
    pub p2: f64,
    /// `null` when no interior samples were taken.
    pub lambda_max_interior: Option<f64>,
    pub sigma_worst_interior: Option<f64>,
    pub reasons: Vec<String>,
}

impl From<&VerificationReport> for VerificationJson {
    fn from(r: &VerificationReport) -> Self {
        Self {
            passed: r.passed,
            lambda_max_m0: r.lambda_max_m0,
            lambda_max_mend: r.lambda_max_mend,
            lambda_min_p1: r.lambda_min_p1,
            p2: r.p2,
            lambda_max_interior: r.lambda_max_interior.is_finite().then_some(r.lambda_max_interior),
            sigma_worst_interior: r.sigma_worst_interior,
            reasons: r.reasons().into_iter().map(String::from).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MansdJson {
    pub status: MansdStatus,
    pub kp: f64,
    pub kd: f64,
    /// Largest certified Δ, `-1` when none.
    #[serde(rename = "Delta")]
    pub mansd: i64,
    pub delta_star: Option<f64>,
    pub theta: f64,
    pub margin: Option<f64>,
    pub certificate: Option<CertificateJson>,
    pub verification: Option<VerificationJson>,
    pub solver_calls: usize,
    pub capped: bool,
    pub anomalies: Vec<String>,
}

fn verify_for(cert: &StabilityCertificate, gains: Gains, params: &PlatoonParams) -> Result<VerificationReport, CliError> {
    let clm = build_closed_loop(gains, params).map_err(|e| CliError::Input(e.to_string()))?;
    Ok(verify_certificate(cert, &clm, params.h, params.ts, DEFAULT_MARGIN, DEFAULT_INTERIOR_SAMPLES))
}

fn mansd_json(gains: Gains, est: &MansdEstimate, theta: f64, params: &PlatoonParams) -> Result<MansdJson, CliError> {
    let verification = match &est.certificate {
        Some(c) => Some(VerificationJson::from(&verify_for(c, gains, params)?)),
        None => None,
    };
    Ok(MansdJson {
        status: est.status,
        kp: gains.kp,
        kd: gains.kd,
        mansd: est.mansd,
        delta_star: est.delta_star,
        theta,
        margin: est.margin.is_finite().then_some(est.margin),
        certificate: est.certificate.as_ref().map(CertificateJson::from),
        verification,
        solver_calls: est.solver_calls,
        capped: est.capped,
        anomalies: est.anomalies.clone(),
    })
}

fn tuning_error(e: TuningError, sc: &Scenario) -> Result<Outcome, CliError> {
    match e {
        TuningError::EmptyLocus(msg) => Ok(Outcome {
            code: exit::INFEASIBLE,
            stdout: String::new(),
            stderr: format!("{msg}\n{}", locus_diagnostics(&sc.spec, sc.params.tau_d)),
        }),
        TuningError::AllInconclusive => Err(CliError::Numerical(e.to_string())),
        TuningError::Model(_) | TuningError::Locus(_) | TuningError::Config(_) => Err(CliError::Input(e.to_string())),
        TuningError::ThreadPool(_) => Err(CliError::Numerical(e.to_string())),
    }
}

fn status_code(status: MansdStatus) -> u8 {
    match status {
        MansdStatus::Certified => exit::OK,
        MansdStatus::NotCertifiable => exit::INFEASIBLE,
        MansdStatus::Inconclusive => exit::NUMERICAL,
    }
}

// ---------------------------------------------------------------- mansd

pub fn mansd(sc: &Scenario, kp: Option<f64>, kd: Option<f64>, out: Option<&Path>) -> Result<Outcome, CliError> {
    let gains = gains_from(kp, kd)?;
    build_closed_loop(gains, &sc.params).map_err(|e| CliError::Input(e.to_string()))?;
    if let Some(p) = out {
        check_out_dir(p)?;
    }
    let est = match estimate_mansd_strong(gains, &sc.params, &sc.tuning) {
        Ok(e) => e,
        Err(e) => return tuning_error(e, sc),
    };
    let report = mansd_json(gains, &est, sc.tuning.theta(), &sc.params)?;
    let text = to_json(&report);
    emit(out, &text)?;
    let mut outcome = Outcome { code: status_code(est.status), ..Outcome::default() };
    if est.status != MansdStatus::Certified {
        outcome.stderr = format!("status: {}\n", status_name(est.status));
    }
    Ok(outcome)
}

fn status_name(s: MansdStatus) -> &'static str {
    match s {
        MansdStatus::Certified => "certified",
        MansdStatus::NotCertifiable => "not_certifiable",
        MansdStatus::Inconclusive => "inconclusive",
    }
}

// ---------------------------------------------------------------- tune

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateJson {
    pub branch: Branch,
    pub kp: f64,
    pub kd: f64,
    #[serde(rename = "Delta")]
    pub mansd: i64,
    pub delta_star: Option<f64>,
    pub status: MansdStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneJson {
    pub kp: f64,
    pub kd: f64,
    #[serde(rename = "Delta")]
    pub mansd: i64,
    pub branch: Branch,
    pub delta_star: Option<f64>,
    pub theta: f64,
    pub certificate: Option<CertificateJson>,
    pub verification: Option<VerificationJson>,
    pub locus_table: Vec<CandidateJson>,
    pub timing: StageTiming,
    pub solver_calls: usize,
    pub solver_call_budget: usize,
    pub anomalies: Vec<String>,
}

pub fn tune_json(sc: &Scenario, r: &TuningReport) -> Result<TuneJson, CliError> {
    let verification = match &r.certificate {
        Some(c) => Some(VerificationJson::from(&verify_for(c, r.best_gains, &sc.params)?)),
        None => None,
    };
    Ok(TuneJson {
        kp: r.best_gains.kp,
        kd: r.best_gains.kd,
        mansd: r.best_mansd,
        branch: r.branch,
        delta_star: r.delta_star,
        theta: sc.tuning.theta(),
        certificate: r.certificate.as_ref().map(CertificateJson::from),
        verification,
        locus_table: r
            .locus_table
            .iter()
            .map(|c| CandidateJson {
                branch: c.point.branch,
                kp: c.point.gains.kp,
                kd: c.point.gains.kd,
                mansd: c.estimate.mansd,
                delta_star: c.estimate.delta_star,
                status: c.estimate.status,
            })
            .collect(),
        timing: r.timing,
        solver_calls: r.solver_calls,
        solver_call_budget: TuningReport::solver_call_budget(&sc.tuning),
        anomalies: r.anomalies.clone(),
    })
}

pub fn tune_locus_csv(r: &TuneJson) -> String {
    let mut csv = String::from(TUNE_LOCUS_HEADER);
    csv.push('\n');
    for c in &r.locus_table {
        let ds = c.delta_star.map(csv_num).unwrap_or_default();
        writeln!(csv, "{},{},{},{},{}", c.branch, csv_num(c.kp), csv_num(c.kd), c.mansd, ds).unwrap();
    }
    csv
}

pub fn tune_cmd(sc: &Scenario, jobs: Option<usize>, out: Option<&Path>, locus_out: Option<&Path>) -> Result<Outcome, CliError> {
    if jobs == Some(0) {
        return Err(CliError::Input("--jobs must be at least 1".into()));
    }
    for p in [out, locus_out].into_iter().flatten() {
        check_out_dir(p)?;
    }
    let mut cfg = sc.tuning.clone();
    cfg.jobs = jobs;
    let report = match tune(&sc.params, &sc.spec, &cfg) {
        Ok(r) => r,
        Err(e) => return tuning_error(e, sc),
    };
    let json = tune_json(sc, &report)?;
    if let Some(p) = locus_out {
        write_atomic(p, tune_locus_csv(&json).as_bytes())?;
    }
    emit(out, &to_json(&json))?;
    let code = if report.best_mansd >= 0 { exit::OK } else { exit::INFEASIBLE };
    let stderr = if code == exit::OK { String::new() } else { "no candidate is certifiable on this grid\n".into() };
    Ok(Outcome { code, stdout: String::new(), stderr })
}

// ---------------------------------------------------------------- simulate

pub fn trace_header(vehicles: usize) -> String {
    let mut h = String::from("t");
    for i in 0..vehicles {
        for col in ["q", "v", "a", "u", "e", "omega"] {
            write!(h, ",{col}_{i}").unwrap();
        }
    }
    h
}

pub fn trace_csv(trace: &SimTrace) -> String {
    let n = trace.vehicles();
    let mut csv = trace_header(n);
    csv.push('\n');
    for r in 0..trace.rows() {
        csv.push_str(&csv_num(trace.t[r]));
        for i in 0..n {
            for col in [&trace.q, &trace.v, &trace.a, &trace.u, &trace.e, &trace.omega] {
                csv.push(',');
                csv.push_str(&csv_num(col[i][r]));
            }
        }
        csv.push('\n');
    }
    csv
}

pub fn events_csv(trace: &SimTrace) -> String {
    let mut csv = String::from(EVENTS_HEADER);
    csv.push('\n');
    for ev in &trace.events {
        writeln!(csv, "{},{},{}", csv_num(trace.event_time(ev)), ev.link, u8::from(ev.delivered)).unwrap();
    }
    csv
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackJson {
    pub kind: AttackKind,
    #[serde(rename = "Delta")]
    pub mansd: u32,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsJson {
    pub kp: f64,
    pub kd: f64,
    pub attack: AttackJson,
    #[serde(flatten)]
    pub metrics: SimMetrics,
}

pub fn simulate_cmd(
    sc: &Scenario,
    kp: Option<f64>,
    kd: Option<f64>,
    seed: Option<u64>,
    out: &Path,
) -> Result<Outcome, CliError> {
    let gains = gains_from(kp, kd)?;
    check_out_dir(out)?;
    let mut schedule = sc.attack.clone();
    if let Some(s) = seed {
        schedule.seed = s;
    }
    let trace = simulate(&sc.params, gains, &schedule, &sc.leader, &sc.setup, &sc.initial_state()).map_err(|e| match e {
        SimError::Input(_) | SimError::ScheduleViolation { .. } => CliError::Input(e.to_string()),
        SimError::UndefinedRatio { .. } => CliError::Numerical(e.to_string()),
    })?;
    let diverged = [&trace.q, &trace.v, &trace.a, &trace.u, &trace.e, &trace.omega]
        .iter()
        .any(|c| c.iter().flatten().any(|x| !x.is_finite()));

    let m = metrics(&trace);
    let report = MetricsJson {
        kp: gains.kp,
        kd: gains.kd,
        attack: AttackJson { kind: schedule.kind, mansd: schedule.mansd, seed: schedule.seed },
        metrics: m,
    };
    let events_path: PathBuf = sibling(out, "events", "csv");
    let metrics_path: PathBuf = sibling(out, "metrics", "json");
    write_atomic(out, trace_csv(&trace).as_bytes())?;
    write_atomic(&events_path, events_csv(&trace).as_bytes())?;
    write_atomic(&metrics_path, to_json(&report).as_bytes())?;
    if diverged {
        return Ok(Outcome {
            code: exit::INFEASIBLE,
            stdout: String::new(),
            stderr: "trace diverged: non-finite states\n".into(),
        });
    }
    Ok(Outcome::default())
}

// ---------------------------------------------------------------- verify

/// The subset of a `mansd` or `tune` report that `verify` reads.
#[derive(Debug, Clone, Deserialize)]
pub struct VerifyInput {
    pub kp: Option<f64>,
    pub kd: Option<f64>,
    pub certificate: Option<CertificateJson>,
}

pub fn parse_certificate(text: &str) -> Result<VerifyInput, CliError> {
    serde_json::from_str(text).map_err(|e| CliError::Input(format!("certificate file: {e}")))
}

pub fn verify_cmd(
    sc: &Scenario,
    cert_path: &Path,
    kp: Option<f64>,
    kd: Option<f64>,
    mansd_override: Option<u32>,
) -> Result<Outcome, CliError> {
    let text = std::fs::read_to_string(cert_path)
        .map_err(|e| CliError::Input(format!("cannot read certificate {}: {e}", cert_path.display())))?;
    let input = parse_certificate(&text).map_err(|e| match e {
        CliError::Input(m) => CliError::Input(format!("{}: {m}", cert_path.display())),
        other => other,
    })?;
    let gains = gains_from(kp.or(input.kp), kd.or(input.kd))?;
    let cj = input
        .certificate
        .ok_or_else(|| CliError::Input(format!("{}: field `certificate` is missing or null", cert_path.display())))?;
    let mut cert = cj.to_certificate()?;
    if let Some(d) = mansd_override {
        cert.mansd = d;
    }
    let report = verify_for(&cert, gains, &sc.params)?;
    let json = VerificationJson::from(&report);
    let mut outcome = Outcome::ok(to_json(&json));
    if !report.passed {
        outcome.code = exit::INFEASIBLE;
        outcome.stderr = format!("certificate fails: {}\n", json.reasons.join(", "));
    }
    Ok(outcome)
}
