//! Largest certifiable number of consecutive drops for fixed gains, and the
//! two-stage search over the pole-placement loci that maximizes it.
//!
//! Feasibility of the endpoint pair is monotone in Δ for fixed `(P1, p2, δ)`:
//! `M((Δ+1)Ts)` lies on the segment between `M(0)` and `M((Δ+2)Ts)`, so a
//! certificate for Δ+1 also certifies Δ. Hence a δ that fails at some Δ fails
//! at every larger Δ and is never retried. Scanning the surviving δ in
//! ascending order still finds the smallest feasible δ at every Δ, so the
//! outcome is the same as the plain line search, at roughly `n_δ + Δ` solves
//! per candidate instead of `n_δ · Δ`.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lmi::{theta_from_epsilon, verify_certificate, StabilityCertificate, DEFAULT_EPSILON};
use crate::locus::{c1_bounds, c2_bounds, enumerate_locus, Branch, LocusError, LocusPoint};
use crate::model::{build_closed_loop, ClosedLoopMatrices, Gains, ModelError, PerformanceSpec, PlatoonParams};
use crate::sdp::{platoon_system, solve_feasibility_with, FeasibilityStatus, SolverOptions, DEFAULT_TOL_FEAS};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TuningError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Locus(#[from] LocusError),
    #[error("invalid tuning configuration: {0}")]
    Config(String),
    #[error("both loci are empty: {0}")]
    EmptyLocus(String),
    #[error("no candidate produced a conclusive result")]
    AllInconclusive,
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

/// `n` points geometrically spaced over `[lo, hi]`, endpoints included.
pub fn geometric_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..n)
                .map(|i| match i {
                    0 => lo,
                    _ if i + 1 == n => hi,
                    _ => (a + (b - a) * i as f64 / (n - 1) as f64).exp(),
                })
                .collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningConfig {
    pub n_k1: usize,
    pub n_k2: usize,
    pub delta_grid: Vec<f64>,
    pub delta_max: u32,
    pub epsilon: f64,
    pub tol_feas: f64,
    /// Worker cap for the candidate fan-out; `None` uses every core.
    pub jobs: Option<usize>,
}

impl Default for TuningConfig {
    fn default() -> Self {
        Self {
            n_k1: 162,
            n_k2: 13,
            delta_grid: geometric_grid(1e-2, 1e2, 241),
            delta_max: 50,
            epsilon: DEFAULT_EPSILON,
            tol_feas: DEFAULT_TOL_FEAS,
            jobs: None,
        }
    }
}

impl TuningConfig {
    pub fn validate(&self) -> Result<(), TuningError> {
        let bad = |m: String| Err(TuningError::Config(m));
        if self.n_k1 == 0 || self.n_k2 == 0 {
            return bad(format!("n_k1 and n_k2 must be at least 1 (got {}, {})", self.n_k1, self.n_k2));
        }
        if self.delta_grid.is_empty() {
            return bad("delta_grid is empty".into());
        }
        if let Some(d) = self.delta_grid.iter().find(|d| !(d.is_finite() && **d > 0.0)) {
            return bad(format!("delta_grid entries must be positive, got {d}"));
        }
        if self.delta_grid.windows(2).any(|w| w[1] <= w[0]) {
            return bad("delta_grid must be strictly increasing".into());
        }
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return bad(format!("epsilon must be nonnegative, got {}", self.epsilon));
        }
        if !(self.tol_feas.is_finite() && self.tol_feas > 0.0) {
            return bad(format!("tol_feas must be positive, got {}", self.tol_feas));
        }
        if self.jobs == Some(0) {
            return bad("jobs must be at least 1".into());
        }
        Ok(())
    }

    pub fn theta(&self) -> f64 {
        theta_from_epsilon(self.epsilon)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MansdStatus {
    /// Some Δ ≥ 0 was certified.
    Certified,
    /// Infeasible at Δ = 0 on every grid δ.
    NotCertifiable,
    /// Numerical failures prevented any verdict at Δ = 0.
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MansdEstimate {
    pub status: MansdStatus,
    /// Largest certified Δ, or −1.
    pub mansd: i64,
    /// Smallest feasible grid δ at the final Δ.
    pub delta_star: Option<f64>,
    pub certificate: Option<StabilityCertificate>,
    /// Margin of `certificate` in the margin program (a lower bound when the
    /// certificate came from a decision-only solve).
    pub margin: f64,
    pub solver_calls: usize,
    /// Numerical failures met along the way, and monotonicity violations.
    pub anomalies: Vec<String>,
    /// The loop stopped because it reached `delta_max`.
    pub capped: bool,
}

impl MansdEstimate {
    fn empty(status: MansdStatus, solver_calls: usize, anomalies: Vec<String>) -> Self {
        Self { status, mansd: -1, delta_star: None, certificate: None, margin: f64::NAN, solver_calls, anomalies, capped: false }
    }
}

/// Line search over `cfg.delta_grid` for Δ = 0, 1, … until the first Δ with
/// no feasible δ (or `cfg.delta_max`).
pub fn estimate_mansd(gains: Gains, params: &PlatoonParams, cfg: &TuningConfig) -> Result<MansdEstimate, TuningError> {
    cfg.validate()?;
    let clm = build_closed_loop(gains, params)?;
    Ok(mansd_search(&clm, params, cfg))
}

/// As [`estimate_mansd`], then re-solves every surviving δ at the final Δ to
/// optimality and keeps the certificate with the largest margin.
pub fn estimate_mansd_strong(gains: Gains, params: &PlatoonParams, cfg: &TuningConfig) -> Result<MansdEstimate, TuningError> {
    cfg.validate()?;
    let clm = build_closed_loop(gains, params)?;
    let mut est = mansd_search(&clm, params, cfg);
    strengthen(&clm, params, cfg, &mut est);
    Ok(est)
}

fn mansd_search(clm: &ClosedLoopMatrices, params: &PlatoonParams, cfg: &TuningConfig) -> MansdEstimate {
    let theta = cfg.theta();
    let opts = SolverOptions::decision_only(cfg.tol_feas);
    let n = cfg.delta_grid.len();
    let mut alive = vec![true; n];
    let mut calls = 0usize;
    let mut anomalies = Vec::new();
    let mut last: Option<(u32, usize, StabilityCertificate, f64)> = None;
    let mut capped = false;

    let mut level: u32 = 0;
    loop {
        let mut found = None;
        let mut failures = 0usize;
        for j in 0..n {
            if !alive[j] {
                continue;
            }
            let delta = cfg.delta_grid[j];
            let lmi = platoon_system(clm, params.ts, level, delta, theta, params.h);
            calls += 1;
            // the decision solver never errors on a validated platoon system
            let Ok(res) = solve_feasibility_with(&lmi.system, &opts) else {
                failures += 1;
                alive[j] = false;
                continue;
            };
            match res.status {
                FeasibilityStatus::Feasible => {
                    let y = res.y.as_ref().expect("feasible result carries y");
                    found = Some((j, lmi.certificate(y), res.t_star));
                    break;
                }
                FeasibilityStatus::Infeasible => alive[j] = false,
                FeasibilityStatus::NumericalFailure => {
                    failures += 1;
                    alive[j] = false;
                }
            }
        }
        if failures > 0 {
            anomalies.push(format!("Delta={level}: {failures} numerical failure(s) on the delta grid"));
        }
        match found {
            Some((j, cert, t)) => {
                last = Some((level, j, cert, t));
                if level >= cfg.delta_max {
                    capped = true;
                    break;
                }
                level += 1;
            }
            None => {
                if level == 0 {
                    let status = if failures == n {
                        MansdStatus::Inconclusive
                    } else {
                        MansdStatus::NotCertifiable
                    };
                    return MansdEstimate::empty(status, calls, anomalies);
                }
                break;
            }
        }
    }

    let (mansd, j, cert, t) = last.expect("level 0 succeeded");
    let mut est = MansdEstimate {
        status: MansdStatus::Certified,
        mansd: mansd as i64,
        delta_star: Some(cfg.delta_grid[j]),
        certificate: Some(cert),
        margin: t,
        solver_calls: calls,
        anomalies,
        capped,
    };
    check_monotone(clm, params, &mut est);
    est
}

/// Re-verifies the final certificate at every smaller Δ; violations would
/// mean the early stop of the Δ loop is unsound for this candidate.
fn check_monotone(clm: &ClosedLoopMatrices, params: &PlatoonParams, est: &mut MansdEstimate) {
    let Some(cert) = est.certificate else { return };
    for lower in 0..cert.mansd {
        let rep = verify_certificate(&cert.with_mansd(lower), clm, params.h, params.ts, 0.0, 0);
        if !rep.passed {
            est.anomalies.push(format!(
                "monotonicity: certificate for Delta={} fails at Delta={lower} ({})",
                cert.mansd,
                rep.reasons().join(", ")
            ));
        }
    }
}

fn strengthen(clm: &ClosedLoopMatrices, params: &PlatoonParams, cfg: &TuningConfig, est: &mut MansdEstimate) {
    let (Some(cert), Some(d0)) = (est.certificate, est.delta_star) else { return };
    let opts = SolverOptions { tol_feas: cfg.tol_feas, ..SolverOptions::default() };
    let mut best = (est.margin, cert);
    // δ below delta_star were shown infeasible at this Δ or earlier
    for &delta in cfg.delta_grid.iter().filter(|&&d| d >= d0) {
        let lmi = platoon_system(clm, params.ts, cert.mansd, delta, cert.theta, params.h);
        est.solver_calls += 1;
        if let Ok(res) = solve_feasibility_with(&lmi.system, &opts) {
            if let (FeasibilityStatus::Feasible, Some(y)) = (res.status, res.y.as_ref()) {
                if res.t_star > best.0 {
                    best = (res.t_star, lmi.certificate(y));
                }
            }
        }
    }
    est.margin = best.0;
    est.certificate = Some(best.1);
}

/// One row of the locus table.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateResult {
    pub point: LocusPoint,
    pub estimate: MansdEstimate,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage1_c1_s: f64,
    pub stage2_c2_s: f64,
    pub selection_s: f64,
    pub total_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuningReport {
    pub best_gains: Gains,
    pub best_mansd: i64,
    pub branch: Branch,
    pub delta_star: Option<f64>,
    pub certificate: Option<StabilityCertificate>,
    pub locus_table: Vec<CandidateResult>,
    pub timing: StageTiming,
    pub solver_calls: usize,
    /// Anomalies of the selected candidate.
    pub anomalies: Vec<String>,
}

impl TuningReport {
    /// Upper bound on solver invocations for the given configuration.
    pub fn solver_call_budget(cfg: &TuningConfig) -> usize {
        (cfg.n_k1 + cfg.n_k2) * cfg.delta_grid.len() * (cfg.delta_max as usize + 2)
    }
}

/// Orders candidates: larger Δ first, then smaller kd, then C1 before C2,
/// then smaller kp. Inconclusive candidates never win.
fn better(a: &CandidateResult, b: &CandidateResult) -> bool {
    let rank = |c: &CandidateResult| (c.estimate.status != MansdStatus::Inconclusive, c.estimate.mansd);
    let (ra, rb) = (rank(a), rank(b));
    if ra != rb {
        return ra > rb;
    }
    let (ga, gb) = (a.point.gains, b.point.gains);
    if ga.kd != gb.kd {
        return ga.kd < gb.kd;
    }
    if a.point.branch != b.point.branch {
        return a.point.branch == Branch::C1;
    }
    ga.kp < gb.kp
}

pub fn tune(params: &PlatoonParams, spec: &PerformanceSpec, cfg: &TuningConfig) -> Result<TuningReport, TuningError> {
    params.validate()?;
    spec.validate_against(params.tau_d)?;
    cfg.validate()?;

    let t_start = Instant::now();
    let points = enumerate_locus(spec, params.tau_d, cfg.n_k1, cfg.n_k2)?;
    if points.is_empty() {
        let why = [c1_bounds(spec, params.tau_d), c2_bounds(spec, params.tau_d)]
            .iter()
            .map(|b| match b {
                Ok(b) => format!("{}: kp interval ({}, {}) is empty", b.branch, b.kp_lower, b.kp_upper),
                Err(e) => e.to_string(),
            })
            .collect::<Vec<_>>()
            .join("; ");
        return Err(TuningError::EmptyLocus(why));
    }

    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = cfg.jobs {
        builder = builder.num_threads(j);
    }
    let pool = builder.build().map_err(|e| TuningError::ThreadPool(e.to_string()))?;

    let run_stage = |branch: Branch| -> Result<Vec<CandidateResult>, TuningError> {
        let stage: Vec<LocusPoint> = points.iter().copied().filter(|p| p.branch == branch).collect();
        pool.install(|| {
            stage
                .par_iter()
                .map(|p| {
                    let clm = build_closed_loop(p.gains, params)?;
                    Ok(CandidateResult { point: *p, estimate: mansd_search(&clm, params, cfg) })
                })
                .collect()
        })
    };

    let t1 = Instant::now();
    let mut table = run_stage(Branch::C1)?;
    let stage1 = t1.elapsed().as_secs_f64();
    let t2 = Instant::now();
    table.extend(run_stage(Branch::C2)?);
    let stage2 = t2.elapsed().as_secs_f64();

    let t3 = Instant::now();
    let best_idx = (0..table.len())
        .reduce(|a, b| if better(&table[b], &table[a]) { b } else { a })
        .expect("non-empty table");
    if table[best_idx].estimate.status == MansdStatus::Inconclusive {
        return Err(TuningError::AllInconclusive);
    }
    let best_point = table[best_idx].point;
    let mut best = table[best_idx].estimate.clone();
    let clm = build_closed_loop(best_point.gains, params)?;
    strengthen(&clm, params, cfg, &mut best);
    let selection = t3.elapsed().as_secs_f64();

    let solver_calls =
        table.iter().map(|c| c.estimate.solver_calls).sum::<usize>() + best.solver_calls - table[best_idx].estimate.solver_calls;

    Ok(TuningReport {
        best_gains: best_point.gains,
        best_mansd: best.mansd,
        branch: best_point.branch,
        delta_star: best.delta_star,
        certificate: best.certificate,
        locus_table: table,
        timing: StageTiming {
            stage1_c1_s: stage1,
            stage2_c2_s: stage2,
            selection_s: selection,
            total_s: t_start.elapsed().as_secs_f64(),
        },
        solver_calls,
        anomalies: best.anomalies,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lmi::DEFAULT_MARGIN;

    fn params(h: f64) -> PlatoonParams {
        PlatoonParams::new(h, 0.1, 0.05, 10).unwrap()
    }

    #[test]
    fn grid_shape() {
        let g = geometric_grid(1e-2, 1e2, 241);
        assert_eq!(g.len(), 241);
        assert_eq!(g[0], 1e-2);
        assert_eq!(g[240], 1e2);
        assert!((g[120] - 1.0).abs() < 1e-12);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(geometric_grid(3.0, 5.0, 1), vec![3.0]);
    }

    #[test]
    fn config_validation() {
        assert!(TuningConfig::default().validate().is_ok());
        let mut c = TuningConfig::default();
        c.delta_grid = vec![1.0, 1.0];
        assert!(c.validate().is_err());
        c.delta_grid = vec![-1.0, 1.0];
        assert!(c.validate().is_err());
        c.delta_grid = vec![];
        assert!(c.validate().is_err());
        let c = TuningConfig { n_k2: 0, ..TuningConfig::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn baseline_and_tuned_mansd() {
        let cfg = TuningConfig::default();
        let base = estimate_mansd(Gains { kp: 0.2, kd: 0.7 }, &params(0.7), &cfg).unwrap();
        assert_eq!(base.status, MansdStatus::Certified);
        assert_eq!(base.mansd, 1);
        let tuned = estimate_mansd_strong(Gains { kp: 0.82, kd: 2.6 }, &params(0.7), &cfg).unwrap();
        assert_eq!(tuned.mansd, 5);
        assert!(tuned.anomalies.is_empty(), "{:?}", tuned.anomalies);
        let cert = tuned.certificate.unwrap();
        assert_eq!(cert.mansd, 5);
        let clm = build_closed_loop(Gains { kp: 0.82, kd: 2.6 }, &params(0.7)).unwrap();
        assert!(verify_certificate(&cert, &clm, 0.7, 0.05, DEFAULT_MARGIN, 100).passed);
        assert!(tuned.solver_calls <= 241 * 7 + 241);
    }

    #[test]
    fn delta_max_caps_the_loop() {
        let cfg = TuningConfig { delta_max: 0, ..TuningConfig::default() };
        let est = estimate_mansd(Gains { kp: 0.82, kd: 2.6 }, &params(0.7), &cfg).unwrap();
        assert_eq!(est.mansd, 0);
        assert!(est.capped);
    }

    #[test]
    fn unstable_gains_are_not_certifiable() {
        // Routh: stable iff kd > kp·τd, violated here
        let cfg = TuningConfig { delta_grid: geometric_grid(1e-2, 1e2, 41), ..TuningConfig::default() };
        let est = estimate_mansd(Gains { kp: 5.0, kd: 0.1 }, &params(0.7), &cfg).unwrap();
        assert_eq!(est.status, MansdStatus::NotCertifiable);
        assert_eq!(est.mansd, -1);
        assert!(est.certificate.is_none());
    }

    #[test]
    fn degenerate_grids_give_two_candidates() {
        let cfg = TuningConfig { n_k1: 1, n_k2: 1, delta_grid: geometric_grid(1e-2, 1e2, 41), ..TuningConfig::default() };
        let spec = PerformanceSpec::new(-0.367, 0.7).unwrap();
        let rep = tune(&params(0.7), &spec, &cfg).unwrap();
        assert_eq!(rep.locus_table.len(), 2);
        assert!(rep.solver_calls <= TuningReport::solver_call_budget(&cfg));
    }

    #[test]
    fn tie_break_prefers_small_kd_then_c1() {
        let mk = |kp, kd, branch, mansd| CandidateResult {
            point: LocusPoint { gains: Gains { kp, kd }, branch },
            estimate: MansdEstimate { mansd, ..MansdEstimate::empty(MansdStatus::Certified, 0, vec![]) },
        };
        assert!(better(&mk(1.0, 3.0, Branch::C1, 5), &mk(1.0, 2.0, Branch::C1, 4)));
        assert!(better(&mk(1.0, 2.0, Branch::C2, 5), &mk(1.0, 3.0, Branch::C1, 5)));
        assert!(better(&mk(1.0, 2.0, Branch::C1, 5), &mk(1.0, 2.0, Branch::C2, 5)));
        let inconclusive = CandidateResult {
            estimate: MansdEstimate::empty(MansdStatus::Inconclusive, 0, vec![]),
            ..mk(0.1, 0.1, Branch::C1, -1)
        };
        assert!(better(&mk(1.0, 2.0, Branch::C1, -1), &inconclusive));
    }
}
